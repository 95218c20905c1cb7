//! Synthetic covariance models with sparse leading eigenvectors, and
//! Gaussian sampling from them.
//!
//! Randomness comes from ChaCha20 (`rand_chacha`) seeded with a `u64`.
//! Each logical consumer reads its own stream of the same seed (see
//! [`Stream`]), so a replication seeded with `base_seed + rep` is
//! reproducible regardless of thread scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpcaError};
use crate::linalg::SymmetricMatrix;

/// Stream identifiers within one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Model = 0,
    Train = 1,
    HeldOut = 2,
    Folds = 3,
}

pub fn substream(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dataset1,
    Dataset2,
    Custom,
}

/// Population covariance `Sigma = V diag(eigvals) V^T` whose leading `k`
/// eigenvectors are supported on the first `s` coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct CovarianceModel {
    pub kind: ModelKind,
    pub sigma: SymmetricMatrix,
    pub pi_star: SymmetricMatrix,
    pub support: Vec<usize>,
    pub s: usize,
    pub k: usize,
    /// All `p` eigenvalues, decreasing.
    pub eigvals: Vec<f64>,
    /// Leading eigenvectors as a `p x k` matrix.
    pub leading: DMatrix<f64>,
    pub seed: Option<u64>,
    sqrt: SymmetricMatrix,
}

/// On-disk spectral form of a [`CovarianceModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub p: usize,
    pub s: usize,
    pub k: usize,
    pub eigenvalues: Vec<f64>,
    /// Nonzero `s x k` block of the leading eigenvectors, row-major.
    pub leading_block: Vec<Vec<f64>>,
    pub support: Vec<usize>,
    pub seed: Option<u64>,
    pub pi_star: SymmetricMatrix,
}

impl From<CovarianceModel> for ModelFile {
    fn from(m: CovarianceModel) -> Self {
        let leading_block = (0..m.s)
            .map(|i| (0..m.k).map(|j| m.leading[(i, j)]).collect())
            .collect();
        ModelFile {
            kind: m.kind,
            p: m.sigma.dim(),
            s: m.s,
            k: m.k,
            eigenvalues: m.eigvals,
            leading_block,
            support: m.support,
            seed: m.seed,
            pi_star: m.pi_star,
        }
    }
}

impl TryFrom<ModelFile> for CovarianceModel {
    type Error = SpcaError;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.leading_block.len() != f.s || f.leading_block.iter().any(|r| r.len() != f.k) {
            return Err(SpcaError::Parse(format!(
                "leading_block must be {}x{}",
                f.s, f.k
            )));
        }
        let block = DMatrix::from_fn(f.s, f.k, |i, j| f.leading_block[i][j]);
        let mut m = CovarianceModel::from_spectrum(f.p, block, f.eigenvalues)?;
        m.kind = f.kind;
        m.seed = f.seed;
        Ok(m)
    }
}

impl CovarianceModel {
    /// Builds `Sigma` from an orthonormal `s x k` block (embedded in the
    /// first `s` rows) and the full eigenvalue list.
    pub fn from_spectrum(p: usize, block: DMatrix<f64>, eigvals: Vec<f64>) -> Result<Self> {
        let (s, k) = block.shape();
        if s > p || k == 0 || k > s {
            return Err(SpcaError::config(format!(
                "need 1 <= k <= s <= p, got k={k} s={s} p={p}"
            )));
        }
        if eigvals.len() != p {
            return Err(SpcaError::shape(format!("{p} eigenvalues"), eigvals.len()));
        }
        if eigvals.windows(2).any(|w| w[0] < w[1]) {
            return Err(SpcaError::config(
                "eigenvalues must be listed in decreasing order",
            ));
        }
        if eigvals[k - 1] <= eigvals.get(k).copied().unwrap_or(f64::NEG_INFINITY) {
            return Err(SpcaError::config("need lambda_k > lambda_{k+1}"));
        }
        if let Some(&e) = eigvals.iter().find(|&&e| e < 0.0) {
            return Err(SpcaError::config(format!(
                "covariance must be PSD, found eigenvalue {e}"
            )));
        }
        let gram = block.transpose() * &block;
        if (gram - DMatrix::identity(k, k)).abs().max() > 1e-10 {
            return Err(SpcaError::config(
                "leading block must have orthonormal columns",
            ));
        }
        let mut leading = DMatrix::zeros(p, k);
        leading.view_mut((0, 0), (s, k)).copy_from(&block);
        let basis = orthonormal_completion(&leading);

        let scaled = |f: &dyn Fn(f64) -> f64| {
            let d = DVector::from_iterator(p, eigvals.iter().map(|&e| f(e)));
            SymmetricMatrix::symmetrized(&basis * DMatrix::from_diagonal(&d) * basis.transpose())
        };
        let sigma = scaled(&|e| e);
        let sqrt = scaled(&f64::sqrt);
        let pi_star = SymmetricMatrix::outer(&leading);
        let support = (0..p)
            .filter(|&i| pi_star[(i, i)].abs() > 1e-10)
            .collect::<Vec<_>>();
        Ok(CovarianceModel {
            kind: ModelKind::Custom,
            s: support.len(),
            sigma,
            pi_star,
            support,
            k,
            eigvals,
            leading,
            seed: None,
            sqrt,
        })
    }

    pub fn p(&self) -> usize {
        self.sigma.dim()
    }

    pub fn sigma_sqrt(&self) -> &SymmetricMatrix {
        &self.sqrt
    }

    /// Smallest nonzero `|Pi*_ij|`.
    pub fn min_signal(&self) -> f64 {
        self.pi_star
            .iter()
            .map(|v| v.abs())
            .filter(|&v| v > 1e-12)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Completes the orthonormal columns of `lead` to a basis of `R^p` by
/// Gram-Schmidt on the identity's columns.
pub fn orthonormal_completion(lead: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, k) = lead.shape();
    let mut cols: Vec<DVector<f64>> = lead.column_iter().map(|c| c.into_owned()).collect();
    for j in 0..p {
        if cols.len() == p {
            break;
        }
        let mut v = DVector::zeros(p);
        v[j] = 1.0;
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for c in &cols {
                let d = c.dot(&v);
                v.axpy(-d, c, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            cols.push(v / norm);
        }
    }
    debug_assert_eq!(cols.len(), p, "completion of {k} columns failed");
    DMatrix::from_columns(&cols)
}

/// `lambda_1 = 100`, `lambda_2..p = 1`; the leading eigenvector has
/// `1/sqrt(5)` in its first five entries (`s = 5`, `k = 1`).
pub fn dataset1_model(p: usize) -> Result<CovarianceModel> {
    if p < 5 {
        return Err(SpcaError::config(format!(
            "dataset 1 needs p >= s = 5, got p = {p}"
        )));
    }
    let block = DMatrix::from_element(5, 1, 1.0 / 5f64.sqrt());
    let mut eig = vec![1.0; p];
    eig[0] = 100.0;
    let mut m = CovarianceModel::from_spectrum(p, block, eig)?;
    m.kind = ModelKind::Dataset1;
    Ok(m)
}

/// `lambda_1..4 = 100`, `lambda_5 = 10`, rest 1; the five leading
/// eigenvectors are an orthonormalized `10 x 5` Gaussian block on the
/// first ten coordinates (`s = 10`, `k = 5`).
pub fn dataset2_model(p: usize, seed: u64) -> Result<CovarianceModel> {
    const S: usize = 10;
    const K: usize = 5;
    if p < S {
        return Err(SpcaError::config(format!(
            "dataset 2 needs p >= s = 10, got p = {p}"
        )));
    }
    let mut rng = substream(seed, Stream::Model);
    let block = loop {
        let g = DMatrix::from_fn(S, K, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = g.qr();
        let r = qr.r();
        let scale = r.diagonal().abs().max();
        if r.diagonal().iter().any(|d| d.abs() <= 1e-10 * scale) {
            continue;
        }
        let q = qr.q().columns(0, K).into_owned();
        let diag_ok = q.row_iter().all(|row| row.norm_squared() > 1e-10);
        if diag_ok {
            break q;
        }
    };
    let mut eig = vec![1.0; p];
    eig[..4].fill(100.0);
    eig[4] = 10.0;
    let mut m = CovarianceModel::from_spectrum(p, block, eig)?;
    m.kind = ModelKind::Dataset2;
    m.seed = Some(seed);
    Ok(m)
}

/// `n` rows drawn i.i.d. from `N(0, Sigma)` as `Sigma^{1/2} z`.
pub fn sample_gaussian<R: Rng + ?Sized>(
    model: &CovarianceModel,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    sample_with_sqrt(model.sigma_sqrt(), n, rng)
}

/// Like [`sample_gaussian`] for an arbitrary covariance; rejects matrices
/// with an eigenvalue below `-1e-8`.
pub fn sample_gaussian_cov<R: Rng + ?Sized>(
    sigma: &SymmetricMatrix,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let sp = sigma.eigen();
    if let Some(&e) = sp.values.iter().find(|&&e| e < -1e-8) {
        return Err(SpcaError::Numerical(format!(
            "covariance is not PSD (eigenvalue {e})"
        )));
    }
    let roots: Vec<f64> = sp.values.iter().map(|&e| e.max(0.0).sqrt()).collect();
    sample_with_sqrt(&sp.reconstruct(&roots), n, rng)
}

fn sample_with_sqrt<R: Rng + ?Sized>(
    sqrt: &SymmetricMatrix,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(SpcaError::config("need at least one observation"));
    }
    let p = sqrt.dim();
    // Row-major draw order so that a prefix of rows does not depend on n.
    let mut z = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(z * sqrt.as_matrix())
}

/// `X^T X / n` (no centering; the model has zero mean).
pub fn sample_covariance(x: &DMatrix<f64>) -> Result<SymmetricMatrix> {
    let n = x.nrows();
    if n == 0 {
        return Err(SpcaError::config("need at least one observation"));
    }
    Ok(SymmetricMatrix::symmetrized(x.tr_mul(x) / n as f64))
}
