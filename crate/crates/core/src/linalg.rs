//! Dense symmetric matrices and the spectral helpers shared by every module.

use std::ops::Deref;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpcaError};

/// Relative asymmetry above which an input is rejected instead of symmetrized.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// A dense `p x p` real symmetric matrix.
///
/// Construction through [`SymmetricMatrix::new`] tolerates floating-point
/// drift: inputs whose relative asymmetry `||A - A^T||_F / ||A||_F` is at
/// most [`SYMMETRY_TOLERANCE`] are replaced by `(A + A^T) / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(SpcaError::shape(
                "square matrix",
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(SpcaError::Numerical("matrix has non-finite entries".into()));
        }
        let asymmetry = relative_asymmetry(&m);
        if asymmetry > SYMMETRY_TOLERANCE {
            return Err(SpcaError::NotSymmetric {
                asymmetry,
                limit: SYMMETRY_TOLERANCE,
            });
        }
        Ok(Self::symmetrized(m))
    }

    /// Wraps `(m + m^T) / 2` without any tolerance check.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymmetricMatrix((m + t) * 0.5)
    }

    /// Caller guarantees exact symmetry (e.g. entrywise maps of symmetric inputs).
    pub(crate) fn from_symmetric_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert!(m.is_square());
        SymmetricMatrix(m)
    }

    pub fn zeros(p: usize) -> Self {
        SymmetricMatrix(DMatrix::zeros(p, p))
    }

    pub fn identity(p: usize) -> Self {
        SymmetricMatrix(DMatrix::identity(p, p))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let p = diag.len();
        SymmetricMatrix(DMatrix::from_fn(
            p,
            p,
            |i, j| if i == j { diag[i] } else { 0.0 },
        ))
    }

    /// `u u^T` for a `p x k` matrix `u`.
    pub fn outer(u: &DMatrix<f64>) -> Self {
        Self::symmetrized(u * u.transpose())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn inner(&self, other: &SymmetricMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Entrywise map; symmetric whenever `f` is a deterministic scalar function.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        SymmetricMatrix(self.0.map(f))
    }

    pub fn scale(&self, a: f64) -> Self {
        SymmetricMatrix(&self.0 * a)
    }

    /// `a * self + b * other`, the only combination the ADMM loop needs.
    pub fn axpby(&self, a: f64, other: &SymmetricMatrix, b: f64) -> Self {
        SymmetricMatrix(&self.0 * a + &other.0 * b)
    }

    pub fn sub(&self, other: &SymmetricMatrix) -> Self {
        SymmetricMatrix(&self.0 - &other.0)
    }

    pub fn add(&self, other: &SymmetricMatrix) -> Self {
        SymmetricMatrix(&self.0 + &other.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal().iter().copied().collect()
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        let m = idx.len();
        SymmetricMatrix(DMatrix::from_fn(m, m, |a, b| self.0[(idx[a], idx[b])]))
    }

    /// Embeds `self` (indexed by `idx`) into a zero `p x p` matrix.
    pub fn embed(&self, idx: &[usize], p: usize) -> Self {
        let mut out = DMatrix::zeros(p, p);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out[(i, j)] = self.0[(a, b)];
            }
        }
        SymmetricMatrix(out)
    }

    pub fn eigen(&self) -> Spectrum {
        Spectrum::of(self)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    pub fn max_abs_diff(&self, other: &SymmetricMatrix) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Deref for SymmetricMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymmetricMatrix {
    type Error = SpcaError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let p = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(SpcaError::shape(format!("{p} columns"), bad.len()));
        }
        SymmetricMatrix::new(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }
}

impl From<SymmetricMatrix> for Vec<Vec<f64>> {
    fn from(m: SymmetricMatrix) -> Self {
        m.0.row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.norm();
    if scale == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / scale
}

/// Eigendecomposition with eigenvalues sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, aligned with `values`.
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn of(m: &SymmetricMatrix) -> Self {
        let eig = SymmetricEigen::new(m.0.clone());
        let p = m.dim();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(p, p, |r, c| eig.eigenvectors[(r, order[c])]);
        Spectrum { values, vectors }
    }

    /// `sum_i w_i v_i v_i^T`, skipping zero weights.
    pub fn reconstruct(&self, weights: &[f64]) -> SymmetricMatrix {
        let p = self.vectors.nrows();
        let active: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] != 0.0).collect();
        if active.is_empty() {
            return SymmetricMatrix::zeros(p);
        }
        let v = DMatrix::from_fn(p, active.len(), |r, c| self.vectors[(r, active[c])]);
        let mut vw = v.clone();
        for (c, &i) in active.iter().enumerate() {
            vw.column_mut(c).scale_mut(weights[i]);
        }
        SymmetricMatrix::symmetrized(vw * v.transpose())
    }

    /// Projector onto the span of the leading `k` eigenvectors.
    pub fn top_projector(&self, k: usize) -> SymmetricMatrix {
        let weights: Vec<f64> = (0..self.values.len())
            .map(|i| if i < k { 1.0 } else { 0.0 })
            .collect();
        self.reconstruct(&weights)
    }

    /// Leading `k` eigenvectors as a `p x k` matrix.
    pub fn leading_vectors(&self, k: usize) -> DMatrix<f64> {
        self.vectors.columns(0, k).into_owned()
    }

    /// `lambda_k - lambda_{k+1}` (1-based), or `+inf` when `k == p`.
    pub fn gap(&self, k: usize) -> f64 {
        if k == 0 || k >= self.values.len() {
            f64::INFINITY
        } else {
            self.values[k - 1] - self.values[k]
        }
    }
}
