//! The Fantope `F^k = { X : 0 <= X <= I, tr X = k }` and its Euclidean projection.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpcaError};
use crate::linalg::SymmetricMatrix;
use crate::tridiag::tridiagonalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FantopeSpec {
    pub k: usize,
    pub p: usize,
}

impl FantopeSpec {
    pub fn new(k: usize, p: usize) -> Result<Self> {
        if k == 0 || k > p {
            return Err(SpcaError::config(format!(
                "need 1 <= k <= p, got k = {k}, p = {p}"
            )));
        }
        Ok(FantopeSpec { k, p })
    }

    fn check_dim(&self, m: &SymmetricMatrix) -> Result<()> {
        if m.dim() != self.p {
            return Err(SpcaError::shape(
                format!("{0}x{0}", self.p),
                format!("{0}x{0}", m.dim()),
            ));
        }
        Ok(())
    }
}

/// Sum of the clipped, shifted eigenvalues `sum_i min(1, max(0, e_i - theta))`.
pub fn clipped_sum(eigs: &[f64], theta: f64) -> f64 {
    eigs.iter().map(|&e| (e - theta).clamp(0.0, 1.0)).sum()
}

/// Water level `theta` with `clipped_sum(eigs, theta) = k`, by bisection.
///
/// The sum is nonincreasing in `theta`, equals `len` at `min - 1` and zero at
/// `max`. The bracket keeps `sum(lo) >= k`, so on a flat stretch the right
/// end of the stretch is returned.
pub fn find_waterlevel(eigs: &[f64], k: usize) -> f64 {
    assert!(
        k <= eigs.len(),
        "k = {k} exceeds {} eigenvalues",
        eigs.len()
    );
    let target = k as f64;
    let min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (min - 1.0, max);
    let width = 1e-12 * (1.0f64).max(max.abs()).max(min.abs());
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if clipped_sum(eigs, mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Euclidean projection of `a` onto `F^k`.
pub fn project_fantope(a: &SymmetricMatrix, spec: &FantopeSpec) -> Result<SymmetricMatrix> {
    spec.check_dim(a)?;
    if let Some(x) = project_partial(a, spec) {
        return Ok(x);
    }
    Ok(project_dense(a, spec))
}

/// Projection from the eigenpairs above the water level only. `None` when
/// too many are needed or the partial solver does not converge.
fn project_partial(a: &SymmetricMatrix, spec: &FantopeSpec) -> Option<SymmetricMatrix> {
    let t = tridiagonalize(a.as_matrix());
    let values = t.eigenvalues()?;
    let theta = find_waterlevel(&values, spec.k);
    let active = values.iter().take_while(|&&e| e > theta).count();
    if active > (spec.p / 4).max(spec.k + 2) {
        return None;
    }
    let v = t.eigenvectors(&values[..active])?;
    let mut vw = v.clone();
    for (j, &e) in values[..active].iter().enumerate() {
        vw.column_mut(j).scale_mut((e - theta).clamp(0.0, 1.0));
    }
    Some(SymmetricMatrix::symmetrized(vw * v.transpose()))
}

fn project_dense(a: &SymmetricMatrix, spec: &FantopeSpec) -> SymmetricMatrix {
    let sp = a.eigen();
    let theta = find_waterlevel(&sp.values, spec.k);
    let gamma: Vec<f64> = sp
        .values
        .iter()
        .map(|&e| (e - theta).clamp(0.0, 1.0))
        .collect();
    sp.reconstruct(&gamma)
}

/// [`project_fantope`] for a raw dense matrix; rejects asymmetric input.
pub fn project_fantope_dense(a: DMatrix<f64>, spec: &FantopeSpec) -> Result<SymmetricMatrix> {
    project_fantope(&SymmetricMatrix::new(a)?, spec)
}

pub fn is_member(x: &SymmetricMatrix, spec: &FantopeSpec, tol: f64) -> bool {
    if x.dim() != spec.p {
        return false;
    }
    let eigs = x.eigenvalues();
    eigs.iter().all(|&e| e >= -tol && e <= 1.0 + tol) && (x.trace() - spec.k as f64).abs() <= tol
}

/// `max_{X in F^k} <sigma, X>`: the sum of the top-`k` eigenvalues, attained
/// by the top-`k` eigenprojector.
pub fn fantope_linear_max(
    sigma: &SymmetricMatrix,
    spec: &FantopeSpec,
) -> Result<(f64, SymmetricMatrix)> {
    spec.check_dim(sigma)?;
    let sp = sigma.eigen();
    let value = sp.values[..spec.k].iter().sum();
    Ok((value, sp.top_projector(spec.k)))
}

/// Slack of the curvature bound
/// `1/2 ||P - X||_F^2 <= <sigma, P - X> / (lambda_k - lambda_{k+1})`
/// for the top-`k` eigenprojector `P` of `sigma`. Nonnegative when the bound holds.
pub fn curvature_slack(sigma: &SymmetricMatrix, x: &SymmetricMatrix, k: usize) -> f64 {
    let sp = sigma.eigen();
    let proj = sp.top_projector(k);
    let diff = proj.sub(x);
    sigma.inner(&diff) / sp.gap(k) - 0.5 * diff.inner(&diff)
}

/// A random member of `F^k`: the projection of a symmetric Gaussian matrix
/// whose spread is chosen so that interior and boundary points both occur.
pub fn random_member<R: Rng + ?Sized>(rng: &mut R, spec: &FantopeSpec) -> SymmetricMatrix {
    let p = spec.p;
    let scale = rng.random_range(0.05..3.0);
    let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
    let a = SymmetricMatrix::symmetrized(g);
    project_fantope(&a, spec).expect("dimensions agree")
}
