//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use spca::{PenaltyConfig, PenaltyFamily, SymmetricMatrix};

pub fn random_symmetric<R: Rng + ?Sized>(rng: &mut R, p: usize, scale: f64) -> SymmetricMatrix {
    let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
    SymmetricMatrix::symmetrized(&g + g.transpose())
}

/// `argmin ||g - eigs||^2` over `{0 <= g <= 1, sum g = k}` by enumerating
/// which coordinates sit at 0, at 1 or strictly inside.
pub fn capped_simplex_bruteforce(eigs: &[f64], k: usize) -> Vec<f64> {
    let p = eigs.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(p as u32) {
        let mut state = vec![0u8; p];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let ones = state.iter().filter(|&&s| s == 1).count() as f64;
        let free: Vec<usize> = (0..p).filter(|&i| state[i] == 2).collect();
        let mut g: Vec<f64> = state
            .iter()
            .map(|&s| if s == 1 { 1.0 } else { 0.0 })
            .collect();
        if free.is_empty() {
            if (ones - k as f64).abs() > 1e-12 {
                continue;
            }
        } else {
            // Free coordinates share one shift: g_i = eigs_i - theta.
            let theta = (free.iter().map(|&i| eigs[i]).sum::<f64>() - (k as f64 - ones))
                / free.len() as f64;
            for &i in &free {
                g[i] = eigs[i] - theta;
            }
            if free.iter().any(|&i| g[i] < -1e-12 || g[i] > 1.0 + 1e-12) {
                continue;
            }
        }
        let cost: f64 = g.iter().zip(eigs).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, g));
        }
    }
    best.expect("the capped simplex is nonempty").1
}

/// Fantope projection through the brute-force eigenvalue problem.
pub fn project_bruteforce(a: &SymmetricMatrix, k: usize) -> DMatrix<f64> {
    let eig = a.as_matrix().clone().symmetric_eigen();
    let gamma = capped_simplex_bruteforce(eig.eigenvalues.as_slice(), k);
    &eig.eigenvectors
        * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(gamma))
        * eig.eigenvectors.transpose()
}

/// Closed-form penalties, written out independently of the library.
pub fn penalty_reference(cfg: &PenaltyConfig, t: f64) -> f64 {
    let (l, b, a) = (cfg.lambda, cfg.b, t.abs());
    match cfg.family {
        PenaltyFamily::L1 => l * a,
        PenaltyFamily::Mcp => {
            if a <= b * l {
                l * a - a * a / (2.0 * b)
            } else {
                b * l * l / 2.0
            }
        }
        PenaltyFamily::Scad => {
            if a <= l {
                l * a
            } else if a <= b * l {
                (2.0 * b * l * a - a * a - l * l) / (2.0 * (b - 1.0))
            } else {
                l * l * (b + 1.0) / 2.0
            }
        }
    }
}

/// Minimizer of `rho/2 (x - a)^2 + p(x)` over a `1e-5` grid; the minimizer
/// lies between 0 and `a`.
pub fn grid_prox(cfg: &PenaltyConfig, a: f64, rho: f64) -> f64 {
    let step = 1e-5;
    let steps = (a.abs() / step).ceil() as i64 + 1;
    let objective = |x: f64| 0.5 * rho * (x - a) * (x - a) + penalty_reference(cfg, x);
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=steps {
        let x = (i as f64 * step).min(a.abs()) * a.signum();
        let v = objective(x);
        if v < best.0 {
            best = (v, x);
        }
    }
    best.1
}

/// Sum of the `k` largest eigenvalues, from nalgebra's solver.
pub fn top_k_sum(s: &SymmetricMatrix, k: usize) -> f64 {
    let mut e: Vec<f64> = s
        .as_matrix()
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    e.sort_by(|a, b| b.total_cmp(a));
    e[..k].iter().sum()
}

/// Covariance with eigenvalues `spectrum` (descending) in a random basis.
pub fn covariance_with_spectrum<R: Rng + ?Sized>(rng: &mut R, spectrum: &[f64]) -> SymmetricMatrix {
    let p = spectrum.len();
    let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(spectrum));
    SymmetricMatrix::symmetrized(&q * d * q.transpose())
}
