//! ADMM for `min -<S, P> + tau/2 ||P||_F^2 + sum_ij p(P_ij)` over the Fantope.
//!
//! The split `P = F` alternates a Fantope projection for `P`, an entrywise
//! prox for `F` and a dual ascent step on the multiplier `Theta`:
//!
//! ```text
//! P    <- proj_F( (rho F - Theta + S) / (rho + tau) )
//! F    <- prox_{p, rho}( P + Theta / rho )
//! Theta <- Theta + rho (P - F)
//! ```
//!
//! `tau = 0` gives the nonconvex estimator; `tau > zeta_minus` makes the
//! problem strongly convex.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpcaError};
use crate::fantope::{fantope_linear_max, project_fantope, random_member, FantopeSpec};
use crate::linalg::SymmetricMatrix;
use crate::penalty::{prox_matrix_with, Penalty, PenaltyConfig};

pub const DEFAULT_MAX_ITERS: usize = 2000;
/// Residual tolerances default to this factor times `p`.
pub const DEFAULT_TOL_PER_DIM: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub tau: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// `None` resolves to `1e-7 * p`.
    #[serde(default)]
    pub primal_tol: Option<f64>,
    #[serde(default)]
    pub dual_tol: Option<f64>,
}

fn default_rho() -> f64 {
    1.0
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tau: 0.0,
            rho: default_rho(),
            max_iters: DEFAULT_MAX_ITERS,
            primal_tol: None,
            dual_tol: None,
        }
    }
}

impl SolverConfig {
    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(SpcaError::config(format!(
                "tau must be >= 0, got {}",
                self.tau
            )));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(SpcaError::config(format!(
                "rho must be > 0, got {}",
                self.rho
            )));
        }
        if self.max_iters == 0 {
            return Err(SpcaError::config("max_iters must be >= 1"));
        }
        for (name, tol) in [("primal_tol", self.primal_tol), ("dual_tol", self.dual_tol)] {
            if let Some(t) = tol {
                if !(t > 0.0) {
                    return Err(SpcaError::config(format!("{name} must be > 0, got {t}")));
                }
            }
        }
        Ok(())
    }

    /// Materializes the dimension-dependent tolerance defaults.
    pub fn resolved(&self, p: usize) -> SolverConfig {
        let d = DEFAULT_TOL_PER_DIM * p as f64;
        SolverConfig {
            primal_tol: Some(self.primal_tol.unwrap_or(d)),
            dual_tol: Some(self.dual_tol.unwrap_or(d)),
            ..*self
        }
    }
}

/// Iterates of the splitting. All three matrices are `p x p` symmetric.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub pi: SymmetricMatrix,
    pub phi: SymmetricMatrix,
    pub theta: SymmetricMatrix,
    pub iter: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

impl AdmmState {
    pub fn zeros(p: usize) -> Self {
        AdmmState {
            pi: SymmetricMatrix::zeros(p),
            phi: SymmetricMatrix::zeros(p),
            theta: SymmetricMatrix::zeros(p),
            iter: 0,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
        }
    }

    pub fn with_dual(theta: SymmetricMatrix) -> Self {
        let p = theta.dim();
        AdmmState {
            theta,
            ..AdmmState::zeros(p)
        }
    }
}

/// `proj_F( (rho Phi - Theta + S) / (rho + tau) )`.
pub fn update_pi(
    state: &AdmmState,
    sigma_hat: &SymmetricMatrix,
    cfg: &SolverConfig,
    spec: &FantopeSpec,
) -> Result<SymmetricMatrix> {
    let arg = state
        .phi
        .axpby(cfg.rho, &state.theta, -1.0)
        .add(sigma_hat)
        .scale(1.0 / (cfg.rho + cfg.tau));
    project_fantope(&arg, spec)
}

/// Entrywise prox of `Pi + Theta / rho`; `state.pi` must already hold the new `Pi`.
pub fn update_phi(
    state: &AdmmState,
    pen: &PenaltyConfig,
    cfg: &SolverConfig,
) -> Result<SymmetricMatrix> {
    pen.check_prox_rho(cfg.rho)?;
    let pen = pen.build();
    Ok(phi_step(state, pen.as_ref(), cfg.rho))
}

fn phi_step(state: &AdmmState, pen: &dyn Penalty, rho: f64) -> SymmetricMatrix {
    let arg = state.pi.axpby(1.0, &state.theta, 1.0 / rho);
    prox_matrix_with(pen, &arg, rho)
}

/// `Theta + rho (Pi - Phi)`.
pub fn update_theta(state: &AdmmState, cfg: &SolverConfig) -> SymmetricMatrix {
    state.theta.add(&state.pi.sub(&state.phi).scale(cfg.rho))
}

/// `-<S, Pi> + tau/2 ||Pi||_F^2 + P(Pi)`.
pub fn objective_value(
    pi: &SymmetricMatrix,
    sigma_hat: &SymmetricMatrix,
    pen: &PenaltyConfig,
    tau: f64,
) -> f64 {
    -sigma_hat.inner(pi) + 0.5 * tau * pi.inner(pi) + pen.build().matrix_value(pi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// Stopped at `max_iters` with residuals above tolerance.
    MaxIterations,
}

/// Per-solve record; serialized into every result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Objective evaluated at the returned sparse estimate.
    pub objective: f64,
    pub config: SolverConfig,
}

impl SolveDiagnostics {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

#[derive(Debug, Clone)]
pub struct AdmmSolution {
    /// `Phi` at termination: exactly sparse, feasible up to the primal residual.
    pub estimate: SymmetricMatrix,
    /// `Pi` at termination: exactly in the Fantope.
    pub feasible: SymmetricMatrix,
    /// `Theta` at termination, a subgradient of the penalty at `estimate`.
    pub dual: SymmetricMatrix,
    pub diagnostics: SolveDiagnostics,
}

pub fn solve(
    sigma_hat: &SymmetricMatrix,
    spec: &FantopeSpec,
    pen: &PenaltyConfig,
    cfg: &SolverConfig,
) -> Result<AdmmSolution> {
    solve_from(sigma_hat, spec, pen, cfg, AdmmState::zeros(spec.p))
}

/// Runs the iteration from an arbitrary starting state.
pub fn solve_from(
    sigma_hat: &SymmetricMatrix,
    spec: &FantopeSpec,
    pen: &PenaltyConfig,
    cfg: &SolverConfig,
    mut state: AdmmState,
) -> Result<AdmmSolution> {
    cfg.validate()?;
    pen.check_prox_rho(cfg.rho)?;
    if sigma_hat.dim() != spec.p || state.theta.dim() != spec.p {
        return Err(SpcaError::shape(
            format!("{0}x{0}", spec.p),
            format!("{0}x{0}", sigma_hat.dim()),
        ));
    }
    let cfg = cfg.resolved(spec.p);
    let (primal_tol, dual_tol) = (cfg.primal_tol.unwrap(), cfg.dual_tol.unwrap());
    let penalty = pen.build();

    let mut converged = false;
    while state.iter < cfg.max_iters {
        state.pi = update_pi(&state, sigma_hat, &cfg, spec)?;
        let phi = phi_step(&state, penalty.as_ref(), cfg.rho);
        state.dual_residual = cfg.rho * phi.sub(&state.phi).frobenius_norm();
        state.phi = phi;
        state.theta = update_theta(&state, &cfg);
        state.primal_residual = state.pi.sub(&state.phi).frobenius_norm();
        state.iter += 1;

        if !(state.primal_residual.is_finite() && state.dual_residual.is_finite()) {
            return Err(SpcaError::Numerical(format!(
                "non-finite residual at iteration {}",
                state.iter
            )));
        }
        if state.primal_residual <= primal_tol && state.dual_residual <= dual_tol {
            converged = true;
            break;
        }
    }
    if converged {
        log::debug!("admm converged in {} iterations", state.iter);
    } else {
        log::warn!(
            "admm hit max_iters = {} (primal {:.3e}, dual {:.3e})",
            cfg.max_iters,
            state.primal_residual,
            state.dual_residual
        );
    }

    let objective = -sigma_hat.inner(&state.phi)
        + 0.5 * cfg.tau * state.phi.inner(&state.phi)
        + penalty.matrix_value(&state.phi);
    let diagnostics = SolveDiagnostics {
        status: if converged {
            SolveStatus::Converged
        } else {
            SolveStatus::MaxIterations
        },
        iterations: state.iter,
        primal_residual: state.primal_residual,
        dual_residual: state.dual_residual,
        objective,
        config: cfg,
    };
    Ok(AdmmSolution {
        estimate: state.phi,
        feasible: state.pi,
        dual: state.theta,
        diagnostics,
    })
}

/// Gradient of the smooth part plus a penalty subgradient, `-S + tau Pi + Z`.
fn vi_direction(
    point: &SymmetricMatrix,
    sigma_hat: &SymmetricMatrix,
    tau: f64,
    subgradient: &SymmetricMatrix,
) -> SymmetricMatrix {
    point.axpby(tau, sigma_hat, -1.0).add(subgradient)
}

/// `max_{Y in F^k} <point - Y, G>` for `G = -S + tau point + Z`.
///
/// Nonpositive exactly when `point` satisfies the first-order condition with
/// penalty subgradient `Z`; computed in closed form via the top-`k`
/// eigenvalues of `-G`.
pub fn stationarity_gap(
    point: &SymmetricMatrix,
    sigma_hat: &SymmetricMatrix,
    tau: f64,
    subgradient: &SymmetricMatrix,
    spec: &FantopeSpec,
) -> Result<f64> {
    let g = vi_direction(point, sigma_hat, tau, subgradient);
    let (best, _) = fantope_linear_max(&g.scale(-1.0), spec)?;
    Ok(point.inner(&g) + best)
}

/// Largest `<point - Y, G>` over `trials` random Fantope members `Y`.
pub fn sampled_stationarity_gap<R: Rng + ?Sized>(
    point: &SymmetricMatrix,
    sigma_hat: &SymmetricMatrix,
    tau: f64,
    subgradient: &SymmetricMatrix,
    spec: &FantopeSpec,
    trials: usize,
    rng: &mut R,
) -> f64 {
    let g = vi_direction(point, sigma_hat, tau, subgradient);
    let base = point.inner(&g);
    (0..trials)
        .map(|_| base - random_member(rng, spec).inner(&g))
        .fold(f64::NEG_INFINITY, f64::max)
}

impl AdmmSolution {
    /// First-order check at the feasible iterate, using `Theta` as the
    /// penalty subgradient.
    pub fn stationarity_gap(&self, sigma_hat: &SymmetricMatrix, spec: &FantopeSpec) -> Result<f64> {
        stationarity_gap(
            &self.feasible,
            sigma_hat,
            self.diagnostics.config.tau,
            &self.dual,
            spec,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng, p: usize, scale: f64) -> SymmetricMatrix {
        SymmetricMatrix::symmetrized(DMatrix::from_fn(p, p, |_, _| {
            scale * (rng.random::<f64>() - 0.5)
        }))
    }

    fn state_with(pi: SymmetricMatrix, phi: SymmetricMatrix, theta: SymmetricMatrix) -> AdmmState {
        AdmmState {
            pi,
            phi,
            theta,
            ..AdmmState::zeros(0)
        }
    }

    #[test]
    fn pi_update_reduces_to_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = FantopeSpec::new(2, 5).unwrap();
        let sigma = random_sym(&mut rng, 5, 4.0);
        let cfg = SolverConfig::default();
        let got = update_pi(&AdmmState::zeros(5), &sigma, &cfg, &spec).unwrap();
        let want = project_fantope(&sigma, &spec).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn pi_update_fixed_point_for_large_rho() {
        let spec = FantopeSpec::new(1, 3).unwrap();
        let u = DMatrix::from_column_slice(3, 1, &[0.6, 0.0, 0.8]);
        let star = SymmetricMatrix::outer(&u);
        let sigma = SymmetricMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        let cfg = SolverConfig {
            rho: 1e9,
            ..SolverConfig::default()
        };
        let st = state_with(
            SymmetricMatrix::zeros(3),
            star.clone(),
            SymmetricMatrix::zeros(3),
        );
        let got = update_pi(&st, &sigma, &cfg, &spec).unwrap();
        assert!(got.max_abs_diff(&star) < 1e-7);
    }

    // Projected gradient on the Line-5 quadratic, independent of the closed form.
    #[test]
    fn pi_update_matches_projected_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = FantopeSpec::new(2, 4).unwrap();
        let sigma = random_sym(&mut rng, 4, 3.0);
        let st = state_with(
            SymmetricMatrix::zeros(4),
            random_sym(&mut rng, 4, 1.0),
            random_sym(&mut rng, 4, 1.0),
        );
        let cfg = SolverConfig {
            tau: 0.7,
            rho: 1.3,
            ..SolverConfig::default()
        };
        // f(X) = -<S, X> + tau/2 |X|^2 + <Theta, X> + rho/2 |X - Phi|^2
        let mut x = SymmetricMatrix::identity(4).scale(0.5);
        let step = 1.0 / (cfg.rho + cfg.tau);
        for _ in 0..2000 {
            let grad = x
                .scale(cfg.tau + cfg.rho)
                .sub(&sigma)
                .add(&st.theta)
                .sub(&st.phi.scale(cfg.rho));
            x = project_fantope(&x.axpby(1.0, &grad, -0.5 * step), &spec).unwrap();
        }
        let got = update_pi(&st, &sigma, &cfg, &spec).unwrap();
        assert!(got.max_abs_diff(&x) < 1e-6);
    }

    #[test]
    fn phi_update_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pi = random_sym(&mut rng, 4, 4.0);
        let theta = random_sym(&mut rng, 4, 2.0);
        let cfg = SolverConfig {
            rho: 2.0,
            ..SolverConfig::default()
        };
        let st = state_with(pi.clone(), SymmetricMatrix::zeros(4), theta.clone());
        let zero = PenaltyConfig::mcp(0.0, 3.0).unwrap();
        let out = update_phi(&st, &zero, &cfg).unwrap();
        assert!(out.max_abs_diff(&pi.axpby(1.0, &theta, 0.5)) < 1e-15);

        let zst = AdmmState::zeros(4);
        let pen = PenaltyConfig::mcp(0.4, 3.0).unwrap();
        assert_eq!(
            update_phi(&zst, &pen, &cfg).unwrap(),
            SymmetricMatrix::zeros(4)
        );

        // per-entry grid oracle
        let out = update_phi(&st, &pen, &cfg).unwrap();
        let penalty = pen.build();
        let arg = pi.axpby(1.0, &theta, 0.5);
        for (a, got) in arg.iter().zip(out.iter()) {
            let mut best = (f64::INFINITY, 0.0);
            let lo = -a.abs() - 1.0;
            let steps = ((2.0 * (a.abs() + 1.0)) / 1e-5) as usize;
            for i in 0..=steps {
                let x = lo + i as f64 * 1e-5;
                let f = 0.5 * cfg.rho * (x - a) * (x - a) + penalty.value(x);
                if f < best.0 {
                    best = (f, x);
                }
            }
            assert!(
                (best.1 - got).abs() < 2e-5,
                "a={a}: grid {} vs {got}",
                best.1
            );
        }
    }

    #[test]
    fn theta_update_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_sym(&mut rng, 3, 1.0);
        let d = random_sym(&mut rng, 3, 1.0);
        let x = random_sym(&mut rng, 3, 1.0);
        let cfg = SolverConfig::default();
        let same = state_with(x.clone(), x.clone(), m.clone());
        assert_eq!(update_theta(&same, &cfg), m);
        let st = state_with(x.add(&d), x.clone(), SymmetricMatrix::zeros(3));
        assert!(update_theta(&st, &cfg).max_abs_diff(&d) < 1e-15);
        let cfg2 = SolverConfig { rho: 2.0, ..cfg };
        let st = state_with(x.add(&d), x, m.clone());
        assert!(update_theta(&st, &cfg2).max_abs_diff(&m.axpby(1.0, &d, 2.0)) < 1e-14);
    }

    #[test]
    fn objective_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sigma = random_sym(&mut rng, 4, 3.0);
        let pen = PenaltyConfig::mcp(0.3, 3.0).unwrap();
        assert_eq!(
            objective_value(&SymmetricMatrix::zeros(4), &sigma, &pen, 0.7),
            0.0
        );
        let pi = random_sym(&mut rng, 4, 1.0);
        let zero = PenaltyConfig::mcp(0.0, 3.0).unwrap();
        assert!((objective_value(&pi, &sigma, &zero, 0.0) + sigma.inner(&pi)).abs() < 1e-14);

        let mut lin = 0.0;
        let mut quad = 0.0;
        let mut pen_sum = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                lin += sigma[(i, j)] * pi[(i, j)];
                quad += pi[(i, j)] * pi[(i, j)];
                let t: f64 = pi[(i, j)];
                pen_sum += if t.abs() <= 0.9 {
                    0.3 * t.abs() - t * t / 6.0
                } else {
                    0.135
                };
            }
        }
        let want = -lin + 0.35 * quad + pen_sum;
        assert!((objective_value(&pi, &sigma, &pen, 0.7) - want).abs() < 1e-10);
    }

    #[test]
    fn unpenalized_solve_recovers_eigenprojector() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = FantopeSpec::new(2, 6).unwrap();
        let g = DMatrix::from_fn(6, 6, |_, _| rng.random::<f64>() - 0.5);
        let sigma = SymmetricMatrix::symmetrized(&g * g.transpose() * 4.0);
        assert!(sigma.eigen().gap(2) > 0.1);
        let pen = PenaltyConfig::mcp(0.0, 3.0).unwrap();
        let sol = solve(&sigma, &spec, &pen, &SolverConfig::default()).unwrap();
        assert!(sol.diagnostics.converged(), "{:?}", sol.diagnostics);
        let (_, proj) = fantope_linear_max(&sigma, &spec).unwrap();
        assert!(sol.estimate.sub(&proj).frobenius_norm() < 1e-4);
    }

    #[test]
    fn full_dimension_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = FantopeSpec::new(4, 4).unwrap();
        let sigma = random_sym(&mut rng, 4, 5.0);
        let pen = PenaltyConfig::mcp(0.2, 3.0).unwrap();
        let sol = solve(&sigma, &spec, &pen, &SolverConfig::default().with_tau(0.5)).unwrap();
        assert!(sol.feasible.max_abs_diff(&SymmetricMatrix::identity(4)) < 1e-10);
        assert!(sol.estimate.max_abs_diff(&SymmetricMatrix::identity(4)) < 1e-5);
    }

    #[test]
    fn rejects_invalid_config() {
        let spec = FantopeSpec::new(1, 2).unwrap();
        let s = SymmetricMatrix::identity(2);
        let pen = PenaltyConfig::mcp(0.1, 3.0).unwrap();
        let bad = SolverConfig {
            rho: 0.2,
            ..SolverConfig::default()
        };
        assert!(solve(&s, &spec, &pen, &bad).is_err());
        let bad = SolverConfig {
            max_iters: 0,
            ..SolverConfig::default()
        };
        assert!(solve(&s, &spec, &pen, &bad).is_err());
    }

    #[test]
    fn max_iterations_is_flagged_not_fatal() {
        let spec = FantopeSpec::new(1, 3).unwrap();
        let sigma = SymmetricMatrix::from_diagonal(&[3.0, 1.0, 0.5]);
        let pen = PenaltyConfig::mcp(0.5, 3.0).unwrap();
        let cfg = SolverConfig {
            max_iters: 1,
            ..SolverConfig::default()
        };
        let sol = solve(&sigma, &spec, &pen, &cfg).unwrap();
        assert_eq!(sol.diagnostics.status, SolveStatus::MaxIterations);
        assert_eq!(sol.diagnostics.iterations, 1);
    }

    #[test]
    fn solver_config_json_materializes_defaults() {
        let cfg: SolverConfig = serde_json::from_str(r#"{"tau": 0.5}"#).unwrap();
        assert_eq!(cfg.rho, 1.0);
        assert_eq!(cfg.max_iters, 2000);
        let r = cfg.resolved(128);
        assert!((r.primal_tol.unwrap() - 1.28e-5).abs() < 1e-18);
        let js = serde_json::to_value(r).unwrap();
        assert_eq!(js["dual_tol"], serde_json::json!(r.dual_tol.unwrap()));
    }
}
