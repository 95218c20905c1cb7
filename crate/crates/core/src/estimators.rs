//! Estimator strategies and the registry that selects them by name.
//!
//! Every estimator maps a sample covariance to an [`EstimateResult`]. The
//! ADMM-backed ones differ only in penalty family and `tau`:
//!
//! | name         | penalty       | tau              |
//! |--------------|---------------|------------------|
//! | `convex`     | configured    | configured, `> zeta_minus` |
//! | `nonconvex`  | configured    | 0                |
//! | `fantope-l1` | l1            | 0                |
//!
//! `oracle` runs plain PCA on the true-support submatrix and `pca` is the
//! unpenalized top-`k` eigenprojector.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpcaError};
use crate::fantope::FantopeSpec;
use crate::linalg::SymmetricMatrix;
use crate::penalty::{PenaltyConfig, PenaltyFamily};
use crate::solver::{solve, AdmmSolution, SolveDiagnostics, SolverConfig};

/// Diagonal entries above this magnitude count as selected coordinates.
pub const SUPPORT_THRESHOLD: f64 = 1e-8;
pub const DEFAULT_RANK_THRESHOLD: f64 = 1e-6;
/// Largest acceptable first-order gap for a returned local optimum.
pub const STATIONARITY_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateFlag {
    /// Nonconvex program: the estimate is a stationary point, not a certified global optimum.
    LocalOptimum,
    /// The first-order condition failed at the returned point.
    StationarityFailed,
    /// `zeta_minus > (lambda_k - lambda_{k+1}) / 4` for the sample covariance.
    EigengapConditionViolated,
    /// `lambda_k = lambda_{k+1}`: the reported projector is one of many.
    DegenerateEigengap,
    /// Fewer than `k` eigenvalues of the estimate above the rank threshold.
    RankDeficient,
    NotConverged,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimator: String,
    /// Fitted projection matrix (for ADMM estimators, the sparse split variable).
    pub pi_hat: SymmetricMatrix,
    /// The exactly feasible ADMM iterate, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasible: Option<SymmetricMatrix>,
    /// Column-orthonormal `p x k` basis of the estimated subspace.
    #[serde(default, with = "dense_rows_opt")]
    pub u_hat: Option<DMatrix<f64>>,
    /// Zero-based indices with nonzero diagonal.
    pub support: Vec<usize>,
    pub rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<PenaltyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<SolveDiagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationarity_gap: Option<f64>,
    #[serde(default)]
    pub flags: Vec<EstimateFlag>,
    /// Final ADMM multiplier, a penalty subgradient at `pi_hat`. Not serialized.
    #[serde(skip)]
    pub dual: Option<SymmetricMatrix>,
}

impl EstimateResult {
    pub fn has_flag(&self, flag: EstimateFlag) -> bool {
        self.flags.contains(&flag)
    }

    pub fn converged(&self) -> bool {
        self.diagnostics
            .as_ref()
            .is_none_or(SolveDiagnostics::converged)
    }

    fn from_projector(
        name: &str,
        projector: SymmetricMatrix,
        sigma_hat: &SymmetricMatrix,
        k: usize,
    ) -> Self {
        let mut flags = Vec::new();
        let basis = extract_basis(&projector, sigma_hat, k);
        if basis.rank_deficient {
            flags.push(EstimateFlag::RankDeficient);
        }
        EstimateResult {
            estimator: name.to_string(),
            support: support_of(&projector),
            rank: numerical_rank(&projector, DEFAULT_RANK_THRESHOLD),
            pi_hat: projector,
            feasible: None,
            u_hat: Some(basis.u),
            penalty: None,
            diagnostics: None,
            stationarity_gap: None,
            flags,
            dual: None,
        }
    }

    fn from_admm(
        name: &str,
        sol: AdmmSolution,
        sigma_hat: &SymmetricMatrix,
        spec: &FantopeSpec,
        pen: PenaltyConfig,
    ) -> Result<Self> {
        let gap = sol.stationarity_gap(sigma_hat, spec)?;
        let mut flags = Vec::new();
        if !sol.diagnostics.converged() {
            flags.push(EstimateFlag::NotConverged);
        }
        let basis = extract_basis(&sol.estimate, sigma_hat, spec.k);
        if basis.rank_deficient {
            flags.push(EstimateFlag::RankDeficient);
        }
        Ok(EstimateResult {
            estimator: name.to_string(),
            support: support_of(&sol.estimate),
            rank: numerical_rank(&sol.feasible, DEFAULT_RANK_THRESHOLD),
            pi_hat: sol.estimate,
            feasible: Some(sol.feasible),
            u_hat: Some(basis.u),
            penalty: Some(pen),
            diagnostics: Some(sol.diagnostics),
            stationarity_gap: Some(gap),
            flags,
            dual: Some(sol.dual),
        })
    }
}

/// `{ i : |P_ii| > SUPPORT_THRESHOLD }`.
pub fn support_of(pi: &SymmetricMatrix) -> Vec<usize> {
    (0..pi.dim())
        .filter(|&i| pi[(i, i)].abs() > SUPPORT_THRESHOLD)
        .collect()
}

pub fn numerical_rank(pi: &SymmetricMatrix, threshold: f64) -> usize {
    pi.eigenvalues()
        .into_iter()
        .filter(|&e| e > threshold)
        .count()
}

#[derive(Debug, Clone)]
pub struct Projector {
    pub matrix: SymmetricMatrix,
    /// False when `lambda_k = lambda_{k+1}` and the projector is not unique.
    pub unique: bool,
}

/// Top-`k` eigenprojector of `sigma_hat`.
pub fn pca_projector(sigma_hat: &SymmetricMatrix, k: usize) -> Result<Projector> {
    if k == 0 || k > sigma_hat.dim() {
        return Err(SpcaError::config(format!(
            "need 1 <= k <= p, got k = {k}, p = {}",
            sigma_hat.dim()
        )));
    }
    let sp = sigma_hat.eigen();
    Ok(Projector {
        matrix: sp.top_projector(k),
        unique: sp.gap(k) > 0.0,
    })
}

#[derive(Debug, Clone)]
pub struct Basis {
    pub u: DMatrix<f64>,
    pub rank_deficient: bool,
}

/// Orthonormal basis for the range of `pi_hat`, rotated so that
/// `U^T S U` is diagonal with decreasing entries, each column's
/// largest-magnitude entry positive.
pub fn extract_basis(pi_hat: &SymmetricMatrix, sigma_hat: &SymmetricMatrix, k: usize) -> Basis {
    let sp = pi_hat.eigen();
    let rank_deficient = sp
        .values
        .iter()
        .take(k)
        .any(|&e| e <= DEFAULT_RANK_THRESHOLD);
    let u = sp.leading_vectors(k);
    let inner = SymmetricMatrix::symmetrized(u.transpose() * sigma_hat.as_matrix() * &u);
    let rot = inner.eigen().vectors;
    let mut w = u * rot;
    for mut col in w.column_iter_mut() {
        let pivot = col
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
    Basis {
        u: w,
        rank_deficient,
    }
}

/// Convex estimator (`tau > zeta_minus`): unique global optimum.
pub fn convex_spca(
    sigma_hat: &SymmetricMatrix,
    spec: &FantopeSpec,
    pen: &PenaltyConfig,
    cfg: &SolverConfig,
) -> Result<EstimateResult> {
    let zeta = pen.zeta_minus();
    if !(cfg.tau > zeta) {
        return Err(SpcaError::config(format!(
            "convex estimator needs tau > zeta_minus (tau = {}, zeta_minus = {zeta})",
            cfg.tau
        )));
    }
    let sol = solve(sigma_hat, spec, pen, cfg)?;
    EstimateResult::from_admm(ConvexSpca::NAME, sol, sigma_hat, spec, *pen)
}

/// Nonconvex estimator (`tau = 0`); the result is flagged as a local optimum.
pub fn nonconvex_spca(
    sigma_hat: &SymmetricMatrix,
    spec: &FantopeSpec,
    pen: &PenaltyConfig,
    cfg: &SolverConfig,
) -> Result<EstimateResult> {
    if cfg.tau != 0.0 {
        return Err(SpcaError::config(format!(
            "nonconvex estimator requires tau = 0, got {}",
            cfg.tau
        )));
    }
    admm_tau_zero(NonconvexSpca::NAME, sigma_hat, spec, pen, cfg)
}

fn admm_tau_zero(
    name: &str,
    sigma_hat: &SymmetricMatrix,
    spec: &FantopeSpec,
    pen: &PenaltyConfig,
    cfg: &SolverConfig,
) -> Result<EstimateResult> {
    let sol = solve(sigma_hat, spec, pen, cfg)?;
    let mut res = EstimateResult::from_admm(name, sol, sigma_hat, spec, *pen)?;
    let zeta = pen.zeta_minus();
    if zeta > 0.0 {
        res.flags.push(EstimateFlag::LocalOptimum);
        let gap = sigma_hat.eigen().gap(spec.k);
        if zeta > gap / 4.0 {
            log::warn!("zeta_minus = {zeta} exceeds a quarter of the eigengap {gap}");
            res.flags.push(EstimateFlag::EigengapConditionViolated);
        }
    }
    if res
        .stationarity_gap
        .is_some_and(|g| g > STATIONARITY_TOLERANCE)
    {
        res.flags.push(EstimateFlag::StationarityFailed);
    }
    Ok(res)
}

/// PCA restricted to `support`, embedded back into `p x p`.
pub fn oracle_estimator(
    sigma_hat: &SymmetricMatrix,
    spec: &FantopeSpec,
    support: &[usize],
) -> Result<EstimateResult> {
    let mut idx = support.to_vec();
    idx.sort_unstable();
    idx.dedup();
    if let Some(&bad) = idx.iter().find(|&&i| i >= spec.p) {
        return Err(SpcaError::config(format!(
            "support index {bad} out of range for p = {}",
            spec.p
        )));
    }
    if idx.len() < spec.k {
        return Err(SpcaError::config(format!(
            "oracle needs |support| >= k (|support| = {}, k = {})",
            idx.len(),
            spec.k
        )));
    }
    let sub = pca_projector(&sigma_hat.submatrix(&idx), spec.k)?;
    let full = sub.matrix.embed(&idx, spec.p);
    let mut res = EstimateResult::from_projector(Oracle::NAME, full, sigma_hat, spec.k);
    if !sub.unique {
        res.flags.push(EstimateFlag::DegenerateEigengap);
    }
    Ok(res)
}

/// Everything an estimator may need besides the covariance itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitProblem {
    pub spec: FantopeSpec,
    pub penalty: PenaltyConfig,
    pub solver: SolverConfig,
    /// True support, consumed only by the oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<usize>>,
}

/// A subspace estimation strategy.
pub trait SubspaceEstimator: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether the estimator has a regularization level to tune.
    fn uses_lambda(&self) -> bool {
        true
    }

    /// Penalty and solver settings this strategy actually runs with.
    fn effective(&self, problem: &FitProblem) -> Result<(PenaltyConfig, SolverConfig)> {
        Ok((problem.penalty, problem.solver))
    }

    fn fit(&self, sigma_hat: &SymmetricMatrix, problem: &FitProblem) -> Result<EstimateResult>;
}

#[derive(Debug, Default)]
pub struct ConvexSpca;

impl ConvexSpca {
    pub const NAME: &'static str = "convex";
}

impl SubspaceEstimator for ConvexSpca {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn fit(&self, sigma_hat: &SymmetricMatrix, problem: &FitProblem) -> Result<EstimateResult> {
        convex_spca(sigma_hat, &problem.spec, &problem.penalty, &problem.solver)
    }
}

#[derive(Debug, Default)]
pub struct NonconvexSpca;

impl NonconvexSpca {
    pub const NAME: &'static str = "nonconvex";
}

impl SubspaceEstimator for NonconvexSpca {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn effective(&self, problem: &FitProblem) -> Result<(PenaltyConfig, SolverConfig)> {
        Ok((problem.penalty, problem.solver.with_tau(0.0)))
    }

    fn fit(&self, sigma_hat: &SymmetricMatrix, problem: &FitProblem) -> Result<EstimateResult> {
        let (pen, cfg) = self.effective(problem)?;
        nonconvex_spca(sigma_hat, &problem.spec, &pen, &cfg)
    }
}

/// The l1-penalized Fantope baseline: same solver, l1 family, no ridge term.
#[derive(Debug, Default)]
pub struct FantopeL1;

impl FantopeL1 {
    pub const NAME: &'static str = "fantope-l1";
}

impl SubspaceEstimator for FantopeL1 {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn effective(&self, problem: &FitProblem) -> Result<(PenaltyConfig, SolverConfig)> {
        Ok((
            problem.penalty.with_family(PenaltyFamily::L1)?,
            problem.solver.with_tau(0.0),
        ))
    }

    fn fit(&self, sigma_hat: &SymmetricMatrix, problem: &FitProblem) -> Result<EstimateResult> {
        let (pen, cfg) = self.effective(problem)?;
        admm_tau_zero(Self::NAME, sigma_hat, &problem.spec, &pen, &cfg)
    }
}

#[derive(Debug, Default)]
pub struct Oracle;

impl Oracle {
    pub const NAME: &'static str = "oracle";
}

impl SubspaceEstimator for Oracle {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn uses_lambda(&self) -> bool {
        false
    }

    fn fit(&self, sigma_hat: &SymmetricMatrix, problem: &FitProblem) -> Result<EstimateResult> {
        let support = problem
            .support
            .as_deref()
            .ok_or_else(|| SpcaError::config("oracle estimator needs the true support"))?;
        oracle_estimator(sigma_hat, &problem.spec, support)
    }
}

#[derive(Debug, Default)]
pub struct Pca;

impl Pca {
    pub const NAME: &'static str = "pca";
}

impl SubspaceEstimator for Pca {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn uses_lambda(&self) -> bool {
        false
    }

    fn fit(&self, sigma_hat: &SymmetricMatrix, problem: &FitProblem) -> Result<EstimateResult> {
        let proj = pca_projector(sigma_hat, problem.spec.k)?;
        let mut res =
            EstimateResult::from_projector(Self::NAME, proj.matrix, sigma_hat, problem.spec.k);
        if !proj.unique {
            res.flags.push(EstimateFlag::DegenerateEigengap);
        }
        Ok(res)
    }
}

pub type EstimatorFactory = fn() -> Arc<dyn SubspaceEstimator>;

/// Name-to-constructor table of available estimators.
#[derive(Clone)]
pub struct EstimatorRegistry {
    entries: BTreeMap<&'static str, EstimatorFactory>,
}

impl Default for EstimatorRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl EstimatorRegistry {
    pub fn empty() -> Self {
        EstimatorRegistry {
            entries: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Oracle::NAME, || Arc::new(Oracle));
        r.register(Pca::NAME, || Arc::new(Pca));
        r.register(FantopeL1::NAME, || Arc::new(FantopeL1));
        r.register(ConvexSpca::NAME, || Arc::new(ConvexSpca));
        r.register(NonconvexSpca::NAME, || Arc::new(NonconvexSpca));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: EstimatorFactory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn create(&self, name: &str) -> Result<Arc<dyn SubspaceEstimator>> {
        let key = name.to_ascii_lowercase().replace('_', "-");
        self.entries
            .get(key.as_str())
            .map(|f| f())
            .ok_or_else(|| SpcaError::UnknownStrategy {
                kind: "estimator",
                name: name.to_string(),
                available: self.names().collect::<Vec<_>>().join(", "),
            })
    }
}

pub(crate) mod dense_rows_opt {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref()
            .map(|m| {
                m.row_iter()
                    .map(|r| r.iter().copied().collect::<Vec<f64>>())
                    .collect::<Vec<_>>()
            })
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        let rows: Option<Vec<Vec<f64>>> = Option::deserialize(d)?;
        let Some(rows) = rows else { return Ok(None) };
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(Some(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j])))
    }
}
