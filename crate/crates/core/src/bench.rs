//! Monte-Carlo benchmark harness.
//!
//! Replication `r` draws its data from seed `base_seed + r`; replications
//! may run on several threads and results are always ordered by `r`, so the
//! outputs are identical for any thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpcaError};
use crate::estimators::{
    ConvexSpca, EstimateFlag, EstimateResult, EstimatorRegistry, FantopeL1, FitProblem,
    NonconvexSpca, Oracle, SubspaceEstimator,
};
use crate::evaluation::{
    aggregate, frobenius_error, support_metrics, MetricSummary, MetricsRecord, Summary,
};
use crate::fantope::FantopeSpec;
use crate::io::{read_json, read_matrix_csv, write_json, write_metrics_csv};
use crate::penalty::PenaltyConfig;
use crate::solver::SolverConfig;
use crate::synthdata::{
    dataset1_model, dataset2_model, sample_covariance, sample_gaussian, substream, CovarianceModel,
    Stream,
};
use crate::tuning::{cv_select_lambda, default_lambda, holdout_select_lambda, CvOutcome, CvSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Dataset1,
    Dataset2,
    /// User data from `data_path`, scored against the model in `model_path`.
    Csv,
}

/// How each replication picks lambda for the estimators that have one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LambdaRule {
    /// Cross-validation as configured by `cv`.
    #[default]
    Cv,
    Fixed {
        lambda: f64,
    },
    /// `c * default_lambda` of the replication's sample covariance.
    Scaled {
        c: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dataset: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub estimators: Vec<String>,
    pub reps: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub pen: PenaltyConfig,
    #[serde(default)]
    pub cfg: SolverConfig,
    #[serde(default)]
    pub cv: CvSpec,
    #[serde(default)]
    pub lambda_rule: LambdaRule,
    /// Score CV folds on a fresh sample of size `n` instead of splitting the
    /// training data. Ignored for CSV data, which has no generator.
    #[serde(default = "yes")]
    pub held_out: bool,
}

fn yes() -> bool {
    true
}

/// ADMM step size used by the synthetic benchmarks. The fixed point does not
/// depend on rho; at `||S|| ~ 100` a unit step needs thousands of iterations
/// for the large-lambda end of the default grid.
pub const BENCH_RHO: f64 = 100.0;

impl ExperimentSpec {
    /// Synthetic dataset I: `p = 128`, `s = 5`, `k = 1`, MCP with `b = 3` and
    /// `tau = 2/b`, all four estimators, `rho = BENCH_RHO`.
    pub fn synthetic_i(n: usize, reps: usize, base_seed: u64) -> Self {
        Self::synthetic(DatasetKind::Dataset1, n, 1, reps, base_seed)
    }

    /// Synthetic dataset II: `p = 128`, `s = 10`, `k = 5`.
    pub fn synthetic_ii(n: usize, reps: usize, base_seed: u64) -> Self {
        Self::synthetic(DatasetKind::Dataset2, n, 5, reps, base_seed)
    }

    fn synthetic(dataset: DatasetKind, n: usize, k: usize, reps: usize, base_seed: u64) -> Self {
        let b = 3.0;
        ExperimentSpec {
            dataset,
            data_path: None,
            model_path: None,
            n,
            p: 128,
            k,
            estimators: [
                Oracle::NAME,
                ConvexSpca::NAME,
                NonconvexSpca::NAME,
                FantopeL1::NAME,
            ]
            .map(String::from)
            .to_vec(),
            reps,
            base_seed,
            pen: PenaltyConfig::mcp(1.0, b).expect("valid"),
            cfg: SolverConfig {
                rho: BENCH_RHO,
                ..SolverConfig::default().with_tau(2.0 / b)
            },
            cv: CvSpec::default(),
            lambda_rule: LambdaRule::Cv,
            held_out: true,
        }
    }

    pub fn validate(&self, registry: &EstimatorRegistry) -> Result<()> {
        if self.reps == 0 {
            return Err(SpcaError::config("reps must be at least 1"));
        }
        if self.n < 2 {
            return Err(SpcaError::config(format!("need n >= 2, got {}", self.n)));
        }
        if self.estimators.is_empty() {
            return Err(SpcaError::config("no estimators selected"));
        }
        for name in &self.estimators {
            registry.create(name)?;
        }
        FantopeSpec::new(self.k, self.p)?;
        self.cfg.validate()?;
        self.cv.validate()?;
        match self.lambda_rule {
            LambdaRule::Fixed { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                return Err(SpcaError::config(format!(
                    "fixed lambda must be >= 0, got {lambda}"
                )));
            }
            LambdaRule::Scaled { c } if !(c > 0.0 && c.is_finite()) => {
                return Err(SpcaError::config(format!(
                    "lambda scale must be positive, got {c}"
                )));
            }
            _ => {}
        }
        let (s, k) = match self.dataset {
            DatasetKind::Dataset1 => (5, 1),
            DatasetKind::Dataset2 => (10, 5),
            DatasetKind::Csv => {
                if self.data_path.is_none() || self.model_path.is_none() {
                    return Err(SpcaError::config(
                        "csv dataset needs data_path and model_path",
                    ));
                }
                return Ok(());
            }
        };
        if self.k != k {
            return Err(SpcaError::config(format!(
                "{:?} has k = {k}, got {}",
                self.dataset, self.k
            )));
        }
        if self.p < s {
            return Err(SpcaError::config(format!(
                "{:?} needs p >= s = {s}, got {}",
                self.dataset, self.p
            )));
        }
        Ok(())
    }

    /// The population model. Dataset II draws its eigenvectors once from
    /// `base_seed`, so every replication shares the same truth.
    pub fn model(&self) -> Result<CovarianceModel> {
        match self.dataset {
            DatasetKind::Dataset1 => dataset1_model(self.p),
            DatasetKind::Dataset2 => dataset2_model(self.p, self.base_seed),
            DatasetKind::Csv => {
                let path = self
                    .model_path
                    .as_deref()
                    .ok_or_else(|| SpcaError::config("missing model_path"))?;
                let model: CovarianceModel = read_json(path)?;
                if model.p() != self.p || model.k != self.k {
                    return Err(SpcaError::config(format!(
                        "model has p = {}, k = {}; spec has p = {}, k = {}",
                        model.p(),
                        model.k,
                        self.p,
                        self.k
                    )));
                }
                Ok(model)
            }
        }
    }

    fn problem(&self, model: &CovarianceModel) -> FitProblem {
        FitProblem {
            spec: FantopeSpec {
                k: self.k,
                p: self.p,
            },
            penalty: self.pen,
            solver: self.cfg,
            support: Some(model.support.clone()),
        }
    }
}

/// Training data and, for synthetic held-out CV, the independent held-out sample.
pub struct RepData {
    pub seed: u64,
    pub x: DMatrix<f64>,
    pub heldout: Option<DMatrix<f64>>,
}

/// Data for replication `rep`. For CSV data every replication sees the same
/// rows and only the fold assignment changes.
pub fn rep_data(
    spec: &ExperimentSpec,
    model: &CovarianceModel,
    csv: Option<&DMatrix<f64>>,
    rep: usize,
) -> Result<RepData> {
    let seed = spec.base_seed.wrapping_add(rep as u64);
    if let Some(x) = csv {
        return Ok(RepData {
            seed,
            x: x.clone(),
            heldout: None,
        });
    }
    let x = sample_gaussian(model, spec.n, &mut substream(seed, Stream::Train))?;
    let heldout = if spec.held_out {
        Some(sample_gaussian(
            model,
            spec.n,
            &mut substream(seed, Stream::HeldOut),
        )?)
    } else {
        None
    };
    Ok(RepData { seed, x, heldout })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub estimator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<EstimateFlag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub result: Option<EstimateResult>,
    #[serde(skip)]
    pub cv: Option<CvOutcome>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub seed: u64,
    pub fits: Vec<FitRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub successes: usize,
    pub failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<MetricSummary>,
    /// How many successful replications carried each flag.
    pub flag_counts: BTreeMap<EstimateFlag, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub spec: ExperimentSpec,
    pub summaries: Vec<EstimatorSummary>,
    pub reps: Vec<RepOutcome>,
}

impl BenchReport {
    pub fn summary(&self, estimator: &str) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == estimator)
    }

    /// Successful per-replication metrics of one estimator, in replication order.
    pub fn records(&self, estimator: &str) -> Vec<MetricsRecord> {
        self.fits(estimator).filter_map(|f| f.metrics).collect()
    }

    pub fn fits<'a>(&'a self, estimator: &'a str) -> impl Iterator<Item = &'a FitRecord> + 'a {
        self.reps
            .iter()
            .flat_map(|r| r.fits.iter())
            .filter(move |f| f.estimator == estimator)
    }
}

fn pick_lambda(
    spec: &ExperimentSpec,
    est: &dyn SubspaceEstimator,
    problem: &FitProblem,
    data: &RepData,
    sigma_hat: &crate::linalg::SymmetricMatrix,
) -> Result<(f64, Option<CvOutcome>)> {
    match spec.lambda_rule {
        LambdaRule::Fixed { lambda } => Ok((lambda, None)),
        LambdaRule::Scaled { c } => {
            Ok((c * default_lambda(sigma_hat, data.x.nrows(), spec.p), None))
        }
        LambdaRule::Cv => {
            let cv = CvSpec {
                seed: spec.cv.seed.wrapping_add(data.seed),
                ..spec.cv.clone()
            };
            let out = match &data.heldout {
                Some(h) => holdout_select_lambda(&data.x, h, est, problem, &cv)?,
                None => cv_select_lambda(&data.x, est, problem, &cv)?,
            };
            Ok((out.lambda_star, Some(out)))
        }
    }
}

fn fit_one(
    spec: &ExperimentSpec,
    est: &dyn SubspaceEstimator,
    base: &FitProblem,
    model: &CovarianceModel,
    data: &RepData,
    sigma_hat: &crate::linalg::SymmetricMatrix,
) -> Result<(
    Option<f64>,
    Option<CvOutcome>,
    EstimateResult,
    MetricsRecord,
)> {
    let (lambda, cv, problem) = if est.uses_lambda() {
        let (lambda, cv) = pick_lambda(spec, est, base, data, sigma_hat)?;
        let problem = FitProblem {
            penalty: base.penalty.with_lambda(lambda)?,
            ..base.clone()
        };
        (Some(lambda), cv, problem)
    } else {
        (None, None, base.clone())
    };
    let result = est.fit(sigma_hat, &problem)?;
    let (tpr, fpr) = support_metrics(&result.support, &model.support, spec.p);
    let metrics = MetricsRecord {
        seed: data.seed,
        frob_error: frobenius_error(&result.pi_hat, &model.pi_star)?,
        tpr,
        fpr,
        rank: result.rank,
    };
    Ok((lambda, cv, result, metrics))
}

fn run_rep(
    spec: &ExperimentSpec,
    estimators: &[Arc<dyn SubspaceEstimator>],
    model: &CovarianceModel,
    csv: Option<&DMatrix<f64>>,
    rep: usize,
) -> Result<RepOutcome> {
    let data = rep_data(spec, model, csv, rep)?;
    let sigma_hat = sample_covariance(&data.x)?;
    let base = spec.problem(model);
    let fits = estimators
        .iter()
        .map(
            |est| match fit_one(spec, est.as_ref(), &base, model, &data, &sigma_hat) {
                Ok((lambda, cv, result, metrics)) => FitRecord {
                    estimator: est.name().to_string(),
                    lambda,
                    metrics: Some(metrics),
                    flags: result.flags.clone(),
                    error: None,
                    result: Some(result),
                    cv,
                },
                Err(e) => {
                    log::warn!("rep {rep}: {} failed: {e}", est.name());
                    FitRecord {
                        estimator: est.name().to_string(),
                        lambda: None,
                        metrics: None,
                        flags: Vec::new(),
                        error: Some(e.to_string()),
                        result: None,
                        cv: None,
                    }
                }
            },
        )
        .collect();
    Ok(RepOutcome {
        rep,
        seed: data.seed,
        fits,
    })
}

/// Runs every replication. `threads = 0` uses rayon's default pool size.
pub fn run_bench(
    spec: &ExperimentSpec,
    registry: &EstimatorRegistry,
    threads: usize,
) -> Result<BenchReport> {
    spec.validate(registry)?;
    let model = spec.model()?;
    let csv = match spec.dataset {
        DatasetKind::Csv => {
            let path = spec
                .data_path
                .as_deref()
                .ok_or_else(|| SpcaError::config("missing data_path"))?;
            let x = read_matrix_csv(path)?;
            if x.shape() != (spec.n, spec.p) {
                return Err(SpcaError::shape(
                    format!("{}x{}", spec.n, spec.p),
                    format!("{}x{}", x.nrows(), x.ncols()),
                ));
            }
            Some(x)
        }
        _ => None,
    };
    let estimators: Vec<Arc<dyn SubspaceEstimator>> = spec
        .estimators
        .iter()
        .map(|n| registry.create(n))
        .collect::<Result<_>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SpcaError::config(format!("thread pool: {e}")))?;
    let reps: Vec<RepOutcome> = pool.install(|| {
        (0..spec.reps)
            .into_par_iter()
            .map(|rep| run_rep(spec, &estimators, &model, csv.as_ref(), rep))
            .collect::<Result<_>>()
    })?;

    let summaries = estimators
        .iter()
        .map(|est| summarize(est.name(), &reps))
        .collect::<Result<_>>()?;
    let mut resolved = spec.clone();
    resolved.cfg = spec.cfg.resolved(spec.p);
    Ok(BenchReport {
        spec: resolved,
        summaries,
        reps,
    })
}

fn summarize(name: &str, reps: &[RepOutcome]) -> Result<EstimatorSummary> {
    let fits: Vec<&FitRecord> = reps
        .iter()
        .flat_map(|r| &r.fits)
        .filter(|f| f.estimator == name)
        .collect();
    let records: Vec<MetricsRecord> = fits.iter().filter_map(|f| f.metrics).collect();
    let lambdas: Vec<f64> = fits
        .iter()
        .filter(|f| f.metrics.is_some())
        .filter_map(|f| f.lambda)
        .collect();
    let mut flag_counts = BTreeMap::new();
    for f in fits.iter().filter(|f| f.metrics.is_some()) {
        for &flag in &f.flags {
            *flag_counts.entry(flag).or_insert(0) += 1;
        }
    }
    Ok(EstimatorSummary {
        estimator: name.to_string(),
        successes: records.len(),
        failures: fits.len() - records.len(),
        summary: if records.is_empty() {
            None
        } else {
            Some(aggregate(&records)?)
        },
        lambda: if lambdas.is_empty() {
            None
        } else {
            Some(MetricSummary::of(&lambdas)?)
        },
        flag_counts,
    })
}

/// Aligned text table: one row per estimator, mean±sd per metric.
pub fn render_table(report: &BenchReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>7}  {:<16} {:<16} {:<16} {:<16}",
        "estimator", "ok", "frob_error", "tpr", "fpr", "rank"
    );
    let mut single = false;
    for s in &report.summaries {
        let ok = format!("{}/{}", s.successes, s.successes + s.failures);
        match &s.summary {
            Some(m) => {
                single |= m.single_sample;
                let _ = writeln!(
                    out,
                    "{:<12} {:>7}  {:<16} {:<16} {:<16} {:<16}",
                    s.estimator,
                    ok,
                    m.frob_error.to_string(),
                    m.tpr.to_string(),
                    m.fpr.to_string(),
                    m.rank.to_string()
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{:<12} {:>7}  (no successful replications)",
                    s.estimator, ok
                );
            }
        }
    }
    if single {
        out.push_str("note: a single replication; sd is degenerate\n");
    }
    out
}

/// Writes `metrics_<estimator>.csv`, `summary.json` and `summary.txt` into `dir`.
pub fn write_report(report: &BenchReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for s in &report.summaries {
        let path = dir.join(format!("metrics_{}.csv", s.estimator));
        write_metrics_csv(&path, &report.records(&s.estimator))?;
    }
    write_json(&dir.join("summary.json"), report)?;
    std::fs::write(dir.join("summary.txt"), render_table(report))?;
    Ok(())
}
