//! Choice of the regularization level by K-fold cross-validation.
//!
//! A fitted projection `P` is scored on validation data by the explained
//! variance `<S_val, P>`; larger is better, ties go to the larger lambda.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpcaError};
use crate::estimators::{FitProblem, SubspaceEstimator};
use crate::linalg::SymmetricMatrix;
use crate::synthdata::{sample_covariance, substream, Stream};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_GRID_POINTS: usize = 20;
/// Default grid spans `[LO, HI] * default_lambda`.
pub const DEFAULT_GRID_SPAN: (f64, f64) = (0.1, 10.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvScore {
    /// `<S_val, P>` on the validation fold.
    #[default]
    HeldOutTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSpec {
    /// Candidate levels. Empty means the default log grid around
    /// [`default_lambda`], resolved per data set.
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Multiples of [`default_lambda`] bounding the default grid.
    #[serde(default = "default_grid_span")]
    pub grid_span: (f64, f64),
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub score: CvScore,
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

fn default_grid_span() -> (f64, f64) {
    DEFAULT_GRID_SPAN
}

impl Default for CvSpec {
    fn default() -> Self {
        CvSpec {
            lambda_grid: Vec::new(),
            grid_points: DEFAULT_GRID_POINTS,
            grid_span: DEFAULT_GRID_SPAN,
            folds: DEFAULT_FOLDS,
            seed: 0,
            score: CvScore::HeldOutTrace,
        }
    }
}

impl CvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(SpcaError::config(format!(
                "need at least 2 folds, got {}",
                self.folds
            )));
        }
        if self.lambda_grid.is_empty() && self.grid_points == 0 {
            return Err(SpcaError::config("lambda grid is empty"));
        }
        let (lo, hi) = self.grid_span;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(SpcaError::config(format!(
                "grid span must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        if let Some(&l) = self
            .lambda_grid
            .iter()
            .find(|&&l| !(l > 0.0 && l.is_finite()))
        {
            return Err(SpcaError::config(format!(
                "grid values must be positive, got {l}"
            )));
        }
        Ok(())
    }

    /// The ascending, deduplicated grid; the default grid is centred on
    /// `default_lambda(sigma_hat, n, p)`.
    pub fn resolve_grid(&self, sigma_hat: &SymmetricMatrix, n: usize) -> Vec<f64> {
        let mut grid = if self.lambda_grid.is_empty() {
            default_grid(
                default_lambda(sigma_hat, n, sigma_hat.dim()),
                self.grid_points,
                self.grid_span,
            )
        } else {
            self.lambda_grid.clone()
        };
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid
    }
}

/// `lambda_1(S) * sqrt(ln p / n)`.
pub fn default_lambda(sigma_hat: &SymmetricMatrix, n: usize, p: usize) -> f64 {
    let top = sigma_hat.eigenvalues().first().copied().unwrap_or(0.0);
    top * ((p as f64).ln() / n as f64).sqrt()
}

/// `points` log-spaced values over `[span.0, span.1] * center`.
pub fn default_grid(center: f64, points: usize, span: (f64, f64)) -> Vec<f64> {
    let (lo, hi) = (span.0.ln(), span.1.ln());
    match points {
        0 => Vec::new(),
        1 => vec![center],
        _ => (0..points)
            .map(|i| center * (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp())
            .collect(),
    }
}

/// Seeded fold label for each of `n` rows; fold sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut substream(seed, Stream::Folds));
    let mut label = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        label[row] = pos % folds;
    }
    label
}

fn rows_where(x: &DMatrix<f64>, labels: &[usize], keep: impl Fn(usize) -> bool) -> DMatrix<f64> {
    let idx: Vec<usize> = (0..x.nrows()).filter(|&i| keep(labels[i])).collect();
    x.select_rows(idx.iter())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvScoreRow {
    pub lambda: f64,
    pub fold: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvOutcome {
    pub lambda_star: f64,
    /// Mean validation score per retained lambda, ascending in lambda.
    pub mean_scores: Vec<(f64, f64)>,
    /// Lambdas dropped because a fit failed.
    pub excluded: Vec<f64>,
    pub table: Vec<CvScoreRow>,
}

/// Picks the lambda with the best mean score; near-ties (relative 1e-12)
/// go to the larger value.
fn select(scores: Vec<(f64, Option<Vec<f64>>)>, table: Vec<CvScoreRow>) -> Result<CvOutcome> {
    let mut mean_scores = Vec::new();
    let mut excluded = Vec::new();
    for (lambda, folds) in scores {
        match folds {
            Some(v) => mean_scores.push((lambda, v.iter().sum::<f64>() / v.len() as f64)),
            None => excluded.push(lambda),
        }
    }
    if mean_scores.is_empty() {
        return Err(SpcaError::Numerical(
            "every lambda in the grid failed to fit".into(),
        ));
    }
    let best = mean_scores
        .iter()
        .map(|s| s.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * best.abs().max(1.0);
    let lambda_star = mean_scores
        .iter()
        .rev()
        .find(|s| s.1 >= best - tol)
        .map(|s| s.0)
        .expect("nonempty");
    Ok(CvOutcome {
        lambda_star,
        mean_scores,
        excluded,
        table,
    })
}

fn fit_and_score(
    estimator: &dyn SubspaceEstimator,
    problem: &FitProblem,
    lambda: f64,
    train: &SymmetricMatrix,
    validation: &[SymmetricMatrix],
) -> Option<Vec<f64>> {
    let problem = FitProblem {
        penalty: problem.penalty.with_lambda(lambda).ok()?,
        ..problem.clone()
    };
    match estimator.fit(train, &problem) {
        Ok(res) => Some(validation.iter().map(|v| v.inner(&res.pi_hat)).collect()),
        Err(e) => {
            log::warn!(
                "{} fit failed at lambda = {lambda}: {e}; excluded",
                estimator.name()
            );
            None
        }
    }
}

/// In-sample K-fold CV: fit on all but one fold, score on the held-out fold.
pub fn cv_select_lambda(
    x: &DMatrix<f64>,
    estimator: &dyn SubspaceEstimator,
    problem: &FitProblem,
    cv: &CvSpec,
) -> Result<CvOutcome> {
    cv.validate()?;
    let n = x.nrows();
    if n < cv.folds {
        return Err(SpcaError::config(format!(
            "need n >= folds ({n} < {})",
            cv.folds
        )));
    }
    let labels = fold_assignment(n, cv.folds, cv.seed);
    let splits: Vec<(SymmetricMatrix, SymmetricMatrix)> = (0..cv.folds)
        .map(|f| {
            let train = sample_covariance(&rows_where(x, &labels, |l| l != f))?;
            let val = sample_covariance(&rows_where(x, &labels, |l| l == f))?;
            Ok((train, val))
        })
        .collect::<Result<_>>()?;
    let grid = cv.resolve_grid(&sample_covariance(x)?, n);

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|i| (0..cv.folds).map(move |f| (i, f)))
        .collect();
    let results: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(i, f)| {
            let (train, val) = &splits[f];
            fit_and_score(
                estimator,
                problem,
                grid[i],
                train,
                std::slice::from_ref(val),
            )
            .map(|v| v[0])
        })
        .collect();

    let mut table = Vec::new();
    let mut scores = Vec::new();
    for (i, &lambda) in grid.iter().enumerate() {
        let per_fold: Option<Vec<f64>> = (0..cv.folds).map(|f| results[i * cv.folds + f]).collect();
        if let Some(v) = &per_fold {
            table.extend(v.iter().enumerate().map(|(fold, &score)| CvScoreRow {
                lambda,
                fold,
                score,
            }));
        }
        scores.push((lambda, per_fold));
    }
    select(scores, table)
}

/// CV against an independent held-out sample: each lambda is fit once on
/// the full training covariance and scored on every fold of `heldout`.
pub fn holdout_select_lambda(
    x_train: &DMatrix<f64>,
    heldout: &DMatrix<f64>,
    estimator: &dyn SubspaceEstimator,
    problem: &FitProblem,
    cv: &CvSpec,
) -> Result<CvOutcome> {
    cv.validate()?;
    if heldout.nrows() < cv.folds {
        return Err(SpcaError::config(format!(
            "held-out sample needs at least {} rows, got {}",
            cv.folds,
            heldout.nrows()
        )));
    }
    let train = sample_covariance(x_train)?;
    let labels = fold_assignment(heldout.nrows(), cv.folds, cv.seed);
    let validation: Vec<SymmetricMatrix> = (0..cv.folds)
        .map(|f| sample_covariance(&rows_where(heldout, &labels, |l| l == f)))
        .collect::<Result<_>>()?;
    let grid = cv.resolve_grid(&train, x_train.nrows());

    let per_lambda: Vec<Option<Vec<f64>>> = grid
        .par_iter()
        .map(|&lambda| fit_and_score(estimator, problem, lambda, &train, &validation))
        .collect();
    let mut table = Vec::new();
    for (&lambda, v) in grid.iter().zip(&per_lambda) {
        if let Some(v) = v {
            table.extend(v.iter().enumerate().map(|(fold, &score)| CvScoreRow {
                lambda,
                fold,
                score,
            }));
        }
    }
    select(grid.into_iter().zip(per_lambda).collect(), table)
}
