//! Error and support-recovery metrics, and their Monte-Carlo summaries.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpcaError};
use crate::linalg::SymmetricMatrix;

/// One replication's metrics. CSV column order: `seed,frob_error,tpr,fpr,rank`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub frob_error: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub rank: usize,
}

pub fn frobenius_error(pi_hat: &SymmetricMatrix, pi_star: &SymmetricMatrix) -> Result<f64> {
    if pi_hat.dim() != pi_star.dim() {
        return Err(SpcaError::shape(
            format!("{0}x{0}", pi_star.dim()),
            format!("{0}x{0}", pi_hat.dim()),
        ));
    }
    Ok(pi_hat.sub(pi_star).frobenius_norm())
}

/// `(|est & true| / |true|, |est \ true| / (p - |true|))`, with TPR = 1 for an
/// empty true support and FPR = 0 when the true support is everything.
pub fn support_metrics(est: &[usize], truth: &[usize], p: usize) -> (f64, f64) {
    let est: BTreeSet<usize> = est.iter().copied().collect();
    let truth: BTreeSet<usize> = truth.iter().copied().collect();
    let hits = est.intersection(&truth).count();
    let false_pos = est.difference(&truth).count();
    let tpr = if truth.is_empty() {
        1.0
    } else {
        hits as f64 / truth.len() as f64
    };
    let negatives = p.saturating_sub(truth.len());
    let fpr = if negatives == 0 {
        0.0
    } else {
        false_pos as f64 / negatives as f64
    };
    (tpr, fpr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation (divisor `n - 1`); 0 for a single sample.
    pub sd: f64,
    /// `sd / sqrt(n)`.
    pub se: f64,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(SpcaError::config("cannot summarize an empty list"));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(MetricSummary {
            mean,
            sd,
            se: sd / (n as f64).sqrt(),
        })
    }
}

impl fmt::Display for MetricSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}\u{b1}{:.4}", self.mean, self.sd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    /// Set when `count == 1`, so the reported spread is meaningless.
    pub single_sample: bool,
    pub frob_error: MetricSummary,
    pub tpr: MetricSummary,
    pub fpr: MetricSummary,
    pub rank: MetricSummary,
}

pub fn aggregate(records: &[MetricsRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(SpcaError::config("cannot aggregate an empty record list"));
    }
    let col = |f: fn(&MetricsRecord) -> f64| -> Result<MetricSummary> {
        MetricSummary::of(&records.iter().map(f).collect::<Vec<_>>())
    };
    Ok(Summary {
        count: records.len(),
        single_sample: records.len() == 1,
        frob_error: col(|r| r.frob_error)?,
        tpr: col(|r| r.tpr)?,
        fpr: col(|r| r.fpr)?,
        rank: col(|r| r.rank as f64)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(e: f64) -> MetricsRecord {
        MetricsRecord {
            seed: 0,
            frob_error: e,
            tpr: 1.0,
            fpr: 0.0,
            rank: 1,
        }
    }

    #[test]
    fn frobenius_examples() {
        let a = SymmetricMatrix::from_diagonal(&[1.0, 0.0]);
        let b = SymmetricMatrix::from_diagonal(&[0.0, 1.0]);
        assert_eq!(frobenius_error(&a, &a).unwrap(), 0.0);
        assert!((frobenius_error(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(frobenius_error(&a, &SymmetricMatrix::zeros(3)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut rand =
            || SymmetricMatrix::symmetrized(DMatrix::from_fn(4, 4, |_, _| rng.random::<f64>()));
        let (x, y, z) = (rand(), rand(), rand());
        let direct: f64 = x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let d = |a: &SymmetricMatrix, b: &SymmetricMatrix| frobenius_error(a, b).unwrap();
        assert!((d(&x, &y) - direct).abs() < 1e-12);
        assert!((d(&x, &y) - d(&y, &x)).abs() < 1e-10);
        assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-10);
    }

    #[test]
    fn support_examples() {
        assert_eq!(support_metrics(&[1, 2, 3], &[1, 2], 4), (1.0, 0.5));
        assert_eq!(support_metrics(&[0, 4], &[0, 4], 9), (1.0, 0.0));
        assert_eq!(support_metrics(&[], &[2], 5), (0.0, 0.0));
        assert_eq!(support_metrics(&[1], &[], 4), (1.0, 0.25));
        assert_eq!(support_metrics(&[0, 1], &[0, 1], 2), (1.0, 0.0));
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate(&[rec(0.3)]).unwrap();
        assert!(one.single_sample);
        assert_eq!(one.frob_error.sd, 0.0);

        let two = aggregate(&[rec(0.02), rec(0.04)]).unwrap();
        assert!((two.frob_error.mean - 0.03).abs() < 1e-15);
        assert!((two.frob_error.sd - 0.0002_f64.sqrt()).abs() < 1e-12);
        assert_eq!(two.frob_error.to_string(), "0.0300\u{b1}0.0141");

        let same = aggregate(&vec![rec(0.1); 20]).unwrap();
        assert!(same.frob_error.sd.abs() < 1e-15);
        assert!(aggregate(&[]).is_err());
    }
}
