//! Decomposable entrywise penalties `P(X) = sum_ij p(X_ij)`.
//!
//! Every family is written as an l1 part plus a concave remainder,
//! `p(t) = lambda |t| + q(t)`, with `q(0) = q'(0) = 0`, `|q'| <= lambda`,
//! `q'` Lipschitz with constant `zeta_minus`, and `p'(t) = 0` for `|t| >= nu`.
//!
//! SCAD uses the usual three-piece form with concavity `b > 2`, giving
//! `nu = b lambda` and `zeta_minus = 1 / (b - 1)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpcaError};
use crate::linalg::SymmetricMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyFamily {
    Mcp,
    Scad,
    L1,
}

impl PenaltyFamily {
    pub const ALL: [PenaltyFamily; 3] =
        [PenaltyFamily::Mcp, PenaltyFamily::Scad, PenaltyFamily::L1];

    pub fn name(self) -> &'static str {
        match self {
            PenaltyFamily::Mcp => "mcp",
            PenaltyFamily::Scad => "scad",
            PenaltyFamily::L1 => "l1",
        }
    }
}

impl fmt::Display for PenaltyFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PenaltyFamily {
    type Err = SpcaError;

    fn from_str(s: &str) -> Result<Self> {
        PenaltyFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SpcaError::UnknownStrategy {
                kind: "penalty family",
                name: s.to_string(),
                available: "mcp, scad, l1".into(),
            })
    }
}

fn default_b() -> f64 {
    3.0
}

/// Serializable penalty description: `{"family": "mcp", "lambda": 0.5, "b": 3.0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPenaltyConfig")]
pub struct PenaltyConfig {
    pub family: PenaltyFamily,
    pub lambda: f64,
    #[serde(default = "default_b")]
    pub b: f64,
}

#[derive(Deserialize)]
struct RawPenaltyConfig {
    family: PenaltyFamily,
    lambda: f64,
    #[serde(default = "default_b")]
    b: f64,
}

impl TryFrom<RawPenaltyConfig> for PenaltyConfig {
    type Error = SpcaError;

    fn try_from(raw: RawPenaltyConfig) -> Result<Self> {
        PenaltyConfig::new(raw.family, raw.lambda, raw.b)
    }
}

impl PenaltyConfig {
    pub fn new(family: PenaltyFamily, lambda: f64, b: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(SpcaError::config(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        match family {
            PenaltyFamily::Mcp if !(b > 1.0) => {
                return Err(SpcaError::config(format!(
                    "MCP requires b > 1, got b = {b}"
                )))
            }
            PenaltyFamily::Scad if !(b > 2.0) => {
                return Err(SpcaError::config(format!(
                    "SCAD requires b > 2, got b = {b}"
                )))
            }
            _ => {}
        }
        Ok(PenaltyConfig { family, lambda, b })
    }

    pub fn mcp(lambda: f64, b: f64) -> Result<Self> {
        Self::new(PenaltyFamily::Mcp, lambda, b)
    }

    pub fn scad(lambda: f64, b: f64) -> Result<Self> {
        Self::new(PenaltyFamily::Scad, lambda, b)
    }

    pub fn l1(lambda: f64) -> Self {
        PenaltyConfig {
            family: PenaltyFamily::L1,
            lambda,
            b: default_b(),
        }
    }

    pub fn with_lambda(self, lambda: f64) -> Result<Self> {
        Self::new(self.family, lambda, self.b)
    }

    pub fn with_family(self, family: PenaltyFamily) -> Result<Self> {
        Self::new(family, self.lambda, self.b)
    }

    pub fn build(&self) -> Box<dyn Penalty> {
        match self.family {
            PenaltyFamily::Mcp => Box::new(Mcp {
                lambda: self.lambda,
                b: self.b,
            }),
            PenaltyFamily::Scad => Box::new(Scad {
                lambda: self.lambda,
                b: self.b,
            }),
            PenaltyFamily::L1 => Box::new(L1 {
                lambda: self.lambda,
            }),
        }
    }

    /// Threshold beyond which the penalty is flat (`+inf` for l1).
    pub fn nu(&self) -> f64 {
        self.build().nu()
    }

    pub fn zeta_minus(&self) -> f64 {
        self.build().zeta_minus()
    }

    /// The scalar prox objective `rho/2 (x - a)^2 + p(x)` is strictly convex
    /// only when `rho > zeta_minus`.
    pub fn check_prox_rho(&self, rho: f64) -> Result<()> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(SpcaError::config(format!(
                "rho must be positive, got {rho}"
            )));
        }
        let ok = match self.family {
            PenaltyFamily::Mcp => rho * self.b > 1.0,
            PenaltyFamily::Scad => rho * (self.b - 1.0) > 1.0,
            PenaltyFamily::L1 => true,
        };
        if ok {
            Ok(())
        } else {
            let cond = match self.family {
                PenaltyFamily::Mcp => "rho * b > 1",
                _ => "rho * (b - 1) > 1",
            };
            Err(SpcaError::config(format!(
                "{} prox needs {cond} for a unique minimizer (rho = {rho}, b = {})",
                self.family, self.b
            )))
        }
    }
}

/// A scalar penalty `p(t)` split as `lambda |t| + q(t)`.
pub trait Penalty: Send + Sync + fmt::Debug {
    fn family(&self) -> PenaltyFamily;
    fn lambda(&self) -> f64;
    fn value(&self, t: f64) -> f64;
    fn concave_value(&self, t: f64) -> f64;
    fn concave_derivative(&self, t: f64) -> f64;
    fn nu(&self) -> f64;
    fn zeta_minus(&self) -> f64;

    /// `argmin_x rho/2 (x - a)^2 + p(x)`; caller has checked `rho > zeta_minus`.
    fn prox_unchecked(&self, a: f64, rho: f64) -> f64;

    /// `p'(t) = lambda sign(t) + q'(t)`, taking `sign(0) = 0`.
    fn derivative(&self, t: f64) -> f64 {
        let s = if t > 0.0 {
            1.0
        } else if t < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.lambda() * s + self.concave_derivative(t)
    }

    fn matrix_value(&self, m: &SymmetricMatrix) -> f64 {
        m.iter().map(|&t| self.value(t)).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Mcp {
    pub lambda: f64,
    pub b: f64,
}

impl Penalty for Mcp {
    fn family(&self) -> PenaltyFamily {
        PenaltyFamily::Mcp
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn value(&self, t: f64) -> f64 {
        let a = t.abs();
        if a <= self.b * self.lambda {
            self.lambda * a - t * t / (2.0 * self.b)
        } else {
            self.b * self.lambda * self.lambda / 2.0
        }
    }

    fn concave_value(&self, t: f64) -> f64 {
        let a = t.abs();
        if a <= self.b * self.lambda {
            -t * t / (2.0 * self.b)
        } else {
            self.b * self.lambda * self.lambda / 2.0 - self.lambda * a
        }
    }

    fn concave_derivative(&self, t: f64) -> f64 {
        if t.abs() <= self.b * self.lambda {
            -t / self.b
        } else {
            -self.lambda * t.signum()
        }
    }

    fn nu(&self) -> f64 {
        self.b * self.lambda
    }

    fn zeta_minus(&self) -> f64 {
        1.0 / self.b
    }

    // Firm thresholding.
    fn prox_unchecked(&self, a: f64, rho: f64) -> f64 {
        let m = a.abs();
        let thresh = self.lambda / rho;
        if m <= thresh {
            0.0
        } else if m <= self.b * self.lambda {
            a.signum() * (m - thresh) / (1.0 - 1.0 / (rho * self.b))
        } else {
            a
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Scad {
    pub lambda: f64,
    pub b: f64,
}

impl Penalty for Scad {
    fn family(&self) -> PenaltyFamily {
        PenaltyFamily::Scad
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn value(&self, t: f64) -> f64 {
        let (a, l, b) = (t.abs(), self.lambda, self.b);
        if a <= l {
            l * a
        } else if a <= b * l {
            (2.0 * b * l * a - a * a - l * l) / (2.0 * (b - 1.0))
        } else {
            l * l * (b + 1.0) / 2.0
        }
    }

    fn concave_value(&self, t: f64) -> f64 {
        let (a, l, b) = (t.abs(), self.lambda, self.b);
        if a <= l {
            0.0
        } else if a <= b * l {
            -(a - l) * (a - l) / (2.0 * (b - 1.0))
        } else {
            l * l * (b + 1.0) / 2.0 - l * a
        }
    }

    fn concave_derivative(&self, t: f64) -> f64 {
        let (a, l, b) = (t.abs(), self.lambda, self.b);
        if a <= l {
            0.0
        } else if a <= b * l {
            -t.signum() * (a - l) / (b - 1.0)
        } else {
            -l * t.signum()
        }
    }

    fn nu(&self) -> f64 {
        self.b * self.lambda
    }

    fn zeta_minus(&self) -> f64 {
        1.0 / (self.b - 1.0)
    }

    fn prox_unchecked(&self, a: f64, rho: f64) -> f64 {
        let (m, l, b) = (a.abs(), self.lambda, self.b);
        let thresh = l / rho;
        let out = if m <= thresh {
            0.0
        } else if m <= l + thresh {
            m - thresh
        } else if m <= b * l {
            ((b - 1.0) * rho * m - b * l) / ((b - 1.0) * rho - 1.0)
        } else {
            m
        };
        a.signum() * out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct L1 {
    pub lambda: f64,
}

impl Penalty for L1 {
    fn family(&self) -> PenaltyFamily {
        PenaltyFamily::L1
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn value(&self, t: f64) -> f64 {
        self.lambda * t.abs()
    }

    fn concave_value(&self, _t: f64) -> f64 {
        0.0
    }

    fn concave_derivative(&self, _t: f64) -> f64 {
        0.0
    }

    fn nu(&self) -> f64 {
        f64::INFINITY
    }

    fn zeta_minus(&self) -> f64 {
        0.0
    }

    fn prox_unchecked(&self, a: f64, rho: f64) -> f64 {
        let thresh = self.lambda / rho;
        if a.abs() <= thresh {
            0.0
        } else {
            a - thresh * a.signum()
        }
    }
}

pub fn penalty_value(cfg: &PenaltyConfig, t: f64) -> f64 {
    cfg.build().value(t)
}

pub fn concave_part_value(cfg: &PenaltyConfig, t: f64) -> f64 {
    cfg.build().concave_value(t)
}

pub fn concave_part_derivative(cfg: &PenaltyConfig, t: f64) -> f64 {
    cfg.build().concave_derivative(t)
}

/// Scalar proximal map `argmin_x rho/2 (x - a)^2 + p(x)`.
pub fn prox(cfg: &PenaltyConfig, a: f64, rho: f64) -> Result<f64> {
    cfg.check_prox_rho(rho)?;
    Ok(cfg.build().prox_unchecked(a, rho))
}

/// Entrywise [`prox`] of a symmetric matrix.
pub fn prox_matrix(cfg: &PenaltyConfig, a: &SymmetricMatrix, rho: f64) -> Result<SymmetricMatrix> {
    cfg.check_prox_rho(rho)?;
    let pen = cfg.build();
    Ok(prox_matrix_with(pen.as_ref(), a, rho))
}

pub(crate) fn prox_matrix_with(
    pen: &dyn Penalty,
    a: &SymmetricMatrix,
    rho: f64,
) -> SymmetricMatrix {
    SymmetricMatrix::from_symmetric_unchecked(a.as_matrix().map(|v| pen.prox_unchecked(v, rho)))
}
