//! Sparse principal subspace estimation over the Fantope.
//!
//! The estimators solve
//!
//! ```text
//! max  <S, P> - sum_ij p_lambda(|P_ij|) - tau/2 ||P||_F^2   over   0 <= P <= I, tr P = k
//! ```
//!
//! with MCP or SCAD penalties by ADMM. See [`estimators`] for the entry points
//! and [`bench`] for the simulation harness.

pub mod bench;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod fantope;
pub mod io;
pub mod linalg;
pub mod penalty;
pub mod solver;
pub mod synthdata;
mod tridiag;
pub mod tuning;

pub use error::{Result, SpcaError};
pub use estimators::{
    EstimateFlag, EstimateResult, EstimatorRegistry, FitProblem, SubspaceEstimator,
};
pub use fantope::FantopeSpec;
pub use linalg::SymmetricMatrix;
pub use penalty::{PenaltyConfig, PenaltyFamily};
pub use solver::SolverConfig;
