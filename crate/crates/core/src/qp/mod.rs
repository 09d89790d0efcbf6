//! Convex QP subproblems for a fixed asset support.
//!
//! Once the support `y` is fixed the robust model becomes a concave
//! quadratic maximization over `z = [x, ν, λ]` with affine constraints. It is
//! solved exactly by [`solve_qp`] (active set, KKT-certified) or
//! approximately by [`penalty_solve`] (quadratic penalty plus log barrier).

mod active_set;
mod penalty;
mod subproblem;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use active_set::{ActiveSetOptions, QpSolution, QuadraticProgram};
pub use penalty::{
    penalty_gradient, penalty_solve, penalty_solve_from, penalty_value, PenaltyOptions,
    PenaltyOutcome, PenaltyState,
};
pub use subproblem::{
    assemble_for_support, assemble_subproblem, kkt_residual, solve_qp, SubproblemData,
    SubproblemSolution,
};

#[derive(Debug, Error)]
pub enum QpError {
    #[error("support has {found} assets, expected {expected}")]
    CardinalityMismatch { expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("constraints are infeasible (phase-one violation {0:e})")]
    Infeasible(f64),
    #[error("start point violates the constraints by {0:e}")]
    InfeasibleStart(f64),
    #[error("objective is unbounded on the feasible set")]
    Unbounded,
    #[error("no convergence within {0} iterations")]
    MaxIterations(usize),
    #[error("inequality multiplier {0} is negative")]
    NegativeMultiplier(usize),
    #[error("slack {0} is not strictly positive")]
    BarrierDomain(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("KKT residual {0:e} exceeds tolerance {1:e}")]
    NotCertified(f64, f64),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Max-norm residuals of the three KKT blocks plus the multipliers used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_infeasibility: f64,
    pub complementarity: f64,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity
            .max(self.primal_infeasibility)
            .max(self.complementarity)
    }
}
