//! Dense QP engine: interior-point solve, batched parallel solves, and
//! reverse-mode differentiation of the solution with respect to demand.

mod active_set;
mod banded;
mod batch;
mod diff;
mod ipm;
mod kkt;
mod sparse;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{bench, random_battery_instances, solve_batch, BenchRow, QpEngine};
pub use diff::{classify_constraints, vjp_demand, ConstraintClass};
pub use ipm::solve;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Bound on every scaled KKT residual.
    pub tol: f64,
    pub max_iter: usize,
    pub threads: usize,
    /// Slack/multiplier threshold separating active from inactive rows when
    /// differentiating.
    pub degenerate_margin: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            threads: 1,
            degenerate_margin: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), QpError> {
        if !(self.tol > 0.0) || self.max_iter == 0 || self.threads == 0 || !(self.degenerate_margin > 0.0) {
            return Err(QpError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    MaxIter,
    Infeasible,
}

/// Scaled KKT residuals of a primal-dual point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// `|Ax - b|_inf / (1 + |b|_inf)`
    pub primal_eq: f64,
    /// `|max(Gx - h, 0)|_inf / (1 + |h|_inf)`
    pub primal_ineq: f64,
    /// `|2Qx + q + A'nu + G'lambda|_inf / (1 + |q|_inf)`
    pub dual: f64,
    /// `|lambda . (h - Gx)|_inf / (1 + |obj|)`
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal_eq
            .max(self.primal_ineq)
            .max(self.dual)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Inequality multipliers, nonnegative.
    pub lambda: DVector<f64>,
    /// Equality multipliers.
    pub nu: DVector<f64>,
    pub status: Status,
    pub residuals: KktResiduals,
    /// Largest of the four scaled residuals.
    pub kkt_residual: f64,
    /// Canonical objective `x'Qx + q'x` (without the dropped constant).
    pub objective: f64,
    pub iterations: usize,
    /// Whether the final point came from the active-set polish.
    pub polished: bool,
    /// Set for `Infeasible` and `MaxIter` outcomes.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Q is not positive semidefinite: diagonal entry {index} is {value}")]
    NotPsd { index: usize, value: f64 },
    #[error("non-finite problem data in {0}")]
    NonFinite(&'static str),
    #[error("invalid solver config: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("solution status {0:?} cannot be differentiated")]
    NotOptimal(Status),
    #[error("degenerate active set at inequality row {index} (slack {slack:e}, multiplier {multiplier:e})")]
    DegenerateActiveSet {
        index: usize,
        slack: f64,
        multiplier: f64,
    },
    #[error("reduced KKT system is singular")]
    SingularKkt,
    #[error("worker pool: {0}")]
    Pool(String),
}
