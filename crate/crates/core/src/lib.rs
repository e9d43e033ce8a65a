//! Privatizing household demand series against an attribute classifier while
//! keeping them useful for a battery-storage cost controller.
//!
//! The pieces:
//!
//! * [`data`]: demand records, CSV ingestion, a synthetic generator, splits,
//!   mini-batches and time-of-use prices.
//! * [`battery`]: the battery control problem as a canonical QP, and the
//!   utility (electricity cost) loss evaluated against raw demand.
//! * [`qp`]: a primal-dual interior-point solver with an exact active-set finish, batched solves on a
//!   worker pool, and vector-Jacobian products of the solution with respect
//!   to demand.
//! * [`adversary`]: the attribute classifier (a small ELU network).
//! * [`filter`]: the linear noise filter `d + Γε + Vy`.
//! * [`trainer`]: alternating minimax training, evaluation and a convergence
//!   probe on a convex surrogate.
//! * [`checkpoint`]: decimal-text checkpoints with a JSON shape header.

pub mod adversary;
pub mod battery;
pub mod checkpoint;
pub mod data;
pub mod filter;
pub mod numfmt;
pub mod qp;
pub mod trainer;

mod error;

pub use error::{Error, Result};
