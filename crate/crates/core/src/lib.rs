//! Offline goal-conditioned RL through the regularized occupancy dual.
//!
//! `oracle` solves the population problem exactly, `vlearn` and `plearn` are the
//! two learning stages, and `harness` runs sweeps over synthetic MDPs.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod data;
pub mod divergence;
pub mod error;
pub mod harness;
pub mod mdp;
mod objective;
pub mod optim;
pub mod oracle;
pub mod plearn;
pub mod vlearn;

pub use error::{Error, Result};
