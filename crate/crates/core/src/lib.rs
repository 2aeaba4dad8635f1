//! Deterministic simulation lab for distributed SGD under elastic consistency.
//!
//! * [`objectives`]: finite-sum test functions with exact gradient oracles.
//! * [`kernel`]: the global-parameter/local-view state machine.
//! * [`relaxations`]: the distribution schemes.
//! * [`compression`]: TopK and one-bit operators with error feedback.
//! * [`theory`]: closed-form consistency constants and convergence bounds.
//! * [`harness`]: configs, multi-trial orchestration and the CLI commands.

pub mod compression;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod objectives;
pub mod relaxations;
pub mod theory;

pub use error::{Error, Result};

#[cfg(test)]
mod testkit;
