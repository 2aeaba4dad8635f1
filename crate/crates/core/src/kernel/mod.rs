//! The elastic-consistency state machine.
//!
//! [`SimState`] holds the auxiliary global parameter `x_t` and every worker's
//! view `v_t^i`. Each [`SimState::step`] asks the configured scheme how
//! gradients travel, moves the views accordingly and advances `x_t` by the
//! single-step or parallel-step rule.
//!
//! All vector arithmetic follows one canonical order so that degenerate
//! schemes reproduce the exact scheme bit for bit: a contribution is
//! `α·g` computed elementwise, a view or `x` update sums its terms in order
//! from zero and then subtracts `sum / p`.

mod config;
mod records;
mod state;

pub use config::{LearningRate, MetricsOptions, Mode, RunConfig, Seeds};
pub use records::{empirical_b, EmpiricalB, GapAccumulator, IterationRecord};
pub use state::{
    init_run, GradId, Pending, SimState, StepOutcome, Substitution, Term, TermRecord, WorkerState,
};
