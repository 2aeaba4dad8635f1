use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::objectives::Objective;
use crate::relaxations::RelaxationConfig;
use crate::theory::{lr_schedule, Theorem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One gradient, from one designated worker, per iteration.
    SingleStep,
    /// Every participating worker's gradient, averaged over `p`, per iteration.
    ParallelStep,
}

/// Either a fixed step size or the constant prescribed by a theorem for the
/// run's horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LearningRate {
    Constant(f64),
    Schedule(Theorem),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub sched: u64,
    /// Stream index within both seeds, one per trial.
    #[serde(default)]
    pub stream: u64,
}

impl Seeds {
    pub fn new(data: u64, sched: u64) -> Self {
        Self {
            data,
            sched,
            stream: 0,
        }
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsOptions {
    /// Keep the schedule-event log.
    #[serde(default = "yes")]
    pub log_events: bool,
    /// Keep the sequence of drawn sample indices.
    #[serde(default = "yes")]
    pub log_samples: bool,
    /// Keep every view-update term; only useful for small symbolic checks.
    #[serde(default)]
    pub log_terms: bool,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            log_events: true,
            log_samples: true,
            log_terms: false,
        }
    }
}

impl MetricsOptions {
    /// Records only, for large Monte-Carlo batches.
    pub fn lean() -> Self {
        Self {
            log_events: false,
            log_samples: false,
            log_terms: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub p: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub alpha: LearningRate,
    pub mode: Mode,
    pub scheme: RelaxationConfig,
    pub seeds: Seeds,
    #[serde(default)]
    pub metrics: MetricsOptions,
}

impl RunConfig {
    pub fn new(
        p: usize,
        horizon: usize,
        alpha: LearningRate,
        mode: Mode,
        scheme: RelaxationConfig,
        seeds: Seeds,
    ) -> Self {
        Self {
            p,
            horizon,
            alpha,
            mode,
            scheme,
            seeds,
            metrics: MetricsOptions::default(),
        }
    }

    pub fn with_metrics(mut self, metrics: MetricsOptions) -> Self {
        self.metrics = metrics;
        self
    }

    pub fn with_seeds(mut self, seeds: Seeds) -> Self {
        self.seeds = seeds;
        self
    }

    /// Resolves the step size against the objective's constants. Schedules
    /// for the parallel theorems use `p`; single-step ones use 1.
    pub fn resolve_alpha(&self, objective: &Objective) -> Result<f64> {
        let alpha = match self.alpha {
            LearningRate::Constant(a) => a,
            LearningRate::Schedule(th) => {
                let p = if th.is_parallel() { self.p } else { 1 };
                lr_schedule(th, self.horizon, p, objective.constants())
                    .map_err(|e| config_err(e.to_string()))?
            }
        };
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(config_err(format!("alpha must be positive and finite, got {alpha}")));
        }
        Ok(alpha)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.p == 0 {
            return Err(config_err("p must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(config_err("T must be >= 1"));
        }
        let kind = self.scheme.scheme;
        match self.mode {
            Mode::SingleStep if kind.parallel_only() => {
                return Err(config_err(format!("scheme {kind} requires parallel_step mode")))
            }
            Mode::ParallelStep if kind.single_step_only() => {
                return Err(config_err(format!("scheme {kind} requires single_step mode")))
            }
            _ => {}
        }
        self.scheme.validate(self.p, d)
    }
}
