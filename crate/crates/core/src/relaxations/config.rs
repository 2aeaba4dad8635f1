use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compression::Compressor;
use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Exact,
    CrashM2,
    CrashVar,
    Omission,
    AsyncMp,
    SharedMem,
    CompressEf,
    ElasticNorm,
    ElasticVar,
    Adversarial,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 10] = [
        SchemeKind::Exact,
        SchemeKind::CrashM2,
        SchemeKind::CrashVar,
        SchemeKind::Omission,
        SchemeKind::AsyncMp,
        SchemeKind::SharedMem,
        SchemeKind::CompressEf,
        SchemeKind::ElasticNorm,
        SchemeKind::ElasticVar,
        SchemeKind::Adversarial,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Exact => "exact",
            SchemeKind::CrashM2 => "crash_m2",
            SchemeKind::CrashVar => "crash_var",
            SchemeKind::Omission => "omission",
            SchemeKind::AsyncMp => "async_mp",
            SchemeKind::SharedMem => "shared_mem",
            SchemeKind::CompressEf => "compress_ef",
            SchemeKind::ElasticNorm => "elastic_norm",
            SchemeKind::ElasticVar => "elastic_var",
            SchemeKind::Adversarial => "adversarial",
        }
    }

    pub fn is_crash(&self) -> bool {
        matches!(self, SchemeKind::CrashM2 | SchemeKind::CrashVar)
    }

    /// Schemes that only make sense with one gradient applied per iteration.
    pub fn single_step_only(&self) -> bool {
        matches!(self, SchemeKind::SharedMem | SchemeKind::Adversarial)
    }

    /// Schemes that need a per-node broadcast round.
    pub fn parallel_only(&self) -> bool {
        !matches!(
            self,
            SchemeKind::Exact | SchemeKind::SharedMem | SchemeKind::Adversarial
        )
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| config_err(format!("unknown scheme `{s}`")))
    }
}

/// One scheduling decision. Every random choice a scheme makes from the
/// schedule stream is logged as one of these, and a list of them can be fed
/// back as an explicit plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleEvent {
    /// `node` crashes while broadcasting its iteration-`t` gradient, which
    /// reaches only `targets`.
    Crash {
        t: usize,
        node: usize,
        targets: Vec<usize>,
    },
    /// The message from `node` to `target` generated at `t` is held back
    /// `delay` iterations; `None` drops it for good.
    Delay {
        t: usize,
        node: usize,
        target: usize,
        delay: Option<usize>,
    },
    /// `node`'s iteration-`t` gradient misses `target`'s deadline.
    Late { t: usize, node: usize, target: usize },
    /// Order in which the foreign gradients of iteration `t` reach `target`.
    Arrival {
        t: usize,
        target: usize,
        order: Vec<usize>,
    },
    /// Coordinate `coord` of `node`'s view at `t` is `delay` iterations old.
    Stale {
        t: usize,
        node: usize,
        coord: usize,
        delay: usize,
    },
    /// `node` moved on at `t` after receiving `received` foreign gradients.
    Proceed {
        t: usize,
        node: usize,
        received: usize,
    },
}

impl ScheduleEvent {
    pub fn t(&self) -> usize {
        match self {
            ScheduleEvent::Crash { t, .. }
            | ScheduleEvent::Delay { t, .. }
            | ScheduleEvent::Late { t, .. }
            | ScheduleEvent::Arrival { t, .. }
            | ScheduleEvent::Stale { t, .. }
            | ScheduleEvent::Proceed { t, .. } => *t,
        }
    }
}

/// Reads a JSON list of schedule events.
pub fn load_schedule(path: &Path) -> Result<Vec<ScheduleEvent>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn default_compressor() -> Compressor {
    Compressor::Identity
}

fn default_fault_prob() -> f64 {
    0.5
}

fn default_drop_prob() -> f64 {
    0.1
}

fn default_max_delay() -> usize {
    4
}

fn default_beta() -> f64 {
    0.5
}

fn default_late_prob() -> f64 {
    0.2
}

/// Scheme selection plus every scheme parameter. Parameters irrelevant to
/// the selected scheme are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxationConfig {
    pub scheme: SchemeKind,
    /// Crash budget, or the per-receiver omission budget.
    #[serde(default)]
    pub f: usize,
    #[serde(default)]
    pub tau_max: usize,
    #[serde(default = "default_compressor")]
    pub compressor: Compressor,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Elastic-norm nodes wait for every foreign gradient regardless of β.
    #[serde(default)]
    pub full_arrival: bool,
    #[serde(default)]
    pub b_adv: f64,
    /// Elastic-var probability that a sender misses a receiver's deadline.
    #[serde(default = "default_late_prob")]
    pub late_prob: f64,
    /// Omission: probability a message is withheld while budget remains.
    #[serde(default = "default_fault_prob")]
    pub fault_prob: f64,
    /// Omission: probability a withheld message is never delivered.
    #[serde(default = "default_drop_prob")]
    pub drop_prob: f64,
    /// Omission: longest finite hold-back, in iterations.
    #[serde(default = "default_max_delay")]
    pub max_delay: usize,
    /// Explicit schedule replacing the random draws of the scheme.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Vec<ScheduleEvent>>,
}

impl RelaxationConfig {
    pub fn new(scheme: SchemeKind) -> Self {
        Self {
            scheme,
            f: 0,
            tau_max: 0,
            compressor: default_compressor(),
            beta: default_beta(),
            full_arrival: false,
            b_adv: 0.0,
            late_prob: default_late_prob(),
            fault_prob: default_fault_prob(),
            drop_prob: default_drop_prob(),
            max_delay: default_max_delay(),
            plan: None,
        }
    }

    pub fn exact() -> Self {
        Self::new(SchemeKind::Exact)
    }

    pub fn with_f(mut self, f: usize) -> Self {
        self.f = f;
        self
    }

    pub fn with_tau_max(mut self, tau_max: usize) -> Self {
        self.tau_max = tau_max;
        self
    }

    pub fn with_compressor(mut self, q: Compressor) -> Self {
        self.compressor = q;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_full_arrival(mut self, full: bool) -> Self {
        self.full_arrival = full;
        self
    }

    pub fn with_b_adv(mut self, b: f64) -> Self {
        self.b_adv = b;
        self
    }

    pub fn with_late_prob(mut self, prob: f64) -> Self {
        self.late_prob = prob;
        self
    }

    pub fn with_plan(mut self, plan: Vec<ScheduleEvent>) -> Self {
        self.plan = Some(plan);
        self
    }

    /// Checks parameter ranges against the node count and dimension.
    pub fn validate(&self, p: usize, d: usize) -> Result<()> {
        let in_unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(config_err(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        match self.scheme {
            SchemeKind::CrashM2 | SchemeKind::CrashVar if self.f > p / 2 => {
                return Err(config_err(format!(
                    "crash budget f={} exceeds floor(p/2)={}",
                    self.f,
                    p / 2
                )))
            }
            SchemeKind::Omission if self.f > p.saturating_sub(1) => {
                return Err(config_err(format!(
                    "omission budget f={} exceeds the p-1={} foreign senders",
                    self.f,
                    p.saturating_sub(1)
                )))
            }
            SchemeKind::Omission if self.max_delay == 0 => {
                return Err(config_err("omission max_delay must be >= 1"))
            }
            SchemeKind::CompressEf => self.compressor.validate(d)?,
            SchemeKind::Adversarial if !(self.b_adv >= 0.0 && self.b_adv.is_finite()) => {
                return Err(config_err(format!("b_adv must be finite and >= 0, got {}", self.b_adv)))
            }
            _ => {}
        }
        in_unit("beta", self.beta)?;
        in_unit("late_prob", self.late_prob)?;
        in_unit("fault_prob", self.fault_prob)?;
        in_unit("drop_prob", self.drop_prob)?;
        if let Some(plan) = &self.plan {
            validate_plan(plan, p, d)?;
        }
        Ok(())
    }

    /// True when the parameters make the scheme behave exactly like `exact`.
    pub fn is_degenerate(&self, d: usize) -> bool {
        match self.scheme {
            SchemeKind::Exact => true,
            SchemeKind::CrashM2 | SchemeKind::CrashVar | SchemeKind::Omission => self.f == 0,
            SchemeKind::AsyncMp | SchemeKind::SharedMem => self.tau_max == 0,
            SchemeKind::CompressEf => self.compressor.is_lossless(d),
            SchemeKind::ElasticNorm => self.full_arrival,
            SchemeKind::ElasticVar => self.late_prob == 0.0 && self.plan.is_none(),
            SchemeKind::Adversarial => self.b_adv == 0.0,
        }
    }
}

fn validate_plan(plan: &[ScheduleEvent], p: usize, d: usize) -> Result<()> {
    let node_ok = |n: usize| {
        if n < p {
            Ok(())
        } else {
            Err(config_err(format!("schedule names node {n} but p={p}")))
        }
    };
    for ev in plan {
        match ev {
            ScheduleEvent::Crash { node, targets, .. } => {
                node_ok(*node)?;
                for &r in targets {
                    node_ok(r)?;
                }
            }
            ScheduleEvent::Delay { node, target, .. } | ScheduleEvent::Late { node, target, .. } => {
                node_ok(*node)?;
                node_ok(*target)?;
                if node == target {
                    return Err(config_err("self-delivery cannot be delayed"));
                }
            }
            ScheduleEvent::Arrival { target, order, .. } => {
                node_ok(*target)?;
                for &s in order {
                    node_ok(s)?;
                }
            }
            ScheduleEvent::Stale { node, coord, .. } => {
                node_ok(*node)?;
                if *coord >= d {
                    return Err(config_err(format!("schedule names coordinate {coord} but d={d}")));
                }
            }
            ScheduleEvent::Proceed { .. } => {
                return Err(config_err("proceed events are outputs and cannot be planned"))
            }
        }
    }
    Ok(())
}
