use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, Result};
use crate::kernel::{LearningRate, Mode, RunConfig, Seeds};
use crate::objectives::{make_logistic, Objective, ParamVector, QuadraticSpec, Spectrum};
use crate::relaxations::RelaxationConfig;

/// How to build the objective of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    Quadratic(QuadraticSpec),
    Logistic {
        d: usize,
        m: usize,
        seed: u64,
        l2: f64,
    },
    Linear {
        direction: Vec<f64>,
    },
}

impl ObjectiveSpec {
    pub fn build(&self) -> Result<Objective> {
        match self {
            ObjectiveSpec::Quadratic(q) => q.build(),
            ObjectiveSpec::Logistic { d, m, seed, l2 } => make_logistic(*d, *m, *seed, *l2),
            ObjectiveSpec::Linear { direction } => {
                Objective::linear(ParamVector::from_vec(direction.clone()))
            }
        }
    }

    /// `½‖x − offset·1‖²` in `d` dimensions with one sample.
    pub fn half_square(d: usize, offset: f64) -> Self {
        ObjectiveSpec::Quadratic(
            QuadraticSpec::new(d, 1, Spectrum { c: 1.0, l: 1.0 }, 0.0, 0).offset(offset),
        )
    }
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        ObjectiveSpec::Quadratic(
            QuadraticSpec::new(10, 64, Spectrum { c: 1.0, l: 2.0 }, 1.0, 0).offset(1.0),
        )
    }
}

fn default_tol() -> f64 {
    0.05
}

fn default_se_mult() -> f64 {
    2.0
}

/// Slack granted to a Monte-Carlo bound check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    /// Relative slack on the theoretical constant.
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Multiple of the estimator's standard error added on top.
    #[serde(default = "default_se_mult")]
    pub se_mult: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            se_mult: default_se_mult(),
        }
    }
}

/// One scheme to check in `verify-bounds`; unset fields fall back to the
/// experiment's base run and objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyCase {
    #[serde(default)]
    pub label: Option<String>,
    pub scheme: RelaxationConfig,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub p: Option<usize>,
    #[serde(default, rename = "T")]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub alpha: Option<LearningRate>,
    #[serde(default)]
    pub objective: Option<ObjectiveSpec>,
}

impl VerifyCase {
    pub fn new(scheme: RelaxationConfig) -> Self {
        Self {
            label: None,
            scheme,
            mode: None,
            p: None,
            horizon: None,
            alpha: None,
            objective: None,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| {
            let s = &self.scheme;
            match s.scheme {
                crate::relaxations::SchemeKind::CrashM2
                | crate::relaxations::SchemeKind::CrashVar
                | crate::relaxations::SchemeKind::Omission => format!("{} f={}", s.scheme, s.f),
                crate::relaxations::SchemeKind::AsyncMp
                | crate::relaxations::SchemeKind::SharedMem => {
                    format!("{} tau_max={}", s.scheme, s.tau_max)
                }
                crate::relaxations::SchemeKind::CompressEf => {
                    format!("{} {}", s.scheme, s.compressor)
                }
                crate::relaxations::SchemeKind::Adversarial => {
                    format!("{} B_adv={}", s.scheme, s.b_adv)
                }
                crate::relaxations::SchemeKind::ElasticNorm => {
                    format!("{} beta={}", s.scheme, s.beta)
                }
                _ => s.scheme.to_string(),
            }
        })
    }

    /// The run configuration of this case on top of `base`.
    pub fn run_config(&self, base: &RunConfig) -> RunConfig {
        let mut run = base.clone();
        run.scheme = self.scheme.clone();
        if let Some(m) = self.mode {
            run.mode = m;
        }
        if let Some(p) = self.p {
            run.p = p;
        }
        if let Some(t) = self.horizon {
            run.horizon = t;
        }
        if let Some(a) = self.alpha {
            run.alpha = a;
        }
        run
    }
}

fn default_b_list() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0]
}

fn default_eps() -> f64 {
    1e-3
}

fn default_alpha_min() -> f64 {
    1e-4
}

fn default_alpha_max() -> f64 {
    0.5
}

fn default_points_per_decade() -> usize {
    40
}

fn default_cap() -> usize {
    1_000_000
}

fn default_x_star() -> f64 {
    1.0
}

/// Adversarial slowdown experiment on `½(x − x*)²` from `x₀ = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundConfig {
    #[serde(default = "default_b_list")]
    pub b_list: Vec<f64>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_alpha_min")]
    pub alpha_min: f64,
    #[serde(default = "default_alpha_max")]
    pub alpha_max: f64,
    #[serde(default = "default_points_per_decade")]
    pub points_per_decade: usize,
    /// Iteration cap; runs that never reach `eps` report `>cap`.
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default = "default_x_star")]
    pub x_star: f64,
}

impl Default for LowerBoundConfig {
    fn default() -> Self {
        Self {
            b_list: default_b_list(),
            eps: default_eps(),
            alpha_min: default_alpha_min(),
            alpha_max: default_alpha_max(),
            points_per_decade: default_points_per_decade(),
            cap: default_cap(),
            x_star: default_x_star(),
        }
    }
}

impl LowerBoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b_list.is_empty() {
            return Err(config_err("lower-bound needs at least one B value"));
        }
        if self.b_list.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(config_err("lower-bound B values must be finite and >= 0"));
        }
        if !(self.eps > 0.0) {
            return Err(config_err("eps must be positive"));
        }
        if !(self.alpha_min > 0.0 && self.alpha_min <= self.alpha_max && self.alpha_max <= 1.0) {
            return Err(config_err("alpha grid needs 0 < alpha_min <= alpha_max <= 1"));
        }
        if self.points_per_decade == 0 || self.cap == 0 {
            return Err(config_err("points_per_decade and cap must be >= 1"));
        }
        Ok(())
    }

    /// Log-spaced step sizes, largest first.
    pub fn alpha_grid(&self) -> Vec<f64> {
        let lo = self.alpha_min.log10();
        let hi = self.alpha_max.log10();
        let n = ((hi - lo) * self.points_per_decade as f64).round() as usize;
        let mut grid: Vec<f64> = (0..=n)
            .map(|k| {
                if n == 0 {
                    self.alpha_max
                } else {
                    10f64.powf(hi - (hi - lo) * k as f64 / n as f64)
                }
            })
            .collect();
        grid.dedup();
        grid
    }
}

/// Everything one CLI invocation needs. Keys mirror the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub objective: ObjectiveSpec,
    #[serde(default = "default_run")]
    pub run: RunConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Sweep axes: name to list of values.
    #[serde(default)]
    pub sweep: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub verify: Vec<VerifyCase>,
    #[serde(default)]
    pub lower_bound: LowerBoundConfig,
    #[serde(default)]
    pub tolerance: Tolerance,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_trials() -> usize {
    1
}

fn default_run() -> RunConfig {
    RunConfig::new(
        4,
        1000,
        LearningRate::Constant(0.01),
        Mode::ParallelStep,
        RelaxationConfig::exact(),
        Seeds::new(0, 0),
    )
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveSpec::default(),
            run: default_run(),
            trials: default_trials(),
            sweep: BTreeMap::new(),
            verify: Vec::new(),
            lower_bound: LowerBoundConfig::default(),
            tolerance: Tolerance::default(),
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(config_err("trials must be >= 1"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of the configuration.
    pub fn fingerprint(&self) -> Result<String> {
        fingerprint_of(self)
    }
}

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn fingerprint_of<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Fingerprint of one trial: objective plus fully seeded run configuration.
pub fn run_fingerprint(objective: &ObjectiveSpec, run: &RunConfig) -> Result<String> {
    fingerprint_of(&(objective, run))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relaxations::SchemeKind;

    #[test]
    fn empty_json_gives_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig::default();
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        assert_eq!(a.fingerprint().unwrap().len(), 64);
        let mut c = ExperimentConfig::default();
        c.run.seeds.data = 1;
        assert_ne!(a.fingerprint().unwrap(), c.fingerprint().unwrap());
    }

    #[test]
    fn verify_case_overrides_base() {
        let case: VerifyCase = serde_json::from_str(
            r#"{"scheme":{"scheme":"shared_mem","tau_max":4},"mode":"single_step","T":576,"alpha":"T3"}"#,
        )
        .unwrap();
        let run = case.run_config(&default_run());
        assert_eq!(run.mode, Mode::SingleStep);
        assert_eq!(run.horizon, 576);
        assert_eq!(run.scheme.scheme, SchemeKind::SharedMem);
        assert_eq!(case.label(), "shared_mem tau_max=4");
    }

    #[test]
    fn alpha_grid_is_descending_log_spaced() {
        let lb = LowerBoundConfig {
            alpha_min: 1e-3,
            alpha_max: 1e-1,
            points_per_decade: 2,
            ..LowerBoundConfig::default()
        };
        let g = lb.alpha_grid();
        assert_eq!(g.len(), 5);
        assert!((g[0] - 0.1).abs() < 1e-15);
        assert!((g[4] - 1e-3).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn objective_specs_build() {
        let q = ObjectiveSpec::half_square(1, 1.0).build().unwrap();
        assert_eq!(q.optimum().unwrap().as_slice(), &[1.0]);
        let l = ObjectiveSpec::Logistic { d: 2, m: 4, seed: 1, l2: 0.1 }.build().unwrap();
        assert_eq!(l.dim(), 2);
        let spec: ObjectiveSpec = serde_json::from_str(r#"{"kind":"linear","direction":[1,0]}"#).unwrap();
        assert_eq!(spec.build().unwrap().dim(), 2);
        assert!(ObjectiveSpec::Linear { direction: vec![] }.build().is_err());
    }
}
