//! Fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::path::PathBuf;

use elastic_lab::compression::Compressor;
use elastic_lab::kernel::{IterationRecord, LearningRate, Mode, RunConfig, Seeds, SimState};
use elastic_lab::objectives::{Objective, ParamVector, QuadraticSpec, Spectrum};
use elastic_lab::relaxations::{RelaxationConfig, ScheduleEvent, SchemeKind};

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn noisy_quadratic(d: usize, m: usize, seed: u64) -> Objective {
    QuadraticSpec::new(d, m, Spectrum { c: 0.5, l: 2.0 }, 1.0, seed)
        .offset(1.0)
        .build()
        .unwrap()
}

/// Single-sample quadratic with a known optimum, as the adversarial scheme requires.
pub fn deterministic_quadratic(d: usize) -> Objective {
    QuadraticSpec::new(d, 1, Spectrum { c: 0.5, l: 2.0 }, 0.0, 3)
        .offset(1.0)
        .build()
        .unwrap()
}

pub fn run_config(
    mode: Mode,
    p: usize,
    horizon: usize,
    alpha: f64,
    scheme: RelaxationConfig,
    seeds: Seeds,
) -> RunConfig {
    RunConfig::new(p, horizon, LearningRate::Constant(alpha), mode, scheme, seeds)
}

/// One non-trivial instance of every scheme that runs in parallel-step mode.
pub fn parallel_schemes() -> Vec<RelaxationConfig> {
    vec![
        RelaxationConfig::exact(),
        RelaxationConfig::new(SchemeKind::CrashM2).with_f(2),
        RelaxationConfig::new(SchemeKind::CrashVar).with_f(2),
        RelaxationConfig::new(SchemeKind::Omission).with_f(2),
        RelaxationConfig::new(SchemeKind::AsyncMp).with_tau_max(3),
        RelaxationConfig::new(SchemeKind::CompressEf).with_compressor(Compressor::TopK(2)),
        RelaxationConfig::new(SchemeKind::CompressEf).with_compressor(Compressor::OneBit),
        RelaxationConfig::new(SchemeKind::ElasticNorm).with_beta(0.5),
        RelaxationConfig::new(SchemeKind::ElasticVar).with_late_prob(0.3),
    ]
}

/// One non-trivial instance of every scheme that runs in single-step mode.
pub fn single_schemes() -> Vec<RelaxationConfig> {
    vec![
        RelaxationConfig::exact(),
        RelaxationConfig::new(SchemeKind::SharedMem).with_tau_max(3),
        RelaxationConfig::new(SchemeKind::Adversarial).with_b_adv(1.5),
    ]
}

/// Largest deviation, over every step of a run, between the new global
/// iterate and the one rebuilt from the step's reported gradients:
/// `x_{t+1} = x_t − α Σ_{j∈I_t} g_j / p` (parallel) or `x_t − α g` (single).
pub fn bookkeeping_error(cfg: RunConfig, obj: &Objective) -> f64 {
    let mode = cfg.mode;
    let p = cfg.p as f64;
    let mut s = SimState::new(cfg, obj).unwrap();
    let alpha = s.alpha();
    let mut worst: f64 = 0.0;
    while !s.is_finished() {
        let before = s.global_x().clone();
        let out = s.step().unwrap();
        let mut expected: Vec<f64> = before.into_vec();
        let divisor = if mode == Mode::ParallelStep { p } else { 1.0 };
        for j in &out.participants {
            let g = out.gradients[*j].as_ref().expect("participants generated a gradient");
            for (e, gk) in expected.iter_mut().zip(g.iter()) {
                *e -= alpha * gk / divisor;
            }
        }
        let got = s.global_x();
        for (e, x) in expected.iter().zip(got.iter()) {
            worst = worst.max((e - x).abs() / (1.0 + e.abs()));
        }
    }
    worst
}

pub fn run_records(cfg: RunConfig, obj: &Objective) -> (Vec<IterationRecord>, ParamVector) {
    let mut s = SimState::new(cfg, obj).unwrap();
    s.run().unwrap();
    let x = s.global_x().clone();
    (s.into_parts().0, x)
}

pub fn events_and_samples(cfg: RunConfig, obj: &Objective) -> (Vec<ScheduleEvent>, Vec<usize>) {
    let mut s = SimState::new(cfg, obj).unwrap();
    s.run().unwrap();
    let (_, events, samples) = s.into_parts();
    (events, samples)
}

/// Every scheme at its trivial parameter value, with the mode it runs in.
pub fn degenerate_cases(d: usize) -> Vec<(Mode, RelaxationConfig)> {
    let par = |rc| (Mode::ParallelStep, rc);
    let single = |rc| (Mode::SingleStep, rc);
    vec![
        par(RelaxationConfig::new(SchemeKind::CrashM2).with_f(0)),
        par(RelaxationConfig::new(SchemeKind::CrashVar).with_f(0)),
        par(RelaxationConfig::new(SchemeKind::Omission).with_f(0)),
        par(RelaxationConfig::new(SchemeKind::AsyncMp).with_tau_max(0)),
        par(RelaxationConfig::new(SchemeKind::CompressEf)),
        par(RelaxationConfig::new(SchemeKind::CompressEf).with_compressor(Compressor::TopK(d))),
        par(RelaxationConfig::new(SchemeKind::ElasticNorm).with_beta(1.0).with_full_arrival(true)),
        par(RelaxationConfig::new(SchemeKind::ElasticNorm).with_beta(0.3).with_full_arrival(true)),
        par(RelaxationConfig::new(SchemeKind::ElasticVar).with_late_prob(0.0)),
        single(RelaxationConfig::new(SchemeKind::SharedMem).with_tau_max(0)),
        single(RelaxationConfig::new(SchemeKind::Adversarial).with_b_adv(0.0)),
    ]
}

/// Trajectories are equal bit for bit: records and final iterate.
pub fn bit_identical(a: &(Vec<IterationRecord>, ParamVector), b: &(Vec<IterationRecord>, ParamVector)) -> bool {
    let bits = |x: &ParamVector| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    a.0 == b.0 && bits(&a.1) == bits(&b.1)
}
