//! Small fixtures shared by unit tests.

use crate::kernel::{LearningRate, Mode, RunConfig, Seeds};
use crate::objectives::{Objective, ParamVector, QuadraticSpec, Spectrum};
use crate::relaxations::RelaxationConfig;

/// `⟨e₁, x⟩` in `d` dimensions: every gradient is the unit vector `e₁`.
pub fn unit_linear(d: usize) -> Objective {
    Objective::linear(ParamVector::basis(d, 0)).unwrap()
}

/// Noisy quadratic with known optimum.
pub fn noisy_quadratic(d: usize, m: usize, seed: u64) -> Objective {
    QuadraticSpec::new(d, m, Spectrum { c: 0.5, l: 2.0 }, 1.0, seed)
        .offset(1.0)
        .build()
        .unwrap()
}

/// `½‖x − offset·1‖²` with a single sample.
pub fn half_square(d: usize, offset: f64) -> Objective {
    QuadraticSpec::new(d, 1, Spectrum { c: 1.0, l: 1.0 }, 0.0, 0)
        .offset(offset)
        .build()
        .unwrap()
}

pub fn parallel(p: usize, horizon: usize, alpha: f64, scheme: RelaxationConfig) -> RunConfig {
    RunConfig::new(
        p,
        horizon,
        LearningRate::Constant(alpha),
        Mode::ParallelStep,
        scheme,
        Seeds::new(11, 22),
    )
}

pub fn single(p: usize, horizon: usize, alpha: f64, scheme: RelaxationConfig) -> RunConfig {
    RunConfig::new(
        p,
        horizon,
        LearningRate::Constant(alpha),
        Mode::SingleStep,
        scheme,
        Seeds::new(11, 22),
    )
}
