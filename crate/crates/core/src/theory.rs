//! Closed-form consistency constants, learning-rate schedules and
//! convergence right-hand sides.
//!
//! Logarithms are natural throughout.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::objectives::ObjectiveConstants;
use crate::relaxations::{RelaxationConfig, SchemeKind};

/// Inputs that entered a consistency constant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub m: Option<f64>,
    pub sigma: Option<f64>,
    pub tau_max: Option<usize>,
    pub f: Option<usize>,
    pub p: usize,
    pub gamma: Option<f64>,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryBound {
    pub scheme: SchemeKind,
    /// The consistency constant `B`.
    pub b: f64,
    pub inputs: BoundInputs,
    /// Human-readable form of the formula that produced `b`.
    pub formula: &'static str,
}

fn checked_constant(value: f64, name: &'static str) -> Result<f64> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(Error::MissingConstant(name))
    }
}

/// Consistency constant `B` of a scheme, in the `α²B²` normalization.
pub fn bound_b(
    scheme: &RelaxationConfig,
    consts: &ObjectiveConstants,
    p: usize,
    d: usize,
) -> Result<TheoryBound> {
    if p == 0 || d == 0 {
        return Err(config_err("bound_b needs p >= 1 and d >= 1"));
    }
    let pf = p as f64;
    let mut inputs = BoundInputs {
        p,
        d,
        ..BoundInputs::default()
    };
    let (b, formula) = match scheme.scheme {
        SchemeKind::Exact => (0.0, "0"),
        SchemeKind::Adversarial => (scheme.b_adv, "B_adv"),
        SchemeKind::ElasticNorm => {
            return Err(Error::MeasuredOnly(SchemeKind::ElasticNorm.to_string()))
        }
        SchemeKind::SharedMem => {
            let m = checked_constant(consts.m2, "M2")?.sqrt();
            inputs.m = Some(m);
            inputs.tau_max = Some(scheme.tau_max);
            ((d as f64).sqrt() * scheme.tau_max as f64 * m, "sqrt(d)*tau_max*M")
        }
        SchemeKind::AsyncMp => {
            let m = checked_constant(consts.m2, "M2")?.sqrt();
            inputs.m = Some(m);
            inputs.tau_max = Some(scheme.tau_max);
            (
                (pf - 1.0) * scheme.tau_max as f64 * m / pf,
                "(p-1)*tau_max*M/p",
            )
        }
        SchemeKind::CrashM2 | SchemeKind::Omission => {
            let m = checked_constant(consts.m2, "M2")?.sqrt();
            inputs.m = Some(m);
            inputs.f = Some(scheme.f);
            (m * scheme.f as f64 / pf, "M*f/p")
        }
        SchemeKind::CrashVar => {
            let sigma = checked_constant(consts.sigma2, "sigma2")?.sqrt();
            inputs.sigma = Some(sigma);
            inputs.f = Some(scheme.f);
            (3.0 * scheme.f as f64 * sigma / pf, "3*f*sigma/p")
        }
        SchemeKind::CompressEf => {
            let m = checked_constant(consts.m2, "M2")?.sqrt();
            let gamma = scheme.compressor.gamma(d);
            inputs.m = Some(m);
            inputs.gamma = Some(gamma);
            (compress_factor(gamma) * m, "sqrt((2-g)g/(1-g)^3)*M")
        }
        SchemeKind::ElasticVar => {
            let sigma = checked_constant(consts.sigma2, "sigma2")?.sqrt();
            inputs.sigma = Some(sigma);
            (3.0 * sigma, "3*sigma")
        }
    };
    Ok(TheoryBound {
        scheme: scheme.scheme,
        b,
        inputs,
        formula,
    })
}

/// `sqrt((2−γ)γ/(1−γ)³)`, the compression multiplier on `M`.
pub fn compress_factor(gamma: f64) -> f64 {
    ((2.0 - gamma) * gamma / (1.0 - gamma).powi(3)).sqrt()
}

/// Bound on `E Σ_i ‖ε_t^i‖²` along an error-feedback run.
pub fn residual_bound(gamma: f64, m2: f64, alpha: f64, p: usize) -> f64 {
    (2.0 - gamma) * gamma * m2 * alpha * alpha * p as f64 / (1.0 - gamma).powi(3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Theorem {
    /// Non-convex, single-step.
    T1,
    /// Non-convex, parallel-step.
    T2,
    /// Strongly convex, single-step.
    T3,
    /// Strongly convex, parallel-step.
    T4,
}

impl Theorem {
    pub fn is_parallel(&self) -> bool {
        matches!(self, Theorem::T2 | Theorem::T4)
    }

    pub fn needs_strong_convexity(&self) -> bool {
        matches!(self, Theorem::T3 | Theorem::T4)
    }

    /// Smallest admissible horizon, as a real number.
    pub fn min_horizon(&self, p: usize, consts: &ObjectiveConstants) -> f64 {
        let l2 = consts.l * consts.l;
        let c2 = consts.c * consts.c;
        match self {
            Theorem::T1 => 36.0 * l2,
            Theorem::T2 => 64.0 * l2 * p as f64,
            Theorem::T3 => 144.0 * l2 / c2,
            Theorem::T4 => 256.0 * l2 * p as f64 / c2,
        }
    }

    fn check(&self, horizon: usize, p: usize, consts: &ObjectiveConstants) -> Result<()> {
        if horizon == 0 || p == 0 {
            return Err(Error::Precondition(format!("{self} needs T >= 1 and p >= 1")));
        }
        if self.needs_strong_convexity() && !(consts.c > 0.0) {
            return Err(Error::Precondition(format!(
                "{self} needs a strongly convex objective (c > 0), got c={}",
                consts.c
            )));
        }
        let min = self.min_horizon(p, consts);
        if (horizon as f64) < min {
            return Err(Error::Precondition(format!(
                "{self} needs T >= {}, got T={horizon}",
                min.ceil()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Theorem::T1 => "T1",
            Theorem::T2 => "T2",
            Theorem::T3 => "T3",
            Theorem::T4 => "T4",
        };
        f.write_str(s)
    }
}

impl FromStr for Theorem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T1" => Ok(Theorem::T1),
            "T2" => Ok(Theorem::T2),
            "T3" => Ok(Theorem::T3),
            "T4" => Ok(Theorem::T4),
            _ => Err(config_err(format!("unknown theorem `{s}`"))),
        }
    }
}

/// Constant learning rate prescribed for horizon `horizon` on `p` nodes.
pub fn lr_schedule(
    theorem: Theorem,
    horizon: usize,
    p: usize,
    consts: &ObjectiveConstants,
) -> Result<f64> {
    theorem.check(horizon, p, consts)?;
    let t = horizon as f64;
    let pf = p as f64;
    Ok(match theorem {
        Theorem::T1 => 1.0 / t.sqrt(),
        Theorem::T2 => pf.sqrt() / t.sqrt(),
        Theorem::T3 => 2.0 * t.ln() / (consts.c * t),
        Theorem::T4 => 2.0 * (t.ln() + pf.ln()) / (consts.c * t),
    })
}

/// Initial-condition quantity the right-hand side is stated in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitGap {
    /// `f(x₀) − f*`, for the non-convex bounds.
    FunctionGap(f64),
    /// `‖x₀ − x*‖²`, for the strongly convex bounds.
    Distance2(f64),
}

/// The four-term right-hand side of the named convergence bound.
pub fn rhs_bound(
    theorem: Theorem,
    horizon: usize,
    p: usize,
    consts: &ObjectiveConstants,
    b: f64,
    init: InitGap,
) -> Result<f64> {
    theorem.check(horizon, p, consts)?;
    let t = horizon as f64;
    let pf = p as f64;
    let l = consts.l;
    let s2 = consts.sigma2;
    let b2 = b * b;
    match (theorem, init) {
        (Theorem::T1, InitGap::FunctionGap(gap)) => {
            let st = t.sqrt();
            Ok(4.0 * gap / st + 2.0 * b2 * l * l / t + 6.0 * l * s2 / st
                + 6.0 * l.powi(3) * b2 / (t * st))
        }
        (Theorem::T2, InitGap::FunctionGap(gap)) => {
            let stp = (t * pf).sqrt();
            Ok(8.0 * gap / stp + 4.0 * b2 * l * l * pf / t + 8.0 * l * s2 / stp
                + 16.0 * l.powi(3) * b2 * pf * pf.sqrt() / (t * t.sqrt()))
        }
        (Theorem::T3 | Theorem::T4, InitGap::Distance2(dist2)) => {
            let (lg, scale) = if theorem == Theorem::T3 {
                (t.ln(), 1.0)
            } else {
                (t.ln() + pf.ln(), pf)
            };
            let c4 = consts.c.powi(4);
            Ok(dist2 / (t * scale)
                + 16.0 * lg * lg * l * l * b2 / (c4 * t * t)
                + 12.0 * s2 * lg / (t * scale)
                + 48.0 * lg.powi(3) * b2 * l * l / (c4 * t.powi(3)))
        }
        (th, init) => Err(Error::Precondition(format!(
            "{th} is not stated in terms of {init:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::Compressor;
    use crate::objectives::ParamVector;
    use proptest::prelude::*;

    fn consts(l: f64, c: f64, sigma2: f64, m2: f64) -> ObjectiveConstants {
        ObjectiveConstants {
            l,
            c,
            sigma2,
            m2,
            f_star: Some(0.0),
            region_center: ParamVector::zeros(1),
            region_radius: 1.0,
            estimated: false,
        }
    }

    fn cfg(kind: SchemeKind) -> RelaxationConfig {
        RelaxationConfig::new(kind)
    }

    #[test]
    fn crash_without_faults_is_zero() {
        let k = consts(1.0, 1.0, 4.0, 9.0);
        for kind in [SchemeKind::CrashM2, SchemeKind::CrashVar, SchemeKind::Omission] {
            assert_eq!(bound_b(&cfg(kind).with_f(0), &k, 8, 4).unwrap().b, 0.0);
        }
    }

    #[test]
    fn shared_memory_example() {
        let k = consts(1.0, 1.0, 0.0, 1.5 * 1.5);
        let b = bound_b(&cfg(SchemeKind::SharedMem).with_tau_max(2), &k, 1, 4).unwrap();
        assert!((b.b - 6.0).abs() < 1e-12);
        assert_eq!(b.inputs.tau_max, Some(2));
    }

    #[test]
    fn compression_example() {
        // gamma = 0.5 via topk with K = d/2
        let k = consts(1.0, 1.0, 0.0, 4.0);
        let b = bound_b(
            &cfg(SchemeKind::CompressEf).with_compressor(Compressor::TopK(2)),
            &k,
            4,
            4,
        )
        .unwrap();
        assert!((b.b - 2.0 * 6f64.sqrt()).abs() < 1e-12);
        assert!((b.b - 4.8990).abs() < 1e-4);
    }

    #[test]
    fn remaining_rows() {
        let k = consts(1.0, 1.0, 4.0, 9.0);
        let p = 8;
        let b = |c: RelaxationConfig| bound_b(&c, &k, p, 10).unwrap().b;
        assert!((b(cfg(SchemeKind::AsyncMp).with_tau_max(4)) - 7.0 * 4.0 * 3.0 / 8.0).abs() < 1e-12);
        assert!((b(cfg(SchemeKind::CrashM2).with_f(2)) - 3.0 * 2.0 / 8.0).abs() < 1e-12);
        assert!((b(cfg(SchemeKind::CrashVar).with_f(2)) - 3.0 * 2.0 * 2.0 / 8.0).abs() < 1e-12);
        assert_eq!(b(cfg(SchemeKind::ElasticVar)), 6.0);
        assert_eq!(b(cfg(SchemeKind::Adversarial).with_b_adv(2.5)), 2.5);
        assert_eq!(b(cfg(SchemeKind::Exact)), 0.0);
        assert!(matches!(
            bound_b(&cfg(SchemeKind::ElasticNorm), &k, p, 10),
            Err(Error::MeasuredOnly(_))
        ));
    }

    #[test]
    fn missing_constant_is_reported() {
        let k = consts(1.0, 1.0, f64::NAN, 1.0);
        assert!(matches!(
            bound_b(&cfg(SchemeKind::ElasticVar), &k, 4, 2),
            Err(Error::MissingConstant("sigma2"))
        ));
    }

    #[test]
    fn schedule_examples() {
        let k = consts(1.0, 1.0, 0.0, 0.0);
        assert!((lr_schedule(Theorem::T1, 10_000, 1, &k).unwrap() - 0.01).abs() < 1e-15);
        assert!((lr_schedule(Theorem::T2, 6_400, 4, &k).unwrap() - 0.025).abs() < 1e-15);
        let a3 = lr_schedule(Theorem::T3, 10_000, 1, &k).unwrap();
        assert!((a3 - 2.0 * 10_000f64.ln() / 10_000.0).abs() < 1e-18);
        assert!((a3 - 1.8421e-3).abs() < 1e-7);
        let a4 = lr_schedule(Theorem::T4, 10_000, 4, &k).unwrap();
        assert!((a4 - 2.0 * (10_000f64.ln() + 4f64.ln()) / 10_000.0).abs() < 1e-18);
    }

    #[test]
    fn preconditions_refuse_short_horizons() {
        let k = consts(2.0, 0.5, 0.0, 0.0);
        let err = lr_schedule(Theorem::T1, 143, 1, &k).unwrap_err();
        assert!(err.to_string().contains("T >= 144"), "{err}");
        assert!(lr_schedule(Theorem::T1, 144, 1, &k).is_ok());
        assert!(lr_schedule(Theorem::T2, 64 * 4 * 3 - 1, 3, &k).is_err());
        assert!(lr_schedule(Theorem::T3, 2303, 1, &k).is_err());
        assert!(lr_schedule(Theorem::T3, 2304, 1, &k).is_ok());
        assert!(lr_schedule(Theorem::T4, 256 * 4 * 4 * 4, 4, &k).is_ok());
        assert!(lr_schedule(Theorem::T4, 256 * 4 * 4 * 4 - 1, 4, &k).is_err());
    }

    #[test]
    fn strong_convexity_required() {
        let k = consts(1.0, 0.0, 0.0, 0.0);
        assert!(lr_schedule(Theorem::T3, 1 << 30, 1, &k).is_err());
        assert!(lr_schedule(Theorem::T4, 1 << 30, 2, &k).is_err());
        assert!(lr_schedule(Theorem::T1, 100, 1, &k).is_ok());
    }

    #[test]
    fn rhs_first_term_only_without_noise_or_inconsistency() {
        let k = consts(1.0, 1.0, 0.0, 0.0);
        let r = rhs_bound(Theorem::T1, 10_000, 1, &k, 0.0, InitGap::FunctionGap(3.0)).unwrap();
        assert_eq!(r, 4.0 * 3.0 / 100.0);
        let r = rhs_bound(Theorem::T3, 1_000_000, 1, &k, 0.0, InitGap::Distance2(1.0)).unwrap();
        assert_eq!(r, 1e-6);
        let r = rhs_bound(Theorem::T4, 1_000_000, 4, &k, 0.0, InitGap::Distance2(1.0)).unwrap();
        assert_eq!(r, 1.0 / 4e6);
    }

    #[test]
    fn rhs_t1_quadrupled_horizon_halves_rate_terms() {
        let k0 = consts(1.5, 0.0, 0.0, 0.0);
        let k1 = consts(1.5, 0.0, 2.0, 0.0);
        let a = |k: &ObjectiveConstants, t| {
            rhs_bound(Theorem::T1, t, 1, k, 0.0, InitGap::FunctionGap(5.0)).unwrap()
        };
        assert!((a(&k0, 400) / a(&k0, 1600) - 2.0).abs() < 1e-12);
        assert!((a(&k1, 400) / a(&k1, 1600) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rhs_rejects_wrong_init_quantity() {
        let k = consts(1.0, 1.0, 0.0, 0.0);
        assert!(rhs_bound(Theorem::T1, 100, 1, &k, 0.0, InitGap::Distance2(1.0)).is_err());
        assert!(rhs_bound(Theorem::T3, 1000, 1, &k, 0.0, InitGap::FunctionGap(1.0)).is_err());
    }

    #[test]
    fn rhs_t3_matches_gradient_descent_on_half_square() {
        let t = 1_000_000usize;
        let k = consts(1.0, 1.0, 0.0, 0.0);
        let alpha = lr_schedule(Theorem::T3, t, 1, &k).unwrap();
        let mut x = 1.0f64;
        for _ in 0..t {
            x -= alpha * x;
        }
        let rhs = rhs_bound(Theorem::T3, t, 1, &k, 0.0, InitGap::Distance2(1.0)).unwrap();
        assert_eq!(rhs, 1e-6);
        assert!(x * x <= rhs, "{} > {rhs}", x * x);
    }

    #[test]
    fn compress_factor_degenerates() {
        assert_eq!(compress_factor(0.0), 0.0);
        assert!((compress_factor(0.5) - 6f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn bounds_are_monotone(
            f in 0usize..4,
            tau in 0usize..6,
            m2 in 0.0f64..10.0,
            s2 in 0.0f64..10.0,
            dm in 0.0f64..2.0,
            k in 1usize..16,
        ) {
            let p = 8;
            let d = 16;
            let lo = consts(1.0, 1.0, s2, m2);
            let hi = consts(1.0, 1.0, s2 + dm, m2 + dm);
            let pairs = [
                (cfg(SchemeKind::CrashM2).with_f(f), cfg(SchemeKind::CrashM2).with_f(f + 1)),
                (cfg(SchemeKind::CrashVar).with_f(f), cfg(SchemeKind::CrashVar).with_f(f + 1)),
                (cfg(SchemeKind::Omission).with_f(f), cfg(SchemeKind::Omission).with_f(f + 1)),
                (cfg(SchemeKind::AsyncMp).with_tau_max(tau), cfg(SchemeKind::AsyncMp).with_tau_max(tau + 1)),
                (cfg(SchemeKind::SharedMem).with_tau_max(tau), cfg(SchemeKind::SharedMem).with_tau_max(tau + 1)),
                // smaller K means larger gamma
                (
                    cfg(SchemeKind::CompressEf).with_compressor(Compressor::TopK(k + 1)),
                    cfg(SchemeKind::CompressEf).with_compressor(Compressor::TopK(k)),
                ),
                (cfg(SchemeKind::ElasticVar), cfg(SchemeKind::ElasticVar)),
            ];
            for (a, b) in pairs {
                let base = bound_b(&a, &lo, p, d).unwrap().b;
                prop_assert!(base >= 0.0);
                prop_assert!(bound_b(&b, &lo, p, d).unwrap().b >= base);
                prop_assert!(bound_b(&a, &hi, p, d).unwrap().b >= base);
            }
        }

        #[test]
        fn rhs_is_nondecreasing_in_b_and_sigma(
            b in 0.0f64..5.0,
            db in 0.0f64..5.0,
            s2 in 0.0f64..5.0,
        ) {
            let k = consts(1.0, 1.0, s2, 0.0);
            let k2 = consts(1.0, 1.0, s2 + 1.0, 0.0);
            for (th, p, init) in [
                (Theorem::T1, 1, InitGap::FunctionGap(1.0)),
                (Theorem::T2, 4, InitGap::FunctionGap(1.0)),
                (Theorem::T3, 1, InitGap::Distance2(1.0)),
                (Theorem::T4, 4, InitGap::Distance2(1.0)),
            ] {
                let r = rhs_bound(th, 10_000, p, &k, b, init).unwrap();
                prop_assert!(rhs_bound(th, 10_000, p, &k, b + db, init).unwrap() >= r);
                prop_assert!(rhs_bound(th, 10_000, p, &k2, b, init).unwrap() >= r);
            }
        }
    }
}
