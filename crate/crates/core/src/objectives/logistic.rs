use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Model, Objective, ObjectiveConstants, ParamVector};
use crate::error::{config_err, Result};

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct LogisticModel {
    features: Vec<ParamVector>,
    /// ±1 labels.
    labels: Vec<f64>,
    pub(crate) l2: f64,
}

impl LogisticModel {
    pub(crate) fn sample_loss(&self, i: usize, x: &ParamVector) -> f64 {
        let margin = self.labels[i] * self.features[i].dot(x);
        softplus(-margin) + 0.5 * self.l2 * x.norm2()
    }

    pub(crate) fn eval(&self, x: &ParamVector) -> f64 {
        let m = self.features.len();
        (0..m).map(|i| self.sample_loss(i, x)).sum::<f64>() / m as f64
    }

    pub(crate) fn sample_gradient(&self, i: usize, x: &ParamVector) -> ParamVector {
        let y = self.labels[i];
        let a = &self.features[i];
        let weight = -y * sigmoid(-y * a.dot(x));
        let mut g = x.scaled(self.l2);
        g.axpy(weight, a);
        g
    }

    pub(crate) fn full_gradient(&self, x: &ParamVector) -> ParamVector {
        let m = self.features.len();
        let mut g = ParamVector::zeros(x.dim());
        for i in 0..m {
            g.add_assign(&self.sample_gradient(i, x));
        }
        g.divided(m as f64)
    }

    /// Every per-sample Hessian is bounded by `l2 + ‖a_i‖²/4`.
    pub(crate) fn smoothness_bound(&self) -> f64 {
        let max_row = self
            .features
            .iter()
            .map(|a| a.norm2())
            .fold(0.0_f64, f64::max);
        self.l2 + 0.25 * max_row
    }
}

/// Binary logistic regression with `l2·½‖x‖²` regularization on Gaussian
/// features; labels alternate so an even sample count is balanced.
pub fn make_logistic(d: usize, m: usize, seed: u64, l2: f64) -> Result<Objective> {
    if d == 0 {
        return Err(config_err("logistic objective needs d >= 1"));
    }
    if m < 2 {
        return Err(config_err("logistic objective needs m >= 2"));
    }
    if !(l2 >= 0.0) {
        return Err(config_err("l2 must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features: Vec<ParamVector> = (0..m)
        .map(|_| ParamVector::from_vec((0..d).map(|_| rng.sample(StandardNormal)).collect()))
        .collect();
    let labels: Vec<f64> = (0..m)
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let model = LogisticModel {
        features,
        labels,
        l2,
    };
    let placeholder = ObjectiveConstants {
        l: 0.0,
        c: 0.0,
        sigma2: 0.0,
        m2: 0.0,
        f_star: None,
        region_center: ParamVector::zeros(d),
        region_radius: 0.0,
        estimated: true,
    };
    let obj = Objective::from_model(d, m, None, Model::Logistic(model), placeholder);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let constants = obj.measure_constants(2.0, 64, &mut probe_rng)?;
    Ok(obj.with_constants(constants))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_at_origin_is_ln2() {
        let obj = make_logistic(3, 16, 3, 0.1).unwrap();
        let f0 = obj.eval(&ParamVector::zeros(3)).unwrap();
        assert!((f0 - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn unregularized_is_not_strongly_convex() {
        let obj = make_logistic(3, 8, 1, 0.0).unwrap();
        assert_eq!(obj.constants().c, 0.0);
        assert!(obj.constants().estimated);
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(make_logistic(0, 4, 0, 0.1).is_err());
        assert!(make_logistic(2, 1, 0, 0.1).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
    }
}
