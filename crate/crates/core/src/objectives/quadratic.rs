use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Model, Objective, ParamVector};
use crate::error::{config_err, Result};

/// Eigenvalue range of the shared Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub c: f64,
    pub l: f64,
}

/// Per-coordinate perturbation `a Σ_k cos(ω x_k)` shared by every sample.
///
/// Its Hessian is `diag(−aω² cos(ω x_k))`, so it shifts curvature by at most
/// `aω²` in either direction and makes the objective non-convex once
/// `aω² > c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineBump {
    pub amplitude: f64,
    pub frequency: f64,
}

impl CosineBump {
    fn curvature(&self) -> f64 {
        self.amplitude.abs() * self.frequency * self.frequency
    }
}

/// Builder for `f(x) = (1/m) Σ ½(x−b_i)ᵀA(x−b_i)` (optionally plus a cosine bump).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSpec {
    pub d: usize,
    pub m: usize,
    pub spectrum: Spectrum,
    /// Standard deviation of the sample centers around `offset·1`.
    pub spread: f64,
    pub seed: u64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub bump: Option<CosineBump>,
    #[serde(default)]
    pub region_radius: Option<f64>,
    #[serde(default = "default_probes")]
    pub probes: usize,
}

fn default_probes() -> usize {
    64
}

impl QuadraticSpec {
    pub fn new(d: usize, m: usize, spectrum: Spectrum, spread: f64, seed: u64) -> Self {
        Self {
            d,
            m,
            spectrum,
            spread,
            seed,
            offset: 0.0,
            bump: None,
            region_radius: None,
            probes: default_probes(),
        }
    }

    pub fn offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn bump(mut self, bump: CosineBump) -> Self {
        self.bump = Some(bump);
        self
    }

    pub fn region_radius(mut self, radius: f64) -> Self {
        self.region_radius = Some(radius);
        self
    }

    pub fn build(&self) -> Result<Objective> {
        let Spectrum { c, l } = self.spectrum;
        if self.d == 0 {
            return Err(config_err("quadratic objective needs d >= 1"));
        }
        if self.m == 0 {
            return Err(config_err("quadratic objective needs m >= 1"));
        }
        if !(c > 0.0) || !l.is_finite() {
            return Err(config_err(format!("spectrum needs 0 < c <= L, got c={c}, L={l}")));
        }
        if c > l {
            return Err(config_err(format!("spectrum has c={c} > L={l}")));
        }
        if !(self.spread >= 0.0) {
            return Err(config_err("spread must be non-negative"));
        }

        let d = self.d;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let eigenvalues: Vec<f64> = if d == 1 {
            vec![l]
        } else {
            (0..d)
                .map(|k| c + (l - c) * k as f64 / (d - 1) as f64)
                .collect()
        };
        let gauss = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
        let q = gauss.qr().q();
        let a = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eigenvalues.clone())) * q.transpose();
        let mut hessian = vec![0.0; d * d];
        for r in 0..d {
            for col in 0..d {
                hessian[r * d + col] = 0.5 * (a[(r, col)] + a[(col, r)]);
            }
        }
        let top_direction = ParamVector::from_vec(q.column(d - 1).iter().copied().collect());

        let deviations: Vec<ParamVector> = (0..self.m)
            .map(|_| {
                ParamVector::from_vec(
                    (0..d)
                        .map(|_| self.spread * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                )
            })
            .collect();
        let mut mean_dev = ParamVector::zeros(d);
        for dev in &deviations {
            mean_dev.add_assign(dev);
        }
        let mean_dev = mean_dev.divided(self.m as f64);
        let base = ParamVector::from_vec(vec![self.offset; d]);
        let centers: Vec<ParamVector> = deviations.iter().map(|dv| base.add(dv)).collect();
        let mean_center = base.add(&mean_dev);

        let mut model = QuadraticModel {
            d,
            hessian,
            eigenvalues,
            top_direction,
            centers,
            mean_center: mean_center.clone(),
            offset_const: 0.0,
            bump: self.bump,
        };
        model.offset_const = model
            .centers
            .iter()
            .map(|b| 0.5 * model.quad_form(&b.sub(&model.mean_center)))
            .sum::<f64>()
            / self.m as f64;

        let optimum = if self.bump.is_none() {
            Some(mean_center.clone())
        } else {
            None
        };
        let reference = optimum.clone().unwrap_or_else(|| ParamVector::zeros(d));
        let radius = self
            .region_radius
            .unwrap_or_else(|| (1.5 * reference.norm()).max(1.0));

        let obj = Objective::from_model(
            d,
            self.m,
            optimum,
            Model::Quadratic(model),
            placeholder_constants(d),
        );
        let mut probe_rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let constants = obj.measure_constants(radius, self.probes, &mut probe_rng)?;
        Ok(obj.with_constants(constants))
    }
}

fn placeholder_constants(d: usize) -> super::ObjectiveConstants {
    super::ObjectiveConstants {
        l: 0.0,
        c: 0.0,
        sigma2: 0.0,
        m2: 0.0,
        f_star: None,
        region_center: ParamVector::zeros(d),
        region_radius: 0.0,
        estimated: true,
    }
}

/// Quadratic with spectrum `[c, L]` and sample centers drawn around the origin.
pub fn make_quadratic(
    d: usize,
    m: usize,
    spectrum: Spectrum,
    spread: f64,
    seed: u64,
) -> Result<Objective> {
    QuadraticSpec::new(d, m, spectrum, spread, seed).build()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct QuadraticModel {
    d: usize,
    /// Row-major symmetric Hessian shared by all samples.
    hessian: Vec<f64>,
    eigenvalues: Vec<f64>,
    top_direction: ParamVector,
    centers: Vec<ParamVector>,
    mean_center: ParamVector,
    /// `(1/m) Σ ½(b_i−b̄)ᵀA(b_i−b̄)`, the value at the minimizer.
    offset_const: f64,
    pub(crate) bump: Option<CosineBump>,
}

impl QuadraticModel {
    fn matvec(&self, v: &ParamVector) -> ParamVector {
        let d = self.d;
        let vs = v.as_slice();
        ParamVector::from_vec(
            self.hessian
                .chunks_exact(d)
                .map(|row| row.iter().zip(vs).map(|(a, b)| a * b).sum())
                .collect(),
        )
    }

    fn quad_form(&self, v: &ParamVector) -> f64 {
        self.matvec(v).dot(v)
    }

    fn bump_value(&self, x: &ParamVector) -> f64 {
        match self.bump {
            Some(b) => b.amplitude * x.iter().map(|v| (b.frequency * v).cos()).sum::<f64>(),
            None => 0.0,
        }
    }

    fn add_bump_gradient(&self, x: &ParamVector, g: &mut ParamVector) {
        if let Some(b) = self.bump {
            for k in 0..self.d {
                g[k] -= b.amplitude * b.frequency * (b.frequency * x[k]).sin();
            }
        }
    }

    pub(crate) fn eval(&self, x: &ParamVector) -> f64 {
        0.5 * self.quad_form(&x.sub(&self.mean_center)) + self.offset_const + self.bump_value(x)
    }

    pub(crate) fn sample_loss(&self, i: usize, x: &ParamVector) -> f64 {
        0.5 * self.quad_form(&x.sub(&self.centers[i])) + self.bump_value(x)
    }

    pub(crate) fn full_gradient(&self, x: &ParamVector) -> ParamVector {
        let mut g = self.matvec(&x.sub(&self.mean_center));
        self.add_bump_gradient(x, &mut g);
        g
    }

    pub(crate) fn sample_gradient(&self, i: usize, x: &ParamVector) -> ParamVector {
        let mut g = self.matvec(&x.sub(&self.centers[i]));
        self.add_bump_gradient(x, &mut g);
        g
    }

    pub(crate) fn curvature_bounds(&self) -> (f64, f64) {
        let lmax = self.eigenvalues.iter().copied().fold(f64::MIN, f64::max);
        let lmin = self.eigenvalues.iter().copied().fold(f64::MAX, f64::min);
        match self.bump {
            Some(b) => (lmax + b.curvature(), (lmin - b.curvature()).max(0.0)),
            None => (lmax, lmin),
        }
    }

    pub(crate) fn lower_bound(&self) -> f64 {
        match self.bump {
            Some(b) => self.offset_const - b.amplitude.abs() * self.d as f64,
            None => self.offset_const,
        }
    }

    /// For a plain quadratic, `E‖G̃(x)‖² = ‖A(x−b̄)‖² + σ²`, maximized over a
    /// ball around b̄ along the top eigenvector.
    pub(crate) fn second_moment_maximizer(
        &self,
        center: &ParamVector,
        radius: f64,
    ) -> Option<ParamVector> {
        if self.bump.is_some() || center != &self.mean_center {
            return None;
        }
        let mut p = center.clone();
        p.axpy(radius, &self.top_direction);
        Some(p)
    }
}
