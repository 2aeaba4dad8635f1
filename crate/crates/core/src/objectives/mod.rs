//! Synthetic finite-sum objectives with exact gradient oracles.
//!
//! Every objective is `f(x) = (1/m) Σ_i ℓ(S_i, x)` over an explicit sample
//! set, so the variance and second-moment constants that drive the
//! consistency bounds can be measured by brute force instead of assumed.

mod logistic;
mod quadratic;
mod vector;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

pub use logistic::make_logistic;
pub use quadratic::{make_quadratic, CosineBump, QuadraticSpec, Spectrum};
pub use vector::ParamVector;

/// Smoothness, convexity and gradient-noise constants of an objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConstants {
    /// Smoothness constant.
    pub l: f64,
    /// Strong-convexity constant, 0 when not strongly convex.
    pub c: f64,
    /// Max over the region of `E‖G̃(x) − ∇f(x)‖²`.
    pub sigma2: f64,
    /// Max over the region of `E‖G̃(x)‖²`.
    pub m2: f64,
    /// Lower bound of f, absent when f is unbounded below.
    pub f_star: Option<f64>,
    pub region_center: ParamVector,
    pub region_radius: f64,
    /// True when any constant comes from probing rather than a closed form.
    pub estimated: bool,
}

impl ObjectiveConstants {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn m(&self) -> f64 {
        self.m2.sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub(crate) enum Model {
    Quadratic(quadratic::QuadraticModel),
    Logistic(logistic::LogisticModel),
    /// Constant-gradient probe `ℓ(x) = ⟨u, x⟩`, used to trace message delivery.
    Linear { direction: ParamVector },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Quadratic,
    Logistic,
    Linear,
}

/// A finite-sum objective. Immutable once built; share it freely across trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Objective {
    dim: usize,
    samples: usize,
    optimum: Option<ParamVector>,
    constants: ObjectiveConstants,
    model: Model,
}

impl Objective {
    pub(crate) fn from_model(
        dim: usize,
        samples: usize,
        optimum: Option<ParamVector>,
        model: Model,
        constants: ObjectiveConstants,
    ) -> Self {
        Self {
            dim,
            samples,
            optimum,
            constants,
            model,
        }
    }

    /// Constant-gradient probe objective with a single sample.
    pub fn linear(direction: ParamVector) -> Result<Self> {
        if direction.dim() == 0 {
            return Err(config_err("linear objective needs d >= 1"));
        }
        let d = direction.dim();
        let m2 = direction.norm2();
        let constants = ObjectiveConstants {
            l: 0.0,
            c: 0.0,
            sigma2: 0.0,
            m2,
            f_star: None,
            region_center: ParamVector::zeros(d),
            region_radius: 1.0,
            estimated: false,
        };
        Ok(Self::from_model(d, 1, None, Model::Linear { direction }, constants))
    }

    pub fn kind(&self) -> ObjectiveKind {
        match self.model {
            Model::Quadratic(_) => ObjectiveKind::Quadratic,
            Model::Logistic(_) => ObjectiveKind::Logistic,
            Model::Linear { .. } => ObjectiveKind::Linear,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_samples(&self) -> usize {
        self.samples
    }

    pub fn optimum(&self) -> Option<&ParamVector> {
        self.optimum.as_ref()
    }

    pub fn constants(&self) -> &ObjectiveConstants {
        &self.constants
    }

    /// Replaces the stored constants, e.g. after re-measuring on a larger region.
    pub fn with_constants(mut self, constants: ObjectiveConstants) -> Self {
        self.constants = constants;
        self
    }

    /// True for a pure quadratic (no perturbation); such objectives have an
    /// exact optimum and exact constants.
    pub fn is_plain_quadratic(&self) -> bool {
        matches!(&self.model, Model::Quadratic(q) if q.bump.is_none())
    }

    /// Serializable dump of samples and constants.
    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }

    pub fn eval(&self, x: &ParamVector) -> Result<f64> {
        x.check_dim(self.dim)?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &ParamVector) -> f64 {
        match &self.model {
            Model::Quadratic(q) => q.eval(x),
            Model::Logistic(lg) => lg.eval(x),
            Model::Linear { direction } => direction.dot(x),
        }
    }

    /// Loss of a single sample.
    pub fn sample_loss(&self, i: usize, x: &ParamVector) -> Result<f64> {
        x.check_dim(self.dim)?;
        Ok(match &self.model {
            Model::Quadratic(q) => q.sample_loss(i, x),
            Model::Logistic(lg) => lg.sample_loss(i, x),
            Model::Linear { direction } => direction.dot(x),
        })
    }

    pub fn full_gradient(&self, x: &ParamVector) -> Result<ParamVector> {
        x.check_dim(self.dim)?;
        Ok(self.full_gradient_unchecked(x))
    }

    pub(crate) fn full_gradient_unchecked(&self, x: &ParamVector) -> ParamVector {
        match &self.model {
            Model::Quadratic(q) => q.full_gradient(x),
            Model::Logistic(lg) => lg.full_gradient(x),
            Model::Linear { direction } => direction.clone(),
        }
    }

    /// Gradient of the loss of sample `i`.
    pub fn sample_gradient(&self, i: usize, x: &ParamVector) -> Result<ParamVector> {
        x.check_dim(self.dim)?;
        Ok(self.sample_gradient_unchecked(i, x))
    }

    pub(crate) fn sample_gradient_unchecked(&self, i: usize, x: &ParamVector) -> ParamVector {
        match &self.model {
            Model::Quadratic(q) => q.sample_gradient(i, x),
            Model::Logistic(lg) => lg.sample_gradient(i, x),
            Model::Linear { direction } => direction.clone(),
        }
    }

    /// Uniform sample index, drawn with replacement.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.samples)
    }

    /// Unbiased stochastic gradient at `x` using one uniformly drawn sample.
    pub fn stochastic_gradient<R: Rng + ?Sized>(
        &self,
        x: &ParamVector,
        rng: &mut R,
    ) -> Result<ParamVector> {
        x.check_dim(self.dim)?;
        let i = self.sample_index(rng);
        Ok(self.sample_gradient_unchecked(i, x))
    }

    /// Exact `(1/m) Σ_i ‖∇ℓ_i(x) − ∇f(x)‖²`.
    pub fn gradient_variance(&self, x: &ParamVector) -> Result<f64> {
        x.check_dim(self.dim)?;
        let full = self.full_gradient_unchecked(x);
        let total: f64 = (0..self.samples)
            .map(|i| self.sample_gradient_unchecked(i, x).dist2(&full))
            .sum();
        Ok(total / self.samples as f64)
    }

    /// Exact `(1/m) Σ_i ‖∇ℓ_i(x)‖²`.
    pub fn gradient_second_moment(&self, x: &ParamVector) -> Result<f64> {
        x.check_dim(self.dim)?;
        let total: f64 = (0..self.samples)
            .map(|i| self.sample_gradient_unchecked(i, x).norm2())
            .sum();
        Ok(total / self.samples as f64)
    }

    /// Measures σ² and M² by brute force over all samples at `probes` random
    /// points of the ball of radius `region_radius` around the optimum (or the
    /// origin when the optimum is unknown), plus the center itself.
    ///
    /// For plain quadratics the maximizer of the second moment is known
    /// (along the top eigenvector, on the sphere) and is always included, so
    /// the result is exact; L and c are exact from the spectrum.
    pub fn measure_constants<R: Rng + ?Sized>(
        &self,
        region_radius: f64,
        probes: usize,
        rng: &mut R,
    ) -> Result<ObjectiveConstants> {
        if probes == 0 {
            return Err(config_err("measure_constants needs at least one probe"));
        }
        if !(region_radius >= 0.0) || !region_radius.is_finite() {
            return Err(config_err("region radius must be finite and non-negative"));
        }
        let d = self.dim;
        let center = self
            .optimum
            .clone()
            .unwrap_or_else(|| ParamVector::zeros(d));

        let mut points = vec![center.clone()];
        for _ in 0..probes {
            points.push(random_ball_point(&center, region_radius, rng));
        }
        let (l, c, f_star, exact_extreme) = match &self.model {
            Model::Quadratic(q) => {
                let (l, c) = q.curvature_bounds();
                let extreme = q.second_moment_maximizer(&center, region_radius);
                (l, c, Some(q.lower_bound()), extreme)
            }
            Model::Logistic(lg) => (lg.smoothness_bound(), lg.l2, Some(0.0), None),
            Model::Linear { .. } => (0.0, 0.0, None, None),
        };
        let estimated = match &self.model {
            Model::Quadratic(q) => q.bump.is_some(),
            Model::Logistic(_) => true,
            Model::Linear { .. } => false,
        };
        if let Some(p) = exact_extreme {
            points.push(p);
        }

        let mut sigma2: f64 = 0.0;
        let mut m2: f64 = 0.0;
        for p in &points {
            sigma2 = sigma2.max(self.gradient_variance(p)?);
            m2 = m2.max(self.gradient_second_moment(p)?);
        }
        Ok(ObjectiveConstants {
            l,
            c,
            sigma2,
            m2,
            f_star,
            region_center: center,
            region_radius,
            estimated,
        })
    }
}

/// Uniform point in the ball `B(center, radius)`.
pub(crate) fn random_ball_point<R: Rng + ?Sized>(
    center: &ParamVector,
    radius: f64,
    rng: &mut R,
) -> ParamVector {
    let d = center.dim();
    let mut dir = ParamVector::from_vec((0..d).map(|_| rng.sample(StandardNormal)).collect());
    let n = dir.norm();
    if n == 0.0 {
        return center.clone();
    }
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    dir = dir.scaled(r / n);
    center.add(&dir)
}
