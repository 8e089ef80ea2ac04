//! Bi-level problem definitions.
//!
//! A [`BloProblem`] bundles the outer objective `f = L_V`, the inner loss
//! `L_T`, the temperature `τ` that turns `L_T` into the Gibbs energy
//! `E = L_T / τ`, and the policy that picks the first chain iterate `θ⁽⁰⁾`.
//! The normalizer of `p(θ|λ) ∝ exp(-E)` is never needed: samplers and
//! estimators only use derivatives of `E`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::ScalarField;
use crate::error::{BloError, Result};
use crate::vector::{FlatVector, Space};

mod mlp;
mod poly_toy;
mod quadratic;
mod synth1d;

pub use mlp::{make_tiny_mlp_l1, MlpData, MLP_HIDDEN, MLP_PARAMS};
pub use poly_toy::{
    f_true, inner_optimum as poly_inner_optimum, make_poly_toy, PolyToy, TabularToySpec,
};
pub use quadratic::{make_quadratic_blo, Coupling, QuadraticBlo, QuadraticOptions};
pub use synth1d::{
    draw_synth_noise, make_noisy_synth1d, make_synth1d, synth1d_inner_optimum, SYNTH1D_NOISE,
    SYNTH1D_SOLUTION,
};

/// Random stream used throughout the crate.
pub type BloRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> BloRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws a fresh inner loss (with its noise parameters fixed) per call.
pub type NoiseHook = Arc<dyn Fn(&mut BloRng) -> ScalarField + Send + Sync>;

/// Closed-form `θ*(λ)` where one is known.
pub type InnerSolution = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Closed interval applied coordinate-wise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "empty interval");
        Self { lo, hi }
    }

    pub fn project(&self, v: &FlatVector) -> FlatVector {
        v.clamp(self.lo, self.hi)
    }
}

/// How the first chain iterate `θ⁽⁰⁾` is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum InitPolicy {
    IndependentFixed(Vec<f64>),
    /// Uniform in `[lo, hi]` per coordinate from its own seeded stream, so it
    /// is the same draw on every call.
    IndependentRandom { lo: f64, hi: f64, seed: u64 },
    /// `θ⁽⁰⁾ = λ`, as in initial-parameter meta-learning.
    IdentityOfLambda,
}

/// Left products with `dθ⁽⁰⁾/dλ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitJacobian {
    Zero,
    Identity,
}

impl InitJacobian {
    /// `vᵀ · dθ⁽⁰⁾/dλ`, linear time in `dim(θ) + dim(λ)`.
    pub fn left_product(&self, v: &FlatVector, dim_lambda: usize) -> Result<FlatVector> {
        if v.space() != Space::Theta {
            return Err(BloError::SpaceMismatch {
                left: Space::Theta,
                right: v.space(),
            });
        }
        match self {
            InitJacobian::Zero => Ok(FlatVector::zeros(dim_lambda, Space::Lambda)),
            InitJacobian::Identity => {
                if v.len() != dim_lambda {
                    return Err(BloError::DimensionMismatch {
                        context: "identity init jacobian",
                        expected: dim_lambda,
                        found: v.len(),
                    });
                }
                Ok(v.clone().retag(Space::Lambda))
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, InitJacobian::Zero)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnownSolution {
    pub lambda: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Clone)]
pub struct BloProblem {
    name: String,
    outer: ScalarField,
    inner_loss: ScalarField,
    temperature: f64,
    noise: Option<NoiseHook>,
    noise_seed: u64,
    init_policy: InitPolicy,
    theta_box: Option<Interval>,
    lambda_box: Option<Interval>,
    known_solution: Option<KnownSolution>,
    inner_solution: Option<InnerSolution>,
    lambda_init: Vec<f64>,
}

impl BloProblem {
    pub fn new(
        name: &str,
        outer: ScalarField,
        inner_loss: ScalarField,
        temperature: f64,
    ) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(BloError::InvalidConfig(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if outer.dim_lambda() != inner_loss.dim_lambda()
            || outer.dim_theta() != inner_loss.dim_theta()
        {
            return Err(BloError::InvalidConfig(format!(
                "outer ({}, {}) and inner ({}, {}) arities differ",
                outer.dim_lambda(),
                outer.dim_theta(),
                inner_loss.dim_lambda(),
                inner_loss.dim_theta()
            )));
        }
        let dim_theta = outer.dim_theta();
        let dim_lambda = outer.dim_lambda();
        Ok(Self {
            name: name.to_string(),
            outer,
            inner_loss,
            temperature,
            noise: None,
            noise_seed: 0,
            init_policy: InitPolicy::IndependentFixed(vec![0.0; dim_theta]),
            theta_box: None,
            lambda_box: None,
            known_solution: None,
            inner_solution: None,
            lambda_init: vec![0.0; dim_lambda],
        })
    }

    pub fn with_init_policy(mut self, policy: InitPolicy) -> Result<Self> {
        match &policy {
            InitPolicy::IdentityOfLambda if self.dim_lambda() != self.dim_theta() => {
                return Err(BloError::InvalidConfig(format!(
                    "identity init needs dim(lambda) = dim(theta), got {} and {}",
                    self.dim_lambda(),
                    self.dim_theta()
                )))
            }
            InitPolicy::IndependentFixed(v) if v.len() != self.dim_theta() => {
                return Err(BloError::DimensionMismatch {
                    context: "fixed initial theta",
                    expected: self.dim_theta(),
                    found: v.len(),
                })
            }
            InitPolicy::IndependentRandom { lo, hi, .. } if lo > hi => {
                return Err(BloError::InvalidConfig("empty init box".into()))
            }
            _ => {}
        }
        self.init_policy = policy;
        Ok(self)
    }

    pub fn with_noise(mut self, hook: NoiseHook, seed: u64) -> Self {
        self.noise = Some(hook);
        self.noise_seed = seed;
        self
    }

    pub fn with_boxes(mut self, lambda_box: Option<Interval>, theta_box: Option<Interval>) -> Self {
        self.lambda_box = lambda_box;
        self.theta_box = theta_box;
        self
    }

    pub fn with_known_solution(mut self, lambda: Vec<f64>, theta: Vec<f64>) -> Self {
        self.known_solution = Some(KnownSolution { lambda, theta });
        self
    }

    pub fn with_inner_solution(mut self, solution: InnerSolution) -> Self {
        self.inner_solution = Some(solution);
        self
    }

    pub fn with_lambda_init(mut self, lambda: Vec<f64>) -> Result<Self> {
        if lambda.len() != self.dim_lambda() {
            return Err(BloError::DimensionMismatch {
                context: "initial lambda",
                expected: self.dim_lambda(),
                found: lambda.len(),
            });
        }
        self.lambda_init = lambda;
        Ok(self)
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(BloError::InvalidConfig(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        self.temperature = temperature;
        Ok(self)
    }

    /// Same problem with the noise hook removed.
    pub fn without_noise(&self) -> Self {
        let mut p = self.clone();
        p.noise = None;
        p
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn outer(&self) -> &ScalarField {
        &self.outer
    }

    pub fn inner_loss(&self) -> &ScalarField {
        &self.inner_loss
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn dim_theta(&self) -> usize {
        self.outer.dim_theta()
    }

    pub fn dim_lambda(&self) -> usize {
        self.outer.dim_lambda()
    }

    pub fn init_policy(&self) -> &InitPolicy {
        &self.init_policy
    }

    pub fn theta_box(&self) -> Option<Interval> {
        self.theta_box
    }

    pub fn lambda_box(&self) -> Option<Interval> {
        self.lambda_box
    }

    pub fn known_solution(&self) -> Option<&KnownSolution> {
        self.known_solution.as_ref()
    }

    pub fn has_noise(&self) -> bool {
        self.noise.is_some()
    }

    /// A fresh stream seeded with the problem's noise seed.
    pub fn noise_stream(&self) -> BloRng {
        seeded_rng(self.noise_seed)
    }

    pub fn lambda_init(&self) -> FlatVector {
        FlatVector::new(self.lambda_init.clone(), Space::Lambda)
            .expect("initial lambda is finite")
    }

    /// Closed-form inner optimum, if the problem has one.
    pub fn inner_optimum(&self, lambda: &FlatVector) -> Option<FlatVector> {
        self.inner_solution
            .as_ref()
            .and_then(|s| FlatVector::theta(s(lambda.as_slice())).ok())
    }

    /// `E = L_T / τ` for the noise-free inner loss.
    pub fn energy(&self) -> ScalarField {
        self.inner_loss.divided(self.temperature)
    }

    /// The inner loss with this call's noise draw fixed. Noise-free problems
    /// return the inner loss itself and leave `rng` untouched.
    pub fn resolve_inner(&self, rng: &mut BloRng) -> ScalarField {
        match &self.noise {
            Some(hook) => hook(rng),
            None => self.inner_loss.clone(),
        }
    }

    pub fn init_jacobian(&self) -> InitJacobian {
        match self.init_policy {
            InitPolicy::IdentityOfLambda => InitJacobian::Identity,
            _ => InitJacobian::Zero,
        }
    }

    /// `θ⁽⁰⁾` under the init policy.
    pub fn initial_theta(&self, lambda: &FlatVector) -> Result<FlatVector> {
        match &self.init_policy {
            InitPolicy::IndependentFixed(v) => FlatVector::theta(v.clone()),
            InitPolicy::IndependentRandom { lo, hi, seed } => {
                let mut rng = seeded_rng(*seed);
                let v = (0..self.dim_theta())
                    .map(|_| if lo == hi { *lo } else { rng.random_range(*lo..*hi) })
                    .collect();
                FlatVector::theta(v)
            }
            InitPolicy::IdentityOfLambda => {
                if lambda.len() != self.dim_theta() {
                    return Err(BloError::DimensionMismatch {
                        context: "identity init",
                        expected: self.dim_theta(),
                        found: lambda.len(),
                    });
                }
                Ok(lambda.clone().retag(Space::Theta))
            }
        }
    }

    pub fn project_theta(&self, theta: &FlatVector) -> FlatVector {
        match self.theta_box {
            Some(b) => b.project(theta),
            None => theta.clone(),
        }
    }

    pub fn project_lambda(&self, lambda: &FlatVector) -> FlatVector {
        match self.lambda_box {
            Some(b) => b.project(lambda),
            None => lambda.clone(),
        }
    }
}

impl fmt::Debug for BloProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BloProblem")
            .field("name", &self.name)
            .field("dim_lambda", &self.dim_lambda())
            .field("dim_theta", &self.dim_theta())
            .field("temperature", &self.temperature)
            .field("noisy", &self.has_noise())
            .field("init_policy", &self.init_policy)
            .finish()
    }
}

/// `∂ log p(θ|λ) / ∂θ = -(1/τ) ∂L_T/∂θ`, with the inner loss resolved
/// through the noise hook using `rng`.
pub fn inner_logp_grad(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta: &FlatVector,
    rng: &mut BloRng,
) -> Result<FlatVector> {
    let inner = problem.resolve_inner(rng);
    let g = inner.grad_theta(lambda, theta)?;
    g.map(|v| -v / problem.temperature())
}
