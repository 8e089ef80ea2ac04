//! Stochastic gradient Langevin dynamics on the inner energy.
//!
//! One step is `θ ← θ + (ε/2)·∂log p(θ|λ)/∂θ + √ε·z` with `z ~ N(0, κ²I)`,
//! followed by projection onto the problem's θ box. With the energy
//! `E = L_T/τ` the drift is a gradient step on `L_T` with learning rate
//! `ε/(2τ)`, and that is how it is computed so that `κ = 0` reproduces plain
//! gradient descent bit for bit.

use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::ScalarField;
use crate::error::{BloError, Result};
use crate::problems::{seeded_rng, BloProblem, BloRng};
use crate::vector::FlatVector;

/// Any iterate entry beyond this magnitude is treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgldConfig {
    /// Step size `ε`.
    pub epsilon: f64,
    /// Noise scale `κ`.
    pub kappa: f64,
    /// Burn-in length `B`.
    pub burn_in: usize,
    /// Number of retained samples `M`.
    pub samples: usize,
    pub seed: u64,
}

impl SgldConfig {
    pub fn new(epsilon: f64, kappa: f64, burn_in: usize, samples: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            epsilon,
            kappa,
            burn_in,
            samples,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Step size whose drift equals a gradient step with rate `lr` on `L_T`.
    pub fn epsilon_for_learning_rate(lr: f64, temperature: f64) -> f64 {
        2.0 * temperature * lr
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(BloError::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(BloError::InvalidConfig(format!(
                "kappa must be non-negative, got {}",
                self.kappa
            )));
        }
        if self.samples == 0 {
            return Err(BloError::InvalidConfig("need at least one sample".into()));
        }
        Ok(())
    }

    pub fn chain_length(&self) -> usize {
        self.burn_in + self.samples
    }
}

pub(crate) fn check_iterate(theta: &FlatVector, step: usize) -> Result<()> {
    let worst = theta.max_abs();
    if worst > DIVERGENCE_LIMIT {
        return Err(BloError::Divergence {
            step,
            detail: format!("|theta| reached {worst:e}"),
        });
    }
    Ok(())
}

/// One step with an already resolved inner loss. Returns the new iterate and
/// the standard-normal draws used (before scaling by `κ`).
pub(crate) fn step_with(
    problem: &BloProblem,
    inner: &ScalarField,
    lambda: &FlatVector,
    theta: &FlatVector,
    epsilon: f64,
    kappa: f64,
    rng: &mut BloRng,
) -> Result<(FlatVector, Vec<f64>)> {
    let grad = inner.grad_theta(lambda, theta)?;
    let lr = epsilon / (2.0 * problem.temperature());
    let noise_scale = epsilon.sqrt() * kappa;
    let z: Vec<f64> = (0..theta.len())
        .map(|_| StandardNormal.sample(&mut *rng))
        .collect();
    let next: Vec<f64> = theta
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .zip(&z)
        .map(|((&t, &g), &zi)| t - lr * g + noise_scale * zi)
        .collect();
    let next = FlatVector::theta(next).map_err(|_| BloError::Divergence {
        step: 0,
        detail: "non-finite iterate".into(),
    })?;
    Ok((problem.project_theta(&next), z))
}

/// `θ' = θ + (ε/2)·∂log p/∂θ + √ε·z`, projected onto the θ box.
pub fn sgld_step(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta: &FlatVector,
    epsilon: f64,
    kappa: f64,
    rng: &mut BloRng,
) -> Result<FlatVector> {
    if !(epsilon > 0.0) {
        return Err(BloError::InvalidConfig(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let inner = problem.resolve_inner(rng);
    let (next, _) = step_with(problem, &inner, lambda, theta, epsilon, kappa, rng)?;
    check_iterate(&next, 1)?;
    Ok(next)
}

/// Every iterate `θ⁽⁰⁾ … θ⁽ᴮ⁺ᴹ⁾` of one chain plus the normal draws behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub iterates: Vec<FlatVector>,
    pub noise: Vec<Vec<f64>>,
    pub burn_in: usize,
    pub seed: u64,
}

impl ChainTrace {
    /// The last `M` iterates.
    pub fn samples(&self) -> &[FlatVector] {
        &self.iterates[self.burn_in + 1..]
    }

    pub fn last(&self) -> &FlatVector {
        self.iterates.last().expect("chain holds the initial iterate")
    }
}

/// Runs `B + M` steps from `θ⁽⁰⁾` given by the init policy, with the stream
/// seeded from `cfg.seed`.
pub fn run_chain(problem: &BloProblem, lambda: &FlatVector, cfg: &SgldConfig) -> Result<ChainTrace> {
    let theta0 = problem.initial_theta(lambda)?;
    let mut rng = seeded_rng(cfg.seed);
    run_chain_from(problem, lambda, &theta0, cfg, &mut rng)
}

pub fn run_chain_from(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta0: &FlatVector,
    cfg: &SgldConfig,
    rng: &mut BloRng,
) -> Result<ChainTrace> {
    cfg.validate()?;
    let mut iterates = Vec::with_capacity(cfg.chain_length() + 1);
    let mut noise = Vec::with_capacity(cfg.chain_length());
    iterates.push(theta0.clone());
    for m in 1..=cfg.chain_length() {
        let inner = problem.resolve_inner(rng);
        let prev = iterates.last().expect("non-empty");
        let (next, z) = step_with(problem, &inner, lambda, prev, cfg.epsilon, cfg.kappa, rng)
            .map_err(|e| match e {
                BloError::Divergence { detail, .. } => BloError::Divergence { step: m, detail },
                other => other,
            })?;
        check_iterate(&next, m)?;
        iterates.push(next);
        noise.push(z);
    }
    Ok(ChainTrace {
        iterates,
        noise,
        burn_in: cfg.burn_in,
        seed: cfg.seed,
    })
}
