//! Hypergradient estimators.
//!
//! Every estimator returns a [`HypergradResult`]. [`Estimator`] wraps them
//! behind one interface so the outer loop and the CLI can select them by
//! name.

mod hpo;
mod ift;
mod inner;
mod probe;
mod unroll;
mod zeroth;

pub use hpo::{g0, gm_step, hpo_sgld_from, hpo_sgld_hypergrad, HpoOptions};
pub use ift::{
    amigo, conjugate_gradient, ift_cg, ift_neumann, AmigoConfig, AmigoMode, CgConfig, CgSolve,
    NeumannConfig, NEUMANN_GROWTH_LIMIT,
};
pub use inner::InnerSolver;
pub use probe::{fo_probe, ProbeRecord, ProbeStep, PROBE_FLOOR};
pub use unroll::{fmd, fmd_with_jacobian, rmd, rmd_fo, DenseJacobian, FMD_ENTRY_LIMIT};
pub use zeroth::{
    es_grad, es_grad_with_draws, es_hypergrad, fd_oracle, fd_oracle_from, reduced_objective,
    EsConfig,
};

use crate::error::{BloError, Result};
use crate::problems::{BloProblem, BloRng};
use crate::sgld::SgldConfig;
use crate::vector::FlatVector;

/// Work and memory accounting for one estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    /// Inner solver or chain steps.
    pub inner_steps: usize,
    /// Neumann terms, CG iterations or auxiliary `z` steps.
    pub aux_steps: usize,
    pub gradient_sweeps: usize,
    /// Sweeps that push a tangent through the gradient (HVP / mixed products).
    pub second_order_sweeps: usize,
    /// Most θ- or λ-space vectors held at once.
    pub peak_vectors: usize,
    pub stored_iterates: usize,
    pub cg_breakdowns: usize,
}

impl Counters {
    pub(crate) fn hold(&mut self, vectors: usize) {
        self.peak_vectors = self.peak_vectors.max(vectors);
    }

    /// Inner plus auxiliary iterations.
    pub fn total_iterations(&self) -> usize {
        self.inner_steps + self.aux_steps
    }

    pub fn accumulate(&mut self, other: &Counters) {
        self.inner_steps += other.inner_steps;
        self.aux_steps += other.aux_steps;
        self.gradient_sweeps += other.gradient_sweeps;
        self.second_order_sweeps += other.second_order_sweeps;
        self.peak_vectors = self.peak_vectors.max(other.peak_vectors);
        self.stored_iterates = self.stored_iterates.max(other.stored_iterates);
        self.cg_breakdowns += other.cg_breakdowns;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypergradResult {
    pub h: FlatVector,
    /// Estimate of the outer objective at this `λ`.
    pub objective: f64,
    /// `‖g_m‖` per chain step, HPO-SGLD only.
    pub g_trace: Vec<f64>,
    pub probe_errors: Option<Vec<f64>>,
    pub counters: Counters,
    /// Last inner iterate, used to warm-start the next outer iteration.
    pub theta_last: FlatVector,
    /// AmIGO's auxiliary solution, carried to the next call.
    pub amigo_z: Option<FlatVector>,
}

/// A configured estimator.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    HpoSgld(SgldConfig),
    IftNeumann(NeumannConfig),
    IftCg(CgConfig),
    Amigo(AmigoConfig),
    Rmd(InnerSolver),
    RmdFo(InnerSolver),
    Fmd { inner: InnerSolver, limit: usize },
    Es(EsConfig),
    FdOracle { delta: f64, inner: InnerSolver },
}

pub const ESTIMATOR_NAMES: [&str; 10] = [
    "hpo-sgld",
    "ift-neumann",
    "ift-cg",
    "amigo-sgd",
    "amigo-cg",
    "rmd",
    "rmd-fo",
    "fmd",
    "es",
    "fd-oracle",
];

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::HpoSgld(_) => "hpo-sgld",
            Estimator::IftNeumann(_) => "ift-neumann",
            Estimator::IftCg(_) => "ift-cg",
            Estimator::Amigo(c) => match c.mode {
                AmigoMode::Sgd => "amigo-sgd",
                AmigoMode::Cg => "amigo-cg",
            },
            Estimator::Rmd(_) => "rmd",
            Estimator::RmdFo(_) => "rmd-fo",
            Estimator::Fmd { .. } => "fmd",
            Estimator::Es(_) => "es",
            Estimator::FdOracle { .. } => "fd-oracle",
        }
    }

    pub fn check_name(name: &str) -> Result<()> {
        if ESTIMATOR_NAMES.contains(&name) {
            Ok(())
        } else {
            Err(BloError::UnknownName {
                kind: "estimator",
                name: name.to_string(),
                valid: ESTIMATOR_NAMES.join(", "),
            })
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(BloError::InvalidConfig(format!("{what} must be positive, got {v}")))
            }
        };
        match self {
            Estimator::HpoSgld(c) => c.validate(),
            Estimator::IftNeumann(c) => {
                positive("neumann alpha", c.alpha)?;
                c.inner.validate()
            }
            Estimator::IftCg(c) => {
                if !(c.gamma >= 0.0) {
                    return Err(BloError::InvalidConfig("cg gamma must be >= 0".into()));
                }
                c.inner.validate()
            }
            Estimator::Amigo(c) => {
                positive("amigo lr", c.lr)?;
                c.inner.validate()
            }
            Estimator::Rmd(s) | Estimator::RmdFo(s) | Estimator::Fmd { inner: s, .. } => {
                s.validate()
            }
            Estimator::Es(c) => {
                positive("es sigma", c.sigma)?;
                if c.samples == 0 {
                    return Err(BloError::InvalidConfig("es needs at least one sample".into()));
                }
                c.inner.validate()
            }
            Estimator::FdOracle { delta, inner } => {
                positive("fd delta", *delta)?;
                inner.validate()
            }
        }
    }

    /// One hypergradient at `λ`. `state` carries the warm start between
    /// calls; `rng` is the run's noise stream.
    pub fn estimate(
        &self,
        problem: &BloProblem,
        lambda: &FlatVector,
        state: &mut EstimatorState,
        rng: &mut BloRng,
    ) -> Result<HypergradResult> {
        let theta0 = state.start(problem, lambda)?;
        let result = match self {
            Estimator::HpoSgld(cfg) => {
                hpo_sgld_from(problem, lambda, &theta0, cfg, rng, HpoOptions::default())
            }
            Estimator::IftNeumann(cfg) => ift_neumann(problem, lambda, &theta0, cfg, rng),
            Estimator::IftCg(cfg) => ift_cg(problem, lambda, &theta0, cfg, rng),
            Estimator::Amigo(cfg) => amigo(problem, lambda, &theta0, cfg, state.amigo_z.as_ref(), rng),
            Estimator::Rmd(s) => rmd(problem, lambda, &theta0, s, rng),
            Estimator::RmdFo(s) => rmd_fo(problem, lambda, &theta0, s, rng),
            Estimator::Fmd { inner, limit } => fmd(problem, lambda, &theta0, inner, *limit, rng),
            Estimator::Es(cfg) => es_hypergrad(problem, lambda, &theta0, cfg, rng),
            Estimator::FdOracle { delta, inner } => {
                fd_oracle_from(problem, lambda, &theta0, *delta, inner, rng)
            }
        }?;
        state.theta = Some(result.theta_last.clone());
        if let Some(z) = &result.amigo_z {
            state.amigo_z = Some(z.clone());
        }
        Ok(result)
    }
}

/// State an estimator carries from one outer iteration to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    /// Start each inner solve or chain from the previous last iterate.
    pub warm_start: bool,
    pub theta: Option<FlatVector>,
    pub amigo_z: Option<FlatVector>,
}

impl Default for EstimatorState {
    fn default() -> Self {
        Self::new(true)
    }
}

impl EstimatorState {
    pub fn new(warm_start: bool) -> Self {
        Self {
            warm_start,
            theta: None,
            amigo_z: None,
        }
    }

    /// The start iterate for the next estimate. A λ-dependent init policy
    /// always wins over the warm start.
    pub fn start(&self, problem: &BloProblem, lambda: &FlatVector) -> Result<FlatVector> {
        match &self.theta {
            Some(t) if self.warm_start && problem.init_jacobian().is_zero() => Ok(t.clone()),
            _ => problem.initial_theta(lambda),
        }
    }
}
