//! The outer loop: projected gradient descent on `λ` driven by any estimator.

use std::time::Instant;

use crate::error::{BloError, Result};
use crate::hypergrad::{Counters, Estimator, EstimatorState, InnerSolver};
use crate::problems::{seeded_rng, BloProblem};
use crate::vector::{FlatVector, Space};

/// Optional early stop, checked after each update.
#[derive(Debug, Clone, PartialEq)]
pub enum StopRule {
    /// `‖h‖ < tol`.
    HypergradNorm(f64),
    /// `‖λ − target‖ / ‖target‖ < tol`.
    LambdaRelativeError { target: Vec<f64>, tol: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterConfig {
    pub eta: f64,
    pub iterations: usize,
    /// Falls back to the problem's own starting point.
    pub lambda_init: Option<Vec<f64>>,
    pub seed: u64,
    pub warm_start: bool,
    pub stop: Option<StopRule>,
    /// Solver for the final `θ̂(λ)` when the problem has no closed form.
    pub final_solver: InnerSolver,
    pub record_timing: bool,
}

impl OuterConfig {
    pub fn new(eta: f64, iterations: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            eta,
            iterations,
            lambda_init: None,
            seed,
            warm_start: true,
            stop: None,
            final_solver: InnerSolver {
                steps: 5000,
                lr: 0.005,
            },
            record_timing: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(BloError::InvalidConfig(format!(
                "outer eta must be positive, got {}",
                self.eta
            )));
        }
        if self.iterations == 0 {
            return Err(BloError::InvalidConfig(
                "outer iterations must be at least 1".into(),
            ));
        }
        self.final_solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    /// `λ⁽ᵏ⁾`, the iterate the hypergradient was evaluated at.
    pub lambda: Vec<f64>,
    /// The hypergradient estimate at `λ⁽ᵏ⁾`.
    pub h: Vec<f64>,
    pub objective: f64,
    pub hnorm: f64,
    pub theta_norm: f64,
    /// Only filled when timing is requested, so traces stay reproducible.
    pub wall_ms: Option<f64>,
    pub mem_vecs: usize,
    /// Inner plus auxiliary iterations summed up to and including `k`.
    pub total_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub problem: String,
    pub estimator: String,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
    pub lambda_final: Vec<f64>,
    /// `θ̂(λ_final)` from the closed form or a fresh deterministic solve.
    pub theta_final: Vec<f64>,
    pub lambda_error: Option<f64>,
    pub theta_error: Option<f64>,
    pub counters: Counters,
    /// Iteration at which the stop rule fired.
    pub stopped_at: Option<usize>,
    /// Set when an estimate failed; the rows before it are kept.
    pub failure: Option<BloError>,
}

impl RunTrace {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `θ̂(λ)` for reporting: the closed form when known, otherwise a long
/// noise-free inner solve from the init policy.
pub fn settled_theta(problem: &BloProblem, lambda: &FlatVector, solver: &InnerSolver) -> Result<FlatVector> {
    if let Some(t) = problem.inner_optimum(lambda) {
        return Ok(t);
    }
    let quiet = problem.without_noise();
    let theta0 = quiet.initial_theta(lambda)?;
    let mut counters = Counters::default();
    solver.solve(&quiet, lambda, &theta0, &mut seeded_rng(0), &mut counters)
}

/// Runs `K` outer iterations `λ ← Π(λ − η·h)`.
pub fn optimize(problem: &BloProblem, estimator: &Estimator, cfg: &OuterConfig) -> Result<RunTrace> {
    cfg.validate()?;
    estimator.validate()?;
    let mut lambda = match &cfg.lambda_init {
        Some(v) => FlatVector::new(v.clone(), Space::Lambda)?,
        None => problem.lambda_init(),
    };
    if lambda.len() != problem.dim_lambda() {
        return Err(BloError::DimensionMismatch {
            context: "initial lambda",
            expected: problem.dim_lambda(),
            found: lambda.len(),
        });
    }
    lambda = problem.project_lambda(&lambda);
    let mut rng = seeded_rng(cfg.seed);
    let mut state = EstimatorState::new(cfg.warm_start);
    let mut rows = Vec::with_capacity(cfg.iterations);
    let mut counters = Counters::default();
    let mut stopped_at = None;
    let mut failure = None;
    for k in 0..cfg.iterations {
        let clock = Instant::now();
        let r = match estimator.estimate(problem, &lambda, &mut state, &mut rng) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        counters.accumulate(&r.counters);
        let hnorm = r.h.norm();
        let next = lambda.axpy(-cfg.eta, &r.h).map_err(|_| BloError::Divergence {
            step: k,
            detail: "non-finite outer iterate".into(),
        });
        let next = match next {
            Ok(n) => problem.project_lambda(&n),
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        rows.push(TraceRow {
            k,
            lambda: lambda.as_slice().to_vec(),
            h: r.h.as_slice().to_vec(),
            objective: r.objective,
            hnorm,
            theta_norm: r.theta_last.norm(),
            wall_ms: cfg
                .record_timing
                .then(|| clock.elapsed().as_secs_f64() * 1e3),
            mem_vecs: r.counters.peak_vectors,
            total_iterations: counters.total_iterations(),
        });
        lambda = next;
        let stop = match &cfg.stop {
            None => false,
            Some(StopRule::HypergradNorm(tol)) => hnorm < *tol,
            Some(StopRule::LambdaRelativeError { target, tol }) => {
                let scale = target.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                distance(lambda.as_slice(), target) / scale < *tol
            }
        };
        if stop {
            stopped_at = Some(k);
            break;
        }
    }
    let theta_final = settled_theta(problem, &lambda, &cfg.final_solver)?;
    let known = problem.known_solution();
    Ok(RunTrace {
        problem: problem.name().to_string(),
        estimator: estimator.name().to_string(),
        seed: cfg.seed,
        lambda_error: known.map(|s| distance(lambda.as_slice(), &s.lambda)),
        theta_error: known.map(|s| distance(theta_final.as_slice(), &s.theta)),
        lambda_final: lambda.into_values(),
        theta_final: theta_final.into_values(),
        rows,
        counters,
        stopped_at,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergrad::CgConfig;
    use crate::problems::make_synth1d;

    fn cg() -> Estimator {
        Estimator::IftCg(CgConfig {
            gamma: 0.01,
            iterations: 10,
            inner: InnerSolver::new(100, 0.005).unwrap(),
        })
    }

    #[test]
    fn zero_iterations_rejected() {
        assert!(OuterConfig::new(0.005, 0, 0).is_err());
        assert!(OuterConfig::new(0.0, 10, 0).is_err());
    }

    #[test]
    fn iterates_stay_in_box_and_trace_is_reproducible() {
        let p = make_synth1d();
        let mut cfg = OuterConfig::new(0.5, 30, 0).unwrap();
        cfg.lambda_init = Some(vec![0.95]);
        let a = optimize(&p, &cg(), &cfg).unwrap();
        let b = optimize(&p, &cg(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 30);
        assert!(a.rows.iter().all(|r| (0.0..=1.0).contains(&r.lambda[0])));
        assert!(a.rows.windows(2).all(|w| w[1].k == w[0].k + 1));
    }

    #[test]
    fn stop_rule_cuts_the_run() {
        let p = make_synth1d();
        let mut cfg = OuterConfig::new(0.005, 1000, 0).unwrap();
        cfg.stop = Some(StopRule::HypergradNorm(1e9));
        let t = optimize(&p, &cg(), &cfg).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.stopped_at, Some(0));
    }
}
