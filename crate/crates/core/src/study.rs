//! Multi-seed runs and the quadratic iteration-count study.

use crate::error::Result;
use crate::hypergrad::{Estimator, EstimatorState};
use crate::outer::{optimize, OuterConfig, RunTrace, StopRule};
use crate::problems::{seeded_rng, BloProblem, QuadraticBlo};

/// Mean and, with two or more values, the sample standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Stat {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: Vec<f64>) -> Self {
        let n = values.len();
        let mean = if n == 0 {
            f64::NAN
        } else {
            values.iter().sum::<f64>() / n as f64
        };
        let std = (n >= 2).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Self { values, mean, std }
    }
}

#[derive(Debug, Clone)]
pub struct SeedSweep {
    pub traces: Vec<RunTrace>,
    pub lambda_error: Option<Stat>,
    pub theta_error: Option<Stat>,
}

impl SeedSweep {
    pub fn failures(&self) -> usize {
        self.traces.iter().filter(|t| !t.succeeded()).count()
    }
}

/// One run per seed, otherwise identical settings.
pub fn run_seeds(
    problem: &BloProblem,
    estimator: &Estimator,
    cfg: &OuterConfig,
    seeds: &[u64],
) -> Result<SeedSweep> {
    let traces = seeds
        .iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.seed = seed;
            optimize(problem, estimator, &c)
        })
        .collect::<Result<Vec<_>>>()?;
    let collect = |f: fn(&RunTrace) -> Option<f64>| {
        traces.iter().map(f).collect::<Option<Vec<f64>>>().map(Stat::of)
    };
    Ok(SeedSweep {
        lambda_error: collect(|t| t.lambda_error),
        theta_error: collect(|t| t.theta_error),
        traces,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticOutcome {
    /// Total inner plus auxiliary iterations when the tolerance was first
    /// met; `None` if the cap was hit first or the run failed.
    pub iterations: Option<usize>,
    /// Total iterations actually spent.
    pub spent: usize,
    pub outer_iterations: usize,
    pub final_relative_error: f64,
    pub diverged: bool,
}

pub fn relative_distance(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

/// Runs until `‖λ − λ*‖/‖λ*‖ < tol` or until `cap` total iterations are
/// spent. The outer budget is `cap` divided by the cost of one estimate.
pub fn quadratic_iterations(
    q: &QuadraticBlo,
    estimator: &Estimator,
    eta: f64,
    cap: usize,
    tol: f64,
    seed: u64,
) -> Result<(QuadraticOutcome, RunTrace)> {
    let probe = estimator.estimate(
        &q.problem,
        &q.problem.lambda_init(),
        &mut EstimatorState::new(true),
        &mut seeded_rng(seed),
    )?;
    let cost = probe.counters.total_iterations().max(1);
    let target = q.optimal_lambda();
    let mut cfg = OuterConfig::new(eta, cap.div_ceil(cost).max(1), seed)?;
    cfg.stop = Some(StopRule::LambdaRelativeError {
        target: target.clone(),
        tol,
    });
    let t = optimize(&q.problem, estimator, &cfg)?;
    let spent = t.rows.last().map_or(0, |r| r.total_iterations);
    let iterations = match t.stopped_at {
        Some(_) if t.succeeded() && spent <= cap => Some(spent),
        _ => None,
    };
    let outcome = QuadraticOutcome {
        iterations,
        spent,
        outer_iterations: t.rows.len(),
        final_relative_error: relative_distance(&t.lambda_final, &target),
        diverged: !t.succeeded(),
    };
    Ok((outcome, t))
}

/// Least-squares slope of `log(F(λ_k) − F*)` against `log k` over the last
/// decade of iterations, `k ∈ [K/10, K]`.
pub fn suboptimality_slope(q: &QuadraticBlo, trace: &RunTrace) -> Option<f64> {
    let best = q.reduced_objective(&q.optimal_lambda());
    let k_max = trace.rows.len();
    if k_max < 20 {
        return None;
    }
    let pts: Vec<(f64, f64)> = trace
        .rows
        .iter()
        .filter(|r| r.k >= 1 && r.k * 10 >= k_max)
        .map(|r| {
            let gap = (q.reduced_objective(&r.lambda) - best).max(1e-300);
            ((r.k as f64).ln(), gap.ln())
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}
