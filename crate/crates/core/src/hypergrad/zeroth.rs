//! Zeroth-order estimates of the reduced objective `λ ↦ f(λ, θ̂(λ))`:
//! the ES-gradient baseline and the finite-difference oracle.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{BloError, Result};
use crate::problems::{BloProblem, BloRng};
use crate::vector::{FlatVector, Space};

use super::inner::InnerSolver;
use super::{Counters, HypergradResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsConfig {
    pub sigma: f64,
    pub samples: usize,
    pub inner: InnerSolver,
}

/// `f(λ', θ̂(λ'))` where `θ̂` comes from the shared inner solver. Every call
/// replays the same noise stream, so the map is deterministic in `λ'`.
pub fn reduced_objective(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta_start: &FlatVector,
    solver: &InnerSolver,
    stream: &BloRng,
    counters: &mut Counters,
) -> Result<(f64, FlatVector)> {
    let theta0 = if problem.init_jacobian().is_zero() {
        theta_start.clone()
    } else {
        problem.initial_theta(lambda)?
    };
    let mut rng = stream.clone();
    let theta = solver.solve(problem, lambda, &theta0, &mut rng, counters)?;
    counters.gradient_sweeps += 1;
    Ok((problem.outer().eval(lambda, &theta)?, theta))
}

/// `(1/(σn))·Σ z_k·f(λ + σ·z_k)` for the given draws.
pub fn es_grad_with_draws(
    mut objective: impl FnMut(&FlatVector) -> Result<f64>,
    lambda: &FlatVector,
    sigma: f64,
    draws: &[Vec<f64>],
) -> Result<FlatVector> {
    if !(sigma > 0.0) {
        return Err(BloError::InvalidConfig(format!(
            "es sigma must be positive, got {sigma}"
        )));
    }
    if draws.is_empty() {
        return Err(BloError::InvalidConfig("es needs at least one sample".into()));
    }
    let mut acc = FlatVector::zeros(lambda.len(), Space::Lambda);
    let weight = 1.0 / (sigma * draws.len() as f64);
    for z in draws {
        let z = FlatVector::lambda(z.clone())?;
        let value = objective(&lambda.axpy(sigma, &z)?)?;
        acc = acc.axpy(weight * value, &z)?;
    }
    Ok(acc)
}

/// ES-gradient with `n` standard-normal draws from `rng`.
pub fn es_grad(
    objective: impl FnMut(&FlatVector) -> Result<f64>,
    lambda: &FlatVector,
    sigma: f64,
    n: usize,
    rng: &mut BloRng,
) -> Result<FlatVector> {
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..lambda.len())
                .map(|_| StandardNormal.sample(&mut *rng))
                .collect()
        })
        .collect();
    es_grad_with_draws(objective, lambda, sigma, &draws)
}

/// The ES baseline on a problem: each perturbed `λ` gets its own inner solve
/// from `theta_start` under common random numbers.
pub fn es_hypergrad(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta_start: &FlatVector,
    cfg: &EsConfig,
    rng: &mut BloRng,
) -> Result<HypergradResult> {
    cfg.inner.validate()?;
    let mut counters = Counters::default();
    let stream = rng.clone();
    let h = es_grad(
        |l| Ok(reduced_objective(problem, l, theta_start, &cfg.inner, &stream, &mut counters)?.0),
        lambda,
        cfg.sigma,
        cfg.samples,
        rng,
    )?;
    let (objective, theta_last) =
        reduced_objective(problem, lambda, theta_start, &cfg.inner, &stream, &mut counters)?;
    counters.hold(4);
    Ok(HypergradResult {
        h,
        objective,
        g_trace: Vec::new(),
        probe_errors: None,
        counters,
        theta_last,
        amigo_z: None,
    })
}

/// Central differences of the reduced objective, from the init policy and
/// the problem's own noise stream.
pub fn fd_oracle(
    problem: &BloProblem,
    lambda: &FlatVector,
    delta: f64,
    solver: &InnerSolver,
) -> Result<FlatVector> {
    let theta0 = problem.initial_theta(lambda)?;
    let mut rng = problem.noise_stream();
    Ok(fd_oracle_from(problem, lambda, &theta0, delta, solver, &mut rng)?.h)
}

pub fn fd_oracle_from(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta_start: &FlatVector,
    delta: f64,
    solver: &InnerSolver,
    rng: &mut BloRng,
) -> Result<HypergradResult> {
    if !(delta > 0.0) {
        return Err(BloError::InvalidConfig(format!(
            "fd delta must be positive, got {delta}"
        )));
    }
    solver.validate()?;
    let mut counters = Counters::default();
    let stream = rng.clone();
    let mut h = Vec::with_capacity(lambda.len());
    for j in 0..lambda.len() {
        let e = FlatVector::basis(lambda.len(), j, Space::Lambda);
        let (up, _) = reduced_objective(
            problem,
            &lambda.axpy(delta, &e)?,
            theta_start,
            solver,
            &stream,
            &mut counters,
        )?;
        let (down, _) = reduced_objective(
            problem,
            &lambda.axpy(-delta, &e)?,
            theta_start,
            solver,
            &stream,
            &mut counters,
        )?;
        h.push((up - down) / (2.0 * delta));
    }
    let (objective, theta_last) =
        reduced_objective(problem, lambda, theta_start, solver, &stream, &mut counters)?;
    // Advance the caller's stream as one inner solve would.
    let mut sink = Counters::default();
    solver.solve(problem, lambda, theta_start, rng, &mut sink)?;
    counters.hold(3);
    Ok(HypergradResult {
        h: FlatVector::lambda(h)?,
        objective,
        g_trace: Vec::new(),
        probe_errors: None,
        counters,
        theta_last,
        amigo_z: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ScalarField;
    use crate::problems::{make_quadratic_blo, make_synth1d, seeded_rng};

    #[test]
    fn forced_zero_draw_gives_zero() {
        let l = FlatVector::lambda(vec![0.3, 0.4]).unwrap();
        let g = es_grad_with_draws(|_| Ok(7.0), &l, 0.1, &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn es_of_linear_function_is_unbiased() {
        let c = [1.5, -2.0, 0.5];
        let l = FlatVector::lambda(vec![0.1, 0.2, 0.3]).unwrap();
        let f = |x: &FlatVector| Ok(x.as_slice().iter().zip(&c).map(|(a, b)| a * b).sum());
        let g = es_grad(f, &l, 0.01, 100_000, &mut seeded_rng(3)).unwrap();
        for (gi, ci) in g.as_slice().iter().zip(&c) {
            // The constant part f(λ)·z averages out at rate |f(λ)|/(σ√n).
            assert!((gi - ci).abs() < 0.02 * c.iter().map(|v: &f64| v.abs()).sum::<f64>() + 0.1, "{gi} vs {ci}");
        }
    }

    #[test]
    fn fd_of_constant_outer_is_zero() {
        let q = make_quadratic_blo(3, 2, 10.0, 0).unwrap();
        let f = ScalarField::new("const", 2, 3, |tape, _l, _t| tape.constant(2.0));
        let p = BloProblem::new("c", f, q.problem.inner_loss().clone(), 1.0).unwrap();
        let l = FlatVector::lambda(vec![0.1, -0.1]).unwrap();
        let g = fd_oracle(&p, &l, 1e-4, &InnerSolver::new(10, 0.05).unwrap()).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn fd_error_is_second_order_in_delta() {
        let q = make_quadratic_blo(4, 2, 10.0, 7).unwrap();
        let l = FlatVector::lambda(vec![0.4, -0.2]).unwrap();
        let solver = InnerSolver::new(3000, 0.05).unwrap();
        let exact = q.analytic_hypergradient(l.as_slice());
        let err = |d: f64| {
            let g = fd_oracle(&q.problem, &l, d, &solver).unwrap();
            crate::vector::relative_error(g.as_slice(), &exact, 1e-12)
        };
        // Quadratic reduced objective: central differences are exact up to
        // rounding, so only check both are tiny.
        assert!(err(1e-2) < 1e-6);
        assert!(err(5e-3) < 1e-6);
    }

    #[test]
    fn es_on_synth1d_points_downhill_from_the_left() {
        let p = make_synth1d();
        let l = FlatVector::lambda(vec![0.3]).unwrap();
        let th0 = p.initial_theta(&l).unwrap();
        let cfg = EsConfig {
            sigma: 0.05,
            samples: 2000,
            inner: InnerSolver::new(100, 0.005).unwrap(),
        };
        let r = es_hypergrad(&p, &l, &th0, &cfg, &mut seeded_rng(1)).unwrap();
        assert!(r.h.get(0) < 0.0);
    }
}
