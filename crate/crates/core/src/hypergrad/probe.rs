//! Measures the first-order approximation inside the `g_m` recursion by
//! carrying the exact Jacobian `S_m = dθ⁽ᵐ⁾/dλ` alongside the chain.

use crate::error::Result;
use crate::problems::{seeded_rng, BloProblem};
use crate::sgld::{check_iterate, step_with, SgldConfig};
use crate::vector::{relative_error, FlatVector, Space};

use super::hpo::{g0, gm_step_with};
use super::unroll::{check_dense_size, DenseJacobian};
use super::Counters;

/// Floor on the reference norm in every relative error below.
pub const PROBE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeStep {
    pub step: usize,
    /// `∂f(θ⁽ᵐ⁾)/∂θ·S_{m−1}` against `G_{m−1} + Δθ·∂²f/∂θ²·S₀`, where
    /// `G_{m−1}` is the exact product at the previous step.
    pub rel_error: f64,
    /// Per-sample hypergradient from the recursion against the exact one.
    pub cum_error: f64,
    pub post_burn_in: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord {
    pub steps: Vec<ProbeStep>,
    /// Monte-Carlo hypergradient from the recursion.
    pub h_recursion: FlatVector,
    /// Monte-Carlo hypergradient from the exact Jacobians.
    pub h_exact: FlatVector,
    pub counters: Counters,
}

impl ProbeRecord {
    pub fn final_error(&self) -> f64 {
        relative_error(
            self.h_recursion.as_slice(),
            self.h_exact.as_slice(),
            PROBE_FLOOR,
        )
    }

    pub fn rel_errors(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.rel_error).collect()
    }
}

/// Runs one chain seeded by `cfg.seed` from the init policy, recording the
/// exact and approximate products at every step.
pub fn fo_probe(
    problem: &BloProblem,
    lambda: &FlatVector,
    cfg: &SgldConfig,
    limit: usize,
) -> Result<ProbeRecord> {
    cfg.validate()?;
    check_dense_size(problem.dim_theta(), problem.dim_lambda(), limit)?;
    let outer = problem.outer();
    let jac = problem.init_jacobian();
    let dim_lambda = problem.dim_lambda();
    let lr = cfg.epsilon / (2.0 * problem.temperature());
    let mut rng = seeded_rng(cfg.seed);
    let mut counters = Counters::default();

    let theta0 = problem.initial_theta(lambda)?;
    let mut s = DenseJacobian::initial(jac, problem.dim_theta(), dim_lambda);
    let mut g = g0(problem, lambda, &theta0)?;
    let mut v_prev = outer.grad_theta(lambda, &theta0)?;
    let mut theta_prev = theta0;
    let weight = 1.0 / cfg.samples as f64;
    let mut h_rec = FlatVector::zeros(dim_lambda, Space::Lambda);
    let mut h_exact = FlatVector::zeros(dim_lambda, Space::Lambda);
    let mut steps = Vec::with_capacity(cfg.chain_length());

    for m in 1..=cfg.chain_length() {
        let inner = problem.resolve_inner(&mut rng);
        let (theta_curr, _) =
            step_with(problem, &inner, lambda, &theta_prev, cfg.epsilon, cfg.kappa, &mut rng)?;
        check_iterate(&theta_curr, m)?;
        counters.inner_steps += 1;

        let fs = outer.sweep(lambda.as_slice(), theta_curr.as_slice(), None, None)?;
        let v = FlatVector::theta(fs.grad_theta)?;
        let gl = FlatVector::lambda(fs.grad_lambda)?;

        let lhs = s.left_product(&v)?;
        let g_prev_exact = s.left_product(&v_prev)?;
        let delta = theta_curr.sub(&theta_prev)?;
        let curv = outer.hvp_theta(lambda, &theta_prev, &delta)?;
        let rhs = g_prev_exact.add(&jac.left_product(&curv, dim_lambda)?)?;
        let rel_error = relative_error(rhs.as_slice(), lhs.as_slice(), PROBE_FLOOR);

        s.advance(&inner, lambda, &theta_prev, lr, &mut counters)?;
        g = gm_step_with(
            problem,
            &inner,
            lambda,
            &theta_prev,
            &theta_curr,
            &v,
            &g,
            cfg.epsilon,
            &mut counters,
        )?;
        let sample_exact = gl.add(&s.left_product(&v)?)?;
        let sample_rec = gl.add(&g)?;
        let cum_error = relative_error(
            sample_rec.as_slice(),
            sample_exact.as_slice(),
            PROBE_FLOOR,
        );
        let post = m > cfg.burn_in;
        if post {
            h_rec = h_rec.axpy(weight, &sample_rec)?;
            h_exact = h_exact.axpy(weight, &sample_exact)?;
        }
        steps.push(ProbeStep {
            step: m,
            rel_error,
            cum_error,
            post_burn_in: post,
        });
        v_prev = v;
        theta_prev = theta_curr;
    }
    Ok(ProbeRecord {
        steps,
        h_recursion: h_rec,
        h_exact,
        counters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ScalarField;
    use crate::problems::make_synth1d;

    #[test]
    fn linear_outer_makes_the_approximation_exact() {
        let f = ScalarField::new("linear", 2, 3, |tape, l, t| {
            let c = [tape.constant(1.0), tape.constant(-2.0), tape.constant(0.5)];
            tape.dot(&c, t) + 0.5 * tape.dot(l, l)
        });
        let lt = ScalarField::new("quad", 2, 3, |_tape, l, t| {
            let s = t[0] * t[0] + 2.0 * t[1] * t[1] + 3.0 * t[2] * t[2];
            0.5 * s + l[0] * t[0] + l[1] * (t[1] + t[2])
        });
        let p = BloProblem::new("lq", f, lt, 0.5).unwrap();
        let l = FlatVector::lambda(vec![0.2, -0.4]).unwrap();
        let cfg = SgldConfig::new(0.01, 1.0, 20, 20, 0).unwrap();
        let rec = fo_probe(&p, &l, &cfg, 1_000_000).unwrap();
        assert_eq!(rec.steps.len(), 40);
        assert!(rec.rel_errors().iter().all(|&e| e <= 1e-9));
    }

    #[test]
    fn burn_in_flag_flips_after_b() {
        let p = make_synth1d().with_temperature(0.01).unwrap();
        let l = FlatVector::lambda(vec![0.5]).unwrap();
        let cfg = SgldConfig::new(1e-4, 1.0, 7, 3, 0).unwrap();
        let rec = fo_probe(&p, &l, &cfg, 1_000_000).unwrap();
        let flags: Vec<bool> = rec.steps.iter().map(|s| s.post_burn_in).collect();
        assert_eq!(flags.iter().position(|&b| b), Some(7));
        assert!(rec.steps.iter().all(|s| s.rel_error.is_finite()));
    }
}
