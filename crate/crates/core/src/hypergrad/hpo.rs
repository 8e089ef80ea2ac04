//! The HPO-SGLD estimator: an SGLD chain on `p(θ|λ)` with the `g_m`
//! recursion carried alongside it.

use crate::autodiff::ScalarField;
use crate::error::Result;
use crate::problems::{seeded_rng, BloProblem, BloRng};
use crate::sgld::{check_iterate, step_with, SgldConfig};
use crate::vector::{FlatVector, Space};

use super::{Counters, HypergradResult};

/// `g₀ = ∂f(λ,θ⁽⁰⁾)/∂θ · dθ⁽⁰⁾/dλ`.
pub fn g0(problem: &BloProblem, lambda: &FlatVector, theta0: &FlatVector) -> Result<FlatVector> {
    let jac = problem.init_jacobian();
    if jac.is_zero() {
        return Ok(FlatVector::zeros(problem.dim_lambda(), Space::Lambda));
    }
    let v = problem.outer().grad_theta(lambda, theta0)?;
    jac.left_product(&v, problem.dim_lambda())
}

/// One step of the recursion using the noise-free inner loss.
pub fn gm_step(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta_prev: &FlatVector,
    theta_curr: &FlatVector,
    g_prev: &FlatVector,
    epsilon: f64,
) -> Result<FlatVector> {
    let mut counters = Counters::default();
    let v = problem.outer().grad_theta(lambda, theta_curr)?;
    gm_step_with(
        problem,
        problem.inner_loss(),
        lambda,
        theta_prev,
        theta_curr,
        &v,
        g_prev,
        epsilon,
        &mut counters,
    )
}

/// `g_m = g_{m−1} + (θ⁽ᵐ⁾−θ⁽ᵐ⁻¹⁾)·∂²f/∂θ²·J₀ + (ε/2)·v·(B + A·J₀)` with
/// `v = ∂f(λ,θ⁽ᵐ⁾)/∂θ`, `J₀ = dθ⁽⁰⁾/dλ` and `A`, `B` the second derivatives of
/// `log p = −L_T/τ` at `θ⁽ᵐ⁻¹⁾`. `inner` is the inner loss as resolved for
/// the chain step that produced `θ⁽ᵐ⁾`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gm_step_with(
    problem: &BloProblem,
    inner: &ScalarField,
    lambda: &FlatVector,
    theta_prev: &FlatVector,
    theta_curr: &FlatVector,
    v: &FlatVector,
    g_prev: &FlatVector,
    epsilon: f64,
    counters: &mut Counters,
) -> Result<FlatVector> {
    let jac = problem.init_jacobian();
    let dim_lambda = problem.dim_lambda();
    let mut g = g_prev.clone();
    if !jac.is_zero() {
        let delta = theta_curr.sub(theta_prev)?;
        let curv = problem.outer().hvp_theta(lambda, theta_prev, &delta)?;
        counters.second_order_sweeps += 1;
        g = g.add(&jac.left_product(&curv, dim_lambda)?)?;
    }
    let (mixed, hvp) = inner.contract(lambda, theta_prev, v)?;
    counters.second_order_sweeps += 1;
    // ∂²log p = −(1/τ)·∂²L_T, so (ε/2)·log-p terms carry −ε/(2τ).
    let c = -epsilon / (2.0 * problem.temperature());
    g = g.axpy(c, &mixed)?;
    if !jac.is_zero() {
        g = g.axpy(c, &jac.left_product(&hvp, dim_lambda)?)?;
    }
    Ok(g)
}

/// Chain settings plus the per-call options the outer loop needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HpoOptions {
    pub record_g_trace: bool,
}

impl Default for HpoOptions {
    fn default() -> Self {
        Self {
            record_g_trace: true,
        }
    }
}

/// Runs the chain from the init policy with a stream seeded by `cfg.seed`.
pub fn hpo_sgld_hypergrad(
    problem: &BloProblem,
    lambda: &FlatVector,
    cfg: &SgldConfig,
) -> Result<HypergradResult> {
    let theta0 = problem.initial_theta(lambda)?;
    let mut rng = seeded_rng(cfg.seed);
    hpo_sgld_from(problem, lambda, &theta0, cfg, &mut rng, HpoOptions::default())
}

/// `h = (1/M)·Σ_{m>B} [∂f(λ,θ⁽ᵐ⁾)/∂λ + g_m]` from an explicit start and stream.
pub fn hpo_sgld_from(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta0: &FlatVector,
    cfg: &SgldConfig,
    rng: &mut BloRng,
    opts: HpoOptions,
) -> Result<HypergradResult> {
    cfg.validate()?;
    let outer = problem.outer();
    let mut counters = Counters::default();
    let mut g = g0(problem, lambda, theta0)?;
    let mut h = FlatVector::zeros(problem.dim_lambda(), Space::Lambda);
    let mut objective = 0.0;
    let mut g_trace = Vec::new();
    let weight = 1.0 / cfg.samples as f64;
    let mut theta_prev = theta0.clone();
    for m in 1..=cfg.chain_length() {
        let inner = problem.resolve_inner(rng);
        let (theta_curr, _) =
            step_with(problem, &inner, lambda, &theta_prev, cfg.epsilon, cfg.kappa, rng)?;
        check_iterate(&theta_curr, m)?;
        counters.inner_steps += 1;
        counters.gradient_sweeps += 1;

        let fs = outer.sweep(lambda.as_slice(), theta_curr.as_slice(), None, None)?;
        counters.gradient_sweeps += 1;
        let v = FlatVector::theta(fs.grad_theta)?;
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
        if opts.record_g_trace {
            g_trace.push(g.norm());
        }
        if m > cfg.burn_in {
            let df = FlatVector::lambda(fs.grad_lambda)?;
            h = h.axpy(weight, &df.add(&g)?)?;
            objective += weight * fs.value;
        }
        // θ_prev, θ_curr, v, g, h.
        counters.hold(5);
        theta_prev = theta_curr;
    }
    Ok(HypergradResult {
        h,
        objective,
        g_trace,
        probe_errors: None,
        counters,
        theta_last: theta_prev,
        amigo_z: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic_blo, make_synth1d, InitPolicy};

    fn quad_identity() -> BloProblem {
        let f = ScalarField::new("half-norm", 2, 2, |tape, _l, t| {
            0.5 * tape.dot(t, t)
        });
        let lt = ScalarField::new("coupled", 2, 2, |tape, l, t| {
            0.5 * tape.dot(t, t) - tape.dot(l, t)
        });
        BloProblem::new("id", f, lt, 1.0)
            .unwrap()
            .with_init_policy(InitPolicy::IdentityOfLambda)
            .unwrap()
    }

    #[test]
    fn g0_contracts() {
        let p = make_synth1d();
        let l = FlatVector::lambda(vec![0.5]).unwrap();
        let th = FlatVector::theta(vec![0.5]).unwrap();
        assert_eq!(g0(&p, &l, &th).unwrap().as_slice(), &[0.0]);

        let q = quad_identity();
        let l = FlatVector::lambda(vec![1.0, 2.0]).unwrap();
        let th = q.initial_theta(&l).unwrap();
        assert_eq!(g0(&q, &l, &th).unwrap().as_slice(), &[1.0, 2.0]);

        let flat = ScalarField::new("lam-only", 2, 2, |tape, l, _t| tape.dot(l, l));
        let q = BloProblem::new("id", flat.clone(), flat, 1.0)
            .unwrap()
            .with_init_policy(InitPolicy::IdentityOfLambda)
            .unwrap();
        assert_eq!(g0(&q, &l, &th).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_epsilon_independent_init_keeps_g() {
        let p = make_synth1d();
        let l = FlatVector::lambda(vec![0.5]).unwrap();
        let a = FlatVector::theta(vec![0.4]).unwrap();
        let b = FlatVector::theta(vec![0.6]).unwrap();
        let g = FlatVector::lambda(vec![0.25]).unwrap();
        assert_eq!(gm_step(&p, &l, &a, &b, &g, 0.0).unwrap(), g);
    }

    #[test]
    fn independent_init_leaves_only_mixed_term() {
        let p = make_synth1d().with_temperature(1.0).unwrap();
        let l = FlatVector::lambda(vec![0.5]).unwrap();
        let a = FlatVector::theta(vec![0.4]).unwrap();
        let b = FlatVector::theta(vec![0.6]).unwrap();
        let g = FlatVector::lambda(vec![0.0]).unwrap();
        let eps = 0.1;
        let out = gm_step(&p, &l, &a, &b, &g, eps).unwrap();
        // v = ∂f/∂θ at θ=0.6: −2(λ−θ) + 2(θ−½) = 0.4; B = −∂²L_T/∂λ∂θ = −2λ = −1.
        let expected = (eps / 2.0) * 0.4 * -1.0;
        assert!((out.get(0) - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_outer_gives_zero_hypergradient() {
        let q = make_quadratic_blo(3, 2, 10.0, 0).unwrap();
        let zero = ScalarField::new("const", 2, 3, |tape, _l, _t| tape.constant(1.5));
        let p = BloProblem::new("c", zero, q.problem.inner_loss().clone(), 1.0).unwrap();
        let l = FlatVector::lambda(vec![0.3, -0.2]).unwrap();
        let cfg = SgldConfig::new(0.05, 1.0, 10, 10, 4).unwrap();
        let r = hpo_sgld_hypergrad(&p, &l, &cfg).unwrap();
        assert_eq!(r.h.as_slice(), &[0.0, 0.0]);
        assert_eq!(r.objective, 1.5);
    }

    #[test]
    fn retained_vectors_do_not_grow_with_chain_length() {
        let p = make_synth1d().with_temperature(0.01).unwrap();
        let l = FlatVector::lambda(vec![0.5]).unwrap();
        let short = hpo_sgld_hypergrad(&p, &l, &SgldConfig::new(1e-4, 1.0, 5, 5, 0).unwrap()).unwrap();
        let long = hpo_sgld_hypergrad(&p, &l, &SgldConfig::new(1e-4, 1.0, 500, 500, 0).unwrap()).unwrap();
        assert_eq!(short.counters.peak_vectors, long.counters.peak_vectors);
        assert!(long.counters.peak_vectors <= 6);
    }
}
