//! Implicit-function-theorem estimators: Neumann series, conjugate gradient
//! and the warm-started AmIGO variants.

use crate::autodiff::ScalarField;
use crate::error::{BloError, Result};
use crate::problems::{BloProblem, BloRng};
use crate::vector::FlatVector;

use super::inner::InnerSolver;
use super::{Counters, HypergradResult};

/// Growth of the Neumann terms beyond this factor counts as divergence.
pub const NEUMANN_GROWTH_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeumannConfig {
    pub alpha: f64,
    pub terms: usize,
    pub inner: InnerSolver,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig {
    pub gamma: f64,
    pub iterations: usize,
    pub inner: InnerSolver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmigoMode {
    Sgd,
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmigoConfig {
    pub mode: AmigoMode,
    pub steps: usize,
    /// Step size on the auxiliary quadratic in SGD mode.
    pub lr: f64,
    pub inner: InnerSolver,
}

/// Everything the IFT assembly needs at the inner solution.
struct Stationary {
    theta: FlatVector,
    inner: ScalarField,
    grad_lambda: FlatVector,
    grad_theta: FlatVector,
    value: f64,
}

fn settle(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta0: &FlatVector,
    solver: &InnerSolver,
    rng: &mut BloRng,
    counters: &mut Counters,
) -> Result<Stationary> {
    solver.validate()?;
    let theta = solver.solve(problem, lambda, theta0, rng, counters)?;
    // One draw of the inner loss for every Hessian product of this estimate.
    let inner = problem.resolve_inner(rng);
    let fs = problem
        .outer()
        .sweep(lambda.as_slice(), theta.as_slice(), None, None)?;
    counters.gradient_sweeps += 1;
    Ok(Stationary {
        theta,
        inner,
        grad_lambda: FlatVector::lambda(fs.grad_lambda)?,
        grad_theta: FlatVector::theta(fs.grad_theta)?,
        value: fs.value,
    })
}

fn finish(
    lambda: &FlatVector,
    st: Stationary,
    x: &FlatVector,
    scale: f64,
    counters: &mut Counters,
    amigo_z: Option<FlatVector>,
) -> Result<HypergradResult> {
    let mixed = st.inner.mixed_vhp(lambda, &st.theta, x)?;
    counters.second_order_sweeps += 1;
    // θ̂ is treated as a stationary point, so θ⁽⁰⁾ contributes nothing.
    let h = st.grad_lambda.axpy(-scale, &mixed)?;
    Ok(HypergradResult {
        h,
        objective: st.value,
        g_trace: Vec::new(),
        probe_errors: None,
        counters: *counters,
        theta_last: st.theta,
        amigo_z,
    })
}

/// `h = ∂f/∂λ − α·(∂²L_T/∂λ∂θ)·Σ_{k≤i} v_k`, `v_{k+1} = v_k − α·H·v_k`.
pub fn ift_neumann(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta0: &FlatVector,
    cfg: &NeumannConfig,
    rng: &mut BloRng,
) -> Result<HypergradResult> {
    if !(cfg.alpha > 0.0) {
        return Err(BloError::InvalidConfig(format!(
            "neumann alpha must be positive, got {}",
            cfg.alpha
        )));
    }
    let mut counters = Counters::default();
    let st = settle(problem, lambda, theta0, &cfg.inner, rng, &mut counters)?;
    let v0_norm = st.grad_theta.norm();
    let mut v = st.grad_theta.clone();
    let mut p = v.clone();
    for k in 1..=cfg.terms {
        let hv = st.inner.hvp_theta(lambda, &st.theta, &v)?;
        counters.second_order_sweeps += 1;
        counters.aux_steps += 1;
        v = v.axpy(-cfg.alpha, &hv)?;
        if v.norm() > NEUMANN_GROWTH_LIMIT * v0_norm.max(f64::MIN_POSITIVE) {
            return Err(BloError::Divergence {
                step: k,
                detail: format!("neumann term grew to {:e}", v.norm()),
            });
        }
        p = p.add(&v)?;
    }
    counters.hold(4);
    finish(lambda, st, &p, cfg.alpha, &mut counters, None)
}

/// Outcome of a CG solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CgSolve {
    pub x: FlatVector,
    pub iterations: usize,
    /// A direction with non-positive curvature stopped the solve early.
    pub breakdown: bool,
}

/// Solves `(H + γI)x = b` from `x0` with at most `iterations` CG steps.
#[allow(clippy::too_many_arguments)]
pub fn conjugate_gradient(
    field: &ScalarField,
    lambda: &FlatVector,
    theta: &FlatVector,
    b: &FlatVector,
    x0: &FlatVector,
    gamma: f64,
    iterations: usize,
    counters: &mut Counters,
) -> Result<CgSolve> {
    let apply = |x: &FlatVector, counters: &mut Counters| -> Result<FlatVector> {
        counters.second_order_sweeps += 1;
        field.hvp_theta(lambda, theta, x)?.axpy(gamma, x)
    };
    let mut x = x0.clone();
    let mut r = if x0.max_abs() == 0.0 {
        b.clone()
    } else {
        b.sub(&apply(&x, counters)?)?
    };
    let mut d = r.clone();
    let mut rr = r.dot(&r)?;
    let tol = 1e-30 * b.dot(b)?.max(1e-300);
    let mut done = 0;
    for _ in 0..iterations {
        if rr <= tol {
            break;
        }
        let ad = apply(&d, counters)?;
        counters.aux_steps += 1;
        done += 1;
        let curv = d.dot(&ad)?;
        if curv <= 0.0 || !curv.is_finite() {
            return Ok(CgSolve {
                x,
                iterations: done,
                breakdown: true,
            });
        }
        let a = rr / curv;
        x = x.axpy(a, &d)?;
        r = r.axpy(-a, &ad)?;
        let rr_next = r.dot(&r)?;
        d = r.axpy(rr_next / rr, &d)?;
        rr = rr_next;
    }
    counters.hold(6);
    Ok(CgSolve {
        x,
        iterations: done,
        breakdown: false,
    })
}

/// `h = ∂f/∂λ − (∂²L_T/∂λ∂θ)·x` with `(H + γI)x = ∂f/∂θ` solved by CG from zero.
pub fn ift_cg(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta0: &FlatVector,
    cfg: &CgConfig,
    rng: &mut BloRng,
) -> Result<HypergradResult> {
    if !(cfg.gamma >= 0.0) {
        return Err(BloError::InvalidConfig(format!(
            "cg gamma must be non-negative, got {}",
            cfg.gamma
        )));
    }
    let mut counters = Counters::default();
    let st = settle(problem, lambda, theta0, &cfg.inner, rng, &mut counters)?;
    let zero = FlatVector::zeros(st.grad_theta.len(), st.grad_theta.space());
    let solve = conjugate_gradient(
        &st.inner,
        lambda,
        &st.theta,
        &st.grad_theta,
        &zero,
        cfg.gamma,
        cfg.iterations,
        &mut counters,
    )?;
    counters.cg_breakdowns += usize::from(solve.breakdown);
    finish(lambda, st, &solve.x, 1.0, &mut counters, None)
}

/// AmIGO: iterate `z` on `½zᵀHz − bᵀz` from the previous call's `z`, then
/// assemble as in [`ift_cg`]. The new `z` is returned in the result.
pub fn amigo(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta0: &FlatVector,
    cfg: &AmigoConfig,
    warm: Option<&FlatVector>,
    rng: &mut BloRng,
) -> Result<HypergradResult> {
    let mut counters = Counters::default();
    let st = settle(problem, lambda, theta0, &cfg.inner, rng, &mut counters)?;
    let b = &st.grad_theta;
    let z0 = match warm {
        Some(z) if z.len() == b.len() => z.clone(),
        _ => FlatVector::zeros(b.len(), b.space()),
    };
    let z = match cfg.mode {
        AmigoMode::Cg => {
            let solve = conjugate_gradient(
                &st.inner, lambda, &st.theta, b, &z0, 0.0, cfg.steps, &mut counters,
            )?;
            counters.cg_breakdowns += usize::from(solve.breakdown);
            solve.x
        }
        AmigoMode::Sgd => {
            if !(cfg.lr > 0.0) {
                return Err(BloError::InvalidConfig(format!(
                    "amigo lr must be positive, got {}",
                    cfg.lr
                )));
            }
            let mut z = z0;
            let start = z.norm().max(b.norm()).max(f64::MIN_POSITIVE);
            for k in 1..=cfg.steps {
                let hz = st.inner.hvp_theta(lambda, &st.theta, &z)?;
                counters.second_order_sweeps += 1;
                counters.aux_steps += 1;
                z = z.axpy(-cfg.lr, &hz.sub(b)?)?;
                if z.norm() > NEUMANN_GROWTH_LIMIT * start {
                    return Err(BloError::Divergence {
                        step: k,
                        detail: format!("amigo z grew to {:e}", z.norm()),
                    });
                }
            }
            counters.hold(4);
            z
        }
    };
    finish(lambda, st, &z.clone(), 1.0, &mut counters, Some(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic_blo, seeded_rng};
    use crate::vector::relative_error;

    fn solver() -> InnerSolver {
        InnerSolver::new(2000, 0.05).unwrap()
    }

    #[test]
    fn cg_with_dim_iterations_is_exact_on_quadratic() {
        let q = make_quadratic_blo(5, 3, 10.0, 1).unwrap();
        let l = FlatVector::lambda(vec![0.2, -0.5, 0.9]).unwrap();
        let th0 = q.problem.initial_theta(&l).unwrap();
        let cfg = CgConfig {
            gamma: 0.0,
            iterations: 5,
            inner: solver(),
        };
        let r = ift_cg(&q.problem, &l, &th0, &cfg, &mut seeded_rng(0)).unwrap();
        let exact = q.analytic_hypergradient(l.as_slice());
        assert!(relative_error(r.h.as_slice(), &exact, 1e-12) < 1e-8);
    }

    #[test]
    fn neumann_zero_terms_is_first_correction() {
        let q = make_quadratic_blo(4, 2, 10.0, 2).unwrap();
        let l = FlatVector::lambda(vec![0.3, 0.1]).unwrap();
        let th0 = q.problem.initial_theta(&l).unwrap();
        let inner = InnerSolver::new(50, 0.05).unwrap();
        let cfg = NeumannConfig {
            alpha: 0.05,
            terms: 0,
            inner,
        };
        let r = ift_neumann(&q.problem, &l, &th0, &cfg, &mut seeded_rng(0)).unwrap();
        let mut c = Counters::default();
        let th = inner.solve(&q.problem, &l, &th0, &mut seeded_rng(0), &mut c).unwrap();
        let f = q.problem.outer();
        let v = f.grad_theta(&l, &th).unwrap();
        let mixed = q.problem.inner_loss().mixed_vhp(&l, &th, &v).unwrap();
        let expected = f.grad_lambda(&l, &th).unwrap().axpy(-0.05, &mixed).unwrap();
        assert_eq!(r.h, expected);
    }

    #[test]
    fn neumann_divergence_is_reported() {
        let q = make_quadratic_blo(3, 2, 10.0, 0).unwrap();
        let l = FlatVector::lambda(vec![0.3, 0.1]).unwrap();
        let th0 = q.problem.initial_theta(&l).unwrap();
        let cfg = NeumannConfig {
            alpha: 0.99,
            terms: 40,
            inner: InnerSolver::new(10, 0.05).unwrap(),
        };
        let err = ift_neumann(&q.problem, &l, &th0, &cfg, &mut seeded_rng(0)).unwrap_err();
        assert!(matches!(err, BloError::Divergence { .. }));
    }

    #[test]
    fn amigo_cg_cold_equals_ift_cg() {
        let q = make_quadratic_blo(5, 3, 10.0, 3).unwrap();
        let l = FlatVector::lambda(vec![0.4, 0.0, -0.3]).unwrap();
        let th0 = q.problem.initial_theta(&l).unwrap();
        let inner = InnerSolver::new(100, 0.05).unwrap();
        let a = amigo(
            &q.problem,
            &l,
            &th0,
            &AmigoConfig {
                mode: AmigoMode::Cg,
                steps: 3,
                lr: 0.05,
                inner,
            },
            None,
            &mut seeded_rng(0),
        )
        .unwrap();
        let c = ift_cg(
            &q.problem,
            &l,
            &th0,
            &CgConfig {
                gamma: 0.0,
                iterations: 3,
                inner,
            },
            &mut seeded_rng(0),
        )
        .unwrap();
        assert_eq!(a.h, c.h);
    }

    #[test]
    fn zero_rhs_gives_direct_gradient() {
        let q = make_quadratic_blo(3, 2, 10.0, 5).unwrap();
        // θ* = t makes ∂f/∂θ vanish; build an outer loss with that property.
        let l = FlatVector::lambda(vec![0.1, 0.2]).unwrap();
        let th_star = q.theta_star(l.as_slice());
        let target = th_star.clone();
        let outer = ScalarField::new("pinned", 2, 3, move |tape, lam, th| {
            let d: Vec<_> = th.iter().zip(&target).map(|(&t, &s)| t - s).collect();
            0.5 * tape.dot(&d, &d) + tape.sum(lam.iter().copied())
        });
        let p = BloProblem::new("pinned", outer, q.problem.inner_loss().clone(), 1.0).unwrap();
        let th0 = FlatVector::theta(th_star).unwrap();
        let cfg = CgConfig {
            gamma: 0.01,
            iterations: 10,
            inner: InnerSolver::new(0, 0.05).unwrap(),
        };
        let r = ift_cg(&p, &l, &th0, &cfg, &mut seeded_rng(0)).unwrap();
        assert_eq!(r.h.as_slice(), &[1.0, 1.0]);
    }
}
