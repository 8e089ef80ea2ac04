//! Differentiation through the unrolled inner gradient descent.

use crate::autodiff::ScalarField;
use crate::error::{BloError, Result};
use crate::problems::{BloProblem, BloRng, InitJacobian};
use crate::vector::{FlatVector, Space};

use super::inner::{gd_step, InnerSolver};
use super::{Counters, HypergradResult};

/// Largest dense Jacobian, in entries, that FMD will carry.
pub const FMD_ENTRY_LIMIT: usize = 1_000_000;

struct OuterAt {
    value: f64,
    grad_lambda: FlatVector,
    grad_theta: FlatVector,
}

fn outer_at(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta: &FlatVector,
    counters: &mut Counters,
) -> Result<OuterAt> {
    let fs = problem
        .outer()
        .sweep(lambda.as_slice(), theta.as_slice(), None, None)?;
    counters.gradient_sweeps += 1;
    Ok(OuterAt {
        value: fs.value,
        grad_lambda: FlatVector::lambda(fs.grad_lambda)?,
        grad_theta: FlatVector::theta(fs.grad_theta)?,
    })
}

fn result(
    f: OuterAt,
    through_theta: FlatVector,
    theta_last: FlatVector,
    counters: Counters,
) -> Result<HypergradResult> {
    Ok(HypergradResult {
        h: f.grad_lambda.add(&through_theta)?,
        objective: f.value,
        g_trace: Vec::new(),
        probe_errors: None,
        counters,
        theta_last,
        amigo_z: None,
    })
}

/// Reverse mode: store `θ⁰…θᵀ` and the resolved inner losses, then sweep
/// the adjoint back with Hessian products.
pub fn rmd(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta0: &FlatVector,
    solver: &InnerSolver,
    rng: &mut BloRng,
) -> Result<HypergradResult> {
    solver.validate()?;
    let mut counters = Counters::default();
    let mut iterates = Vec::with_capacity(solver.steps + 1);
    let mut fields: Vec<ScalarField> = Vec::with_capacity(solver.steps);
    iterates.push(theta0.clone());
    for t in 1..=solver.steps {
        let inner = problem.resolve_inner(rng);
        let next = gd_step(problem, &inner, lambda, &iterates[t - 1], solver.lr, t)?;
        counters.inner_steps += 1;
        counters.gradient_sweeps += 1;
        iterates.push(next);
        fields.push(inner);
    }
    counters.stored_iterates = iterates.len();
    // Stored iterates plus the adjoint, the λ accumulator and one product.
    counters.hold(iterates.len() + 3);
    let theta_last = iterates.last().expect("initial iterate").clone();
    let f = outer_at(problem, lambda, &theta_last, &mut counters)?;
    let jac = problem.init_jacobian();
    let dim_lambda = problem.dim_lambda();
    let mut alpha = f.grad_theta.clone();
    let mut acc = FlatVector::zeros(dim_lambda, Space::Lambda);
    for t in (1..=solver.steps).rev() {
        let (mixed, hvp) = fields[t - 1].contract(lambda, &iterates[t - 1], &alpha)?;
        counters.second_order_sweeps += 1;
        acc = acc.axpy(-solver.lr, &mixed)?;
        alpha = alpha.axpy(-solver.lr, &hvp)?;
    }
    let through = acc.add(&jac.left_product(&alpha, dim_lambda)?)?;
    result(f, through, theta_last, counters)
}

/// First-order RMD: all second-order terms dropped.
pub fn rmd_fo(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta0: &FlatVector,
    solver: &InnerSolver,
    rng: &mut BloRng,
) -> Result<HypergradResult> {
    solver.validate()?;
    let mut counters = Counters::default();
    let theta = solver.solve(problem, lambda, theta0, rng, &mut counters)?;
    counters.stored_iterates = 1;
    let jac = problem.init_jacobian();
    let dim_lambda = problem.dim_lambda();
    let f = outer_at(problem, lambda, &theta, &mut counters)?;
    let through = jac.left_product(&f.grad_theta, dim_lambda)?;
    result(f, through, theta, counters)
}

/// Dense `dim(θ) × dim(λ)` Jacobian stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseJacobian {
    pub columns: Vec<FlatVector>,
}

impl DenseJacobian {
    pub fn initial(jac: InitJacobian, dim_theta: usize, dim_lambda: usize) -> Self {
        let columns = (0..dim_lambda)
            .map(|j| match jac {
                InitJacobian::Zero => FlatVector::zeros(dim_theta, Space::Theta),
                InitJacobian::Identity => FlatVector::basis(dim_theta, j, Space::Theta),
            })
            .collect();
        Self { columns }
    }

    /// `vᵀ·S` as a λ-space vector.
    pub fn left_product(&self, v: &FlatVector) -> Result<FlatVector> {
        let vals = self
            .columns
            .iter()
            .map(|c| v.dot(c))
            .collect::<Result<Vec<f64>>>()?;
        FlatVector::lambda(vals)
    }

    /// `S ← S − γ·(H·S + ∂²L/∂θ∂λ)` for one GD step at `θ`, one sweep per column.
    pub fn advance(
        &mut self,
        inner: &ScalarField,
        lambda: &FlatVector,
        theta: &FlatVector,
        lr: f64,
        counters: &mut Counters,
    ) -> Result<()> {
        let dim_lambda = self.columns.len();
        for (j, col) in self.columns.iter_mut().enumerate() {
            let e = FlatVector::basis(dim_lambda, j, Space::Lambda);
            let s = inner.sweep(lambda.as_slice(), theta.as_slice(), Some(e.as_slice()), Some(col.as_slice()))?;
            counters.second_order_sweeps += 1;
            *col = col.axpy(-lr, &FlatVector::theta(s.tangent_grad_theta)?)?;
        }
        Ok(())
    }
}

pub(crate) fn check_dense_size(dim_theta: usize, dim_lambda: usize, limit: usize) -> Result<()> {
    let entries = dim_theta.saturating_mul(dim_lambda);
    if entries > limit {
        return Err(BloError::Infeasible { entries, limit });
    }
    Ok(())
}

/// Forward mode: carry `S_t = dθ_t/dλ` densely through the unroll.
pub fn fmd(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta0: &FlatVector,
    solver: &InnerSolver,
    limit: usize,
    rng: &mut BloRng,
) -> Result<HypergradResult> {
    Ok(fmd_with_jacobian(problem, lambda, theta0, solver, limit, rng)?.0)
}

/// [`fmd`] that also returns the final Jacobian `S_T`.
pub fn fmd_with_jacobian(
    problem: &BloProblem,
    lambda: &FlatVector,
    theta0: &FlatVector,
    solver: &InnerSolver,
    limit: usize,
    rng: &mut BloRng,
) -> Result<(HypergradResult, DenseJacobian)> {
    solver.validate()?;
    check_dense_size(problem.dim_theta(), problem.dim_lambda(), limit)?;
    let mut counters = Counters::default();
    let mut s = DenseJacobian::initial(
        problem.init_jacobian(),
        problem.dim_theta(),
        problem.dim_lambda(),
    );
    let mut theta = theta0.clone();
    for t in 1..=solver.steps {
        let inner = problem.resolve_inner(rng);
        s.advance(&inner, lambda, &theta, solver.lr, &mut counters)?;
        theta = gd_step(problem, &inner, lambda, &theta, solver.lr, t)?;
        counters.inner_steps += 1;
        counters.gradient_sweeps += 1;
    }
    counters.stored_iterates = 1;
    counters.hold(problem.dim_lambda() + 2);
    let f = outer_at(problem, lambda, &theta, &mut counters)?;
    let through = s.left_product(&f.grad_theta)?;
    Ok((result(f, through, theta, counters)?, s))
}
