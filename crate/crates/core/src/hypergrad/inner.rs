//! The inner solver every estimator shares: projected gradient descent on
//! `L_T` with a fixed learning rate, resolving the noise hook per step.

use crate::autodiff::ScalarField;
use crate::error::{BloError, Result};
use crate::problems::{BloProblem, BloRng};
use crate::sgld::check_iterate;
use crate::vector::FlatVector;

use super::Counters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSolver {
    pub steps: usize,
    pub lr: f64,
}

impl InnerSolver {
    pub fn new(steps: usize, lr: f64) -> Result<Self> {
        let s = Self { steps, lr };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(BloError::InvalidConfig(format!(
                "inner lr must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    /// Runs `steps` projected GD steps from `theta0` and returns the last iterate.
    pub fn solve(
        &self,
        problem: &BloProblem,
        lambda: &FlatVector,
        theta0: &FlatVector,
        rng: &mut BloRng,
        counters: &mut Counters,
    ) -> Result<FlatVector> {
        let mut theta = theta0.clone();
        for t in 1..=self.steps {
            let inner = problem.resolve_inner(rng);
            theta = gd_step(problem, &inner, lambda, &theta, self.lr, t)?;
            counters.inner_steps += 1;
            counters.gradient_sweeps += 1;
        }
        counters.hold(2);
        Ok(theta)
    }
}

/// `θ' = Π(θ − lr·∂L_T/∂θ)` for an already resolved inner loss.
pub(crate) fn gd_step(
    problem: &BloProblem,
    inner: &ScalarField,
    lambda: &FlatVector,
    theta: &FlatVector,
    lr: f64,
    step: usize,
) -> Result<FlatVector> {
    let grad = inner.grad_theta(lambda, theta)?;
    let next: Vec<f64> = theta
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .map(|(&t, &g)| t - lr * g)
        .collect();
    let next = FlatVector::theta(next).map_err(|_| BloError::Divergence {
        step,
        detail: "non-finite inner iterate".into(),
    })?;
    let next = problem.project_theta(&next);
    check_iterate(&next, step)?;
    Ok(next)
}
