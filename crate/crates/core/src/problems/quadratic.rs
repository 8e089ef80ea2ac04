//! Convex quadratic bi-level problem with a closed-form solution.
//!
//! Inner `L_T = ½ θᵀHθ + λᵀCθ` with symmetric positive definite `H`, outer
//! `L_V = ½‖θ - t‖² + ½‖λ - s‖²`. Then `θ*(λ) = -H⁻¹Cᵀλ` and the reduced
//! objective is itself a convex quadratic in `λ`, so the hypergradient and
//! the optimum are available from dense linear algebra.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::{seeded_rng, BloProblem, InitPolicy};
use crate::autodiff::ScalarField;
use crate::error::{BloError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticOptions {
    pub dim_theta: usize,
    pub dim_lambda: usize,
    pub condition_number: f64,
    pub seed: u64,
    /// Largest eigenvalue of `H`. Defaults to `condition_number`, so the
    /// spectrum spans `[1, condition_number]`.
    pub top_eigenvalue: Option<f64>,
    pub coupling: Coupling,
}

/// How the coupling `C` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coupling {
    /// `C ~ N(0, 1/n)` entrywise.
    #[default]
    Isotropic,
    /// `C = B·H` with `B ~ N(0, 1/n)`, so `θ*(λ) = -Bᵀλ` and the outer
    /// problem keeps the same conditioning whatever `H` is.
    Aligned,
}

#[derive(Clone)]
pub struct QuadraticBlo {
    pub problem: BloProblem,
    pub hessian: DMatrix<f64>,
    pub coupling: DMatrix<f64>,
    pub theta_target: DVector<f64>,
    pub lambda_target: DVector<f64>,
    pub eigenvalues: Vec<f64>,
    /// `dθ*/dλ = -H⁻¹Cᵀ`.
    response: DMatrix<f64>,
}

pub fn make_quadratic_blo(
    dim_theta: usize,
    dim_lambda: usize,
    condition_number: f64,
    seed: u64,
) -> Result<QuadraticBlo> {
    QuadraticBlo::build(QuadraticOptions {
        dim_theta,
        dim_lambda,
        condition_number,
        seed,
        top_eigenvalue: None,
        coupling: Coupling::Isotropic,
    })
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

impl QuadraticBlo {
    pub fn build(opts: QuadraticOptions) -> Result<Self> {
        let QuadraticOptions {
            dim_theta: n,
            dim_lambda: k,
            condition_number,
            seed,
            top_eigenvalue,
            coupling,
        } = opts;
        if !(condition_number >= 1.0) {
            return Err(BloError::InvalidConfig(format!(
                "condition number must be >= 1, got {condition_number}"
            )));
        }
        if n == 0 || k == 0 {
            return Err(BloError::InvalidConfig("empty quadratic problem".into()));
        }
        let top = top_eigenvalue.unwrap_or(condition_number);
        if !(top > 0.0) {
            return Err(BloError::InvalidConfig("top eigenvalue must be positive".into()));
        }
        let bottom = top / condition_number;
        let eigenvalues: Vec<f64> = (0..n)
            .map(|i| {
                if n == 1 {
                    bottom
                } else if i == n - 1 {
                    top
                } else {
                    bottom * condition_number.powf(i as f64 / (n - 1) as f64)
                }
            })
            .collect();

        let mut rng = seeded_rng(seed);
        let mut normal = |rows: usize, cols: usize| -> DMatrix<f64> {
            DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
        };
        let basis = normal(n, n).qr().q();
        let hessian = {
            let d = DMatrix::from_diagonal(&DVector::from_vec(eigenvalues.clone()));
            let h = &basis * d * basis.transpose();
            (&h + h.transpose()) * 0.5
        };
        let coupling = match coupling {
            Coupling::Isotropic => normal(k, n) / (n as f64).sqrt(),
            Coupling::Aligned => normal(k, n) / (n as f64).sqrt() * &hessian,
        };
        let theta_target = normal(n, 1).column(0).into_owned();
        let lambda_target = normal(k, 1).column(0).into_owned();

        let chol = hessian
            .clone()
            .cholesky()
            .ok_or_else(|| BloError::InvalidConfig("H is not positive definite".into()))?;
        let response = -chol.solve(&coupling.transpose());

        let h_rows = row_major(&hessian);
        let c_rows = row_major(&coupling);
        let zeros_n = vec![0.0; n];
        let zeros_k = vec![0.0; k];
        let inner = ScalarField::new("quadratic_inner", k, n, move |tape, lam, th| {
            let hth = tape.affine(&h_rows, th, &zeros_n);
            let cth = tape.affine(&c_rows, th, &zeros_k);
            tape.dot(th, &hth) * 0.5 + tape.dot(lam, &cth)
        });
        let t = theta_target.as_slice().to_vec();
        let s = lambda_target.as_slice().to_vec();
        let outer = ScalarField::new("quadratic_outer", k, n, move |tape, lam, th| {
            let dt = tape.sum(th.iter().zip(&t).map(|(&v, &c)| (v - c).square()));
            let ds = tape.sum(lam.iter().zip(&s).map(|(&v, &c)| (v - c).square()));
            (dt + ds) * 0.5
        });
        let resp = response.clone();
        let problem = BloProblem::new("quadratic", outer, inner, 1.0)?
            .with_init_policy(InitPolicy::IndependentFixed(vec![0.0; n]))?
            .with_inner_solution(Arc::new(move |l| {
                (&resp * DVector::from_column_slice(l)).as_slice().to_vec()
            }));
        let mut q = Self {
            problem,
            hessian,
            coupling,
            theta_target,
            lambda_target,
            eigenvalues,
            response,
        };
        let lam_star = q.optimal_lambda();
        let th_star = q.theta_star(&lam_star);
        q.problem = q.problem.clone().with_known_solution(lam_star, th_star);
        Ok(q)
    }

    pub fn dim_theta(&self) -> usize {
        self.hessian.nrows()
    }

    pub fn dim_lambda(&self) -> usize {
        self.coupling.nrows()
    }

    /// `-H⁻¹Cᵀ`.
    pub fn response(&self) -> &DMatrix<f64> {
        &self.response
    }

    pub fn theta_star(&self, lambda: &[f64]) -> Vec<f64> {
        (&self.response * DVector::from_column_slice(lambda))
            .as_slice()
            .to_vec()
    }

    /// Reduced objective `F(λ) = L_V(λ, θ*(λ))`.
    pub fn reduced_objective(&self, lambda: &[f64]) -> f64 {
        let l = DVector::from_column_slice(lambda);
        let th = &self.response * &l;
        0.5 * (th - &self.theta_target).norm_squared() + 0.5 * (l - &self.lambda_target).norm_squared()
    }

    /// `∇F(λ) = Pᵀ(Pλ - t) + (λ - s)` with `P = -H⁻¹Cᵀ`.
    pub fn analytic_hypergradient(&self, lambda: &[f64]) -> Vec<f64> {
        let l = DVector::from_column_slice(lambda);
        let g = self.response.transpose() * (&self.response * &l - &self.theta_target)
            + (l - &self.lambda_target);
        g.as_slice().to_vec()
    }

    /// Hessian of the reduced objective, `PᵀP + I`.
    pub fn reduced_hessian(&self) -> DMatrix<f64> {
        self.response.transpose() * &self.response
            + DMatrix::identity(self.dim_lambda(), self.dim_lambda())
    }

    /// `λ* = (PᵀP + I)⁻¹ (Pᵀt + s)`.
    pub fn optimal_lambda(&self) -> Vec<f64> {
        let rhs = self.response.transpose() * &self.theta_target + &self.lambda_target;
        let sol = self
            .reduced_hessian()
            .cholesky()
            .expect("PᵀP + I is positive definite")
            .solve(&rhs);
        sol.as_slice().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::FlatVector;

    #[test]
    fn rejects_condition_below_one() {
        assert!(make_quadratic_blo(3, 2, 0.5, 0).is_err());
    }

    #[test]
    fn identity_hessian_at_unit_condition() {
        let q = make_quadratic_blo(4, 2, 1.0, 3).unwrap();
        let eye = DMatrix::<f64>::identity(4, 4);
        assert!((&q.hessian - &eye).amax() < 1e-12);
        let lam = [0.3, -0.7];
        let th = q.theta_star(&lam);
        let expected = -(q.coupling.transpose() * DVector::from_column_slice(&lam));
        for (a, b) in th.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eigenvalue_ratio_matches_condition_number() {
        for &kappa in &[10.0, 1000.0] {
            let q = make_quadratic_blo(6, 3, kappa, 1).unwrap();
            let eig = q.hessian.clone().symmetric_eigen().eigenvalues;
            let ratio = eig.max() / eig.min();
            assert!((ratio / kappa - 1.0).abs() < 1e-8, "ratio {ratio}");
        }
    }

    #[test]
    fn top_eigenvalue_rescales_spectrum() {
        let q = QuadraticBlo::build(QuadraticOptions {
            dim_theta: 5,
            dim_lambda: 2,
            condition_number: 1000.0,
            seed: 0,
            top_eigenvalue: Some(10.0),
            coupling: Coupling::Isotropic,
        })
        .unwrap();
        assert!((q.eigenvalues[0] - 0.01).abs() < 1e-15);
        assert_eq!(q.eigenvalues[4], 10.0);
    }

    #[test]
    fn aligned_coupling_makes_response_independent_of_h() {
        let q = QuadraticBlo::build(QuadraticOptions {
            dim_theta: 6,
            dim_lambda: 3,
            condition_number: 1000.0,
            seed: 1,
            top_eigenvalue: Some(10.0),
            coupling: Coupling::Aligned,
        })
        .unwrap();
        let b = q.coupling.clone() * q.hessian.clone().try_inverse().unwrap();
        let diff = q.response() + b.transpose();
        assert!(diff.amax() < 1e-8);
    }

    #[test]
    fn closed_form_zeroes_inner_gradient() {
        let q = make_quadratic_blo(5, 3, 10.0, 2).unwrap();
        let lam = FlatVector::lambda(vec![0.4, -1.2, 0.8]).unwrap();
        let th = FlatVector::theta(q.theta_star(lam.as_slice())).unwrap();
        let g = q.problem.inner_loss().grad_theta(&lam, &th).unwrap();
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn analytic_hypergradient_vanishes_at_optimum() {
        let q = make_quadratic_blo(5, 3, 10.0, 4).unwrap();
        let g = q.analytic_hypergradient(&q.optimal_lambda());
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn analytic_hypergradient_matches_reduced_objective_differences() {
        let q = make_quadratic_blo(5, 3, 10.0, 9).unwrap();
        let lam = [0.2, 0.5, -0.3];
        let g = q.analytic_hypergradient(&lam);
        let h = 1e-5;
        for j in 0..3 {
            let mut lp = lam;
            let mut lm = lam;
            lp[j] += h;
            lm[j] -= h;
            let fd = (q.reduced_objective(&lp) - q.reduced_objective(&lm)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-8);
        }
    }
}
