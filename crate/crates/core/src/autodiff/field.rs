use std::fmt;
use std::sync::Arc;

use super::tape::{Tape, Var};
use crate::error::{BloError, Result};
use crate::vector::{FlatVector, Space};

type FieldFn = dyn for<'t> Fn(&'t Tape, &[Var<'t>], &[Var<'t>]) -> Var<'t> + Send + Sync;

/// A scalar function `φ(λ, θ)` written against the tape primitives.
///
/// Fields are immutable and cheap to clone; every evaluation records onto a
/// fresh tape, so calls are re-entrant and deterministic.
#[derive(Clone)]
pub struct ScalarField {
    name: Arc<str>,
    dim_lambda: usize,
    dim_theta: usize,
    body: Arc<FieldFn>,
}

/// Everything one forward-over-reverse sweep produces.
///
/// For a tangent direction `(dλ, dθ)`, `tangent_grad_theta` is
/// `∂²φ/∂θ² · dθ + ∂²φ/∂θ∂λ · dλ` and `tangent_grad_lambda` is
/// `∂²φ/∂λ∂θ · dθ + ∂²φ/∂λ² · dλ`.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub value: f64,
    pub grad_lambda: Vec<f64>,
    pub grad_theta: Vec<f64>,
    pub tangent_grad_lambda: Vec<f64>,
    pub tangent_grad_theta: Vec<f64>,
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(BloError::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}

fn check_space(v: &FlatVector, space: Space) -> Result<()> {
    if v.space() == space {
        Ok(())
    } else {
        Err(BloError::SpaceMismatch {
            left: space,
            right: v.space(),
        })
    }
}

fn finite_vec(values: Vec<f64>, context: &str) -> Result<Vec<f64>> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(values)
    } else {
        Err(BloError::NonFinite(context.to_string()))
    }
}

impl ScalarField {
    pub fn new<F>(name: &str, dim_lambda: usize, dim_theta: usize, body: F) -> Self
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>], &[Var<'t>]) -> Var<'t> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim_lambda,
            dim_theta,
            body: Arc::new(body),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim_lambda(&self) -> usize {
        self.dim_lambda
    }

    pub fn dim_theta(&self) -> usize {
        self.dim_theta
    }

    /// `c · φ`.
    pub fn scaled(&self, c: f64) -> Self {
        let inner = self.body.clone();
        Self {
            name: format!("{}*{}", c, self.name).into(),
            dim_lambda: self.dim_lambda,
            dim_theta: self.dim_theta,
            body: Arc::new(move |tape, lam, theta| inner(tape, lam, theta) * c),
        }
    }

    /// `φ / c`.
    pub fn divided(&self, c: f64) -> Self {
        let inner = self.body.clone();
        Self {
            name: format!("{}/{}", self.name, c).into(),
            dim_lambda: self.dim_lambda,
            dim_theta: self.dim_theta,
            body: Arc::new(move |tape, lam, theta| inner(tape, lam, theta) / c),
        }
    }

    fn check_args(&self, lambda: &FlatVector, theta: &FlatVector) -> Result<()> {
        check_space(lambda, Space::Lambda)?;
        check_space(theta, Space::Theta)?;
        check_len("lambda argument", self.dim_lambda, lambda.len())?;
        check_len("theta argument", self.dim_theta, theta.len())
    }

    /// Records `φ` on a fresh tape with the given input tangents and runs the
    /// dual-valued reverse sweep. Slices are taken raw; callers check tags.
    pub fn sweep(
        &self,
        lambda: &[f64],
        theta: &[f64],
        dlambda: Option<&[f64]>,
        dtheta: Option<&[f64]>,
    ) -> Result<Sweep> {
        check_len("lambda argument", self.dim_lambda, lambda.len())?;
        check_len("theta argument", self.dim_theta, theta.len())?;
        if let Some(d) = dlambda {
            check_len("lambda tangent", self.dim_lambda, d.len())?;
        }
        if let Some(d) = dtheta {
            check_len("theta tangent", self.dim_theta, d.len())?;
        }
        let tape = Tape::with_capacity(64 + 8 * (lambda.len() + theta.len()));
        let lam: Vec<Var<'_>> = lambda
            .iter()
            .enumerate()
            .map(|(i, &v)| tape.input(v, dlambda.map_or(0.0, |d| d[i])))
            .collect();
        let th: Vec<Var<'_>> = theta
            .iter()
            .enumerate()
            .map(|(i, &v)| tape.input(v, dtheta.map_or(0.0, |d| d[i])))
            .collect();
        let out = (self.body)(&tape, &lam, &th);
        let value = out.value();
        if !value.is_finite() {
            return Err(BloError::NonFinite(format!("value of {}", self.name)));
        }
        let adj = tape.adjoints(out);
        let pick = |vars: &[Var<'_>], f: fn(&super::Dual) -> f64| -> Vec<f64> {
            vars.iter().map(|v| f(&adj[v.index()])).collect()
        };
        Ok(Sweep {
            value,
            grad_lambda: finite_vec(pick(&lam, |d| d.re), "lambda gradient")?,
            grad_theta: finite_vec(pick(&th, |d| d.re), "theta gradient")?,
            tangent_grad_lambda: finite_vec(pick(&lam, |d| d.eps), "lambda tangent")?,
            tangent_grad_theta: finite_vec(pick(&th, |d| d.eps), "theta tangent")?,
        })
    }

    /// `φ(λ, θ)`.
    pub fn eval(&self, lambda: &FlatVector, theta: &FlatVector) -> Result<f64> {
        self.check_args(lambda, theta)?;
        let tape = Tape::new();
        let lam: Vec<_> = lambda.as_slice().iter().map(|&v| tape.constant(v)).collect();
        let th: Vec<_> = theta.as_slice().iter().map(|&v| tape.constant(v)).collect();
        let value = (self.body)(&tape, &lam, &th).value();
        if value.is_finite() {
            Ok(value)
        } else {
            Err(BloError::NonFinite(format!("value of {}", self.name)))
        }
    }

    /// `∂φ/∂θ`.
    pub fn grad_theta(&self, lambda: &FlatVector, theta: &FlatVector) -> Result<FlatVector> {
        self.check_args(lambda, theta)?;
        let s = self.sweep(lambda.as_slice(), theta.as_slice(), None, None)?;
        FlatVector::theta(s.grad_theta)
    }

    /// `∂φ/∂λ`.
    pub fn grad_lambda(&self, lambda: &FlatVector, theta: &FlatVector) -> Result<FlatVector> {
        self.check_args(lambda, theta)?;
        let s = self.sweep(lambda.as_slice(), theta.as_slice(), None, None)?;
        FlatVector::lambda(s.grad_lambda)
    }

    /// `v · ∂²φ/∂θ²`.
    pub fn hvp_theta(
        &self,
        lambda: &FlatVector,
        theta: &FlatVector,
        v: &FlatVector,
    ) -> Result<FlatVector> {
        Ok(self.contract(lambda, theta, v)?.1)
    }

    /// `∂/∂λ [v · ∂φ/∂θ]` with `v` held fixed; the λ×θ block is never formed.
    pub fn mixed_vhp(
        &self,
        lambda: &FlatVector,
        theta: &FlatVector,
        v: &FlatVector,
    ) -> Result<FlatVector> {
        Ok(self.contract(lambda, theta, v)?.0)
    }

    /// Both contractions of `v` from one sweep: `(mixed_vhp, hvp_theta)`.
    pub fn contract(
        &self,
        lambda: &FlatVector,
        theta: &FlatVector,
        v: &FlatVector,
    ) -> Result<(FlatVector, FlatVector)> {
        self.check_args(lambda, theta)?;
        check_space(v, Space::Theta)?;
        check_len("theta direction", self.dim_theta, v.len())?;
        let s = self.sweep(lambda.as_slice(), theta.as_slice(), None, Some(v.as_slice()))?;
        Ok((
            FlatVector::lambda(s.tangent_grad_lambda)?,
            FlatVector::theta(s.tangent_grad_theta)?,
        ))
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ScalarField({}, dim_lambda={}, dim_theta={})",
            self.name, self.dim_lambda, self.dim_theta
        )
    }
}
