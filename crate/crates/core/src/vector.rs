//! Dense vectors tagged with the space they live in.
//!
//! Inner parameters θ and outer hyperparameters λ are both plain real
//! vectors, but mixing them up is always a bug. [`FlatVector`] carries a
//! [`Space`] tag and refuses arithmetic between mismatched tags. Every
//! constructor and arithmetic operation rejects NaN and infinity.

use std::fmt;

use crate::error::{BloError, Result};

/// Which side of the bi-level problem a vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    /// Inner parameters θ.
    Theta,
    /// Outer hyperparameters λ.
    Lambda,
}

#[derive(Clone, PartialEq)]
pub struct FlatVector {
    values: Vec<f64>,
    space: Space,
}

fn check_finite(values: &[f64], context: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(BloError::NonFinite(format!("{context} (entry {i})"))),
    }
}

impl FlatVector {
    pub fn new(values: Vec<f64>, space: Space) -> Result<Self> {
        check_finite(&values, "vector construction")?;
        Ok(Self { values, space })
    }

    pub fn theta(values: Vec<f64>) -> Result<Self> {
        Self::new(values, Space::Theta)
    }

    pub fn lambda(values: Vec<f64>) -> Result<Self> {
        Self::new(values, Space::Lambda)
    }

    pub fn zeros(len: usize, space: Space) -> Self {
        Self {
            values: vec![0.0; len],
            space,
        }
    }

    /// Unit basis vector `e_index`.
    pub fn basis(len: usize, index: usize, space: Space) -> Self {
        let mut v = Self::zeros(len, space);
        v.values[index] = 1.0;
        v
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// The same numbers viewed as a vector of the other space. Used where a
    /// Jacobian is the identity map between θ and λ.
    pub fn retag(mut self, space: Space) -> Self {
        self.space = space;
        self
    }

    fn check_compatible(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.space != other.space {
            return Err(BloError::SpaceMismatch {
                left: self.space,
                right: other.space,
            });
        }
        if self.len() != other.len() {
            return Err(BloError::DimensionMismatch {
                context,
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "vector add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "vector sub", |a, b| a - b)
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &Self) -> Result<Self> {
        self.zip_with(other, "vector axpy", |a, b| a + alpha * b)
    }

    pub fn scale(&self, alpha: f64) -> Result<Self> {
        self.map(|v| alpha * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        check_finite(&values, "vector map")?;
        Ok(Self {
            values,
            space: self.space,
        })
    }

    fn zip_with(
        &self,
        other: &Self,
        context: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        self.check_compatible(other, context)?;
        let values: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        check_finite(&values, context)?;
        Ok(Self {
            values,
            space: self.space,
        })
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other, "vector dot")?;
        let d: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        if d.is_finite() {
            Ok(d)
        } else {
            Err(BloError::NonFinite("vector dot".into()))
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Clamp every entry into `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v.clamp(lo, hi)).collect(),
            space: self.space,
        }
    }
}

impl fmt::Debug for FlatVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}{:?}", self.space, self.values)
    }
}

/// Relative error `|a - b| / max(|b|, floor)` in the 2-norm.
pub fn relative_error(estimate: &[f64], reference: &[f64], floor: f64) -> f64 {
    let diff: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let denom = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / denom.max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_entries() {
        assert!(FlatVector::theta(vec![1.0, f64::NAN]).is_err());
        assert!(FlatVector::lambda(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn mismatched_spaces_are_an_error() {
        let a = FlatVector::theta(vec![1.0, 2.0]).unwrap();
        let b = FlatVector::lambda(vec![1.0, 2.0]).unwrap();
        assert_eq!(
            a.add(&b),
            Err(BloError::SpaceMismatch {
                left: Space::Theta,
                right: Space::Lambda
            })
        );
        assert!(a.dot(&b).is_err());
    }

    #[test]
    fn overflow_is_caught() {
        let a = FlatVector::theta(vec![1e300]).unwrap();
        assert!(a.scale(1e300).is_err());
    }

    #[test]
    fn arithmetic() {
        let a = FlatVector::theta(vec![3.0, 4.0]).unwrap();
        assert_eq!(a.norm(), 5.0);
        assert_eq!(a.dot(&a).unwrap(), 25.0);
        assert_eq!(a.axpy(-1.0, &a).unwrap().as_slice(), &[0.0, 0.0]);
        assert!(a.add(&FlatVector::zeros(3, Space::Theta)).is_err());
    }
}
