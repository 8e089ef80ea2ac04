//! Cubic regression toy with a continuum of exact inner optima.
//!
//! Model `y = λx³ + θ₂x² + θ₁x + θ₀` fitted to two training points, so every
//! `λ` leaves one free parameter among the `θ`s with zero training loss. The
//! tabular grid enumerates those optima to contrast selecting a single inner
//! solution against averaging over all of them.

use super::{BloProblem, InitPolicy, Interval};
use crate::autodiff::{ScalarField, Tape, Var};

pub const TRAIN: [(f64, f64); 2] = [(-0.75, -0.375), (0.75, -0.675)];
pub const VALID: [(f64, f64); 2] = [(-0.5, -0.3), (0.5, -0.5)];

/// Number of λ rows and inner-optimum columns in the default grid.
pub const GRID_ROWS: usize = 21;
pub const GRID_COLS: usize = 11;

/// Generator of the data: `-0.4x² - 0.2x - 0.3`.
pub fn f_true(x: f64) -> f64 {
    -0.4 * x * x - 0.2 * x - 0.3
}

pub fn model(lambda: f64, theta: &[f64; 3], x: f64) -> f64 {
    lambda * x.powi(3) + theta[2] * x * x + theta[1] * x + theta[0]
}

pub fn squared_error(lambda: f64, theta: &[f64; 3], data: &[(f64, f64)]) -> f64 {
    data.iter()
        .map(|&(x, y)| (model(lambda, theta, x) - y).powi(2))
        .sum()
}

fn taped_loss<'t>(
    tape: &'t Tape,
    lam: &[Var<'t>],
    th: &[Var<'t>],
    data: &[(f64, f64)],
) -> Var<'t> {
    tape.sum(data.iter().map(|&(x, y)| {
        let pred = lam[0] * x.powi(3) + th[2] * (x * x) + th[1] * x + th[0];
        (pred - y).square()
    }))
}

/// Inner optimum with `θ₂` fixed: solves the two interpolation equations for
/// `(θ₀, θ₁)`.
pub fn inner_optimum(lambda: f64, theta2: f64) -> [f64; 3] {
    let [(x0, y0), (x1, y1)] = TRAIN;
    let r0 = y0 - lambda * x0.powi(3) - theta2 * x0 * x0;
    let r1 = y1 - lambda * x1.powi(3) - theta2 * x1 * x1;
    let theta1 = (r1 - r0) / (x1 - x0);
    let theta0 = r0 - theta1 * x0;
    [theta0, theta1, theta2]
}

/// The enumerated outer-loss table: one row per λ, one column per inner
/// optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularToySpec {
    pub lambdas: Vec<f64>,
    pub optima: Vec<Vec<[f64; 3]>>,
    pub val_loss: Vec<Vec<f64>>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

impl TabularToySpec {
    /// `rows` λ values and `cols` values of the free parameter `θ₂`, both
    /// equally spaced on `[-1, 1]`.
    pub fn grid(rows: usize, cols: usize) -> Self {
        // Snap to multiples of 1e-12 so the middle row is exactly λ = 0.
        let snap = |v: f64| (v * 1e12).round() / 1e12;
        let lambdas: Vec<f64> = linspace(-1.0, 1.0, rows).into_iter().map(snap).collect();
        let frees: Vec<f64> = linspace(-1.0, 1.0, cols).into_iter().map(snap).collect();
        let optima: Vec<Vec<[f64; 3]>> = lambdas
            .iter()
            .map(|&l| frees.iter().map(|&t2| inner_optimum(l, t2)).collect())
            .collect();
        let val_loss = lambdas
            .iter()
            .zip(&optima)
            .map(|(&l, row)| row.iter().map(|th| squared_error(l, th, &VALID)).collect())
            .collect();
        Self {
            lambdas,
            optima,
            val_loss,
        }
    }

    /// A table given directly, without the underlying optima.
    pub fn from_table(lambdas: Vec<f64>, val_loss: Vec<Vec<f64>>) -> Self {
        assert_eq!(lambdas.len(), val_loss.len(), "one row per lambda");
        Self {
            lambdas,
            optima: Vec::new(),
            val_loss,
        }
    }

    pub fn rows(&self) -> usize {
        self.lambdas.len()
    }

    pub fn row_average(&self) -> Vec<f64> {
        self.val_loss
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect()
    }

    /// Index of the λ = 0 row, if present.
    pub fn zero_row(&self) -> Option<usize> {
        self.lambdas.iter().position(|&l| l == 0.0)
    }
}

pub struct PolyToy {
    pub problem: BloProblem,
    pub spec: TabularToySpec,
}

pub fn make_poly_toy() -> PolyToy {
    let outer = ScalarField::new("poly_outer", 1, 3, |tape, lam, th| {
        taped_loss(tape, lam, th, &VALID)
    });
    let inner = ScalarField::new("poly_inner", 1, 3, |tape, lam, th| {
        taped_loss(tape, lam, th, &TRAIN)
    });
    let unit = Interval::new(-1.0, 1.0);
    let problem = BloProblem::new("poly-toy", outer, inner, 1e-3)
        .expect("valid poly toy")
        .with_boxes(Some(unit), Some(unit))
        .with_init_policy(InitPolicy::IndependentFixed(vec![0.0; 3]))
        .expect("three parameters")
        .with_known_solution(vec![0.0], vec![-0.3, -0.2, -0.4]);
    PolyToy {
        problem,
        spec: TabularToySpec::grid(GRID_ROWS, GRID_COLS),
    }
}
