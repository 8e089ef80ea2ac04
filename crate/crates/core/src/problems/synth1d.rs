//! One-dimensional problem with a closed-form inner optimum.
//!
//! `L_V = (λ - θ)² + (θ - 1/2)²` and `L_T = θ³/3 - (1 - λ²)θ` on `[0, 1]²`.
//! The inner minimizer is `θ*(λ) = √(1 - λ²)`.

use std::sync::Arc;

use rand::Rng;

use super::{BloProblem, BloRng, InitPolicy, Interval, NoiseHook};
use crate::autodiff::ScalarField;

/// `(λ*, θ*)` located by a line search over the closed form.
pub const SYNTH1D_SOLUTION: (f64, f64) = (0.7487, 0.6629);

/// Half-width of the uniform perturbations in the noisy variant.
pub const SYNTH1D_NOISE: f64 = 0.3;

pub fn synth1d_inner_optimum(lambda: f64) -> f64 {
    (1.0 - lambda * lambda).max(0.0).sqrt()
}

fn outer() -> ScalarField {
    ScalarField::new("synth1d_outer", 1, 1, |_tape, lam, th| {
        (lam[0] - th[0]).square() + (th[0] - 0.5).square()
    })
}

/// `(1/3 + e1) θ³ - (1 - λ² + e2) θ`.
fn inner(e1: f64, e2: f64) -> ScalarField {
    ScalarField::new("synth1d_inner", 1, 1, move |_tape, lam, th| {
        th[0].powi(3) * (1.0 / 3.0 + e1) - (1.0 + e2 - lam[0].square()) * th[0]
    })
}

fn base(name: &str, temperature: f64) -> BloProblem {
    let unit = Interval::new(0.0, 1.0);
    BloProblem::new(name, outer(), inner(0.0, 0.0), temperature)
        .expect("valid synth1d definition")
        .with_boxes(Some(unit), Some(unit))
        .with_init_policy(InitPolicy::IndependentFixed(vec![0.5]))
        .expect("scalar init")
        .with_lambda_init(vec![0.5])
        .expect("scalar lambda")
        .with_known_solution(vec![SYNTH1D_SOLUTION.0], vec![SYNTH1D_SOLUTION.1])
        .with_inner_solution(Arc::new(|l| vec![synth1d_inner_optimum(l[0])]))
}

pub fn make_synth1d() -> BloProblem {
    base("synth1d", 1e-6)
}

/// One `(e1, e2)` draw, each uniform on `[-0.3, 0.3]`.
pub fn draw_synth_noise(rng: &mut BloRng) -> (f64, f64) {
    (
        rng.random_range(-SYNTH1D_NOISE..=SYNTH1D_NOISE),
        rng.random_range(-SYNTH1D_NOISE..=SYNTH1D_NOISE),
    )
}

/// Synth1D whose inner loss is re-perturbed on every gradient call.
pub fn make_noisy_synth1d(seed: u64) -> BloProblem {
    let hook: NoiseHook = Arc::new(|rng: &mut BloRng| {
        let (e1, e2) = draw_synth_noise(rng);
        inner(e1, e2)
    });
    base("noisy-synth1d", 1e-2).with_noise(hook, seed)
}
