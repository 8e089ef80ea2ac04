//! Per-weight L1 hyperparameter learning for a small tanh network.
//!
//! Two seeded Gaussian blobs in the plane, 64 training and 64 validation
//! points. The network is `2 → 10 → 2` (hidden biases, no output bias),
//! so `θ` has 50 entries and there is one penalty coefficient `softplus(λⱼ)`
//! per weight.

use rand_distr::{Distribution, Normal};

use super::{seeded_rng, BloProblem, InitPolicy};
use crate::autodiff::{ScalarField, Tape, Var};

pub const MLP_HIDDEN: usize = 10;
pub const MLP_PARAMS: usize = MLP_HIDDEN * 2 + MLP_HIDDEN + 2 * MLP_HIDDEN;
const POINTS_PER_SPLIT: usize = 64;
const BLOB_CENTERS: [[f64; 2]; 2] = [[-0.75, -0.5], [0.75, 0.5]];
const BLOB_STD: f64 = 0.9;
/// λ at which every penalty starts; `softplus(-4) ≈ 0.018`.
pub const MLP_LAMBDA_INIT: f64 = -4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpData {
    pub train: Vec<([f64; 2], usize)>,
    pub valid: Vec<([f64; 2], usize)>,
}

impl MlpData {
    pub fn generate(seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let noise = Normal::new(0.0, BLOB_STD).expect("positive std");
        let mut split = || {
            (0..POINTS_PER_SPLIT)
                .map(|i| {
                    let label = i % 2;
                    let c = BLOB_CENTERS[label];
                    (
                        [c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)],
                        label,
                    )
                })
                .collect::<Vec<_>>()
        };
        let train = split();
        let valid = split();
        Self { train, valid }
    }
}

fn logits<'t>(th: &[Var<'t>], x: &[f64; 2]) -> [Var<'t>; 2] {
    let w1 = &th[..2 * MLP_HIDDEN];
    let b1 = &th[2 * MLP_HIDDEN..3 * MLP_HIDDEN];
    let w2 = &th[3 * MLP_HIDDEN..];
    let hidden: Vec<Var<'t>> = (0..MLP_HIDDEN)
        .map(|k| (w1[2 * k] * x[0] + w1[2 * k + 1] * x[1] + b1[k]).tanh())
        .collect();
    let tape = th[0].tape();
    let out = |c: usize| tape.dot(&w2[c * MLP_HIDDEN..(c + 1) * MLP_HIDDEN], &hidden);
    [out(0), out(1)]
}

/// Mean softmax cross-entropy.
pub fn cross_entropy<'t>(tape: &'t Tape, th: &[Var<'t>], data: &[([f64; 2], usize)]) -> Var<'t> {
    let total = tape.sum(data.iter().map(|(x, y)| {
        let z = logits(th, x);
        tape.logsumexp(&z) - z[*y]
    }));
    total / data.len() as f64
}

pub fn make_tiny_mlp_l1(seed: u64) -> BloProblem {
    let data = MlpData::generate(seed);
    let train = data.train.clone();
    let inner = ScalarField::new("mlp_train_l1", MLP_PARAMS, MLP_PARAMS, move |tape, lam, th| {
        let penalty = tape.sum(lam.iter().zip(th).map(|(&l, &t)| l.softplus() * t.abs()));
        cross_entropy(tape, th, &train) + penalty
    });
    let valid = data.valid;
    let outer = ScalarField::new("mlp_valid", MLP_PARAMS, MLP_PARAMS, move |tape, _lam, th| {
        cross_entropy(tape, th, &valid)
    });
    BloProblem::new("tiny-mlp-l1", outer, inner, 1e-3)
        .expect("valid mlp problem")
        .with_init_policy(InitPolicy::IndependentRandom {
            lo: -0.5,
            hi: 0.5,
            seed,
        })
        .expect("box init")
        .with_lambda_init(vec![MLP_LAMBDA_INIT; MLP_PARAMS])
        .expect("per-weight lambda")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::FlatVector;

    #[test]
    fn one_penalty_per_weight() {
        let p = make_tiny_mlp_l1(0);
        assert_eq!(p.dim_theta(), 50);
        assert_eq!(p.dim_lambda(), 50);
    }

    #[test]
    fn data_are_seeded_and_balanced() {
        let a = MlpData::generate(0);
        assert_eq!(a, MlpData::generate(0));
        assert_ne!(a, MlpData::generate(1));
        assert_eq!(a.train.len(), 64);
        assert_eq!(a.valid.len(), 64);
        assert_eq!(a.train.iter().filter(|(_, y)| *y == 1).count(), 32);
    }

    #[test]
    fn vanishing_penalty_leaves_cross_entropy() {
        let p = make_tiny_mlp_l1(0);
        let lam = FlatVector::lambda(vec![-800.0; MLP_PARAMS]).unwrap();
        let th = p.initial_theta(&lam).unwrap();
        let data = MlpData::generate(0);
        let tape = Tape::new();
        let vars: Vec<_> = th.as_slice().iter().map(|&v| tape.constant(v)).collect();
        let ce = cross_entropy(&tape, &vars, &data.train).value();
        assert_eq!(p.inner_loss().eval(&lam, &th).unwrap(), ce);
    }

    #[test]
    fn l1_lambda_gradient_is_weighted_magnitude() {
        // ∂/∂λⱼ softplus(λⱼ)|θⱼ| = sigmoid(λⱼ)|θⱼ|; at λ = 0 that is |θⱼ|/2.
        let p = make_tiny_mlp_l1(0);
        let lam = FlatVector::lambda(vec![0.0; MLP_PARAMS]).unwrap();
        let mut th = p.initial_theta(&lam).unwrap().into_values();
        th[3] = 0.0;
        let th = FlatVector::theta(th).unwrap();
        let g = p.inner_loss().grad_lambda(&lam, &th).unwrap();
        for (gj, tj) in g.as_slice().iter().zip(th.as_slice()) {
            assert!((gj - 0.5 * tj.abs()).abs() < 1e-15);
        }
        assert_eq!(g.get(3), 0.0);
    }
}
