//! The tabular study on the polynomial toy: deterministic BLO picks one
//! inner optimum per λ at random, stochastic optimization averages over them.

use rand::Rng;

use crate::problems::{seeded_rng, TabularToySpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyGridReport {
    pub runs: usize,
    /// Row chosen by each deterministic run.
    pub deterministic_choices: Vec<usize>,
    pub deterministic_successes: usize,
    /// Row chosen by every stochastic run; the protocol has no randomness.
    pub so_choice: usize,
    pub so_successes: usize,
    pub target_row: Option<usize>,
    /// Exact chance that one deterministic run picks the target row.
    pub deterministic_probability: f64,
}

/// First index of the minimum; ties go to the lowest index.
pub fn argmin_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Probability that picking one uniform column per row and taking the
/// row-wise argmin (ties to the lowest row) lands on `target`.
pub fn deterministic_probability(spec: &TabularToySpec, target: usize) -> f64 {
    let rows = &spec.val_loss;
    let cols = rows[target].len() as f64;
    rows[target]
        .iter()
        .map(|&v| {
            rows.iter()
                .enumerate()
                .filter(|&(r, _)| r != target)
                .map(|(r, row)| {
                    let ok = row
                        .iter()
                        .filter(|&&u| if r < target { u > v } else { u >= v })
                        .count();
                    ok as f64 / row.len() as f64
                })
                .product::<f64>()
                / cols
        })
        .sum()
}

/// Runs both protocols `runs` times. The target is the λ = 0 row.
pub fn toy_grid_study(spec: &TabularToySpec, runs: usize, seed: u64) -> ToyGridReport {
    let target_row = spec.zero_row();
    let mut rng = seeded_rng(seed);
    let deterministic_choices: Vec<usize> = (0..runs)
        .map(|_| {
            let picks: Vec<f64> = spec
                .val_loss
                .iter()
                .map(|row| row[rng.random_range(0..row.len())])
                .collect();
            argmin_lowest(&picks)
        })
        .collect();
    let so_choice = argmin_lowest(&spec.row_average());
    let hits = |row: usize| Some(row) == target_row;
    ToyGridReport {
        runs,
        deterministic_successes: deterministic_choices.iter().filter(|&&r| hits(r)).count(),
        so_successes: if hits(so_choice) { runs } else { 0 },
        so_choice,
        target_row,
        deterministic_probability: target_row.map_or(0.0, |t| deterministic_probability(spec, t)),
        deterministic_choices,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::make_poly_toy;

    #[test]
    fn single_column_protocols_coincide() {
        let spec = TabularToySpec::from_table(
            vec![-1.0, 0.0, 1.0],
            vec![vec![0.4], vec![0.1], vec![0.3]],
        );
        let r = toy_grid_study(&spec, 20, 0);
        assert!(r.deterministic_choices.iter().all(|&c| c == r.so_choice));
        assert_eq!(r.deterministic_probability, 1.0);
    }

    #[test]
    fn ties_go_to_the_lowest_row() {
        assert_eq!(argmin_lowest(&[0.2, 0.1, 0.1]), 1);
        let spec = TabularToySpec::from_table(
            vec![-1.0, 0.0, 1.0],
            vec![vec![0.1], vec![0.1], vec![0.1]],
        );
        assert_eq!(deterministic_probability(&spec, 1), 0.0);
        assert_eq!(deterministic_probability(&spec, 0), 1.0);
    }

    #[test]
    fn probability_matches_brute_force_enumeration() {
        let spec = TabularToySpec::from_table(
            vec![-1.0, 0.0, 1.0],
            vec![vec![0.3, 0.05], vec![0.2, 0.1, 0.4], vec![0.1, 0.25]],
        );
        let mut wins = 0;
        let mut total = 0;
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..2 {
                    total += 1;
                    let picks = [spec.val_loss[0][a], spec.val_loss[1][b], spec.val_loss[2][c]];
                    wins += usize::from(argmin_lowest(&picks) == 1);
                }
            }
        }
        let exact = deterministic_probability(&spec, 1);
        assert!((exact - wins as f64 / total as f64).abs() < 1e-15);
    }

    #[test]
    fn stochastic_protocol_always_finds_zero() {
        let toy = make_poly_toy();
        let r = toy_grid_study(&toy.spec, 20, 7);
        assert_eq!(r.so_successes, 20);
        assert!(r.deterministic_probability < 0.5);
    }
}
