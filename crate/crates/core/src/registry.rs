//! Problems and estimators by name, configured from [`Params`].

use crate::error::{BloError, Result};
use crate::hypergrad::{
    AmigoConfig, AmigoMode, CgConfig, EsConfig, Estimator, InnerSolver, NeumannConfig,
    ESTIMATOR_NAMES, FMD_ENTRY_LIMIT,
};
use crate::params::Params;
use crate::problems::{
    make_noisy_synth1d, make_poly_toy, make_synth1d, make_tiny_mlp_l1, BloProblem, Coupling,
    QuadraticBlo, QuadraticOptions, TabularToySpec,
};
use crate::sgld::SgldConfig;

pub const PROBLEM_NAMES: [&str; 5] = ["synth1d", "noisy-synth1d", "poly-toy", "quadratic", "tiny-mlp-l1"];

/// A problem plus whatever oracle data its constructor produced.
#[derive(Clone)]
pub struct BuiltProblem {
    pub problem: BloProblem,
    pub quadratic: Option<QuadraticBlo>,
    pub toy: Option<TabularToySpec>,
}

pub fn problem_keys(name: &str) -> Result<&'static [&'static str]> {
    Ok(match name {
        "synth1d" | "poly-toy" => &["tau"],
        "noisy-synth1d" | "tiny-mlp-l1" => &["tau", "seed"],
        "quadratic" => &["tau", "seed", "dim_theta", "dim_lambda", "condition", "top_eigenvalue", "coupling"],
        _ => {
            return Err(BloError::UnknownName {
                kind: "problem",
                name: name.to_string(),
                valid: PROBLEM_NAMES.join(", "),
            })
        }
    })
}

pub fn build_problem(name: &str, params: &Params) -> Result<BuiltProblem> {
    params.check_keys(&format!("{name} problem"), problem_keys(name)?)?;
    let seed: u64 = params.get_or("seed", 0)?;
    let mut built = match name {
        "synth1d" => plain(make_synth1d()),
        "noisy-synth1d" => plain(make_noisy_synth1d(seed)),
        "tiny-mlp-l1" => plain(make_tiny_mlp_l1(seed)),
        "poly-toy" => {
            let toy = make_poly_toy();
            BuiltProblem {
                problem: toy.problem,
                quadratic: None,
                toy: Some(toy.spec),
            }
        }
        "quadratic" => {
            let coupling = match params.raw("coupling").unwrap_or("isotropic") {
                "isotropic" => Coupling::Isotropic,
                "aligned" => Coupling::Aligned,
                other => {
                    return Err(BloError::UnknownName {
                        kind: "coupling",
                        name: other.to_string(),
                        valid: "isotropic, aligned".into(),
                    })
                }
            };
            let q = QuadraticBlo::build(QuadraticOptions {
                dim_theta: params.get_or("dim_theta", 5)?,
                dim_lambda: params.get_or("dim_lambda", 3)?,
                condition_number: params.get_or("condition", 10.0)?,
                seed,
                top_eigenvalue: params.get("top_eigenvalue")?,
                coupling,
            })?;
            BuiltProblem {
                problem: q.problem.clone(),
                quadratic: Some(q),
                toy: None,
            }
        }
        _ => unreachable!("checked by problem_keys"),
    };
    if let Some(tau) = params.get::<f64>("tau")? {
        built.problem = built.problem.with_temperature(tau)?;
        if let Some(q) = built.quadratic.as_mut() {
            q.problem = built.problem.clone();
        }
    }
    Ok(built)
}

fn plain(problem: BloProblem) -> BuiltProblem {
    BuiltProblem {
        problem,
        quadratic: None,
        toy: None,
    }
}

const INNER: [&str; 2] = ["inner_steps", "inner_lr"];

pub fn estimator_keys(name: &str) -> Result<Vec<&'static str>> {
    Estimator::check_name(name)?;
    let own: &[&str] = match name {
        "hpo-sgld" => &["lr", "eps", "kappa", "burn_in", "samples"],
        "ift-neumann" => &["alpha", "terms"],
        "ift-cg" => &["gamma", "iterations"],
        "amigo-sgd" | "amigo-cg" => &["steps", "aux_lr"],
        "rmd" | "rmd-fo" => &[],
        "fmd" => &["limit"],
        "es" => &["sigma", "samples"],
        "fd-oracle" => &["delta"],
        _ => unreachable!("checked by check_name"),
    };
    let mut keys = own.to_vec();
    if name != "hpo-sgld" {
        keys.extend(INNER);
    }
    Ok(keys)
}

/// Builds a named estimator. Defaults follow the Synth1D settings: 100
/// inner steps at lr 0.005 and `B = M = 50`. HPO-SGLD takes either `eps`
/// or the equivalent drift learning rate `lr`, with `ε = 2τ·lr`.
pub fn build_estimator(name: &str, params: &Params, temperature: f64) -> Result<Estimator> {
    let keys = estimator_keys(name)?;
    params.check_keys(&format!("{name} estimator"), &keys)?;
    let inner = InnerSolver::new(
        params.get_or("inner_steps", 100)?,
        params.get_or("inner_lr", 0.005)?,
    )?;
    let est = match name {
        "hpo-sgld" => {
            let eps = match (params.get::<f64>("eps")?, params.get::<f64>("lr")?) {
                (Some(_), Some(_)) => {
                    return Err(BloError::InvalidConfig(
                        "give hpo-sgld either eps or lr, not both".into(),
                    ))
                }
                (Some(e), None) => e,
                (None, lr) => SgldConfig::epsilon_for_learning_rate(lr.unwrap_or(0.005), temperature),
            };
            Estimator::HpoSgld(SgldConfig::new(
                eps,
                params.get_or("kappa", 1.0)?,
                params.get_or("burn_in", 50)?,
                params.get_or("samples", 50)?,
                0,
            )?)
        }
        "ift-neumann" => Estimator::IftNeumann(NeumannConfig {
            alpha: params.get_or("alpha", 0.99)?,
            terms: params.get_or("terms", 10)?,
            inner,
        }),
        "ift-cg" => Estimator::IftCg(CgConfig {
            gamma: params.get_or("gamma", 0.01)?,
            iterations: params.get_or("iterations", 10)?,
            inner,
        }),
        "amigo-sgd" | "amigo-cg" => Estimator::Amigo(AmigoConfig {
            mode: if name == "amigo-sgd" { AmigoMode::Sgd } else { AmigoMode::Cg },
            steps: params.get_or("steps", 10)?,
            lr: params.get_or("aux_lr", inner.lr)?,
            inner,
        }),
        "rmd" => Estimator::Rmd(inner),
        "rmd-fo" => Estimator::RmdFo(inner),
        "fmd" => Estimator::Fmd {
            inner,
            limit: params.get_or("limit", FMD_ENTRY_LIMIT)?,
        },
        "es" => Estimator::Es(EsConfig {
            sigma: params.get_or("sigma", 0.001)?,
            samples: params.get_or("samples", 100)?,
            inner,
        }),
        "fd-oracle" => Estimator::FdOracle {
            delta: params.get_or("delta", 1e-4)?,
            inner,
        },
        _ => unreachable!("checked by estimator_keys"),
    };
    est.validate()?;
    Ok(est)
}

pub fn estimator_names() -> &'static [&'static str] {
    &ESTIMATOR_NAMES
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_builds_with_defaults() {
        for name in PROBLEM_NAMES {
            build_problem(name, &Params::new()).unwrap();
        }
        for name in ESTIMATOR_NAMES {
            let e = build_estimator(name, &Params::new(), 1e-6).unwrap();
            assert_eq!(e.name(), name);
        }
    }

    #[test]
    fn unknown_names_and_keys_are_rejected() {
        let err = build_estimator("foo", &Params::new(), 1.0).unwrap_err().to_string();
        assert!(err.contains("hpo-sgld") && err.contains("fd-oracle"));
        assert!(build_problem("bar", &Params::new()).is_err());
        let p = Params::parse_inline("alpha=0.5").unwrap();
        assert!(build_estimator("ift-cg", &p, 1.0).is_err());
    }

    #[test]
    fn hpo_lr_maps_to_epsilon() {
        let p = Params::parse_inline("lr=0.005").unwrap();
        match build_estimator("hpo-sgld", &p, 1e-6).unwrap() {
            Estimator::HpoSgld(c) => assert!((c.epsilon - 1e-8).abs() < 1e-22),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn temperature_override_reaches_problem() {
        let p = Params::parse_inline("tau=0.01 seed=3").unwrap();
        let b = build_problem("noisy-synth1d", &p).unwrap();
        assert_eq!(b.problem.temperature(), 0.01);
    }
}
