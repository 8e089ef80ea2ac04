//! Experiment configuration assembled from a key=value file, `--set`
//! overrides and the dedicated flags.

use std::path::PathBuf;

use hpo_sgld::params::Params;
use hpo_sgld::registry::{build_estimator, build_problem, estimator_keys, BuiltProblem};
use hpo_sgld::hypergrad::Estimator;
use hpo_sgld::outer::OuterConfig;

use crate::error::CliError;

const TOP_KEYS: [&str; 5] = ["problem", "estimator", "seeds", "entries", "description"];
const SECTIONS: [&str; 7] = ["problem", "estimator", "outer", "entry", "fo", "quad", "toy"];
const OUTER_KEYS: [&str; 6] = ["eta", "iterations", "lambda_init", "warm_start", "final_steps", "final_lr"];

/// One estimator row of a run or comparison.
#[derive(Debug, Clone)]
pub struct Entry {
    pub label: String,
    pub estimator: String,
    pub params: Params,
}

impl Entry {
    pub fn options(&self) -> String {
        self.params
            .keys()
            .map(|k| format!("{k}={}", self.params.raw(k).unwrap_or_default()))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn build(&self, temperature: f64) -> Result<Estimator, CliError> {
        Ok(build_estimator(&self.estimator, &self.params, temperature)?)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: String,
    pub problem_params: Params,
    pub entries: Vec<Entry>,
    pub outer: Params,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub probe: bool,
    pub timing: bool,
    /// Everything under the subcommand's own section.
    pub extra: Params,
}

/// Flags shared by every subcommand, already parsed by clap.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub problem: Option<String>,
    pub estimator: Option<String>,
    pub seed: Option<u64>,
    pub seeds: Option<String>,
    pub out: PathBuf,
    pub probe: bool,
    pub timing: bool,
    pub set: Vec<String>,
}

fn check_layout(p: &Params) -> Result<(), CliError> {
    for key in p.keys() {
        let ok = match key.split_once('.') {
            Some((head, _)) => SECTIONS.contains(&head),
            None => TOP_KEYS.contains(&key),
        };
        if !ok {
            return Err(CliError::Usage(format!(
                "unknown config key {key}; top-level keys: {}; sections: {}",
                TOP_KEYS.join(", "),
                SECTIONS.map(|s| format!("{s}.*")).join(", ")
            )));
        }
    }
    Ok(())
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let seeds = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Usage(format!("cannot parse seed {s:?}")))
        })
        .collect::<Result<Vec<u64>, _>>()?;
    if seeds.is_empty() {
        return Err(CliError::Usage("seed list is empty".into()));
    }
    Ok(seeds)
}

impl ExperimentConfig {
    /// `section` names the subcommand's own key block; `multi` selects the
    /// `entry.<label>` layout instead of a single `estimator`.
    pub fn load(
        o: &Overrides,
        section: &str,
        default_problem: &str,
        multi: bool,
    ) -> Result<Self, CliError> {
        let mut file = match &o.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", path.display()))
                })?;
                Params::parse(&text)?
            }
            None => Params::new(),
        };
        for kv in &o.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {kv:?}")))?;
            file.set(k.trim(), v.trim());
        }
        check_layout(&file)?;

        let file_problem = file.raw("problem").unwrap_or(default_problem).to_string();
        let problem = o.problem.clone().unwrap_or_else(|| file_problem.clone());
        // Parameters written for a different problem do not carry over.
        let problem_params = if problem == file_problem {
            file.section("problem")
        } else {
            Params::new()
        };

        let seeds = match (o.seed, &o.seeds) {
            (Some(_), Some(_)) => {
                return Err(CliError::Usage("give --seed or --seeds, not both".into()))
            }
            (Some(s), None) => vec![s],
            (None, Some(list)) => parse_seeds(list)?,
            (None, None) => match file.raw("seeds") {
                Some(list) => parse_seeds(list)?,
                None => vec![0],
            },
        };

        let entries = if multi {
            multi_entries(&file, o.estimator.as_deref())?
        } else {
            single_entry(&file, o.estimator.as_deref())?
        };
        for e in &entries {
            e.params
                .check_keys(&format!("{} estimator", e.estimator), &estimator_keys(&e.estimator)?)?;
        }
        let outer = file.section("outer");
        outer.check_keys("outer", &OUTER_KEYS)?;

        Ok(Self {
            problem,
            problem_params,
            entries,
            outer,
            seeds,
            out: o.out.clone(),
            probe: o.probe,
            timing: o.timing,
            extra: file.section(section),
        })
    }

    pub fn build_problem(&self) -> Result<BuiltProblem, CliError> {
        Ok(build_problem(&self.problem, &self.problem_params)?)
    }

    /// Outer settings with Synth1D defaults: 200 iterations at η = 0.005.
    pub fn outer_config(&self) -> Result<OuterConfig, CliError> {
        let p = &self.outer;
        let mut cfg = OuterConfig::new(p.get_or("eta", 0.005)?, p.get_or("iterations", 200)?, 0)?;
        cfg.lambda_init = p.list("lambda_init")?;
        cfg.warm_start = p.get_or("warm_start", true)?;
        cfg.final_solver.steps = p.get_or("final_steps", cfg.final_solver.steps)?;
        cfg.final_solver.lr = p.get_or("final_lr", cfg.final_solver.lr)?;
        cfg.record_timing = self.timing;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn single_entry(file: &Params, flag: Option<&str>) -> Result<Vec<Entry>, CliError> {
    let file_name = file.raw("estimator").unwrap_or("hpo-sgld");
    let name = flag.unwrap_or(file_name);
    let params = if name == file_name {
        file.section("estimator")
    } else {
        Params::new()
    };
    estimator_keys(name)?;
    Ok(vec![Entry {
        label: name.to_string(),
        estimator: name.to_string(),
        params,
    }])
}

/// `entry.<label> = <estimator> key=value ...`, ordered by the optional
/// `entries` list and otherwise by label. `--estimator a,b` appends entries
/// with default options.
fn multi_entries(file: &Params, flag: Option<&str>) -> Result<Vec<Entry>, CliError> {
    let table = file.section("entry");
    let labels: Vec<String> = match file.list::<String>("entries")? {
        Some(order) => order,
        None => table.keys().map(str::to_string).collect(),
    };
    let mut entries = Vec::new();
    for label in labels {
        let spec = table
            .raw(&label)
            .ok_or_else(|| CliError::Usage(format!("entries lists {label} but entry.{label} is missing")))?;
        let (name, rest) = spec.trim().split_once(char::is_whitespace).unwrap_or((spec.trim(), ""));
        estimator_keys(name)?;
        entries.push(Entry {
            label,
            estimator: name.to_string(),
            params: Params::parse_inline(rest)?,
        });
    }
    if let Some(list) = flag {
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            estimator_keys(name)?;
            entries.push(Entry {
                label: name.to_string(),
                estimator: name.to_string(),
                params: Params::new(),
            });
        }
    }
    Ok(entries)
}
