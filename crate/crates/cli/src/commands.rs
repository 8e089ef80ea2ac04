//! The five subcommands.

use std::collections::BTreeMap;

use hpo_sgld::hypergrad::{fo_probe, Estimator, FMD_ENTRY_LIMIT};
use hpo_sgld::outer::RunTrace;
use hpo_sgld::params::Params;
use hpo_sgld::problems::make_poly_toy;
use hpo_sgld::registry::build_problem;
use hpo_sgld::sgld::SgldConfig;
use hpo_sgld::study::{quadratic_iterations, run_seeds, suboptimality_slope, Stat};
use hpo_sgld::toy_grid::toy_grid_study;
use hpo_sgld::problems::TabularToySpec;
use hpo_sgld::vector::FlatVector;

use crate::config::{Entry, ExperimentConfig};
use crate::error::CliError;
use crate::output::{mean_std, num, opt, short, text_table, write_csv, write_trace};

/// One method's outcome over all seeds.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub label: String,
    pub estimator: String,
    pub options: String,
    pub seeds: usize,
    pub failures: usize,
    pub lambda_error: Option<Stat>,
    pub theta_error: Option<Stat>,
    pub objective: Stat,
    /// `‖mean h⁽⁰⁾‖` and the seed spread `√E‖h⁽⁰⁾ − mean‖²` of the first
    /// hypergradient.
    pub h0_norm: f64,
    pub h0_spread: Option<f64>,
    pub total_iterations: Stat,
}

impl SummaryRow {
    pub fn from_traces(entry: &Entry, traces: &[RunTrace]) -> Self {
        let stat = |f: &dyn Fn(&RunTrace) -> Option<f64>| {
            traces.iter().map(f).collect::<Option<Vec<f64>>>().map(Stat::of)
        };
        let first: Vec<&Vec<f64>> = traces.iter().filter_map(|t| t.rows.first()).map(|r| &r.h).collect();
        let (h0_norm, h0_spread) = match first.first() {
            Some(h) => {
                let n = first.len() as f64;
                let mean: Vec<f64> = (0..h.len())
                    .map(|i| first.iter().map(|v| v[i]).sum::<f64>() / n)
                    .collect();
                let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
                let spread = (first.len() >= 2).then(|| {
                    let ss: f64 = first
                        .iter()
                        .map(|v| v.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                        .sum();
                    (ss / (n - 1.0)).sqrt()
                });
                (norm, spread)
            }
            None => (f64::NAN, None),
        };
        Self {
            label: entry.label.clone(),
            estimator: entry.estimator.clone(),
            options: entry.options(),
            seeds: traces.len(),
            failures: traces.iter().filter(|t| !t.succeeded()).count(),
            lambda_error: stat(&|t| t.lambda_error),
            theta_error: stat(&|t| t.theta_error),
            objective: Stat::of(
                traces
                    .iter()
                    .map(|t| t.rows.last().map_or(f64::NAN, |r| r.objective))
                    .collect(),
            ),
            h0_norm,
            h0_spread,
            total_iterations: Stat::of(
                traces
                    .iter()
                    .map(|t| t.rows.last().map_or(0.0, |r| r.total_iterations as f64))
                    .collect(),
            ),
        }
    }
}

pub const SUMMARY_HEADER: [&str; 14] = [
    "label",
    "estimator",
    "options",
    "seeds",
    "failures",
    "lambda_error_mean",
    "lambda_error_std",
    "theta_error_mean",
    "theta_error_std",
    "objective_mean",
    "objective_std",
    "h0_norm",
    "h0_spread",
    "total_iterations_mean",
];

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn summary_csv_row(r: &SummaryRow) -> Vec<String> {
    let (lm, ls) = mean_std(&r.lambda_error);
    let (tm, ts) = mean_std(&r.theta_error);
    vec![
        r.label.clone(),
        r.estimator.clone(),
        r.options.clone(),
        r.seeds.to_string(),
        r.failures.to_string(),
        opt(lm),
        opt(ls),
        opt(tm),
        opt(ts),
        num(r.objective.mean),
        opt(r.objective.std),
        num(r.h0_norm),
        opt(r.h0_spread),
        num(r.total_iterations.mean),
    ]
}

fn summary_text(rows: &[SummaryRow]) -> String {
    let head = header(&[
        "method", "seeds", "fail", "lambda err", "± std", "theta err", "± std", "objective", "h0 spread",
    ]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let (lm, ls) = mean_std(&r.lambda_error);
            let (tm, ts) = mean_std(&r.theta_error);
            vec![
                r.label.clone(),
                r.seeds.to_string(),
                r.failures.to_string(),
                short(lm),
                short(ls),
                short(tm),
                short(ts),
                short(Some(r.objective.mean)),
                short(r.h0_spread),
            ]
        })
        .collect();
    text_table(&head, &body)
}

/// Runs every seed for one entry and writes its traces under `prefix`.
fn sweep(cfg: &ExperimentConfig, entry: &Entry, prefix: &str) -> Result<SummaryRow, CliError> {
    let built = cfg.build_problem()?;
    let problem = &built.problem;
    let estimator = entry.build(problem.temperature())?;
    let outer = cfg.outer_config()?;
    let result = run_seeds(problem, &estimator, &outer, &cfg.seeds)?;
    for t in &result.traces {
        let path = cfg.out.join(format!("{prefix}trace_seed{}.csv", t.seed));
        write_trace(&path, t, problem.dim_lambda())?;
        if cfg.probe {
            probe_at_final(cfg, problem, &estimator, t, prefix)?;
        }
    }
    for t in &result.traces {
        if let Some(e) = &t.failure {
            eprintln!("{} seed {}: {e}", entry.label, t.seed);
        }
    }
    Ok(SummaryRow::from_traces(entry, &result.traces))
}

fn probe_at_final(
    cfg: &ExperimentConfig,
    problem: &hpo_sgld::problems::BloProblem,
    estimator: &Estimator,
    t: &RunTrace,
    prefix: &str,
) -> Result<(), CliError> {
    let Estimator::HpoSgld(sgld) = estimator else {
        return Err(CliError::Usage(format!(
            "--probe needs the hpo-sgld estimator, got {}",
            estimator.name()
        )));
    };
    let mut c = *sgld;
    c.seed = t.seed;
    let lambda = FlatVector::lambda(t.lambda_final.clone())?;
    let rec = fo_probe(problem, &lambda, &c, FMD_ENTRY_LIMIT)?;
    write_probe(&cfg.out.join(format!("{prefix}probe_seed{}.csv", t.seed)), &rec)
}

fn write_probe(
    path: &std::path::Path,
    rec: &hpo_sgld::hypergrad::ProbeRecord,
) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = rec
        .steps
        .iter()
        .map(|s| {
            vec![
                s.step.to_string(),
                num(s.rel_error),
                num(s.cum_error),
                u8::from(s.post_burn_in).to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        "probe",
        &[format!("final hypergradient relative error: {}", num(rec.final_error()))],
        &header(&["step", "rel_error", "cum_error", "is_post_burnin"]),
        &rows,
    )
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let entry = &cfg.entries[0];
    let row = sweep(cfg, entry, "")?;
    let summary = [row];
    write_csv(
        &cfg.out.join("summary.csv"),
        "summary",
        &[format!("problem: {}", cfg.problem)],
        &header(&SUMMARY_HEADER),
        &summary.iter().map(summary_csv_row).collect::<Vec<_>>(),
    )?;
    print!("{}", summary_text(&summary));
    if summary[0].failures > 0 {
        return Err(CliError::Numerical(format!(
            "{} of {} runs failed",
            summary[0].failures, summary[0].seeds
        )));
    }
    Ok(())
}

pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.entries.len() < 2 {
        return Err(CliError::Usage(format!(
            "compare needs at least two entries, got {}; add entry.<label> = <estimator> ... lines or --estimator a,b",
            cfg.entries.len()
        )));
    }
    let rows = cfg
        .entries
        .iter()
        .map(|e| sweep(cfg, e, &format!("{}/", e.label)))
        .collect::<Result<Vec<_>, _>>()?;
    write_csv(
        &cfg.out.join("compare.csv"),
        "summary",
        &[format!("problem: {}", cfg.problem)],
        &header(&SUMMARY_HEADER),
        &rows.iter().map(summary_csv_row).collect::<Vec<_>>(),
    )?;
    print!("{}", summary_text(&rows));
    Ok(())
}

const FO_KEYS: [&str; 7] = ["lambda", "eps", "lr", "kappa", "burn_in", "samples", "limit"];

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Sweeps the step size. `fo.eps` gives `ε` directly; `fo.lr` gives the
/// drift learning rate with `ε = 2τ·lr` (default `0.01, 0.005, 0.0025`).
pub fn cmd_fo_error(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let p = &cfg.extra;
    p.check_keys("fo", &FO_KEYS)?;
    let built = cfg.build_problem()?;
    let problem = &built.problem;
    let tau = problem.temperature();
    let eps: Vec<f64> = match (p.list::<f64>("eps")?, p.list::<f64>("lr")?) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give fo.eps or fo.lr, not both".into())),
        (Some(e), None) => e,
        (None, lr) => lr
            .unwrap_or_else(|| vec![0.01, 0.005, 0.0025])
            .into_iter()
            .map(|l| SgldConfig::epsilon_for_learning_rate(l, tau))
            .collect(),
    };
    let lambda = match p.list::<f64>("lambda")? {
        Some(l) => FlatVector::lambda(l)?,
        None => problem.lambda_init(),
    };
    let seed = cfg.seeds[0];
    let mut medians = Vec::new();
    let mut finals = Vec::new();
    for &e in &eps {
        let c = SgldConfig::new(
            e,
            p.get_or("kappa", 1.0)?,
            p.get_or("burn_in", 50)?,
            p.get_or("samples", 50)?,
            seed,
        )?;
        let rec = fo_probe(problem, &lambda, &c, p.get_or("limit", FMD_ENTRY_LIMIT)?)?;
        write_probe(&cfg.out.join(format!("fo_error_eps{}.csv", num(e))), &rec)?;
        medians.push(median(&rec.rel_errors()));
        finals.push(rec.final_error());
    }
    let head = header(&["eps", "median rel_error", "shrink", "final h error", "shrink"]);
    let body: Vec<Vec<String>> = eps
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let ratio = |v: &[f64]| (i > 0).then(|| v[i - 1] / v[i]);
            vec![
                format!("{e:.3e}"),
                short(Some(medians[i])),
                short(ratio(&medians)),
                short(Some(finals[i])),
                short(ratio(&finals)),
            ]
        })
        .collect();
    print!("{}", text_table(&head, &body));
    Ok(())
}

const QUAD_KEYS: [&str; 4] = ["conditions", "tol", "cap", "eta"];

/// Iterations to relative λ error `tol` per (method, condition).
pub fn cmd_quadratic(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.problem != "quadratic" {
        return Err(CliError::Usage(format!(
            "quadratic needs problem = quadratic, got {}",
            cfg.problem
        )));
    }
    let p = &cfg.extra;
    p.check_keys("quad", &QUAD_KEYS)?;
    let conditions: Vec<f64> = p.list("conditions")?.unwrap_or_else(|| vec![1.0, 10.0, 1000.0]);
    let tol: f64 = p.get_or("tol", 1e-5)?;
    let cap: usize = p.get_or("cap", 200_000)?;
    let eta: f64 = p.get_or("eta", 0.1)?;
    let entries: Vec<Entry> = if cfg.entries.is_empty() {
        ["hpo-sgld", "ift-cg", "rmd"]
            .iter()
            .map(|n| Entry {
                label: n.to_string(),
                estimator: n.to_string(),
                params: Params::new(),
            })
            .collect()
    } else {
        cfg.entries.clone()
    };

    let mut csv_rows = Vec::new();
    let mut text_rows = Vec::new();
    for entry in &entries {
        for &cond in &conditions {
            let mut pp = cfg.problem_params.clone();
            pp.set("condition", &num(cond));
            let q = build_problem("quadratic", &pp)?
                .quadratic
                .expect("quadratic problem carries its oracle");
            let est = entry.build(q.problem.temperature())?;
            let mut its = Vec::new();
            let mut diverged = 0;
            let mut rel = Vec::new();
            let mut slopes = Vec::new();
            for &seed in &cfg.seeds {
                let (o, trace) = quadratic_iterations(&q, &est, eta, cap, tol, seed)?;
                if let Some(n) = o.iterations {
                    its.push(n as f64);
                }
                diverged += usize::from(o.diverged);
                rel.push(o.final_relative_error);
                if let Some(s) = suboptimality_slope(&q, &trace) {
                    slopes.push(s);
                }
            }
            let converged = its.len();
            let it = (!its.is_empty()).then(|| Stat::of(its));
            let rel = Stat::of(rel);
            let slope = (!slopes.is_empty()).then(|| Stat::of(slopes).mean);
            csv_rows.push(vec![
                entry.label.clone(),
                entry.estimator.clone(),
                entry.options(),
                num(cond),
                cfg.seeds.len().to_string(),
                converged.to_string(),
                diverged.to_string(),
                opt(it.as_ref().map(|s| s.mean)),
                opt(it.as_ref().and_then(|s| s.std)),
                num(rel.mean),
                opt(slope),
            ]);
            let shown = match &it {
                Some(s) if converged == cfg.seeds.len() => format!("{:.0}", s.mean),
                Some(s) => format!("{:.0} ({converged}/{})", s.mean, cfg.seeds.len()),
                None if diverged > 0 => "diverged".into(),
                None => format!("> {}K", cap / 1000),
            };
            text_rows.push(vec![
                entry.label.clone(),
                format!("{cond}"),
                shown,
                short(Some(rel.mean)),
                short(slope),
            ]);
        }
    }
    write_csv(
        &cfg.out.join("quadratic.csv"),
        "quadratic",
        &[format!("tol: {}; cap: {cap}; eta: {}", num(tol), num(eta))],
        &header(&[
            "label",
            "estimator",
            "options",
            "condition",
            "seeds",
            "converged",
            "diverged",
            "iterations_mean",
            "iterations_std",
            "final_rel_error_mean",
            "slope_mean",
        ]),
        &csv_rows,
    )?;
    print!(
        "{}",
        text_table(
            &header(&["method", "condition", "iterations", "rel error", "slope"]),
            &text_rows
        )
    );
    Ok(())
}

const TOY_KEYS: [&str; 3] = ["runs", "rows", "cols"];

pub fn cmd_toy_grid(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let p = &cfg.extra;
    p.check_keys("toy", &TOY_KEYS)?;
    let runs: usize = p.get_or("runs", 20)?;
    let spec = match (p.get::<usize>("rows")?, p.get::<usize>("cols")?) {
        (None, None) => make_poly_toy().spec,
        (r, c) => TabularToySpec::grid(r.unwrap_or(21), c.unwrap_or(11)),
    };
    let seed = cfg.seeds[0];
    let report = toy_grid_study(&spec, runs, seed);

    let cols = spec.val_loss.first().map_or(0, Vec::len);
    let mut head = vec!["lambda".to_string()];
    head.extend((0..cols).map(|j| format!("optimum_{j}")));
    head.push("row_average".into());
    let avg = spec.row_average();
    let table: Vec<Vec<String>> = spec
        .lambdas
        .iter()
        .zip(&spec.val_loss)
        .zip(&avg)
        .map(|((l, row), a)| {
            let mut r = vec![num(*l)];
            r.extend(row.iter().copied().map(num));
            r.push(num(*a));
            r
        })
        .collect();
    write_csv(&cfg.out.join("toy_grid_table.csv"), "toy-table", &[], &head, &table)?;

    let picks: Vec<Vec<String>> = report
        .deterministic_choices
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            vec![
                i.to_string(),
                r.to_string(),
                num(spec.lambdas[r]),
                report.so_choice.to_string(),
                num(spec.lambdas[report.so_choice]),
            ]
        })
        .collect();
    write_csv(
        &cfg.out.join("toy_grid_runs.csv"),
        "toy-runs",
        &[format!("seed: {seed}")],
        &header(&["run", "deterministic_row", "deterministic_lambda", "so_row", "so_lambda"]),
        &picks,
    )?;

    println!("stochastic (row average): {}/{} runs select lambda = 0", report.so_successes, runs);
    println!(
        "deterministic (random optimum per row): {}/{} runs select lambda = 0",
        report.deterministic_successes, runs
    );
    println!(
        "exact deterministic success probability: {:.5} (expected {:.2} of {runs})",
        report.deterministic_probability,
        report.deterministic_probability * runs as f64
    );
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &r in &report.deterministic_choices {
        *counts.entry(r).or_default() += 1;
    }
    let dist: Vec<String> = counts
        .iter()
        .map(|(r, c)| format!("{}:{c}", spec.lambdas[*r]))
        .collect();
    println!("deterministic choices (lambda:count): {}", dist.join(" "));
    Ok(())
}
