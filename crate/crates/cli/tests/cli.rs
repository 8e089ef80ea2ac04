use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blo-bench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn recipe(name: &str) -> String {
    format!("{}/../../recipes/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn out_arg(dir: &TempDir) -> String {
    dir.path().to_str().unwrap().to_string()
}

/// Header plus data rows, skipping `#` comment lines.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_versioned_trace_and_summary() {
    let dir = TempDir::new().unwrap();
    let o = bench(&["run", "--config", &recipe("synth1d-run.conf"), "--seed", "0", "--out", &out_arg(&dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = fs::read_to_string(dir.path().join("trace_seed0.csv")).unwrap();
    assert!(trace.starts_with("# schema: blo-bench/trace v1\n"));
    let (header, rows) = read_csv(&dir.path().join("trace_seed0.csv"));
    for col in ["k", "lambda_0", "objective", "hnorm", "wall_ms", "mem_vecs"] {
        column(&header, col);
    }
    assert_eq!(rows.len(), 201);
    assert_eq!(rows.last().unwrap()[0], "final");
    let (sh, sr) = read_csv(&dir.path().join("summary.csv"));
    assert_eq!(sr.len(), 1);
    let err: f64 = sr[0][column(&sh, "lambda_error_mean")].parse().unwrap();
    assert!(err < 0.03, "lambda error {err}");
    assert_eq!(sr[0][column(&sh, "lambda_error_std")], "", "no std for one seed");
}

#[test]
fn two_seeds_report_a_standard_deviation() {
    let dir = TempDir::new().unwrap();
    let o = bench(&[
        "run", "--problem", "noisy-synth1d", "--estimator", "hpo-sgld", "--seeds", "0,1",
        "--set", "outer.iterations=20", "--out", &out_arg(&dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = read_csv(&dir.path().join("summary.csv"));
    let std: f64 = rows[0][column(&h, "lambda_error_std")].parse().unwrap();
    assert!(std > 0.0);
}

#[test]
fn unknown_estimator_is_a_usage_error_listing_names() {
    let dir = TempDir::new().unwrap();
    let o = bench(&["run", "--estimator", "foo", "--out", &out_arg(&dir)]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    for name in ["hpo-sgld", "ift-neumann", "ift-cg", "rmd", "fmd", "es"] {
        assert!(msg.contains(name), "{msg}");
    }
}

#[test]
fn invalid_keys_and_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let o = bench(&["run", "--set", "estimator.alhpa=1", "--out", &out_arg(&dir)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("valid keys"));
    let o = bench(&["run", "--seed", "1", "--seeds", "1,2", "--out", &out_arg(&dir)]);
    assert_eq!(o.status.code(), Some(2));
    let o = bench(&["run", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_needs_two_entries() {
    let dir = TempDir::new().unwrap();
    let o = bench(&["compare", "--out", &out_arg(&dir)]);
    assert_eq!(o.status.code(), Some(2));
    let o = bench(&["compare", "--estimator", "ift-cg", "--out", &out_arg(&dir)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let o = bench(&[
        "run", "--problem", "quadratic", "--estimator", "ift-neumann",
        "--set", "estimator.alpha=1.0", "--set", "estimator.terms=200",
        "--set", "outer.iterations=3", "--out", &out_arg(&dir),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(dir.path().join("trace_seed0.csv").exists());
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        out.push((rel, fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for d in [&a, &b] {
        let o = bench(&[
            "compare", "--config", &recipe("noisy-synth1d-compare.conf"), "--seeds", "3,4",
            "--set", "outer.iterations=15", "--out", &out_arg(d),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), 7);
    assert_eq!(fa, fb);
}

#[test]
fn summary_is_recomputable_from_traces() {
    let dir = TempDir::new().unwrap();
    let o = bench(&[
        "compare", "--config", &recipe("synth1d-compare.conf"), "--seeds", "0,1,2",
        "--set", "entries=hpo-sgld,rmd-100", "--set", "outer.iterations=30", "--out", &out_arg(&dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (sh, summary) = read_csv(&dir.path().join("compare.csv"));
    assert_eq!(summary.len(), 2);
    for row in &summary {
        let label = &row[column(&sh, "label")];
        let errors: Vec<f64> = [0, 1, 2]
            .iter()
            .map(|s| {
                let (h, rows) = read_csv(&dir.path().join(label).join(format!("trace_seed{s}.csv")));
                let last = rows.last().unwrap();
                assert_eq!(last[0], "final");
                let l: f64 = last[column(&h, "lambda_0")].parse().unwrap();
                (l - 0.7487).abs()
            })
            .collect();
        let mean = errors.iter().sum::<f64>() / 3.0;
        let std = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        let got_mean: f64 = row[column(&sh, "lambda_error_mean")].parse().unwrap();
        let got_std: f64 = row[column(&sh, "lambda_error_std")].parse().unwrap();
        assert!((got_mean - mean).abs() < 1e-12, "{label}: {got_mean} vs {mean}");
        assert!((got_std - std).abs() < 1e-12, "{label}: {got_std} vs {std}");
    }
}

#[test]
fn fo_error_flags_post_burn_in_from_step_b_plus_one() {
    let dir = TempDir::new().unwrap();
    let o = bench(&[
        "fo-error", "--config", &recipe("fo-error.conf"), "--set", "fo.burn_in=7",
        "--set", "fo.samples=3", "--set", "fo.lr=0.005", "--out", &out_arg(&dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let path = walk(dir.path()).into_iter().next().unwrap();
    let (h, rows) = read_csv(&path);
    let (step, flag) = (column(&h, "step"), column(&h, "is_post_burnin"));
    assert_eq!(rows.len(), 10);
    let first = rows.iter().find(|r| r[flag] == "1").unwrap();
    assert_eq!(first[step], "8");
    assert!(rows.iter().all(|r| r[column(&h, "rel_error")].parse::<f64>().unwrap().is_finite()));
}

#[test]
fn toy_grid_reports_success_and_emits_the_table() {
    let dir = TempDir::new().unwrap();
    let o = bench(&["toy-grid", "--config", &recipe("toy-grid.conf"), "--out", &out_arg(&dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("20/20 runs select lambda = 0"), "{stdout}");
    let (h, rows) = read_csv(&dir.path().join("toy_grid_table.csv"));
    assert_eq!(rows.len(), 21);
    let avg = column(&h, "row_average");
    let best = rows
        .iter()
        .min_by(|a, b| {
            let x: f64 = a[avg].parse().unwrap();
            x.total_cmp(&b[avg].parse().unwrap())
        })
        .unwrap();
    assert_eq!(best[0].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn quadratic_reports_iterations_per_condition() {
    let dir = TempDir::new().unwrap();
    let o = bench(&[
        "quadratic", "--config", &recipe("quadratic.conf"), "--set", "entries=ift-cg,rmd",
        "--set", "quad.conditions=1", "--out", &out_arg(&dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = read_csv(&dir.path().join("quadratic.csv"));
    assert_eq!(rows.len(), 2);
    for r in &rows {
        let n: f64 = r[column(&h, "iterations_mean")].parse().unwrap();
        assert!(n > 0.0 && n <= 200_000.0);
    }
}

#[test]
fn problem_mismatch_for_quadratic_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let o = bench(&["quadratic", "--problem", "synth1d", "--out", &out_arg(&dir)]);
    assert_eq!(o.status.code(), Some(2));
}
