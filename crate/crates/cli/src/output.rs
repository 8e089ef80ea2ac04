//! Versioned CSV files and aligned text tables.

use std::fs;
use std::path::Path;

use hpo_sgld::outer::RunTrace;
use hpo_sgld::study::Stat;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Shortest round-trip form, so files are byte-identical across re-runs.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Writes `# schema: blo-bench/<kind> v1`, any extra comment lines, then the
/// header and rows.
pub fn write_csv(
    path: &Path,
    kind: &str,
    comments: &[String],
    header: &[String],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut buf = format!("# schema: blo-bench/{kind} v{SCHEMA_VERSION}\n");
    for c in comments {
        buf.push_str(&format!("# {c}\n"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let body = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    buf.push_str(&String::from_utf8(body).map_err(|e| CliError::Io(e.to_string()))?);
    fs::write(path, buf)?;
    Ok(())
}

fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}_{i}")).collect()
}

/// One row per outer iteration plus a `final` row holding `λ_final`.
pub fn write_trace(path: &Path, t: &RunTrace, dim_lambda: usize) -> Result<(), CliError> {
    let mut header = vec!["k".to_string()];
    header.extend(indexed("lambda", dim_lambda));
    header.extend(indexed("h", dim_lambda));
    header.extend(
        ["objective", "hnorm", "theta_norm", "wall_ms", "mem_vecs", "total_iterations"]
            .map(String::from),
    );
    let mut rows: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.k.to_string()];
            row.extend(r.lambda.iter().copied().map(num));
            row.extend(r.h.iter().copied().map(num));
            row.extend([
                num(r.objective),
                num(r.hnorm),
                num(r.theta_norm),
                opt(r.wall_ms),
                r.mem_vecs.to_string(),
                r.total_iterations.to_string(),
            ]);
            row
        })
        .collect();
    let mut last = vec!["final".to_string()];
    last.extend(t.lambda_final.iter().copied().map(num));
    last.resize(header.len(), String::new());
    rows.push(last);
    let mut comments = vec![format!(
        "problem: {}; estimator: {}; seed: {}",
        t.problem, t.estimator, t.seed
    )];
    if let Some(e) = &t.failure {
        comments.push(format!("failed: {e}"));
    }
    write_csv(path, "trace", &comments, &header, &rows)
}

/// Aligned plain-text rendering; the first column is left-aligned.
pub fn text_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(header);
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

/// Fixed-width rendering for the text table.
pub fn short(v: Option<f64>) -> String {
    match v {
        Some(x) if x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e5) => format!("{x:.3e}"),
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    }
}

pub fn mean_std(s: &Option<Stat>) -> (Option<f64>, Option<f64>) {
    match s {
        Some(s) => (Some(s.mean), s.std),
        None => (None, None),
    }
}
