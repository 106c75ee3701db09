//! CSV serialization. Floats use the shortest decimal form that parses
//! back to the same value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use foba_core::foba::TraceRecord;

use crate::config::Algorithm;
use crate::experiments::{ClassificationRow, ResultRow, Selection, SweepReport};

pub const RESULTS_HEADER: &str =
    "algorithm,objective_kind,seed,k_bar_or_S,f_measure,est_error,objective,nnz,wall_micros,stop_reason";
pub const CLASSIFICATION_HEADER: &str =
    "algorithm,objective_kind,seed,k_bar_or_S,train_error,test_error,objective,wall_micros";
pub const SUMMARY_HEADER: &str =
    "algorithm,objective_kind,k_bar_or_S,runs,f_measure,est_error,objective,nnz,train_error,test_error,wall_micros";
pub const TRACE_HEADER: &str =
    "iteration,kind,feature,goodness,q_before,q_after,support_size,wall_micros";

/// Round-trip decimal; non-finite values become empty fields.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn sorted_results(rows: &[ResultRow], order: &[Algorithm]) -> Vec<ResultRow> {
    let rank = |a: Algorithm| order.iter().position(|&b| b == a).unwrap_or(usize::MAX);
    let mut rows = rows.to_vec();
    rows.sort_by_key(|r| (r.k, r.seed, rank(r.algorithm)));
    rows
}

pub fn results_csv(rows: &[ResultRow], order: &[Algorithm]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in sorted_results(rows, order) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.algorithm,
            r.objective_kind,
            r.seed,
            r.k,
            opt(r.f_measure),
            opt(r.est_error),
            num(r.objective),
            r.nnz,
            r.wall_micros,
            r.stop_reason
        );
    }
    out
}

pub fn classification_csv(rows: &[ClassificationRow], order: &[Algorithm]) -> String {
    let rank = |a: Algorithm| order.iter().position(|&b| b == a).unwrap_or(usize::MAX);
    let mut rows = rows.to_vec();
    rows.sort_by_key(|r| (r.k, r.seed, rank(r.algorithm)));
    let mut out = format!("{CLASSIFICATION_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.algorithm,
            r.objective_kind,
            r.seed,
            r.k,
            num(r.train_error),
            num(r.test_error),
            num(r.objective),
            r.wall_micros
        );
    }
    out
}

#[derive(Default)]
struct Acc {
    kind: &'static str,
    runs: usize,
    f: Vec<f64>,
    est: Vec<f64>,
    obj: Vec<f64>,
    nnz: Vec<f64>,
    train: Vec<f64>,
    test: Vec<f64>,
    wall: Vec<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean metrics per `(algorithm, sweep value)`.
pub fn summary_csv(report: &SweepReport, order: &[Algorithm]) -> String {
    let rank = |a: Algorithm| order.iter().position(|&b| b == a).unwrap_or(usize::MAX);
    let mut groups: BTreeMap<(usize, usize, Algorithm), Acc> = BTreeMap::new();
    for r in sorted_results(&report.results, order) {
        let acc = groups
            .entry((rank(r.algorithm), r.k, r.algorithm))
            .or_default();
        acc.kind = r.objective_kind;
        acc.runs += 1;
        acc.f.extend(r.f_measure);
        acc.est.extend(r.est_error);
        acc.obj.push(r.objective);
        acc.nnz.push(r.nnz as f64);
        acc.wall.push(r.wall_micros as f64);
    }
    for r in &report.classification {
        let acc = groups
            .entry((rank(r.algorithm), r.k, r.algorithm))
            .or_default();
        acc.train.push(r.train_error);
        acc.test.push(r.test_error);
    }
    let mut out = format!("{SUMMARY_HEADER}\n");
    for ((_, k, algo), a) in groups {
        let _ = writeln!(
            out,
            "{algo},{},{k},{},{},{},{},{},{},{},{}",
            a.kind,
            a.runs,
            opt(mean(&a.f)),
            opt(mean(&a.est)),
            opt(mean(&a.obj)),
            opt(mean(&a.nnz)),
            opt(mean(&a.train)),
            opt(mean(&a.test)),
            opt(mean(&a.wall)),
        );
    }
    out
}

pub fn trace_csv(trace: &[TraceRecord], one_based: bool) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for t in trace {
        let feature = t
            .feature
            .map(|f| (f + one_based as usize).to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            t.iteration,
            t.kind,
            feature,
            num(t.goodness),
            num(t.q_before),
            num(t.q_after),
            t.support_size,
            t.wall_micros
        );
    }
    out
}

pub fn selected_csv(sel: &Selection, one_based: bool) -> String {
    let mut out = String::from("feature,coefficient\n");
    for j in sel.result.support.iter() {
        let _ = writeln!(
            out,
            "{},{}",
            j + one_based as usize,
            num(sel.result.beta[j])
        );
    }
    out
}

pub fn groups_csv(groups: &[usize], one_based: bool) -> String {
    let mut out = String::from("group\n");
    for g in groups {
        let _ = writeln!(out, "{}", g + one_based as usize);
    }
    out
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

/// Writes `results.csv`, `summary.csv` and, when present, `classification.csv`.
pub fn write_sweep(dir: &Path, report: &SweepReport, order: &[Algorithm]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(dir, "results.csv", &results_csv(&report.results, order))?;
    if !report.classification.is_empty() {
        write(
            dir,
            "classification.csv",
            &classification_csv(&report.classification, order),
        )?;
    }
    write(dir, "summary.csv", &summary_csv(report, order))
}

/// Writes `selected.csv`, `trace.csv` and, with grouping, `groups.csv`.
pub fn write_selection(dir: &Path, sel: &Selection, one_based: bool) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(dir, "selected.csv", &selected_csv(sel, one_based))?;
    write(dir, "trace.csv", &trace_csv(&sel.result.trace, one_based))?;
    if let Some(groups) = &sel.groups {
        write(dir, "groups.csv", &groups_csv(groups, one_based))?;
    }
    Ok(())
}
