//! Plain-text point files, CSV tables and the JSON report.
//!
//! Numbers are written as `{:.16e}` (17 significant digits, exact round
//! trip), rows end in LF, and no timings are written, so a run is
//! reproducible byte for byte.

use crate::config::Mode;
use crate::error::{HarnessError, Result};
use crate::experiment::{ReplicaResult, RunReport, Stat};
use kinetic_core::bounds::BoundCurve;
use kinetic_core::coupling::LedgerRow;
use kinetic_core::ensemble::Snapshot;
use kinetic_core::transport::TransportPlan;
use kinetic_core::Points;
use serde_json::{json, Map, Value};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const LEDGER_HEADER: &str = "t,d1,h_pair,H,int_H,rhs_bound,n_both,n_f,n_ftilde,n_fict";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn jnum(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn jopt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, jnum)
}

/// Rows of whitespace-separated numbers. Blank lines, `#` comments and a
/// snapshot header line (`t=...`) are skipped.
pub fn parse_rows(text: &str, origin: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() || body.starts_with("t=") {
            continue;
        }
        let row = body
            .split_whitespace()
            .map(|x| x.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| HarnessError::Format {
                path: origin.to_path_buf(),
                line: k + 1,
                msg: format!("expected finite numbers, got '{body}'"),
            })?;
        if let Some(first) = rows.first().map(Vec::len) {
            if row.len() != first {
                return Err(HarnessError::Format {
                    path: origin.to_path_buf(),
                    line: k + 1,
                    msg: format!("expected {first} columns, got {}", row.len()),
                });
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

/// Table with exactly `cols` columns.
pub fn read_columns(path: &Path, cols: usize) -> Result<Vec<Vec<f64>>> {
    let rows = parse_rows(&read_text(path)?, path)?;
    if rows.first().is_some_and(|r| r.len() != cols) {
        return Err(HarnessError::Format {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected {cols} columns"),
        });
    }
    Ok(rows)
}

/// One velocity per line. Snapshot files are accepted as input.
pub fn read_points(path: &Path) -> Result<Points> {
    let rows = parse_rows(&read_text(path)?, path)?;
    let d = rows.first().map_or(0, Vec::len);
    if rows.is_empty() {
        return Err(HarnessError::Format { path: path.to_path_buf(), line: 1, msg: "no points".into() });
    }
    Ok(Points::from_rows(d, &rows)?)
}

pub fn snapshot_text(s: &Snapshot, seed: u64) -> String {
    let v = &s.velocities;
    let mut out = format!("t={} N={} d={} seed={}\n", num(s.time), v.len(), v.dim(), seed);
    for row in v.iter() {
        let cells: Vec<String> = row.iter().map(|x| num(*x)).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn ledger_csv<'a>(rows: impl IntoIterator<Item = &'a LedgerRow>) -> String {
    let mut out = format!("{LEDGER_HEADER}\n");
    for r in rows {
        let c = r.counts;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            num(r.t),
            num(r.d1),
            num(r.h_pair),
            num(r.h),
            num(r.int_h),
            num(r.rhs_bound),
            c.both,
            c.first_only,
            c.second_only,
            c.fictitious
        );
    }
    out
}

pub fn plan_csv(plan: &TransportPlan, a: &Points, b: &Points) -> String {
    let mut out = String::from("i,j,cost_ij\n");
    for (i, j, c) in plan.pair_costs(a, b) {
        let _ = writeln!(out, "{i},{j},{}", num(c));
    }
    out
}

pub fn curve_csv(curve: &BoundCurve) -> String {
    let mut out = String::from("t,value\n");
    for (t, v) in curve.iter() {
        let _ = writeln!(out, "{},{}", num(t), num(v));
    }
    out
}

fn checkpoint_rows<'a, T>(report: &RunReport, rows: &'a [T], t: fn(&T) -> f64) -> Vec<&'a T> {
    rows.iter().filter(|x| report.config.is_checkpoint(t(x))).collect()
}

fn moments_csv(report: &RunReport, replicas: &[ReplicaResult]) -> String {
    let mut out = String::from("replica,seed,t,m1,m1_bound,m1_tilde,m1_tilde_bound,m2,energy_drift,exp_moment\n");
    for r in replicas {
        for m in checkpoint_rows(report, &r.moments, |m| m.t) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.index,
                r.seed,
                num(m.t),
                num(m.m1),
                num(m.m1_bound),
                opt(m.m1_tilde),
                opt(m.m1_tilde_bound),
                num(m.m2),
                num(m.energy_drift),
                num(m.exp_moment)
            );
        }
    }
    out
}

fn stat_cells(s: Option<Stat>) -> String {
    match s {
        Some(s) => format!("{},{}", num(s.mean), opt(s.se)),
        None => ",".into(),
    }
}

fn aggregate_csv(report: &RunReport) -> String {
    let mut out = String::from("t,d1_mean,d1_se,H_mean,H_se,m1_mean,m1_se\n");
    for a in &report.aggregate {
        let _ = writeln!(out, "{},{},{},{}", num(a.t), stat_cells(a.d1), stat_cells(a.h), stat_cells(Some(a.m1)));
    }
    out
}

fn verdicts_csv(report: &RunReport) -> String {
    let mut out = String::from("check,t,passed,statistic,threshold\n");
    for v in &report.verdicts {
        let _ = writeln!(out, "{},{},{},{},{}", v.check, opt(v.t), v.passed, num(v.statistic), num(v.threshold));
    }
    out
}

fn plot_csv(report: &RunReport) -> String {
    let mut out = String::from("t,d1,envelope\n");
    for p in &report.plot {
        let _ = writeln!(out, "{},{},{}", num(p.t), num(p.d1), num(p.envelope));
    }
    out
}

fn config_text(report: &RunReport) -> String {
    report.config.echo().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn snapshot_files(report: &RunReport) -> Vec<(String, String)> {
    let mut files = Vec::new();
    for r in &report.replicas {
        for (k, s) in r.snapshots.iter().enumerate() {
            files.push((format!("snapshot_seed{}_{k}.txt", r.seed), snapshot_text(s, r.seed)));
        }
        for (k, s) in r.snapshots_tilde.iter().enumerate() {
            files.push((format!("snapshot_tilde_seed{}_{k}.txt", r.seed), snapshot_text(s, r.seed)));
        }
    }
    files
}

/// File name and contents of every CSV output of the report, in a fixed order.
pub fn csv_files(report: &RunReport) -> Vec<(String, String)> {
    let cfg = &report.config;
    let mut files = vec![("config.txt".to_string(), config_text(report))];
    match cfg.mode {
        Mode::W1 => {
            if let Some((plan, a, b)) = &report.plan {
                files.push(("plan.csv".into(), plan_csv(plan, a, b)));
                files.push(("w1.csv".into(), format!("d1\n{}\n", num(plan.cost))));
            }
        }
        Mode::Bounds => {
            if let Some(curve) = &report.curve {
                files.push(("bound.csv".into(), curve_csv(curve)));
            }
        }
        Mode::Simulate | Mode::Couple | Mode::Verify => {
            files.push(("aggregate.csv".into(), aggregate_csv(report)));
            files.push(("moments.csv".into(), moments_csv(report, &report.replicas)));
            for (prefix, reps) in [("ledger", &report.replicas), ("ledger_calibration", &report.calibration)] {
                for r in reps.iter() {
                    if let Some(l) = &r.ledger {
                        let rows = checkpoint_rows(report, &l.rows, |x| x.t);
                        files.push((format!("{prefix}_seed{}.csv", r.seed), ledger_csv(rows)));
                    }
                }
            }
            files.extend(snapshot_files(report));
            if cfg.mode == Mode::Verify {
                files.push(("verdicts.csv".into(), verdicts_csv(report)));
                files.push(("plot.csv".into(), plot_csv(report)));
            }
        }
    }
    files
}

fn ledger_json(report: &RunReport, r: &ReplicaResult) -> Value {
    let rows: Vec<Value> = r
        .ledger
        .iter()
        .flat_map(|l| checkpoint_rows(report, &l.rows, |x| x.t))
        .map(|row| {
            json!({
                "t": jnum(row.t), "d1": jnum(row.d1), "h_pair": jnum(row.h_pair), "H": jnum(row.h),
                "int_H": jnum(row.int_h), "rhs_bound": jnum(row.rhs_bound),
                "n_both": row.counts.both, "n_f": row.counts.first_only,
                "n_ftilde": row.counts.second_only, "n_fict": row.counts.fictitious,
            })
        })
        .collect();
    let moments: Vec<Value> = checkpoint_rows(report, &r.moments, |m| m.t)
        .into_iter()
        .map(|m| {
            json!({
                "t": jnum(m.t), "m1": jnum(m.m1), "m1_bound": jnum(m.m1_bound),
                "m1_tilde": jopt(m.m1_tilde), "m1_tilde_bound": jopt(m.m1_tilde_bound),
                "m2": jnum(m.m2), "energy_drift": jnum(m.energy_drift), "exp_moment": jnum(m.exp_moment),
            })
        })
        .collect();
    json!({ "replica": r.index, "seed": r.seed, "ledger": rows, "moments": moments })
}

fn stat_json(s: Option<Stat>) -> Value {
    s.map_or(Value::Null, |s| json!({ "mean": jnum(s.mean), "se": jopt(s.se) }))
}

/// Single JSON object: the config echo under `config`, arrays under `series`.
/// Object keys are sorted, so the text is stable.
pub fn report_json(report: &RunReport) -> Value {
    let config: Map<String, Value> =
        report.config.echo().iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
    let mut series = Map::new();
    if let Some((plan, a, b)) = &report.plan {
        let pairs: Vec<Value> =
            plan.pair_costs(a, b).into_iter().map(|(i, j, c)| json!({ "i": i, "j": j, "cost_ij": jnum(c) })).collect();
        series.insert("plan".into(), Value::Array(pairs));
        series.insert("w1".into(), jnum(plan.cost));
    }
    if let Some(curve) = &report.curve {
        let pts: Vec<Value> = curve.iter().map(|(t, v)| json!({ "t": jnum(t), "value": jnum(v) })).collect();
        series.insert("bound".into(), Value::Array(pts));
    }
    if !report.replicas.is_empty() {
        let agg: Vec<Value> = report
            .aggregate
            .iter()
            .map(|a| json!({ "t": jnum(a.t), "d1": stat_json(a.d1), "H": stat_json(a.h), "m1": stat_json(Some(a.m1)) }))
            .collect();
        series.insert("aggregate".into(), Value::Array(agg));
        series.insert("replicas".into(), report.replicas.iter().map(|r| ledger_json(report, r)).collect());
        if !report.calibration.is_empty() {
            series.insert("calibration".into(), report.calibration.iter().map(|r| ledger_json(report, r)).collect());
        }
    }
    if report.config.mode == Mode::Verify {
        let v: Vec<Value> = report
            .verdicts
            .iter()
            .map(|v| {
                json!({ "check": v.check, "t": jopt(v.t), "passed": v.passed,
                        "statistic": jnum(v.statistic), "threshold": jnum(v.threshold) })
            })
            .collect();
        series.insert("verdicts".into(), Value::Array(v));
        let p: Vec<Value> = report
            .plot
            .iter()
            .map(|p| json!({ "t": jnum(p.t), "d1": jnum(p.d1), "envelope": jnum(p.envelope) }))
            .collect();
        series.insert("plot".into(), Value::Array(p));
    }
    json!({ "mode": report.config.mode.name(), "config": config, "series": series })
}

/// Write the report into `dir`, returning the paths written.
pub fn emit(report: &RunReport, format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let files = match format {
        Format::Csv => csv_files(report),
        Format::Json => {
            let mut text = serde_json::to_string_pretty(&report_json(report)).expect("JSON values serialize");
            text.push('\n');
            let mut files = vec![("report.json".to_string(), text)];
            files.extend(snapshot_files(report));
            files
        }
    };
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
