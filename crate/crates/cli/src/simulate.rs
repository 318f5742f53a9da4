//! `simulate` and `report`: batch runs and their comparison tables.

use std::path::Path;

use anyhow::{bail, Result};
use capsim::engine::{run_batch, RunResult, SimConfig};
use capsim::model::AgentStatus;
use capsim::policy::{validate_delta, PolicyDelta};
use capsim::stats::{compare_batches, summarize_runs, ComparisonReport, StdConvention};

use crate::io::{write_atomic, write_json};

/// Rejects a delta that is invalid for any status matrix it would touch.
pub fn check_delta(cfg: &SimConfig, delta: &PolicyDelta) -> Result<()> {
    for status in AgentStatus::ALL {
        if !delta.predicate.matches(&status) {
            continue;
        }
        let report = validate_delta(delta, &cfg.matrix_for(status));
        if !report.is_ok() {
            bail!("delta `{}` is invalid for {} agents: {report}", delta.label, status.name());
        }
        for w in &report.warnings {
            log::warn!("delta `{}`: {w}", delta.label);
        }
    }
    Ok(())
}

pub fn summary_csv(runs: &[RunResult], convention: StdConvention) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["category", "mean", "std"])?;
    for (c, s) in summarize_runs(runs, convention) {
        w.write_record([c.name().to_string(), format!("{:.6}", s.mean), format!("{:.6}", s.std)])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Runs `n_runs` seeds and writes `runs.json` and `summary.csv`.
pub fn run_simulate(
    cfg: &SimConfig,
    delta: Option<&PolicyDelta>,
    n_runs: usize,
    convention: StdConvention,
    out: &Path,
) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    if let Some(d) = delta {
        check_delta(cfg, d)?;
    }
    let runs = run_batch(cfg, n_runs, delta)?;
    write_json(&out.join("runs.json"), &runs)?;
    write_atomic(&out.join("summary.csv"), summary_csv(&runs, convention)?.as_bytes())?;
    Ok(runs)
}

pub fn report_csv(report: &ComparisonReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "category",
        "baseline_mean",
        "baseline_std",
        "treated_mean",
        "treated_std",
        "mean_diff",
        "std_diff",
        "t",
        "df",
        "p_value",
        "p_raw",
    ])?;
    for r in &report.categories {
        w.write_record([
            r.category.name().to_string(),
            format!("{:.6}", r.baseline.mean),
            format!("{:.6}", r.baseline.std),
            format!("{:.6}", r.treated.mean),
            format!("{:.6}", r.treated.std),
            format!("{:.6}", r.mean_diff),
            format!("{:.6}", r.std_diff),
            format!("{:.6}", r.t),
            format!("{:.6}", r.df),
            format!("{:.6e}", r.p_value),
            format!("{:.6e}", r.p_raw),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Compares two batches and writes `report.json`, `report.csv` and
/// `report.txt`.
pub fn run_report(
    baseline: &[RunResult],
    treated: &[RunResult],
    convention: StdConvention,
    label: &str,
    out: &Path,
) -> Result<ComparisonReport> {
    let report = compare_batches(baseline, treated, convention)?;
    write_report(&report, label, out)?;
    Ok(report)
}

pub fn write_report(report: &ComparisonReport, label: &str, out: &Path) -> Result<()> {
    write_json(&out.join("report.json"), report)?;
    write_atomic(&out.join("report.csv"), report_csv(report)?.as_bytes())?;
    write_atomic(&out.join("report.txt"), report.to_table(label).as_bytes())?;
    Ok(())
}

pub fn load_runs(path: &Path) -> Result<Vec<RunResult>> {
    let text = crate::io::read_text(path)?;
    serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("parsing {}: {e}", path.display()))
}
