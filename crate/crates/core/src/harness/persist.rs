//! Run artifacts: the per-step `series.csv` and the `summary.json` document.
//!
//! CSV output is a pure function of the recorded series (fixed float
//! formatting, no timestamps), so identical runs produce identical bytes.

use crate::diagnostics::MonitorReport;
use crate::error::Result;
use crate::harness::scenario::{NamedRun, ScenarioOutcome};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

pub const SERIES_HEADER: &str =
    "step,t,eps,energy,dissipation_residual,max_fstar,max_phi,stationarity_residual,drift";

fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

/// Render the monitor series with the fixed column contract.
pub fn series_csv(report: &MonitorReport) -> String {
    let mut out = String::with_capacity(64 * (report.rows.len() + 1));
    out.push_str(SERIES_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.step,
            fmt_f64(r.t),
            fmt_f64(r.eps),
            fmt_f64(r.energy),
            fmt_f64(r.dissipation_residual),
            fmt_f64(r.max_fstar),
            fmt_f64(r.max_phi),
            fmt_f64(r.stationarity_residual),
            fmt_f64(r.drift)
        );
    }
    out
}

#[derive(Serialize)]
struct PropertyDoc<'a> {
    name: &'a str,
    pass: bool,
    observed: f64,
    threshold: f64,
    detail: &'a str,
}

#[derive(Serialize)]
struct RunDoc<'a> {
    label: &'a str,
    flow: &'a crate::flow::FlowConfig,
    rows: usize,
    final_t: f64,
    final_energy: f64,
    final_stationarity_residual: f64,
    final_drift: f64,
    dissipation_sum: f64,
    leg_stops: Vec<(f64, crate::flow::StopReason)>,
    abort: Option<&'a str>,
    flags: crate::diagnostics::SummaryFlags,
    wall_time_secs: f64,
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    scenario: &'a str,
    seed: u64,
    version: &'a str,
    pass: bool,
    properties: Vec<PropertyDoc<'a>>,
    runs: Vec<RunDoc<'a>>,
    wall_time_secs: f64,
}

fn run_doc(named: &NamedRun) -> RunDoc<'_> {
    let rec = &named.record;
    let last = rec.report.rows.last();
    RunDoc {
        label: &named.label,
        flow: &rec.config,
        rows: rec.report.rows.len(),
        final_t: rec.final_state.t,
        final_energy: last.map(|r| r.energy).unwrap_or(f64::NAN),
        final_stationarity_residual: last.map(|r| r.stationarity_residual).unwrap_or(f64::NAN),
        final_drift: last.map(|r| r.drift).unwrap_or(f64::NAN),
        dissipation_sum: rec.dissipation_sum,
        leg_stops: rec.leg_stops.clone(),
        abort: rec.abort.as_deref(),
        flags: rec.report.flags,
        wall_time_secs: rec.wall_time_secs,
    }
}

pub fn summary_json(outcome: &ScenarioOutcome) -> String {
    let doc = SummaryDoc {
        scenario: &outcome.id,
        seed: outcome.seed,
        version: env!("CARGO_PKG_VERSION"),
        pass: outcome.pass(),
        properties: outcome
            .properties
            .iter()
            .map(|p| PropertyDoc {
                name: &p.name,
                pass: p.pass,
                observed: p.observed,
                threshold: p.threshold,
                detail: &p.detail,
            })
            .collect(),
        runs: outcome.runs.iter().map(run_doc).collect(),
        wall_time_secs: outcome.runs.iter().map(|r| r.record.wall_time_secs).sum(),
    };
    serde_json::to_string_pretty(&doc).expect("summary serialization")
}

/// Write `summary.json` plus one `series.csv` per run (under `<label>/` for
/// multi-run scenarios).
pub fn write_outcome(dir: &Path, outcome: &ScenarioOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("summary.json"), summary_json(outcome))?;
    for named in &outcome.runs {
        let run_dir = if outcome.runs.len() == 1 {
            dir.to_path_buf()
        } else {
            let d = dir.join(&named.label);
            std::fs::create_dir_all(&d)?;
            d
        };
        std::fs::write(run_dir.join("series.csv"), series_csv(&named.record.report))?;
    }
    Ok(())
}
