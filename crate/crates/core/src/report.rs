//! Run reports (JSON) and pull-test tables (CSV).
//!
//! Reports are written with object keys in sorted order and floats in
//! shortest round-trip form, so equal reports are equal byte for byte.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::montecarlo::PullSample;
use crate::pipeline::{AbortReason, GraspSite};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("report schema version {found:?} not supported (expected {SCHEMA_VERSION})")]
    SchemaMismatch { found: Option<u64> },
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// Candidate counts by decision.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub candidates: usize,
    pub committed: usize,
    pub aborted: usize,
    pub degenerate_geometry: usize,
    pub unreachable: usize,
    pub normal_out_of_range: usize,
    pub not_graspable: usize,
    pub insufficient_force: usize,
}

impl Summary {
    pub fn of(sites: &[GraspSite]) -> Self {
        let mut s = Summary {
            candidates: sites.len(),
            ..Default::default()
        };
        for site in sites {
            match site.decision.reason() {
                None => s.committed += 1,
                Some(reason) => {
                    s.aborted += 1;
                    *match reason {
                        AbortReason::DegenerateGeometry => &mut s.degenerate_geometry,
                        AbortReason::Unreachable => &mut s.unreachable,
                        AbortReason::NormalOutOfRange => &mut s.normal_out_of_range,
                        AbortReason::NotGraspable => &mut s.not_graspable,
                        AbortReason::InsufficientForce => &mut s.insufficient_force,
                    } += 1;
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema_version: u32,
    pub seed: u64,
    /// Wall-clock time of the run; absent in fixed-clock mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_unix_s: Option<u64>,
    pub config_echo: PipelineConfig,
    /// In rank order.
    pub candidates: Vec<GraspSite>,
    pub summary: Summary,
}

impl RunReport {
    pub fn committed(&self) -> impl Iterator<Item = &GraspSite> {
        self.candidates.iter().filter(|c| c.decision.is_committed())
    }
}

/// Canonical JSON text of `report`.
pub fn to_json(report: &RunReport) -> Result<String, ReportError> {
    // Value maps are ordered by key.
    let value = serde_json::to_value(report)?;
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub fn from_json(text: &str) -> Result<RunReport, ReportError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value.get("schema_version").and_then(|v| v.as_u64());
    if found != Some(SCHEMA_VERSION as u64) {
        return Err(ReportError::SchemaMismatch { found });
    }
    Ok(serde_json::from_value(value)?)
}

pub fn write_report(report: &RunReport, path: impl AsRef<Path>) -> Result<(), ReportError> {
    std::fs::write(path, to_json(report)?)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<RunReport, ReportError> {
    from_json(&std::fs::read_to_string(path)?)
}

#[derive(Serialize)]
struct PullRow {
    sample_index: u64,
    #[serde(rename = "pull_force_N")]
    pull_force_n: f64,
    engaged_spines: usize,
    pull_angle_deg: f64,
}

/// Pull-test table with one row per Monte Carlo sample.
pub fn write_pulltest_csv<W: Write>(samples: &[PullSample], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    for s in samples {
        w.serialize(PullRow {
            sample_index: s.index,
            pull_force_n: s.force,
            engaged_spines: s.engaged_spines,
            pull_angle_deg: s.pull_angle_deg,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Short plain-text digest of a run, one line per candidate.
pub fn render_summary(report: &RunReport) -> String {
    let s = &report.summary;
    let mut out = format!(
        "seed {}: {} candidates, {} committed, {} aborted\n",
        report.seed, s.candidates, s.committed, s.aborted
    );
    for site in &report.candidates {
        let status = match site.decision.reason() {
            None => "committed".to_string(),
            Some(r) => format!("aborted ({})", r.code()),
        };
        let p05 = site
            .pull_distribution
            .as_ref()
            .map(|d| format!(", p05 {:.1} N", d.quantiles.q05))
            .unwrap_or_default();
        let _ = writeln!(out, "  #{} r={:.3} m: {status}{p05}", site.rank, site.feature.radius());
    }
    out
}
