//! Telemetry files: a header line followed by one JSON object per tick.

use crate::HarnessError;
use endonav::servo::{NavCommand, TelemetryRecord};
use serde::{Deserialize, Serialize};
use std::io::Write;

pub const TELEMETRY_VERSION: u32 = 1;

/// Settings needed to recompute the report from the file alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub telemetry_version: u32,
    pub scenario: String,
    pub dt: f64,
    /// px/s.
    pub motion_gate: f64,
    pub done_thresh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    #[serde(flatten)]
    pub record: TelemetryRecord,
    /// Operator command accepted just before this tick.
    pub command: Option<NavCommand>,
    /// Simulator ground truth: distance of the active target from the image center, px.
    pub truth_error: Option<f64>,
}

pub fn to_jsonl(header: &Header, rows: &[Row]) -> Result<String, HarnessError> {
    let mut out = serde_json::to_string(header)?;
    out.push('\n');
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses one tick line.
pub fn parse_row(line: &str) -> Result<Row, HarnessError> {
    Ok(serde_json::from_str(line)?)
}

/// Parses a whole telemetry file. Blank lines are ignored.
pub fn parse_jsonl(text: &str) -> Result<(Header, Vec<Row>), HarnessError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |line: usize, e: serde_json::Error| HarnessError::Telemetry {
        line: line + 1,
        message: e.to_string(),
    };
    let (i, first) = lines.next().ok_or(HarnessError::Telemetry {
        line: 1,
        message: "missing header".into(),
    })?;
    let header: Header = serde_json::from_str(first).map_err(|e| bad(i, e))?;
    if header.telemetry_version != TELEMETRY_VERSION {
        return Err(HarnessError::Telemetry {
            line: i + 1,
            message: format!("unsupported telemetry_version {}", header.telemetry_version),
        });
    }
    let rows = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(i, e)))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

const CSV_COLUMNS: [&str; 29] = [
    "tick",
    "time",
    "frame_id",
    "mode",
    "status",
    "phase",
    "valid",
    "inlier_fraction",
    "ds_hat_x",
    "ds_hat_y",
    "ds_desired_x",
    "ds_desired_y",
    "dq_alpha",
    "dq_beta",
    "j00",
    "j01",
    "j10",
    "j11",
    "broyden_updated",
    "e_x",
    "e_y",
    "target_x",
    "target_y",
    "alpha",
    "beta",
    "waypoints",
    "leg_start",
    "truth_error",
    "error",
];

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

pub fn write_csv<W: Write>(w: W, rows: &[Row]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let pair = |v: Option<[f64; 2]>, i: usize| opt(v.map(|a| a[i]));
    for row in rows {
        let r = &row.record;
        let j = |i: usize| opt(r.j.map(|j| j[i]));
        out.write_record([
            r.tick.to_string(),
            r.time.to_string(),
            r.frame_id.to_string(),
            enum_name(&r.mode),
            enum_name(&r.status),
            r.phase.clone().unwrap_or_default(),
            r.valid.to_string(),
            r.inlier_fraction.to_string(),
            pair(r.ds_hat, 0),
            pair(r.ds_hat, 1),
            pair(r.ds_desired, 0),
            pair(r.ds_desired, 1),
            r.dq[0].to_string(),
            r.dq[1].to_string(),
            j(0),
            j(1),
            j(2),
            j(3),
            r.broyden_updated.to_string(),
            pair(r.e, 0),
            pair(r.e, 1),
            pair(r.target, 0),
            pair(r.target, 1),
            r.alpha.to_string(),
            r.beta.to_string(),
            r.waypoints.to_string(),
            opt(r.leg_start),
            opt(row.truth_error),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
