//! Run report derived from telemetry alone.

use crate::metrics::{direction_error_stats, direction_errors, median, step_response_stats, DirectionStats, StepStats};
use crate::telemetry::{Header, Row};
use endonav::servo::{ModeKind, NavCommand, Status};
use serde::{Deserialize, Serialize};

pub const REPORT_VERSION: u32 = 1;

/// Heading change (degrees) that starts a new manual segment.
const SEGMENT_TURN: f64 = 45.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub report_version: u32,
    pub scenario: String,
    pub ticks: usize,
    pub duration: f64,
    /// Ĵ row-major at the end of the first completed calibration.
    pub calibration: Option<[f64; 4]>,
    pub direction: DirectionStats,
    /// Per-tick direction error in degrees, manual ticks only.
    pub direction_series: Vec<Option<f64>>,
    pub segments: Vec<Segment>,
    pub square: Option<SquareStats>,
    pub targets: Vec<TargetEpisode>,
    pub halt: Option<String>,
}

/// A stretch of manual driving with a roughly constant requested heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_tick: u64,
    pub end_tick: u64,
    /// Requested heading in image coordinates, degrees.
    pub heading: f64,
    pub peak_error: Option<f64>,
    /// Median direction error over the first ten gated ticks.
    pub early_error: Option<f64>,
    /// Median direction error over the second half of the segment.
    pub late_error: Option<f64>,
    /// Summed measured center motion, px.
    pub displacement: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareStats {
    pub sides: [f64; 4],
    /// `(max − min) / mean` of the side lengths.
    pub asymmetry: f64,
    /// Net displacement over mean side length.
    pub closure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEpisode {
    pub mode: ModeKind,
    pub start_tick: u64,
    pub end_tick: u64,
    pub reached: bool,
    /// Error norm per tick from the first tick with a goal, px.
    pub trace: Vec<f64>,
    pub response: Option<StepStats>,
    pub final_error: Option<f64>,
    pub truth_error: Option<f64>,
    pub waypoints: u32,
    /// Goal distance at the start of each leg, px.
    pub legs: Vec<f64>,
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

fn heading(v: [f64; 2]) -> f64 {
    v[1].atan2(v[0]).to_degrees()
}

fn heading_change(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(360.0);
    d.min(360.0 - d)
}

pub fn compute_report(header: &Header, rows: &[Row]) -> MetricsReport {
    let manual = |r: &Row| r.record.mode == ModeKind::Manual;
    // pair ticks only when both belong to manual driving
    let desired: Vec<Option<[f64; 2]>> = rows
        .iter()
        .map(|r| if manual(r) { r.record.ds_desired } else { None })
        .collect();
    let realized: Vec<Option<[f64; 2]>> = rows
        .iter()
        .map(|r| if manual(r) { r.record.ds_hat } else { None })
        .collect();
    let series = direction_errors(&desired, &realized, header.motion_gate * header.dt);
    let gated: Vec<f64> = series.iter().flatten().copied().collect();

    let segments = segments(rows, &series);
    let square = square(&segments);
    let calibration = rows
        .iter()
        .find(|r| r.record.phase.as_deref() == Some("calibrated"))
        .and_then(|r| r.record.j);
    let halt = rows.iter().find_map(|r| r.record.error.clone());
    MetricsReport {
        report_version: REPORT_VERSION,
        scenario: header.scenario.clone(),
        ticks: rows.len(),
        duration: rows.len() as f64 * header.dt,
        calibration,
        direction: direction_error_stats(&gated),
        direction_series: series,
        segments,
        square,
        targets: episodes(rows),
        halt,
    }
}

fn segments(rows: &[Row], series: &[Option<f64>]) -> Vec<Segment> {
    let mut out: Vec<(usize, usize, f64)> = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        let Some(d) = r.record.ds_desired.filter(|d| r.record.mode == ModeKind::Manual && norm(*d) > 0.0) else {
            continue;
        };
        let h = heading(d);
        match out.last_mut() {
            Some((_, end, h0)) if *end + 1 == k && heading_change(*h0, h) <= SEGMENT_TURN => {
                *end = k;
                *h0 = h;
            }
            _ => out.push((k, k, h)),
        }
    }
    out.into_iter()
        .map(|(a, b, _)| {
            // the motion answering tick k's command is measured at k + 1
            let errs: Vec<f64> = series[a + 1..=(b + 1).min(series.len() - 1)].iter().flatten().copied().collect();
            let disp = rows[a + 1..=(b + 1).min(rows.len() - 1)]
                .iter()
                .filter_map(|r| r.record.ds_hat)
                .fold([0.0, 0.0], |s, d| [s[0] + d[0], s[1] + d[1]]);
            Segment {
                start_tick: rows[a].record.tick,
                end_tick: rows[b].record.tick,
                heading: heading(rows[a].record.ds_desired.unwrap_or([1.0, 0.0])),
                peak_error: errs.iter().copied().max_by(f64::total_cmp),
                early_error: median(&errs[..errs.len().min(10)]),
                late_error: median(&errs[errs.len() / 2..]),
                displacement: disp,
            }
        })
        .collect()
}

fn square(segments: &[Segment]) -> Option<SquareStats> {
    let four: Vec<&Segment> = segments.iter().take(4).collect();
    if four.len() < 4 {
        return None;
    }
    let sides = [0, 1, 2, 3].map(|i| norm(four[i].displacement));
    let mean = sides.iter().sum::<f64>() / 4.0;
    if !(mean > 0.0) {
        return None;
    }
    let max = sides.iter().copied().fold(f64::MIN, f64::max);
    let min = sides.iter().copied().fold(f64::MAX, f64::min);
    let net = four
        .iter()
        .fold([0.0, 0.0], |s, g| [s[0] + g.displacement[0], s[1] + g.displacement[1]]);
    Some(SquareStats {
        sides,
        asymmetry: (max - min) / mean,
        closure: norm(net) / mean,
    })
}

fn episodes(rows: &[Row]) -> Vec<TargetEpisode> {
    let mut out: Vec<TargetEpisode> = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    let mut open = false;
    for r in rows {
        let rec = &r.record;
        let targeted = matches!(rec.mode, ModeKind::ShortRange | ModeKind::LongRange);
        if r.command.is_some() && open {
            close(&mut out, &times);
            open = false;
        }
        if targeted && matches!(r.command, Some(NavCommand::ShortRange { .. } | NavCommand::LongRange { .. })) {
            times.clear();
            out.push(TargetEpisode {
                mode: rec.mode,
                start_tick: rec.tick,
                end_tick: rec.tick,
                reached: false,
                trace: Vec::new(),
                response: None,
                final_error: None,
                truth_error: None,
                waypoints: 0,
                legs: Vec::new(),
            });
            open = true;
        }
        if !open {
            continue;
        }
        let ep = out.last_mut().expect("open episode");
        ep.end_tick = rec.tick;
        ep.truth_error = r.truth_error;
        if !targeted {
            close(&mut out, &times);
            open = false;
            continue;
        }
        if let Some(e) = rec.e {
            ep.trace.push(norm(e));
            times.push(rec.time);
            ep.final_error = Some(norm(e));
        }
        ep.waypoints = ep.waypoints.max(rec.waypoints);
        ep.legs.extend(rec.leg_start);
        if rec.status == Status::Reached {
            ep.reached = true;
            close(&mut out, &times);
            open = false;
        }
    }
    if open {
        close(&mut out, &times);
    }
    out
}

fn close(out: &mut [TargetEpisode], times: &[f64]) {
    if let Some(ep) = out.last_mut() {
        if !ep.trace.is_empty() {
            ep.response = step_response_stats(times, &ep.trace).ok();
        }
    }
}
