//! Batch execution of scenarios in simulated time.

use crate::report::{compute_report, MetricsReport};
use crate::rig::Rig;
use crate::scenario::{Action, Scenario};
use crate::telemetry::{to_jsonl, write_csv, Header, Row, TELEMETRY_VERSION};
use crate::HarnessError;
use endonav::mosaic::MosaicState;
use endonav::scene::Frame;
use endonav::servo::{Controller, NavCommand, ServoError, Status, TickInput};
use nalgebra::Vector2;
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

/// Controller halt or rejected command that ended a run early.
#[derive(Debug, Clone, PartialEq)]
pub struct Abort {
    pub tick: u64,
    pub cause: String,
}

pub struct Simulation {
    pub header: Header,
    pub rows: Vec<Row>,
    pub controller: Controller,
    pub rig: Rig,
    /// Frames kept for the `frames/` directory.
    pub saved_frames: Vec<Frame>,
    pub abort: Option<Abort>,
}

/// Applies `cmd` and points the ground-truth tracker at its target.
pub fn apply_command(controller: &mut Controller, rig: &mut Rig, cmd: &NavCommand) -> Result<(), ServoError> {
    controller.command(cmd.clone())?;
    match *cmd {
        NavCommand::ShortRange { target } => rig.aim_frame(Vector2::new(target[0], target[1])),
        NavCommand::LongRange { target } => rig.aim_mosaic(&controller.mosaic, Vector2::new(target[0], target[1])),
        NavCommand::Manual { .. } => {}
        _ => rig.clear_target(),
    }
    Ok(())
}

/// Runs the scenario without touching the filesystem.
pub fn simulate(scenario: &Scenario) -> Result<Simulation, HarnessError> {
    scenario.validate()?;
    let (sim_cfg, servo_cfg) = scenario.resolved();
    let mut rig = Rig::new(sim_cfg)?;
    let mut controller = Controller::new(servo_cfg.clone());
    let header = Header {
        telemetry_version: TELEMETRY_VERSION,
        scenario: scenario.name.clone(),
        dt: scenario.dt,
        motion_gate: servo_cfg.motion_gate,
        done_thresh: servo_cfg.done_thresh,
    };
    let mut frame = rig.render()?;
    let mut rows = Vec::new();
    let mut saved_frames = Vec::new();
    let mut abort = None;
    let mut next = 0;
    let mut reached_since = false;
    let mut rotating: Option<(Action, f64)> = None;

    for k in 0..scenario.ticks() {
        let t = k as f64 * scenario.dt;
        let mut command = None;
        let mut advance = 0.0;
        let mut failed = None;
        while let Some(entry) = scenario.script.get(next) {
            let due = entry.at.map_or(true, |a| t + 1e-9 >= a) && (!entry.after_reached || reached_since);
            if !due {
                break;
            }
            next += 1;
            reached_since = false;
            rotating = None;
            match entry.action {
                Action::Advance { mm } => advance += mm,
                Action::Rotating { .. } => rotating = Some((entry.action.clone(), t)),
                _ => {}
            }
            if let Some(cmd) = entry.action.command(0.0) {
                if let Err(e) = apply_command(&mut controller, &mut rig, &cmd) {
                    failed = Some(e.to_string());
                    break;
                }
                command = Some(cmd);
            }
        }
        if let (None, Some((action, t0))) = (&failed, &rotating) {
            let cmd = action.command(t - t0).expect("rotating issues a command");
            match apply_command(&mut controller, &mut rig, &cmd) {
                Ok(()) => command = Some(cmd),
                Err(e) => failed = Some(e.to_string()),
            }
        }
        if let Some(cause) = failed {
            abort = Some(Abort { tick: k, cause });
            break;
        }

        let out = controller.tick(TickInput {
            frame: &frame,
            field_q: rig.field_q(),
        });
        if out.record.status == Status::Reached {
            reached_since = true;
        }
        rows.push(Row {
            record: out.record,
            command,
            truth_error: rig.truth_error(),
        });
        if scenario.frames_every > 0 && k % scenario.frames_every == 0 {
            saved_frames.push(frame.clone());
        }
        if let Some(e) = out.error {
            abort = Some(Abort {
                tick: k,
                cause: e.to_string(),
            });
            break;
        }
        frame = match rig.step(out.dq, advance) {
            Ok(f) => f,
            Err(e) => {
                abort = Some(Abort {
                    tick: k,
                    cause: e.to_string(),
                });
                break;
            }
        };
    }
    Ok(Simulation {
        header,
        rows,
        controller,
        rig,
        saved_frames,
        abort,
    })
}

#[derive(Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub rows: Vec<Row>,
    pub report: MetricsReport,
}

/// Placement of the mosaic image in mosaic coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MosaicSidecar {
    /// Mosaic coordinates of the PNG's top-left pixel.
    pub origin: [i64; 2],
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub keyframes: usize,
    pub gaps: u64,
    pub anchor_frame_id: Option<u64>,
}

fn gray_png(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<(), HarnessError> {
    let img = image::GrayImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| HarnessError::Image(format!("{}: buffer size mismatch", path.display())))?;
    img.save(path).map_err(|e| HarnessError::Image(format!("{}: {e}", path.display())))
}

/// Painted part of the canvas and its placement.
pub fn mosaic_image(mosaic: &MosaicState) -> Option<(MosaicSidecar, Vec<u8>)> {
    let [x0, y0, x1, y1] = mosaic.canvas.painted_bounds()?;
    let c = &mosaic.canvas;
    let (w, h) = ((x1 - x0 + 1) as usize, (y1 - y0 + 1) as usize);
    let mut pixels = Vec::with_capacity(w * h);
    for y in y0..=y1 {
        let row = (y + c.origin.1) as usize * c.width;
        let start = row + (x0 + c.origin.0) as usize;
        pixels.extend_from_slice(&c.pixels[start..start + w]);
    }
    let sidecar = MosaicSidecar {
        origin: [x0, y0],
        width: w,
        height: h,
        frames: mosaic.frames.len(),
        keyframes: mosaic.keyframes().count(),
        gaps: mosaic.gaps,
        anchor_frame_id: mosaic.anchor_frame_id,
    };
    Some((sidecar, pixels))
}

pub fn write_artifacts(dir: &Path, sim: &Simulation) -> Result<MetricsReport, HarnessError> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir)?;
    fs::write(dir.join("telemetry.jsonl"), to_jsonl(&sim.header, &sim.rows)?)?;
    write_csv(fs::File::create(dir.join("telemetry.csv"))?, &sim.rows)?;
    let report = compute_report(&sim.header, &sim.rows);
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    if let Some((sidecar, pixels)) = mosaic_image(&sim.controller.mosaic) {
        gray_png(&dir.join("mosaic.png"), sidecar.width, sidecar.height, pixels)?;
        fs::write(dir.join("mosaic.json"), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    }
    for f in &sim.saved_frames {
        gray_png(
            &frames_dir.join(format!("frame_{:06}.png", f.frame_id)),
            f.width,
            f.height,
            f.pixels.clone(),
        )?;
    }
    Ok(report)
}

/// Runs the scenario and writes its artifacts to `dir`.
pub fn run_scenario(scenario: &Scenario, dir: &Path) -> Result<RunOutput, HarnessError> {
    let sim = simulate(scenario)?;
    let report = write_artifacts(dir, &sim)?;
    if let Some(a) = sim.abort {
        return Err(HarnessError::ScenarioAborted {
            tick: a.tick,
            cause: a.cause,
            dir: dir.to_path_buf(),
        });
    }
    Ok(RunOutput {
        dir: dir.to_path_buf(),
        rows: sim.rows,
        report,
    })
}
