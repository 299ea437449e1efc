//! One interactive session: the servo loop plus protocol handling.

use crate::protocol::{
    encode_image, envelope, parse_client_line, ClientMessage, ErrorPayload, ProtocolError, ServerHello, StatusPayload,
    PROTOCOL_VERSION,
};
use crate::rig::Rig;
use crate::run::{apply_command, mosaic_image};
use crate::scenario::Scenario;
use crate::telemetry::Row;
use crate::HarnessError;
use endonav::mosaic::MosaicError;
use endonav::scene::Frame;
use endonav::servo::{Controller, ModeKind, NavCommand, ServoConfig, ServoError, Status, TickInput};
use endonav::sim::SimConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Publish a frame every n ticks.
    pub frame_every: u64,
    /// Publish the mosaic every n ticks when it changed.
    pub mosaic_every: u64,
    /// Downsampling factor of published images.
    pub scale: usize,
    /// Largest insertion change accepted per message, mm.
    pub max_advance: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            frame_every: 3,
            mosaic_every: 25,
            scale: 4,
            max_advance: 5.0,
        }
    }
}

/// Frames and mosaics may be dropped for a lagging client; control lines may not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Control,
    Frame,
    Mosaic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub channel: Channel,
    pub line: String,
}

pub struct Session {
    rig: Rig,
    controller: Controller,
    config: SessionConfig,
    frame: Frame,
    out_seq: u64,
    last_in_seq: Option<u64>,
    command: Option<NavCommand>,
    advance: f64,
    last_state: Option<(ModeKind, Status)>,
    last_mosaic_frames: usize,
    tick: u64,
    last_row: Option<Row>,
}

/// Stable error code for a rejected command.
pub fn servo_error_code(e: &ServoError) -> &'static str {
    match e {
        ServoError::SingularCalibration => "singular_calibration",
        ServoError::IllConditionedJacobian { .. } => "ill_conditioned_jacobian",
        ServoError::TargetLost { .. } => "target_lost",
        ServoError::ProjectionFailed => "projection_failed",
        ServoError::NotCalibrated => "not_calibrated",
        ServoError::CalibrationVision => "calibration_vision",
        ServoError::Vision(_) => "vision",
        ServoError::Mosaic(MosaicError::UnpaintedRegion { .. }) => "unpainted_region",
        ServoError::Mosaic(_) => "mosaic",
    }
}

impl Session {
    pub fn new(sim: SimConfig, servo: ServoConfig, config: SessionConfig) -> Result<Self, HarnessError> {
        let rig = Rig::new(sim)?;
        let frame = rig.render()?;
        Ok(Self {
            rig,
            controller: Controller::new(servo),
            config,
            frame,
            out_seq: 0,
            last_in_seq: None,
            command: None,
            advance: 0.0,
            last_state: None,
            last_mosaic_frames: 0,
            tick: 0,
            last_row: None,
        })
    }

    pub fn from_scenario(scenario: &Scenario, config: SessionConfig) -> Result<Self, HarnessError> {
        scenario.validate()?;
        let (sim, servo) = scenario.resolved();
        Self::new(sim, servo, config)
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn rig(&self) -> &Rig {
        &self.rig
    }

    pub fn last_row(&self) -> Option<&Row> {
        self.last_row.as_ref()
    }

    fn send(&mut self, channel: Channel, kind: &str, payload: impl Serialize) -> Outgoing {
        let line = envelope(kind, self.out_seq, payload);
        self.out_seq += 1;
        Outgoing { channel, line }
    }

    fn error(&mut self, code: &str, message: String, reply_to: Option<u64>) -> Outgoing {
        let p = ErrorPayload {
            code: code.into(),
            message,
            reply_to,
        };
        self.send(Channel::Control, "error", p)
    }

    fn status(&mut self, reply_to: Option<u64>) -> Outgoing {
        let p = StatusPayload {
            mode: self.controller.mode(),
            status: self.last_state.map_or(Status::Idle, |s| s.1),
            calibrated: self.controller.is_calibrated(),
            tick: self.tick,
            reason: self.controller.halt_reason().map(str::to_owned),
            reply_to,
        };
        self.send(Channel::Control, "status", p)
    }

    pub fn hello(&mut self) -> Outgoing {
        let i = &self.rig.sim.config.intrinsics;
        let p = ServerHello {
            protocol: PROTOCOL_VERSION,
            width: i.width,
            height: i.height,
            dt: self.rig.sim.config.dt,
            frame_scale: self.config.scale,
        };
        self.send(Channel::Control, "hello", p)
    }

    /// Handles one client line. Always answers; never panics on input.
    pub fn handle_line(&mut self, line: &str) -> Vec<Outgoing> {
        let (seq, msg) = match parse_client_line(line) {
            Ok(m) => m,
            Err(e) => return vec![self.error(e.code(), e.to_string(), None)],
        };
        if let Some(last) = self.last_in_seq.filter(|&l| seq <= l) {
            let e = ProtocolError::NonMonotoneSeq { seq, last };
            return vec![self.error(e.code(), e.to_string(), Some(seq))];
        }
        self.last_in_seq = Some(seq);
        let cmd = match msg {
            ClientMessage::Hello(_) => return vec![self.hello(), self.status(Some(seq))],
            ClientMessage::Mode(c) => c,
            ClientMessage::Joystick(j) => NavCommand::Manual {
                direction: j.direction,
                speed: j.speed,
            },
            ClientMessage::TargetFrame(p) => NavCommand::ShortRange { target: [p.x, p.y] },
            ClientMessage::TargetMosaic(p) => NavCommand::LongRange { target: [p.x, p.y] },
            ClientMessage::Halt => NavCommand::Halt,
            ClientMessage::Advance(a) => {
                if !(a.mm.is_finite() && a.mm.abs() <= self.config.max_advance) {
                    let m = format!("advance must be finite and within ±{} mm", self.config.max_advance);
                    return vec![self.error("bad_payload", m, Some(seq))];
                }
                self.advance += a.mm;
                return vec![self.status(Some(seq))];
            }
        };
        if let NavCommand::Manual { direction, speed } = &cmd {
            if !(direction.iter().all(|v| v.is_finite()) && speed.is_finite() && *speed >= 0.0) {
                return vec![self.error("bad_payload", "joystick values must be finite".into(), Some(seq))];
            }
        }
        match apply_command(&mut self.controller, &mut self.rig, &cmd) {
            Ok(()) => {
                self.command = Some(cmd);
                vec![self.status(Some(seq))]
            }
            Err(e) => vec![self.error(servo_error_code(&e), e.to_string(), Some(seq))],
        }
    }

    /// Runs one control tick and returns everything to publish.
    pub fn tick(&mut self) -> Vec<Outgoing> {
        let mut out = Vec::new();
        let result = self.controller.tick(TickInput {
            frame: &self.frame,
            field_q: self.rig.field_q(),
        });
        let row = Row {
            record: result.record,
            command: self.command.take(),
            truth_error: self.rig.truth_error(),
        };
        let state = (row.record.mode, row.record.status);
        out.push(self.send(Channel::Control, "telemetry", &row));
        let changed = self.last_state != Some(state);
        self.last_state = Some(state);
        self.last_row = Some(row);
        if changed {
            out.push(self.status(None));
        }

        let advance = std::mem::take(&mut self.advance);
        let stepped = match self.rig.step(result.dq, advance) {
            Err(e) if advance != 0.0 => {
                out.push(self.error("advance_rejected", e.to_string(), None));
                self.rig.step(result.dq, 0.0)
            }
            r => r,
        };
        match stepped {
            Ok(f) => self.frame = f,
            Err(e) => {
                let _ = self.controller.command(NavCommand::Halt);
                out.push(self.error("simulator", e.to_string(), None));
            }
        }
        self.tick += 1;

        if self.config.frame_every > 0 && self.tick % self.config.frame_every == 0 {
            let f = &self.frame;
            let mut img = encode_image(&f.pixels, f.width, f.height, self.config.scale);
            img.frame_id = Some(f.frame_id);
            out.push(self.send(Channel::Frame, "frame", img));
        }
        let n = self.controller.mosaic.frames.len();
        if self.config.mosaic_every > 0 && self.tick % self.config.mosaic_every == 0 && n != self.last_mosaic_frames {
            self.last_mosaic_frames = n;
            if let Some((side, px)) = mosaic_image(&self.controller.mosaic) {
                let mut img = encode_image(&px, side.width, side.height, self.config.scale);
                img.origin = Some(side.origin);
                out.push(self.send(Channel::Mosaic, "mosaic", img));
            }
        }
        out
    }
}
