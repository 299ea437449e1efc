//! Versioned scenario files: simulator and servo settings plus a command script.

use crate::HarnessError;
use endonav::servo::{ExplorePattern, NavCommand, ServoConfig};
use endonav::sim::SimConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

fn default_dt() -> f64 {
    0.04
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    /// Simulated seconds.
    pub duration: f64,
    /// Tick period, seconds. Overrides the simulator and servo periods.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Texture seed; the vision RANSAC seed is derived from it.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Save every n-th frame as PNG; 0 disables.
    #[serde(default)]
    pub frames_every: u64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub servo: ServoConfig,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
}

/// One scripted action. It fires once simulated time reaches `at` and, with
/// `after_reached`, once the previous action has reported `reached`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<f64>,
    #[serde(default)]
    pub after_reached: bool,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Idle,
    Calibrate,
    Halt,
    /// Fixed joystick deflection.
    Manual { direction: [f64; 2], speed: f64 },
    /// Joystick direction turning at a constant rate.
    Rotating { start_deg: f64, rate_deg_s: f64, speed: f64 },
    /// Pixel in the current frame.
    ShortRange { target: [f64; 2] },
    /// Pixel in the mosaic; mosaic coordinates coincide with the first frame's.
    LongRange { target: [f64; 2] },
    Explore { pattern: ExplorePattern },
    /// Insertion change, mm.
    Advance { mm: f64 },
}

impl Action {
    /// Controller command issued when the action fires, if any.
    pub fn command(&self, elapsed: f64) -> Option<NavCommand> {
        Some(match *self {
            Action::Idle => NavCommand::Idle,
            Action::Calibrate => NavCommand::Calibrate,
            Action::Halt => NavCommand::Halt,
            Action::Manual { direction, speed } => NavCommand::Manual { direction, speed },
            Action::Rotating {
                start_deg,
                rate_deg_s,
                speed,
            } => {
                let a = (start_deg + rate_deg_s * elapsed).to_radians();
                NavCommand::Manual {
                    direction: [a.cos(), a.sin()],
                    speed,
                }
            }
            Action::ShortRange { target } => NavCommand::ShortRange { target },
            Action::LongRange { target } => NavCommand::LongRange { target },
            Action::Explore { pattern } => NavCommand::Explore { pattern },
            Action::Advance { .. } => return None,
        })
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return bad(format!("duration must be finite and non-negative, got {}", self.duration));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.duration / self.dt > 1e7 {
            return bad("more than 10^7 ticks".into());
        }
        let mut last = 0.0;
        for (i, e) in self.script.iter().enumerate() {
            match e.at {
                Some(t) if !(t.is_finite() && t >= last) => {
                    return bad(format!("script[{i}].at must be finite and non-decreasing"));
                }
                Some(t) => last = t,
                None if !e.after_reached => {
                    return bad(format!("script[{i}] needs `at` or `after_reached`"));
                }
                None => {}
            }
        }
        Ok(())
    }

    /// Simulator and servo settings with the scenario-level overrides applied.
    pub fn resolved(&self) -> (SimConfig, ServoConfig) {
        let mut sim = self.sim.clone();
        let mut servo = self.servo.clone();
        sim.dt = self.dt;
        servo.dt = self.dt;
        if let Some(seed) = self.seed {
            sim.texture_seed = seed;
            servo.vision.seed = seed ^ 0x5eed;
        }
        (sim, servo)
    }

    pub fn ticks(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }
}
