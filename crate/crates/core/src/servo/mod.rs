//! Model-free image-based control of the tip.
//!
//! The controller sees only rendered frames and the field-rotation counters
//! it commands. It estimates the 2×2 image Jacobian by probing, keeps it
//! current with gated Broyden updates and runs the manual, short-range,
//! long-range and exploration modes as explicit state machines.

mod controller;
mod explore;
mod jacobian;
mod pid;

pub use controller::{
    long_range_tick, short_range_tick, waypoint, CalibrationPhase, Controller, LegKind, LongRangeContext, LongRangePhase,
    LongRangeState, LongRangeStep, ModeKind, NavCommand, ServoConfig, ShortRangeState, Status, TelemetryRecord, TickInput,
    TickOutput,
};
pub use explore::{explore_trajectory, ExplorePattern};
pub use jacobian::{
    broyden_update, calibrate_jacobian, condition_number, jacobian_from_responses, manual_step, solve, JacobianEstimate,
};
pub use pid::{pid_step, PidGains, PidState};

use crate::mosaic::MosaicError;
use crate::vision::VisionError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServoError {
    #[error("calibration responses are linearly dependent")]
    SingularCalibration,
    #[error("image Jacobian is ill-conditioned (condition {condition:.3e}); recalibrate")]
    IllConditionedJacobian { condition: f64 },
    #[error("target lost at ({x:.1}, {y:.1})")]
    TargetLost { x: f64, y: f64 },
    #[error("target could not be projected from its source frame into the current view")]
    ProjectionFailed,
    #[error("closed-loop mode requested before calibration")]
    NotCalibrated,
    #[error("calibration failed: vision estimate invalid during probing")]
    CalibrationVision,
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Mosaic(#[from] MosaicError),
}
