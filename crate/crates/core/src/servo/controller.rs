use super::explore::{explore_trajectory, ExplorePattern};
use super::jacobian::{broyden_update, jacobian_from_responses, manual_step, solve, JacobianEstimate};
use super::pid::{pid_step, PidGains, PidState};
use super::ServoError;
use crate::geometry::apply_homography;
use crate::mosaic::{MosaicConfig, MosaicState};
use crate::scene::Frame;
use crate::vision::{center_motion, estimate_prepared, prepare, track_target, HomographyEstimate, PreparedFrame, VisionConfig};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServoConfig {
    pub dt: f64,
    pub beta: f64,
    /// px/s.
    pub motion_gate: f64,
    /// Broyden updates on or off (off freezes Ĵ after calibration).
    pub updates: bool,
    /// Calibration probe size, rad.
    pub probe: f64,
    pub calib_settle_ticks: usize,
    /// Largest relative change between the two previous commands for which a
    /// Broyden update is still attempted. The plant lags the field, so the
    /// measured motion only matches the last command while commands are steady.
    pub steady_command: f64,
    pub pid: PidGains,
    /// Speed cap of the closed-loop modes, px/s.
    pub max_speed: f64,
    pub done_thresh: f64,
    /// Error (px) at which a goal first counts as reached; it then stays
    /// reached while within `done_thresh`.
    pub arrive_thresh: f64,
    /// Re-projections of a long-range target from its source frame on arrival.
    pub max_refinements: u32,
    pub t_w: f64,
    pub proximity: f64,
    pub condition_limit: f64,
    /// Largest field increment per tick, rad.
    pub max_dq: f64,
    pub open_loop: bool,
    /// Field slew rate in the open-loop phase, rad/s.
    pub open_loop_rate: f64,
    pub open_loop_settle_ticks: usize,
    /// Consecutive invalid estimates tolerated while tracking a target.
    pub max_invalid_streak: u32,
    pub track_margin: f64,
    /// Position gain of the exploration tracker, per tick.
    pub explore_gain: f64,
    pub build_mosaic: bool,
    pub vision: VisionConfig,
    pub mosaic: MosaicConfig,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self {
            dt: 0.04,
            beta: 0.3,
            motion_gate: 8.0,
            updates: true,
            probe: 2f64.to_radians(),
            calib_settle_ticks: 10,
            steady_command: 0.25,
            pid: PidGains::default(),
            max_speed: 200.0,
            done_thresh: 2.0,
            arrive_thresh: 1.0,
            max_refinements: 3,
            t_w: 125.0,
            proximity: 40.0,
            condition_limit: 1e4,
            max_dq: 0.05,
            open_loop: true,
            open_loop_rate: 0.5,
            open_loop_settle_ticks: 10,
            max_invalid_streak: 5,
            track_margin: 0.0,
            explore_gain: 0.3,
            build_mosaic: true,
            vision: VisionConfig::default(),
            mosaic: MosaicConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NavCommand {
    Idle,
    Calibrate,
    /// Unit image direction (x right, y down) and speed in px/s.
    Manual { direction: [f64; 2], speed: f64 },
    /// Target pixel in the current frame.
    ShortRange { target: [f64; 2] },
    /// Target pixel in the mosaic.
    LongRange { target: [f64; 2] },
    Explore { pattern: ExplorePattern },
    Halt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    Idle,
    Calibrating,
    Manual,
    ShortRange,
    LongRange,
    Explore,
    Halted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Idle,
    Running,
    Reached,
    Halted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LongRangePhase {
    OpenLoop,
    Waypoint,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LegKind {
    Waypoint,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationPhase {
    PlusAlpha,
    MinusAlpha,
    PlusBeta,
    MinusBeta,
}

/// One row of per-tick telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub tick: u64,
    pub time: f64,
    pub frame_id: u64,
    pub mode: ModeKind,
    pub status: Status,
    pub phase: Option<String>,
    pub valid: bool,
    pub inlier_fraction: f64,
    /// Measured image-center motion since the previous frame, px.
    pub ds_hat: Option<[f64; 2]>,
    /// Image-center motion requested by this tick's command, px.
    pub ds_desired: Option<[f64; 2]>,
    pub dq: [f64; 2],
    /// Ĵ row-major, px/rad.
    pub j: Option<[f64; 4]>,
    pub broyden_updated: bool,
    /// Target (or goal) minus reference, px.
    pub e: Option<[f64; 2]>,
    pub target: Option<[f64; 2]>,
    pub alpha: f64,
    pub beta: f64,
    pub waypoints: u32,
    /// Goal distance at the start of a new leg (set on the tick the leg begins).
    pub leg_start: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct TickInput<'a> {
    pub frame: &'a Frame,
    /// Field rotation counters `(α, β)` at capture.
    pub field_q: Vector2<f64>,
}

#[derive(Debug, Clone)]
pub struct TickOutput {
    pub dq: Vector2<f64>,
    pub record: TelemetryRecord,
    pub error: Option<ServoError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShortRangeState {
    /// Tracked goal in the current frame, px.
    pub target: Vector2<f64>,
    pub pid: PidState,
    pub reached: bool,
    pub invalid_streak: u32,
}

impl ShortRangeState {
    pub fn new(target: Vector2<f64>, gains: PidGains) -> Self {
        Self {
            target,
            pid: PidState::new(gains),
            reached: false,
            invalid_streak: 0,
        }
    }
}

/// One short-range control step toward `reference`.
///
/// `state.target` must already be expressed in the current frame.
/// `measured_speed` is the latest center speed (px/s); the goal only counts
/// as reached once the view has also settled below the motion gate.
pub fn short_range_tick(
    state: &mut ShortRangeState,
    jacobian: &JacobianEstimate,
    reference: Vector2<f64>,
    measured_speed: f64,
    config: &ServoConfig,
) -> Result<(Vector2<f64>, Vector2<f64>, Status), ServoError> {
    let e = state.target - reference;
    let thresh = if state.reached {
        config.done_thresh
    } else {
        config.arrive_thresh.min(config.done_thresh)
    };
    if e.norm() <= thresh && measured_speed < config.motion_gate {
        state.reached = true;
        state.pid.reset();
        return Ok((Vector2::zeros(), Vector2::zeros(), Status::Reached));
    }
    state.reached = false;
    let integral = state.pid.integral;
    let mut ds = pid_step(&mut state.pid, e, config.dt);
    let cap = config.max_speed * config.dt;
    if ds.norm() > cap {
        // no integration while saturated
        state.pid.integral = integral;
        ds *= cap / ds.norm();
    }
    let dq = solve(jacobian, ds, config.condition_limit)?;
    Ok((dq, ds, Status::Running))
}

/// Goal for the next leg: the target itself when within `t_w` of `reference`,
/// else the point `t_w` along the error direction.
pub fn waypoint(reference: Vector2<f64>, target: Vector2<f64>, t_w: f64) -> (Vector2<f64>, bool) {
    let e = target - reference;
    let n = e.norm();
    if n > t_w {
        (reference + e * (t_w / n), true)
    } else {
        (target, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRangeState {
    pub phase: LongRangePhase,
    pub t_w: f64,
    pub proximity: f64,
    pub done_thresh: f64,
    pub source_frame_id: u64,
    /// Target in source-frame pixels.
    pub source_px: Vector2<f64>,
    pub target_mosaic: Vector2<f64>,
    pub field_goal: Option<Vector2<f64>>,
    pub settle_left: usize,
    pub leg: Option<ShortRangeState>,
    pub leg_kind: Option<LegKind>,
    pub waypoints: u32,
    pub refinements: u32,
}

impl LongRangeState {
    pub fn new(mosaic: &MosaicState, target_mosaic: Vector2<f64>, config: &ServoConfig) -> Result<Self, ServoError> {
        let (source_frame_id, source_px) = mosaic.mosaic_to_source(&target_mosaic)?;
        let field_goal = mosaic
            .interpolate_field(&target_mosaic)
            .ok()
            .map(|(a, b)| Vector2::new(a, b));
        Ok(Self {
            phase: if config.open_loop {
                LongRangePhase::OpenLoop
            } else {
                LongRangePhase::Waypoint
            },
            t_w: config.t_w,
            proximity: config.proximity,
            done_thresh: config.done_thresh,
            source_frame_id,
            source_px,
            target_mosaic,
            field_goal,
            settle_left: config.open_loop_settle_ticks,
            leg: None,
            leg_kind: None,
            waypoints: 0,
            refinements: 0,
        })
    }
}

/// Everything a long-range step may read besides its own state.
pub struct LongRangeContext<'a> {
    pub config: &'a ServoConfig,
    pub jacobian: &'a JacobianEstimate,
    pub mosaic: &'a MosaicState,
    /// Source keyframe, prepared for direct registration.
    pub source: &'a PreparedFrame,
    pub current: &'a PreparedFrame,
    /// Inter-frame estimate for this tick, if any.
    pub inter_frame: Option<&'a HomographyEstimate>,
    pub field_q: Vector2<f64>,
    pub reference: Vector2<f64>,
    pub measured_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongRangeStep {
    pub dq: Vector2<f64>,
    pub ds_desired: Option<Vector2<f64>>,
    pub status: Status,
    pub leg_start: Option<f64>,
}

fn project_target(state: &LongRangeState, ctx: &LongRangeContext) -> Result<Vector2<f64>, ServoError> {
    let chain = ctx.mosaic.frame_to_frame(state.source_frame_id, ctx.current.frame_id).ok();
    let direct = estimate_prepared(ctx.source, ctx.current, &ctx.config.vision, chain.as_ref())?;
    let via_direct = apply_homography(&direct.h, &state.source_px);
    let via_chain = chain.and_then(|h| apply_homography(&h, &state.source_px));
    match (via_direct, via_chain) {
        (Some(d), _) if direct.valid => Ok(d),
        // a wide baseline leaves few features in the overlap; trust a fit
        // with enough inliers when it lands near the chained estimate
        (Some(d), Some(c)) if direct.inliers >= ctx.config.vision.min_inliers && (d - c).norm() <= ctx.config.proximity => {
            Ok(d)
        }
        (_, Some(c)) => Ok(c),
        _ => Err(ServoError::ProjectionFailed),
    }
}

fn start_leg(state: &mut LongRangeState, ctx: &LongRangeContext) -> Result<f64, ServoError> {
    let p = project_target(state, ctx)?;
    let (goal, is_waypoint) = waypoint(ctx.reference, p, state.t_w);
    if is_waypoint {
        state.waypoints += 1;
        state.phase = LongRangePhase::Waypoint;
        state.leg_kind = Some(LegKind::Waypoint);
    } else {
        state.phase = LongRangePhase::Final;
        state.leg_kind = Some(LegKind::Final);
    }
    state.leg = Some(ShortRangeState::new(goal, ctx.config.pid));
    Ok((goal - ctx.reference).norm())
}

/// One long-range step: open-loop field slew, then waypoint legs, then the
/// final short-range approach.
pub fn long_range_tick(state: &mut LongRangeState, ctx: &LongRangeContext) -> Result<LongRangeStep, ServoError> {
    let cfg = ctx.config;
    let mut leg_start = None;
    if state.phase == LongRangePhase::OpenLoop {
        if let Some(goal) = state.field_goal {
            let diff = goal - ctx.field_q;
            let max = cfg.open_loop_rate * cfg.dt;
            if diff.norm() > 1e-6 {
                let dq = if diff.norm() > max { diff * (max / diff.norm()) } else { diff };
                return Ok(LongRangeStep {
                    dq,
                    ds_desired: None,
                    status: Status::Running,
                    leg_start: None,
                });
            }
        }
        if state.settle_left > 0 {
            state.settle_left -= 1;
            return Ok(LongRangeStep {
                dq: Vector2::zeros(),
                ds_desired: None,
                status: Status::Running,
                leg_start: None,
            });
        }
        leg_start = Some(start_leg(state, ctx)?);
    } else if state.leg.is_none() {
        leg_start = Some(start_leg(state, ctx)?);
    } else {
        // carry the goal into the current frame
        let leg = state.leg.as_mut().expect("active leg");
        match ctx.inter_frame.filter(|h| h.valid) {
            Some(h) => {
                leg.target = track_target(&leg.target, h, ctx.current.width, ctx.current.height, cfg.track_margin)
                    .map_err(|_| ServoError::TargetLost {
                        x: leg.target.x,
                        y: leg.target.y,
                    })?;
                leg.invalid_streak = 0;
            }
            None => {
                leg.invalid_streak += 1;
                if leg.invalid_streak > cfg.max_invalid_streak {
                    return Err(ServoError::TargetLost {
                        x: leg.target.x,
                        y: leg.target.y,
                    });
                }
                return Ok(LongRangeStep {
                    dq: Vector2::zeros(),
                    ds_desired: None,
                    status: Status::Running,
                    leg_start: None,
                });
            }
        }
        if state.phase == LongRangePhase::Waypoint && (leg.target - ctx.reference).norm() < state.proximity {
            leg_start = Some(start_leg(state, ctx)?);
        }
    }
    let leg = state.leg.as_mut().expect("leg started");
    let arriving = !leg.reached;
    let (dq, ds, status) = short_range_tick(leg, ctx.jacobian, ctx.reference, ctx.measured_speed, cfg)?;
    let status = match (state.phase, status) {
        (LongRangePhase::Final, Status::Reached) if arriving && state.refinements < cfg.max_refinements => {
            // tracked goals drift; check against the source frame before stopping
            match project_target(state, ctx) {
                Ok(p) if (p - ctx.reference).norm() > cfg.arrive_thresh => {
                    state.refinements += 1;
                    let leg = state.leg.as_mut().expect("leg started");
                    leg.target = p;
                    leg.reached = false;
                    Status::Running
                }
                _ => Status::Reached,
            }
        }
        (LongRangePhase::Final, Status::Reached) => Status::Reached,
        (_, Status::Reached) => Status::Running,
        (_, s) => s,
    };
    Ok(LongRangeStep {
        dq,
        ds_desired: Some(ds),
        status,
        leg_start,
    })
}

#[derive(Debug, Clone)]
struct Calibration {
    step: usize,
    tick_in_step: usize,
    sums: [Vector2<f64>; 4],
}

#[derive(Debug, Clone)]
struct Exploration {
    pattern: ExplorePattern,
    start: Option<Vector2<f64>>,
    t0: f64,
}

#[derive(Debug, Clone)]
enum Mode {
    Idle,
    Calibrating(Calibration),
    Manual { direction: Vector2<f64>, speed: f64 },
    ShortRange(ShortRangeState),
    LongRange(Box<LongRangeState>, Box<PreparedFrame>),
    Explore(Exploration),
    Halted(String),
}

impl Mode {
    fn kind(&self) -> ModeKind {
        match self {
            Mode::Idle => ModeKind::Idle,
            Mode::Calibrating(_) => ModeKind::Calibrating,
            Mode::Manual { .. } => ModeKind::Manual,
            Mode::ShortRange(_) => ModeKind::ShortRange,
            Mode::LongRange(..) => ModeKind::LongRange,
            Mode::Explore(_) => ModeKind::Explore,
            Mode::Halted(_) => ModeKind::Halted,
        }
    }
}

impl CalibrationPhase {
    pub fn name(self) -> &'static str {
        match self {
            CalibrationPhase::PlusAlpha => "plus_alpha",
            CalibrationPhase::MinusAlpha => "minus_alpha",
            CalibrationPhase::PlusBeta => "plus_beta",
            CalibrationPhase::MinusBeta => "minus_beta",
        }
    }
}

const CALIBRATION_PHASES: [CalibrationPhase; 4] = [
    CalibrationPhase::PlusAlpha,
    CalibrationPhase::MinusAlpha,
    CalibrationPhase::PlusBeta,
    CalibrationPhase::MinusBeta,
];

/// Single-owner servo loop: one call per captured frame.
#[derive(Debug, Clone)]
pub struct Controller {
    pub config: ServoConfig,
    pub jacobian: Option<JacobianEstimate>,
    pub mosaic: MosaicState,
    mode: Mode,
    prev: Option<PreparedFrame>,
    /// Last frame registered in the mosaic, when it differs from `prev`.
    mosaic_ref: Option<PreparedFrame>,
    last_dq: Vector2<f64>,
    prev_dq: Vector2<f64>,
    last_speed: f64,
    tick: u64,
    time: f64,
    frame_size: (usize, usize),
}

impl Controller {
    pub fn new(config: ServoConfig) -> Self {
        Self {
            mosaic: MosaicState::new(config.mosaic.clone()),
            config,
            jacobian: None,
            mode: Mode::Idle,
            prev: None,
            mosaic_ref: None,
            last_dq: Vector2::zeros(),
            prev_dq: Vector2::zeros(),
            last_speed: 0.0,
            tick: 0,
            time: 0.0,
            frame_size: (0, 0),
        }
    }

    /// Starts with a known Jacobian instead of probing.
    pub fn with_jacobian(config: ServoConfig, j: JacobianEstimate) -> Self {
        let mut c = Self::new(config);
        c.jacobian = Some(c.configure(j));
        c
    }

    fn configure(&self, mut j: JacobianEstimate) -> JacobianEstimate {
        j.beta = self.config.beta;
        j.motion_gate = self.config.motion_gate;
        j
    }

    pub fn mode(&self) -> ModeKind {
        self.mode.kind()
    }

    pub fn halt_reason(&self) -> Option<&str> {
        match &self.mode {
            Mode::Halted(r) => Some(r),
            _ => None,
        }
    }

    pub fn is_calibrated(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn long_range_state(&self) -> Option<&LongRangeState> {
        match &self.mode {
            Mode::LongRange(s, _) => Some(s),
            _ => None,
        }
    }

    pub fn short_range_state(&self) -> Option<&ShortRangeState> {
        match &self.mode {
            Mode::ShortRange(s) => Some(s),
            _ => None,
        }
    }

    fn reference(&self) -> Vector2<f64> {
        let (w, h) = self.frame_size;
        Vector2::new((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0)
    }

    /// Applies an operator command. Errors leave the current mode unchanged.
    pub fn command(&mut self, cmd: NavCommand) -> Result<(), ServoError> {
        let needs_calibration = matches!(
            cmd,
            NavCommand::Manual { .. } | NavCommand::ShortRange { .. } | NavCommand::LongRange { .. } | NavCommand::Explore { .. }
        );
        if needs_calibration && self.jacobian.is_none() {
            return Err(ServoError::NotCalibrated);
        }
        self.mode = match cmd {
            NavCommand::Idle => Mode::Idle,
            NavCommand::Halt => Mode::Halted("operator halt".into()),
            NavCommand::Calibrate => Mode::Calibrating(Calibration {
                step: 0,
                tick_in_step: 0,
                sums: [Vector2::zeros(); 4],
            }),
            NavCommand::Manual { direction, speed } => {
                let d = Vector2::new(direction[0], direction[1]);
                let n = d.norm();
                let direction = if n > 1e-12 && n.is_finite() { d / n } else { Vector2::zeros() };
                let speed = if speed.is_finite() { speed.clamp(0.0, self.config.max_speed) } else { 0.0 };
                Mode::Manual { direction, speed }
            }
            NavCommand::ShortRange { target } => {
                let t = Vector2::new(target[0], target[1]);
                let (w, h) = self.frame_size;
                let m = self.config.track_margin;
                let inside = t.x.is_finite()
                    && t.y.is_finite()
                    && t.x >= -m
                    && t.y >= -m
                    && t.x <= w as f64 - 1.0 + m
                    && t.y <= h as f64 - 1.0 + m;
                if !inside || self.prev.is_none() {
                    return Err(ServoError::TargetLost { x: t.x, y: t.y });
                }
                Mode::ShortRange(ShortRangeState::new(t, self.config.pid))
            }
            NavCommand::LongRange { target } => {
                let t = Vector2::new(target[0], target[1]);
                if !(t.x.is_finite() && t.y.is_finite()) {
                    return Err(ServoError::Mosaic(crate::mosaic::MosaicError::UnpaintedRegion { x: t.x, y: t.y }));
                }
                let state = LongRangeState::new(&self.mosaic, t, &self.config)?;
                let source = self
                    .mosaic
                    .frame(state.source_frame_id)
                    .and_then(|f| f.image.as_ref())
                    .ok_or(ServoError::ProjectionFailed)?;
                let prepared = prepare(source, &self.config.vision);
                Mode::LongRange(Box::new(state), Box::new(prepared))
            }
            NavCommand::Explore { pattern } => Mode::Explore(Exploration {
                pattern,
                start: None,
                t0: self.time,
            }),
        };
        Ok(())
    }

    /// One vision → Broyden → mode controller cycle.
    pub fn tick(&mut self, input: TickInput) -> TickOutput {
        let frame = input.frame;
        let dt = self.config.dt;
        if self.tick > 0 {
            self.time += dt;
        }
        self.frame_size = (frame.width, frame.height);
        let reference = self.reference();
        let current = prepare(frame, &self.config.vision);

        let est = match &self.prev {
            Some(prev) => estimate_prepared(prev, &current, &self.config.vision, None).ok(),
            None => None,
        };
        let valid = est.as_ref().is_some_and(|e| e.valid);
        let ds_hat = est.as_ref().and_then(|e| center_motion(e, &reference).ok());
        self.last_speed = ds_hat.map_or(0.0, |d| d.norm() / dt);

        if self.config.build_mosaic {
            self.register(frame, &current, est.as_ref(), input.field_q);
        }

        let mut broyden_updated = false;
        let closed_loop = !matches!(self.mode, Mode::Calibrating(_) | Mode::Halted(_));
        if let (Some(j), Some(ds)) = (self.jacobian.as_mut(), ds_hat) {
            let steady = (self.last_dq - self.prev_dq).norm() <= self.config.steady_command * self.last_dq.norm();
            if self.config.updates && closed_loop && self.last_dq != Vector2::zeros() && steady {
                let next = broyden_update(j, self.last_dq, ds, dt);
                if next.updates != j.updates {
                    *j = JacobianEstimate {
                        last_update: self.time,
                        ..next
                    };
                    broyden_updated = true;
                }
            }
        }

        let step = self.control(&current, est.as_ref(), ds_hat, input.field_q, reference);
        let (mut dq, ds_desired, status, phase, leg_start, error) = match step {
            Ok(s) => (s.dq, s.ds_desired, s.status, s.phase, s.leg_start, None),
            Err(e) => {
                self.mode = Mode::Halted(e.to_string());
                (Vector2::zeros(), None, Status::Halted, None, None, Some(e))
            }
        };
        if !dq.iter().all(|v| v.is_finite()) {
            dq = Vector2::zeros();
        }
        if dq.norm() > self.config.max_dq {
            dq *= self.config.max_dq / dq.norm();
        }

        let (e, target, waypoints) = self.target_info(reference);
        let record = TelemetryRecord {
            tick: self.tick,
            time: self.time,
            frame_id: frame.frame_id,
            mode: self.mode.kind(),
            status,
            phase,
            valid,
            inlier_fraction: est.as_ref().map_or(0.0, |e| e.inlier_fraction),
            ds_hat: ds_hat.map(|d| [d.x, d.y]),
            ds_desired: ds_desired.map(|d| [d.x, d.y]),
            dq: [dq.x, dq.y],
            j: self.jacobian.map(|j| [j.j[(0, 0)], j.j[(0, 1)], j.j[(1, 0)], j.j[(1, 1)]]),
            broyden_updated,
            e: e.map(|v| [v.x, v.y]),
            target: target.map(|v| [v.x, v.y]),
            alpha: input.field_q.x,
            beta: input.field_q.y,
            waypoints,
            leg_start,
            error: error.as_ref().map(|e| e.to_string()),
        };
        self.prev = Some(current);
        self.prev_dq = self.last_dq;
        self.last_dq = dq;
        self.tick += 1;
        TickOutput { dq, record, error }
    }

    fn register(&mut self, frame: &Frame, current: &PreparedFrame, est: Option<&HomographyEstimate>, q: Vector2<f64>) {
        let registered = if self.mosaic.is_empty() {
            self.mosaic.add_frame(frame, None, q.x, q.y).is_ok()
        } else if let Some(r) = &self.mosaic_ref {
            // the previous frame was skipped: register against the last good one
            let prior = self.mosaic.last().and_then(|_| est.map(|e| e.h));
            let e = estimate_prepared(r, current, &self.config.vision, prior.as_ref()).ok();
            self.mosaic.add_frame(frame, e.as_ref(), q.x, q.y).is_ok()
        } else {
            self.mosaic.add_frame(frame, est, q.x, q.y).is_ok()
        };
        if registered {
            self.mosaic_ref = None;
        } else if self.mosaic_ref.is_none() {
            self.mosaic_ref = self.prev.clone();
        }
    }

    fn target_info(&self, reference: Vector2<f64>) -> (Option<Vector2<f64>>, Option<Vector2<f64>>, u32) {
        match &self.mode {
            Mode::ShortRange(s) => (Some(s.target - reference), Some(s.target), 0),
            Mode::LongRange(s, _) => match &s.leg {
                Some(l) => (Some(l.target - reference), Some(l.target), s.waypoints),
                None => (None, None, s.waypoints),
            },
            _ => (None, None, 0),
        }
    }

    fn control(
        &mut self,
        current: &PreparedFrame,
        est: Option<&HomographyEstimate>,
        ds_hat: Option<Vector2<f64>>,
        field_q: Vector2<f64>,
        reference: Vector2<f64>,
    ) -> Result<Step, ServoError> {
        let cfg = &self.config;
        let speed = self.last_speed;
        let idle = |status| Step {
            dq: Vector2::zeros(),
            ds_desired: None,
            status,
            phase: None,
            leg_start: None,
        };
        match &mut self.mode {
            Mode::Idle => Ok(idle(Status::Idle)),
            Mode::Halted(_) => Ok(idle(Status::Halted)),
            Mode::Calibrating(cal) => {
                if cal.tick_in_step > 0 {
                    let ds = ds_hat.ok_or(ServoError::CalibrationVision)?;
                    cal.sums[cal.step] += ds;
                    if cal.tick_in_step > cfg.calib_settle_ticks {
                        cal.step += 1;
                        cal.tick_in_step = 0;
                    }
                }
                if cal.step == 4 {
                    let s1 = (cal.sums[0] - cal.sums[1]) / 2.0;
                    let s2 = (cal.sums[2] - cal.sums[3]) / 2.0;
                    let j = jacobian_from_responses(Vector2::new(cfg.probe, 0.0), Vector2::new(0.0, cfg.probe), s1, s2)?;
                    let mut est = JacobianEstimate::new(j);
                    est.beta = cfg.beta;
                    est.motion_gate = cfg.motion_gate;
                    est.last_update = self.time;
                    self.jacobian = Some(est);
                    self.mode = Mode::Idle;
                    return Ok(Step {
                        phase: Some("calibrated".into()),
                        ..idle(Status::Reached)
                    });
                }
                let phase = CALIBRATION_PHASES[cal.step];
                let dq = if cal.tick_in_step == 0 {
                    let p = cfg.probe;
                    match phase {
                        CalibrationPhase::PlusAlpha => Vector2::new(p, 0.0),
                        CalibrationPhase::MinusAlpha => Vector2::new(-p, 0.0),
                        CalibrationPhase::PlusBeta => Vector2::new(0.0, p),
                        CalibrationPhase::MinusBeta => Vector2::new(0.0, -p),
                    }
                } else {
                    Vector2::zeros()
                };
                cal.tick_in_step += 1;
                Ok(Step {
                    dq,
                    ds_desired: None,
                    status: Status::Running,
                    phase: Some(phase.name().into()),
                    leg_start: None,
                })
            }
            Mode::Manual { direction, speed: v } => {
                let j = self.jacobian.as_ref().ok_or(ServoError::NotCalibrated)?;
                let dq = manual_step(j, *direction, *v, cfg.dt, cfg.condition_limit)?;
                let ds = *direction * *v * cfg.dt;
                Ok(Step {
                    dq,
                    ds_desired: (ds != Vector2::zeros()).then_some(ds),
                    status: if ds == Vector2::zeros() { Status::Idle } else { Status::Running },
                    phase: None,
                    leg_start: None,
                })
            }
            Mode::ShortRange(state) => {
                let j = self.jacobian.as_ref().ok_or(ServoError::NotCalibrated)?;
                match est.filter(|e| e.valid) {
                    Some(h) => {
                        state.target = track_target(&state.target, h, current.width, current.height, cfg.track_margin)
                            .map_err(|_| {
                                let p = apply_homography(&h.h, &state.target).unwrap_or(state.target);
                                ServoError::TargetLost { x: p.x, y: p.y }
                            })?;
                        state.invalid_streak = 0;
                    }
                    None if self.tick > 0 && self.prev.is_some() => {
                        state.invalid_streak += 1;
                        if state.invalid_streak > cfg.max_invalid_streak {
                            return Err(ServoError::TargetLost {
                                x: state.target.x,
                                y: state.target.y,
                            });
                        }
                        return Ok(idle(Status::Running));
                    }
                    None => {}
                }
                let (dq, ds, status) = short_range_tick(state, j, reference, speed, cfg)?;
                Ok(Step {
                    dq,
                    ds_desired: (ds != Vector2::zeros()).then_some(ds),
                    status,
                    phase: None,
                    leg_start: None,
                })
            }
            Mode::LongRange(state, source) => {
                let j = self.jacobian.as_ref().ok_or(ServoError::NotCalibrated)?;
                let ctx = LongRangeContext {
                    config: cfg,
                    jacobian: j,
                    mosaic: &self.mosaic,
                    source,
                    current,
                    inter_frame: est,
                    field_q,
                    reference,
                    measured_speed: speed,
                };
                let s = long_range_tick(state, &ctx)?;
                let phase = match state.phase {
                    LongRangePhase::OpenLoop => "open_loop",
                    LongRangePhase::Waypoint => "waypoint",
                    LongRangePhase::Final => "final",
                };
                Ok(Step {
                    dq: s.dq,
                    ds_desired: s.ds_desired.filter(|d| *d != Vector2::zeros()),
                    status: s.status,
                    phase: Some(phase.into()),
                    leg_start: s.leg_start,
                })
            }
            Mode::Explore(x) => {
                let j = self.jacobian.as_ref().ok_or(ServoError::NotCalibrated)?;
                let Some(cur) = self.mosaic.frame(current.frame_id) else {
                    return Ok(idle(Status::Running));
                };
                let center = cur.center;
                let start = *x.start.get_or_insert(center);
                let tau = self.time - x.t0;
                if tau >= x.pattern.duration() {
                    return Ok(idle(Status::Reached));
                }
                let now = start + explore_trajectory(&x.pattern, tau);
                let next = start + explore_trajectory(&x.pattern, tau + cfg.dt);
                let mut ds = (next - now) + (now - center) * cfg.explore_gain;
                let cap = cfg.max_speed * cfg.dt;
                if ds.norm() > cap {
                    ds *= cap / ds.norm();
                }
                let dq = solve(j, ds, cfg.condition_limit)?;
                Ok(Step {
                    dq,
                    ds_desired: Some(ds),
                    status: Status::Running,
                    phase: None,
                    leg_start: None,
                })
            }
        }
    }
}

struct Step {
    dq: Vector2<f64>,
    ds_desired: Option<Vector2<f64>>,
    status: Status,
    phase: Option<String>,
    leg_start: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::translation_homography;
    use approx::assert_relative_eq;
    use nalgebra::Matrix2;

    fn jac() -> JacobianEstimate {
        JacobianEstimate::new(Matrix2::new(300.0, 0.0, 0.0, 250.0))
    }

    #[test]
    fn waypoint_examples() {
        let r = Vector2::new(200.0, 200.0);
        let (g, wp) = waypoint(r, r + Vector2::new(250.0, 0.0), 125.0);
        assert!(wp);
        assert_relative_eq!(g, Vector2::new(325.0, 200.0));
        let (g, wp) = waypoint(r, r + Vector2::new(60.0, 80.0), 125.0);
        assert!(!wp);
        assert_relative_eq!(g, Vector2::new(260.0, 280.0));
    }

    #[test]
    fn target_at_reference_is_reached_at_once() {
        let cfg = ServoConfig::default();
        let r = Vector2::new(199.5, 199.5);
        let mut s = ShortRangeState::new(r, cfg.pid);
        let (dq, _, status) = short_range_tick(&mut s, &jac(), r, 0.0, &cfg).unwrap();
        assert_eq!(status, Status::Reached);
        assert_eq!(dq, Vector2::zeros());
        assert_eq!(s.pid.integral, Vector2::zeros());
    }

    /// Static linear plant: the target moves opposite to the commanded center motion.
    #[test]
    fn linear_plant_converges_without_oscillation() {
        let cfg = ServoConfig::default();
        let j_true = Matrix2::new(310.0, 12.0, -8.0, 240.0);
        let r = Vector2::new(199.5, 199.5);
        let mut s = ShortRangeState::new(r + Vector2::new(80.0, -60.0), cfg.pid);
        let mut errors = vec![(s.target - r).norm()];
        let mut speed = 0.0;
        for _ in 0..400 {
            let (dq, _, status) = short_range_tick(&mut s, &jac(), r, speed, &cfg).unwrap();
            if status == Status::Reached {
                break;
            }
            let ds = j_true * dq;
            s.target -= ds;
            speed = ds.norm() / cfg.dt;
            errors.push((s.target - r).norm());
        }
        assert!(s.reached);
        assert!(*errors.last().unwrap() <= 2.0);
        // at most one overshoot: the error sequence has at most one local minimum before the end
        let increases = errors.windows(2).filter(|w| w[1] > w[0] + 1e-9).count();
        assert!(increases <= 3, "{errors:?}");
    }

    #[test]
    fn manual_zero_joystick_commands_nothing() {
        let mut c = Controller::with_jacobian(ServoConfig::default(), jac());
        c.command(NavCommand::Manual {
            direction: [0.0, 0.0],
            speed: 40.0,
        })
        .unwrap();
        let f = Frame::filled(64, 64, 100);
        for _ in 0..3 {
            let out = c.tick(TickInput {
                frame: &f,
                field_q: Vector2::zeros(),
            });
            assert_eq!(out.dq, Vector2::zeros());
        }
    }

    #[test]
    fn closed_loop_modes_need_calibration() {
        let mut c = Controller::new(ServoConfig::default());
        assert_eq!(
            c.command(NavCommand::Manual {
                direction: [1.0, 0.0],
                speed: 40.0
            }),
            Err(ServoError::NotCalibrated)
        );
        assert_eq!(c.mode(), ModeKind::Idle);
    }

    #[test]
    fn long_range_step_projects_with_chain() {
        // mosaic of two synthetic frames related by a translation
        let cfg = ServoConfig {
            open_loop: false,
            ..ServoConfig::default()
        };
        let mut mosaic = MosaicState::new(MosaicConfig {
            keyframe_min_new_fraction: 0.0,
            ..MosaicConfig::default()
        });
        let mut f0 = Frame::filled(400, 400, 120);
        f0.frame_id = 0;
        let mut f1 = f0.clone();
        f1.frame_id = 1;
        mosaic.add_frame(&f0, None, 0.0, 0.0).unwrap();
        mosaic
            .add_frame(&f1, Some(&HomographyEstimate::exact(translation_homography(-30.0, 0.0))), 0.0, 0.0)
            .unwrap();
        let target = Vector2::new(199.5 + 220.0, 199.5);
        let mut state = LongRangeState::new(&mosaic, target, &cfg).unwrap();
        assert_eq!(state.phase, LongRangePhase::Waypoint);
        let source = prepare(mosaic.frame(state.source_frame_id).unwrap().image.as_ref().unwrap(), &cfg.vision);
        let current = prepare(&f1, &cfg.vision);
        let j = jac();
        let ctx = LongRangeContext {
            config: &cfg,
            jacobian: &j,
            mosaic: &mosaic,
            source: &source,
            current: &current,
            inter_frame: None,
            field_q: Vector2::zeros(),
            reference: Vector2::new(199.5, 199.5),
            measured_speed: 0.0,
        };
        let step = long_range_tick(&mut state, &ctx).unwrap();
        // target sits 190 px right of the current center: one waypoint at 125 px
        assert_eq!(state.waypoints, 1);
        assert_relative_eq!(step.leg_start.unwrap(), 125.0, epsilon = 1e-9);
        assert_relative_eq!(state.leg.unwrap().target, Vector2::new(324.5, 199.5), epsilon = 1e-9);
    }
}
