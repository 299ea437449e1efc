//! Simulator wrapper that remembers camera poses for ground-truth scoring.

use endonav::mosaic::MosaicState;
use endonav::scene::Frame;
use endonav::sim::{SimConfig, SimError, Simulator};
use nalgebra::{Isometry3, Point3, Vector2};
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct Rig {
    pub sim: Simulator,
    poses: HashMap<u64, Isometry3<f64>>,
    target: Option<Point3<f64>>,
}

impl Rig {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        let sim = Simulator::new(config)?;
        let mut poses = HashMap::new();
        poses.insert(sim.frame_id, sim.camera_pose());
        Ok(Self { sim, poses, target: None })
    }

    pub fn render(&self) -> Result<Frame, SimError> {
        self.sim.render()
    }

    pub fn step(&mut self, dq: Vector2<f64>, advance: f64) -> Result<Frame, SimError> {
        let frame = self.sim.step_with(dq, advance)?;
        self.poses.insert(frame.frame_id, self.sim.camera_pose());
        Ok(frame)
    }

    /// Field counters `(α, β)`.
    pub fn field_q(&self) -> Vector2<f64> {
        Vector2::new(self.sim.field.alpha, self.sim.field.beta)
    }

    pub fn pose(&self, frame_id: u64) -> Option<&Isometry3<f64>> {
        self.poses.get(&frame_id)
    }

    /// Tracks the surface point under `pixel` of the current frame.
    pub fn aim_frame(&mut self, pixel: Vector2<f64>) {
        self.target = self.sim.back_project(&pixel);
    }

    /// Tracks the surface point shown at mosaic point `m` by its source frame.
    pub fn aim_mosaic(&mut self, mosaic: &MosaicState, m: Vector2<f64>) {
        self.target = mosaic.mosaic_to_source(&m).ok().and_then(|(id, px)| {
            let pose = self.poses.get(&id)?;
            self.sim.scene.back_project(&self.sim.config.intrinsics, pose, &px)
        });
    }

    pub fn clear_target(&mut self) {
        self.target = None;
    }

    pub fn target(&self) -> Option<Point3<f64>> {
        self.target
    }

    /// Distance in px between the true image of the target and the image center.
    pub fn truth_error(&self) -> Option<f64> {
        let p = self.sim.project_world(&self.target?)?;
        Some((p - self.sim.config.intrinsics.center()).norm())
    }
}
