//! Closed world for servo experiments: field, tip plant and rendered scene.
//!
//! Controllers only ever see the frames returned here. Ground-truth queries
//! (`project_world`, `true_homography`) exist for tests and metrics.

use crate::magnetics::{rotate_field, FieldCapMap, FieldState, MagneticsError};
use crate::plant::{step_plant, PlantError, PlantParams, TipState};
use crate::scene::{ground_truth_homography, project, CameraIntrinsics, Frame, Scene, SceneError, Surface};
use nalgebra::{Isometry3, Matrix3, Point3, Translation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Magnetics(#[from] MagneticsError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("field of {magnitude} mT exceeds the cap at the tip position")]
    FieldInfeasible { magnitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub plant: PlantParams,
    pub intrinsics: CameraIntrinsics,
    /// Field magnitude, mT.
    pub field_magnitude: f64,
    /// Unit gravity direction in S.
    pub gravity: Vector3<f64>,
    pub dt: f64,
    /// Plant integration substeps per tick.
    pub substeps: usize,
    pub insertion_depth: f64,
    /// Tip-to-surface distance along the straight insertion axis, mm.
    pub surface_distance: f64,
    pub texture_seed: u64,
    pub surface: Option<Surface>,
    /// Seconds of settling under the initial field before the first frame.
    pub settle: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            plant: PlantParams::default(),
            intrinsics: CameraIntrinsics::default(),
            field_magnitude: 20.0,
            gravity: -Vector3::z(),
            dt: 0.04,
            substeps: 4,
            insertion_depth: 0.0,
            surface_distance: 10.0,
            texture_seed: 7,
            surface: None,
            settle: 1.0,
        }
    }
}

impl SimConfig {
    /// Plane facing the straight tip at `surface_distance` beyond its rest position.
    pub fn default_surface(&self) -> Surface {
        let rest = TipState::rest(&self.plant, self.insertion_depth);
        let axis = rest.world_direction();
        let origin = rest.tip_pose.translation.vector + axis * self.surface_distance;
        // local z faces back toward the endoscope; local x follows image right
        let z = -axis;
        let x = rest.tip_pose.rotation * Vector3::x();
        let y = z.cross(&x);
        let rot = nalgebra::Rotation3::from_basis_unchecked(&[x, y, z]);
        let pose = Isometry3::from_parts(Translation3::from(origin), UnitQuaternion::from_rotation_matrix(&rot));
        Surface::plane(pose, self.texture_seed)
    }
}

#[derive(Debug, Clone)]
pub struct Simulator {
    pub config: SimConfig,
    pub scene: Scene,
    pub tip: TipState,
    pub field: FieldState,
    pub time: f64,
    pub frame_id: u64,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        let tip = TipState::rest(&config.plant, config.insertion_depth);
        let field = FieldState::along(&tip.world_direction(), config.field_magnitude)?;
        let position = tip.tip_pose.translation.vector;
        if !FieldCapMap::default().check_field_feasible(&position, config.field_magnitude)? {
            return Err(SimError::FieldInfeasible {
                magnitude: config.field_magnitude,
            });
        }
        let surface = config.surface.clone().unwrap_or_else(|| config.default_surface());
        let mut sim = Self {
            scene: Scene::new(surface),
            tip,
            field,
            time: 0.0,
            frame_id: 0,
            config,
        };
        let steps = (sim.config.settle / sim.config.dt).round() as usize;
        for _ in 0..steps {
            sim.integrate(sim.config.dt);
        }
        Ok(sim)
    }

    fn integrate(&mut self, dt: f64) {
        let n = self.config.substeps.max(1);
        let h = dt / n as f64;
        for _ in 0..n {
            self.tip = step_plant(&self.tip, &self.config.plant, &self.field, &self.config.gravity, h);
        }
    }

    pub fn camera_pose(&self) -> Isometry3<f64> {
        self.tip.camera_pose
    }

    pub fn render(&self) -> Result<Frame, SimError> {
        Ok(self
            .scene
            .render(&self.config.intrinsics, &self.tip.camera_pose, self.time, self.frame_id)?)
    }

    /// Applies a field rotation, advances one tick and renders the new frame.
    pub fn step(&mut self, dq: Vector2<f64>) -> Result<Frame, SimError> {
        self.step_with(dq, 0.0)
    }

    /// Like [`Simulator::step`], also moving the insertion depth by `advance` mm.
    pub fn step_with(&mut self, dq: Vector2<f64>, advance: f64) -> Result<Frame, SimError> {
        if advance != 0.0 {
            self.tip = crate::plant::advance(&self.tip, &self.config.plant, advance)?;
        }
        if dq != Vector2::zeros() {
            self.field = rotate_field(&self.field, dq);
        }
        self.integrate(self.config.dt);
        self.time += self.config.dt;
        self.frame_id += 1;
        self.render()
    }

    /// Pixel at which a world point currently appears.
    pub fn project_world(&self, p: &Point3<f64>) -> Option<Vector2<f64>> {
        project(&self.config.intrinsics, &self.tip.camera_pose, p)
    }

    /// Surface point currently seen at `pixel`.
    pub fn back_project(&self, pixel: &Vector2<f64>) -> Option<Point3<f64>> {
        self.scene.back_project(&self.config.intrinsics, &self.tip.camera_pose, pixel)
    }

    /// Ground-truth homography from a view at `from` onto the current view.
    pub fn true_homography(&self, from: &Isometry3<f64>) -> Result<Matrix3<f64>, SimError> {
        Ok(ground_truth_homography(
            &self.config.intrinsics,
            from,
            &self.tip.camera_pose,
            &self.scene.surface,
        )?)
    }
}
