use endonav::scene::{CameraIntrinsics, Frame, Scene, Surface};
use endonav::servo::{Controller, ModeKind, NavCommand, ServoConfig, ServoError, Status, TickInput};
use endonav::sim::{SimConfig, Simulator};
use nalgebra::{Isometry3, Matrix2, Translation3, UnitQuaternion, Vector2, Vector3};

const DEPTH: f64 = 10.0;

/// Camera translating parallel to a plane: image motion is exactly `J·q`.
struct LinearPlant {
    scene: Scene,
    intrinsics: CameraIntrinsics,
    j: Matrix2<f64>,
    q: Vector2<f64>,
    frame_id: u64,
}

impl LinearPlant {
    fn new(j: Matrix2<f64>) -> Self {
        let pose = Isometry3::from_parts(
            Translation3::new(0.0, 0.0, DEPTH),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI),
        );
        Self {
            scene: Scene::new(Surface::plane(pose, 11)),
            intrinsics: CameraIntrinsics::default(),
            j,
            q: Vector2::zeros(),
            frame_id: 0,
        }
    }

    fn render(&self) -> Frame {
        let s = self.j * self.q * DEPTH / self.intrinsics.fx;
        let pose = Isometry3::translation(s.x, s.y, 0.0);
        self.scene.render(&self.intrinsics, &pose, 0.0, self.frame_id).unwrap()
    }

    fn step(&mut self, dq: Vector2<f64>) -> Frame {
        self.q += dq;
        self.frame_id += 1;
        self.render()
    }
}

fn calibrate_linear(c: &mut Controller, plant: &mut LinearPlant) -> Frame {
    let mut frame = plant.render();
    c.command(NavCommand::Calibrate).unwrap();
    for _ in 0..100 {
        let out = c.tick(TickInput {
            frame: &frame,
            field_q: plant.q,
        });
        frame = plant.step(out.dq);
        if out.record.status == Status::Reached {
            return frame;
        }
    }
    panic!("calibration did not finish");
}

#[test]
fn calibration_recovers_linear_plant() {
    let j = Matrix2::new(400.0, 40.0, -30.0, 350.0);
    let mut plant = LinearPlant::new(j);
    let mut c = Controller::new(ServoConfig::default());
    calibrate_linear(&mut c, &mut plant);
    let est = c.jacobian.unwrap().j;
    assert!((est - j).norm() / j.norm() < 0.02, "{est}");
}

#[test]
fn manual_run_on_linear_plant_is_collinear() {
    let mut plant = LinearPlant::new(Matrix2::new(400.0, 40.0, -30.0, 350.0));
    let mut c = Controller::new(ServoConfig::default());
    let mut frame = calibrate_linear(&mut c, &mut plant);
    let dir = Vector2::new(0.6, -0.8);
    c.command(NavCommand::Manual {
        direction: [dir.x, dir.y],
        speed: 40.0,
    })
    .unwrap();
    let mut total = Vector2::zeros();
    for _ in 0..50 {
        let out = c.tick(TickInput {
            frame: &frame,
            field_q: plant.q,
        });
        if let Some(d) = out.record.ds_hat {
            total += Vector2::new(d[0], d[1]);
        }
        frame = plant.step(out.dq);
    }
    let angle = (dir.x * total.y - dir.y * total.x).atan2(dir.dot(&total)).to_degrees();
    assert!(angle.abs() <= 2.0, "{angle}");
    assert!(total.norm() > 40.0 * 0.04 * 40.0);
}

#[test]
fn identical_frames_do_not_update_jacobian() {
    let plant = LinearPlant::new(Matrix2::identity() * 300.0);
    let mut c = Controller::with_jacobian(ServoConfig::default(), endonav::servo::JacobianEstimate::new(plant.j));
    c.command(NavCommand::Manual {
        direction: [1.0, 0.0],
        speed: 40.0,
    })
    .unwrap();
    let frame = plant.render();
    for _ in 0..4 {
        let out = c.tick(TickInput {
            frame: &frame,
            field_q: plant.q,
        });
        assert!(!out.record.broyden_updated);
        assert_ne!(out.dq, Vector2::zeros());
    }
    assert_eq!(c.jacobian.unwrap().updates, 0);
}

#[test]
fn target_leaving_the_frame_halts() {
    let mut plant = LinearPlant::new(Matrix2::identity() * 300.0);
    let mut c = Controller::with_jacobian(ServoConfig::default(), endonav::servo::JacobianEstimate::new(plant.j));
    let frame = plant.render();
    c.tick(TickInput {
        frame: &frame,
        field_q: plant.q,
    });
    c.command(NavCommand::ShortRange { target: [380.0, 199.5] }).unwrap();
    // a disturbance pans the view left so the target drifts off the right edge
    let mut err = None;
    for _ in 0..10 {
        plant.q.x -= 0.1 / 300.0 * 30.0;
        let frame = plant.render();
        let out = c.tick(TickInput {
            frame: &frame,
            field_q: plant.q,
        });
        if out.error.is_some() {
            err = out.error;
            break;
        }
    }
    assert!(matches!(err, Some(ServoError::TargetLost { .. })), "{err:?}");
    assert_eq!(c.mode(), ModeKind::Halted);
}

#[test]
fn short_range_reaches_target_on_simulator() {
    let mut sim = Simulator::new(SimConfig::default()).unwrap();
    let mut c = Controller::new(ServoConfig {
        build_mosaic: false,
        ..ServoConfig::default()
    });
    let mut frame = sim.render().unwrap();
    let tick = |c: &mut Controller, sim: &mut Simulator, frame: &mut Frame| {
        let out = c.tick(TickInput {
            frame,
            field_q: Vector2::new(sim.field.alpha, sim.field.beta),
        });
        *frame = sim.step(out.dq).unwrap();
        out
    };
    c.command(NavCommand::Calibrate).unwrap();
    while c.mode() == ModeKind::Calibrating {
        tick(&mut c, &mut sim, &mut frame);
    }
    let target = Vector2::new(290.0, 140.0);
    let world = sim.back_project(&target).unwrap();
    c.command(NavCommand::ShortRange {
        target: [target.x, target.y],
    })
    .unwrap();
    let mut reached = false;
    for _ in 0..400 {
        let out = tick(&mut c, &mut sim, &mut frame);
        if out.record.status == Status::Reached {
            reached = true;
            break;
        }
    }
    assert!(reached);
    let seen = sim.project_world(&world).unwrap();
    let center = sim.config.intrinsics.center();
    assert!((seen - center).norm() <= 2.5, "{seen}");
}
