use visnav_core::flow::{build_pyramid, track_points, FlowConfig};
use visnav_core::geometry::{Point2, Point3, Pose2};
use visnav_core::imgproc::{read_ppm, write_ppm};
use visnav_core::servo::{deproject, project_world, sample_depth};
use visnav_core::sim::{render, step, BoxObstacle, CameraIntrinsics, Rect, Robot, Scene, WorldState};

fn world() -> WorldState {
    let mut w = WorldState::new(
        Robot {
            pose: Pose2::new(0.0, 0.0, 0.0),
            radius: 0.18,
        },
        Point2::new(3.0, 0.0),
    );
    w.obstacles.push(BoxObstacle {
        footprint: Rect::centered(Point2::new(2.0, 0.6), 0.4, 0.4),
        height: 0.6,
        color: [60, 40, 40],
        velocity: Point2::new(0.0, 0.0),
    });
    w
}

#[test]
fn flow_follows_floor_points_under_ego_motion() {
    let cam = CameraIntrinsics::default();
    let w0 = world();
    let w1 = step(&w0, 0.25, 0.1, 0.1).unwrap();
    let (f0, _) = render(&w0, &cam).unwrap();
    let (f1, _) = render(&w1, &cam).unwrap();
    let cfg = FlowConfig::default();
    let p0 = build_pyramid(&f0, cfg.levels).unwrap();
    let p1 = build_pyramid(&f1, cfg.levels).unwrap();

    let floor = [Point3::new(1.5, -0.3, 0.0), Point3::new(2.2, -0.5, 0.0), Point3::new(2.8, 0.1, 0.0)];
    let before: Vec<Point2> = floor
        .iter()
        .map(|&p| project_world(p, &w0.robot.pose, &cam).unwrap().0)
        .collect();
    let flows = track_points(&p0, &p1, &before, &cfg).unwrap();
    for ((p, b), f) in floor.iter().zip(&before).zip(&flows) {
        let after = project_world(*p, &w1.robot.pose, &cam).unwrap().0;
        assert!(f.valid);
        let err = (b.x + f.u - after.x).hypot(b.y + f.v - after.y);
        assert!(err < 1.0, "tracking error {err} px");
    }
}

#[test]
fn rendered_depth_lifts_pixels_back_onto_scene_surfaces() {
    let cam = CameraIntrinsics::default();
    let w = world();
    let (_, depth) = render(&w, &cam).unwrap();
    let target = Point3::new(1.7, 0.4, 0.0);
    let (px, d) = project_world(target, &w.robot.pose, &cam).unwrap();
    let sampled = sample_depth(&depth, px);
    assert!((sampled - d).abs() / d < 0.02);
    let body = cam.cam_to_body(deproject(px, d, &cam).unwrap());
    assert!(w.robot.pose.to_world(body).dist(target) < 1e-9);
}

#[test]
fn scene_and_frame_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = Scene {
        world: world(),
        camera: CameraIntrinsics::scaled(160, 120),
    };
    let path = dir.path().join("scene.json");
    scene.save(&path).unwrap();
    let back = Scene::load(&path).unwrap();
    assert_eq!(back.world, scene.world);
    assert_eq!(back.camera, scene.camera);

    let (frame, _) = render(&back.world, &back.camera).unwrap();
    let ppm = dir.path().join("f.ppm");
    write_ppm(&frame, &ppm).unwrap();
    assert_eq!(read_ppm(&ppm).unwrap(), frame);
}

#[test]
fn stepping_into_a_box_reports_collision() {
    let mut w = world();
    w.robot.pose = Pose2::new(1.5, 0.6, 0.0);
    w.odometry = w.robot.pose;
    for _ in 0..20 {
        w = step(&w, 0.5, 0.0, 0.1).unwrap();
        if w.collision {
            break;
        }
    }
    assert!(w.collision);
    assert!(w.robot.pose.x < 1.8 + 0.18 + 0.05 + 1e-9);
}
