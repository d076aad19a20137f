//! Random navigation worlds: a robot at the origin facing +x, a floor goal a
//! few metres ahead and dark boxes scattered in between.

use crate::HarnessError;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use visnav_core::geometry::{Point2, Point3, Pose2};
use visnav_core::servo::{deproject_body, project_world, sample_depth};
use visnav_core::sim::{render, BoxObstacle, CameraIntrinsics, Floor, Mosaic, Rect, Robot, Scene, WorldState};

pub const FLOOR_COLOR: [u8; 3] = [170, 170, 170];

/// Pad colours share the floor's channel mean but not its channels.
pub const PAD_COLORS: [[u8; 3]; 3] = [[255, 255, 0], [255, 0, 255], [0, 255, 255]];

const ROBOT_RADIUS: f64 = 0.18;
const MEAN_BOX_AREA: f64 = 0.45 * 0.45;
const ATTEMPTS: usize = 200;
const GRID: f64 = 0.05;
/// Margin beyond the robot radius that routes keep from box footprints.
const CLEARANCE: f64 = 0.22;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldGenConfig {
    pub width: usize,
    pub height: usize,
    /// Camera height above the floor, metres.
    pub cam_height: f64,
    /// Camera pitch in degrees, negative looks down.
    pub cam_pitch_deg: f64,
    /// Fraction of the obstacle field covered by box footprints.
    pub obstacle_density: f64,
    /// Probability that a floor tile carries a coloured pad.
    pub pad_level: f64,
    /// Side of a pad tile, metres.
    pub pad_tile: f64,
    pub dynamic_obstacles: usize,
    /// Speed of dynamic obstacles, m/s.
    pub dynamic_speed: f64,
    pub goal_min: f64,
    pub goal_max: f64,
    pub odometry_noise: f64,
}

impl Default for WorldGenConfig {
    fn default() -> Self {
        Self {
            width: visnav_core::sim::DEFAULT_WIDTH,
            height: visnav_core::sim::DEFAULT_HEIGHT,
            cam_height: 0.35,
            cam_pitch_deg: -10.0,
            obstacle_density: 0.1,
            pad_level: 0.0,
            pad_tile: 0.025,
            dynamic_obstacles: 0,
            dynamic_speed: 0.25,
            goal_min: 3.0,
            goal_max: 3.5,
            odometry_noise: 0.0,
        }
    }
}

impl WorldGenConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.width < 16 || self.height < 16 {
            return bad("image must be at least 16x16");
        }
        if !(0.0..=0.6).contains(&self.obstacle_density) {
            return bad("obstacle_density must lie in [0, 0.6]");
        }
        if !(0.0..=1.0).contains(&self.pad_level) {
            return bad("pad_level must lie in [0, 1]");
        }
        if !(self.pad_tile > 0.0) || !(self.cam_height > 0.0) {
            return bad("pad_tile and cam_height must be positive");
        }
        if !(self.goal_min >= 2.0 && self.goal_max >= self.goal_min) {
            return bad("goal range must satisfy 2 <= goal_min <= goal_max");
        }
        Ok(())
    }

    pub fn camera(&self) -> CameraIntrinsics {
        CameraIntrinsics::scaled(self.width, self.height).with_mount(self.cam_height, self.cam_pitch_deg.to_radians())
    }
}

/// Draw a solvable world whose goal is visible from the start pose.
pub fn generate_scene(cfg: &WorldGenConfig, seed: u64) -> Result<Scene, HarnessError> {
    cfg.validate()?;
    let camera = cfg.camera();
    camera.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_3A7E);
    for _ in 0..ATTEMPTS {
        let world = draw_world(cfg, &mut rng);
        if solvable(&world) && goal_visible(&world, &camera)? {
            return Ok(Scene { world, camera });
        }
    }
    Err(HarnessError::Config(format!(
        "no solvable world with density {} after {ATTEMPTS} draws",
        cfg.obstacle_density
    )))
}

fn dark_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    loop {
        let c = [rng.gen_range(10..140u8), rng.gen_range(10..140u8), rng.gen_range(10..140u8)];
        if c.iter().map(|&v| v as u32).sum::<u32>() <= 300 {
            return c;
        }
    }
}

fn draw_world(cfg: &WorldGenConfig, rng: &mut ChaCha8Rng) -> WorldState {
    let robot = Robot {
        pose: Pose2::new(0.0, 0.0, 0.0),
        radius: ROBOT_RADIUS,
    };
    let goal = Point2::new(rng.gen_range(cfg.goal_min..=cfg.goal_max), rng.gen_range(-0.4..=0.4));
    let mut world = WorldState::new(robot, goal);
    world.floor = Floor {
        color: FLOOR_COLOR,
        mosaic: mosaic(cfg, goal.x, rng),
        texture_seed: rng.gen(),
        ..Floor::default()
    };
    world.odometry_noise = cfg.odometry_noise;
    world.odometry_seed = rng.gen();

    let field = Rect::new(1.2, -1.3, goal.x - 0.3, 1.3);
    let field_area = (field.max.x - field.min.x) * (field.max.y - field.min.y);
    let count = (cfg.obstacle_density * field_area / MEAN_BOX_AREA).round() as usize;
    let mut tries = 0;
    while world.obstacles.len() < count && tries < 50 * count.max(1) {
        tries += 1;
        let (w, d) = (rng.gen_range(0.3..=0.6), rng.gen_range(0.3..=0.6));
        let c = Point2::new(rng.gen_range(field.min.x..=field.max.x), rng.gen_range(field.min.y..=field.max.y));
        let footprint = Rect::centered(c, w, d);
        if footprint.distance(goal) < 0.6 || footprint.distance(Point2::new(0.0, 0.0)) < 0.8 {
            continue;
        }
        world.obstacles.push(BoxObstacle {
            footprint,
            height: rng.gen_range(0.5..=0.9),
            color: dark_color(rng),
            velocity: Point2::new(0.0, 0.0),
        });
    }
    for _ in 0..cfg.dynamic_obstacles {
        // Crosses the straight line to the goal from one side.
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let x = rng.gen_range(1.4..=(goal.x - 0.8).max(1.5));
        let c = Point2::new(x, side * rng.gen_range(1.0..=1.6));
        world.obstacles.push(BoxObstacle {
            footprint: Rect::centered(c, 0.35, 0.35),
            height: 0.6,
            color: dark_color(rng),
            velocity: Point2::new(0.0, -side * cfg.dynamic_speed),
        });
    }
    world
}

/// Coloured tiles over the floor ahead of the robot.
fn mosaic(cfg: &WorldGenConfig, goal_x: f64, rng: &mut ChaCha8Rng) -> Option<Mosaic> {
    if cfg.pad_level <= 0.0 {
        return None;
    }
    let t = cfg.pad_tile;
    let origin = Point2::new(0.3, -2.5);
    let cols = ((goal_x + 1.5 - origin.x) / t).ceil() as usize;
    let rows = (5.0 / t).ceil() as usize;
    let cells = (0..cols * rows)
        .map(|_| rng.gen_bool(cfg.pad_level).then(|| *PAD_COLORS.choose(rng).expect("colours")))
        .collect();
    Some(Mosaic {
        origin,
        tile: t,
        cols,
        rows,
        cells,
    })
}

/// Breadth-first search for a route on a coarse grid, with obstacles
/// inflated by the robot radius plus the clearance the camera needs to see
/// floor between neighbouring shadows.
fn solvable(world: &WorldState) -> bool {
    let inflate = world.robot.radius + CLEARANCE;
    let (x0, y0) = (-0.5, -2.0);
    let x1 = world.goal.x + 0.5;
    let nx = ((x1 - x0) / GRID).ceil() as usize;
    let ny = (4.0 / GRID).ceil() as usize;
    let cell = |ix: usize, iy: usize| Point2::new(x0 + ix as f64 * GRID, y0 + iy as f64 * GRID);
    let index = |p: Point2| (((p.x - x0) / GRID).round() as usize, ((p.y - y0) / GRID).round() as usize);
    let statics: Vec<&BoxObstacle> = world.obstacles.iter().filter(|b| b.velocity.norm() == 0.0).collect();
    let free = |ix: usize, iy: usize| {
        let p = cell(ix, iy);
        statics.iter().all(|b| b.footprint.distance(p) > inflate)
    };
    let (sx, sy) = index(world.robot.pose.position());
    let (gx, gy) = index(world.goal);
    let mut seen = vec![false; nx * ny];
    let mut queue = VecDeque::from([(sx, sy)]);
    seen[sy * nx + sx] = true;
    while let Some((x, y)) = queue.pop_front() {
        if (x, y) == (gx, gy) {
            return true;
        }
        for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
            let (u, v) = (x as i64 + dx, y as i64 + dy);
            if u < 0 || v < 0 || u >= nx as i64 || v >= ny as i64 {
                continue;
            }
            let (u, v) = (u as usize, v as usize);
            if !seen[v * nx + u] && free(u, v) {
                seen[v * nx + u] = true;
                queue.push_back((u, v));
            }
        }
    }
    false
}

/// The goal projects inside the first frame, away from the borders, nothing
/// stands in front of it, and a corridor of visible floor with the solver's
/// clearance joins it to the bottom centre of the image.
fn goal_visible(world: &WorldState, cam: &CameraIntrinsics) -> Result<bool, HarnessError> {
    let Some((px, z)) = project_world(Point3::new(world.goal.x, world.goal.y, 0.0), &world.robot.pose, cam) else {
        return Ok(false);
    };
    let border = 8.0;
    if px.x < border || px.y < border || px.x > cam.width as f64 - border || px.y > cam.height as f64 - border {
        return Ok(false);
    }
    let (_, depth) = render(world, cam)?;
    let d = sample_depth(&depth, px);
    if !(d.is_finite() && (d - z).abs() <= 0.05 * z) {
        return Ok(false);
    }

    let (w, h) = (cam.width, cam.height);
    let inflate = world.robot.radius + CLEARANCE;
    let open: Vec<bool> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let d = depth.get(x, y);
            if !d.is_finite() {
                return false;
            }
            match deproject_body(Point2::new(x as f64, y as f64), d, cam) {
                Ok(b) => {
                    let p = world.robot.pose.to_world(b);
                    p.z.abs() < 1e-3 && world.clearance(p.xy()) > inflate
                }
                Err(_) => false,
            }
        })
        .collect();
    let start = (w / 2, h - 1);
    let goal = (px.x.round() as usize, px.y.round() as usize);
    Ok(open[start.1 * w + start.0] && grid_connected(&open, w, h, start, goal))
}

fn grid_connected(open: &[bool], w: usize, h: usize, start: (usize, usize), goal: (usize, usize)) -> bool {
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::from([start]);
    seen[start.1 * w + start.0] = true;
    while let Some((x, y)) = queue.pop_front() {
        if (x, y) == goal {
            return true;
        }
        for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
            let (u, v) = (x as i64 + dx, y as i64 + dy);
            if u < 0 || v < 0 || u >= w as i64 || v >= h as i64 {
                continue;
            }
            let i = v as usize * w + u as usize;
            if !seen[i] && open[i] {
                seen[i] = true;
                queue.push_back((u as usize, v as usize));
            }
        }
    }
    false
}
