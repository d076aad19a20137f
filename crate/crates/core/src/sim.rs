//! Synthetic ground-robot world: textured floor with coloured pads, box
//! obstacles, a pitched pinhole camera and unicycle kinematics.
//!
//! World frame: x, y on the floor, z up. Body frame: x forward, y left,
//! z up. Camera frame: x right, y down, z along the optical axis.

use crate::geometry::{Point2, Point3, Pose2};
use crate::imgproc::ImageFrame;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("invalid world: {0}")]
    World(String),
    #[error("time step {0} must be positive")]
    TimeStep(f64),
    #[error("world file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

pub const DEFAULT_WIDTH: usize = 424;
pub const DEFAULT_HEIGHT: usize = 240;
pub const DEFAULT_FOCAL: f64 = 210.0;
pub const DEFAULT_DT: f64 = 0.1;
pub const MAX_SPEED: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraMount {
    /// Optical centre above the floor, meters.
    pub height: f64,
    /// Radians; negative looks down.
    pub pitch: f64,
    /// Optical centre ahead of the robot centre, meters.
    #[serde(default)]
    pub forward: f64,
}

impl Default for CameraMount {
    fn default() -> Self {
        Self {
            height: 0.35,
            pitch: -10f64.to_radians(),
            forward: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub px: f64,
    pub py: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub mount: CameraMount,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::scaled(DEFAULT_WIDTH, DEFAULT_HEIGHT)
    }
}

impl CameraIntrinsics {
    /// Default field of view at another resolution: focal lengths scale with
    /// width and height independently, principal point at the centre.
    pub fn scaled(width: usize, height: usize) -> Self {
        Self {
            fx: DEFAULT_FOCAL * width as f64 / DEFAULT_WIDTH as f64,
            fy: DEFAULT_FOCAL * height as f64 / DEFAULT_HEIGHT as f64,
            px: width as f64 / 2.0,
            py: height as f64 / 2.0,
            width,
            height,
            mount: CameraMount::default(),
        }
    }

    pub fn with_mount(mut self, height: f64, pitch: f64) -> Self {
        self.mount.height = height;
        self.mount.pitch = pitch;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(SimError::Camera("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SimError::Camera("empty image".into()));
        }
        if !(self.px >= 0.0 && self.px <= self.width as f64 && self.py >= 0.0 && self.py <= self.height as f64) {
            return Err(SimError::Camera("principal point outside the image".into()));
        }
        if !(self.mount.height > 0.0) {
            return Err(SimError::Camera("camera must be above the floor".into()));
        }
        if !(self.mount.pitch > -std::f64::consts::FRAC_PI_2 && self.mount.pitch <= 0.0) {
            return Err(SimError::Camera("pitch must lie in (-90°, 0°]".into()));
        }
        Ok(())
    }

    fn axes(&self) -> (Point3, Point3, Point3) {
        let (s, c) = self.mount.pitch.sin_cos();
        let right = Point3::new(0.0, -1.0, 0.0);
        let down = Point3::new(s, 0.0, -c);
        let fwd = Point3::new(c, 0.0, s);
        (right, down, fwd)
    }

    pub fn origin_body(&self) -> Point3 {
        Point3::new(self.mount.forward, 0.0, self.mount.height)
    }

    pub fn cam_to_body(&self, p: Point3) -> Point3 {
        let (r, d, f) = self.axes();
        self.origin_body().add(r.scale(p.x)).add(d.scale(p.y)).add(f.scale(p.z))
    }

    pub fn body_to_cam(&self, p: Point3) -> Point3 {
        let (r, d, f) = self.axes();
        let q = p.sub(self.origin_body());
        Point3::new(q.dot(r), q.dot(d), q.dot(f))
    }

    /// Camera centre and the world-frame direction of the ray through pixel
    /// (i, j), scaled so its optical-axis component is 1.
    pub fn ray(&self, pose: &Pose2, i: f64, j: f64) -> (Point3, Point3) {
        let o = pose.to_world(self.origin_body());
        let tip = pose.to_world(self.cam_to_body(Point3::new((i - self.px) / self.fx, (j - self.py) / self.fy, 1.0)));
        (o, tip.sub(o))
    }
}

/// Axis-aligned rectangle on the floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point2,
    pub max: Point2,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            min: Point2::new(x0.min(x1), y0.min(y1)),
            max: Point2::new(x0.max(x1), y0.max(y1)),
        }
    }

    pub fn centered(c: Point2, w: f64, h: f64) -> Self {
        Self::new(c.x - w / 2.0, c.y - h / 2.0, c.x + w / 2.0, c.y + h / 2.0)
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Euclidean distance from `p`; zero inside.
    pub fn distance(&self, p: Point2) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        dx.hypot(dy)
    }

    pub fn translated(&self, d: Point2) -> Rect {
        Rect {
            min: self.min.add(d),
            max: self.max.add(d),
        }
    }

    pub fn center(&self) -> Point2 {
        self.min.lerp(self.max, 0.5)
    }

    fn is_valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.max.x > self.min.x && self.max.y > self.min.y
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pad {
    pub area: Rect,
    pub color: [u8; 3],
}

/// Regular grid of floor tiles anchored at `origin` (minimum corner), row
/// major along +y; `None` cells show the floor colour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mosaic {
    pub origin: Point2,
    pub tile: f64,
    pub cols: usize,
    pub rows: usize,
    pub cells: Vec<Option<[u8; 3]>>,
}

impl Mosaic {
    pub fn color_at(&self, p: Point2) -> Option<[u8; 3]> {
        let (u, v) = ((p.x - self.origin.x) / self.tile, (p.y - self.origin.y) / self.tile);
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (c, r) = (u as usize, v as usize);
        if c >= self.cols || r >= self.rows {
            return None;
        }
        self.cells[r * self.cols + c]
    }

    fn is_valid(&self) -> bool {
        self.tile > 0.0 && self.origin.is_finite() && self.cells.len() == self.cols * self.rows
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Floor {
    pub color: [u8; 3],
    #[serde(default)]
    pub pads: Vec<Pad>,
    /// Drawn under the pads.
    #[serde(default)]
    pub mosaic: Option<Mosaic>,
    /// Peak amplitude of the world-space intensity texture.
    #[serde(default = "default_texture_amplitude")]
    pub texture_amplitude: f64,
    #[serde(default)]
    pub texture_seed: u64,
}

fn default_texture_amplitude() -> f64 {
    8.0
}

impl Default for Floor {
    fn default() -> Self {
        Self {
            color: [144, 144, 144],
            pads: Vec::new(),
            mosaic: None,
            texture_amplitude: default_texture_amplitude(),
            texture_seed: 0,
        }
    }
}

/// Darkening of the floor around obstacle footprints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shadow {
    pub radius: f64,
    pub strength: f64,
}

impl Default for Shadow {
    fn default() -> Self {
        Self {
            radius: 0.45,
            strength: 0.6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxObstacle {
    pub footprint: Rect,
    pub height: f64,
    pub color: [u8; 3],
    /// m/s; zero for static boxes.
    #[serde(default)]
    pub velocity: Point2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Robot {
    pub pose: Pose2,
    pub radius: f64,
}

fn default_sky() -> [u8; 3] {
    [250, 250, 255]
}

fn default_goal_radius() -> f64 {
    0.3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub floor: Floor,
    #[serde(default)]
    pub shadow: Shadow,
    #[serde(default)]
    pub obstacles: Vec<BoxObstacle>,
    pub robot: Robot,
    pub goal: Point2,
    #[serde(default = "default_goal_radius")]
    pub goal_radius: f64,
    #[serde(default = "default_sky")]
    pub sky: [u8; 3],
    #[serde(default)]
    pub time: usize,
    /// Robot disc intersects an obstacle after the last step.
    #[serde(default)]
    pub collision: bool,
    /// Robot centre within `goal_radius` of the goal after the last step.
    #[serde(default)]
    pub goal_reached: bool,
    /// Relative standard deviation of odometry velocity noise; 0 disables.
    #[serde(default)]
    pub odometry_noise: f64,
    #[serde(default)]
    pub odometry_seed: u64,
    /// Dead-reckoned pose; equals the true pose without noise.
    #[serde(default)]
    pub odometry: Pose2,
}

impl WorldState {
    pub fn new(robot: Robot, goal: Point2) -> Self {
        Self {
            floor: Floor::default(),
            shadow: Shadow::default(),
            obstacles: Vec::new(),
            robot,
            goal,
            goal_radius: default_goal_radius(),
            sky: default_sky(),
            time: 0,
            collision: false,
            goal_reached: false,
            odometry_noise: 0.0,
            odometry_seed: 0,
            odometry: robot.pose,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.robot.radius > 0.0) {
            return Err(SimError::World("robot radius must be positive".into()));
        }
        if let Some(i) = self.obstacles.iter().position(|b| !b.footprint.is_valid() || !(b.height > 0.0)) {
            return Err(SimError::World(format!("obstacle {i} is degenerate")));
        }
        if self.floor.mosaic.as_ref().is_some_and(|m| !m.is_valid()) {
            return Err(SimError::World("mosaic cell count does not match its grid".into()));
        }
        if self.floor.pads.iter().any(|p| !p.area.is_valid()) {
            return Err(SimError::World("degenerate pad".into()));
        }
        Ok(())
    }

    pub fn robot_collides(&self) -> bool {
        let c = self.robot.pose.position();
        self.obstacles.iter().any(|b| b.footprint.distance(c) <= self.robot.radius)
    }

    /// Distance from `p` to the nearest obstacle footprint.
    pub fn clearance(&self, p: Point2) -> f64 {
        self.obstacles.iter().map(|b| b.footprint.distance(p)).fold(f64::INFINITY, f64::min)
    }
}

/// Camera and world together, as stored in world files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub world: WorldState,
    #[serde(default)]
    pub camera: CameraIntrinsics,
}

impl Scene {
    pub fn load(path: &Path) -> Result<Self> {
        let scene: Scene = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        scene.world.validate()?;
        scene.camera.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Metric depth per pixel along the optical axis; infinite for sky.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Row-major little-endian f32.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for &d in &self.data {
            w.write_all(&(d as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }
}

fn hash2(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    h ^= (ix as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = h.rotate_left(31).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= (iy as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 32;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 29;
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (s(x - fx), s(y - fy));
    let a = hash2(ix, iy, seed) * (1.0 - tx) + hash2(ix + 1, iy, seed) * tx;
    let b = hash2(ix, iy + 1, seed) * (1.0 - tx) + hash2(ix + 1, iy + 1, seed) * tx;
    a * (1.0 - ty) + b * ty
}

const OCTAVES: [f64; 6] = [1.6, 0.8, 0.4, 0.2, 0.1, 0.05];

/// Multi-octave texture; octaves finer than a few pixel footprints fade out.
fn texture(p: Point2, footprint: f64, floor: &Floor) -> f64 {
    let mut acc = 0.0;
    for (o, &wl) in OCTAVES.iter().enumerate() {
        let w = ((wl / footprint.max(1e-9) - 2.0) / 2.0).clamp(0.0, 1.0);
        if w > 0.0 {
            acc += w * value_noise(p.x / wl, p.y / wl, floor.texture_seed.wrapping_add(o as u64 * 7919));
        }
    }
    acc * floor.texture_amplitude / OCTAVES.len() as f64 * 2.0
}

fn shade_floor(world: &WorldState, p: Point2, footprint: f64) -> [u8; 3] {
    let floor = &world.floor;
    let base = match floor.pads.iter().rev().find(|pad| pad.area.contains(p)) {
        Some(pad) => pad.color,
        None => floor.mosaic.as_ref().and_then(|m| m.color_at(p)).unwrap_or(floor.color),
    };
    let n = texture(p, footprint, floor).clamp(-floor.texture_amplitude, floor.texture_amplitude);
    let d = world.clearance(p);
    let factor = if world.shadow.radius > 0.0 {
        1.0 - world.shadow.strength * (1.0 - d / world.shadow.radius).max(0.0)
    } else {
        1.0
    };
    base.map(|c| ((c as f64 + n) * factor).round().clamp(0.0, 255.0) as u8)
}

/// Nearest box hit along the ray: parameter and face shade.
fn hit_box(b: &BoxObstacle, o: Point3, d: Point3) -> Option<(f64, f64)> {
    let lo = [b.footprint.min.x, b.footprint.min.y, 0.0];
    let hi = [b.footprint.max.x, b.footprint.max.y, b.height];
    let (oo, dd) = ([o.x, o.y, o.z], [d.x, d.y, d.z]);
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    let mut axis = usize::MAX;
    for k in 0..3 {
        if dd[k].abs() < 1e-15 {
            if oo[k] < lo[k] || oo[k] > hi[k] {
                return None;
            }
            continue;
        }
        let a = (lo[k] - oo[k]) / dd[k];
        let b = (hi[k] - oo[k]) / dd[k];
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        if near > t0 {
            t0 = near;
            axis = k;
        }
        t1 = t1.min(far);
        if t0 > t1 {
            return None;
        }
    }
    if axis == usize::MAX {
        return None; // camera inside the box
    }
    Some((t0, [0.8, 0.65, 1.0][axis]))
}

/// Ray-cast colour image and depth map of the world as seen from the robot.
pub fn render(world: &WorldState, cam: &CameraIntrinsics) -> Result<(ImageFrame, DepthMap)> {
    cam.validate()?;
    world.validate()?;
    let (w, h) = (cam.width, cam.height);
    let pose = world.robot.pose;
    let rows: Vec<(Vec<u8>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|j| {
            let mut rgb = Vec::with_capacity(w * 3);
            let mut depth = Vec::with_capacity(w);
            for i in 0..w {
                let (o, d) = cam.ray(&pose, i as f64, j as f64);
                let mut best = f64::INFINITY;
                let mut color = world.sky;
                if d.z < 0.0 {
                    let t = -o.z / d.z;
                    let p = o.add(d.scale(t));
                    let range = t * d.norm();
                    let footprint = range * range / (cam.fx.min(cam.fy) * o.z);
                    best = t;
                    color = shade_floor(world, p.xy(), footprint);
                }
                for b in &world.obstacles {
                    if let Some((t, shade)) = hit_box(b, o, d) {
                        if t < best {
                            best = t;
                            color = b.color.map(|c| (c as f64 * shade).round() as u8);
                        }
                    }
                }
                rgb.extend_from_slice(&color);
                depth.push(best);
            }
            (rgb, depth)
        })
        .collect();
    let mut data = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    for (r, d) in rows {
        data.extend(r);
        depth.extend(d);
    }
    let frame = ImageFrame::new(w, h, 3, data).expect("consistent buffer");
    Ok((
        frame,
        DepthMap {
            width: w,
            height: h,
            data: depth,
        },
    ))
}

fn integrate(p: Pose2, v: f64, w: f64, dt: f64) -> Pose2 {
    Pose2::new(
        p.x + v * p.theta.cos() * dt,
        p.y + v * p.theta.sin() * dt,
        crate::geometry::wrap_angle(p.theta + w * dt),
    )
}

/// Advance the world by `dt` seconds under unicycle velocity commands.
pub fn step(world: &WorldState, v: f64, w: f64, dt: f64) -> Result<WorldState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::TimeStep(dt));
    }
    let mut next = world.clone();
    next.robot.pose = integrate(world.robot.pose, v, w, dt);
    next.odometry = if world.odometry_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(world.odometry_seed ^ (world.time as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
        let n = Normal::new(0.0, world.odometry_noise).expect("finite noise");
        integrate(
            world.odometry,
            v * (1.0 + n.sample(&mut rng)),
            w * (1.0 + n.sample(&mut rng)),
            dt,
        )
    } else {
        integrate(world.odometry, v, w, dt)
    };
    for b in &mut next.obstacles {
        b.footprint = b.footprint.translated(b.velocity.scale(dt));
    }
    next.time += 1;
    next.collision = next.robot_collides();
    next.goal_reached = next.robot.pose.position().dist(next.goal) <= next.goal_radius;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_world() -> WorldState {
        let mut w = WorldState::new(
            Robot {
                pose: Pose2::new(0.0, 0.0, 0.0),
                radius: 0.18,
            },
            Point2::new(3.0, 0.0),
        );
        w.floor.texture_amplitude = 0.0;
        w
    }

    /// Pinhole projection of a world point into the robot camera.
    fn project(cam: &CameraIntrinsics, pose: &Pose2, p: Point3) -> (f64, f64, f64) {
        let c = cam.body_to_cam(pose.to_body(p));
        (cam.fx * c.x / c.z + cam.px, cam.fy * c.y / c.z + cam.py, c.z)
    }

    #[test]
    fn empty_world_floor_and_sky() {
        let w = empty_world();
        let cam = CameraIntrinsics::default();
        let (f, d) = render(&w, &cam).unwrap();
        assert_eq!(f.pixel(10, 0), &w.sky);
        assert_eq!(f.pixel(200, 239), &w.floor.color);
        assert!(d.get(10, 0).is_infinite());
        for x in [0, 100, 212, 423] {
            let col: Vec<f64> = (0..240).map(|y| d.get(x, y)).filter(|v| v.is_finite()).collect();
            assert!(col.len() > 100);
            assert!(col.windows(2).all(|p| p[1] < p[0]), "depth must grow upward");
        }
    }

    #[test]
    fn box_dead_ahead_matches_projection() {
        let mut w = empty_world();
        w.shadow.strength = 0.0;
        w.obstacles.push(BoxObstacle {
            footprint: Rect::new(2.0, -0.3, 2.4, 0.3),
            height: 0.6,
            color: [200, 30, 30],
            velocity: Point2::default(),
        });
        let cam = CameraIntrinsics::default();
        let (f, _) = render(&w, &cam).unwrap();
        let hits: Vec<(usize, usize)> = (0..cam.height)
            .flat_map(|y| (0..cam.width).map(move |x| (x, y)))
            .filter(|&(x, y)| f.pixel(x, y)[1] < 40)
            .collect();
        let (min_x, max_x) = (hits.iter().map(|p| p.0).min().unwrap(), hits.iter().map(|p| p.0).max().unwrap());
        let (min_y, max_y) = (hits.iter().map(|p| p.1).min().unwrap(), hits.iter().map(|p| p.1).max().unwrap());
        let pose = w.robot.pose;
        let mut us = vec![];
        let mut vs = vec![];
        for x in [2.0, 2.4] {
            for y in [-0.3, 0.3] {
                for z in [0.0, 0.6] {
                    let (u, v, _) = project(&cam, &pose, Point3::new(x, y, z));
                    us.push(u);
                    vs.push(v);
                }
            }
        }
        let fmin = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let fmax = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((min_x as f64 - fmin(&us).ceil()).abs() <= 1.0);
        assert!((max_x as f64 - fmax(&us).floor()).abs() <= 1.0);
        assert!((min_y as f64 - fmin(&vs).ceil()).abs() <= 1.0);
        assert!((max_y as f64 - fmax(&vs).floor()).abs() <= 1.0);
        let cx = (min_x + max_x) as f64 / 2.0;
        assert!((cx - cam.px).abs() <= 1.0);
    }

    #[test]
    fn mosaic_lookup_and_pad_priority() {
        let m = Mosaic {
            origin: Point2::new(1.0, -1.0),
            tile: 0.5,
            cols: 2,
            rows: 1,
            cells: vec![Some([1, 2, 3]), None],
        };
        assert_eq!(m.color_at(Point2::new(1.2, -0.9)), Some([1, 2, 3]));
        assert_eq!(m.color_at(Point2::new(1.7, -0.9)), None);
        assert_eq!(m.color_at(Point2::new(0.9, -0.9)), None);
        assert_eq!(m.color_at(Point2::new(1.2, -0.4)), None);

        let mut w = empty_world();
        w.shadow.strength = 0.0;
        w.floor.mosaic = Some(Mosaic {
            origin: Point2::new(0.0, -5.0),
            tile: 10.0,
            cols: 1,
            rows: 1,
            cells: vec![Some([200, 10, 10])],
        });
        let cam = CameraIntrinsics::default();
        let (f, _) = render(&w, &cam).unwrap();
        assert_eq!(f.pixel(212, 239), [200, 10, 10]);
        w.floor.pads.push(Pad {
            area: Rect::new(0.0, -5.0, 10.0, 5.0),
            color: [5, 5, 5],
        });
        let (f, _) = render(&w, &cam).unwrap();
        assert_eq!(f.pixel(212, 239), [5, 5, 5]);
        w.floor.mosaic.as_mut().unwrap().cols = 3;
        assert!(w.validate().is_err());
    }

    #[test]
    fn pad_matches_projection() {
        let mut w = empty_world();
        w.shadow.strength = 0.0;
        w.floor.pads.push(Pad {
            area: Rect::new(1.5, -0.5, 2.0, 0.2),
            color: [20, 200, 20],
        });
        let cam = CameraIntrinsics::default();
        let (f, _) = render(&w, &cam).unwrap();
        let hits: Vec<(usize, usize)> = (0..cam.height)
            .flat_map(|y| (0..cam.width).map(move |x| (x, y)))
            .filter(|&(x, y)| f.pixel(x, y) == [20, 200, 20])
            .collect();
        let pose = w.robot.pose;
        let corners: Vec<(f64, f64, f64)> = [(1.5, -0.5), (2.0, 0.2), (1.5, 0.2), (2.0, -0.5)]
            .iter()
            .map(|&(x, y)| project(&cam, &pose, Point3::new(x, y, 0.0)))
            .collect();
        let umin = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let umax = corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
        let vmin = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let vmax = corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        let xs = hits.iter().map(|p| p.0 as f64);
        let ys = hits.iter().map(|p| p.1 as f64);
        // extreme pixel centres covered vs the analytic extremes
        assert!((xs.clone().fold(f64::INFINITY, f64::min) - umin.ceil()).abs() <= 1.0);
        assert!((xs.fold(f64::NEG_INFINITY, f64::max) - umax.floor()).abs() <= 1.0);
        assert!((ys.clone().fold(f64::INFINITY, f64::min) - vmin.ceil()).abs() <= 1.0);
        assert!((ys.fold(f64::NEG_INFINITY, f64::max) - vmax.floor()).abs() <= 1.0);
    }

    #[test]
    fn render_is_deterministic() {
        let mut w = empty_world();
        w.floor.texture_amplitude = 8.0;
        w.obstacles.push(BoxObstacle {
            footprint: Rect::new(1.0, 0.2, 1.3, 0.6),
            height: 0.5,
            color: [30, 30, 160],
            velocity: Point2::default(),
        });
        let cam = CameraIntrinsics::default();
        assert_eq!(render(&w, &cam).unwrap(), render(&w, &cam).unwrap());
    }

    #[test]
    fn kinematics_examples() {
        let w = empty_world();
        let n = step(&w, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(n.robot.pose.x, 1.0);
        assert_eq!(n.robot.pose.y, 0.0);
        let r = step(&w, 0.0, std::f64::consts::PI, 1.0).unwrap();
        assert!((r.robot.pose.theta.abs() - std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(r.robot.pose.position(), w.robot.pose.position());
        let still = step(&w, 0.0, 0.0, 0.1).unwrap();
        assert_eq!(still.robot.pose, w.robot.pose);
        assert!(step(&w, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn collision_on_first_intersecting_step() {
        let mut w = empty_world();
        w.obstacles.push(BoxObstacle {
            footprint: Rect::new(1.0, -0.5, 1.5, 0.5),
            height: 0.5,
            color: [0, 0, 0],
            velocity: Point2::default(),
        });
        let mut k = 0;
        while !w.collision {
            w = step(&w, 0.5, 0.0, 0.1).unwrap();
            k += 1;
            assert!(k < 100);
        }
        // oracle: first step whose centre is within one radius of x = 1.0
        let expected = (1..100).find(|&s| 1.0 - 0.05 * s as f64 <= 0.18 + 1e-12).unwrap();
        assert_eq!(k, expected);
    }

    #[test]
    fn dynamic_obstacles_move_linearly() {
        let mut w = empty_world();
        w.obstacles.push(BoxObstacle {
            footprint: Rect::new(3.0, 1.0, 3.3, 1.3),
            height: 0.5,
            color: [0, 0, 0],
            velocity: Point2::new(0.0, -0.2),
        });
        let a = step(&w, 0.0, 0.0, 0.1).unwrap();
        let b = step(&a, 0.0, 0.0, 0.1).unwrap();
        let d1 = a.obstacles[0].footprint.min.sub(w.obstacles[0].footprint.min);
        let d2 = b.obstacles[0].footprint.min.sub(a.obstacles[0].footprint.min);
        assert!((d1.y + 0.02).abs() < 1e-12 && (d2.y - d1.y).abs() < 1e-12);
    }

    #[test]
    fn odometry_exact_without_noise() {
        let mut w = empty_world();
        for _ in 0..10 {
            w = step(&w, 0.4, 0.3, 0.1).unwrap();
        }
        assert_eq!(w.odometry, w.robot.pose);
        w.odometry_noise = 0.1;
        let n = step(&w, 0.4, 0.3, 0.1).unwrap();
        assert_ne!(n.odometry, n.robot.pose);
    }

    #[test]
    fn scene_json_roundtrip() {
        let scene = Scene {
            world: empty_world(),
            camera: CameraIntrinsics::scaled(100, 100),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.json");
        scene.save(&p).unwrap();
        assert_eq!(Scene::load(&p).unwrap(), scene);
    }

    #[test]
    fn rejects_bad_camera() {
        let mut cam = CameraIntrinsics::default();
        cam.mount.pitch = 0.3;
        assert!(render(&empty_world(), &cam).is_err());
        let mut cam = CameraIntrinsics::default();
        cam.fx = 0.0;
        assert!(cam.validate().is_err());
    }
}
