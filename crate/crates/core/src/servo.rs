//! Image plans to metric paths, and a pure-pursuit follower with a yaw bias
//! that keeps the global goal inside the camera view.

use crate::geometry::{wrap_angle, Point2, Point3, Pose2};
use crate::planner::LocalPlan;
use crate::sim::{CameraIntrinsics, DepthMap};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServoError {
    #[error("invalid depth {0} at ({1}, {2})")]
    InvalidDepth(f64, f64, f64),
    #[error("pixel ({0}, {1}) outside the image")]
    OutOfFrame(f64, f64),
    #[error("plan rejected: {invalid} of {total} points without depth")]
    PlanRejected { invalid: usize, total: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ServoError>;

/// Fraction of points allowed to lack depth before a plan is rejected.
pub const MAX_INVALID_FRACTION: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct WorldPath {
    /// Odometry frame, meters.
    pub points: Vec<Point3>,
    pub source_frame: usize,
}

impl WorldPath {
    pub fn planar(&self) -> Vec<Point2> {
        self.points.iter().map(|p| p.xy()).collect()
    }
}

/// Camera-frame point for pixel (i, j) at optical-axis depth `depth`.
pub fn deproject(pixel: Point2, depth: f64, cam: &CameraIntrinsics) -> Result<Point3> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(ServoError::InvalidDepth(depth, pixel.x, pixel.y));
    }
    if !(pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x <= (cam.width - 1) as f64 && pixel.y <= (cam.height - 1) as f64) {
        return Err(ServoError::OutOfFrame(pixel.x, pixel.y));
    }
    Ok(Point3::new(
        depth * (pixel.x - cam.px) / cam.fx,
        depth * (pixel.y - cam.py) / cam.fy,
        depth,
    ))
}

/// Body-frame point for pixel (i, j) at depth `depth`.
pub fn deproject_body(pixel: Point2, depth: f64, cam: &CameraIntrinsics) -> Result<Point3> {
    Ok(cam.cam_to_body(deproject(pixel, depth, cam)?))
}

/// Pinhole projection of a camera-frame point: pixel and depth, `None`
/// behind the camera.
pub fn project(p: Point3, cam: &CameraIntrinsics) -> Option<(Point2, f64)> {
    (p.z > 0.0).then(|| (Point2::new(cam.fx * p.x / p.z + cam.px, cam.fy * p.y / p.z + cam.py), p.z))
}

/// Projection of an odometry-frame point seen from `pose`.
pub fn project_world(p: Point3, pose: &Pose2, cam: &CameraIntrinsics) -> Option<(Point2, f64)> {
    project(cam.body_to_cam(pose.to_body(p)), cam)
}

/// Depth at a sub-pixel position. Inverse depth is interpolated bilinearly
/// when the four neighbours agree within 5%, which is exact on planes;
/// otherwise the nearest pixel is used.
pub fn sample_depth(depth: &DepthMap, p: Point2) -> f64 {
    let x = p.x.clamp(0.0, (depth.width - 1) as f64);
    let y = p.y.clamp(0.0, (depth.height - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(depth.width - 1), (y0 + 1).min(depth.height - 1));
    let n = [depth.get(x0, y0), depth.get(x1, y0), depth.get(x0, y1), depth.get(x1, y1)];
    let finite = n.iter().all(|d| d.is_finite() && *d > 0.0);
    let lo = n.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = n.iter().cloned().fold(0.0, f64::max);
    if finite && hi <= lo * 1.05 {
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let inv = |d: f64| 1.0 / d;
        let top = inv(n[0]) * (1.0 - fx) + inv(n[1]) * fx;
        let bottom = inv(n[2]) * (1.0 - fx) + inv(n[3]) * fx;
        1.0 / (top * (1.0 - fy) + bottom * fy)
    } else {
        depth.get(x.round() as usize, y.round() as usize)
    }
}

/// Lift every plan point into the odometry frame of `pose`. Points without
/// valid depth are filled by linear interpolation along the index.
pub fn deproject_plan(
    plan: &LocalPlan,
    depth: &DepthMap,
    cam: &CameraIntrinsics,
    pose: &Pose2,
    frame_index: usize,
) -> Result<WorldPath> {
    deproject_points(&plan.trajectory.points, depth, cam, pose, frame_index)
}

pub fn deproject_points(
    pixels: &[Point2],
    depth: &DepthMap,
    cam: &CameraIntrinsics,
    pose: &Pose2,
    frame_index: usize,
) -> Result<WorldPath> {
    let lifted: Vec<Option<Point3>> = pixels
        .iter()
        .map(|&p| {
            deproject_body(p, sample_depth(depth, p), cam)
                .ok()
                .map(|b| pose.to_world(b))
        })
        .collect();
    let invalid = lifted.iter().filter(|p| p.is_none()).count();
    let total = lifted.len();
    if total < 2 || invalid as f64 > MAX_INVALID_FRACTION * total as f64 || invalid == total {
        return Err(ServoError::PlanRejected { invalid, total });
    }
    let valid: Vec<usize> = (0..total).filter(|&i| lifted[i].is_some()).collect();
    let points = (0..total)
        .map(|i| match lifted[i] {
            Some(p) => p,
            None => {
                let after = valid.partition_point(|&v| v < i);
                match (after.checked_sub(1).map(|k| valid[k]), valid.get(after)) {
                    (Some(a), Some(&b)) => {
                        let t = (i - a) as f64 / (b - a) as f64;
                        let (pa, pb) = (lifted[a].unwrap(), lifted[b].unwrap());
                        pa.add(pb.sub(pa).scale(t))
                    }
                    (Some(a), None) => lifted[a].unwrap(),
                    (None, Some(&b)) => lifted[b].unwrap(),
                    (None, None) => unreachable!("at least one valid point"),
                }
            }
        })
        .collect();
    Ok(WorldPath {
        points,
        source_frame: frame_index,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VelocityCommand {
    pub v: f64,
    pub w: f64,
    pub twist_correction: f64,
}

impl VelocityCommand {
    pub const ZERO: Self = Self {
        v: 0.0,
        w: 0.0,
        twist_correction: 0.0,
    };

    pub fn yaw_rate(&self) -> f64 {
        self.w + self.twist_correction
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default)]
pub struct FollowerConfig {
    pub lookahead: f64,
    pub cruise_speed: f64,
    pub max_speed: f64,
    pub max_yaw_rate: f64,
    pub twist_gain: f64,
    /// Half-angle of the central part of the view the goal should stay in.
    pub view_half_angle: f64,
}

impl Default for FollowerConfig {
    fn default() -> Self {
        Self::for_camera(&CameraIntrinsics::default())
    }
}

impl FollowerConfig {
    /// Defaults with the goal kept inside the central 80% of the image width.
    pub fn for_camera(cam: &CameraIntrinsics) -> Self {
        Self {
            lookahead: 0.4,
            cruise_speed: 0.4,
            max_speed: crate::sim::MAX_SPEED,
            max_yaw_rate: 1.5,
            twist_gain: 1.0,
            view_half_angle: (0.8 * (cam.width as f64 / 2.0) / cam.fx).atan(),
        }
    }
}

/// Closest point on the polyline: segment index and parameter.
fn closest_on(path: &[Point2], p: Point2) -> (usize, f64) {
    let mut best = (0, 0.0, f64::INFINITY);
    for (i, s) in path.windows(2).enumerate() {
        let d = s[1].sub(s[0]);
        let len2 = d.dot(d);
        let t = if len2 > 0.0 { (p.sub(s[0]).dot(d) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let dist = s[0].lerp(s[1], t).dist_sq(p);
        if dist < best.2 {
            best = (i, t, dist);
        }
    }
    (best.0, best.1)
}

/// Point `dist` meters of arc after the closest point, and the remaining arc
/// length from the closest point to the end.
fn lookahead_point(path: &[Point2], pos: Point2, dist: f64) -> (Point2, f64) {
    if path.len() == 1 {
        return (path[0], 0.0);
    }
    let (seg, t) = closest_on(path, pos);
    let mut cur = path[seg].lerp(path[seg + 1], t);
    let remaining: f64 = cur.dist(path[seg + 1]) + path[seg + 1..].windows(2).map(|w| w[0].dist(w[1])).sum::<f64>();
    let mut left = dist;
    for &next in &path[seg + 1..] {
        let l = cur.dist(next);
        if l >= left {
            return (cur.lerp(next, left / l), remaining);
        }
        left -= l;
        cur = next;
    }
    (*path.last().unwrap(), remaining)
}

const END_EPS: f64 = 1e-6;

/// Pure pursuit toward the path plus a yaw bias whenever the goal bearing
/// leaves the central view cone.
pub fn follow(path: &WorldPath, pose: &Pose2, goal: Option<Point2>, cfg: &FollowerConfig) -> VelocityCommand {
    let planar = path.planar();
    if planar.is_empty() {
        return VelocityCommand::ZERO;
    }
    let (target, remaining) = lookahead_point(&planar, pose.position(), cfg.lookahead);
    if remaining <= END_EPS {
        return VelocityCommand::ZERO;
    }
    let local = pose.to_body(Point3::new(target.x, target.y, 0.0));
    if local.x.hypot(local.y) <= END_EPS {
        return VelocityCommand::ZERO;
    }
    let err = local.y.atan2(local.x);
    let v = (cfg.cruise_speed * (1.0 - err.abs() / std::f64::consts::FRAC_PI_2).max(0.0)).clamp(-cfg.max_speed, cfg.max_speed);
    let w = (2.0 * cfg.cruise_speed * err.sin() / cfg.lookahead).clamp(-cfg.max_yaw_rate, cfg.max_yaw_rate);
    let twist = goal.map_or(0.0, |g| {
        let bearing = wrap_angle((g.y - pose.y).atan2(g.x - pose.x) - pose.theta);
        cfg.twist_gain * (bearing - bearing.clamp(-cfg.view_half_angle, cfg.view_half_angle))
    });
    let total = (w + twist).clamp(-cfg.max_yaw_rate, cfg.max_yaw_rate);
    VelocityCommand {
        v,
        w,
        twist_correction: total - w,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CommandRecord {
    pub time: f64,
    pub v: f64,
    pub w: f64,
    pub twist_correction: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

pub fn write_command_log(records: &[CommandRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
