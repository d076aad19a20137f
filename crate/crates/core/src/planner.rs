//! Per-frame local planning.
//!
//! Each frame: pick an intermediate waypoint from the tracked global path,
//! look at the region between the robot anchor and that waypoint, choose a
//! local goal pixel of the dominant traversable intensity, size the
//! trajectory from distance and intensity variation, generate, validate and
//! retry with fresh seeds.

use crate::diffusion::{DiffusionError, GenerationRequest, Trajectory, TrajectoryGenerator};
use crate::flow::TrackedPoint;
use crate::geometry::{Pixel, Point2};
use crate::imgproc::{self, draw, extract_roi, roi_stats, select_goal_pixel, ImageFrame, ImgError, Roi};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("no live waypoints")]
    NoLiveWaypoints,
    #[error("no valid trajectory after {attempts} attempts")]
    PlanFailure { attempts: usize },
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Image(#[from] ImgError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

pub type Result<T> = std::result::Result<T, PlannerError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub alpha_ps: f64,
    pub tau: f64,
    pub max_replans: usize,
    /// Pixels; the local goal counts as reached inside this radius.
    pub goal_radius: f64,
    pub stale_limit: u32,
    pub margin: usize,
    /// Base seed for generator calls.
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            alpha_ps: 4.0,
            tau: imgproc::DEFAULT_TAU,
            max_replans: 3,
            goal_radius: 4.0,
            stale_limit: 5,
            margin: imgproc::DEFAULT_MARGIN,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_ps > 0.0 && self.alpha_ps.is_finite()) {
            return Err(PlannerError::Config(format!("alpha_ps {} must be positive", self.alpha_ps)));
        }
        if self.max_replans < 1 {
            return Err(PlannerError::Config("max_replans must be at least 1".into()));
        }
        if !(self.tau >= 0.0) {
            return Err(PlannerError::Config(format!("tau {} must be non-negative", self.tau)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PlannerState {
    pub global_waypoints: Vec<TrackedPoint>,
    pub goal_pixel: Point2,
    /// Dominant intensity of the last accepted plan.
    pub prior_intensity: Option<Vec<f64>>,
    pub current_position: Point2,
    pub frame_index: usize,
}

impl PlannerState {
    pub fn new(frame: &ImageFrame, waypoints: &[Point2], goal: Point2) -> Self {
        Self {
            global_waypoints: waypoints.iter().map(|&p| TrackedPoint::new(p)).collect(),
            goal_pixel: goal,
            prior_intensity: None,
            current_position: anchor(frame),
            frame_index: 0,
        }
    }
}

/// Image anchor of the robot: bottom-centre pixel.
pub fn anchor(frame: &ImageFrame) -> Point2 {
    Point2::new((frame.width() / 2) as f64, (frame.height() - 1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalPlan {
    pub goal: Pixel,
    pub trajectory: Trajectory,
    pub ps: usize,
    pub attempts: usize,
    pub roi: Roi,
    /// Intermediate waypoint the ROI was built around.
    pub waypoint: Point2,
    pub px_int: Vec<f64>,
    pub px_var: f64,
}

impl LocalPlan {
    pub fn reference_intensity(&self) -> f64 {
        imgproc::channel_mean(&self.px_int)
    }
}

/// Cosine between the directions from `p_curr` to `p_way` and to `goal`;
/// zero when either direction is degenerate.
pub fn direction_similarity(p_curr: Point2, p_way: Point2, goal: Point2) -> f64 {
    let a = p_way.sub(p_curr);
    let b = goal.sub(p_curr);
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.scale(1.0 / na).dot(b.scale(1.0 / nb))).clamp(-1.0, 1.0)
}

const REL_TOL: f64 = 1e-9;

fn nearly_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= REL_TOL * a.abs().max(b.abs())
}

/// Index into `waypoints` of the live waypoint at the median distance rank
/// (lower median for even counts) with the highest direction similarity.
/// Distances equal to the median within a relative 1e-9 all qualify; ties in
/// similarity go to the smaller index.
pub fn select_waypoint_index(p_curr: Point2, waypoints: &[TrackedPoint], goal: Point2) -> Result<usize> {
    let mut live: Vec<(f64, usize)> = waypoints
        .iter()
        .enumerate()
        .filter(|(_, w)| w.is_live())
        .map(|(i, w)| (p_curr.dist(w.pos), i))
        .collect();
    if live.is_empty() {
        return Err(PlannerError::NoLiveWaypoints);
    }
    live.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let median = live[(live.len() - 1) / 2].0;
    let mut best: Option<(f64, usize)> = None;
    for &(d, i) in &live {
        if !nearly_equal(d, median) {
            continue;
        }
        let s = direction_similarity(p_curr, waypoints[i].pos, goal);
        let better = match best {
            None => true,
            Some((bs, bi)) => s > bs && !nearly_equal(s, bs) || nearly_equal(s, bs) && i < bi,
        };
        if better {
            best = Some((s, i));
        }
    }
    Ok(best.expect("median candidate exists").1)
}

pub fn select_waypoint(state: &PlannerState) -> Result<Point2> {
    let i = select_waypoint_index(state.current_position, &state.global_waypoints, state.goal_pixel)?;
    Ok(state.global_waypoints[i].pos)
}

pub const MIN_PATH_STEPS: usize = 8;
pub const MAX_PATH_STEPS: usize = 256;

/// `px_d + alpha · e^(10 · px_var)` rounded up to a multiple of 4 and clamped
/// to [8, 256].
pub fn path_steps(px_d: f64, px_var: f64, cfg: &PlannerConfig) -> usize {
    let raw = px_d.max(0.0) + cfg.alpha_ps * (10.0 * px_var.clamp(0.0, 1.0)).exp();
    let up = (raw / 4.0).ceil() * 4.0;
    up.clamp(MIN_PATH_STEPS as f64, MAX_PATH_STEPS as f64) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Validity {
    Pass,
    /// Index of the first segment leaving the tolerance band.
    Fail(usize),
}

impl Validity {
    pub fn is_pass(self) -> bool {
        self == Validity::Pass
    }
}

/// Dense intensity check of the trajectory polyline against `px_int`.
pub fn validate_trajectory(traj: &Trajectory, frame: &ImageFrame, px_int: f64, tau: f64) -> Validity {
    if traj.points.iter().any(|&p| !frame.contains(p)) {
        let i = traj.points.iter().position(|&p| !frame.contains(p)).unwrap_or(0);
        return Validity::Fail(i.saturating_sub(1));
    }
    match imgproc::polyline_violation(frame, &traj.points, px_int, tau) {
        None => Validity::Pass,
        Some(i) => Validity::Fail(i),
    }
}

fn attempt_seed(cfg: &PlannerConfig, frame_index: usize, attempt: usize) -> u64 {
    cfg.seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((frame_index as u64) << 8)
        .wrapping_add(attempt as u64)
}

/// Generate-validate loop with up to `1 + max_replans` generator calls.
fn generate_valid(
    frame: &ImageFrame,
    start: Point2,
    goal: Point2,
    ps: usize,
    reference: f64,
    generator: &dyn TrajectoryGenerator,
    cfg: &PlannerConfig,
    frame_index: usize,
) -> Result<(Trajectory, usize)> {
    let budget = 1 + cfg.max_replans;
    for attempt in 1..=budget {
        let req = GenerationRequest {
            observation: frame,
            start,
            goal,
            ps,
            reference_intensity: reference,
            tau: cfg.tau,
        };
        match generator.generate(&req, attempt_seed(cfg, frame_index, attempt)) {
            Ok(t) => {
                if t.len() >= 2 && validate_trajectory(&t, frame, reference, cfg.tau).is_pass() {
                    return Ok((t, attempt));
                }
            }
            Err(DiffusionError::NoPath) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Err(PlannerError::PlanFailure { attempts: budget })
}

const ROI_WIDENINGS: usize = 3;

/// One pass of the per-frame pipeline. On success the prior intensity is
/// updated; the frame index advances either way.
pub fn plan_frame(
    state: &mut PlannerState,
    frame: &ImageFrame,
    generator: &dyn TrajectoryGenerator,
    cfg: &PlannerConfig,
) -> Result<LocalPlan> {
    cfg.validate()?;
    let frame_index = state.frame_index;
    state.frame_index += 1;
    let p_curr = state.current_position;
    let waypoint = match select_waypoint(state) {
        Ok(w) => w,
        Err(PlannerError::NoLiveWaypoints) => state.goal_pixel,
        Err(e) => return Err(e),
    };
    frame.check_inside(waypoint)?;

    let mut margin = cfg.margin;
    let mut found = None;
    for _ in 0..=ROI_WIDENINGS {
        let roi = extract_roi(frame, p_curr, waypoint, margin)?;
        let stats = roi_stats(frame, &roi, state.prior_intensity.as_deref(), cfg.tau)?;
        match select_goal_pixel(frame, &roi, &stats, waypoint, cfg.tau) {
            Ok(goal) => {
                found = Some((roi, stats, goal));
                break;
            }
            Err(ImgError::NoFeasiblePixel) => margin = margin.max(1) * 2,
            Err(e) => return Err(e.into()),
        }
    }
    let (roi, stats, goal) = found.ok_or(ImgError::NoFeasiblePixel)?;

    let goal_pt = Point2::from(goal);
    let ps = generator
        .fixed_length()
        .unwrap_or_else(|| path_steps(p_curr.dist(goal_pt), stats.px_var, cfg));
    let reference = stats.px_int_mean();
    let (trajectory, attempts) = generate_valid(frame, p_curr, goal_pt, ps, reference, generator, cfg, frame_index)?;
    state.prior_intensity = Some(stats.px_int.clone());
    Ok(LocalPlan {
        goal,
        trajectory,
        ps,
        attempts,
        roi,
        waypoint,
        px_int: stats.px_int,
        px_var: stats.px_var,
    })
}

/// One-shot plan over the whole first frame, validated against the dominant
/// intensity around the start pixel.
pub fn plan_global(
    frame: &ImageFrame,
    start: Point2,
    goal: Point2,
    generator: &dyn TrajectoryGenerator,
    cfg: &PlannerConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    frame.check_inside(start)?;
    frame.check_inside(goal)?;
    let roi = extract_roi(frame, start, start, cfg.margin)?;
    let stats = roi_stats(frame, &roi, None, cfg.tau)?;
    let reference = stats.px_int_mean();
    let ps = generator
        .fixed_length()
        .unwrap_or_else(|| path_steps(start.dist(goal), 0.0, cfg));
    let (t, _) = generate_valid(frame, start, goal, ps, reference, generator, cfg, usize::MAX >> 16)?;
    Ok(t)
}

/// Annotated copy of `frame`: global path red, local path green, ROI box
/// yellow, local goal as a cyan cross, tracked goal magenta.
pub fn annotate(frame: &ImageFrame, global: &[Point2], plan: Option<&LocalPlan>, goal: Option<Point2>) -> ImageFrame {
    let mut out = frame.to_rgb();
    draw::polyline(&mut out, global, [255, 0, 0]);
    if let Some(p) = plan {
        draw::rect(&mut out, p.roi.x, p.roi.y, p.roi.width, p.roi.height, [255, 255, 0]);
        draw::polyline(&mut out, &p.trajectory.points, [0, 255, 0]);
        draw::cross(&mut out, p.goal.into(), 3.0, [0, 255, 255]);
    }
    if let Some(g) = goal {
        draw::cross(&mut out, g, 4.0, [255, 0, 255]);
    }
    out
}

pub fn dump_debug(
    frame: &ImageFrame,
    global: &[Point2],
    plan: Option<&LocalPlan>,
    goal: Option<Point2>,
    path: &Path,
) -> std::result::Result<(), ImgError> {
    imgproc::write_ppm(&annotate(frame, global, plan, goal), path)
}
