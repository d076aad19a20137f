//! The closed loop: render, track, plan, lift to odometry coordinates,
//! follow, step.

use crate::{HarnessError, Scenario};
use serde::Serialize;
use std::path::PathBuf;
use std::time::Instant;
use visnav_core::diffusion::TrajectoryGenerator;
use visnav_core::flow::{build_pyramid, track_points, update_waypoints, FlowConfig, ImagePyramid, TrackedPoint};
use visnav_core::geometry::{Point2, Point3, Pose2};
use visnav_core::imgproc::{extract_roi, roi_stats, write_ppm, ImageFrame};
use visnav_core::planner::{
    self, plan_frame, plan_global, validate_trajectory, LocalPlan, PlannerConfig, PlannerState,
};
use visnav_core::servo::{
    deproject_body, deproject_plan, deproject_points, follow, project_world, sample_depth, write_command_log, CommandRecord,
    FollowerConfig, WorldPath,
};
use visnav_core::sim::{render, step, CameraIntrinsics, DepthMap, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    GoalReached,
    Collision,
    PlanFailure,
    Timeout,
    GoalLostFromView,
}

impl Outcome {
    pub const ALL: [Outcome; 5] = [
        Outcome::GoalReached,
        Outcome::Collision,
        Outcome::PlanFailure,
        Outcome::Timeout,
        Outcome::GoalLostFromView,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::GoalReached => "goal-reached",
            Outcome::Collision => "collision",
            Outcome::PlanFailure => "plan-failure",
            Outcome::Timeout => "timeout",
            Outcome::GoalLostFromView => "goal-lost-from-view",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RunEvent {
    /// The local goal was moved off the selected waypoint onto free floor.
    WaypointCorrection { frame: usize, waypoint: Point2, goal: Point2 },
    /// Flow lost the goal; its odometry projection was used instead.
    GoalReprojected { frame: usize },
    PlanFailed { frame: usize, reason: String },
    /// The goal left the bottom of the view and is approached blind.
    FinalApproach { frame: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub outcome: Outcome,
    pub steps: usize,
    /// Extra generation attempts over all frames.
    pub replans: usize,
    /// Seconds per `plan_frame` call.
    pub mean_plan_time: f64,
    /// True pose after each step, starting with the initial pose.
    pub trace: Vec<Pose2>,
    /// ROI variation of every planning frame, failed ones included.
    pub px_var_trace: Vec<f64>,
    pub events: Vec<RunEvent>,
    pub commands: Vec<CommandRecord>,
    /// Local plans produced; each one is re-validated after the fact.
    pub plans: usize,
    pub invalid_plans: usize,
    #[serde(skip)]
    pub plan_times: Vec<f64>,
}

impl RunResult {
    pub fn waypoint_corrections(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, RunEvent::WaypointCorrection { .. }))
            .count()
    }

    /// Trace, outcome and events as JSON; timing is left out so that equal
    /// seeds give equal bytes.
    pub fn trace_json(&self) -> String {
        serde_json::json!({
            "outcome": self.outcome,
            "steps": self.steps,
            "replans": self.replans,
            "trace": self.trace,
            "px_var_trace": self.px_var_trace,
            "events": self.events,
            "commands": self.commands,
        })
        .to_string()
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Annotated frames, depth maps and the command log go here.
    pub dump_frames: Option<PathBuf>,
}

/// Pyramid depth for a given image width: one level per octave above or
/// below the default width.
pub fn pyramid_levels(cam: &CameraIntrinsics) -> usize {
    let octaves = (cam.width as f64 / visnav_core::sim::DEFAULT_WIDTH as f64).log2().round() as i64;
    (3 + octaves).clamp(2, 5) as usize
}

pub fn run(scenario: &Scenario) -> Result<RunResult, HarnessError> {
    run_with_options(scenario, &RunOptions::default())
}

struct Loop<'a> {
    cfg: PlannerConfig,
    follower: FollowerConfig,
    flow: FlowConfig,
    generator: &'a dyn TrajectoryGenerator,
    opts: &'a RunOptions,
    world: WorldState,
    result: RunResult,
    global: Vec<Point2>,
}

impl Loop<'_> {
    fn dump(&self, frame_index: usize, frame: &ImageFrame, depth: &DepthMap, plan: Option<&LocalPlan>, goal: Point2) -> Result<(), HarnessError> {
        if let Some(dir) = &self.opts.dump_frames {
            std::fs::create_dir_all(dir)?;
            write_ppm(
                &planner::annotate(frame, &self.global, plan, Some(goal)),
                dir.join(format!("frame_{frame_index:04}.ppm")),
            )?;
            depth.write(&dir.join(format!("depth_{frame_index:04}.f32")))?;
        }
        Ok(())
    }

    fn finish(mut self, outcome: Outcome, steps: usize) -> Result<RunResult, HarnessError> {
        self.result.outcome = outcome;
        self.result.steps = steps;
        let t = &self.result.plan_times;
        self.result.mean_plan_time = if t.is_empty() { 0.0 } else { t.iter().sum::<f64>() / t.len() as f64 };
        if let Some(dir) = &self.opts.dump_frames {
            std::fs::create_dir_all(dir)?;
            write_command_log(&self.result.commands, &dir.join("commands.csv"))
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(self.result)
    }
}

fn inside(p: Point2, cam: &CameraIntrinsics) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x <= (cam.width - 1) as f64 && p.y <= (cam.height - 1) as f64
}

/// Check flow-tracked waypoints against the odometry reprojection of their
/// floor points from the first frame. Waypoints that left the view are
/// dropped; estimates that disagree with odometry are replaced by it.
fn gate_waypoints(
    tracked: &[TrackedPoint],
    anchors: &[Option<Point3>],
    odom: &Pose2,
    cam: &CameraIntrinsics,
    gate: f64,
) -> Vec<TrackedPoint> {
    tracked
        .iter()
        .zip(anchors)
        .map(|(t, a)| {
            let Some(a) = a else { return *t };
            if t.dropped {
                return *t;
            }
            match project_world(*a, odom, cam) {
                Some((p, _)) if inside(p, cam) => {
                    if t.stale == 0 && t.pos.dist(p) <= gate {
                        *t
                    } else {
                        TrackedPoint::new(p)
                    }
                }
                _ => TrackedPoint {
                    dropped: true,
                    ..*t
                },
            }
        })
        .collect()
}

/// Variation of the first ROI a failed frame looked at.
fn roi_variation(state: &PlannerState, frame: &ImageFrame, cfg: &PlannerConfig) -> Option<f64> {
    let waypoint = planner::select_waypoint(state).unwrap_or(state.goal_pixel);
    let roi = extract_roi(frame, state.current_position, waypoint, cfg.margin).ok()?;
    roi_stats(frame, &roi, state.prior_intensity.as_deref(), cfg.tau).ok().map(|s| s.px_var)
}

/// Remaining distance below which the goal is approached without vision.
const FINAL_APPROACH: f64 = 0.8;

/// Flow estimates further than this from the odometry prediction (pixels
/// at the default width) are discarded.
const GOAL_TRACK_GATE: f64 = 12.0;

pub fn run_with_options(scenario: &Scenario, opts: &RunOptions) -> Result<RunResult, HarnessError> {
    scenario.validate()?;
    let scene = scenario.scene()?;
    let generator = scenario.generator()?;
    let cam = scene.camera;
    let mut world = scene.world;
    world.goal_radius = scenario.success_radius;
    let levels = pyramid_levels(&cam);
    let mut lp = Loop {
        cfg: scenario.planner.clone(),
        follower: scenario.follower.clone().unwrap_or_else(|| FollowerConfig::for_camera(&cam)),
        flow: FlowConfig {
            levels,
            ..FlowConfig::default()
        },
        generator: generator.as_ref(),
        opts,
        world: world.clone(),
        result: RunResult {
            outcome: Outcome::Timeout,
            steps: 0,
            replans: 0,
            mean_plan_time: 0.0,
            trace: vec![world.robot.pose],
            px_var_trace: Vec::new(),
            events: Vec::new(),
            commands: Vec::new(),
            plans: 0,
            invalid_plans: 0,
            plan_times: Vec::new(),
        },
        global: Vec::new(),
    };

    // Stationary global plan on the first frame.
    let (frame0, depth0) = render(&lp.world, &cam)?;
    let p_curr = planner::anchor(&frame0);
    let goal_world = Point3::new(world.goal.x, world.goal.y, 0.0);
    let g0 = match project_world(goal_world, &world.odometry, &cam) {
        Some((p, _)) if inside(p, &cam) => p,
        _ => return lp.finish(Outcome::GoalLostFromView, 0),
    };
    let global = match plan_global(&frame0, p_curr, g0, lp.generator, &lp.cfg) {
        Ok(t) => t,
        Err(e) => {
            lp.result.events.push(RunEvent::PlanFailed {
                frame: 0,
                reason: e.to_string(),
            });
            lp.dump(0, &frame0, &depth0, None, g0)?;
            return lp.finish(Outcome::PlanFailure, 0);
        }
    };
    lp.global = global.points.clone();
    lp.dump(0, &frame0, &depth0, None, g0)?;
    let goal_odom = match deproject_body(g0, sample_depth(&depth0, g0), &cam) {
        Ok(b) => world.odometry.to_world(b).xy(),
        Err(_) => return lp.finish(Outcome::GoalLostFromView, 0),
    };
    let goal_odom3 = Point3::new(goal_odom.x, goal_odom.y, 0.0);
    let (mut path, anchors) = match deproject_points(&global.points, &depth0, &cam, &world.odometry, 0) {
        Ok(p) => {
            let anchors = p.points.iter().copied().map(Some).collect();
            (p, anchors)
        }
        Err(_) => (
            WorldPath {
                points: vec![Point3::new(world.odometry.x, world.odometry.y, 0.0), goal_odom3],
                source_frame: 0,
            },
            vec![None; global.points.len()],
        ),
    };

    let mut state = PlannerState::new(&frame0, &global.points, g0);
    let mut prev: ImagePyramid = build_pyramid(&frame0, levels)?;
    let mut final_approach = false;
    let mut failures = 0;
    let mut frame_index = 0;
    let gate = GOAL_TRACK_GATE * cam.width as f64 / visnav_core::sim::DEFAULT_WIDTH as f64;

    for k in 0..scenario.max_steps {
        if k > 0 && k % scenario.plan_every == 0 && !final_approach {
            frame_index += 1;
            let odom = lp.world.odometry;
            let predicted = project_world(goal_odom3, &odom, &cam);
            let near = odom.position().dist(goal_odom) < FINAL_APPROACH;
            let below = predicted.map_or(true, |(p, _)| p.y > (cam.height - 1) as f64 - lp.cfg.goal_radius);
            if near || below {
                final_approach = true;
                lp.result.events.push(RunEvent::FinalApproach { frame: frame_index });
                path = WorldPath {
                    points: vec![Point3::new(odom.x, odom.y, 0.0), goal_odom3],
                    source_frame: frame_index,
                };
            } else {
                let (frame, depth) = render(&lp.world, &cam)?;
                let next = build_pyramid(&frame, levels)?;
                let mut points: Vec<Point2> = state.global_waypoints.iter().map(|w| w.pos).collect();
                points.push(state.goal_pixel);
                let flows = track_points(&prev, &next, &points, &lp.flow)?;
                let n = state.global_waypoints.len();
                let tracked = update_waypoints(&flows[..n], &state.global_waypoints, lp.cfg.stale_limit);
                state.global_waypoints = gate_waypoints(&tracked, &anchors, &odom, &cam, gate);
                let predicted = predicted.expect("goal in front").0;
                let g = flows[n];
                let tracked = Point2::new(state.goal_pixel.x + g.u, state.goal_pixel.y + g.v);
                state.goal_pixel = if g.valid && tracked.dist(predicted) <= gate {
                    tracked
                } else {
                    lp.result.events.push(RunEvent::GoalReprojected { frame: frame_index });
                    predicted
                };
                if !inside(state.goal_pixel, &cam) {
                    return lp.finish(Outcome::GoalLostFromView, k);
                }
                prev = next;

                let t0 = Instant::now();
                let planned = plan_frame(&mut state, &frame, lp.generator, &lp.cfg);
                lp.result.plan_times.push(t0.elapsed().as_secs_f64());
                match planned {
                    Ok(plan) => {
                        failures = 0;
                        lp.result.plans += 1;
                        lp.result.replans += plan.attempts - 1;
                        lp.result.px_var_trace.push(plan.px_var);
                        if !validate_trajectory(&plan.trajectory, &frame, plan.reference_intensity(), lp.cfg.tau).is_pass() {
                            lp.result.invalid_plans += 1;
                        }
                        let goal = Point2::from(plan.goal);
                        if goal.dist(plan.waypoint) > 1.0 {
                            lp.result.events.push(RunEvent::WaypointCorrection {
                                frame: frame_index,
                                waypoint: plan.waypoint,
                                goal,
                            });
                        }
                        match deproject_plan(&plan, &depth, &cam, &odom, frame_index) {
                            Ok(p) => path = p,
                            Err(e) => lp.result.events.push(RunEvent::PlanFailed {
                                frame: frame_index,
                                reason: e.to_string(),
                            }),
                        }
                        lp.dump(frame_index, &frame, &depth, Some(&plan), state.goal_pixel)?;
                    }
                    Err(e) => {
                        failures += 1;
                        if let Some(v) = roi_variation(&state, &frame, &lp.cfg) {
                            lp.result.px_var_trace.push(v);
                        }
                        lp.result.events.push(RunEvent::PlanFailed {
                            frame: frame_index,
                            reason: e.to_string(),
                        });
                        lp.dump(frame_index, &frame, &depth, None, state.goal_pixel)?;
                        if failures > scenario.max_plan_failures {
                            return lp.finish(Outcome::PlanFailure, k);
                        }
                    }
                }
            }
        }

        let odom = lp.world.odometry;
        let cmd = follow(&path, &odom, Some(goal_odom), &lp.follower);
        lp.world = step(&lp.world, cmd.v, cmd.yaw_rate(), scenario.dt)?;
        lp.result.commands.push(CommandRecord {
            time: k as f64 * scenario.dt,
            v: cmd.v,
            w: cmd.w,
            twist_correction: cmd.twist_correction,
            x: odom.x,
            y: odom.y,
            theta: odom.theta,
        });
        lp.result.trace.push(lp.world.robot.pose);
        if lp.world.collision {
            return lp.finish(Outcome::Collision, k + 1);
        }
        if lp.world.goal_reached {
            return lp.finish(Outcome::GoalReached, k + 1);
        }
    }
    lp.finish(Outcome::Timeout, scenario.max_steps)
}
