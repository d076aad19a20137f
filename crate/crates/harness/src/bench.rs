//! Wall-clock timing of the per-frame planning step.

use crate::{HarnessError, Scenario, WorldSource};
use serde::Serialize;
use std::time::Instant;
use visnav_core::geometry::Point3;
use visnav_core::planner::{self, plan_frame, plan_global, PlannerState};
use visnav_core::servo::project_world;
use visnav_core::sim::render;

pub const MIN_FRAMES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    /// Seconds per `plan_frame` call.
    pub times: Vec<f64>,
    pub mean: f64,
    pub max: f64,
    /// Standard deviation over mean.
    pub cv: f64,
    /// Calls that returned a plan.
    pub planned: usize,
}

pub fn coefficient_of_variation(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if mean == 0.0 {
        0.0
    } else {
        var.sqrt() / mean
    }
}

/// Time `frames` planning passes over the scenario's first frame. Each pass
/// starts from the same tracked state with a different frame index, so
/// stochastic backends draw fresh noise every time.
pub fn bench_inference(scenario: &Scenario, frames: usize) -> Result<BenchReport, HarnessError> {
    if frames < MIN_FRAMES {
        return Err(HarnessError::Config(format!("bench needs at least {MIN_FRAMES} frames, got {frames}")));
    }
    scenario.validate()?;
    let scene = scenario.scene()?;
    let generator = scenario.generator()?;
    let (frame, _) = render(&scene.world, &scene.camera)?;
    let p_curr = planner::anchor(&frame);
    let goal = Point3::new(scene.world.goal.x, scene.world.goal.y, 0.0);
    let g = project_world(goal, &scene.world.odometry, &scene.camera)
        .map(|(p, _)| p)
        .filter(|&p| frame.contains(p))
        .ok_or_else(|| HarnessError::Config("goal is not in view of the first frame".into()))?;
    let waypoints = match plan_global(&frame, p_curr, g, generator.as_ref(), &scenario.planner) {
        Ok(t) => t.points,
        Err(_) => vec![p_curr, g],
    };
    let base = PlannerState::new(&frame, &waypoints, g);

    let mut times = Vec::with_capacity(frames);
    let mut planned = 0;
    for i in 0..frames {
        let mut state = base.clone();
        state.frame_index = i;
        let t0 = Instant::now();
        let r = plan_frame(&mut state, &frame, generator.as_ref(), &scenario.planner);
        times.push(t0.elapsed().as_secs_f64());
        planned += r.is_ok() as usize;
    }
    let mean = times.iter().sum::<f64>() / frames as f64;
    let max = times.iter().copied().fold(0.0, f64::max);
    Ok(BenchReport {
        cv: coefficient_of_variation(&times),
        times,
        mean,
        max,
        planned,
    })
}

/// One report per obstacle density, for a generated-world template.
pub fn bench_densities(
    template: &Scenario,
    densities: &[f64],
    frames: usize,
) -> Result<Vec<(f64, BenchReport)>, HarnessError> {
    let WorldSource::Generate(base) = &template.world else {
        return Err(HarnessError::Config("density benchmarks need a generated world".into()));
    };
    densities
        .iter()
        .map(|&d| {
            let mut s = template.clone();
            let mut cfg = base.clone();
            cfg.obstacle_density = d;
            s.world = WorldSource::Generate(cfg);
            bench_inference(&s, frames).map(|r| (d, r))
        })
        .collect()
}
