//! Success-rate sweeps over one world or camera parameter.

use crate::run::{run, Outcome};
use crate::worldgen::WorldGenConfig;
use crate::{HarnessError, Scenario, WorldSource};
use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;
use visnav_core::imgproc::write_ppm;
use visnav_core::planner;
use visnav_core::sim::render;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Probability of a coloured pad per floor tile.
    RoiVariance,
    /// Camera height and pitch: a preset name or `height@pitch_deg`.
    Pov,
    /// `WIDTHxHEIGHT`.
    ImageSize,
    ObstacleDensity,
}

impl std::str::FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "roi-variance" => Ok(Self::RoiVariance),
            "pov" => Ok(Self::Pov),
            "image-size" => Ok(Self::ImageSize),
            "obstacle-density" => Ok(Self::ObstacleDensity),
            _ => Err(HarnessError::Config(format!("unknown axis {s:?}"))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::RoiVariance => "roi-variance",
            Self::Pov => "pov",
            Self::ImageSize => "image-size",
            Self::ObstacleDensity => "obstacle-density",
        }
    }

    /// Apply one level to a world generator configuration.
    pub fn apply(self, cfg: &mut WorldGenConfig, level: &str) -> Result<(), HarnessError> {
        let bad = || HarnessError::Config(format!("bad {} level {level:?}", self.name()));
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        match self {
            Self::RoiVariance => cfg.pad_level = num(level)?,
            Self::ObstacleDensity => cfg.obstacle_density = num(level)?,
            Self::ImageSize => {
                let (w, h) = level.split_once(['x', 'X']).ok_or_else(bad)?;
                cfg.width = w.trim().parse().map_err(|_| bad())?;
                cfg.height = h.trim().parse().map_err(|_| bad())?;
            }
            Self::Pov => {
                let (h, p) = match level {
                    "robot-eye" => (0.35, -10.0),
                    "human-eye" => (1.6, -30.0),
                    "top-down" => (2.5, -60.0),
                    _ => {
                        let (h, p) = level.split_once('@').ok_or_else(bad)?;
                        (num(h)?, num(p)?)
                    }
                };
                cfg.cam_height = h;
                cfg.cam_pitch_deg = p;
            }
        }
        cfg.validate()
    }
}

pub const CSV_HEADER: [&str; 11] = [
    "axis",
    "level",
    "trials",
    "successes",
    "success_rate",
    "collisions",
    "plan_failures",
    "timeouts",
    "goal_lost",
    "mean_roi_variance_pct",
    "mean_plan_time_s",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub level: String,
    pub trials: usize,
    pub successes: usize,
    /// Percent.
    pub success_rate: f64,
    pub collisions: usize,
    pub plan_failures: usize,
    pub timeouts: usize,
    pub goal_lost: usize,
    /// Mean ROI variation as a percentage of its maximum (0.5).
    pub mean_roi_variance_pct: f64,
    pub mean_plan_time_s: f64,
}

/// ROI variation as a percentage of the largest value a two-level split can
/// reach.
pub fn variance_pct(px_var: f64) -> f64 {
    100.0 * px_var / 0.5
}

/// Scenario for one trial of one level: the template with the level
/// applied and the seed advanced by the trial index.
pub fn trial_scenario(template: &Scenario, axis: SweepAxis, level: &str, trial: usize) -> Result<Scenario, HarnessError> {
    let WorldSource::Generate(base) = &template.world else {
        return Err(HarnessError::Config("sweeps need a generated world".into()));
    };
    let mut cfg = base.clone();
    axis.apply(&mut cfg, level)?;
    let mut s = template.clone();
    s.world = WorldSource::Generate(cfg);
    s.seed = template.seed.wrapping_add(trial as u64);
    Ok(s)
}

/// Run `trials` seeded runs per level in parallel. A sample of each level's
/// first frame, with its global plan, is written to `dump_dir`.
pub fn sweep(
    template: &Scenario,
    axis: SweepAxis,
    levels: &[String],
    trials: usize,
    dump_dir: Option<&Path>,
) -> Result<Vec<SweepRow>, HarnessError> {
    if levels.is_empty() {
        return Err(HarnessError::Config("no sweep levels".into()));
    }
    if trials == 0 {
        return Err(HarnessError::Config("trials must be at least 1".into()));
    }
    let jobs: Vec<(usize, Scenario)> = levels
        .iter()
        .enumerate()
        .flat_map(|(li, l)| (0..trials).map(move |t| (li, l, t)))
        .map(|(li, l, t)| trial_scenario(template, axis, l, t).map(|s| (li, s)))
        .collect::<Result<_, _>>()?;
    let results = jobs
        .par_iter()
        .map(|(li, s)| run(s).map(|r| (*li, r)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    for (li, level) in levels.iter().enumerate() {
        let mine: Vec<_> = results.iter().filter(|(l, _)| *l == li).map(|(_, r)| r).collect();
        let count = |o: Outcome| mine.iter().filter(|r| r.outcome == o).count();
        let vars: Vec<f64> = mine.iter().flat_map(|r| r.px_var_trace.iter().copied()).collect();
        let times: Vec<f64> = mine.iter().flat_map(|r| r.plan_times.iter().copied()).collect();
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let successes = count(Outcome::GoalReached);
        rows.push(SweepRow {
            axis: axis.name().to_string(),
            level: level.clone(),
            trials,
            successes,
            success_rate: 100.0 * successes as f64 / trials as f64,
            collisions: count(Outcome::Collision),
            plan_failures: count(Outcome::PlanFailure),
            timeouts: count(Outcome::Timeout),
            goal_lost: count(Outcome::GoalLostFromView),
            mean_roi_variance_pct: variance_pct(mean(&vars)),
            mean_plan_time_s: mean(&times),
        });
        if let Some(dir) = dump_dir {
            dump_sample(template, axis, level, dir)?;
        }
    }
    Ok(rows)
}

fn dump_sample(template: &Scenario, axis: SweepAxis, level: &str, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let scene = trial_scenario(template, axis, level, 0)?.scene()?;
    let (frame, _) = render(&scene.world, &scene.camera)?;
    let name: String = level
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    write_ppm(
        &planner::annotate(&frame, &[], None, None),
        dir.join(format!("{}_{name}.ppm", axis.name())),
    )?;
    Ok(())
}

pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.axis.clone(),
            r.level.clone(),
            r.trials.to_string(),
            r.successes.to_string(),
            format!("{:.1}", r.success_rate),
            r.collisions.to_string(),
            r.plan_failures.to_string(),
            r.timeouts.to_string(),
            r.goal_lost.to_string(),
            format!("{:.2}", r.mean_roi_variance_pct),
            format!("{:.6}", r.mean_plan_time_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_levels() {
        let mut c = WorldGenConfig::default();
        SweepAxis::ImageSize.apply(&mut c, "100x100").unwrap();
        assert_eq!((c.width, c.height), (100, 100));
        SweepAxis::Pov.apply(&mut c, "top-down").unwrap();
        assert_eq!((c.cam_height, c.cam_pitch_deg), (2.5, -60.0));
        SweepAxis::Pov.apply(&mut c, "1.2@-20").unwrap();
        assert_eq!((c.cam_height, c.cam_pitch_deg), (1.2, -20.0));
        assert!(SweepAxis::RoiVariance.apply(&mut c, "x").is_err());
        assert!(SweepAxis::ImageSize.apply(&mut c, "100").is_err());
        assert!("depth".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn variance_percentage() {
        assert_eq!(variance_pct(0.5), 100.0);
        assert_eq!(variance_pct(0.15), 30.0);
    }
}
