//! Dataset export: `map_NNNN.ppm` next to `traj_NNNN.txt`, one "x y" pixel
//! coordinate pair per line.

use super::{AStarBackend, DiffusionError, GenerationRequest, Trajectory, TrajectoryGenerator};
use crate::geometry::Point2;
use crate::imgproc::{read_ppm, write_ppm, ImageFrame};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSample {
    pub map: ImageFrame,
    pub trajectory: Trajectory,
}

impl DatasetSample {
    /// A maze with its A* trajectory resampled to `ps` points.
    pub fn from_maze(maze: &super::Maze, ps: usize) -> Result<Self, DiffusionError> {
        let req = GenerationRequest {
            observation: &maze.map,
            start: maze.start.into(),
            goal: maze.goal.into(),
            ps,
            reference_intensity: 255.0,
            tau: crate::imgproc::DEFAULT_TAU,
        };
        let trajectory = AStarBackend::default().generate(&req, 0)?;
        Ok(Self {
            map: maze.map.clone(),
            trajectory,
        })
    }
}

pub fn save_dataset(samples: &[DatasetSample], dir: &Path) -> Result<(), DiffusionError> {
    std::fs::create_dir_all(dir)?;
    for (i, s) in samples.iter().enumerate() {
        write_ppm(&s.map, &dir.join(format!("map_{i:04}.ppm")))?;
        let mut text = String::new();
        for p in &s.trajectory.points {
            let _ = writeln!(text, "{} {}", p.x, p.y);
        }
        std::fs::write(dir.join(format!("traj_{i:04}.txt")), text)?;
    }
    Ok(())
}

fn parse_trajectory(text: &str, name: &str) -> Result<Trajectory, DiffusionError> {
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| DiffusionError::Dataset(format!("{name}:{}: {e}", n + 1)))?;
        match vals.as_slice() {
            [x, y] if x.is_finite() && y.is_finite() => points.push(Point2::new(*x, *y)),
            _ => return Err(DiffusionError::Dataset(format!("{name}:{}: expected \"x y\"", n + 1))),
        }
    }
    if points.len() < 2 {
        return Err(DiffusionError::Dataset(format!("{name}: fewer than two points")));
    }
    Ok(Trajectory::new(points))
}

/// Load every `map_*.ppm` with its matching trajectory file, sorted by name.
pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetSample>, DiffusionError> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.starts_with("map_") && n.ends_with(".ppm"))
        .collect();
    names.sort();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let id = &name["map_".len()..name.len() - ".ppm".len()];
        let traj_name = format!("traj_{id}.txt");
        let traj_path = dir.join(&traj_name);
        if !traj_path.exists() {
            return Err(DiffusionError::Dataset(format!("missing {traj_name}")));
        }
        let map = read_ppm(&dir.join(&name))?;
        let trajectory = parse_trajectory(&std::fs::read_to_string(traj_path)?, &traj_name)?;
        out.push(DatasetSample { map, trajectory });
    }
    if out.is_empty() {
        return Err(DiffusionError::Dataset(format!("no maps in {}", dir.display())));
    }
    Ok(out)
}
