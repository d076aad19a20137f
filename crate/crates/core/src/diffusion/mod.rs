//! Trajectory generation backends.
//!
//! The DDPM path ([`sample`]) denoises a fixed-length trajectory with a
//! [`NoisePredictor`], pinning the first and last point to the requested
//! start and goal after every step. Two predictors are provided: the exact
//! [`ReferenceDenoiser`] for a known target and the trainable
//! [`MlpDenoiser`]. [`AStarBackend`] produces the same kind of trajectory by
//! grid search over pixels of consistent intensity; it is the deterministic
//! stand-in for a pre-trained network.

mod astar;
mod checkpoint;
mod dataset;
mod maze;
mod mlp;
mod reference;
mod sampler;
mod schedule;

pub use astar::{grid_path, AStarBackend, GridCost, GridPath, IntensityGrid};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use dataset::{load_dataset, save_dataset, DatasetSample};
pub use maze::{generate_maze, Maze};
pub use mlp::{train_denoiser, MlpConfig, MlpDenoiser, TrainConfig, TrainReport, TrainingBatch};
pub use reference::ReferenceDenoiser;
pub use sampler::{
    forward_noise, predict_clean, sample, DdpmGenerator, DenoiserInput, GuidedReferenceGenerator,
    NoisePredictor,
};
pub use schedule::{make_schedule, NoiseSchedule};

use crate::geometry::Point2;
use crate::imgproc::{ImageFrame, ImgError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid noise schedule: {0}")]
    Schedule(String),
    #[error("denoising step {step} outside 1..={steps}")]
    Step { step: usize, steps: usize },
    #[error("trajectory length {got} does not match the expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("no path between start and goal")]
    NoPath,
    #[error("obstacle density {0} outside [0, 0.45]")]
    Density(f64),
    #[error("no solvable start/goal pair after {0} attempts")]
    Unsolvable(usize),
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error("invalid training input: {0}")]
    Training(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("bad dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Image(#[from] ImgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered trajectory points. Inside the DDPM loop the points live in the
/// normalised image square [-1, 1]²; backends hand pixel coordinates to the
/// planner.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub points: Vec<Point2>,
}

impl Trajectory {
    pub fn new(points: Vec<Point2>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Point2 {
        self.points[0]
    }

    pub fn last(&self) -> Point2 {
        *self.points.last().expect("trajectory is never empty")
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.is_finite())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn from_flat(v: &[f64]) -> Self {
        Self::new(v.chunks_exact(2).map(|c| Point2::new(c[0], c[1])).collect())
    }
}

/// Affine map between pixel coordinates and the normalised square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageSpace {
    pub width: usize,
    pub height: usize,
}

impl ImageSpace {
    pub fn of(frame: &ImageFrame) -> Self {
        Self {
            width: frame.width(),
            height: frame.height(),
        }
    }

    fn span(n: usize) -> f64 {
        (n.max(2) - 1) as f64
    }

    pub fn to_normalized(&self, p: Point2) -> Point2 {
        Point2::new(
            2.0 * p.x / Self::span(self.width) - 1.0,
            2.0 * p.y / Self::span(self.height) - 1.0,
        )
    }

    pub fn to_pixel(&self, p: Point2) -> Point2 {
        Point2::new(
            (p.x + 1.0) * 0.5 * Self::span(self.width),
            (p.y + 1.0) * 0.5 * Self::span(self.height),
        )
    }
}

/// Everything a backend needs to produce one trajectory.
#[derive(Clone, Copy, Debug)]
pub struct GenerationRequest<'a> {
    pub observation: &'a ImageFrame,
    /// Pixel coordinates.
    pub start: Point2,
    pub goal: Point2,
    /// Number of trajectory points.
    pub ps: usize,
    /// Channel-mean intensity regarded as traversable.
    pub reference_intensity: f64,
    pub tau: f64,
}

/// A trajectory backend used by the planner. Implementations are immutable
/// and may be shared between threads.
pub trait TrajectoryGenerator: Send + Sync {
    /// Produce `req.ps` pixel-space points from `req.start` to `req.goal`.
    fn generate(&self, req: &GenerationRequest<'_>, seed: u64) -> Result<Trajectory, DiffusionError>;

    /// Fixed trajectory length required by the backend, if any.
    fn fixed_length(&self) -> Option<usize> {
        None
    }
}

impl<T: TrajectoryGenerator + ?Sized> TrajectoryGenerator for Box<T> {
    fn generate(&self, req: &GenerationRequest<'_>, seed: u64) -> Result<Trajectory, DiffusionError> {
        (**self).generate(req, seed)
    }

    fn fixed_length(&self) -> Option<usize> {
        (**self).fixed_length()
    }
}
