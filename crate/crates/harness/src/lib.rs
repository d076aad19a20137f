//! Closed-loop simulation driver, random world generation, experiment sweeps
//! and inference benchmarks on top of `visnav-core`.

pub mod bench;
pub mod run;
pub mod scenario;
pub mod sweep;
pub mod worldgen;

pub use bench::{bench_densities, bench_inference, BenchReport};
pub use run::{run, run_with_options, Outcome, RunEvent, RunOptions, RunResult};
pub use scenario::{BackendKind, Scenario, WorldSource};
pub use sweep::{sweep, SweepAxis, SweepRow};
pub use worldgen::{generate_scene, WorldGenConfig};

use thiserror::Error;
use visnav_core::diffusion::DiffusionError;
use visnav_core::flow::FlowError;
use visnav_core::imgproc::ImgError;
use visnav_core::sim::SimError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Image(#[from] ImgError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
