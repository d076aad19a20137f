//! Image-conditioned local path refinement for camera-guided ground robots.
//!
//! The crate is organised around the per-frame navigation pipeline:
//!
//! - [`imgproc`] – RGB frames, ROI extraction, intensity statistics and
//!   local goal pixel selection.
//! - [`flow`] – pyramidal Lucas–Kanade tracking of path waypoints between
//!   consecutive frames.
//! - [`diffusion`] – DDPM trajectory sampling with pluggable noise predictors,
//!   a trainable MLP denoiser, an A* trajectory backend and the maze dataset
//!   generator.
//! - [`planner`] – waypoint selection, path-step scheduling, trajectory
//!   validation and the per-frame planning loop with re-planning.
//! - [`sim`] – a synthetic world rendered through a pinhole camera, with
//!   unicycle robot kinematics and box obstacles.
//! - [`servo`] – deprojection of image plans into world paths and the
//!   pure-pursuit follower with goal-keeping twist correction.
//!
//! Everything is deterministic given explicit seeds.

pub mod diffusion;
pub mod flow;
pub mod geometry;
pub mod imgproc;
pub mod planner;
pub mod servo;
pub mod sim;

pub use geometry::{Pixel, Point2, Point3, Pose2};
pub use imgproc::ImageFrame;
