//! Euclidean auto-calibration of a camera network anchored by one stereo
//! pair with a known baseline.
//!
//! The network is M pinhole cameras observing the same N points: cameras 0
//! and 1 form a rectified stereo pair whose centre distance (the baseline) is
//! known in millimetres, cameras 2 and up are unconstrained monocular views.
//! From the 2D correspondences alone this crate recovers every focal length,
//! every monocular pose, and the 3D points at true metric scale; the baseline
//! is the only metric anchor, and the only calibration input beyond the
//! images.
//!
//! - [`model`]: camera, rig, and observation types.
//! - [`stereo`]: closed-form metric reconstruction from the pair.
//! - [`rotation`]: completing rotations from partially known entries.
//! - [`solver`]: the calibration pipeline and its diagnostics, plus an
//!   unconstrained bundle adjustment that shows what the baseline anchor
//!   buys.
//! - [`scene`]: synthetic scene generation for experiments.
//! - [`report`]: reprojection, scale, and parameter-error reports.
//! - [`io`]: CSV observations, JSON calibrations, and PLY clouds.

pub mod error;
pub mod io;
pub mod model;
pub mod report;
pub mod rotation;
pub mod scene;
pub mod solver;
pub mod stereo;

pub use error::{Error, Result};
pub use model::{feasibility, CameraModel, Feasibility, ImagePoint, ObservationSet, StereoRig, WorldPoint};
pub use solver::{calibrate, refine_unconstrained_ba, CalibrationResult, SolverConfig};
pub use stereo::{estimate_focal_ratio, reconstruct_cloud, FocalRatio};
