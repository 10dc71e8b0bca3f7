//! The calibration solver.
//!
//! Pipeline, in the order [`calibrate`] runs it:
//!
//! 1. Feasibility check on the network size, focal-ratio estimate, and
//!    closed-form stereo reconstruction of the cloud (up to `f1`).
//! 2. Per monocular camera, a linear design system whose unknowns pack focal
//!    length, rotation entries, and translation into two 7-vectors sharing
//!    their last three components ([`design`]).
//! 3. A geometric grid over `f1`: each cell solves the linear systems,
//!    extracts physical camera parameters, and scores the combined objective;
//!    the best cell is refined once ([`calibrate`]).
//! 4. Damped Gauss-Newton refinement of true pixel reprojection residuals
//!    over `f1` and all monocular camera parameters, with rotations moved on
//!    their manifold ([`lm`]).
//! 5. Rotation-branch re-checks at convergence, and a final report.
//!
//! The combined objective is a per-camera weighted sum of unsquared design
//! residual norms: `sum_i lambda_i * |A_x,i a_i - b_x,i| + (1 - lambda_i) *
//! |A_y,i b_i - b_y,i|`. It scores grid cells and is the reported
//! [`CalibrationResult::objective_value`]. The refinement minimizes the same
//! weighted combination of reprojection residuals in pixels: each design
//! residual equals the corresponding pixel residual scaled by the point's
//! depth-to-`tz` ratio, a weighting that under noise rewards flattening the
//! depths instead of fitting the observations, so the final answer comes
//! from the unscaled pixel form. Refinement steps are computed from the
//! squared weighted system but accepted only when the unsquared value
//! decreases, so the refinement's trace is non-increasing across accepted
//! steps.
//!
//! [`refine_unconstrained_ba`] deliberately drops the baseline constraint and
//! re-optimizes pixel reprojection over all cameras and points; its drift
//! report quantifies how far the scale anchor erodes, which is the argument
//! for keeping the constraint in the first place.

mod ba;
mod calibrate;
mod design;
mod lm;

pub use ba::{refine_unconstrained_ba, BundleOutcome, DriftReport};
pub use calibrate::{calibrate, jacobian_deviation, objective};
pub use design::{
    build_design_system, extract_camera_parameters, pack_parameters, CombinedParameters,
    DesignSystem, MIN_TZ_MM, MIN_X1_PX,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CameraModel, WorldPoint};
use crate::stereo::{FocalRatio, RatioAggregation};

/// Per-camera x/y weighting of the combined objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LambdaWeights {
    /// One weight shared by every monocular camera.
    Global(f64),
    /// One weight per monocular camera, in camera order.
    PerCamera(Vec<f64>),
}

impl LambdaWeights {
    /// Expands to one weight per monocular camera, validating range and
    /// count.
    pub fn resolve(&self, monocular_cameras: usize) -> Result<Vec<f64>> {
        let check = |l: f64| -> Result<f64> {
            if !(0.0..=1.0).contains(&l) || !l.is_finite() {
                return Err(Error::InvalidParameters(format!(
                    "lambda {l} is outside [0, 1]"
                )));
            }
            Ok(l)
        };
        match self {
            LambdaWeights::Global(l) => Ok(vec![check(*l)?; monocular_cameras]),
            LambdaWeights::PerCamera(v) => {
                if v.len() != monocular_cameras {
                    return Err(Error::DimensionMismatch(format!(
                        "{} lambda weights for {} monocular cameras",
                        v.len(),
                        monocular_cameras
                    )));
                }
                v.iter().map(|l| check(*l)).collect()
            }
        }
    }
}

/// Search grid for the shared focal length `f1`.
///
/// When `lo_px`/`hi_px` are absent the range defaults to `[0.2, 5.0]` times
/// a proxy for the image diagonal (twice the largest observed pixel radius).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo_px: Option<f64>,
    pub hi_px: Option<f64>,
    /// Cells in the first geometric sweep.
    pub cells: usize,
    /// Cells in the refinement sweep around the best cell.
    pub refine_cells: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo_px: None,
            hi_px: None,
            cells: 64,
            refine_cells: 16,
        }
    }
}

/// Damping schedule of the Gauss-Newton loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DampingConfig {
    pub initial: f64,
    pub increase: f64,
    pub decrease: f64,
    pub max: f64,
}

impl Default for DampingConfig {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            increase: 4.0,
            decrease: 3.0,
            max: 1e32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: LambdaWeights,
    pub f1_grid: GridSpec,
    pub max_iterations: usize,
    /// Relative objective decrease below which an accepted step counts as
    /// converged; three consecutive such steps stop the refinement.
    pub rel_tolerance: f64,
    pub ratio_aggregation: RatioAggregation,
    /// |y1| cutoff for focal-ratio points.
    pub min_y1_px: f64,
    pub damping: DampingConfig,
    /// Recorded in diagnostics and reserved for stochastic restarts; the
    /// default pipeline is fully deterministic.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: LambdaWeights::Global(0.5),
            f1_grid: GridSpec::default(),
            max_iterations: 200,
            rel_tolerance: 1e-12,
            ratio_aggregation: RatioAggregation::Mean,
            min_y1_px: crate::stereo::MIN_Y1_PX,
            damping: DampingConfig::default(),
            seed: 0,
        }
    }
}

/// A solved monocular camera and the rotation branch it settled on.
#[derive(Clone, Debug)]
pub struct SolvedCamera {
    pub camera: CameraModel,
    /// Branch of the rotation-completion candidate set nearest the solved
    /// rotation; absent when the seed is gimbal-singular.
    pub branch_label: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub converged: bool,
    /// Total refinement iterations across branch re-check rounds.
    pub iterations: usize,
    pub final_damping: f64,
    /// Index of the winning cell in the first grid sweep.
    pub grid_index: usize,
    /// `f1` seed after grid refinement, before Gauss-Newton.
    pub grid_f1_px: f64,
    /// Branch re-check rounds that adopted a different rotation branch.
    pub branch_rounds: usize,
    /// Refinement objective (weighted unsquared pixel reprojection residual
    /// norms) after every accepted step, starting at the seed.
    pub objective_trace: Vec<f64>,
}

/// Everything [`calibrate`] recovers.
#[derive(Clone, Debug)]
pub struct CalibrationResult {
    /// Focal length of the first stereo camera, pixels.
    pub f1: f64,
    /// Stereo focal ratio `f2 / f1` and its per-point diagnostics.
    pub ratio: FocalRatio,
    /// Monocular cameras, in camera order (indices 2 and up).
    pub cameras: Vec<SolvedCamera>,
    /// Metric point cloud from the stereo closed forms at the solved `f1`.
    pub cloud: Vec<WorldPoint>,
    /// Combined design objective (unsquared norms) at the returned
    /// parameters.
    pub objective_value: f64,
    /// Per monocular camera and point: unweighted x and y design residuals,
    /// pixels.
    pub per_point_residuals: Vec<Vec<(f64, f64)>>,
    pub diagnostics: SolveDiagnostics,
}
