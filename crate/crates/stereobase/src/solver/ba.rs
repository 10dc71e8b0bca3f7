//! Unconstrained bundle adjustment, used to demonstrate scale drift.
//!
//! Starting from a calibrated network, this re-optimizes raw pixel
//! reprojection over every camera (the first camera's pose stays pinned as
//! the gauge, its focal length does not) and every point, with the baseline
//! constraint deliberately dropped. Nothing then anchors the metric scale:
//! under noise the optimum wanders off the calibrated baseline, and the
//! returned [`DriftReport`] measures by how much.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::lm::{self, LmProblem, LmSettings};
use super::{CalibrationResult, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{CameraModel, ObservationSet, StereoRig, WorldPoint, DEPTH_EPSILON_MM};
use crate::rotation::skew_basis;

/// How far the unconstrained optimum moved from the calibrated, baseline-
/// anchored solution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DriftReport {
    /// The baseline the calibration was anchored to, mm.
    pub baseline_mm: f64,
    /// Distance between the first two camera centres after unconstrained
    /// refinement, mm.
    pub recovered_baseline_mm: f64,
    /// `|recovered - anchored|`, mm.
    pub baseline_drift_mm: f64,
    /// Pixel reprojection RMS over all cameras and points, before and after.
    pub rms_before_px: f64,
    pub rms_after_px: f64,
    /// Axis-aligned cloud bounding-box extents, mm, before and after.
    pub box_before_mm: [f64; 3],
    pub box_after_mm: [f64; 3],
}

/// The unconstrained refinement result.
#[derive(Clone, Debug)]
pub struct BundleOutcome {
    /// All cameras, index 0 first; index 0 keeps the identity pose.
    pub cameras: Vec<CameraModel>,
    pub cloud: Vec<WorldPoint>,
    pub drift: DriftReport,
    pub iterations: usize,
    pub converged: bool,
}

struct BundleProblem<'a> {
    obs: &'a ObservationSet,
}

#[derive(Clone)]
struct BundleState {
    f0: f64,
    /// Cameras 1 and up, all parameters free.
    cams: Vec<CameraModel>,
    points: Vec<Vector3<f64>>,
}

impl BundleProblem<'_> {
    fn dim(&self, s: &BundleState) -> usize {
        1 + 7 * s.cams.len() + 3 * s.points.len()
    }
}

impl LmProblem for BundleProblem<'_> {
    type State = BundleState;

    fn residuals(&self, s: &BundleState) -> Option<DVector<f64>> {
        let n = self.obs.points();
        let mut r = DVector::zeros(2 * self.obs.cameras() * n);
        for (j, p) in s.points.iter().enumerate() {
            if p.z.abs() <= DEPTH_EPSILON_MM {
                return None;
            }
            let o = self.obs.get(0, j);
            r[2 * j] = s.f0 * p.x / p.z - o.x;
            r[2 * j + 1] = s.f0 * p.y / p.z - o.y;
        }
        for (i, cam) in s.cams.iter().enumerate() {
            let off = 2 * n * (i + 1);
            for (j, p) in s.points.iter().enumerate() {
                let q = cam.r * p + cam.t;
                if q.z.abs() <= DEPTH_EPSILON_MM {
                    return None;
                }
                let o = self.obs.get(i + 1, j);
                r[off + 2 * j] = cam.f * q.x / q.z - o.x;
                r[off + 2 * j + 1] = cam.f * q.y / q.z - o.y;
            }
        }
        Some(r)
    }

    fn jacobian(&self, s: &BundleState) -> DMatrix<f64> {
        let n = self.obs.points();
        let pbase = 1 + 7 * s.cams.len();
        let mut jac = DMatrix::zeros(2 * self.obs.cameras() * n, self.dim(s));
        let skew = skew_basis();

        for (j, p) in s.points.iter().enumerate() {
            let (u, v, w) = (p.x, p.y, p.z);
            let (rx, ry) = (2 * j, 2 * j + 1);
            jac[(rx, 0)] = u / w;
            jac[(ry, 0)] = v / w;
            let c = pbase + 3 * j;
            jac[(rx, c)] = s.f0 / w;
            jac[(rx, c + 2)] = -s.f0 * u / (w * w);
            jac[(ry, c + 1)] = s.f0 / w;
            jac[(ry, c + 2)] = -s.f0 * v / (w * w);
        }

        for (i, cam) in s.cams.iter().enumerate() {
            let base = 1 + 7 * i;
            let off = 2 * n * (i + 1);
            for (j, p) in s.points.iter().enumerate() {
                let q = cam.r * p + cam.t;
                let (u, v, w) = (q.x, q.y, q.z);
                let (rx, ry) = (off + 2 * j, off + 2 * j + 1);
                jac[(rx, base)] = u / w;
                jac[(ry, base)] = v / w;
                // Residual gradients with respect to the camera-frame point.
                let gx = Vector3::new(cam.f / w, 0.0, -cam.f * u / (w * w));
                let gy = Vector3::new(0.0, cam.f / w, -cam.f * v / (w * w));
                for a in 0..3 {
                    let dq = cam.r * skew[a] * p;
                    jac[(rx, base + 1 + a)] = gx.dot(&dq);
                    jac[(ry, base + 1 + a)] = gy.dot(&dq);
                }
                for b in 0..3 {
                    jac[(rx, base + 4 + b)] = gx[b];
                    jac[(ry, base + 4 + b)] = gy[b];
                }
                let gxp = cam.r.transpose() * gx;
                let gyp = cam.r.transpose() * gy;
                let c = pbase + 3 * j;
                for b in 0..3 {
                    jac[(rx, c + b)] = gxp[b];
                    jac[(ry, c + b)] = gyp[b];
                }
            }
        }
        jac
    }

    fn apply(&self, s: &BundleState, step: &DVector<f64>) -> Option<BundleState> {
        let f0 = s.f0 + step[0];
        if !(f0.is_finite() && f0 > 0.0) {
            return None;
        }
        let mut cams = Vec::with_capacity(s.cams.len());
        for (i, cam) in s.cams.iter().enumerate() {
            let b = 1 + 7 * i;
            let f = cam.f + step[b];
            if !(f.is_finite() && f > 0.0) {
                return None;
            }
            let omega = Vector3::new(step[b + 1], step[b + 2], step[b + 3]);
            cams.push(CameraModel {
                f,
                r: cam.r * Rotation3::new(omega).into_inner(),
                t: cam.t + Vector3::new(step[b + 4], step[b + 5], step[b + 6]),
            });
        }
        let pbase = 1 + 7 * s.cams.len();
        let points = s
            .points
            .iter()
            .enumerate()
            .map(|(j, p)| p + Vector3::new(step[pbase + 3 * j], step[pbase + 3 * j + 1], step[pbase + 3 * j + 2]))
            .collect();
        Some(BundleState { f0, cams, points })
    }
}

fn rms_px(residuals: &DVector<f64>, cameras: usize, points: usize) -> f64 {
    (residuals.norm_squared() / (cameras * points) as f64).sqrt()
}

fn box_extents(points: &[Vector3<f64>]) -> [f64; 3] {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]]
}

/// Re-optimizes pixel reprojection with the baseline constraint removed.
///
/// The first camera's pose stays pinned at the origin as the gauge; every
/// other camera, including the second of the stereo pair, moves freely, as
/// do all points and focal lengths.
pub fn refine_unconstrained_ba(
    result: &CalibrationResult,
    obs: &ObservationSet,
    rig: &StereoRig,
    config: &SolverConfig,
) -> Result<BundleOutcome> {
    if obs.cameras() != result.cameras.len() + 2 {
        return Err(Error::DimensionMismatch(format!(
            "calibration of {} monocular cameras for a {}-camera observation set",
            result.cameras.len(),
            obs.cameras()
        )));
    }
    if obs.points() != result.cloud.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} calibrated points for {} observed points",
            result.cloud.len(),
            obs.points()
        )));
    }
    let f2 = result.ratio.rho * result.f1;
    let mut cams = vec![rig.camera2(f2)];
    cams.extend(result.cameras.iter().map(|c| c.camera.clone()));
    let state0 = BundleState {
        f0: result.f1,
        cams,
        points: result.cloud.iter().map(WorldPoint::coords).collect(),
    };

    let problem = BundleProblem { obs };
    let before = problem.residuals(&state0).ok_or_else(|| {
        Error::InvalidParameters("calibrated state has points at zero depth".into())
    })?;
    let rms_before = rms_px(&before, obs.cameras(), obs.points());
    let box_before = box_extents(&state0.points);

    let settings = LmSettings {
        max_iterations: config.max_iterations,
        rel_tolerance: config.rel_tolerance,
        consecutive: 3,
        damping: config.damping.clone(),
    };
    let outcome = lm::minimize(&problem, state0, &settings)
        .expect("initial residuals already evaluated");

    let state = outcome.state;
    let after = problem
        .residuals(&state)
        .expect("accepted states stay inside the projection domain");
    let second = &state.cams[0];
    let recovered = (-(second.r.transpose() * second.t)).norm();
    let drift = DriftReport {
        baseline_mm: rig.baseline_mm,
        recovered_baseline_mm: recovered,
        baseline_drift_mm: (recovered - rig.baseline_mm).abs(),
        rms_before_px: rms_before,
        rms_after_px: rms_px(&after, obs.cameras(), obs.points()),
        box_before_mm: box_before,
        box_after_mm: box_extents(&state.points),
    };

    let mut cameras = vec![CameraModel {
        f: state.f0,
        r: Matrix3::identity(),
        t: Vector3::zeros(),
    }];
    cameras.extend(state.cams.iter().cloned());
    Ok(BundleOutcome {
        cameras,
        cloud: state
            .points
            .iter()
            .map(|p| WorldPoint::new(p.x, p.y, p.z))
            .collect(),
        drift,
        iterations: outcome.iterations,
        converged: outcome.converged,
    })
}
