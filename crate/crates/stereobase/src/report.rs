//! Quantitative assessment of a calibration: reprojection errors, cloud
//! scale, and parameter errors against ground truth.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ObservationSet, StereoRig, WorldPoint};
use crate::scene::GroundTruth;
use crate::solver::CalibrationResult;

/// Per-camera reprojection aggregates. Points behind the camera are excluded
/// and counted.
#[derive(Clone, Debug, Serialize)]
pub struct CameraErrorSummary {
    /// 0-based camera index.
    pub camera: usize,
    pub rms_px: f64,
    pub mean_px: f64,
    pub max_px: f64,
    pub behind_points: usize,
}

/// Euclidean pixel reprojection errors of every camera against the observed
/// correspondences.
#[derive(Clone, Debug, Serialize)]
pub struct ReprojectionReport {
    /// `errors[camera][point]`, pixels; `NaN` where the point is behind the
    /// camera (see `behind`).
    pub errors: Vec<Vec<f64>>,
    pub behind: Vec<Vec<bool>>,
    pub per_camera: Vec<CameraErrorSummary>,
    /// Pooled RMS over both stereo cameras.
    pub stereo_rms_px: f64,
    /// Largest per-camera RMS among the monocular cameras.
    pub worst_monocular_rms_px: f64,
    pub overall_rms_px: f64,
}

/// The compact part of a [`ReprojectionReport`], for summary files.
#[derive(Clone, Debug, Serialize)]
pub struct ReprojectionSummary {
    pub per_camera: Vec<CameraErrorSummary>,
    pub stereo_rms_px: f64,
    pub worst_monocular_rms_px: f64,
    pub overall_rms_px: f64,
}

impl ReprojectionReport {
    pub fn summary(&self) -> ReprojectionSummary {
        ReprojectionSummary {
            per_camera: self.per_camera.clone(),
            stereo_rms_px: self.stereo_rms_px,
            worst_monocular_rms_px: self.worst_monocular_rms_px,
            overall_rms_px: self.overall_rms_px,
        }
    }
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        sum += v * v;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// Reprojects the calibrated cloud through every camera — the stereo pair at
/// its fixed poses with focal lengths `f1` and `rho * f1`, then the solved
/// monocular cameras — and compares against the observations.
pub fn reprojection_errors(
    result: &CalibrationResult,
    rig: &StereoRig,
    obs: &ObservationSet,
) -> Result<ReprojectionReport> {
    if result.cameras.len() + 2 != obs.cameras() {
        return Err(Error::DimensionMismatch(format!(
            "calibration of {} monocular cameras for a {}-camera observation set",
            result.cameras.len(),
            obs.cameras()
        )));
    }
    if result.cloud.len() != obs.points() {
        return Err(Error::DimensionMismatch(format!(
            "calibrated cloud of {} points for {} observed points",
            result.cloud.len(),
            obs.points()
        )));
    }
    let mut cameras = vec![
        rig.camera1(result.f1),
        rig.camera2(result.ratio.rho * result.f1),
    ];
    cameras.extend(result.cameras.iter().map(|c| c.camera.clone()));

    let mut errors = Vec::with_capacity(cameras.len());
    let mut behind = Vec::with_capacity(cameras.len());
    let mut per_camera = Vec::with_capacity(cameras.len());
    for (c, camera) in cameras.iter().enumerate() {
        let mut cam_errors = Vec::with_capacity(obs.points());
        let mut cam_behind = Vec::with_capacity(obs.points());
        for (j, p) in result.cloud.iter().enumerate() {
            match camera.project(p) {
                Ok(proj) if proj.depth > 0.0 => {
                    let o = obs.get(c, j);
                    cam_errors.push((proj.point.x - o.x).hypot(proj.point.y - o.y));
                    cam_behind.push(false);
                }
                _ => {
                    cam_errors.push(f64::NAN);
                    cam_behind.push(true);
                }
            }
        }
        let valid = || {
            cam_errors
                .iter()
                .zip(&cam_behind)
                .filter(|(_, b)| !**b)
                .map(|(e, _)| *e)
        };
        per_camera.push(CameraErrorSummary {
            camera: c,
            rms_px: rms(valid()),
            mean_px: {
                let (sum, count) = valid().fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
                if count == 0 { 0.0 } else { sum / count as f64 }
            },
            max_px: valid().fold(0.0, f64::max),
            behind_points: cam_behind.iter().filter(|b| **b).count(),
        });
        errors.push(cam_errors);
        behind.push(cam_behind);
    }

    let pooled = |range: std::ops::Range<usize>| {
        rms(range
            .flat_map(|c| errors[c].iter().zip(&behind[c]))
            .filter(|(_, b)| !**b)
            .map(|(e, _)| *e))
    };
    let stereo_rms_px = pooled(0..2);
    let overall_rms_px = pooled(0..cameras.len());
    let worst_monocular_rms_px = per_camera[2..]
        .iter()
        .map(|s| s.rms_px)
        .fold(0.0, f64::max);

    Ok(ReprojectionReport {
        errors,
        behind,
        per_camera,
        stereo_rms_px,
        worst_monocular_rms_px,
        overall_rms_px,
    })
}

/// Axis-aligned cloud extents and, when a reference box is given, the scale
/// error against it.
#[derive(Clone, Debug, Serialize)]
pub struct ScaleReport {
    /// X, Y, Z extents of the cloud's bounding box, mm.
    pub box_mm: [f64; 3],
    pub reference_box_mm: Option<[f64; 3]>,
    /// Per-axis `box / reference`.
    pub axis_ratios: Option<[f64; 3]>,
    /// Geometric mean of the axis ratios, minus one; 0 means true scale.
    pub scale_error: Option<f64>,
    /// Distance between the first two camera centres, when the caller has
    /// one to report.
    pub recovered_baseline_mm: Option<f64>,
}

pub fn scale_report(
    cloud: &[WorldPoint],
    reference_box_mm: Option<[f64; 3]>,
    recovered_baseline_mm: Option<f64>,
) -> Result<ScaleReport> {
    if cloud.is_empty() {
        return Err(Error::InvalidParameters(
            "scale report needs a non-empty cloud".into(),
        ));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in cloud {
        for (a, v) in [p.x, p.y, p.z].into_iter().enumerate() {
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    let box_mm = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let axis_ratios = reference_box_mm
        .map(|r| [box_mm[0] / r[0], box_mm[1] / r[1], box_mm[2] / r[2]]);
    let scale_error = axis_ratios.map(|r| (r[0] * r[1] * r[2]).cbrt() - 1.0);
    Ok(ScaleReport {
        box_mm,
        reference_box_mm,
        axis_ratios,
        scale_error,
        recovered_baseline_mm,
    })
}

/// Angle of the relative rotation between two rotation matrices, degrees.
pub fn rotation_geodesic_deg(a: &nalgebra::Matrix3<f64>, b: &nalgebra::Matrix3<f64>) -> f64 {
    let m = a * b.transpose();
    (((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos().to_degrees()
}

#[derive(Clone, Debug, Serialize)]
pub struct CameraParameterError {
    /// 0-based camera index (2 and up: monocular).
    pub camera: usize,
    /// Relative focal-length error.
    pub f_rel: f64,
    /// Geodesic rotation error, degrees.
    pub rotation_deg: f64,
    /// Translation error norm, mm.
    pub translation_mm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ParameterErrorReport {
    pub f1_rel: f64,
    /// Relative error of `rho * f1` against the true second focal length.
    pub f2_rel: f64,
    pub cameras: Vec<CameraParameterError>,
    pub cloud_rms_mm: f64,
    pub cloud_max_mm: f64,
    /// Cloud RMS error relative to the RMS point magnitude.
    pub cloud_rel_rms: f64,
}

pub fn parameter_errors(
    result: &CalibrationResult,
    truth: &GroundTruth,
) -> Result<ParameterErrorReport> {
    if truth.cameras.len() != result.cameras.len() + 2 {
        return Err(Error::DimensionMismatch(format!(
            "calibration of {} monocular cameras against truth with {} cameras",
            result.cameras.len(),
            truth.cameras.len()
        )));
    }
    if truth.points.len() != result.cloud.len() {
        return Err(Error::DimensionMismatch(format!(
            "calibrated cloud of {} points against truth with {} points",
            result.cloud.len(),
            truth.points.len()
        )));
    }
    let cameras = result
        .cameras
        .iter()
        .zip(truth.monocular_cameras())
        .enumerate()
        .map(|(i, (solved, t))| CameraParameterError {
            camera: i + 2,
            f_rel: (solved.camera.f - t.f).abs() / t.f,
            rotation_deg: rotation_geodesic_deg(&solved.camera.r, &t.r),
            translation_mm: (solved.camera.t - t.t).norm(),
        })
        .collect();

    let mut err_sq = 0.0;
    let mut mag_sq = 0.0;
    let mut max_err = 0.0f64;
    for (est, t) in result.cloud.iter().zip(&truth.points) {
        let e = (est.coords() - t.coords()).norm();
        err_sq += e * e;
        mag_sq += t.coords().norm_squared();
        max_err = max_err.max(e);
    }
    let n = truth.points.len() as f64;
    let cloud_rms_mm = (err_sq / n).sqrt();
    let cloud_rel_rms = cloud_rms_mm / (mag_sq / n).sqrt();

    Ok(ParameterErrorReport {
        f1_rel: (result.f1 - truth.f1).abs() / truth.f1,
        f2_rel: (result.ratio.rho * result.f1 - truth.f2).abs() / truth.f2,
        cameras,
        cloud_rms_mm,
        cloud_max_mm: max_err,
        cloud_rel_rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CameraModel, ImagePoint};
    use crate::scene::{generate, SceneSpec};
    use crate::solver::{SolveDiagnostics, SolvedCamera};
    use crate::stereo::{self, FocalRatio};
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Rotation3, Vector3};

    fn truth_result(truth: &crate::scene::GroundTruth) -> CalibrationResult {
        CalibrationResult {
            f1: truth.f1,
            ratio: FocalRatio {
                rho: truth.f2 / truth.f1,
                per_point: vec![],
                dispersion: 0.0,
            },
            cameras: truth
                .monocular_cameras()
                .iter()
                .map(|c| SolvedCamera {
                    camera: c.clone(),
                    branch_label: None,
                })
                .collect(),
            cloud: truth.points.clone(),
            objective_value: 0.0,
            per_point_residuals: vec![],
            diagnostics: SolveDiagnostics {
                converged: true,
                iterations: 0,
                final_damping: 0.0,
                grid_index: 0,
                grid_f1_px: truth.f1,
                branch_rounds: 0,
                objective_trace: vec![],
            },
        }
    }

    #[test]
    fn ground_truth_reprojects_to_zero_on_noiseless_data() {
        let truth = generate(&SceneSpec::default()).unwrap();
        let result = truth_result(&truth);
        let report = reprojection_errors(&result, &truth.rig, &truth.observations).unwrap();
        assert!(report.overall_rms_px < 1e-9);
        for cam in &report.per_camera {
            assert!(cam.max_px < 1e-9, "camera {}: {}", cam.camera, cam.max_px);
            assert_eq!(cam.behind_points, 0);
        }
    }

    #[test]
    fn first_camera_errors_vanish_on_the_triangulated_cloud() {
        let spec = SceneSpec {
            noise_px: 1.0,
            seed: 21,
            ..SceneSpec::default()
        };
        let truth = generate(&spec).unwrap();
        let obs = &truth.noisy_observations;
        let ratio = stereo::estimate_focal_ratio(obs).unwrap();
        let cloud =
            stereo::reconstruct_cloud_with(obs, truth.rig.baseline_mm, truth.f1, ratio.rho)
                .unwrap();
        let mut result = truth_result(&truth);
        result.cloud = cloud;
        result.ratio = ratio;
        let report = reprojection_errors(&result, &truth.rig, obs).unwrap();
        assert!(
            report.per_camera[0].max_px <= 1e-12,
            "camera 0 max {}",
            report.per_camera[0].max_px
        );
        assert!(report.per_camera[1].rms_px > 0.1);
    }

    #[test]
    fn aggregates_match_the_per_point_table() {
        let spec = SceneSpec {
            noise_px: 0.5,
            seed: 4,
            ..SceneSpec::default()
        };
        let truth = generate(&spec).unwrap();
        let result = truth_result(&truth);
        let report = reprojection_errors(&result, &truth.rig, &truth.noisy_observations).unwrap();
        let mut all = Vec::new();
        for (c, cam) in report.per_camera.iter().enumerate() {
            let errs = &report.errors[c];
            let n = errs.len() as f64;
            let rms = (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
            let mean = errs.iter().sum::<f64>() / n;
            let max = errs.iter().cloned().fold(0.0, f64::max);
            assert_relative_eq!(cam.rms_px, rms, epsilon = 1e-12);
            assert_relative_eq!(cam.mean_px, mean, epsilon = 1e-12);
            assert_relative_eq!(cam.max_px, max, epsilon = 1e-12);
            all.extend_from_slice(errs);
        }
        let overall = (all.iter().map(|e| e * e).sum::<f64>() / all.len() as f64).sqrt();
        assert_relative_eq!(report.overall_rms_px, overall, epsilon = 1e-12);
    }

    #[test]
    fn behind_points_are_flagged_and_excluded() {
        let truth = generate(&SceneSpec::default()).unwrap();
        let mut result = truth_result(&truth);
        // Push one point behind every camera.
        result.cloud[0] = WorldPoint::new(0.0, 50.0, -4000.0);
        let report = reprojection_errors(&result, &truth.rig, &truth.observations).unwrap();
        for c in 0..2 {
            assert!(report.behind[c][0]);
            assert!(report.errors[c][0].is_nan());
            assert_eq!(report.per_camera[c].behind_points, 1);
            assert!(report.per_camera[c].rms_px.is_finite());
        }
    }

    #[test]
    fn unit_cube_corners_have_unit_box() {
        let mut cloud = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    cloud.push(WorldPoint::new(x, y, z));
                }
            }
        }
        let report = scale_report(&cloud, None, None).unwrap();
        assert_eq!(report.box_mm, [1.0, 1.0, 1.0]);
        assert!(report.scale_error.is_none());
    }

    #[test]
    fn doubled_cloud_reports_full_scale_error() {
        let cloud: Vec<WorldPoint> = (0..8)
            .map(|i| {
                WorldPoint::new(
                    2.0 * (i & 1) as f64 * 98.0,
                    2.0 * ((i >> 1) & 1) as f64 * 168.0,
                    2.0 * ((i >> 2) & 1) as f64 * 75.0,
                )
            })
            .collect();
        let report = scale_report(&cloud, Some([98.0, 168.0, 75.0]), None).unwrap();
        let ratios = report.axis_ratios.unwrap();
        for r in ratios {
            assert_relative_eq!(r, 2.0, epsilon = 1e-12);
        }
        assert_relative_eq!(report.scale_error.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn scaling_the_cloud_scales_the_box_exactly() {
        let truth = generate(&SceneSpec::default()).unwrap();
        let base = scale_report(&truth.points, None, None).unwrap();
        let scaled: Vec<WorldPoint> = truth
            .points
            .iter()
            .map(|p| WorldPoint::new(2.0 * p.x, 2.0 * p.y, 2.0 * p.z))
            .collect();
        let double = scale_report(&scaled, None, None).unwrap();
        for a in 0..3 {
            assert_eq!(double.box_mm[a].to_bits(), (2.0 * base.box_mm[a]).to_bits());
        }
    }

    #[test]
    fn truth_against_itself_reports_zero_errors() {
        let truth = generate(&SceneSpec::default()).unwrap();
        let result = truth_result(&truth);
        let report = parameter_errors(&result, &truth).unwrap();
        assert_eq!(report.f1_rel, 0.0);
        assert_eq!(report.f2_rel, 0.0);
        assert_eq!(report.cloud_rms_mm, 0.0);
        for cam in &report.cameras {
            assert_eq!(cam.f_rel, 0.0);
            assert!(cam.rotation_deg < 1e-5);
            assert_eq!(cam.translation_mm, 0.0);
        }
    }

    #[test]
    fn one_degree_rotation_reports_one_degree() {
        let r = Rotation3::from_euler_angles(0.2, -0.4, 0.1).into_inner();
        let spun = r * Rotation3::from_axis_angle(&Vector3::z_axis(), 1.0f64.to_radians()).into_inner();
        assert_relative_eq!(rotation_geodesic_deg(&r, &spun), 1.0, epsilon = 1e-9);
        assert_relative_eq!(
            rotation_geodesic_deg(&Matrix3::identity(), &Matrix3::identity()),
            0.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn reprojection_rejects_mismatched_point_counts() {
        let truth = generate(&SceneSpec::default()).unwrap();
        let mut result = truth_result(&truth);
        result.cloud.pop();
        assert!(reprojection_errors(&result, &truth.rig, &truth.observations).is_err());
    }

    #[test]
    fn empty_cloud_is_rejected() {
        assert!(scale_report(&[], None, None).is_err());
    }

    #[test]
    fn nan_behind_entries_do_not_poison_csv_free_aggregates() {
        // Regression guard: fold-based max starts at 0.0, so an all-behind
        // camera reports zeroed aggregates rather than NaN.
        let obs = ObservationSet::new(
            3,
            1,
            vec![
                ImagePoint::new(1.0, 1.0),
                ImagePoint::new(1.0, 1.0),
                ImagePoint::new(1.0, 1.0),
            ],
        )
        .unwrap();
        let truth_cam = CameraModel {
            f: 1000.0,
            r: Matrix3::identity(),
            t: Vector3::new(0.0, 0.0, 100.0),
        };
        let result = CalibrationResult {
            f1: 1000.0,
            ratio: FocalRatio {
                rho: 1.0,
                per_point: vec![],
                dispersion: 0.0,
            },
            cameras: vec![SolvedCamera {
                camera: truth_cam,
                branch_label: None,
            }],
            cloud: vec![WorldPoint::new(0.0, 0.0, -500.0)],
            objective_value: 0.0,
            per_point_residuals: vec![],
            diagnostics: SolveDiagnostics {
                converged: true,
                iterations: 0,
                final_damping: 0.0,
                grid_index: 0,
                grid_f1_px: 1000.0,
                branch_rounds: 0,
                objective_trace: vec![],
            },
        };
        let rig = StereoRig::new(125.0).unwrap();
        let report = reprojection_errors(&result, &rig, &obs).unwrap();
        assert_eq!(report.per_camera[0].behind_points, 1);
        assert_eq!(report.per_camera[0].rms_px, 0.0);
        assert_eq!(report.per_camera[0].mean_px, 0.0);
        assert!(report.stereo_rms_px == 0.0);
    }
}
