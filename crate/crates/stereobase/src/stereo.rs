//! Closed-form metric reconstruction from the stereo pair.
//!
//! With both stereo cameras at identity rotation and centres `baseline` apart
//! along X, corresponding image points `(x1, y1)` and `(x2, y2)` determine the
//! world point in closed form:
//!
//! ```text
//! X = x1 * y2 * l / (x1*y2 - x2*y1)
//! Y = y1 * y2 * l / (x1*y2 - x2*y1)
//! Z = f1 * X / x1
//! ```
//!
//! X and Y need no focal length at all; Z is recovered up to the first
//! camera's focal length, so the reconstruction carries `z_per_f1 = Z / f1`
//! until the solver has fixed `f1`. The ratio of the two focal lengths falls
//! out of the same geometry: both cameras share the point's Y and Z, so
//! `f2 / f1 = y2 / y1` point by point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImagePoint, ObservationSet, WorldPoint};

/// Relative-determinant threshold below which the Y ~ 0 fallback applies.
pub const TRIANGULATION_REL_TOL: f64 = 1e-8;

/// Points with |y1| at or below this bound are excluded from the focal-ratio
/// estimate.
pub const MIN_Y1_PX: f64 = 1e-8;

/// Which closed form produced a stereo estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriangulationBranch {
    /// The general determinant form above.
    Primary,
    /// Near-zero Y: the determinant degenerates and X comes from the
    /// disparity `rho * x1 - x2` instead, with Y pinned to zero.
    ZeroYFallback,
}

/// A stereo-triangulated point, metric in X and Y, with depth carried as
/// `Z / f1`.
#[derive(Clone, Copy, Debug)]
pub struct StereoPointEstimate {
    pub x: f64,
    pub y: f64,
    pub z_per_f1: f64,
    pub branch: TriangulationBranch,
}

impl StereoPointEstimate {
    pub fn world(&self, f1: f64) -> WorldPoint {
        WorldPoint::new(self.x, self.y, f1 * self.z_per_f1)
    }
}

/// How per-point focal ratios are pooled into one estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RatioAggregation {
    #[default]
    Mean,
    /// Robust alternative for contaminated data.
    Median,
}

/// Focal-length ratio `rho = f2 / f1` of the stereo pair, pooled over all
/// usable points, with the per-point ratios and their spread kept for
/// diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FocalRatio {
    pub rho: f64,
    pub per_point: Vec<f64>,
    /// Population standard deviation of `per_point`.
    pub dispersion: f64,
}

pub fn estimate_focal_ratio(obs: &ObservationSet) -> Result<FocalRatio> {
    estimate_focal_ratio_with(obs, RatioAggregation::Mean, MIN_Y1_PX)
}

pub fn estimate_focal_ratio_with(
    obs: &ObservationSet,
    aggregation: RatioAggregation,
    min_y1_px: f64,
) -> Result<FocalRatio> {
    let per_point: Vec<f64> = obs
        .row(0)
        .iter()
        .zip(obs.row(1))
        .filter(|(p1, _)| p1.y.abs() > min_y1_px)
        .map(|(p1, p2)| p2.y / p1.y)
        .collect();
    if per_point.is_empty() {
        return Err(Error::NoRatioPoints {
            min_y1_px,
        });
    }
    let rho = match aggregation {
        RatioAggregation::Mean => per_point.iter().sum::<f64>() / per_point.len() as f64,
        RatioAggregation::Median => {
            let mut sorted = per_point.clone();
            sorted.sort_by(f64::total_cmp);
            let mid = sorted.len() / 2;
            if sorted.len() % 2 == 1 {
                sorted[mid]
            } else {
                0.5 * (sorted[mid - 1] + sorted[mid])
            }
        }
    };
    if !rho.is_finite() || rho <= 0.0 {
        return Err(Error::NonPositiveRatio { rho });
    }
    let mean = per_point.iter().sum::<f64>() / per_point.len() as f64;
    let dispersion = (per_point.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
        / per_point.len() as f64)
        .sqrt();
    Ok(FocalRatio {
        rho,
        per_point,
        dispersion,
    })
}

/// Triangulates one stereo correspondence into metric X, Y and `Z / f1`.
///
/// The depth proxy is computed as `y2 * l / (x1*y2 - x2*y1)`, which equals
/// `X / x1` with the `x1` factors cancelled, so points near the image Y axis
/// cost no precision. The focal ratio `rho` is only consulted by the
/// fallback branch.
pub fn triangulate_xy(
    p1: ImagePoint,
    p2: ImagePoint,
    baseline_mm: f64,
    rho: f64,
) -> Result<StereoPointEstimate> {
    let det = p1.x * p2.y - p2.x * p1.y;
    let det_scale = (p1.x * p2.y).abs() + (p2.x * p1.y).abs();
    if det.abs() > TRIANGULATION_REL_TOL * det_scale && det_scale > 0.0 {
        let z_per_f1 = p2.y * baseline_mm / det;
        return Ok(StereoPointEstimate {
            x: p1.x * z_per_f1,
            y: p1.y * z_per_f1,
            z_per_f1,
            branch: TriangulationBranch::Primary,
        });
    }
    let disparity = rho * p1.x - p2.x;
    let disparity_scale = (rho * p1.x).abs() + p2.x.abs();
    if disparity.abs() <= TRIANGULATION_REL_TOL * disparity_scale || disparity_scale == 0.0 {
        return Err(Error::DegenerateGeometry { point: None });
    }
    let z_per_f1 = rho * baseline_mm / disparity;
    Ok(StereoPointEstimate {
        x: p1.x * z_per_f1,
        y: 0.0,
        z_per_f1,
        branch: TriangulationBranch::ZeroYFallback,
    })
}

/// Triangulates every point of the stereo pair at a fixed `f1`, estimating
/// the focal ratio from the same observations.
pub fn reconstruct_cloud(
    obs: &ObservationSet,
    baseline_mm: f64,
    f1: f64,
) -> Result<Vec<WorldPoint>> {
    let ratio = estimate_focal_ratio(obs)?;
    reconstruct_cloud_with(obs, baseline_mm, f1, ratio.rho)
}

pub fn reconstruct_cloud_with(
    obs: &ObservationSet,
    baseline_mm: f64,
    f1: f64,
    rho: f64,
) -> Result<Vec<WorldPoint>> {
    triangulate_all(obs, baseline_mm, rho).map(|base| base.iter().map(|e| e.world(f1)).collect())
}

/// Triangulates every point, keeping depths as `Z / f1`. The error names the
/// offending point index on degenerate geometry.
pub fn triangulate_all(
    obs: &ObservationSet,
    baseline_mm: f64,
    rho: f64,
) -> Result<Vec<StereoPointEstimate>> {
    obs.row(0)
        .iter()
        .zip(obs.row(1))
        .enumerate()
        .map(|(j, (p1, p2))| {
            triangulate_xy(*p1, *p2, baseline_mm, rho).map_err(|e| match e {
                Error::DegenerateGeometry { .. } => Error::DegenerateGeometry { point: Some(j) },
                other => other,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ObservationSet, StereoRig};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn observe(rig: &StereoRig, f1: f64, f2: f64, points: &[WorldPoint]) -> ObservationSet {
        let cams = [rig.camera1(f1), rig.camera2(f2)];
        let mut data = Vec::new();
        for cam in &cams {
            for p in points {
                data.push(cam.project(p).unwrap().point);
            }
        }
        ObservationSet::new(2, points.len(), data).unwrap()
    }

    /// Independent oracle: intersect the two viewing rays in the least-squares
    /// sense. Camera k's ray is `c_k + s * d_k` with `d_k = (x/f, y/f, 1)`.
    fn two_ray_oracle(p1: ImagePoint, p2: ImagePoint, l: f64, f1: f64, f2: f64) -> WorldPoint {
        let c1 = Vector3::zeros();
        let c2 = Vector3::new(l, 0.0, 0.0);
        let d1 = Vector3::new(p1.x / f1, p1.y / f1, 1.0);
        let d2 = Vector3::new(p2.x / f2, p2.y / f2, 1.0);
        // Solve min over (s1, s2) of |(c1 + s1 d1) - (c2 + s2 d2)|^2.
        let a11 = d1.dot(&d1);
        let a12 = -d1.dot(&d2);
        let a22 = d2.dot(&d2);
        let rhs = c2 - c1;
        let b1 = d1.dot(&rhs);
        let b2 = -d2.dot(&rhs);
        let det = a11 * a22 - a12 * a12;
        let s1 = (b1 * a22 - a12 * b2) / det;
        let s2 = (a11 * b2 - a12 * b1) / det;
        let m = (c1 + d1 * s1 + c2 + d2 * s2) * 0.5;
        WorldPoint::new(m.x, m.y, m.z)
    }

    #[test]
    fn recovers_the_worked_unit_example() {
        let est = triangulate_xy(
            ImagePoint::new(0.5, 0.5),
            ImagePoint::new(-0.5, 0.5),
            2.0,
            1.0,
        )
        .unwrap();
        assert_relative_eq!(est.x, 1.0);
        assert_relative_eq!(est.y, 1.0);
        assert_relative_eq!(est.z_per_f1, 2.0);
        assert_eq!(est.branch, TriangulationBranch::Primary);
    }

    #[test]
    fn fallback_solves_points_on_the_baseline_plane() {
        let est = triangulate_xy(
            ImagePoint::new(0.2, 0.0),
            ImagePoint::new(-0.2, 0.0),
            2.0,
            1.0,
        )
        .unwrap();
        assert_relative_eq!(est.x, 1.0);
        assert_relative_eq!(est.y, 0.0);
        assert_eq!(est.branch, TriangulationBranch::ZeroYFallback);
    }

    #[test]
    fn doubling_the_baseline_doubles_the_estimate() {
        let p1 = ImagePoint::new(0.4, 0.3);
        let p2 = ImagePoint::new(-0.1, 0.25);
        let a = triangulate_xy(p1, p2, 100.0, 1.0).unwrap();
        let b = triangulate_xy(p1, p2, 200.0, 1.0).unwrap();
        assert_relative_eq!(b.x, 2.0 * a.x, max_relative = 1e-15);
        assert_relative_eq!(b.y, 2.0 * a.y, max_relative = 1e-15);
        assert_relative_eq!(b.z_per_f1, 2.0 * a.z_per_f1, max_relative = 1e-15);
    }

    #[test]
    fn rejects_fully_degenerate_observations() {
        let err = triangulate_xy(
            ImagePoint::new(0.0, 0.0),
            ImagePoint::new(0.0, 0.0),
            125.0,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry { point: None }));
    }

    #[test]
    fn first_camera_reprojection_is_exact_even_for_inconsistent_input() {
        // The closed forms satisfy x1 = f1 X / Z and y1 = f1 Y / Z identically,
        // whatever the second camera saw.
        let p1 = ImagePoint::new(37.2, -81.9);
        let p2 = ImagePoint::new(-143.7, -80.05);
        let est = triangulate_xy(p1, p2, 125.0, 0.8).unwrap();
        let f1 = 912.3;
        let w = est.world(f1);
        assert_relative_eq!(f1 * w.x / w.z, p1.x, max_relative = 1e-13);
        assert_relative_eq!(f1 * w.y / w.z, p1.y, max_relative = 1e-13);
    }

    #[test]
    fn focal_ratio_of_synthetic_rig_matches_truth() {
        let rig = StereoRig::new(125.0).unwrap();
        let points = [
            WorldPoint::new(80.0, 60.0, 500.0),
            WorldPoint::new(150.0, 120.0, 430.0),
            WorldPoint::new(110.0, 200.0, 560.0),
            WorldPoint::new(60.0, 90.0, 610.0),
        ];
        let obs = observe(&rig, 800.0, 1000.0, &points);
        let ratio = estimate_focal_ratio(&obs).unwrap();
        assert_relative_eq!(ratio.rho, 1.25, max_relative = 1e-12);
        assert!(ratio.dispersion < 1e-12);
        assert_eq!(ratio.per_point.len(), 4);
    }

    #[test]
    fn focal_ratio_aggregation_modes_differ_on_skewed_data() {
        let data = vec![
            ImagePoint::new(0.0, 10.0),
            ImagePoint::new(0.0, 10.0),
            ImagePoint::new(0.0, 10.0),
            ImagePoint::new(0.0, 20.0),
            ImagePoint::new(0.0, 20.0),
            ImagePoint::new(0.0, 50.0),
        ];
        let obs = ObservationSet::new(2, 3, data).unwrap();
        let mean = estimate_focal_ratio_with(&obs, RatioAggregation::Mean, MIN_Y1_PX).unwrap();
        let median = estimate_focal_ratio_with(&obs, RatioAggregation::Median, MIN_Y1_PX).unwrap();
        assert_relative_eq!(mean.rho, (2.0 + 2.0 + 5.0) / 3.0);
        assert_relative_eq!(median.rho, 2.0);
    }

    #[test]
    fn focal_ratio_needs_points_off_the_baseline_plane() {
        let data = vec![
            ImagePoint::new(10.0, 0.0),
            ImagePoint::new(20.0, 0.0),
            ImagePoint::new(-10.0, 0.0),
            ImagePoint::new(-20.0, 0.0),
        ];
        let obs = ObservationSet::new(2, 2, data).unwrap();
        assert!(matches!(
            estimate_focal_ratio(&obs),
            Err(Error::NoRatioPoints { .. })
        ));
    }

    #[test]
    fn branches_agree_where_their_domains_meet() {
        // A noiseless point with small but nonzero Y is solvable both ways.
        let rig = StereoRig::new(125.0).unwrap();
        let (f1, f2) = (900.0, 720.0);
        let p = WorldPoint::new(80.0, 0.5, 500.0);
        let obs = observe(&rig, f1, f2, &[p, WorldPoint::new(60.0, 90.0, 450.0)]);
        let (p1, p2) = (obs.get(0, 0), obs.get(1, 0));
        let rho = f2 / f1;

        let primary = triangulate_xy(p1, p2, 125.0, rho).unwrap();
        assert_eq!(primary.branch, TriangulationBranch::Primary);

        let fallback = triangulate_xy(
            ImagePoint::new(p1.x, 0.0),
            ImagePoint::new(p2.x, 0.0),
            125.0,
            rho,
        )
        .unwrap();
        assert_eq!(fallback.branch, TriangulationBranch::ZeroYFallback);
        assert_relative_eq!(primary.x, fallback.x, max_relative = 1e-9);
        assert_relative_eq!(primary.z_per_f1, fallback.z_per_f1, max_relative = 1e-9);
    }

    #[test]
    fn cloud_depth_scales_with_f1_and_xy_does_not() {
        let rig = StereoRig::new(125.0).unwrap();
        let points = [
            WorldPoint::new(80.0, 60.0, 500.0),
            WorldPoint::new(150.0, 120.0, 430.0),
            WorldPoint::new(110.0, 200.0, 560.0),
        ];
        let obs = observe(&rig, 900.0, 700.0, &points);
        let a = reconstruct_cloud(&obs, 125.0, 900.0).unwrap();
        let b = reconstruct_cloud(&obs, 125.0, 1800.0).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert_relative_eq!(pa.x, pb.x);
            assert_relative_eq!(pa.y, pb.y);
            assert_relative_eq!(2.0 * pa.z, pb.z, max_relative = 1e-15);
        }
    }

    #[test]
    fn cloud_reconstruction_recovers_truth() {
        let rig = StereoRig::new(125.0).unwrap();
        let points = [
            WorldPoint::new(80.0, 60.0, 500.0),
            WorldPoint::new(150.0, 120.0, 430.0),
            WorldPoint::new(110.0, 200.0, 560.0),
            WorldPoint::new(60.0, 90.0, 610.0),
        ];
        let obs = observe(&rig, 900.0, 700.0, &points);
        let cloud = reconstruct_cloud(&obs, 125.0, 900.0).unwrap();
        for (est, truth) in cloud.iter().zip(&points) {
            assert_relative_eq!(est.x, truth.x, max_relative = 1e-10);
            assert_relative_eq!(est.y, truth.y, max_relative = 1e-10);
            assert_relative_eq!(est.z, truth.z, max_relative = 1e-10);
        }
    }

    #[test]
    fn degenerate_point_errors_carry_their_index() {
        let data = vec![
            ImagePoint::new(10.0, 5.0),
            ImagePoint::new(0.0, 0.0),
            ImagePoint::new(-30.0, 4.0),
            ImagePoint::new(0.0, 0.0),
        ];
        let obs = ObservationSet::new(2, 2, data).unwrap();
        let err = triangulate_all(&obs, 125.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry { point: Some(1) }));
    }

    proptest! {
        /// Project a world point through both stereo cameras and triangulate:
        /// the closed forms must invert the projection.
        #[test]
        fn round_trips_noiseless_projections(
            px in -150.0..300.0f64,
            py in 5.0..250.0f64,
            pz in 300.0..800.0f64,
            y_sign in prop::bool::ANY,
            f1 in 500.0..1500.0f64,
            ratio in 0.5..2.0f64,
        ) {
            let rig = StereoRig::new(125.0).unwrap();
            let f2 = ratio * f1;
            let p = WorldPoint::new(px, if y_sign { py } else { -py }, pz);
            let p1 = rig.camera1(f1).project(&p).unwrap().point;
            let p2 = rig.camera2(f2).project(&p).unwrap().point;
            let est = triangulate_xy(p1, p2, 125.0, ratio).unwrap();
            let w = est.world(f1);
            prop_assert!((w.x - p.x).abs() <= 1e-9 * p.x.abs().max(1.0));
            prop_assert!((w.y - p.y).abs() <= 1e-9 * p.y.abs().max(1.0));
            prop_assert!((w.z - p.z).abs() <= 1e-9 * p.z.abs());
        }

        /// The closed forms agree with a generic two-ray intersection.
        #[test]
        fn matches_two_ray_intersection_oracle(
            px in -150.0..300.0f64,
            py in 1.0..250.0f64,
            pz in 300.0..800.0f64,
            f1 in 500.0..1500.0f64,
            ratio in 0.5..2.0f64,
        ) {
            let rig = StereoRig::new(125.0).unwrap();
            let f2 = ratio * f1;
            let p = WorldPoint::new(px, py, pz);
            let p1 = rig.camera1(f1).project(&p).unwrap().point;
            let p2 = rig.camera2(f2).project(&p).unwrap().point;
            let est = triangulate_xy(p1, p2, 125.0, ratio).unwrap().world(f1);
            let oracle = two_ray_oracle(p1, p2, 125.0, f1, f2);
            prop_assert!((est.x - oracle.x).abs() <= 1e-9 * oracle.x.abs().max(1.0));
            prop_assert!((est.y - oracle.y).abs() <= 1e-9 * oracle.y.abs().max(1.0));
            prop_assert!((est.z - oracle.z).abs() <= 1e-9 * oracle.z.abs().max(1.0));
        }

        /// Baseline scaling is exactly linear in every coordinate.
        #[test]
        fn baseline_scaling_is_linear(
            x1 in -400.0..400.0f64,
            y1 in 1.0..400.0f64,
            x2 in -400.0..400.0f64,
            y2 in 1.0..400.0f64,
            l in 50.0..500.0f64,
            s in 0.25..8.0f64,
        ) {
            let p1 = ImagePoint::new(x1, y1);
            let p2 = ImagePoint::new(x2, y2);
            if let (Ok(a), Ok(b)) = (
                triangulate_xy(p1, p2, l, 1.0),
                triangulate_xy(p1, p2, s * l, 1.0),
            ) {
                prop_assert!((b.x - s * a.x).abs() <= 1e-12 * (s * a.x).abs().max(1e-9));
                prop_assert!((b.y - s * a.y).abs() <= 1e-12 * (s * a.y).abs().max(1e-9));
                prop_assert!((b.z_per_f1 - s * a.z_per_f1).abs() <= 1e-12 * (s * a.z_per_f1).abs().max(1e-9));
            }
        }
    }
}
