//! Linear design systems and the packing they solve for.
//!
//! For a monocular camera with focal length `f`, rotation rows `r1..r9`, and
//! translation `(tx, ty, tz)`, dividing the projection equations by `tz`
//! makes each observed coordinate linear in the packed unknowns
//!
//! ```text
//! alpha = [f r1/tz, f r2/tz, f f1 r3/tz, f tx/tz, r7/tz, r8/tz, f1 r9/tz]
//! beta  = [f r4/tz, f r5/tz, f f1 r6/tz, f ty/tz, r7/tz, r8/tz, f1 r9/tz]
//! ```
//!
//! against design rows built purely from the stereo reconstruction: with
//! `(X, Y)` metric and `zp = Z / f1`, the row for observation `x` is
//! `[X, Y, zp, 1, -x X, -x Y, -x zp]` and analogously for `y`. The rows are
//! free of `f1`, which only re-enters when physical parameters are extracted
//! from a solution.

use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector3};

use crate::error::{Error, Result};
use crate::model::{CameraModel, ObservationSet};
use crate::stereo::StereoPointEstimate;

pub type Vector7 = SVector<f64, 7>;

/// |x1| below this bound invalidates a design row (the packing derivation
/// divides by it).
pub const MIN_X1_PX: f64 = 1e-9;

/// |tz| below this bound makes the packing singular.
pub const MIN_TZ_MM: f64 = 1e-12;

/// How far from orthonormal an extracted rotation block may be (Frobenius
/// norm of `M M^T - I`) before the candidate is rejected rather than
/// projected. Noise leaves sizable defects even at the correct focal cell,
/// and the scoring downstream separates usable seeds from junk, so the gate
/// only screens out blocks beyond hope.
const EXTRACTION_ROTATION_SLACK: f64 = 2.0;

/// The packed unknowns of one monocular camera. The last three components of
/// `alpha` and `beta` describe the same third rotation row and must agree.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedParameters {
    pub alpha: Vector7,
    pub beta: Vector7,
}

/// The stacked x- and y-equations of one monocular camera.
#[derive(Clone, Debug)]
pub struct DesignSystem {
    pub a_x: DMatrix<f64>,
    pub a_y: DMatrix<f64>,
    pub b_x: DVector<f64>,
    pub b_y: DVector<f64>,
}

impl DesignSystem {
    pub fn points(&self) -> usize {
        self.b_x.len()
    }

    /// Unsquared residual norms `(|A_x a - b_x|, |A_y b - b_y|)`.
    pub fn residual_norms(&self, params: &CombinedParameters) -> (f64, f64) {
        (
            (&self.a_x * params.alpha - &self.b_x).norm(),
            (&self.a_y * params.beta - &self.b_y).norm(),
        )
    }

    /// Per-point raw residuals `(x, y)` in pixels.
    pub fn per_point_residuals(&self, params: &CombinedParameters) -> Vec<(f64, f64)> {
        let rx = &self.a_x * params.alpha - &self.b_x;
        let ry = &self.a_y * params.beta - &self.b_y;
        rx.iter().zip(ry.iter()).map(|(x, y)| (*x, *y)).collect()
    }

    /// The x- and y-equations stacked into one system over the 11 distinct
    /// unknowns `[alpha_1..4, beta_1..4, shared_5..7]`.
    pub fn joint_system(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.points();
        let mut g = DMatrix::zeros(2 * n, 11);
        let mut b = DVector::zeros(2 * n);
        for j in 0..n {
            for c in 0..4 {
                g[(j, c)] = self.a_x[(j, c)];
                g[(n + j, 4 + c)] = self.a_y[(j, c)];
            }
            for c in 0..3 {
                g[(j, 8 + c)] = self.a_x[(j, 4 + c)];
                g[(n + j, 8 + c)] = self.a_y[(j, 4 + c)];
            }
            b[j] = self.b_x[j];
            b[n + j] = self.b_y[j];
        }
        (g, b)
    }
}

/// Splits a joint 11-vector back into packed parameters.
pub fn joint_to_params(gamma: &DVector<f64>) -> CombinedParameters {
    let alpha = Vector7::from_iterator(
        (0..4).map(|c| gamma[c]).chain((8..11).map(|c| gamma[c])),
    );
    let beta = Vector7::from_iterator(
        (4..8).map(|c| gamma[c]).chain((8..11).map(|c| gamma[c])),
    );
    CombinedParameters { alpha, beta }
}

/// Builds the design system of one monocular camera (0-based index, at
/// least 2) from the stereo reconstruction.
pub fn build_design_system(
    obs: &ObservationSet,
    camera: usize,
    base: &[StereoPointEstimate],
) -> Result<DesignSystem> {
    if camera < 2 || camera >= obs.cameras() {
        return Err(Error::DimensionMismatch(format!(
            "camera index {camera} is not a monocular camera of a {}-camera set",
            obs.cameras()
        )));
    }
    if base.len() != obs.points() {
        return Err(Error::DimensionMismatch(format!(
            "{} stereo estimates for {} points",
            base.len(),
            obs.points()
        )));
    }
    let n = obs.points();
    let mut a_x = DMatrix::zeros(n, 7);
    let mut a_y = DMatrix::zeros(n, 7);
    let mut b_x = DVector::zeros(n);
    let mut b_y = DVector::zeros(n);
    for j in 0..n {
        let x1 = obs.get(0, j).x;
        if x1.abs() <= MIN_X1_PX {
            return Err(Error::DegenerateObservation { point: j, x1 });
        }
        let p = obs.get(camera, j);
        let est = &base[j];
        let row = [est.x, est.y, est.z_per_f1];
        for (c, v) in row.iter().enumerate() {
            a_x[(j, c)] = *v;
            a_y[(j, c)] = *v;
            a_x[(j, 4 + c)] = -p.x * v;
            a_y[(j, 4 + c)] = -p.y * v;
        }
        a_x[(j, 3)] = 1.0;
        a_y[(j, 3)] = 1.0;
        b_x[j] = p.x;
        b_y[j] = p.y;
    }
    Ok(DesignSystem { a_x, a_y, b_x, b_y })
}

/// Packs physical camera parameters into the design unknowns.
pub fn pack_parameters(f1: f64, camera: &CameraModel) -> Result<CombinedParameters> {
    if !f1.is_finite() || f1 <= 0.0 {
        return Err(Error::InvalidParameters(format!(
            "f1 = {f1} px is not positive and finite"
        )));
    }
    let tz = camera.t.z;
    if tz.abs() < MIN_TZ_MM {
        return Err(Error::InvalidParameters(format!(
            "|tz| = {} mm is below {MIN_TZ_MM}",
            tz.abs()
        )));
    }
    let f = camera.f;
    let r = &camera.r;
    let shared = [r[(2, 0)] / tz, r[(2, 1)] / tz, f1 * r[(2, 2)] / tz];
    let alpha = Vector7::from_column_slice(&[
        f * r[(0, 0)] / tz,
        f * r[(0, 1)] / tz,
        f * f1 * r[(0, 2)] / tz,
        f * camera.t.x / tz,
        shared[0],
        shared[1],
        shared[2],
    ]);
    let beta = Vector7::from_column_slice(&[
        f * r[(1, 0)] / tz,
        f * r[(1, 1)] / tz,
        f * f1 * r[(1, 2)] / tz,
        f * camera.t.y / tz,
        shared[0],
        shared[1],
        shared[2],
    ]);
    Ok(CombinedParameters { alpha, beta })
}

/// Recovers physical camera parameters from packed unknowns at a given `f1`.
///
/// `|tz|` comes from the shared block's norm, the rotation rows from the
/// scaled leading blocks, and the focal length from the first row's norm.
/// Both signs of `tz` are formed; since negating `tz` negates the whole
/// implied rotation block and `det(-M) = -det(M)`, exactly one sign survives
/// the proper-rotation filter, so the returned list typically holds one
/// camera. Near-rotation blocks are projected to the nearest rotation;
/// blocks further than a loose slack are rejected.
pub fn extract_camera_parameters(
    params: &CombinedParameters,
    f1: f64,
) -> Result<Vec<CameraModel>> {
    if !f1.is_finite() || f1 <= 0.0 {
        return Err(Error::InvalidParameters(format!(
            "f1 = {f1} px is not positive and finite"
        )));
    }
    let a = &params.alpha;
    let b = &params.beta;
    let v1 = Vector3::new(a[0], a[1], a[2] / f1);
    let v2 = Vector3::new(b[0], b[1], b[2] / f1);
    let v3 = Vector3::new(a[4], a[5], a[6] / f1);
    let n3 = v3.norm();
    if n3 < 1e-300 {
        return Err(Error::InvalidParameters(
            "shared third-row block is zero; tz is unbounded".into(),
        ));
    }
    let f = v1.norm() / n3;
    if !f.is_finite() || f <= 0.0 {
        return Err(Error::InvalidParameters(
            "first-row block is zero; focal length is unbounded".into(),
        ));
    }

    let mut out = Vec::new();
    for tz in [1.0 / n3, -1.0 / n3] {
        let row1 = v1 * (tz / f);
        let row2 = v2 * (tz / f);
        let row3 = v3 * tz;
        let m = Matrix3::from_rows(&[row1.transpose(), row2.transpose(), row3.transpose()]);
        if m.determinant() <= 0.0 {
            continue;
        }
        let defect = (m * m.transpose() - Matrix3::identity()).norm();
        if defect > EXTRACTION_ROTATION_SLACK {
            continue;
        }
        let r = nearest_rotation(&m);
        out.push(CameraModel {
            f,
            r,
            t: Vector3::new(a[3] * tz / f, b[3] * tz / f, tz),
        });
    }
    if out.is_empty() {
        return Err(Error::InvalidParameters(
            "no tz sign yields a proper rotation".into(),
        ));
    }
    Ok(out)
}

/// Orthogonal projection onto SO(3) via the SVD.
pub(crate) fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd with u requested");
    let v_t = svd.v_t.expect("svd with v_t requested");
    let d = (u * v_t).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    u * fix * v_t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ImagePoint, StereoRig, WorldPoint};
    use crate::stereo;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;

    fn test_camera() -> CameraModel {
        CameraModel {
            f: 1200.0,
            r: Rotation3::from_euler_angles(0.15, -0.3, 0.08).into_inner(),
            t: Vector3::new(60.0, -35.0, 140.0),
        }
    }

    fn scene() -> (StereoRig, f64, f64, Vec<WorldPoint>) {
        let rig = StereoRig::new(125.0).unwrap();
        let points = vec![
            WorldPoint::new(80.0, 60.0, 500.0),
            WorldPoint::new(150.0, 120.0, 430.0),
            WorldPoint::new(110.0, 200.0, 560.0),
            WorldPoint::new(60.0, 90.0, 610.0),
            WorldPoint::new(170.0, 70.0, 480.0),
            WorldPoint::new(95.0, 160.0, 525.0),
        ];
        (rig, 900.0, 720.0, points)
    }

    fn observe(
        rig: &StereoRig,
        f1: f64,
        f2: f64,
        mono: &[CameraModel],
        points: &[WorldPoint],
    ) -> ObservationSet {
        let mut cams = vec![rig.camera1(f1), rig.camera2(f2)];
        cams.extend(mono.iter().cloned());
        let mut data = Vec::new();
        for cam in &cams {
            for p in points {
                data.push(cam.project(p).unwrap().point);
            }
        }
        ObservationSet::new(cams.len(), points.len(), data).unwrap()
    }

    #[test]
    fn design_row_matches_the_hand_computed_example() {
        // Stereo estimate (X, Y, Z/f1) = (1, 1, 2) with x observation 0.2.
        let base = vec![StereoPointEstimate {
            x: 1.0,
            y: 1.0,
            z_per_f1: 2.0,
            branch: stereo::TriangulationBranch::Primary,
        }];
        let data = vec![
            ImagePoint::new(0.5, 0.5),
            ImagePoint::new(-0.5, 0.5),
            ImagePoint::new(0.2, 0.7),
        ];
        let obs = ObservationSet::new(3, 1, data).unwrap();
        let sys = build_design_system(&obs, 2, &base).unwrap();
        let expected = [1.0, 1.0, 2.0, 1.0, -0.2, -0.2, -0.4];
        for (c, e) in expected.iter().enumerate() {
            assert_relative_eq!(sys.a_x[(0, c)], *e);
        }
        assert_relative_eq!(sys.b_x[0], 0.2);
        assert_relative_eq!(sys.b_y[0], 0.7);
        assert_relative_eq!(sys.a_y[(0, 5)], -0.7);
    }

    #[test]
    fn design_system_has_one_row_pair_per_point() {
        let (rig, f1, f2, points) = scene();
        let obs = observe(&rig, f1, f2, &[test_camera()], &points[..4]);
        let ratio = stereo::estimate_focal_ratio(&obs).unwrap();
        let base = stereo::triangulate_all(&obs, 125.0, ratio.rho).unwrap();
        let sys = build_design_system(&obs, 2, &base).unwrap();
        assert_eq!(sys.a_x.shape(), (4, 7));
        assert_eq!(sys.a_y.shape(), (4, 7));
        assert_eq!(sys.b_x.len(), 4);
    }

    #[test]
    fn rejects_points_on_the_y_axis_of_camera_one() {
        let base = vec![StereoPointEstimate {
            x: 0.0,
            y: 1.0,
            z_per_f1: 2.0,
            branch: stereo::TriangulationBranch::Primary,
        }];
        let data = vec![
            ImagePoint::new(0.0, 0.5),
            ImagePoint::new(-0.5, 0.5),
            ImagePoint::new(0.2, 0.7),
        ];
        let obs = ObservationSet::new(3, 1, data).unwrap();
        let err = build_design_system(&obs, 2, &base).unwrap_err();
        assert!(matches!(err, Error::DegenerateObservation { point: 0, .. }));
    }

    #[test]
    fn ground_truth_packing_satisfies_the_design_equations() {
        let (rig, f1, f2, points) = scene();
        let cam = test_camera();
        let obs = observe(&rig, f1, f2, &[cam.clone()], &points);
        let ratio = stereo::estimate_focal_ratio(&obs).unwrap();
        let base = stereo::triangulate_all(&obs, 125.0, ratio.rho).unwrap();
        let sys = build_design_system(&obs, 2, &base).unwrap();
        let params = pack_parameters(f1, &cam).unwrap();
        let (rx, ry) = sys.residual_norms(&params);
        assert!(rx <= 1e-9, "x residual {rx}");
        assert!(ry <= 1e-9, "y residual {ry}");
    }

    #[test]
    fn extraction_round_trips_the_packing() {
        let cam = test_camera();
        let params = pack_parameters(900.0, &cam).unwrap();
        let cams = extract_camera_parameters(&params, 900.0).unwrap();
        assert_eq!(cams.len(), 1);
        let got = &cams[0];
        assert_relative_eq!(got.f, cam.f, max_relative = 1e-9);
        assert!((got.r - cam.r).amax() <= 1e-9);
        assert_relative_eq!(got.t, cam.t, max_relative = 1e-9);
    }

    #[test]
    fn scaling_the_packing_rescales_only_tz() {
        let cam = test_camera();
        let params = pack_parameters(900.0, &cam).unwrap();
        let scaled = CombinedParameters {
            alpha: params.alpha * 2.0,
            beta: params.beta * 2.0,
        };
        let got = &extract_camera_parameters(&scaled, 900.0).unwrap()[0];
        assert_relative_eq!(got.f, cam.f, max_relative = 1e-9);
        assert!((got.r - cam.r).amax() <= 1e-9);
        assert_relative_eq!(got.t.x, cam.t.x, max_relative = 1e-9);
        assert_relative_eq!(got.t.y, cam.t.y, max_relative = 1e-9);
        assert_relative_eq!(got.t.z, cam.t.z / 2.0, max_relative = 1e-9);
    }

    #[test]
    fn extraction_projects_noisy_blocks_to_rotations() {
        let cam = test_camera();
        let mut params = pack_parameters(900.0, &cam).unwrap();
        params.alpha[0] *= 1.01;
        params.beta[1] *= 0.99;
        let got = &extract_camera_parameters(&params, 900.0).unwrap()[0];
        let defect = (got.r * got.r.transpose() - Matrix3::identity()).amax();
        assert!(defect <= 1e-12);
        assert!((got.r.determinant() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn packing_rejects_tiny_tz() {
        let mut cam = test_camera();
        cam.t.z = 1e-15;
        assert!(pack_parameters(900.0, &cam).is_err());
    }

    #[test]
    fn joint_system_solution_matches_a_consistent_packing() {
        let (rig, f1, f2, points) = scene();
        let cam = test_camera();
        let obs = observe(&rig, f1, f2, &[cam.clone()], &points);
        let ratio = stereo::estimate_focal_ratio(&obs).unwrap();
        let base = stereo::triangulate_all(&obs, 125.0, ratio.rho).unwrap();
        let sys = build_design_system(&obs, 2, &base).unwrap();
        let (g, b) = sys.joint_system();
        assert_eq!(g.shape(), (12, 11));
        let params = pack_parameters(f1, &cam).unwrap();
        let mut gamma = DVector::zeros(11);
        for c in 0..4 {
            gamma[c] = params.alpha[c];
            gamma[4 + c] = params.beta[c];
        }
        for c in 0..3 {
            gamma[8 + c] = params.alpha[4 + c];
        }
        assert!((g * &gamma - b).norm() <= 1e-8);
        let back = joint_to_params(&gamma);
        assert_eq!(back.alpha, params.alpha);
        assert_eq!(back.beta, params.beta);
    }
}
