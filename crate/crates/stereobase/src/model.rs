//! Camera and observation primitives shared by the whole pipeline.
//!
//! Conventions, used everywhere without further comment:
//!
//! * The world frame is the frame of the first stereo camera; units are
//!   millimetres.
//! * Image coordinates are principal-point-centred pixels (the optical axis
//!   pierces the image at the origin).
//! * A camera maps a world point `P` through
//!   `depth * [x, y, 1]^T = diag(f, f, 1) * (R * P + t)`,
//!   so `depth` is the coordinate of `P` along the camera's optical axis.
//! * Camera indices are 0-based in code; cameras 0 and 1 are the stereo pair
//!   and camera 1 sits at world position `(baseline, 0, 0)` with identity
//!   rotation. File formats use 1-based camera ids.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Depth cutoff below which projection is rejected, in millimetres.
pub const DEPTH_EPSILON_MM: f64 = 1e-9;

/// A detected 2D point in principal-point-centred pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
}

impl ImagePoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// A 3D point in the world frame, in millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn coords(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// Result of projecting a world point: the image point plus the depth along
/// the optical axis, which the solver uses for positive-depth filtering.
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub point: ImagePoint,
    pub depth: f64,
}

/// Pinhole camera with square pixels, zero skew, and the principal point at
/// the image origin. `f` is the focal length in pixels; `r` and `t` map world
/// coordinates into the camera frame as `R * P + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub f: f64,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl CameraModel {
    pub fn new(f: f64, r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let cam = Self { f, r, t };
        cam.validate(1e-9)?;
        Ok(cam)
    }

    /// Checks f > 0 and that `r` is a rotation within `rot_tol` (elementwise
    /// on `R * R^T - I`, plus a positive determinant).
    pub fn validate(&self, rot_tol: f64) -> Result<()> {
        if !self.f.is_finite() || self.f <= 0.0 {
            return Err(Error::InvalidCamera(format!(
                "focal length {} px is not positive and finite",
                self.f
            )));
        }
        if self.t.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("translation is not finite".into()));
        }
        let defect = (self.r * self.r.transpose() - Matrix3::identity()).amax();
        if !defect.is_finite() || defect > rot_tol {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal (defect {defect:.3e}, tolerance {rot_tol:.0e})"
            )));
        }
        if self.r.determinant() < 0.0 {
            return Err(Error::InvalidCamera(
                "rotation has negative determinant".into(),
            ));
        }
        Ok(())
    }

    pub fn project(&self, p: &WorldPoint) -> Result<Projection> {
        self.project_with_epsilon(p, DEPTH_EPSILON_MM)
    }

    pub fn project_with_epsilon(&self, p: &WorldPoint, epsilon: f64) -> Result<Projection> {
        let q = self.r * p.coords() + self.t;
        let depth = q.z;
        if depth.abs() < epsilon {
            return Err(Error::DepthNearZero { depth, epsilon });
        }
        Ok(Projection {
            point: ImagePoint::new(self.f * q.x / depth, self.f * q.y / depth),
            depth,
        })
    }

    /// Camera centre in world coordinates, `-R^T * t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }
}

/// The known-scale anchor of the network: two cameras with identity rotation
/// whose centres are `baseline_mm` apart along the world X axis.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StereoRig {
    pub baseline_mm: f64,
}

impl StereoRig {
    pub fn new(baseline_mm: f64) -> Result<Self> {
        if !baseline_mm.is_finite() || baseline_mm <= 0.0 {
            return Err(Error::InvalidParameters(format!(
                "baseline {baseline_mm} mm is not positive and finite"
            )));
        }
        Ok(Self { baseline_mm })
    }

    /// First stereo camera: the world frame itself.
    pub fn camera1(&self, f1: f64) -> CameraModel {
        CameraModel {
            f: f1,
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    /// Second stereo camera, centred at `(baseline, 0, 0)`.
    pub fn camera2(&self, f2: f64) -> CameraModel {
        CameraModel {
            f: f2,
            r: Matrix3::identity(),
            t: Vector3::new(-self.baseline_mm, 0.0, 0.0),
        }
    }
}

/// A complete camera-by-point grid of image observations: every camera sees
/// every point. Stored camera-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    cameras: usize,
    points: usize,
    data: Vec<ImagePoint>,
}

impl ObservationSet {
    /// `data` must hold `cameras * points` finite entries, camera-major.
    pub fn new(cameras: usize, points: usize, data: Vec<ImagePoint>) -> Result<Self> {
        if cameras < 2 {
            return Err(Error::InvalidObservations(format!(
                "{cameras} cameras; the stereo pair alone needs 2"
            )));
        }
        if points == 0 {
            return Err(Error::InvalidObservations("no points".into()));
        }
        if data.len() != cameras * points {
            return Err(Error::InvalidObservations(format!(
                "{} entries for a {cameras} x {points} grid",
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidObservations(format!(
                "non-finite entry for camera {}, point {}",
                k / points,
                k % points
            )));
        }
        Ok(Self {
            cameras,
            points,
            data,
        })
    }

    pub fn cameras(&self) -> usize {
        self.cameras
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn get(&self, camera: usize, point: usize) -> ImagePoint {
        assert!(camera < self.cameras && point < self.points);
        self.data[camera * self.points + point]
    }

    /// All observations of one camera, indexed by point.
    pub fn row(&self, camera: usize) -> &[ImagePoint] {
        assert!(camera < self.cameras);
        &self.data[camera * self.points..(camera + 1) * self.points]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, ImagePoint)> + '_ {
        self.data
            .iter()
            .enumerate()
            .map(move |(k, p)| (k / self.points, k % self.points, *p))
    }
}

/// Whether a network of `cameras` cameras observing `points` common points
/// carries enough equations to determine every unknown.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Feasibility {
    pub feasible: bool,
    /// Equation surplus `(M - 2) * (2N - 7) - 1`; negative when the network
    /// is underdetermined.
    pub slack: i64,
}

/// Counts unknowns against equations. Each camera beyond the stereo pair
/// contributes `2N` equations against 7 own unknowns, and the shared focal
/// length adds one more unknown, giving `(M - 2) * (2N - 7) >= 1`. Together
/// with the trivial lower bounds this is equivalent to M >= 3 and N >= 4.
pub fn feasibility(cameras: usize, points: usize) -> Feasibility {
    let m = cameras as i64;
    let n = points as i64;
    let slack = (m - 2) * (2 * n - 7) - 1;
    Feasibility {
        feasible: cameras >= 3 && points >= 4,
        slack,
    }
}
