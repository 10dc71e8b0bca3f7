//! Synthetic scene and observation generation.
//!
//! Scenes are the test oracle for the whole pipeline: a stereo pair at the
//! origin, monocular cameras placed by rejection sampling so that every
//! point stays visible everywhere, points drawn uniformly from a box, and
//! optional isotropic Gaussian pixel noise. Everything is deterministic
//! given the seed.

use nalgebra::{Rotation3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    feasibility, CameraModel, ImagePoint, ObservationSet, StereoRig, WorldPoint,
};

/// Rejection-sampling budget per point.
const MAX_POINT_ATTEMPTS: usize = 10_000;

/// Rejection-sampling budget per monocular camera.
const MAX_CAMERA_ATTEMPTS: usize = 5_000;

/// Seed salt separating the noise stream from the scene stream.
const NOISE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Everything that defines a synthetic scene. Ranges are inclusive-exclusive
/// `[lo, hi)` pairs; a collapsed range (`lo == hi`) pins the value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// Total cameras, the stereo pair included.
    pub cameras: usize,
    pub points: usize,
    pub baseline_mm: f64,
    /// Point-cloud envelope: X, Y, Z extents, mm.
    pub box_mm: [f64; 3],
    /// Envelope centre in the first camera's frame, mm.
    pub box_center_mm: [f64; 3],
    /// Points keep `|Y| >=` this margin so the stereo closed forms stay
    /// well-conditioned; set 0 to permit degenerate points.
    pub y_margin_mm: f64,
    pub f1_px: [f64; 2],
    pub f2_px: [f64; 2],
    pub mono_f_px: [f64; 2],
    /// Monocular rotation-angle bounds, degrees, about a uniform random
    /// axis.
    pub rotation_deg: [f64; 2],
    pub center_x_mm: [f64; 2],
    pub center_y_mm: [f64; 2],
    pub center_z_mm: [f64; 2],
    /// Half-extents of the visibility window, pixels.
    pub image_half_px: [f64; 2],
    pub noise_px: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            cameras: 4,
            points: 57,
            baseline_mm: 125.0,
            box_mm: [98.0, 168.0, 75.0],
            box_center_mm: [125.0, 140.0, 520.0],
            y_margin_mm: 1.0,
            f1_px: [850.0, 950.0],
            f2_px: [590.0, 680.0],
            mono_f_px: [1100.0, 1300.0],
            rotation_deg: [5.0, 45.0],
            center_x_mm: [-150.0, 350.0],
            center_y_mm: [-50.0, 300.0],
            center_z_mm: [-120.0, 120.0],
            image_half_px: [640.0, 512.0],
            noise_px: 0.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let feas = feasibility(self.cameras, self.points);
        if !feas.feasible {
            return Err(Error::InfeasibleNetwork {
                cameras: self.cameras,
                points: self.points,
                slack: feas.slack,
            });
        }
        if !self.baseline_mm.is_finite() || self.baseline_mm <= 0.0 {
            return Err(Error::InvalidParameters(format!(
                "baseline_mm = {} must be positive",
                self.baseline_mm
            )));
        }
        for (axis, v) in ["x", "y", "z"].iter().zip(self.box_mm) {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParameters(format!(
                    "box_mm {axis} extent {v} must be positive"
                )));
            }
        }
        if !self.box_center_mm.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameters(
                "box_center_mm must be finite".into(),
            ));
        }
        if !self.y_margin_mm.is_finite() || self.y_margin_mm < 0.0 {
            return Err(Error::InvalidParameters(format!(
                "y_margin_mm = {} must be non-negative",
                self.y_margin_mm
            )));
        }
        let ranges = [
            ("f1_px", self.f1_px, true),
            ("f2_px", self.f2_px, true),
            ("mono_f_px", self.mono_f_px, true),
            ("rotation_deg", self.rotation_deg, false),
            ("center_x_mm", self.center_x_mm, false),
            ("center_y_mm", self.center_y_mm, false),
            ("center_z_mm", self.center_z_mm, false),
        ];
        for (name, [lo, hi], positive) in ranges {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidParameters(format!(
                    "{name} range [{lo}, {hi}] is empty or not finite"
                )));
            }
            if positive && lo <= 0.0 {
                return Err(Error::InvalidParameters(format!(
                    "{name} range [{lo}, {hi}] must be positive"
                )));
            }
        }
        if self.rotation_deg[0] < 0.0 || self.rotation_deg[1] > 180.0 {
            return Err(Error::InvalidParameters(format!(
                "rotation_deg range [{}, {}] must lie in [0, 180]",
                self.rotation_deg[0], self.rotation_deg[1]
            )));
        }
        for (axis, v) in ["x", "y"].iter().zip(self.image_half_px) {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParameters(format!(
                    "image_half_px {axis} = {v} must be positive"
                )));
            }
        }
        if !self.noise_px.is_finite() || self.noise_px < 0.0 {
            return Err(Error::InvalidParameters(format!(
                "noise_px = {} must be non-negative",
                self.noise_px
            )));
        }
        Ok(())
    }
}

/// A generated scene: the true parameters and both observation variants.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub rig: StereoRig,
    pub f1: f64,
    pub f2: f64,
    /// All cameras in order: the stereo pair, then the monocular cameras.
    pub cameras: Vec<CameraModel>,
    pub points: Vec<WorldPoint>,
    /// Exact projections.
    pub observations: ObservationSet,
    /// Projections with the spec's pixel noise; equals `observations` when
    /// `noise_px` is zero.
    pub noisy_observations: ObservationSet,
}

impl GroundTruth {
    pub fn monocular_cameras(&self) -> &[CameraModel] {
        &self.cameras[2..]
    }
}

fn sample_range(rng: &mut ChaCha20Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn visible(camera: &CameraModel, p: &WorldPoint, half: [f64; 2]) -> bool {
    match camera.project(p) {
        Ok(proj) => {
            proj.depth > 0.0 && proj.point.x.abs() <= half[0] && proj.point.y.abs() <= half[1]
        }
        Err(_) => false,
    }
}

fn sample_point(rng: &mut ChaCha20Rng, spec: &SceneSpec, stereo: &[CameraModel]) -> Result<WorldPoint> {
    for _ in 0..MAX_POINT_ATTEMPTS {
        let mut c = [0.0; 3];
        for a in 0..3 {
            c[a] = spec.box_center_mm[a]
                + spec.box_mm[a] * (rng.random_range(0.0..1.0f64) - 0.5);
        }
        let p = WorldPoint::new(c[0], c[1], c[2]);
        if p.y.abs() < spec.y_margin_mm {
            continue;
        }
        if stereo.iter().all(|cam| visible(cam, &p, spec.image_half_px)) {
            return Ok(p);
        }
    }
    Err(Error::PointGenerationFailed {
        attempts: MAX_POINT_ATTEMPTS,
    })
}

fn sample_camera(
    rng: &mut ChaCha20Rng,
    spec: &SceneSpec,
    index: usize,
    points: &[WorldPoint],
) -> Result<CameraModel> {
    for _ in 0..MAX_CAMERA_ATTEMPTS {
        let f = sample_range(rng, spec.mono_f_px);
        let axis = loop {
            let v = Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            let n = v.norm();
            if n > 1e-6 {
                break v / n;
            }
        };
        let angle = sample_range(rng, spec.rotation_deg).to_radians();
        let r = Rotation3::new(axis * angle).into_inner();
        let center = Vector3::new(
            sample_range(rng, spec.center_x_mm),
            sample_range(rng, spec.center_y_mm),
            sample_range(rng, spec.center_z_mm),
        );
        let camera = CameraModel {
            f,
            r,
            t: -(r * center),
        };
        if points.iter().all(|p| visible(&camera, p, spec.image_half_px)) {
            return Ok(camera);
        }
    }
    Err(Error::GenerationFailed {
        camera: index,
        attempts: MAX_CAMERA_ATTEMPTS,
    })
}

/// Generates a scene. Deterministic given `spec.seed`; the noisy variant
/// draws from an independent salted stream so it shares the scene with the
/// noiseless one.
pub fn generate(spec: &SceneSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let rig = StereoRig::new(spec.baseline_mm)?;
    let f1 = sample_range(&mut rng, spec.f1_px);
    let f2 = sample_range(&mut rng, spec.f2_px);
    let stereo = [rig.camera1(f1), rig.camera2(f2)];

    let mut points = Vec::with_capacity(spec.points);
    for _ in 0..spec.points {
        points.push(sample_point(&mut rng, spec, &stereo)?);
    }

    let mut cameras = stereo.to_vec();
    for index in 2..spec.cameras {
        cameras.push(sample_camera(&mut rng, spec, index, &points)?);
    }

    let mut data = Vec::with_capacity(spec.cameras * spec.points);
    for camera in &cameras {
        for p in &points {
            data.push(camera.project(p)?.point);
        }
    }
    let observations = ObservationSet::new(spec.cameras, spec.points, data)?;
    let noisy_observations = add_noise(
        &observations,
        spec.noise_px,
        spec.seed ^ NOISE_SEED_SALT,
    )?;

    Ok(GroundTruth {
        rig,
        f1,
        f2,
        cameras,
        points,
        observations,
        noisy_observations,
    })
}

/// Adds isotropic zero-mean Gaussian noise to every coordinate. `sigma` of
/// zero returns the input unchanged.
pub fn add_noise(obs: &ObservationSet, sigma: f64, seed: u64) -> Result<ObservationSet> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidParameters(format!(
            "noise sigma {sigma} px must be non-negative"
        )));
    }
    if sigma == 0.0 {
        return Ok(obs.clone());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = obs
        .iter()
        .map(|(_, _, p)| {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            ImagePoint::new(p.x + sigma * dx, p.y + sigma * dy)
        })
        .collect();
    ObservationSet::new(obs.cameras(), obs.points(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotation_angle_deg(r: &nalgebra::Matrix3<f64>) -> f64 {
        (((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos().to_degrees()
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SceneSpec {
            noise_px: 0.7,
            seed: 42,
            ..SceneSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.f1.to_bits(), b.f1.to_bits());
        assert_eq!(a.f2.to_bits(), b.f2.to_bits());
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert_eq!(pa.x.to_bits(), pb.x.to_bits());
        }
        for ((_, _, pa), (_, _, pb)) in a
            .noisy_observations
            .iter()
            .zip(b.noisy_observations.iter())
        {
            assert_eq!(pa.x.to_bits(), pb.x.to_bits());
            assert_eq!(pa.y.to_bits(), pb.y.to_bits());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate(&SceneSpec::default()).unwrap();
        let b = generate(&SceneSpec {
            seed: 1,
            ..SceneSpec::default()
        })
        .unwrap();
        assert_ne!(a.f1.to_bits(), b.f1.to_bits());
    }

    #[test]
    fn zero_noise_copies_the_observations() {
        let truth = generate(&SceneSpec::default()).unwrap();
        for ((_, _, a), (_, _, b)) in truth
            .observations
            .iter()
            .zip(truth.noisy_observations.iter())
        {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
        }
    }

    #[test]
    fn observations_match_projections_exactly() {
        let truth = generate(&SceneSpec {
            seed: 3,
            ..SceneSpec::default()
        })
        .unwrap();
        for (c, j, p) in truth.observations.iter() {
            let proj = truth.cameras[c].project(&truth.points[j]).unwrap().point;
            assert_eq!(p.x.to_bits(), proj.x.to_bits());
            assert_eq!(p.y.to_bits(), proj.y.to_bits());
        }
    }

    #[test]
    fn all_points_are_visible_and_in_front() {
        let spec = SceneSpec {
            seed: 9,
            ..SceneSpec::default()
        };
        let truth = generate(&spec).unwrap();
        for camera in &truth.cameras {
            for p in &truth.points {
                let proj = camera.project(p).unwrap();
                assert!(proj.depth > 0.0);
                assert!(proj.point.x.abs() <= spec.image_half_px[0]);
                assert!(proj.point.y.abs() <= spec.image_half_px[1]);
            }
        }
    }

    #[test]
    fn points_fill_the_requested_box() {
        let spec = SceneSpec {
            points: 400,
            seed: 11,
            ..SceneSpec::default()
        };
        let truth = generate(&spec).unwrap();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &truth.points {
            for (a, v) in [p.x, p.y, p.z].into_iter().enumerate() {
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        for a in 0..3 {
            let extent = hi[a] - lo[a];
            assert!(extent <= spec.box_mm[a] + 1e-9);
            assert!(
                extent >= 0.9 * spec.box_mm[a],
                "axis {a}: extent {extent} vs box {}",
                spec.box_mm[a]
            );
            assert!(lo[a] >= spec.box_center_mm[a] - spec.box_mm[a] / 2.0 - 1e-9);
            assert!(hi[a] <= spec.box_center_mm[a] + spec.box_mm[a] / 2.0 + 1e-9);
        }
    }

    #[test]
    fn y_margin_is_respected() {
        let spec = SceneSpec {
            box_center_mm: [125.0, 0.0, 520.0],
            points: 200,
            seed: 5,
            ..SceneSpec::default()
        };
        let truth = generate(&spec).unwrap();
        assert!(truth.points.iter().all(|p| p.y.abs() >= spec.y_margin_mm));
        assert!(truth.points.iter().any(|p| p.y < 0.0));
    }

    #[test]
    fn monocular_rotations_stay_in_the_requested_band() {
        let spec = SceneSpec {
            rotation_deg: [10.0, 25.0],
            seed: 13,
            ..SceneSpec::default()
        };
        let truth = generate(&spec).unwrap();
        for camera in truth.monocular_cameras() {
            let angle = rotation_angle_deg(&camera.r);
            assert!(
                (10.0 - 1e-9..=25.0 + 1e-9).contains(&angle),
                "angle {angle}"
            );
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        let small = SceneSpec {
            cameras: 2,
            ..SceneSpec::default()
        };
        assert!(matches!(
            generate(&small),
            Err(Error::InfeasibleNetwork { cameras: 2, .. })
        ));
        let negative_noise = SceneSpec {
            noise_px: -0.5,
            ..SceneSpec::default()
        };
        assert!(generate(&negative_noise).is_err());
        let empty_range = SceneSpec {
            f1_px: [900.0, 800.0],
            ..SceneSpec::default()
        };
        assert!(generate(&empty_range).is_err());
    }

    #[test]
    fn noise_standard_deviation_matches_sigma() {
        let n = 2_500;
        let data = vec![ImagePoint::new(0.0, 0.0); 2 * n];
        let obs = ObservationSet::new(2, n, data).unwrap();
        let noisy = add_noise(&obs, 0.5, 123).unwrap();
        let samples: Vec<f64> = noisy
            .iter()
            .flat_map(|(_, _, p)| [p.x, p.y])
            .collect();
        assert_eq!(samples.len(), 10_000);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / samples.len() as f64;
        let sd = var.sqrt();
        assert!((0.48..=0.52).contains(&sd), "empirical sigma {sd}");
    }

    #[test]
    fn noise_seeds_are_independent() {
        let truth = generate(&SceneSpec::default()).unwrap();
        let a = add_noise(&truth.observations, 0.5, 1).unwrap();
        let b = add_noise(&truth.observations, 0.5, 2).unwrap();
        let same = a
            .iter()
            .zip(b.iter())
            .all(|((_, _, pa), (_, _, pb))| pa.x == pb.x && pa.y == pb.y);
        assert!(!same);
    }
}
