//! File formats: correspondence CSV, calibration and ground-truth JSON,
//! reprojection CSV, evaluation and drift summaries, and ASCII PLY clouds.
//!
//! Every reader validates what it loads; every writer emits deterministic
//! bytes (stable field order, shortest round-trip floats, trailing newline)
//! so identical runs produce identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CameraModel, ImagePoint, ObservationSet, StereoRig, WorldPoint};
use crate::report::{ParameterErrorReport, ReprojectionReport, ReprojectionSummary, ScaleReport};
use crate::scene::{GroundTruth, SceneSpec};
use crate::solver::{
    BundleOutcome, CalibrationResult, DriftReport, SolveDiagnostics, SolvedCamera,
};
use crate::stereo::{self, FocalRatio};

pub const OBSERVATIONS_HEADER: &str = "camera_id,point_id,x,y";
pub const REPROJECTION_HEADER: &str = "camera_id,point_id,error_px";
pub const SCHEMA_VERSION: u32 = 1;

fn csv_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes the complete observation grid as CSV with 1-based camera and point
/// ids, camera-major.
pub fn write_observations(path: &Path, obs: &ObservationSet) -> Result<()> {
    let mut text = String::from(OBSERVATIONS_HEADER);
    text.push('\n');
    for c in 0..obs.cameras() {
        for j in 0..obs.points() {
            let p = obs.get(c, j);
            writeln!(text, "{},{},{},{}", c + 1, j + 1, p.x, p.y).expect("string write");
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Reads a correspondence CSV. Rows may come in any order but must cover the
/// full camera x point grid exactly once. When `principal_point` is given it
/// is subtracted from every pixel, converting corner-origin coordinates to
/// the principal-point-centred frame the solver expects.
pub fn read_observations(
    path: &Path,
    principal_point: Option<[f64; 2]>,
) -> Result<ObservationSet> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end_matches('\r') == OBSERVATIONS_HEADER => {}
        Some((_, header)) => {
            return Err(csv_err(
                path,
                1,
                format!("expected header '{OBSERVATIONS_HEADER}', found '{header}'"),
            ))
        }
        None => return Err(csv_err(path, 1, "empty file, expected a header")),
    }

    let mut rows: Vec<(usize, usize, ImagePoint)> = Vec::new();
    let mut max_camera = 0usize;
    let mut max_point = 0usize;
    for (index, raw) in lines {
        let line = index + 1;
        let row = raw.trim_end_matches('\r');
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 4 {
            return Err(csv_err(
                path,
                line,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let camera: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| csv_err(path, line, format!("invalid camera_id '{}'", fields[0])))?;
        let point: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| csv_err(path, line, format!("invalid point_id '{}'", fields[1])))?;
        if camera == 0 || point == 0 {
            return Err(csv_err(path, line, "camera_id and point_id are 1-based"));
        }
        let x: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| csv_err(path, line, format!("invalid x '{}'", fields[2])))?;
        let y: f64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| csv_err(path, line, format!("invalid y '{}'", fields[3])))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(csv_err(path, line, "pixel coordinates must be finite"));
        }
        max_camera = max_camera.max(camera);
        max_point = max_point.max(point);
        rows.push((camera - 1, point - 1, ImagePoint::new(x, y)));
    }
    if rows.is_empty() {
        return Err(csv_err(path, 1, "no observation rows"));
    }

    let mut grid = vec![None; max_camera * max_point];
    let mut line_of = vec![0usize; max_camera * max_point];
    let mut count = 0usize;
    // Replay in file order to report the duplicate's line number.
    let data_lines = text
        .lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim_end_matches('\r').is_empty());
    for ((c, j, p), (index, _)) in rows.into_iter().zip(data_lines) {
        let slot = c * max_point + j;
        if grid[slot].is_some() {
            return Err(csv_err(
                path,
                index + 1,
                format!(
                    "duplicate observation for camera {} point {} (first at line {})",
                    c + 1,
                    j + 1,
                    line_of[slot]
                ),
            ));
        }
        grid[slot] = Some(p);
        line_of[slot] = index + 1;
        count += 1;
    }
    if count != max_camera * max_point {
        return Err(csv_err(
            path,
            1,
            format!(
                "incomplete grid: {} rows for {} cameras x {} points",
                count, max_camera, max_point
            ),
        ));
    }

    let shift = principal_point.unwrap_or([0.0, 0.0]);
    let data: Vec<ImagePoint> = grid
        .into_iter()
        .map(|p| {
            let p = p.expect("grid is complete");
            ImagePoint::new(p.x - shift[0], p.y - shift[1])
        })
        .collect();
    ObservationSet::new(max_camera, max_point, data)
}

/// One camera in a JSON file: row-major rotation, translation in mm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraRecord {
    /// 1-based camera id.
    pub id: usize,
    pub f_px: f64,
    pub r: [f64; 9],
    pub t_mm: [f64; 3],
    pub branch_label: Option<String>,
}

impl CameraRecord {
    pub fn from_model(id: usize, camera: &CameraModel, branch_label: Option<String>) -> Self {
        let m = &camera.r;
        CameraRecord {
            id,
            f_px: camera.f,
            r: [
                m[(0, 0)],
                m[(0, 1)],
                m[(0, 2)],
                m[(1, 0)],
                m[(1, 1)],
                m[(1, 2)],
                m[(2, 0)],
                m[(2, 1)],
                m[(2, 2)],
            ],
            t_mm: [camera.t.x, camera.t.y, camera.t.z],
            branch_label,
        }
    }

    pub fn to_model(&self) -> Result<CameraModel> {
        let camera = CameraModel {
            f: self.f_px,
            r: Matrix3::from_row_slice(&self.r),
            t: nalgebra::Vector3::new(self.t_mm[0], self.t_mm[1], self.t_mm[2]),
        };
        camera
            .validate(1e-6)
            .map_err(|e| Error::InvalidCalibration(format!("camera {}: {e}", self.id)))?;
        Ok(camera)
    }
}

fn check_records(cameras: &[CameraRecord], minimum: usize) -> Result<()> {
    if cameras.len() < minimum {
        return Err(Error::InvalidCalibration(format!(
            "{} cameras listed, need at least {minimum}",
            cameras.len()
        )));
    }
    for (i, record) in cameras.iter().enumerate() {
        if record.id != i + 1 {
            return Err(Error::InvalidCalibration(format!(
                "camera ids must be 1..={} in order, found id {} at position {}",
                cameras.len(),
                record.id,
                i + 1
            )));
        }
        record.to_model()?;
    }
    Ok(())
}

/// A solved calibration on disk. Cameras 1 and 2 are the stereo pair at
/// their fixed poses; the rest are the solved monocular cameras.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub schema_version: u32,
    pub baseline_mm: f64,
    pub f1_px: f64,
    pub focal_ratio: f64,
    pub cameras: Vec<CameraRecord>,
    pub objective_value: f64,
    pub diagnostics: SolveDiagnostics,
}

impl CalibrationFile {
    pub fn from_result(result: &CalibrationResult, rig: &StereoRig) -> Self {
        let mut cameras = vec![
            CameraRecord::from_model(1, &rig.camera1(result.f1), None),
            CameraRecord::from_model(2, &rig.camera2(result.ratio.rho * result.f1), None),
        ];
        for (i, solved) in result.cameras.iter().enumerate() {
            cameras.push(CameraRecord::from_model(
                i + 3,
                &solved.camera,
                solved.branch_label.clone(),
            ));
        }
        CalibrationFile {
            schema_version: SCHEMA_VERSION,
            baseline_mm: rig.baseline_mm,
            f1_px: result.f1,
            focal_ratio: result.ratio.rho,
            cameras,
            objective_value: result.objective_value,
            diagnostics: result.diagnostics.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidCalibration(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.baseline_mm.is_finite() && self.baseline_mm > 0.0) {
            return Err(Error::InvalidCalibration(format!(
                "baseline_mm = {} must be positive",
                self.baseline_mm
            )));
        }
        if !(self.f1_px.is_finite() && self.f1_px > 0.0) {
            return Err(Error::InvalidCalibration(format!(
                "f1_px = {} must be positive",
                self.f1_px
            )));
        }
        if !(self.focal_ratio.is_finite() && self.focal_ratio > 0.0) {
            return Err(Error::InvalidCalibration(format!(
                "focal_ratio = {} must be positive",
                self.focal_ratio
            )));
        }
        check_records(&self.cameras, 3)
    }

    /// Rebuilds the in-memory calibration against an observation set. The
    /// cloud is re-derived from the stereo rows at the stored focal length
    /// and ratio, exactly as the solver produced it.
    pub fn into_result(&self, obs: &ObservationSet) -> Result<(StereoRig, CalibrationResult)> {
        if self.cameras.len() != obs.cameras() {
            return Err(Error::DimensionMismatch(format!(
                "calibration lists {} cameras but the observations have {}",
                self.cameras.len(),
                obs.cameras()
            )));
        }
        let rig = StereoRig::new(self.baseline_mm)?;
        let cloud = stereo::reconstruct_cloud_with(obs, self.baseline_mm, self.f1_px, self.focal_ratio)?;
        let cameras = self.cameras[2..]
            .iter()
            .map(|record| {
                Ok(SolvedCamera {
                    camera: record.to_model()?,
                    branch_label: record.branch_label.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let result = CalibrationResult {
            f1: self.f1_px,
            ratio: FocalRatio {
                rho: self.focal_ratio,
                per_point: vec![],
                dispersion: 0.0,
            },
            cameras,
            cloud,
            objective_value: self.objective_value,
            per_point_residuals: vec![],
            diagnostics: self.diagnostics.clone(),
        };
        Ok((rig, result))
    }
}

pub fn write_calibration(path: &Path, file: &CalibrationFile) -> Result<()> {
    write_json(path, file)
}

pub fn read_calibration(path: &Path) -> Result<CalibrationFile> {
    let file: CalibrationFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    file.validate()?;
    Ok(file)
}

/// A simulated scene on disk: the generating spec, the true cameras, and the
/// true points. Observations are not stored; the noiseless ones are exact
/// projections and can be regenerated on load.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub schema_version: u32,
    pub spec: SceneSpec,
    pub baseline_mm: f64,
    pub f1_px: f64,
    pub f2_px: f64,
    pub cameras: Vec<CameraRecord>,
    pub points_mm: Vec<[f64; 3]>,
}

impl GroundTruthFile {
    pub fn from_truth(truth: &GroundTruth, spec: &SceneSpec) -> Self {
        GroundTruthFile {
            schema_version: SCHEMA_VERSION,
            spec: spec.clone(),
            baseline_mm: truth.rig.baseline_mm,
            f1_px: truth.f1,
            f2_px: truth.f2,
            cameras: truth
                .cameras
                .iter()
                .enumerate()
                .map(|(i, c)| CameraRecord::from_model(i + 1, c, None))
                .collect(),
            points_mm: truth.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidCalibration(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.points_mm.is_empty() {
            return Err(Error::InvalidCalibration("no points listed".into()));
        }
        check_records(&self.cameras, 3)
    }

    /// Rebuilds the scene, projecting the stored points through the stored
    /// cameras to recover the noiseless observations.
    pub fn into_truth(&self) -> Result<GroundTruth> {
        let rig = StereoRig::new(self.baseline_mm)?;
        let cameras = self
            .cameras
            .iter()
            .map(|r| r.to_model())
            .collect::<Result<Vec<_>>>()?;
        let points: Vec<WorldPoint> = self
            .points_mm
            .iter()
            .map(|p| WorldPoint::new(p[0], p[1], p[2]))
            .collect();
        let mut data = Vec::with_capacity(cameras.len() * points.len());
        for camera in &cameras {
            for point in &points {
                data.push(camera.project(point)?.point);
            }
        }
        let observations = ObservationSet::new(cameras.len(), points.len(), data)?;
        Ok(GroundTruth {
            rig,
            f1: self.f1_px,
            f2: self.f2_px,
            cameras,
            points,
            noisy_observations: observations.clone(),
            observations,
        })
    }
}

pub fn write_ground_truth(path: &Path, file: &GroundTruthFile) -> Result<()> {
    write_json(path, file)
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruthFile> {
    let file: GroundTruthFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    file.validate()?;
    Ok(file)
}

/// Writes the cloud as ASCII PLY with single-precision vertices. The header
/// records the baseline and focal length the reconstruction used.
pub fn write_cloud_ply(path: &Path, cloud: &[WorldPoint], baseline_mm: f64, f1_px: f64) -> Result<()> {
    let mut text = String::new();
    text.push_str("ply\n");
    text.push_str("format ascii 1.0\n");
    writeln!(text, "comment baseline_mm {} f1_px {}", baseline_mm, f1_px).expect("string write");
    writeln!(text, "element vertex {}", cloud.len()).expect("string write");
    text.push_str("property float x\n");
    text.push_str("property float y\n");
    text.push_str("property float z\n");
    text.push_str("end_header\n");
    for p in cloud {
        writeln!(text, "{} {} {}", p.x as f32, p.y as f32, p.z as f32).expect("string write");
    }
    fs::write(path, text)?;
    Ok(())
}

/// Reads an ASCII PLY written by [`write_cloud_ply`].
pub fn read_cloud_ply(path: &Path) -> Result<Vec<WorldPoint>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let mut vertices: Option<usize> = None;
    let bad = |message: &str| Error::InvalidCalibration(format!("{}: {message}", path.display()));
    if lines.next() != Some("ply") {
        return Err(bad("not a PLY file"));
    }
    if lines.next() != Some("format ascii 1.0") {
        return Err(bad("expected 'format ascii 1.0'"));
    }
    for line in lines.by_ref() {
        if line == "end_header" {
            break;
        }
        if let Some(rest) = line.strip_prefix("element vertex ") {
            vertices = Some(
                rest.trim()
                    .parse()
                    .map_err(|_| bad("invalid vertex count"))?,
            );
        }
    }
    let count = vertices.ok_or_else(|| bad("missing 'element vertex'"))?;
    let mut cloud = Vec::with_capacity(count);
    for line in lines.take(count) {
        let mut fields = line.split_whitespace();
        let mut next = || -> Result<f64> {
            fields
                .next()
                .ok_or_else(|| bad("vertex row with fewer than 3 values"))?
                .parse::<f32>()
                .map(f64::from)
                .map_err(|_| bad("invalid vertex coordinate"))
        };
        cloud.push(WorldPoint::new(next()?, next()?, next()?));
    }
    if cloud.len() != count {
        return Err(bad("fewer vertex rows than the header declares"));
    }
    Ok(cloud)
}

/// Writes per-observation reprojection errors as CSV, camera-major with
/// 1-based ids. Points behind a camera are written as NaN.
pub fn write_reprojection_csv(path: &Path, report: &ReprojectionReport) -> Result<()> {
    let mut text = String::from(REPROJECTION_HEADER);
    text.push('\n');
    for (c, errors) in report.errors.iter().enumerate() {
        for (j, e) in errors.iter().enumerate() {
            writeln!(text, "{},{},{}", c + 1, j + 1, e).expect("string write");
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Evaluation summary: reprojection aggregates, cloud scale, and parameter
/// errors when ground truth was supplied.
#[derive(Clone, Debug, Serialize)]
pub struct EvaluationSummary {
    pub schema_version: u32,
    pub reprojection: ReprojectionSummary,
    pub scale: ScaleReport,
    pub parameters: Option<ParameterErrorReport>,
}

pub fn write_evaluation(path: &Path, summary: &EvaluationSummary) -> Result<()> {
    write_json(path, summary)
}

/// Outcome of the unconstrained refinement: convergence state plus the
/// baseline-drift report.
#[derive(Clone, Debug, Serialize)]
pub struct DriftFile {
    pub schema_version: u32,
    pub converged: bool,
    pub iterations: usize,
    pub drift: DriftReport,
}

impl DriftFile {
    pub fn from_outcome(outcome: &BundleOutcome) -> Self {
        DriftFile {
            schema_version: SCHEMA_VERSION,
            converged: outcome.converged,
            iterations: outcome.iterations,
            drift: outcome.drift.clone(),
        }
    }
}

pub fn write_drift(path: &Path, file: &DriftFile) -> Result<()> {
    write_json(path, file)
}
