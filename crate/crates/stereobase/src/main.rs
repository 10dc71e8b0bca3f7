//! Command-line front end: scene simulation, calibration, evaluation, and
//! the unconstrained-refinement degradation demo.
//!
//! Every command is deterministic given its inputs and seeds, and writes
//! artifacts with stable bytes so repeated runs can be diffed. Exit codes:
//! 0 success, 2 invalid input, 3 best-effort result after non-convergence
//! (artifacts are still written).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stereobase::io::{
    self, CalibrationFile, DriftFile, EvaluationSummary, GroundTruthFile, SCHEMA_VERSION,
};
use stereobase::model::{ObservationSet, StereoRig};
use stereobase::report;
use stereobase::scene::{self, SceneSpec};
use stereobase::solver::{
    calibrate, refine_unconstrained_ba, CalibrationResult, GridSpec, LambdaWeights, SolverConfig,
};
use stereobase::{Error, Result};

#[derive(Parser)]
#[command(
    name = "stereobase",
    version,
    about = "Euclidean auto-calibration of a camera network anchored by a known stereo baseline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: ground-truth JSON plus noiseless and
    /// noisy correspondence CSVs.
    Simulate(SimulateArgs),
    /// Recover all camera parameters and the metric point cloud from a
    /// correspondence CSV.
    Calibrate(CalibrateArgs),
    /// Score a calibration against observations and, optionally, ground
    /// truth.
    Evaluate(EvaluateArgs),
    /// Re-optimize a calibration without the baseline constraint and report
    /// how far the metric scale drifts.
    DegradeBa(DegradeBaArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene spec JSON; absent fields take their defaults. Flags override
    /// the file.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Total cameras, the stereo pair included.
    #[arg(long)]
    cameras: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long, value_name = "MM")]
    baseline_mm: Option<f64>,
    /// Gaussian pixel-noise sigma of the noisy variant.
    #[arg(long, value_name = "PX")]
    noise_px: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Point-envelope extents, mm, as AxBxC (e.g. 98x168x75).
    #[arg(long, value_name = "AxBxC", value_parser = parse_box)]
    box_mm: Option<[f64; 3]>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Correspondence CSV with header camera_id,point_id,x,y.
    observations: PathBuf,
    /// Stereo baseline, mm: the single piece of metric information.
    #[arg(long, value_name = "MM")]
    baseline_mm: Option<f64>,
    /// x/y weight in [0, 1]: one global value, or one per monocular camera,
    /// comma-separated.
    #[arg(long, value_name = "L[,L...]", value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Focal-length search grid, px, as LO:HI:CELLS.
    #[arg(long, value_name = "LO:HI:N", value_parser = parse_grid)]
    f1_grid: Option<GridRange>,
    #[arg(long, value_name = "N")]
    max_iters: Option<usize>,
    /// Relative objective decrease treated as converged.
    #[arg(long, value_name = "T")]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Principal point cx,cy to subtract from corner-origin pixels.
    #[arg(long, value_name = "CX,CY", value_parser = parse_pair)]
    principal_point: Option<[f64; 2]>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Calibration JSON.
    calibration: PathBuf,
    /// Correspondence CSV the calibration is scored against.
    observations: PathBuf,
    /// Ground-truth JSON; adds parameter errors and a scale reference to the
    /// summary.
    #[arg(long, value_name = "FILE")]
    truth: Option<PathBuf>,
    /// Principal point cx,cy to subtract from corner-origin pixels.
    #[arg(long, value_name = "CX,CY", value_parser = parse_pair)]
    principal_point: Option<[f64; 2]>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DegradeBaArgs {
    /// Calibration JSON to start from.
    calibration: PathBuf,
    /// Correspondence CSV the refinement minimizes against.
    observations: PathBuf,
    #[arg(long, value_name = "N")]
    max_iters: Option<usize>,
    /// Relative objective decrease treated as converged.
    #[arg(long, value_name = "T")]
    tol: Option<f64>,
    /// Principal point cx,cy to subtract from corner-origin pixels.
    #[arg(long, value_name = "CX,CY", value_parser = parse_pair)]
    principal_point: Option<[f64; 2]>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone)]
struct GridRange {
    lo: f64,
    hi: f64,
    cells: usize,
}

fn parse_box(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(format!("expected AxBxC, found '{s}'"));
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("invalid extent '{part}'"))?;
    }
    Ok(out)
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected CX,CY, found '{s}'"));
    }
    let mut out = [0.0; 2];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("invalid coordinate '{part}'"))?;
    }
    Ok(out)
}

fn parse_grid(s: &str) -> std::result::Result<GridRange, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected LO:HI:N, found '{s}'"));
    }
    let lo: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| format!("invalid lower bound '{}'", parts[0]))?;
    let hi: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| format!("invalid upper bound '{}'", parts[1]))?;
    let cells: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| format!("invalid cell count '{}'", parts[2]))?;
    if cells == 0 {
        return Err("cell count must be positive".into());
    }
    Ok(GridRange { lo, hi, cells })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::DegradeBa(args) => cmd_degrade_ba(args),
    };
    match run {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NotConverged { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode> {
    let mut spec = match &args.spec {
        Some(path) => serde_json::from_str::<SceneSpec>(&fs::read_to_string(path)?)?,
        None => SceneSpec::default(),
    };
    if let Some(v) = args.cameras {
        spec.cameras = v;
    }
    if let Some(v) = args.points {
        spec.points = v;
    }
    if let Some(v) = args.baseline_mm {
        spec.baseline_mm = v;
    }
    if let Some(v) = args.noise_px {
        spec.noise_px = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.box_mm {
        spec.box_mm = v;
    }

    let truth = scene::generate(&spec)?;
    fs::create_dir_all(&args.out_dir)?;
    io::write_ground_truth(
        &args.out_dir.join("truth.json"),
        &GroundTruthFile::from_truth(&truth, &spec),
    )?;
    io::write_observations(&args.out_dir.join("observations.csv"), &truth.observations)?;
    io::write_observations(
        &args.out_dir.join("observations_noisy.csv"),
        &truth.noisy_observations,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<ExitCode> {
    let baseline = args.baseline_mm.ok_or_else(|| {
        Error::InvalidParameters(
            "--baseline-mm is required: the known stereo baseline is the one piece of \
             metric information, and without it the recovery cannot be Euclidean \
             (true scale), only up-to-scale"
                .into(),
        )
    })?;
    let rig = StereoRig::new(baseline)?;
    let obs = io::read_observations(&args.observations, args.principal_point)?;

    let mut config = SolverConfig::default();
    if let Some(l) = &args.lambda {
        config.lambda = match l.as_slice() {
            [one] => LambdaWeights::Global(*one),
            many => LambdaWeights::PerCamera(many.to_vec()),
        };
    }
    if let Some(g) = &args.f1_grid {
        config.f1_grid = GridSpec {
            lo_px: Some(g.lo),
            hi_px: Some(g.hi),
            cells: g.cells,
            ..config.f1_grid
        };
    }
    if let Some(n) = args.max_iters {
        config.max_iterations = n;
    }
    if let Some(t) = args.tol {
        config.rel_tolerance = t;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }

    match calibrate(&obs, &rig, &config) {
        Ok(result) => {
            write_calibration_artifacts(&args.out_dir, &result, &rig, &obs)?;
            Ok(ExitCode::SUCCESS)
        }
        Err(Error::NotConverged { iterations, result }) => {
            write_calibration_artifacts(&args.out_dir, &result, &rig, &obs)?;
            Err(Error::NotConverged { iterations, result })
        }
        Err(e) => Err(e),
    }
}

fn write_calibration_artifacts(
    out_dir: &Path,
    result: &CalibrationResult,
    rig: &StereoRig,
    obs: &ObservationSet,
) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    io::write_calibration(
        &out_dir.join("calibration.json"),
        &CalibrationFile::from_result(result, rig),
    )?;
    io::write_cloud_ply(
        &out_dir.join("cloud.ply"),
        &result.cloud,
        rig.baseline_mm,
        result.f1,
    )?;
    let report = report::reprojection_errors(result, rig, obs)?;
    io::write_reprojection_csv(&out_dir.join("reprojection.csv"), &report)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let cal = io::read_calibration(&args.calibration)?;
    let obs = io::read_observations(&args.observations, args.principal_point)?;
    let (rig, result) = cal.into_result(&obs)?;
    let reprojection = report::reprojection_errors(&result, &rig, &obs)?;

    let center = |record: &io::CameraRecord| -> Result<nalgebra::Vector3<f64>> {
        let cam = record.to_model()?;
        Ok(-(cam.r.transpose() * cam.t))
    };
    let recovered = (center(&cal.cameras[1])? - center(&cal.cameras[0])?).norm();

    let truth = args
        .truth
        .as_deref()
        .map(|path| io::read_ground_truth(path)?.into_truth())
        .transpose()?;
    let reference_box = truth
        .as_ref()
        .map(|t| report::scale_report(&t.points, None, None).map(|r| r.box_mm))
        .transpose()?;
    let scale = report::scale_report(&result.cloud, reference_box, Some(recovered))?;
    let parameters = truth
        .as_ref()
        .map(|t| report::parameter_errors(&result, t))
        .transpose()?;

    fs::create_dir_all(&args.out_dir)?;
    io::write_reprojection_csv(&args.out_dir.join("reprojection.csv"), &reprojection)?;
    io::write_evaluation(
        &args.out_dir.join("summary.json"),
        &EvaluationSummary {
            schema_version: SCHEMA_VERSION,
            reprojection: reprojection.summary(),
            scale,
            parameters,
        },
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_degrade_ba(args: DegradeBaArgs) -> Result<ExitCode> {
    let cal = io::read_calibration(&args.calibration)?;
    let obs = io::read_observations(&args.observations, args.principal_point)?;
    let (rig, result) = cal.into_result(&obs)?;

    let mut config = SolverConfig::default();
    if let Some(n) = args.max_iters {
        config.max_iterations = n;
    }
    if let Some(t) = args.tol {
        config.rel_tolerance = t;
    }

    let outcome = refine_unconstrained_ba(&result, &obs, &rig, &config)?;

    // The grid and branch fields still describe the calibrated seed; only
    // the convergence state belongs to this refinement.
    let mut diagnostics = cal.diagnostics.clone();
    diagnostics.converged = outcome.converged;
    diagnostics.iterations = outcome.iterations;
    let degraded = CalibrationFile {
        schema_version: SCHEMA_VERSION,
        baseline_mm: rig.baseline_mm,
        f1_px: outcome.cameras[0].f,
        focal_ratio: outcome.cameras[1].f / outcome.cameras[0].f,
        cameras: outcome
            .cameras
            .iter()
            .enumerate()
            .map(|(i, cam)| io::CameraRecord::from_model(i + 1, cam, None))
            .collect(),
        objective_value: outcome.drift.rms_after_px,
        diagnostics,
    };

    fs::create_dir_all(&args.out_dir)?;
    io::write_calibration(&args.out_dir.join("degraded.json"), &degraded)?;
    io::write_drift(
        &args.out_dir.join("drift.json"),
        &DriftFile::from_outcome(&outcome),
    )?;
    if outcome.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "error: unconstrained refinement did not converge within {} iterations",
            outcome.iterations
        );
        Ok(ExitCode::from(3))
    }
}
