use crate::solver::CalibrationResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("point depth {depth} mm is below the projection cutoff {epsilon} mm")]
    DepthNearZero { depth: f64, epsilon: f64 },

    #[error("invalid camera model: {0}")]
    InvalidCamera(String),

    #[error("invalid observations: {0}")]
    InvalidObservations(String),

    #[error(
        "infeasible network: {cameras} cameras, {points} points \
         (need at least 3 cameras and 4 points; unknown-count slack {slack})"
    )]
    InfeasibleNetwork {
        cameras: usize,
        points: usize,
        slack: i64,
    },

    #[error("degenerate stereo geometry{}", point.map(|j| format!(" at point {j}")).unwrap_or_default())]
    DegenerateGeometry { point: Option<usize> },

    #[error("no point has |y1| above {min_y1_px} px; focal ratio is undetermined")]
    NoRatioPoints { min_y1_px: f64 },

    #[error("focal ratio estimate {rho} is not positive")]
    NonPositiveRatio { rho: f64 },

    #[error("rotation seed is singular: |1 - r1^2| is below {tolerance}")]
    SingularSeed { tolerance: f64 },

    #[error("rotation seed is infeasible: discriminant {discriminant} is negative")]
    InfeasibleSeed { discriminant: f64 },

    #[error("invalid rotation seed: {0}")]
    InvalidSeed(String),

    #[error("no rotation candidate survived the orthonormality and determinant filters")]
    EmptyCandidateSet,

    #[error("design system is degenerate at point {point}: |x1| = {x1} px")]
    DegenerateObservation { point: usize, x1: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("no linear-init candidate for camera {camera} survived extraction")]
    NoCameraCandidate { camera: usize },

    #[error("initialization failed: no focal-length grid cell produced a feasible network")]
    InitializationFailed,

    #[error("refinement did not converge within {iterations} iterations")]
    NotConverged {
        iterations: usize,
        result: Box<CalibrationResult>,
    },

    #[error("scene generation failed for camera {camera} after {attempts} placement attempts")]
    GenerationFailed { camera: usize, attempts: usize },

    #[error(
        "scene generation failed: no point satisfied stereo visibility and the \
         |Y| margin after {attempts} attempts"
    )]
    PointGenerationFailed { attempts: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{path}:{line}: {message}")]
    Csv {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid calibration file: {0}")]
    InvalidCalibration(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
