//! Grid initialization over `f1` and joint network refinement.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};

use super::design::{
    build_design_system, extract_camera_parameters, joint_to_params, pack_parameters,
    CombinedParameters, DesignSystem, MIN_TZ_MM,
};
use super::lm::{self, LmProblem, LmSettings};
use super::{CalibrationResult, GridSpec, SolveDiagnostics, SolvedCamera, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{feasibility, CameraModel, ObservationSet, StereoRig};
use crate::rotation::{enumerate_rotations, skew_basis, RotationSeed};
use crate::stereo::{self, StereoPointEstimate};

/// Depths at or below this bound fail the positive-depth filter.
const CHEIRALITY_MIN_DEPTH_MM: f64 = 1e-9;

/// Relative improvement a rotation branch must offer to replace the current
/// one.
const BRANCH_IMPROVEMENT: f64 = 1e-9;

/// Branch re-check rounds before the solver settles.
const MAX_BRANCH_ROUNDS: usize = 3;

/// One monocular camera's share of the combined objective.
struct Block {
    system: DesignSystem,
    lambda: f64,
}

impl Block {
    /// `lambda * |A_x a - b_x| + (1 - lambda) * |A_y b - b_y|`.
    fn term(&self, params: &CombinedParameters) -> f64 {
        let (rx, ry) = self.system.residual_norms(params);
        self.lambda * rx + (1.0 - self.lambda) * ry
    }

    fn term_for(&self, f1: f64, cam: &CameraParams) -> Option<f64> {
        let packed = pack_parameters(f1, &cam.model()).ok()?;
        Some(self.term(&packed))
    }
}

#[derive(Clone, Debug)]
struct CameraParams {
    f: f64,
    r: Matrix3<f64>,
    t: Vector3<f64>,
}

impl CameraParams {
    fn model(&self) -> CameraModel {
        CameraModel {
            f: self.f,
            r: self.r,
            t: self.t,
        }
    }

    fn from_model(cam: &CameraModel) -> Self {
        Self {
            f: cam.f,
            r: cam.r,
            t: cam.t,
        }
    }
}

fn make_blocks(
    obs: &ObservationSet,
    base: &[StereoPointEstimate],
    lambdas: &[f64],
) -> Result<Vec<Block>> {
    (2..obs.cameras())
        .map(|camera| {
            Ok(Block {
                system: build_design_system(obs, camera, base)?,
                lambda: lambdas[camera - 2],
            })
        })
        .collect()
}

fn network_objective(blocks: &[Block], f1: f64, cams: &[CameraParams]) -> Option<f64> {
    let mut total = 0.0;
    for (block, cam) in blocks.iter().zip(cams) {
        total += block.term_for(f1, cam)?;
    }
    Some(total)
}

/// Evaluates the combined objective at explicit physical parameters.
///
/// `cameras` holds the monocular cameras in camera order; the stereo pair is
/// fixed by `rig` and the estimated focal ratio. Parameters violating the
/// camera invariants (positive focal length, orthonormal rotation within
/// 1e-6, `|tz|` above the packing cutoff) are a domain error.
pub fn objective(
    obs: &ObservationSet,
    rig: &StereoRig,
    f1: f64,
    cameras: &[CameraModel],
    config: &SolverConfig,
) -> Result<f64> {
    if obs.cameras() != cameras.len() + 2 {
        return Err(Error::DimensionMismatch(format!(
            "{} monocular cameras for a {}-camera observation set",
            cameras.len(),
            obs.cameras()
        )));
    }
    if !f1.is_finite() || f1 <= 0.0 {
        return Err(Error::InvalidParameters(format!(
            "f1 = {f1} px is not positive and finite"
        )));
    }
    for cam in cameras {
        cam.validate(1e-6)?;
        if cam.t.z.abs() < MIN_TZ_MM {
            return Err(Error::InvalidParameters(format!(
                "|tz| = {} mm is below {MIN_TZ_MM}",
                cam.t.z.abs()
            )));
        }
    }
    let ratio = stereo::estimate_focal_ratio_with(obs, config.ratio_aggregation, config.min_y1_px)?;
    let base = stereo::triangulate_all(obs, rig.baseline_mm, ratio.rho)?;
    let lambdas = config.lambda.resolve(cameras.len())?;
    let blocks = make_blocks(obs, &base, &lambdas)?;
    let cams: Vec<CameraParams> = cameras.iter().map(CameraParams::from_model).collect();
    network_objective(&blocks, f1, &cams).ok_or_else(|| {
        Error::InvalidParameters("parameters are outside the packing domain".into())
    })
}

/// Relative Frobenius deviation between the analytic refinement Jacobian and
/// a central finite-difference Jacobian at the given parameters.
///
/// Steps scale with each coordinate's magnitude (cube root of machine
/// epsilon times the parameter scale), so the difference quotient keeps
/// roughly ten significant digits. Inputs are validated as in [`objective`].
pub fn jacobian_deviation(
    obs: &ObservationSet,
    rig: &StereoRig,
    f1: f64,
    cameras: &[CameraModel],
    config: &SolverConfig,
) -> Result<f64> {
    objective(obs, rig, f1, cameras, config)?;
    let ratio = stereo::estimate_focal_ratio_with(obs, config.ratio_aggregation, config.min_y1_px)?;
    let base = stereo::triangulate_all(obs, rig.baseline_mm, ratio.rho)?;
    let lambdas = config.lambda.resolve(cameras.len())?;
    let problem = RefineProblem::new(obs, &base, &lambdas);
    let state = RefineState {
        f1,
        cams: cameras.iter().map(CameraParams::from_model).collect(),
    };
    let analytic = problem.jacobian(&state);

    let h0 = f64::EPSILON.cbrt();
    let mut fd = DMatrix::zeros(problem.rows(), problem.dim());
    for c in 0..problem.dim() {
        let scale = if c == 0 {
            f1
        } else {
            let cam = &state.cams[(c - 1) / 7];
            match (c - 1) % 7 {
                0 => cam.f,
                1..=3 => 1.0,
                k => cam.t[k - 4].abs(),
            }
        };
        let h = h0 * scale.abs().max(1.0);
        let mut step = DVector::zeros(problem.dim());
        step[c] = h;
        let plus = problem.apply(&state, &step).and_then(|s| problem.residuals(&s));
        step[c] = -h;
        let minus = problem.apply(&state, &step).and_then(|s| problem.residuals(&s));
        let (Some(rp), Some(rm)) = (plus, minus) else {
            return Err(Error::InvalidParameters(
                "finite-difference step leaves the parameter domain".into(),
            ));
        };
        fd.set_column(c, &((rp - rm) / (2.0 * h)));
    }
    Ok((&analytic - fd).norm() / analytic.norm().max(1e-300))
}

/// Relative eigenvalue bound that separates exact rank deficiencies of the
/// joint system (fewer than six points) from directions the data merely
/// determines poorly.
const EXACT_RANK_CUTOFF: f64 = 1e-10;

/// Relative eigenvalue bound for the fallback initialization tier: below it
/// a direction counts as noise-dominated (low depth relief leaves directions
/// at `1e-6..1e-4` of the largest eigenvalue, amplifying pixel noise beyond
/// use) and is pinned by the rotation-consistency constraints instead of the
/// data. The first tier keeps such directions, which preserves exact
/// recovery on clean data; this tier trades accuracy of the linear seed for
/// robustness and only runs when the first produces no feasible cell.
const WEAK_DIRECTION_CUTOFF: f64 = 1e-3;

/// How many of the weakest directions the consistency tier always frees. The
/// candidate sphere spans the freed directions plus the data solution, and
/// the four quadratic consistency constraints generically admit solutions on
/// it only when it has at least four free dimensions; one more gives the
/// polish a one-parameter family to settle into.
const CONSISTENCY_FREE_DIMS: usize = 5;

/// Truncated least-squares solution of `g x = b` (in column-equilibrated
/// coordinates) together with an orthonormal basis of the directions whose
/// relative eigenvalue falls below `cutoff`, via the eigendecomposition of
/// the normal matrix. At least the `min_free` weakest directions go to the
/// basis regardless of the cutoff.
fn least_squares_with_nullspace(
    g: &DMatrix<f64>,
    b: &DVector<f64>,
    cutoff: f64,
    min_free: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let cols = g.ncols();
    let scales: Vec<f64> = (0..cols)
        .map(|c| {
            let n = g.column(c).norm();
            if n > 1e-300 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let mut gs = g.clone();
    for c in 0..cols {
        let s = scales[c];
        for v in gs.column_mut(c).iter_mut() {
            *v /= s;
        }
    }
    let normal = gs.transpose() * &gs;
    let rhs = gs.transpose() * b;
    let eig = normal.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let bound = max_ev * cutoff;
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut free = vec![false; cols];
    for (rank, &k) in order.iter().enumerate() {
        free[k] = eig.eigenvalues[k] <= bound || rank < min_free.min(cols);
    }

    let mut solution = DVector::zeros(cols);
    let mut null_cols = Vec::new();
    for k in 0..cols {
        let q = eig.eigenvectors.column(k);
        if free[k] {
            null_cols.push(k);
        } else {
            let coeff = q.dot(&rhs) / eig.eigenvalues[k];
            solution += q * coeff;
        }
    }
    let mut nullspace = DMatrix::zeros(cols, null_cols.len());
    for (j, k) in null_cols.iter().enumerate() {
        nullspace.column_mut(j).copy_from(&eig.eigenvectors.column(*k));
    }
    // Undo the column equilibration and restore orthonormality, so that
    // nullspace coefficients measure distances in solution space.
    for c in 0..cols {
        solution[c] /= scales[c];
        for v in nullspace.row_mut(c).iter_mut() {
            *v /= scales[c];
        }
    }
    if !null_cols.is_empty() {
        nullspace = nullspace.qr().q();
    }
    (solution, nullspace)
}

/// Precomputed, `f1`-free linear-init data of one camera.
struct InitBlock {
    gamma0: DVector<f64>,
    nullspace: DMatrix<f64>,
}

impl InitBlock {
    fn new(system: &DesignSystem, cutoff: f64, min_free: usize) -> Self {
        let (g, b) = system.joint_system();
        let (gamma0, nullspace) = least_squares_with_nullspace(&g, &b, cutoff, min_free);
        Self { gamma0, nullspace }
    }
}

/// The rotation-consistency constraints that pin the nullspace component
/// when the joint system is rank-deficient (fewer than six points): the
/// three implied rotation rows must be mutually orthogonal and the first two
/// must share their norm.
struct NullspaceProblem<'a> {
    gamma0: &'a DVector<f64>,
    nullspace: &'a DMatrix<f64>,
    f1: f64,
    scale: f64,
}

impl NullspaceProblem<'_> {
    fn gamma(&self, z: &DVector<f64>) -> DVector<f64> {
        self.gamma0 + self.nullspace * z
    }

    fn rows(&self, gamma: &DVector<f64>) -> [Vector3<f64>; 3] {
        [
            Vector3::new(gamma[0], gamma[1], gamma[2] / self.f1),
            Vector3::new(gamma[4], gamma[5], gamma[6] / self.f1),
            Vector3::new(gamma[8], gamma[9], gamma[10] / self.f1),
        ]
    }

    /// d(row_k) / dz, a 3 x k matrix.
    fn row_grad(&self, k: usize) -> DMatrix<f64> {
        let cols = [0, 4, 8][k];
        let mut grad = DMatrix::zeros(3, self.nullspace.ncols());
        for z in 0..self.nullspace.ncols() {
            grad[(0, z)] = self.nullspace[(cols, z)];
            grad[(1, z)] = self.nullspace[(cols + 1, z)];
            grad[(2, z)] = self.nullspace[(cols + 2, z)] / self.f1;
        }
        grad
    }
}

impl LmProblem for NullspaceProblem<'_> {
    type State = DVector<f64>;

    fn residuals(&self, z: &DVector<f64>) -> Option<DVector<f64>> {
        let [v1, v2, v3] = self.rows(&self.gamma(z));
        Some(DVector::from_column_slice(&[
            v1.dot(&v2) / self.scale,
            v1.dot(&v3) / self.scale,
            v2.dot(&v3) / self.scale,
            (v1.norm_squared() - v2.norm_squared()) / self.scale,
        ]))
    }

    fn jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let [v1, v2, v3] = self.rows(&self.gamma(z));
        let (g1, g2, g3) = (self.row_grad(0), self.row_grad(1), self.row_grad(2));
        let k = self.nullspace.ncols();
        let mut j = DMatrix::zeros(4, k);
        for c in 0..k {
            let (d1, d2, d3) = (g1.column(c), g2.column(c), g3.column(c));
            j[(0, c)] = (d1.dot(&v2) + v1.dot(&d2)) / self.scale;
            j[(1, c)] = (d1.dot(&v3) + v1.dot(&d3)) / self.scale;
            j[(2, c)] = (d2.dot(&v3) + v2.dot(&d3)) / self.scale;
            j[(3, c)] = 2.0 * (d1.dot(&v1) - d2.dot(&v2)) / self.scale;
        }
        j
    }

    fn apply(&self, z: &DVector<f64>, step: &DVector<f64>) -> Option<DVector<f64>> {
        Some(z + step)
    }
}

/// How many directions the candidate sphere is swept with, per pinned
/// dimension.
fn sphere_sample_count(k: usize) -> usize {
    match k {
        0 => 0,
        1 => 256,
        2 => 1024,
        3 => 4096,
        _ => 8192,
    }
}

/// How many swept directions seed the on-sphere descent.
const SPHERE_POLISH_STARTS: usize = 32;

/// The rotation-consistency constraints as dimensionless residuals of a
/// direction on the candidate sphere: the three cosines between the implied
/// rotation rows and the relative norm imbalance of the first two. Raw
/// quadratic residuals would also vanish where rows merely shrink toward
/// zero; the scale-invariant form leaves only genuine candidates as zeros.
struct SphereProblem {
    row_maps: [DMatrix<f64>; 3],
}

impl SphereProblem {
    fn rows(&self, u: &DVector<f64>) -> [Vector3<f64>; 3] {
        let w = |m: &DMatrix<f64>| {
            let v = m * u;
            Vector3::new(v[0], v[1], v[2])
        };
        [
            w(&self.row_maps[0]),
            w(&self.row_maps[1]),
            w(&self.row_maps[2]),
        ]
    }

    /// `None` when a row norm underflows and the cosines are undefined.
    fn residuals(&self, u: &DVector<f64>) -> Option<DVector<f64>> {
        let [w1, w2, w3] = self.rows(u);
        let (n1, n2, n3) = (w1.norm(), w2.norm(), w3.norm());
        if n1 <= 1e-12 * (n1 + n2 + n3)
            || n2 <= 1e-12 * (n1 + n2 + n3)
            || n3 <= 1e-12 * (n1 + n2 + n3)
        {
            return None;
        }
        Some(DVector::from_column_slice(&[
            w1.dot(&w2) / (n1 * n2),
            w1.dot(&w3) / (n1 * n3),
            w2.dot(&w3) / (n2 * n3),
            (n1 * n1 - n2 * n2) / (n1 * n1 + n2 * n2),
        ]))
    }

    fn violation(&self, u: &DVector<f64>) -> f64 {
        self.residuals(u).map_or(4.0, |r| r.norm_squared())
    }

    fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let [w1, w2, w3] = self.rows(u);
        let (n1, n2, n3) = (w1.norm(), w2.norm(), w3.norm());
        let dim = u.len();
        // d(norm_i^2)/du and d(w_i . w_j)/du as ambient row vectors.
        let grad_sq = |m: &DMatrix<f64>, w: &Vector3<f64>| -> DVector<f64> {
            2.0 * m.transpose() * DVector::from_column_slice(w.as_slice())
        };
        let grad_dot = |ma: &DMatrix<f64>,
                        wa: &Vector3<f64>,
                        mb: &DMatrix<f64>,
                        wb: &Vector3<f64>|
         -> DVector<f64> {
            ma.transpose() * DVector::from_column_slice(wb.as_slice())
                + mb.transpose() * DVector::from_column_slice(wa.as_slice())
        };
        let cos_grad = |ma: &DMatrix<f64>,
                        wa: &Vector3<f64>,
                        na: f64,
                        mb: &DMatrix<f64>,
                        wb: &Vector3<f64>,
                        nb: f64|
         -> DVector<f64> {
            let dot = wa.dot(wb);
            let ddot = grad_dot(ma, wa, mb, wb);
            let dna = grad_sq(ma, wa);
            let dnb = grad_sq(mb, wb);
            ddot / (na * nb)
                - (dna / (2.0 * na * na) + dnb / (2.0 * nb * nb)) * (dot / (na * nb))
        };
        let (m1, m2, m3) = (&self.row_maps[0], &self.row_maps[1], &self.row_maps[2]);
        let r12 = cos_grad(m1, &w1, n1, m2, &w2, n2);
        let r13 = cos_grad(m1, &w1, n1, m3, &w3, n3);
        let r23 = cos_grad(m2, &w2, n2, m3, &w3, n3);
        let (a, b) = (n1 * n1, n2 * n2);
        let da = grad_sq(m1, &w1);
        let db = grad_sq(m2, &w2);
        let r4 = (da * (2.0 * b) - db * (2.0 * a)) / (a + b).powi(2);
        let mut j = DMatrix::zeros(4, dim);
        for c in 0..dim {
            j[(0, c)] = r12[c];
            j[(1, c)] = r13[c];
            j[(2, c)] = r23[c];
            j[(3, c)] = r4[c];
        }
        j
    }
}

/// Damped Gauss-Newton descent of the sphere violation with steps in the
/// tangent space. Returns the final direction and its violation.
fn sphere_minimize(problem: &SphereProblem, mut u: DVector<f64>) -> (f64, DVector<f64>) {
    let mut value = problem.violation(&u);
    for _ in 0..80 {
        let Some(r) = problem.residuals(&u) else {
            break;
        };
        let j = problem.jacobian(&u);
        // Project out the radial direction: steps live on the sphere.
        let ju = &j * &u;
        let jt = &j - ju * u.transpose();
        let normal = jt.transpose() * &jt;
        let ridge = 1e-12 * normal.diagonal().amax().max(1e-300);
        let lhs = normal + DMatrix::identity(u.len(), u.len()) * ridge;
        let rhs = -(jt.transpose() * &r);
        let Some(chol) = lhs.cholesky() else {
            break;
        };
        let mut step = chol.solve(&rhs);
        step -= &u * u.dot(&step);
        if step.norm() <= 1e-15 {
            break;
        }
        let mut improved = false;
        let mut scale = 1.0;
        for _ in 0..25 {
            let mut trial = &u + &step * scale;
            let norm = trial.norm();
            if norm > 1e-300 {
                trial /= norm;
                let trial_value = problem.violation(&trial);
                if trial_value < value {
                    u = trial;
                    value = trial_value;
                    improved = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (value, u)
}

/// Candidate packed solutions of one camera at one `f1` cell.
///
/// The consistency constraints are homogeneous quadratics in the packed
/// vector, so up to scale every candidate lies on the unit sphere of
/// `span{gamma0, nullspace}`. A deterministic sweep of that compact sphere
/// ranks directions by constraint violation and the best few, mapped back to
/// affine nullspace coordinates, seed a Levenberg-Marquardt polish. This
/// avoids committing to any starting magnitude: the consistent solution can
/// lie far outside the trust region of a single descent from `gamma0`.
fn candidate_gammas(init: &InitBlock, f1: f64) -> Vec<DVector<f64>> {
    let k = init.nullspace.ncols();
    if k == 0 {
        return vec![init.gamma0.clone()];
    }
    let probe = NullspaceProblem {
        gamma0: &init.gamma0,
        nullspace: &init.nullspace,
        f1,
        scale: 1.0,
    };
    let [v1, v2, v3] = probe.rows(&init.gamma0);
    let scale = (v1.norm_squared() + v2.norm_squared() + v3.norm_squared()).max(1e-12);
    let problem = NullspaceProblem {
        gamma0: &init.gamma0,
        nullspace: &init.nullspace,
        f1,
        scale,
    };
    let settings = LmSettings {
        max_iterations: 120,
        rel_tolerance: 1e-14,
        consecutive: 3,
        damping: super::DampingConfig::default(),
    };

    let mut starts = vec![DVector::zeros(k)];
    starts.extend(sphere_starts(init, f1, k));
    let mut out = Vec::new();
    for z0 in starts {
        if let Some(found) = lm::minimize(&problem, z0, &settings) {
            out.push(problem.gamma(&found.state));
        }
    }
    out
}

/// Nullspace seeds from a sweep of the candidate sphere.
fn sphere_starts(init: &InitBlock, f1: f64, k: usize) -> Vec<DVector<f64>> {
    use rand::{RngExt, SeedableRng};
    use rand_distr::StandardNormal;

    let n = &init.nullspace;
    let coeffs = n.transpose() * &init.gamma0;
    let residual = &init.gamma0 - n * &coeffs;
    let rnorm = residual.norm();
    if rnorm <= 1e-12 * init.gamma0.norm().max(1.0) {
        // The affine base point carries no component outside the pinned
        // directions, so the sphere cannot be de-homogenized. Fall back to
        // axis seeds around the base point.
        let mut starts = Vec::new();
        for a in 0..k {
            for sign in [1.0, -1.0] {
                let mut z = DVector::zeros(k);
                z[a] = sign * init.gamma0.norm().max(1.0);
                starts.push(z);
            }
        }
        return starts;
    }

    // Orthonormal basis of span{nullspace, gamma0}: the pinned directions
    // plus the unit base-point remainder. The three implied rotation rows
    // are linear images of sphere points.
    let dim = k + 1;
    let mut basis = DMatrix::zeros(init.gamma0.len(), dim);
    basis.columns_mut(0, k).copy_from(n);
    basis.column_mut(k).copy_from(&(&residual / rnorm));
    let row_maps = [0usize, 4, 8].map(|offset| {
        let mut map = DMatrix::zeros(3, dim);
        for c in 0..dim {
            map[(0, c)] = basis[(offset, c)];
            map[(1, c)] = basis[(offset + 1, c)];
            map[(2, c)] = basis[(offset + 2, c)] / f1;
        }
        map
    });

    let problem = SphereProblem { row_maps };
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0x73_70_68_65_72_65);
    let samples = sphere_sample_count(k);
    let mut ranked: Vec<(f64, DVector<f64>)> = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut u = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = u.norm();
        if norm <= 1e-300 {
            continue;
        }
        u /= norm;
        let violation = problem.violation(&u);
        ranked.push((violation, u));
    }
    ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

    // Descend from the most consistent well-separated directions and keep
    // each distinct minimum.
    let mut picked: Vec<DVector<f64>> = Vec::new();
    let mut minima: Vec<(f64, DVector<f64>)> = Vec::new();
    for (_, u) in &ranked {
        if picked.len() >= SPHERE_POLISH_STARTS {
            break;
        }
        // Antipodal sphere points describe the same candidate up to scale.
        if picked.iter().any(|p: &DVector<f64>| p.dot(u).abs() > 0.95) {
            continue;
        }
        picked.push(u.clone());
        let (value, min) = sphere_minimize(&problem, u.clone());
        if minima
            .iter()
            .all(|(_, m): &(f64, DVector<f64>)| m.dot(&min).abs() < 1.0 - 1e-9)
        {
            minima.push((value, min));
        }
    }
    minima.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

    let mut starts = Vec::new();
    for (_, u) in &minima {
        if u[k].abs() < 1e-6 {
            continue;
        }
        starts.push(u.rows(0, k) * (rnorm / u[k]) - &coeffs);
    }
    starts
}

fn cheirality_ok(r: &Matrix3<f64>, t: &Vector3<f64>, world: &[Vector3<f64>]) -> bool {
    world
        .iter()
        .all(|p| (r * p + t).z > CHEIRALITY_MIN_DEPTH_MM)
}

/// Unconstrained projective resection of one camera against the cloud at one
/// `f1` cell: the classical direct linear transform for the 3x4 projection
/// matrix, decomposed onto the single-focal-length model. Needs at least six
/// points; emits up to two sign candidates for downstream gating.
///
/// The packed-vector candidates above inherit the design system's weak
/// directions, which noise can corrupt beyond repair at every cell; this fit
/// only assumes the cloud shape and stays usable under that noise.
fn resect_camera(view: &CameraView, world: &[Vector3<f64>]) -> Vec<CameraParams> {
    let n = world.len();
    if 2 * n < 12 {
        return Vec::new();
    }
    let centroid = world.iter().sum::<Vector3<f64>>() / n as f64;
    let world_scale = (world.iter().map(|w| (w - centroid).norm_squared()).sum::<f64>() / n as f64)
        .sqrt()
        .max(1e-12);
    let pixel_scale = ((view.x.norm_squared() + view.y.norm_squared()) / n as f64)
        .sqrt()
        .max(1e-12);

    let mut design = DMatrix::zeros(2 * n, 12);
    for (j, w) in world.iter().enumerate() {
        let p = (w - centroid) / world_scale;
        let (x, y) = (view.x[j] / pixel_scale, view.y[j] / pixel_scale);
        let homo = [p.x, p.y, p.z, 1.0];
        for (c, h) in homo.iter().enumerate() {
            design[(2 * j, c)] = *h;
            design[(2 * j, 8 + c)] = -x * h;
            design[(2 * j + 1, 4 + c)] = *h;
            design[(2 * j + 1, 8 + c)] = -y * h;
        }
    }
    let svd = design.svd(false, true);
    let v_t = svd.v_t.expect("svd with v_t requested");
    let mut min_index = 0;
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s < svd.singular_values[min_index] {
            min_index = k;
        }
    }
    let p = v_t.row(min_index);

    // Undo the normalization: rows of the projection in original units.
    let mut rows = [Vector3::zeros(); 3];
    let mut trans = Vector3::zeros();
    for k in 0..3 {
        let scale = if k == 2 { 1.0 } else { pixel_scale };
        rows[k] = Vector3::new(p[4 * k], p[4 * k + 1], p[4 * k + 2]) * (scale / world_scale);
        trans[k] = scale * p[4 * k + 3] - rows[k].dot(&centroid);
    }

    let n3 = rows[2].norm();
    if n3 < 1e-300 {
        return Vec::new();
    }
    let f = (rows[0].norm() + rows[1].norm()) / (2.0 * n3);
    if !(f.is_finite() && f > 0.0) {
        return Vec::new();
    }
    let mut out = Vec::new();
    for sign in [1.0 / n3, -1.0 / n3] {
        let m = Matrix3::from_rows(&[
            (rows[0] * (sign / f)).transpose(),
            (rows[1] * (sign / f)).transpose(),
            (rows[2] * sign).transpose(),
        ]);
        if m.determinant() <= 0.0 {
            continue;
        }
        let r = super::design::nearest_rotation(&m);
        let t = Vector3::new(trans.x * sign / f, trans.y * sign / f, trans.z * sign);
        if !t.iter().all(|v| v.is_finite()) {
            continue;
        }
        out.push(CameraParams { f, r, t });
    }
    out
}

fn geometric_grid(lo: f64, hi: f64, cells: usize) -> Vec<f64> {
    if cells <= 1 || hi <= lo {
        return vec![lo];
    }
    let ratio = hi / lo;
    (0..cells)
        .map(|i| lo * ratio.powf(i as f64 / (cells - 1) as f64))
        .collect()
}

fn grid_cells(spec: &GridSpec, obs: &ObservationSet) -> Result<Vec<f64>> {
    let radius = obs
        .iter()
        .map(|(_, _, p)| p.x.hypot(p.y))
        .fold(0.0f64, f64::max)
        .max(0.5);
    let diag = 2.0 * radius;
    let lo = spec.lo_px.unwrap_or(0.2 * diag);
    let hi = spec.hi_px.unwrap_or(5.0 * diag);
    if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || hi <= lo {
        return Err(Error::InvalidParameters(format!(
            "focal grid range [{lo}, {hi}] px is not an increasing positive interval"
        )));
    }
    if spec.cells < 2 {
        return Err(Error::InvalidParameters(
            "focal grid needs at least 2 cells".into(),
        ));
    }
    Ok(geometric_grid(lo, hi, spec.cells))
}

fn world_at(base: &[StereoPointEstimate], f1: f64) -> Vec<Vector3<f64>> {
    base.iter()
        .map(|e| Vector3::new(e.x, e.y, f1 * e.z_per_f1))
        .collect()
}

/// One selection channel's cameras and summed score at one grid cell.
struct ChannelSeed {
    f1: f64,
    cams: Vec<CameraParams>,
    score: f64,
}

/// One grid cell under both selection channels. The design channel picks and
/// scores candidates by the combined design objective, exactly as the linear
/// stage defines it; the pixel channel picks and scores by reprojection and
/// also draws on the resection candidates, which keeps it usable when noise
/// corrupts the design weighting. Either channel is `None` when some camera
/// has no feasible candidate under it.
struct CellSeed {
    design: Option<ChannelSeed>,
    pixels: Option<ChannelSeed>,
}

/// Argmin cells of a grid scan under both channels.
struct ScanPicks {
    design: Option<(usize, ChannelSeed)>,
    pixels: Option<(usize, ChannelSeed)>,
}

impl ScanPicks {
    fn is_empty(&self) -> bool {
        self.design.is_none() && self.pixels.is_none()
    }
}

fn scan_cells(
    problem: &RefineProblem,
    cells: &[f64],
    blocks: &[Block],
    inits: &[InitBlock],
    base: &[StereoPointEstimate],
) -> ScanPicks {
    let mut design: Option<(usize, ChannelSeed)> = None;
    let mut pixels: Option<(usize, ChannelSeed)> = None;
    for (i, f1) in cells.iter().enumerate() {
        let seed = score_cell(problem, blocks, inits, base, *f1);
        if let Some(ch) = seed.design {
            if design.as_ref().map_or(true, |(_, b)| ch.score < b.score) {
                design = Some((i, ch));
            }
        }
        if let Some(ch) = seed.pixels {
            if pixels.as_ref().map_or(true, |(_, b)| ch.score < b.score) {
                pixels = Some((i, ch));
            }
        }
    }
    ScanPicks { design, pixels }
}

fn score_cell(
    problem: &RefineProblem,
    blocks: &[Block],
    inits: &[InitBlock],
    base: &[StereoPointEstimate],
    f1: f64,
) -> CellSeed {
    let world = world_at(base, f1);
    let mut design: Option<(Vec<CameraParams>, f64)> = Some((Vec::new(), 0.0));
    let mut pixels: Option<(Vec<CameraParams>, f64)> = Some((Vec::new(), 0.0));
    for ((block, init), view) in blocks.iter().zip(inits).zip(&problem.views) {
        let mut candidates: Vec<(CameraParams, bool)> = Vec::new();
        for gamma in candidate_gammas(init, f1) {
            let params = joint_to_params(&gamma);
            let Ok(models) = extract_camera_parameters(&params, f1) else {
                continue;
            };
            candidates.extend(
                models
                    .iter()
                    .map(|m| (CameraParams::from_model(m), true)),
            );
        }
        candidates.extend(resect_camera(view, &world).into_iter().map(|c| (c, false)));

        let mut best_design: Option<(CameraParams, f64)> = None;
        let mut best_pixel: Option<(CameraParams, f64)> = None;
        for (cam, extracted) in candidates {
            if !cheirality_ok(&cam.r, &cam.t, &world) {
                continue;
            }
            if extracted {
                if let Some(term) = block.term_for(f1, &cam) {
                    if best_design.as_ref().map_or(true, |(_, t)| term < *t) {
                        best_design = Some((cam.clone(), term));
                    }
                }
            }
            if let Some(term) = problem.camera_term(view, f1, &cam) {
                if term.is_finite() && best_pixel.as_ref().map_or(true, |(_, t)| term < *t) {
                    best_pixel = Some((cam, term));
                }
            }
        }
        design = match (design, best_design) {
            (Some((mut cams, score)), Some((cam, term))) => {
                cams.push(cam);
                Some((cams, score + term))
            }
            _ => None,
        };
        pixels = match (pixels, best_pixel) {
            (Some((mut cams, score)), Some((cam, term))) => {
                cams.push(cam);
                Some((cams, score + term))
            }
            _ => None,
        };
        if design.is_none() && pixels.is_none() {
            break;
        }
    }
    CellSeed {
        design: design.map(|(cams, score)| ChannelSeed { f1, cams, score }),
        pixels: pixels.map(|(cams, score)| ChannelSeed { f1, cams, score }),
    }
}

/// The joint refinement problem: true pixel reprojection residuals of the
/// `f1`-parametrized stereo cloud through every monocular camera.
///
/// The design-system residuals the linear stage works with equal these pixel
/// residuals scaled by each point's depth-to-`tz` ratio; under noise that
/// weighting rewards configurations that shrink the ratio rather than the
/// reprojection error, so the refinement minimizes the plain pixel residuals
/// instead. State is `f1` plus every monocular camera's `(f, R, t)`; steps
/// live in the local chart `(df1, df, omega, dt)` with rotations retracted
/// through the exponential map.
struct RefineProblem<'a> {
    base: &'a [StereoPointEstimate],
    views: Vec<CameraView>,
}

/// One monocular camera's observations and x/y weight.
struct CameraView {
    x: DVector<f64>,
    y: DVector<f64>,
    lambda: f64,
}

#[derive(Clone)]
struct RefineState {
    f1: f64,
    cams: Vec<CameraParams>,
}

impl<'a> RefineProblem<'a> {
    fn new(obs: &ObservationSet, base: &'a [StereoPointEstimate], lambdas: &[f64]) -> Self {
        let n = obs.points();
        let views = (2..obs.cameras())
            .map(|camera| {
                let mut x = DVector::zeros(n);
                let mut y = DVector::zeros(n);
                for j in 0..n {
                    let p = obs.get(camera, j);
                    x[j] = p.x;
                    y[j] = p.y;
                }
                CameraView {
                    x,
                    y,
                    lambda: lambdas[camera - 2],
                }
            })
            .collect();
        RefineProblem { base, views }
    }

    fn rows(&self) -> usize {
        2 * self.base.len() * self.views.len()
    }

    fn dim(&self) -> usize {
        1 + 7 * self.views.len()
    }

    /// One camera's unsquared weighted term, or `None` when a point falls
    /// behind the camera.
    fn camera_term(&self, view: &CameraView, f1: f64, cam: &CameraParams) -> Option<f64> {
        let mut sx = 0.0;
        let mut sy = 0.0;
        for (j, e) in self.base.iter().enumerate() {
            let q = cam.r * Vector3::new(e.x, e.y, f1 * e.z_per_f1) + cam.t;
            if q.z <= CHEIRALITY_MIN_DEPTH_MM {
                return None;
            }
            sx += (cam.f * q.x / q.z - view.x[j]).powi(2);
            sy += (cam.f * q.y / q.z - view.y[j]).powi(2);
        }
        Some(view.lambda * sx.sqrt() + (1.0 - view.lambda) * sy.sqrt())
    }
}

impl LmProblem for RefineProblem<'_> {
    type State = RefineState;

    fn residuals(&self, s: &RefineState) -> Option<DVector<f64>> {
        if !(s.f1.is_finite() && s.f1 > 0.0) {
            return None;
        }
        let n = self.base.len();
        let mut r = DVector::zeros(self.rows());
        let mut off = 0;
        for (view, cam) in self.views.iter().zip(&s.cams) {
            if cam.f <= 0.0 || cam.t.z.abs() < MIN_TZ_MM {
                return None;
            }
            let (wx, wy) = (view.lambda.sqrt(), (1.0 - view.lambda).sqrt());
            for (j, e) in self.base.iter().enumerate() {
                let q = cam.r * Vector3::new(e.x, e.y, s.f1 * e.z_per_f1) + cam.t;
                if q.z <= CHEIRALITY_MIN_DEPTH_MM {
                    return None;
                }
                r[off + j] = wx * (cam.f * q.x / q.z - view.x[j]);
                r[off + n + j] = wy * (cam.f * q.y / q.z - view.y[j]);
            }
            off += 2 * n;
        }
        Some(r)
    }

    fn jacobian(&self, s: &RefineState) -> DMatrix<f64> {
        let n = self.base.len();
        let mut jac = DMatrix::zeros(self.rows(), self.dim());
        let skew = skew_basis();
        let mut off = 0;
        for (i, (view, cam)) in self.views.iter().zip(&s.cams).enumerate() {
            let (wx, wy) = (view.lambda.sqrt(), (1.0 - view.lambda).sqrt());
            let col = 1 + 7 * i;
            let f = cam.f;
            for (j, e) in self.base.iter().enumerate() {
                let p = Vector3::new(e.x, e.y, s.f1 * e.z_per_f1);
                let q = cam.r * p + cam.t;
                let d2 = q.z * q.z;
                // f1 moves the point along the depth axis of the first
                // camera's frame.
                let dq1 = cam.r * Vector3::new(0.0, 0.0, e.z_per_f1);
                jac[(off + j, 0)] = wx * f * (dq1.x * q.z - q.x * dq1.z) / d2;
                jac[(off + n + j, 0)] = wy * f * (dq1.y * q.z - q.y * dq1.z) / d2;
                jac[(off + j, col)] = wx * q.x / q.z;
                jac[(off + n + j, col)] = wy * q.y / q.z;
                for a in 0..3 {
                    let dq = cam.r * (skew[a] * p);
                    jac[(off + j, col + 1 + a)] = wx * f * (dq.x * q.z - q.x * dq.z) / d2;
                    jac[(off + n + j, col + 1 + a)] = wy * f * (dq.y * q.z - q.y * dq.z) / d2;
                }
                jac[(off + j, col + 4)] = wx * f / q.z;
                jac[(off + n + j, col + 5)] = wy * f / q.z;
                jac[(off + j, col + 6)] = -wx * f * q.x / d2;
                jac[(off + n + j, col + 6)] = -wy * f * q.y / d2;
            }
            off += 2 * n;
        }
        jac
    }

    fn apply(&self, s: &RefineState, step: &DVector<f64>) -> Option<RefineState> {
        let f1 = s.f1 + step[0];
        if !(f1.is_finite() && f1 > 0.0) {
            return None;
        }
        let mut cams = Vec::with_capacity(s.cams.len());
        for (i, cam) in s.cams.iter().enumerate() {
            let b = 1 + 7 * i;
            let f = cam.f + step[b];
            let omega = Vector3::new(step[b + 1], step[b + 2], step[b + 3]);
            let r = cam.r * Rotation3::new(omega).into_inner();
            let t = cam.t + Vector3::new(step[b + 4], step[b + 5], step[b + 6]);
            if !(f.is_finite() && f > 0.0) || t.z.abs() < MIN_TZ_MM {
                return None;
            }
            cams.push(CameraParams { f, r, t });
        }
        Some(RefineState { f1, cams })
    }

    /// The unsquared combined objective over pixel residuals.
    fn metric(&self, residuals: &DVector<f64>) -> f64 {
        let n = self.base.len();
        let mut total = 0.0;
        let mut off = 0;
        for view in &self.views {
            let rx = residuals.rows(off, n).norm();
            let ry = residuals.rows(off + n, n).norm();
            total += view.lambda.sqrt() * rx + (1.0 - view.lambda).sqrt() * ry;
            off += 2 * n;
        }
        total
    }
}

/// Swaps in strictly better rotation branches, camera by camera, holding
/// everything else fixed. Returns whether any camera changed.
fn recheck_branches(problem: &RefineProblem, state: &mut RefineState) -> bool {
    let mut improved = false;
    for (view, cam) in problem.views.iter().zip(state.cams.iter_mut()) {
        let Some(current) = problem.camera_term(view, state.f1, cam) else {
            continue;
        };
        let seed = RotationSeed::from_rotation(&cam.r);
        let Ok(set) = enumerate_rotations(&seed) else {
            continue;
        };
        let mut best: Option<(Matrix3<f64>, f64)> = None;
        for candidate in &set.candidates {
            let trial = CameraParams {
                r: candidate.rotation,
                ..cam.clone()
            };
            let Some(term) = problem.camera_term(view, state.f1, &trial) else {
                continue;
            };
            if best.as_ref().map_or(true, |(_, t)| term < *t) {
                best = Some((candidate.rotation, term));
            }
        }
        if let Some((rotation, term)) = best {
            if term < current * (1.0 - BRANCH_IMPROVEMENT) {
                cam.r = rotation;
                improved = true;
            }
        }
    }
    improved
}

fn branch_label(r: &Matrix3<f64>) -> Option<String> {
    let seed = RotationSeed::from_rotation(r);
    enumerate_rotations(&seed)
        .ok()
        .map(|set| set.nearest(r).label.to_string())
}

/// One seeding tier's grid scan plus refinement.
struct TierRun {
    outcome: lm::LmOutcome<RefineState>,
    iterations: usize,
    trace: Vec<f64>,
    branch_rounds: usize,
    grid_index: usize,
    grid_f1: f64,
    /// The refinement metric at the final state.
    metric: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_tier(
    problem: &RefineProblem,
    blocks: &[Block],
    base: &[StereoPointEstimate],
    cells: &[f64],
    cutoff: f64,
    min_free: usize,
    settings: &LmSettings,
    refine_cells: usize,
) -> Option<TierRun> {
    let inits: Vec<InitBlock> = blocks
        .iter()
        .map(|b| InitBlock::new(&b.system, cutoff, min_free))
        .collect();
    let picks = scan_cells(problem, cells, blocks, &inits, base);
    if picks.is_empty() {
        return None;
    }
    let mut run: Option<TierRun> = None;
    let channels = [(picks.design, false), (picks.pixels, true)];
    for (pick, by_pixels) in channels {
        let Some((grid_index, seed)) = pick else {
            continue;
        };
        let Some(candidate) = refine_from_cell(
            problem,
            blocks,
            base,
            cells,
            &inits,
            grid_index,
            seed,
            by_pixels,
            settings,
            refine_cells,
        ) else {
            continue;
        };
        if run.as_ref().map_or(true, |r| candidate.metric < r.metric) {
            run = Some(candidate);
        }
    }
    run
}

#[allow(clippy::too_many_arguments)]
fn refine_from_cell(
    problem: &RefineProblem,
    blocks: &[Block],
    base: &[StereoPointEstimate],
    cells: &[f64],
    inits: &[InitBlock],
    grid_index: usize,
    mut best: ChannelSeed,
    by_pixels: bool,
    settings: &LmSettings,
    refine_cells: usize,
) -> Option<TierRun> {
    let lo = cells[grid_index.saturating_sub(1)];
    let hi = cells[(grid_index + 1).min(cells.len() - 1)];
    for f1 in geometric_grid(lo, hi, refine_cells.max(2)) {
        let cell = score_cell(problem, blocks, inits, base, f1);
        let channel = if by_pixels { cell.pixels } else { cell.design };
        if let Some(ch) = channel {
            if ch.score < best.score {
                best = ch;
            }
        }
    }

    let grid_f1 = best.f1;
    let state0 = RefineState {
        f1: grid_f1,
        cams: best.cams,
    };
    let mut outcome = lm::minimize(problem, state0, settings)?;
    let mut iterations = outcome.iterations;
    let mut trace = outcome.trace.clone();
    let mut branch_rounds = 0usize;
    for _ in 0..MAX_BRANCH_ROUNDS {
        let mut state = outcome.state.clone();
        if !recheck_branches(problem, &mut state) {
            break;
        }
        branch_rounds += 1;
        match lm::minimize(problem, state, settings) {
            Some(next) => {
                iterations += next.iterations;
                trace.extend_from_slice(&next.trace);
                outcome = next;
            }
            None => break,
        }
    }
    let metric = *trace.last().expect("the seed metric is always recorded");
    Some(TierRun {
        outcome,
        iterations,
        trace,
        branch_rounds,
        grid_index,
        grid_f1,
        metric,
    })
}

/// Calibrates the network: shared focal length, every monocular camera's
/// intrinsics and pose, and the metric cloud.
///
/// Returns [`Error::NotConverged`] carrying the best-effort result when the
/// iteration budget runs out before the convergence rule fires.
pub fn calibrate(
    obs: &ObservationSet,
    rig: &StereoRig,
    config: &SolverConfig,
) -> Result<CalibrationResult> {
    let feas = feasibility(obs.cameras(), obs.points());
    if !feas.feasible {
        return Err(Error::InfeasibleNetwork {
            cameras: obs.cameras(),
            points: obs.points(),
            slack: feas.slack,
        });
    }
    let ratio = stereo::estimate_focal_ratio_with(obs, config.ratio_aggregation, config.min_y1_px)?;
    let base = stereo::triangulate_all(obs, rig.baseline_mm, ratio.rho)?;
    let lambdas = config.lambda.resolve(obs.cameras() - 2)?;
    let blocks = make_blocks(obs, &base, &lambdas)?;
    let cells = grid_cells(&config.f1_grid, obs)?;
    let problem = RefineProblem::new(obs, &base, &lambdas);
    let settings = LmSettings {
        max_iterations: config.max_iterations,
        rel_tolerance: config.rel_tolerance,
        consecutive: 3,
        damping: config.damping.clone(),
    };

    // Two seeding tiers: raw least-squares directions keep noiseless data
    // exact, while the consistency-pinned directions survive noise that
    // corrupts the weakly determined components. Run the grid scan and the
    // refinement from both and keep the lower final reprojection metric
    // (strict comparison, so the first tier wins ties).
    let mut run: Option<TierRun> = None;
    for (cutoff, min_free) in [
        (EXACT_RANK_CUTOFF, 0),
        (WEAK_DIRECTION_CUTOFF, CONSISTENCY_FREE_DIMS),
    ] {
        let Some(candidate) = run_tier(
            &problem,
            &blocks,
            &base,
            &cells,
            cutoff,
            min_free,
            &settings,
            config.f1_grid.refine_cells,
        ) else {
            continue;
        };
        if run.as_ref().map_or(true, |r| candidate.metric < r.metric) {
            run = Some(candidate);
        }
    }
    let Some(run) = run else {
        return Err(Error::InitializationFailed);
    };
    let TierRun {
        outcome,
        iterations,
        trace,
        branch_rounds,
        grid_index: best_index,
        grid_f1,
        metric: _,
    } = run;

    let state = &outcome.state;
    let cloud = base.iter().map(|e| e.world(state.f1)).collect();
    let mut cameras = Vec::with_capacity(state.cams.len());
    let mut per_point_residuals = Vec::with_capacity(state.cams.len());
    let mut objective_value = 0.0;
    for (block, cam) in blocks.iter().zip(&state.cams) {
        let packed = pack_parameters(state.f1, &cam.model()).map_err(|_| {
            Error::InvalidParameters("refined parameters left the packing domain".into())
        })?;
        objective_value += block.term(&packed);
        per_point_residuals.push(block.system.per_point_residuals(&packed));
        cameras.push(SolvedCamera {
            camera: cam.model(),
            branch_label: branch_label(&cam.r),
        });
    }

    let result = CalibrationResult {
        f1: state.f1,
        ratio,
        cameras,
        cloud,
        objective_value,
        per_point_residuals,
        diagnostics: SolveDiagnostics {
            converged: outcome.converged,
            iterations,
            final_damping: outcome.final_damping,
            grid_index: best_index,
            grid_f1_px: grid_f1,
            branch_rounds,
            objective_trace: trace,
        },
    };
    if !outcome.converged {
        return Err(Error::NotConverged {
            iterations,
            result: Box::new(result),
        });
    }
    Ok(result)
}

#[cfg(test)]
pub(super) mod test_support {
    use super::*;
    use crate::solver::LambdaWeights;

    /// A deterministic hand-placed network: stereo pair plus two rotated
    /// monocular cameras, points spread through a box ahead of the pair.
    pub fn network(points: usize) -> (StereoRig, Vec<CameraModel>, Vec<crate::model::WorldPoint>) {
        let rig = StereoRig::new(125.0).unwrap();
        let f1 = 900.0;
        let f2 = 650.0;
        let mono1 = CameraModel {
            f: 1200.0,
            r: Rotation3::from_euler_angles(0.12, -0.25, 0.05).into_inner(),
            t: Vector3::new(80.0, -40.0, 120.0),
        };
        let mono2 = CameraModel {
            f: 1050.0,
            r: Rotation3::from_euler_angles(-0.18, 0.2, -0.1).into_inner(),
            t: Vector3::new(-60.0, 30.0, 90.0),
        };
        let cams = vec![rig.camera1(f1), rig.camera2(f2), mono1, mono2];

        let mut pts = Vec::with_capacity(points);
        let mut k = 0usize;
        while pts.len() < points {
            // Low-discrepancy lattice inside the box.
            let u = (k as f64 * 0.754877666) % 1.0;
            let v = (k as f64 * 0.569840296) % 1.0;
            let w = (k as f64 * 0.362941292) % 1.0;
            k += 1;
            let p = crate::model::WorldPoint::new(
                76.0 + 98.0 * u,
                56.0 + 168.0 * v,
                482.0 + 75.0 * w,
            );
            if cams.iter().all(|c| c.project(&p).is_ok()) {
                pts.push(p);
            }
        }
        (rig, cams, pts)
    }

    pub fn observe(cams: &[CameraModel], pts: &[crate::model::WorldPoint]) -> ObservationSet {
        let mut data = Vec::new();
        for cam in cams {
            for p in pts {
                data.push(cam.project(p).unwrap().point);
            }
        }
        ObservationSet::new(cams.len(), pts.len(), data).unwrap()
    }

    pub fn config() -> SolverConfig {
        SolverConfig {
            lambda: LambdaWeights::Global(0.5),
            ..SolverConfig::default()
        }
    }
}
