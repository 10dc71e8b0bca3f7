//! Completing a rotation matrix from three of its entries.
//!
//! The linear stage of the solver recovers `r1`, `r2` (first row) and `r4`
//! (second row) of a camera's rotation only up to the quadratic unit-row and
//! orthogonality constraints. Those constraints admit finitely many
//! completions: `r5` solves a quadratic, the magnitudes of `r3` and `r6`
//! follow from the unit rows, their signs are free up to the orthogonality
//! product, and the third row is the cross product of the first two. This
//! module enumerates every completion that is a proper rotation; the solver
//! treats them as branch candidates.

use std::fmt;

use nalgebra::{Matrix3, RowVector3};

use crate::error::{Error, Result};

/// `|1 - r1^2|` at or below this bound makes the `r5` quadratic singular.
pub const SEED_SINGULAR_TOL: f64 = 1e-10;

/// Discriminants in `[-DISCRIMINANT_CLAMP, 0)` are treated as rounded-off
/// zeros; anything lower is infeasible.
pub const DISCRIMINANT_CLAMP: f64 = 1e-10;

/// Elementwise bound on `R * R^T - I` a candidate must meet.
pub const ORTHONORMALITY_TOL: f64 = 1e-9;

/// Seed tolerance for the quadratic row bounds.
pub const SEED_BOUND_TOL: f64 = 1e-9;

/// The so(3) generators: `d/d omega_a` of `exp(omega^)` at the identity.
pub(crate) fn skew_basis() -> [Matrix3<f64>; 3] {
    [
        Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0),
        Matrix3::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0),
        Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
    ]
}

/// The three rotation entries the linear stage determines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationSeed {
    pub r1: f64,
    pub r2: f64,
    pub r4: f64,
}

impl RotationSeed {
    /// Validates the row bounds `r1^2 + r2^2 <= 1` and `r1^2 + r4^2 <= 1`
    /// up to [`SEED_BOUND_TOL`].
    pub fn new(r1: f64, r2: f64, r4: f64) -> Result<Self> {
        if !(r1.is_finite() && r2.is_finite() && r4.is_finite()) {
            return Err(Error::InvalidSeed("non-finite entry".into()));
        }
        if r1 * r1 + r2 * r2 > 1.0 + SEED_BOUND_TOL {
            return Err(Error::InvalidSeed(format!(
                "r1^2 + r2^2 = {} exceeds 1",
                r1 * r1 + r2 * r2
            )));
        }
        if r1 * r1 + r4 * r4 > 1.0 + SEED_BOUND_TOL {
            return Err(Error::InvalidSeed(format!(
                "r1^2 + r4^2 = {} exceeds 1",
                r1 * r1 + r4 * r4
            )));
        }
        Ok(Self { r1, r2, r4 })
    }

    pub fn from_rotation(r: &Matrix3<f64>) -> Self {
        Self {
            r1: r[(0, 0)],
            r2: r[(0, 1)],
            r4: r[(1, 0)],
        }
    }

    /// Discriminant of the `r5` quadratic, in the factored form
    /// `(1 - r1^2 - r2^2) (1 - r1^2 - r4^2)`. Non-negative (up to rounding)
    /// for every seed taken from a real rotation.
    pub fn discriminant(&self) -> f64 {
        let (r1, r2, r4) = (self.r1, self.r2, self.r4);
        (1.0 - r1 * r1 - r2 * r2) * (1.0 - r1 * r1 - r4 * r4)
    }
}

/// One sign choice in a branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

/// Identifies one completion branch: the `r5` root, then the signs of `r3`
/// and `r6`. In the gimbal case (`|r1| = 1`, see [`enumerate_rotations`]) the
/// first sign is fixed to `+` and the other two label the diagonal signs of
/// the remaining 2x2 block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct BranchLabel {
    pub r5_root: Sign,
    pub r3_sign: Sign,
    pub r6_sign: Sign,
}

impl fmt::Display for BranchLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.r5_root, self.r3_sign, self.r6_sign)
    }
}

/// A completed rotation together with the branch that produced it.
#[derive(Clone, Debug)]
pub struct RotationCandidate {
    pub label: BranchLabel,
    pub rotation: Matrix3<f64>,
}

/// All proper-rotation completions of a seed, in deterministic branch order
/// (`+` before `-`, ordered by `r5` root, then `r3`, then `r6`).
#[derive(Clone, Debug)]
pub struct RotationCandidateSet {
    pub candidates: Vec<RotationCandidate>,
}

impl RotationCandidateSet {
    /// The candidate closest to `r` in the elementwise max norm.
    pub fn nearest(&self, r: &Matrix3<f64>) -> &RotationCandidate {
        self.candidates
            .iter()
            .min_by(|a, b| {
                let da = (a.rotation - r).amax();
                let db = (b.rotation - r).amax();
                da.total_cmp(&db)
            })
            .expect("candidate set is never empty")
    }
}

/// Solves the `r5` quadratic for one root.
///
/// Errors when the quadratic is singular (`|r1| = 1` up to
/// [`SEED_SINGULAR_TOL`]) or the discriminant is negative beyond
/// [`DISCRIMINANT_CLAMP`].
pub fn complete_r5(seed: &RotationSeed, root: Sign) -> Result<f64> {
    let denom = 1.0 - seed.r1 * seed.r1;
    if denom.abs() <= SEED_SINGULAR_TOL {
        return Err(Error::SingularSeed {
            tolerance: SEED_SINGULAR_TOL,
        });
    }
    let disc = seed.discriminant();
    if disc < -DISCRIMINANT_CLAMP {
        return Err(Error::InfeasibleSeed {
            discriminant: disc,
        });
    }
    let sqrt_disc = disc.max(0.0).sqrt();
    let c = seed.r1 * seed.r2 * seed.r4;
    // The quadratic is denom r5^2 + 2 c r5 + e. The root whose radical adds
    // to -c is safe; the other follows from the product of roots e / denom,
    // avoiding the subtractive cancellation of the textbook formula.
    let e = seed.r1 * seed.r1 * seed.r4 * seed.r4
        - (1.0 - seed.r1 * seed.r1 - seed.r2 * seed.r2) * (1.0 - seed.r4 * seed.r4);
    let direct = (-c + root.value() * sqrt_disc) / denom;
    let cancels = c * root.value() > 0.0;
    if !cancels || direct == 0.0 {
        return Ok(direct);
    }
    let safe = (-c - root.value() * sqrt_disc) / denom;
    if safe == 0.0 {
        Ok(direct)
    } else {
        Ok(e / (denom * safe))
    }
}

/// Newton-polishes `(r5, r6)` against the exact second-row unit norm and the
/// row-orthogonality constraint at fixed `r3`. Eliminating `r6` to reach the
/// `r5` quadratic squares the conditioning of nearly coincident roots; the
/// closed form therefore only seeds this refinement. Reverts to the seed
/// values when the iteration wants to leave the branch (a move that large
/// means the sign combination is inconsistent, which the orthonormality
/// filter must see unrepaired).
fn polish_second_row(seed: &RotationSeed, r3: f64, r5: &mut f64, r6: &mut f64) {
    const MAX_MOVE: f64 = 1e-5;
    let (r1, r2, r4) = (seed.r1, seed.r2, seed.r4);
    let (start5, start6) = (*r5, *r6);
    let (mut cur5, mut cur6) = (start5, start6);
    let mut best = f64::INFINITY;
    for _ in 0..30 {
        let g1 = r4 * r4 + cur5 * cur5 + cur6 * cur6 - 1.0;
        let g2 = r1 * r4 + r2 * cur5 + r3 * cur6;
        let norm = g1.abs().max(g2.abs());
        if norm < best {
            best = norm;
            *r5 = cur5;
            *r6 = cur6;
        }
        if norm <= 1e-15 {
            break;
        }
        let det = 2.0 * (cur5 * r3 - cur6 * r2);
        if det.abs() <= 1e-8 {
            break;
        }
        let d5 = (r3 * g1 - 2.0 * cur6 * g2) / det;
        let d6 = (2.0 * cur5 * g2 - r2 * g1) / det;
        cur5 -= d5;
        cur6 -= d6;
        if d5.abs().max(d6.abs()) <= 1e-16 {
            break;
        }
    }
    if (*r5 - start5).abs() > MAX_MOVE || (*r6 - start6).abs() > MAX_MOVE {
        *r5 = start5;
        *r6 = start6;
    }
}

/// Enumerates every proper-rotation completion of a seed.
///
/// The general path walks both `r5` roots and all sign choices for `r3` and
/// `r6`, builds the third row as the cross product of the first two, and
/// keeps candidates that are orthonormal within [`ORTHONORMALITY_TOL`]; sign
/// combinations violating the orthogonality product `r3 * r6 = -(r1 r4 +
/// r2 r5)` fail that filter, which is what caps the set at eight. Zero
/// magnitudes collapse their sign choice so no duplicate matrices appear.
///
/// When `|r1| = 1` the quadratic degenerates and the seed pins only the first
/// row and column; the remaining 2x2 block is any planar rotation, so the
/// seed genuinely under-determines the matrix. The two axis-aligned
/// representatives (diagonal sign matrices of determinant +1) are returned.
pub fn enumerate_rotations(seed: &RotationSeed) -> Result<RotationCandidateSet> {
    let seed = RotationSeed::new(seed.r1, seed.r2, seed.r4)?;
    let signs = [Sign::Plus, Sign::Minus];
    let mut candidates = Vec::new();

    if (1.0 - seed.r1 * seed.r1).abs() <= SEED_SINGULAR_TOL {
        let r1 = seed.r1.signum();
        for s5 in signs {
            let s9 = if r1 * s5.value() > 0.0 { Sign::Plus } else { Sign::Minus };
            let rotation = Matrix3::from_diagonal(&nalgebra::Vector3::new(
                r1,
                s5.value(),
                s9.value(),
            ));
            candidates.push(RotationCandidate {
                label: BranchLabel {
                    r5_root: Sign::Plus,
                    r3_sign: s5,
                    r6_sign: s9,
                },
                rotation,
            });
        }
        return Ok(RotationCandidateSet { candidates });
    }

    let disc = seed.discriminant();
    if disc < -DISCRIMINANT_CLAMP {
        return Err(Error::InfeasibleSeed { discriminant: disc });
    }
    let double_root = disc <= 0.0;

    let r3_mag = (1.0 - seed.r1 * seed.r1 - seed.r2 * seed.r2).max(0.0).sqrt();
    for s5 in signs {
        if double_root && s5 == Sign::Minus {
            continue;
        }
        let r5_root = complete_r5(&seed, s5)?;
        let r6_mag = (1.0 - seed.r4 * seed.r4 - r5_root * r5_root).max(0.0).sqrt();
        for s3 in signs {
            if r3_mag == 0.0 && s3 == Sign::Minus {
                continue;
            }
            for s6 in signs {
                if r6_mag == 0.0 && s6 == Sign::Minus {
                    continue;
                }
                let r3 = s3.value() * r3_mag;
                let mut r5 = r5_root;
                let mut r6 = s6.value() * r6_mag;
                polish_second_row(&seed, r3, &mut r5, &mut r6);
                let row1 = RowVector3::new(seed.r1, seed.r2, r3);
                let row2 = RowVector3::new(seed.r4, r5, r6);
                let row3 = row1.transpose().cross(&row2.transpose()).transpose();
                let rotation = Matrix3::from_rows(&[row1, row2, row3]);
                let defect = (rotation * rotation.transpose() - Matrix3::identity()).amax();
                if defect <= ORTHONORMALITY_TOL {
                    candidates.push(RotationCandidate {
                        label: BranchLabel {
                            r5_root: s5,
                            r3_sign: s3,
                            r6_sign: s6,
                        },
                        rotation,
                    });
                }
            }
        }
    }

    if candidates.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    Ok(RotationCandidateSet { candidates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Vector3};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// Uniform random rotation via uniformly distributed unit quaternions.
    pub(crate) fn uniform_rotation(rng: &mut impl RngExt) -> Matrix3<f64> {
        let u1: f64 = rng.random_range(0.0..1.0);
        let u2: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let u3: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        let q = nalgebra::Quaternion::new(b * u3.cos(), a * u2.sin(), a * u2.cos(), b * u3.sin());
        nalgebra::UnitQuaternion::from_quaternion(q)
            .to_rotation_matrix()
            .into_inner()
    }

    #[test]
    fn double_root_seed_solves_to_zero() {
        let seed = RotationSeed::new(0.0, -1.0, 1.0).unwrap();
        assert_relative_eq!(seed.discriminant(), 0.0);
        assert_eq!(complete_r5(&seed, Sign::Plus).unwrap(), 0.0);
        assert_eq!(complete_r5(&seed, Sign::Minus).unwrap(), 0.0);
    }

    #[test]
    fn z_rotation_seed_recovers_its_cosine() {
        let th = 30f64.to_radians();
        let seed = RotationSeed::new(th.cos(), -th.sin(), th.sin()).unwrap();
        let r5 = complete_r5(&seed, Sign::Plus).unwrap();
        assert_relative_eq!(r5, th.cos(), max_relative = 1e-12);
    }

    #[test]
    fn axis_aligned_seed_is_singular_for_the_quadratic() {
        let seed = RotationSeed::new(1.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            complete_r5(&seed, Sign::Plus),
            Err(Error::SingularSeed { .. })
        ));
    }

    #[test]
    fn gimbal_seed_enumerates_axis_aligned_representatives() {
        let seed = RotationSeed::new(1.0, 0.0, 0.0).unwrap();
        let set = enumerate_rotations(&seed).unwrap();
        assert_eq!(set.candidates.len(), 2);
        assert!(set
            .candidates
            .iter()
            .any(|c| (c.rotation - Matrix3::identity()).amax() == 0.0));
        for c in &set.candidates {
            assert_relative_eq!(c.rotation.determinant(), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn quarter_turn_seed_contains_the_quarter_turn() {
        let seed = RotationSeed::new(0.0, -1.0, 1.0).unwrap();
        let set = enumerate_rotations(&seed).unwrap();
        let rz90 = Rotation3::from_axis_angle(&Vector3::z_axis(), 90f64.to_radians()).into_inner();
        let best = set.nearest(&rz90);
        assert!((best.rotation - rz90).amax() <= 1e-12);
    }

    #[test]
    fn rejects_seeds_violating_the_row_bounds() {
        assert!(RotationSeed::new(0.9, 0.9, 0.0).is_err());
        assert!(RotationSeed::new(0.9, 0.0, 0.9).is_err());
    }

    #[test]
    fn candidates_are_sound_and_bounded() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..200 {
            let r = uniform_rotation(&mut rng);
            let seed = RotationSeed::from_rotation(&r);
            let set = enumerate_rotations(&seed).unwrap();
            assert!(!set.candidates.is_empty());
            assert!(set.candidates.len() <= 8);
            for c in &set.candidates {
                let defect = (c.rotation * c.rotation.transpose() - Matrix3::identity()).amax();
                assert!(defect <= ORTHONORMALITY_TOL, "defect {defect}");
                assert!((c.rotation.determinant() - 1.0).abs() <= 1e-9);
                assert_relative_eq!(c.rotation[(0, 0)], seed.r1, epsilon = 1e-12);
                assert_relative_eq!(c.rotation[(0, 1)], seed.r2, epsilon = 1e-12);
                assert_relative_eq!(c.rotation[(1, 0)], seed.r4, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn generator_is_always_among_the_candidates() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for _ in 0..200 {
            let r = uniform_rotation(&mut rng);
            let seed = RotationSeed::from_rotation(&r);
            let set = enumerate_rotations(&seed).unwrap();
            let best = set.nearest(&r);
            assert!(
                (best.rotation - r).amax() <= 1e-9,
                "generator missing, best defect {}",
                (best.rotation - r).amax()
            );
        }
    }

    #[test]
    fn enumeration_is_deterministic() {
        let seed = RotationSeed::new(0.3, -0.5, 0.4).unwrap();
        let a = enumerate_rotations(&seed).unwrap();
        let b = enumerate_rotations(&seed).unwrap();
        assert_eq!(a.candidates.len(), b.candidates.len());
        for (ca, cb) in a.candidates.iter().zip(&b.candidates) {
            assert_eq!(ca.label, cb.label);
            assert_eq!(ca.rotation, cb.rotation);
        }
        let labels: Vec<String> = a.candidates.iter().map(|c| c.label.to_string()).collect();
        let mut sorted = labels.clone();
        sorted.sort();
        assert_eq!(labels, sorted);
    }
}
