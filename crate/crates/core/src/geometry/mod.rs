//! Primitives on the rotation group SO(n) and its Lie algebra so(n).
//!
//! All norms use the half-Frobenius inner product `<A, B> = tr(AᵀB) / 2`, under
//! which a single rotation block of angle θ has norm |θ| and the geodesic
//! distance from the identity is the Euclidean norm of the principal angles.

mod canonical;
mod io;
mod sampling;

use std::fmt;
use std::ops::Mul;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use canonical::{
    canonical_rotation_form, canonical_skew_form, principal_angles, RotationCanonicalForm,
    SkewCanonicalForm,
};
pub use io::{matrix_from_csv, matrix_from_json, matrix_to_csv, matrix_to_json, MatrixJson};
pub use sampling::{random_skew_direction, sample_ball, sample_haar};

/// Convenience alias used throughout the crate.
pub type Matrix = DMatrix<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dimension {0} is below the minimum of 2")]
    DimensionTooSmall(usize),
    #[error("matrix is not orthogonal: |RᵀR - I| = {residual:e}")]
    NotOrthogonal { residual: f64 },
    #[error("determinant {det} differs from +1")]
    WrongDeterminant { det: f64 },
    #[error("matrix is not skew-symmetric: |X + Xᵀ| = {residual:e}")]
    NotSkew { residual: f64 },
    #[error("eigensolver failure: {0}")]
    Eigensolver(String),
    #[error("canonical form reconstruction residual {residual:e} exceeds {tol:e}")]
    Reconstruction { residual: f64, tol: f64 },
    #[error("principal angle {angle} is at π: the logarithm branch is not unique")]
    BranchAmbiguity { angle: f64 },
    #[error("ball radius {0} outside (0, π]")]
    InvalidRadius(f64),
    #[error("invalid matrix data: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Tolerances shared by every invariant check in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Bound on |RᵀR − I| and |det R − 1|.
    pub orth: f64,
    /// Bound on |X + Xᵀ|.
    pub skew: f64,
    /// Bound on the canonical form reconstruction residual.
    pub recon: f64,
    /// Angles (or rates) below this are absorbed into the fixed subspace.
    pub angle: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            orth: 1e-10,
            skew: 1e-12,
            recon: 1e-9,
            angle: 1e-9,
        }
    }
}

/// `tr(AᵀB) / 2`.
pub fn half_frobenius(a: &Matrix, b: &Matrix) -> Result<f64> {
    check_square(a)?;
    if a.shape() != b.shape() {
        return Err(GeometryError::DimensionMismatch {
            expected: a.nrows(),
            found: b.nrows(),
        });
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>() / 2.0)
}

/// Norm induced by [`half_frobenius`]; `|A| = |A|_F / √2`.
pub fn norm(a: &Matrix) -> f64 {
    a.norm() / std::f64::consts::SQRT_2
}

fn check_square(a: &Matrix) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(GeometryError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(())
}

fn check_same_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(GeometryError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// An element of SO(n).
#[derive(Clone, PartialEq)]
pub struct Rotation(Matrix);

impl Rotation {
    /// Validates orthogonality and unit determinant with the default tolerances.
    pub fn new(m: Matrix) -> Result<Self> {
        Self::with_tolerance(m, Tolerances::default().orth)
    }

    pub fn with_tolerance(m: Matrix, tol: f64) -> Result<Self> {
        check_square(&m)?;
        if m.nrows() < 2 {
            return Err(GeometryError::DimensionTooSmall(m.nrows()));
        }
        let residual = orthogonality_defect(&m);
        if !(residual <= tol) {
            return Err(GeometryError::NotOrthogonal { residual });
        }
        let det = m.determinant();
        if !((det - 1.0).abs() <= tol) {
            return Err(GeometryError::WrongDeterminant { det });
        }
        Ok(Rotation(m))
    }

    /// Skips validation. Callers guarantee the matrix came out of a group operation.
    pub(crate) fn new_unchecked(m: Matrix) -> Self {
        Rotation(m)
    }

    pub fn identity(n: usize) -> Self {
        Rotation(Matrix::identity(n, n))
    }

    /// The planar rotation `[[cos θ, -sin θ], [sin θ, cos θ]]`.
    pub fn planar(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Rotation(Matrix::from_row_slice(2, 2, &[c, -s, s, c]))
    }

    /// Block-diagonal `diag(R(θ_1), …, R(θ_m), I_{n-2m})`.
    pub fn from_block_angles(n: usize, angles: &[f64]) -> Result<Self> {
        if 2 * angles.len() > n {
            return Err(GeometryError::DimensionMismatch {
                expected: n,
                found: 2 * angles.len(),
            });
        }
        let mut m = Matrix::identity(n, n);
        for (k, &theta) in angles.iter().enumerate() {
            let (s, c) = theta.sin_cos();
            let i = 2 * k;
            m[(i, i)] = c;
            m[(i, i + 1)] = -s;
            m[(i + 1, i)] = s;
            m[(i + 1, i + 1)] = c;
        }
        Ok(Rotation(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// The inverse element.
    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// |RᵀR − I| in the half-Frobenius norm.
    pub fn orthogonality_defect(&self) -> f64 {
        orthogonality_defect(&self.0)
    }
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rotation{}", self.0)
    }
}

impl Mul for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(&self.0 * &rhs.0)
    }
}

pub(crate) fn orthogonality_defect(m: &Matrix) -> f64 {
    let n = m.nrows();
    norm(&(m.transpose() * m - Matrix::identity(n, n)))
}

/// An element of so(n).
#[derive(Clone, PartialEq)]
pub struct Skew(Matrix);

impl Skew {
    pub fn new(m: Matrix) -> Result<Self> {
        Self::with_tolerance(m, Tolerances::default().skew)
    }

    pub fn with_tolerance(m: Matrix, tol: f64) -> Result<Self> {
        check_square(&m)?;
        let residual = norm(&(&m + m.transpose()));
        if !(residual <= tol) {
            return Err(GeometryError::NotSkew { residual });
        }
        Ok(Skew(m))
    }

    pub(crate) fn new_unchecked(m: Matrix) -> Self {
        Skew(m)
    }

    pub fn zero(n: usize) -> Self {
        Skew(Matrix::zeros(n, n))
    }

    /// `[[0, -ν], [ν, 0]]`.
    pub fn planar(nu: f64) -> Self {
        Skew(Matrix::from_row_slice(2, 2, &[0.0, -nu, nu, 0.0]))
    }

    /// Block-diagonal `diag(λ_1 J, …, λ_k J, O)`.
    pub fn from_block_rates(n: usize, rates: &[f64]) -> Result<Self> {
        if 2 * rates.len() > n {
            return Err(GeometryError::DimensionMismatch {
                expected: n,
                found: 2 * rates.len(),
            });
        }
        let mut m = Matrix::zeros(n, n);
        for (k, &lambda) in rates.iter().enumerate() {
            m[(2 * k + 1, 2 * k)] = lambda;
            m[(2 * k, 2 * k + 1)] = -lambda;
        }
        Ok(Skew(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn scaled(&self, factor: f64) -> Skew {
        Skew(&self.0 * factor)
    }

    /// Conjugation `P X Pᵀ`, which stays in so(n) for orthogonal P.
    pub fn conjugated(&self, p: &Matrix) -> Skew {
        Skew(skew_part(&(p * &self.0 * p.transpose())))
    }
}

impl fmt::Debug for Skew {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Skew{}", self.0)
    }
}

fn skew_part(x: &Matrix) -> Matrix {
    (x - x.transpose()) * 0.5
}

/// Orthogonal projection onto so(n): `(X − Xᵀ)/2`.
pub fn project_skew(x: &Matrix) -> Result<Skew> {
    check_square(x)?;
    Ok(Skew(skew_part(x)))
}

/// Orthogonal projection of `X` onto the tangent space `so(n)·R`.
pub fn project_tangent(x: &Matrix, r: &Rotation) -> Result<Matrix> {
    check_square(x)?;
    check_same_dim(r.dim(), x.nrows())?;
    let rm = r.matrix();
    let generator = (x * rm.transpose() - rm * x.transpose()) * 0.5;
    Ok(generator * rm)
}

/// Geodesic distance `d(A, B) = d(I, AᵀB)`.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> Result<f64> {
    check_same_dim(a.dim(), b.dim())?;
    let rel = Rotation::new_unchecked(a.matrix().transpose() * b.matrix());
    distance_from_identity(&rel)
}

/// `d(I, R)`: the Euclidean norm of the principal angles.
///
/// Dimensions two and three use closed forms. Larger ones diagonalize the
/// symmetric part `C = (R + Rᵀ)/2`, whose eigenvalues are the cosines of the
/// principal angles (each twice) and ones; the matching sines are read off as
/// `‖S v‖` with `S = (R − Rᵀ)/2`, which keeps small angles accurate.
pub fn distance_from_identity(r: &Rotation) -> Result<f64> {
    let m = r.matrix();
    match r.dim() {
        2 => Ok((m[(1, 0)] - m[(0, 1)])
            .atan2(m[(0, 0)] + m[(1, 1)])
            .abs()),
        3 => {
            let sin = norm(&skew_part(m));
            let cos = (m.trace() - 1.0) / 2.0;
            Ok(sin.atan2(cos))
        }
        _ => {
            let s = skew_part(m);
            let eig = ((m + m.transpose()) * 0.5).symmetric_eigen();
            let total: f64 = eig
                .eigenvectors
                .column_iter()
                .zip(eig.eigenvalues.iter())
                .map(|(v, &cos)| (&s * v).norm().atan2(cos).powi(2))
                .sum();
            Ok((total / 2.0).sqrt())
        }
    }
}

/// `n − tr(R)`.
pub fn trace_gap(r: &Rotation) -> f64 {
    r.dim() as f64 - r.matrix().trace()
}

/// Matrix exponential of a skew matrix, evaluated block by block on its
/// canonical form so that every block is an exact cosine/sine rotation.
pub fn exp_so(x: &Skew) -> Rotation {
    let m = x.matrix();
    match x.dim() {
        2 => Rotation::planar(m[(1, 0)]),
        3 => rodrigues(m),
        _ => match canonical_skew_form(x, 0.0) {
            Ok(form) => {
                let lambda = Rotation::from_block_angles(x.dim(), &form.rates)
                    .expect("canonical form has at most n/2 blocks");
                let p = &form.basis;
                Rotation(p.transpose() * lambda.matrix() * p)
            }
            // The skew Schur route has never failed in practice; keep the
            // result total by falling back to scaling and squaring.
            Err(_) => Rotation(m.exp()),
        },
    }
}

fn rodrigues(m: &Matrix) -> Rotation {
    let theta = norm(m);
    let m2 = m * m;
    let (a, b) = if theta < 1e-4 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Rotation(Matrix::identity(3, 3) + m * a + m2 * b)
}

/// Exponential for time stepping: the closed forms in dimensions two and
/// three, otherwise a Taylor series on `X / 2^s` with `‖X / 2^s‖ ≤ 1/4`
/// followed by `s` squarings.
pub fn exp_so_series(x: &Skew) -> Rotation {
    if x.dim() <= 3 {
        return exp_so(x);
    }
    let m = x.matrix();
    let size = norm(m);
    let squarings = if size > 0.25 {
        (size / 0.25).log2().ceil() as i32
    } else {
        0
    };
    let y = m * 0.5f64.powi(squarings);
    let mut term = Matrix::identity(m.nrows(), m.ncols());
    let mut sum = term.clone();
    for k in 1..=30 {
        term = &term * &y / k as f64;
        sum += &term;
        if term.amax() <= f64::EPSILON * 1e-3 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    Rotation(sum)
}

/// Scaling-and-squaring Padé exponential. Kept as an independent cross-check
/// of [`exp_so`].
pub fn exp_pade(x: &Matrix) -> Matrix {
    x.exp()
}

/// Principal-branch logarithm. Fails when any principal angle sits at π.
pub fn log_so(r: &Rotation) -> Result<Skew> {
    let tol = Tolerances::default();
    let form = canonical_rotation_form(r, tol)?;
    if let Some(&angle) = form
        .angles
        .angles()
        .iter()
        .find(|&&a| a >= std::f64::consts::PI - tol.angle)
    {
        return Err(GeometryError::BranchAmbiguity { angle });
    }
    let block = Skew::from_block_rates(r.dim(), form.angles.angles())?;
    let p = &form.basis;
    Ok(Skew(skew_part(&(p.transpose() * block.matrix() * p))))
}

/// Sorted rotation angles `θ_1 ≥ … ≥ θ_m` in `(0, π]` of an element of SO(n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalAngles {
    angles: Vec<f64>,
    dim: usize,
}

impl PrincipalAngles {
    pub(crate) fn new(mut angles: Vec<f64>, dim: usize) -> Self {
        angles.sort_by(|a, b| b.total_cmp(a));
        PrincipalAngles { angles, dim }
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Number of rotation blocks.
    pub fn m(&self) -> usize {
        self.angles.len()
    }

    pub fn fixed_subspace_dim(&self) -> usize {
        self.dim - 2 * self.angles.len()
    }

    /// `sqrt(Σθ_j²)`, the distance to the identity.
    pub fn norm(&self) -> f64 {
        self.angles.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_3, PI};

    #[test]
    fn half_frobenius_of_identity_and_rotations() {
        let i3 = Matrix::identity(3, 3);
        assert_eq!(half_frobenius(&i3, &i3).unwrap(), 1.5);
        let r = Rotation::from_block_angles(4, &[0.7, 1.9]).unwrap();
        assert!((half_frobenius(r.matrix(), r.matrix()).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn half_frobenius_matches_entrywise_sum() {
        let a = Matrix::from_fn(3, 3, |i, j| (i as f64 + 1.0) * 0.3 - j as f64);
        let b = Matrix::from_fn(3, 3, |i, j| (i * j) as f64 - 0.5);
        let mut direct = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                direct += a[(i, j)] * b[(i, j)];
            }
        }
        assert!((half_frobenius(&a, &b).unwrap() - direct / 2.0).abs() < 1e-14);
    }

    #[test]
    fn half_frobenius_rejects_mismatch() {
        let a = Matrix::identity(3, 3);
        let b = Matrix::identity(2, 2);
        assert!(matches!(
            half_frobenius(&a, &b),
            Err(GeometryError::DimensionMismatch { .. })
        ));
        let c = Matrix::zeros(2, 3);
        assert!(matches!(
            half_frobenius(&c, &c),
            Err(GeometryError::NotSquare { .. })
        ));
    }

    #[test]
    fn projections() {
        let i4 = Matrix::identity(4, 4);
        assert_eq!(project_skew(&i4).unwrap().norm(), 0.0);
        let x = Skew::from_block_rates(4, &[0.2, -1.0]).unwrap();
        assert_eq!(project_skew(x.matrix()).unwrap(), x);

        let y = Matrix::from_fn(3, 3, |i, j| (i as f64) * 1.3 - (j as f64).powi(2));
        let t = project_tangent(&y, &Rotation::identity(3)).unwrap();
        assert!((t - project_skew(&y).unwrap().into_matrix()).norm() < 1e-15);

        let r = Rotation::from_block_angles(3, &[0.4]).unwrap();
        let q_minus_r = r.matrix() - r.matrix();
        assert_eq!(project_tangent(&q_minus_r, &r).unwrap().norm(), 0.0);
    }

    #[test]
    fn rotation_validation() {
        assert!(Rotation::new(Matrix::identity(3, 3) * 1.01).is_err());
        let mut reflect = Matrix::identity(3, 3);
        reflect[(0, 0)] = -1.0;
        assert!(matches!(
            Rotation::new(reflect),
            Err(GeometryError::WrongDeterminant { .. })
        ));
        assert!(matches!(
            Rotation::new(Matrix::identity(1, 1)),
            Err(GeometryError::DimensionTooSmall(1))
        ));
        assert!(Skew::new(Matrix::identity(2, 2)).is_err());
    }

    #[test]
    fn distances_of_block_rotations() {
        let i = Rotation::identity(4);
        assert_eq!(geodesic_distance(&i, &i).unwrap(), 0.0);
        let r = Rotation::from_block_angles(4, &[0.3, 0.4]).unwrap();
        assert!((geodesic_distance(&i, &r).unwrap() - 0.5).abs() < 1e-12);
        let r3 = Rotation::from_block_angles(3, &[FRAC_PI_3]).unwrap();
        assert!((distance_from_identity(&r3).unwrap() - FRAC_PI_3).abs() < 1e-15);
        let half_turn = Rotation::from_block_angles(3, &[PI]).unwrap();
        assert!((distance_from_identity(&half_turn).unwrap() - PI).abs() < 1e-15);
        assert!(matches!(
            geodesic_distance(&i, &r3),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn trace_gap_values() {
        assert_eq!(trace_gap(&Rotation::identity(3)), 0.0);
        let r = Rotation::from_block_angles(3, &[FRAC_PI_3]).unwrap();
        let gap = trace_gap(&r);
        assert!((gap - 1.0).abs() < 1e-15);
        let d = FRAC_PI_3;
        assert!(4.0 * (d / 2.0).sin().powi(2) <= gap + 1e-15);
        assert!(gap <= d * d);
        for theta in [0.1, 1.0, 2.5, PI] {
            let r = Rotation::from_block_angles(5, &[theta]).unwrap();
            assert!((trace_gap(&r) - 4.0 * (theta / 2.0).sin().powi(2)).abs() < 1e-14);
        }
    }

    #[test]
    fn exp_and_log_closed_forms() {
        assert_eq!(exp_so(&Skew::zero(4)).matrix(), &Matrix::identity(4, 4));
        for theta in [0.2, 1.0, 3.0] {
            let r = exp_so(&Skew::planar(theta));
            assert!((r.matrix() - Rotation::planar(theta).matrix()).norm() < 1e-15);
            let x = log_so(&Rotation::planar(theta)).unwrap();
            assert!((x.matrix() - Skew::planar(theta).matrix()).norm() < 1e-14);
        }
        assert_eq!(log_so(&Rotation::identity(3)).unwrap().norm(), 0.0);
        let half_turn = Rotation::from_block_angles(4, &[PI, 0.5]).unwrap();
        assert!(matches!(
            log_so(&half_turn),
            Err(GeometryError::BranchAmbiguity { .. })
        ));
    }

    #[test]
    fn rodrigues_small_angle_branch() {
        let x = Skew::from_block_rates(3, &[1e-6]).unwrap();
        let a = exp_so(&x);
        let b = exp_pade(x.matrix());
        assert!((a.matrix() - b).norm() < 1e-15);
    }

    #[test]
    fn symmetric_part_distance_matches_canonical_angles() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(31);
        for n in 4..=8 {
            for _ in 0..200 {
                let r = sample_haar(n, &mut rng).unwrap();
                let via_schur = principal_angles(&r, 0.0).unwrap().norm();
                assert!((distance_from_identity(&r).unwrap() - via_schur).abs() < 1e-9);
            }
            let tiny = Rotation::from_block_angles(n, &[3e-9, 1e-9]).unwrap();
            let d = distance_from_identity(&tiny).unwrap();
            assert!((d - 1e-9 * 10f64.sqrt()).abs() < 1e-20);
            let close = Rotation::from_block_angles(n, &[0.7 + 1e-12, 0.7]).unwrap();
            let d = distance_from_identity(&close).unwrap();
            assert!((d - (0.49f64 * 2.0).sqrt()).abs() < 1e-12);
        }
        let half = Rotation::from_block_angles(4, &[PI, PI]).unwrap();
        assert!((distance_from_identity(&half).unwrap() - PI * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn series_exponential_matches_blockwise() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(32);
        for n in 2..=7 {
            for scale in [1e-8, 1e-3, 0.2, 1.0, 3.0, 10.0] {
                let x = random_skew_direction(n, &mut rng).scaled(scale);
                let a = exp_so_series(&x);
                let b = exp_so(&x);
                assert!((a.matrix() - b.matrix()).amax() < 1e-12, "n = {n}, scale = {scale}");
                assert!(a.orthogonality_defect() < 1e-13);
            }
        }
    }
}
