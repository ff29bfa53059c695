//! Orthogonal block canonical forms via the real Schur decomposition.
//!
//! Both rotations and skew matrices are normal, so their real Schur form is
//! block diagonal: 2×2 blocks span invariant planes and 1×1 blocks carry real
//! eigenvalues (±1 for rotations, 0 for skew matrices). Each 2×2 block is read
//! back through the restriction `[u v]ᵀ A [u v]` rather than from the Schur
//! factor directly, which makes the result independent of how the solver
//! normalizes its blocks.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2, Schur, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_square, norm, sample_haar, GeometryError, Matrix, PrincipalAngles, Result, Rotation,
    Skew, Tolerances,
};

/// `R = Pᵀ Λ P` with `Λ = diag(R(θ_1), …, R(θ_m), I_{n-2m})`.
#[derive(Debug, Clone)]
pub struct RotationCanonicalForm {
    /// Orthogonal change of basis `P` (its determinant may be −1).
    pub basis: Matrix,
    pub angles: PrincipalAngles,
}

impl RotationCanonicalForm {
    /// The block-diagonal `Λ`.
    pub fn block_matrix(&self) -> Matrix {
        Rotation::from_block_angles(self.basis.nrows(), self.angles.angles())
            .expect("at most n/2 blocks")
            .into_matrix()
    }

    pub fn reconstruct(&self) -> Matrix {
        self.basis.transpose() * self.block_matrix() * &self.basis
    }
}

/// `Ω = Pᵀ diag(λ_1 J, …, λ_k J, O) P` with every `λ_j > 0`, sorted descending.
#[derive(Debug, Clone)]
pub struct SkewCanonicalForm {
    pub basis: Matrix,
    pub rates: Vec<f64>,
}

impl SkewCanonicalForm {
    pub fn block_matrix(&self) -> Matrix {
        Skew::from_block_rates(self.basis.nrows(), &self.rates)
            .expect("at most n/2 blocks")
            .into_matrix()
    }

    pub fn reconstruct(&self) -> Matrix {
        self.basis.transpose() * self.block_matrix() * &self.basis
    }
}

/// Principal angles of `R`. Angles below `tol` are absorbed into the fixed subspace.
pub fn principal_angles(r: &Rotation, tol: f64) -> Result<PrincipalAngles> {
    let tolerances = Tolerances {
        angle: tol,
        ..Tolerances::default()
    };
    Ok(canonical_rotation_form(r, tolerances)?.angles)
}

/// Real orthogonal `P` and block matrix `Λ` with `PᵀΛP = R`.
pub fn canonical_rotation_form(r: &Rotation, tol: Tolerances) -> Result<RotationCanonicalForm> {
    let m = r.matrix();
    let n = m.nrows();
    let (q, t) = real_schur(m)?;

    let mut planes: Vec<(f64, nalgebra::DVector<f64>, nalgebra::DVector<f64>)> = Vec::new();
    let mut fixed = Vec::new();
    let mut reversed = Vec::new();

    fn classify_line(
        fixed: &mut Vec<nalgebra::DVector<f64>>,
        reversed: &mut Vec<nalgebra::DVector<f64>>,
        w: nalgebra::DVector<f64>,
        value: f64,
    ) {
        if value > 0.0 {
            fixed.push(w);
        } else {
            reversed.push(w);
        }
    }

    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            let u = q.column(i).into_owned();
            let v = q.column(i + 1).into_owned();
            let block = restrict(m, &u, &v);
            if block.determinant() >= 0.0 {
                let theta = (block[(1, 0)] - block[(0, 1)]).atan2(block[(0, 0)] + block[(1, 1)]);
                if theta.abs() < tol.angle {
                    fixed.push(u);
                    fixed.push(v);
                } else if theta < 0.0 {
                    planes.push((-theta, u, -v));
                } else {
                    planes.push((theta, u, v));
                }
            } else {
                // Reflection inside the plane: one +1 and one −1 direction.
                for (value, w) in split_symmetric_plane(&block, &u, &v) {
                    classify_line(&mut fixed, &mut reversed, w, value);
                }
            }
            i += 2;
        } else {
            classify_line(&mut fixed, &mut reversed, q.column(i).into_owned(), t[(i, i)]);
            i += 1;
        }
    }

    if reversed.len() % 2 == 1 {
        return Err(GeometryError::Eigensolver(
            "odd multiplicity of eigenvalue -1 (determinant is not +1)".into(),
        ));
    }
    for pair in reversed.chunks(2) {
        planes.push((PI, pair[0].clone(), pair[1].clone()));
    }
    planes.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut columns = Vec::with_capacity(n);
    let mut angles = Vec::with_capacity(planes.len());
    for (theta, u, v) in planes {
        angles.push(theta);
        columns.push(u);
        columns.push(v);
    }
    columns.extend(fixed);
    let basis = DMatrix::from_columns(&columns).transpose();

    let form = RotationCanonicalForm {
        basis,
        angles: PrincipalAngles::new(angles, n),
    };
    let residual = norm(&(form.reconstruct() - m));
    if !(residual <= tol.recon) {
        return Err(GeometryError::Reconstruction {
            residual,
            tol: tol.recon,
        });
    }
    Ok(form)
}

/// Orthogonal `P` and positive rates with `Ω = Pᵀ diag(λ_j J, O) P`.
/// Rates at or below `tol` are absorbed into the zero block.
pub fn canonical_skew_form(x: &Skew, tol: f64) -> Result<SkewCanonicalForm> {
    let m = x.matrix();
    let n = m.nrows();
    let (q, t) = real_schur(m)?;

    let mut planes = Vec::new();
    let mut kernel = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            let u = q.column(i).into_owned();
            let v = q.column(i + 1).into_owned();
            let block = restrict(m, &u, &v);
            let lambda = (block[(1, 0)] - block[(0, 1)]) / 2.0;
            if lambda.abs() <= tol {
                kernel.push(u);
                kernel.push(v);
            } else if lambda < 0.0 {
                planes.push((-lambda, u, -v));
            } else {
                planes.push((lambda, u, v));
            }
            i += 2;
        } else {
            kernel.push(q.column(i).into_owned());
            i += 1;
        }
    }
    planes.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut columns = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(planes.len());
    for (lambda, u, v) in planes {
        rates.push(lambda);
        columns.push(u);
        columns.push(v);
    }
    columns.extend(kernel);
    let form = SkewCanonicalForm {
        basis: DMatrix::from_columns(&columns).transpose(),
        rates,
    };

    let recon_tol = Tolerances::default().recon * m.amax().max(1.0);
    let residual = norm(&(form.reconstruct() - m));
    if !(residual <= recon_tol.max(tol * 2.0)) {
        return Err(GeometryError::Reconstruction {
            residual,
            tol: recon_tol,
        });
    }
    Ok(form)
}

fn restrict(m: &Matrix, u: &nalgebra::DVector<f64>, v: &nalgebra::DVector<f64>) -> Matrix2<f64> {
    let mu = m * u;
    let mv = m * v;
    Matrix2::new(u.dot(&mu), u.dot(&mv), v.dot(&mu), v.dot(&mv))
}

fn split_symmetric_plane(
    block: &Matrix2<f64>,
    u: &nalgebra::DVector<f64>,
    v: &nalgebra::DVector<f64>,
) -> Vec<(f64, nalgebra::DVector<f64>)> {
    let sym = (block + block.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    (0..2)
        .map(|k| {
            let c = eig.eigenvectors.column(k);
            (eig.eigenvalues[k], u * c[0] + v * c[1])
        })
        .collect()
}

/// Real Schur decomposition `A = Q T Qᵀ`.
///
/// Francis iterations can stall on highly structured orthogonal inputs
/// (cyclic permutations, for instance). On failure the input is conjugated by
/// a fixed pseudo-random rotation and the factorization retried.
fn real_schur(a: &Matrix) -> Result<(Matrix, Matrix)> {
    check_square(a)?;
    let n = a.nrows();
    let max_iter = 200 * n.max(2);
    if let Some(s) = Schur::try_new(a.clone(), f64::EPSILON, max_iter) {
        return Ok(s.unpack());
    }
    for attempt in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5c4u64 + attempt);
        let h = sample_haar(n, &mut rng).expect("n >= 2").into_matrix();
        let conj = &h * a * h.transpose();
        if let Some(s) = Schur::try_new(conj, f64::EPSILON, max_iter) {
            let (q, t) = s.unpack();
            return Ok((h.transpose() * q, t));
        }
    }
    Err(GeometryError::Eigensolver(format!(
        "real Schur iteration did not converge for a {n}x{n} input"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_3;

    fn cyclic_permutation(n: usize) -> Matrix {
        DMatrix::from_fn(n, n, |i, j| if i == (j + 1) % n { 1.0 } else { 0.0 })
    }

    #[test]
    fn identity_has_trivial_form() {
        let form = canonical_rotation_form(&Rotation::identity(4), Tolerances::default()).unwrap();
        assert_eq!(form.angles.m(), 0);
        assert_eq!(form.angles.fixed_subspace_dim(), 4);
        assert!((form.basis.transpose() * &form.basis - Matrix::identity(4, 4)).norm() < 1e-14);
    }

    #[test]
    fn planar_angles_are_sign_normalized() {
        for theta in [0.5, -0.5, 2.9, -2.9] {
            let r = Rotation::planar(theta);
            let form = canonical_rotation_form(&r, Tolerances::default()).unwrap();
            assert_eq!(form.angles.m(), 1);
            assert!((form.angles.angles()[0] - theta.abs()).abs() < 1e-14);
            assert!((form.reconstruct() - r.matrix()).norm() < 1e-14);
        }
    }

    #[test]
    fn known_angle_sets() {
        let r = Rotation::from_block_angles(3, &[FRAC_PI_3]).unwrap();
        let a = principal_angles(&r, 1e-9).unwrap();
        assert_eq!(a.m(), 1);
        assert!((a.angles()[0] - FRAC_PI_3).abs() < 1e-14);

        let r = Rotation::from_block_angles(4, &[0.3, 0.4]).unwrap();
        let a = principal_angles(&r, 1e-9).unwrap();
        assert!((a.angles()[0] - 0.4).abs() < 1e-14);
        assert!((a.angles()[1] - 0.3).abs() < 1e-14);
    }

    #[test]
    fn half_turns_pair_up() {
        let mut m = Matrix::identity(3, 3);
        m[(0, 0)] = -1.0;
        m[(2, 2)] = -1.0;
        let r = Rotation::new(m).unwrap();
        let form = canonical_rotation_form(&r, Tolerances::default()).unwrap();
        assert_eq!(form.angles.angles(), &[PI]);
        assert!((form.reconstruct() - r.matrix()).norm() < 1e-14);
    }

    #[test]
    fn tiny_angles_are_absorbed() {
        let r = Rotation::from_block_angles(4, &[1e-12, 0.8]).unwrap();
        let a = principal_angles(&r, 1e-9).unwrap();
        assert_eq!(a.m(), 1);
        assert_eq!(a.fixed_subspace_dim(), 2);
    }

    #[test]
    fn structured_permutations_decompose() {
        for n in 3..=8 {
            let p = cyclic_permutation(n);
            let r = if p.determinant() > 0.0 {
                Rotation::new(p).unwrap()
            } else {
                let mut p = p;
                p.column_mut(0).neg_mut();
                Rotation::new(p).unwrap()
            };
            let form = canonical_rotation_form(&r, Tolerances::default()).unwrap();
            assert!((form.reconstruct() - r.matrix()).norm() < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn skew_forms() {
        let zero = canonical_skew_form(&Skew::zero(5), 1e-12).unwrap();
        assert!(zero.rates.is_empty());
        let nu = canonical_skew_form(&Skew::planar(0.7), 0.0).unwrap();
        assert_eq!(nu.rates.len(), 1);
        assert!((nu.rates[0] - 0.7).abs() < 1e-15);
        let neg = canonical_skew_form(&Skew::planar(-0.7), 0.0).unwrap();
        assert!((neg.rates[0] - 0.7).abs() < 1e-15);
        let x = Skew::from_block_rates(5, &[0.2, 1.5]).unwrap();
        let form = canonical_skew_form(&x, 1e-12).unwrap();
        assert!((form.rates[0] - 1.5).abs() < 1e-14);
        assert!((form.rates[1] - 0.2).abs() < 1e-14);
        let rate_norm = form.rates.iter().map(|l| l * l).sum::<f64>().sqrt();
        assert!((rate_norm - x.norm()).abs() < 1e-14);
    }
}
