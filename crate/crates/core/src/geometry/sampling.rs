//! Seeded random elements of SO(n) and so(n).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{exp_so, GeometryError, Matrix, Result, Rotation, Skew};

fn gaussian_matrix<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    // Column-major fill order is part of the determinism contract.
    DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Haar-distributed rotation: QR of a Gaussian matrix with the sign of `diag(R)`
/// pushed into `Q`, then the first two columns swapped if the determinant is −1.
pub fn sample_haar<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Rotation> {
    if n < 2 {
        return Err(GeometryError::DimensionTooSmall(n));
    }
    let qr = gaussian_matrix(n, rng).qr();
    let (mut q, r) = qr.unpack();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.swap_columns(0, 1);
    }
    Ok(Rotation::new_unchecked(q))
}

/// Uniformly random skew direction with unit half-Frobenius norm.
pub fn random_skew_direction<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Skew {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let g: f64 = rng.sample(StandardNormal);
            m[(i, j)] = -g;
            m[(j, i)] = g;
        }
    }
    let len = super::norm(&m);
    if len == 0.0 {
        // Only reachable for n < 2; callers validate n.
        return Skew::new_unchecked(m);
    }
    Skew::new_unchecked(m / len)
}

/// `exp(ρU)` with `U` a uniform unit skew direction and `ρ ~ U[0, radius)`,
/// so the result lies strictly inside the geodesic ball of that radius.
pub fn sample_ball<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> Result<Rotation> {
    if n < 2 {
        return Err(GeometryError::DimensionTooSmall(n));
    }
    if !(radius > 0.0 && radius <= std::f64::consts::PI) {
        return Err(GeometryError::InvalidRadius(radius));
    }
    let direction = random_skew_direction(n, rng);
    let rho = rng.random::<f64>() * radius;
    Ok(exp_so(&direction.scaled(rho)))
}
