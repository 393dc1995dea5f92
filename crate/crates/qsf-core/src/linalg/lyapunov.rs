//! Finite-horizon covariance of linear stochastic dynamics: the solution of
//! dΣ/dt = GΣ + ΣGᵀ + σ²I with Σ(0) = 0, evaluated exactly through a block
//! matrix exponential rather than time stepping.

use super::{ComplexMatrix, LinalgError, LinalgResult, Mat};
use num_complex::Complex64;

/// Σ(T) for dΣ/dt = GΣ + ΣGᵀ + σ²_noise·I, Σ(0) = 0.
///
/// Uses the exponential of the 2d×2d block matrix [[G, σ²I], [0, −Gᵀ]]:
/// with blocks E = [[P, R], [0, S]], Σ(T) = R·Pᵀ. Plain transpose is used
/// throughout (the convention for real generators; all trained operators
/// here are real).
pub fn lyapunov_covariance(
    g: &ComplexMatrix,
    sigma_noise: f64,
    t: f64,
) -> LinalgResult<ComplexMatrix> {
    if !g.is_square() {
        return Err(LinalgError::Dimension(format!(
            "lyapunov_covariance needs square G, got {}x{}",
            g.rows(),
            g.cols()
        )));
    }
    if !(sigma_noise >= 0.0) || !(t > 0.0) || !t.is_finite() {
        return Err(LinalgError::Range(format!(
            "lyapunov_covariance needs sigma_noise >= 0 and finite T > 0, got sigma={sigma_noise}, T={t}"
        )));
    }
    let d = g.rows();
    let q = Complex64::new(sigma_noise * sigma_noise, 0.0);
    let mut block = ComplexMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            block.set(i, j, g.get(i, j));
            block.set(d + i, d + j, -g.get(j, i)); // −Gᵀ
        }
        block.set(i, d + i, q);
    }
    let e = super::mat_exp(&block, t)?;
    let p = Mat::from_fn(d, d, |i, j| e.get(i, j));
    let r = Mat::from_fn(d, d, |i, j| e.get(i, d + j));
    let sigma = r.matmul(&p.transpose());
    // analytically transpose-symmetric; enforce it exactly
    Ok(Mat::from_fn(d, d, |i, j| {
        (sigma.get(i, j) + sigma.get(j, i)) * 0.5
    }))
}
