//! Closed-form propagator machinery: generator decomposition, affine
//! evolution, attention energies, the guidance-weighted Gaussian endpoint law,
//! multi-step chaining, and the discretized action functional. Every closed
//! form here has an independent brute-force counterpart in [`crate::oracles`],
//! and [`report`] runs the full comparison suite.

pub mod report;

use crate::linalg::{
    cvec_add, cvec_norm, cvec_sub, eigenvalues, lyapunov_covariance, mat_exp, phi1_apply,
    ComplexMatrix, ComplexVector, LinalgError, Mat, RealMatrix,
};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PropagatorError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("conditioning failure: {0}")]
    Conditioning(String),
    #[error("closed form and recursion disagree: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type PropResult<T> = Result<T, PropagatorError>;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// The unique split G = −iH + Γ with both parts Hermitian: H carries the
/// oscillatory dynamics, Γ the dissipative ones.
pub struct GeneratorDecomposition {
    pub hamiltonian: ComplexMatrix,
    pub dissipative: ComplexMatrix,
    /// eigenvalues of H, sorted by real part (oscillation frequencies)
    pub omega: Vec<Complex64>,
    /// eigenvalues of Γ, sorted by real part (growth/decay rates)
    pub gamma: Vec<Complex64>,
}

pub fn decompose_generator(g: &ComplexMatrix) -> PropResult<GeneratorDecomposition> {
    if !g.is_square() {
        return Err(PropagatorError::Dimension(format!(
            "decompose_generator needs square G, got {}x{}",
            g.rows(),
            g.cols()
        )));
    }
    let gh = g.conj_transpose();
    let dissipative = g.add(&gh).scale(Complex64::new(0.5, 0.0));
    let hamiltonian = g.sub(&gh).scale(I * 0.5);
    let mut omega = eigenvalues(&hamiltonian)?;
    let mut gamma = eigenvalues(&dissipative)?;
    let by_re = |a: &Complex64, b: &Complex64| {
        a.re.partial_cmp(&b.re)
            .unwrap()
            .then(a.im.partial_cmp(&b.im).unwrap())
    };
    omega.sort_by(by_re);
    gamma.sort_by(by_re);
    Ok(GeneratorDecomposition {
        hamiltonian,
        dissipative,
        omega,
        gamma,
    })
}

/// ψ(T) = e^{GT} ψ₀ + G⁻¹(e^{GT} − I)β, singularity-safe through the φ₁
/// action. T = 0 returns ψ₀ exactly.
pub fn affine_evolve(
    g: &ComplexMatrix,
    beta: &[Complex64],
    psi0: &[Complex64],
    t: f64,
) -> PropResult<ComplexVector> {
    if !g.is_square() || g.rows() != beta.len() || g.rows() != psi0.len() {
        return Err(PropagatorError::Dimension(format!(
            "affine_evolve: G {}x{}, beta {}, psi0 {}",
            g.rows(),
            g.cols(),
            beta.len(),
            psi0.len()
        )));
    }
    if t == 0.0 {
        return Ok(psi0.to_vec());
    }
    let propagated = mat_exp(g, t)?.matvec(psi0);
    let driven = phi1_apply(g, t, beta)?;
    Ok(cvec_add(&propagated, &driven))
}

fn real_matvec_complex(m: &RealMatrix, v: &[Complex64]) -> ComplexVector {
    (0..m.rows())
        .map(|i| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, &x) in v.iter().enumerate() {
                acc += x * m.get(i, j);
            }
            acc
        })
        .collect()
}

/// E = ‖U_feat (W_Q ψ₀ − W_K ψ₁)‖². The affine feature offset cancels in the
/// difference, so only the feature matrix enters.
pub fn attention_energy(
    psi0: &[Complex64],
    psi1: &[Complex64],
    wq: &RealMatrix,
    wk: &RealMatrix,
    u_feat: &RealMatrix,
) -> PropResult<f64> {
    if wq.cols() != psi0.len() || wk.cols() != psi1.len() || wq.rows() != wk.rows() {
        return Err(PropagatorError::Dimension(
            "attention_energy projection shapes".into(),
        ));
    }
    if u_feat.cols() != wq.rows() {
        return Err(PropagatorError::Dimension(
            "attention_energy feature matrix shape".into(),
        ));
    }
    let q = real_matvec_complex(wq, psi0);
    let k = real_matvec_complex(wk, psi1);
    let diff = cvec_sub(&q, &k);
    let featured = real_matvec_complex(u_feat, &diff);
    Ok(featured.iter().map(|z| z.norm_sqr()).sum())
}

/// The guidance-weighted endpoint law: unguided mean μ_K and covariance Σ_T,
/// and the guided pair (ν, Λ) from combining the dynamics precision with the
/// attention precision (1/σ²)·W_KᵀUᵀU·W_K.
pub struct GuidedPropagator {
    pub mu_k: ComplexVector,
    pub sigma_t: ComplexMatrix,
    pub lambda: ComplexMatrix,
    pub nu: ComplexVector,
    pub sigma_guidance: f64,
    pub sigma_noise: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn guided_propagate(
    g: &ComplexMatrix,
    beta: &[Complex64],
    psi0: &[Complex64],
    t: f64,
    wq: &RealMatrix,
    wk: &RealMatrix,
    u_feat: &RealMatrix,
    sigma: f64,
    sigma_noise: f64,
) -> PropResult<GuidedPropagator> {
    if sigma_noise <= 0.0 {
        return Err(PropagatorError::Conditioning(format!(
            "sigma_noise must be positive (got {sigma_noise}): with no process noise the \
             endpoint covariance is singular and the guided law is degenerate"
        )));
    }
    if !(sigma > 0.0) {
        return Err(PropagatorError::Conditioning(format!(
            "guidance strength sigma must be positive, got {sigma}"
        )));
    }
    if !(t > 0.0) {
        return Err(PropagatorError::Conditioning(format!(
            "guided_propagate needs T > 0, got {t}"
        )));
    }
    let d = g.rows();
    if wq.cols() != d || wk.cols() != d || u_feat.cols() != wk.rows() {
        return Err(PropagatorError::Dimension(
            "guided_propagate projection shapes".into(),
        ));
    }
    let sigma_t = lyapunov_covariance(g, sigma_noise, t)?;
    let mu_k = affine_evolve(g, beta, psi0, t)?;

    let inv_sigma_sq = if sigma.is_finite() {
        1.0 / (sigma * sigma)
    } else {
        0.0
    };
    // guidance precision (1/σ²)·W_Kᵀ UᵀU W_K, a real PSD matrix
    let m_feat = u_feat.transpose().matmul(u_feat);
    let guid = wk.transpose().matmul(&m_feat).matmul(wk).scale(inv_sigma_sq);

    if guid.max_abs() == 0.0 {
        // guidance off (σ → ∞ or W_K = 0): the unguided law is exact
        return Ok(GuidedPropagator {
            nu: mu_k.clone(),
            lambda: sigma_t.clone(),
            mu_k,
            sigma_t,
            sigma_guidance: sigma,
            sigma_noise,
        });
    }

    let prec_dyn = sigma_t.inverse().map_err(|e| {
        PropagatorError::Conditioning(format!("endpoint covariance Σ_T is singular: {e}"))
    })?;
    let lambda_inv = prec_dyn.add(&guid.to_complex());
    let lambda = lambda_inv.inverse().map_err(|e| {
        PropagatorError::Conditioning(format!("combined precision Λ⁻¹ is singular: {e}"))
    })?;
    // enforce the analytic transpose symmetry
    let lambda = Mat::from_fn(d, d, |i, j| (lambda.get(i, j) + lambda.get(j, i)) * 0.5);

    // ν = Λ [Σ_T⁻¹ μ_K + (1/σ²) W_Kᵀ UᵀU W_Q ψ₀]
    let qterm = {
        let wq_psi0 = real_matvec_complex(wq, psi0);
        let m_wq = real_matvec_complex(&m_feat, &wq_psi0);
        let full = real_matvec_complex(&wk.transpose(), &m_wq);
        full.iter()
            .map(|z| z * inv_sigma_sq)
            .collect::<ComplexVector>()
    };
    let rhs = cvec_add(&prec_dyn.matvec(&mu_k), &qterm);
    let nu = lambda.matvec(&rhs);

    Ok(GuidedPropagator {
        mu_k,
        sigma_t,
        lambda,
        nu,
        sigma_guidance: sigma,
        sigma_noise,
    })
}

/// One token interval: the propagator U = e^{GT}, the accumulated drive
/// b = G⁻¹(e^{GT} − I)β, and the generator data they came from.
pub struct TokenStepParams {
    pub propagator: ComplexMatrix,
    pub bias: ComplexVector,
    pub generator: ComplexMatrix,
    pub drive: ComplexVector,
    pub dwell: f64,
}

impl TokenStepParams {
    /// Build a step from its generator: U = e^{GT}, b = T·φ₁(GT)β.
    pub fn from_generator(g: ComplexMatrix, beta: ComplexVector, t: f64) -> PropResult<Self> {
        if !g.is_square() || g.rows() != beta.len() {
            return Err(PropagatorError::Dimension(
                "TokenStepParams generator/drive shapes".into(),
            ));
        }
        let propagator = mat_exp(&g, t)?;
        let bias = phi1_apply(&g, t, &beta)?;
        Ok(TokenStepParams {
            propagator,
            bias,
            generator: g,
            drive: beta,
            dwell: t,
        })
    }

    /// Accept precomputed (U, b) after validating U against e^{GT}.
    pub fn with_propagator(
        propagator: ComplexMatrix,
        bias: ComplexVector,
        generator: ComplexMatrix,
        drive: ComplexVector,
        dwell: f64,
    ) -> PropResult<Self> {
        let expected = mat_exp(&generator, dwell)?;
        let defect = propagator.sub(&expected).max_abs();
        if defect > 1e-10 * expected.max_abs().max(1.0) {
            return Err(PropagatorError::Inconsistent(format!(
                "supplied propagator deviates from e^(GT) by {defect:.3e}"
            )));
        }
        Ok(TokenStepParams {
            propagator,
            bias,
            generator,
            drive,
            dwell,
        })
    }
}

/// ψ_N = U_N···U₁ψ₀ + Σ_k (Π_{j>k} U_j) b_k, evaluated both by the product
/// sum and by the recursion ψ_{k+1} = U_{k+1}ψ_k + b_{k+1}; the two must
/// agree to 1e-10 and the recursion's value is returned.
pub fn chain_propagators(steps: &[TokenStepParams], psi0: &[Complex64]) -> PropResult<ComplexVector> {
    if steps.is_empty() {
        return Err(PropagatorError::Dimension("no propagation steps".into()));
    }
    let d = psi0.len();
    for (k, s) in steps.iter().enumerate() {
        if s.propagator.rows() != d || s.bias.len() != d {
            return Err(PropagatorError::Dimension(format!(
                "step {k} dimension mismatch against state dim {d}"
            )));
        }
    }
    // recursion
    let mut psi = psi0.to_vec();
    for s in steps {
        psi = cvec_add(&s.propagator.matvec(&psi), &s.bias);
    }
    // closed form, accumulating suffix products from the top
    let mut suffix = ComplexMatrix::identity(d);
    let mut bias_sum = vec![Complex64::new(0.0, 0.0); d];
    for s in steps.iter().rev() {
        bias_sum = cvec_add(&bias_sum, &suffix.matvec(&s.bias));
        suffix = suffix.matmul(&s.propagator);
    }
    let closed = cvec_add(&suffix.matvec(psi0), &bias_sum);

    let diff = cvec_norm(&cvec_sub(&closed, &psi));
    let scale = cvec_norm(&psi).max(1.0);
    if diff > 1e-10 * scale {
        return Err(PropagatorError::Inconsistent(format!(
            "product-sum vs recursion differ by {diff:.3e} (‖ψ‖ = {scale:.3e})"
        )));
    }
    Ok(psi)
}

/// S = ∫ ½‖dψ/dt − Gψ − β‖² dt over a uniformly sampled path: centered
/// differences inside, second-order one-sided at the ends, trapezoidal
/// quadrature. The classical path drives this to zero as the grid refines.
pub fn evaluate_action(
    path: &[ComplexVector],
    g: &ComplexMatrix,
    beta: &[Complex64],
    t0: f64,
    t1: f64,
) -> PropResult<f64> {
    let m = path.len();
    if m < 3 {
        return Err(PropagatorError::Dimension(format!(
            "action needs at least 3 path samples, got {m}"
        )));
    }
    if !(t1 > t0) {
        return Err(PropagatorError::Dimension("action needs t1 > t0".into()));
    }
    let d = path[0].len();
    if g.rows() != d || beta.len() != d || path.iter().any(|p| p.len() != d) {
        return Err(PropagatorError::Dimension("action path dimensions".into()));
    }
    let dt = (t1 - t0) / (m - 1) as f64;
    let mut action = 0.0;
    for k in 0..m {
        let deriv: ComplexVector = if k == 0 {
            (0..d)
                .map(|i| (-3.0 * path[0][i] + 4.0 * path[1][i] - path[2][i]) / (2.0 * dt))
                .collect()
        } else if k == m - 1 {
            (0..d)
                .map(|i| (3.0 * path[m - 1][i] - 4.0 * path[m - 2][i] + path[m - 3][i]) / (2.0 * dt))
                .collect()
        } else {
            (0..d)
                .map(|i| (path[k + 1][i] - path[k - 1][i]) / (2.0 * dt))
                .collect()
        };
        let drift = g.matvec(&path[k]);
        let residual_sq: f64 = (0..d)
            .map(|i| (deriv[i] - drift[i] - beta[i]).norm_sqr())
            .sum();
        let weight = if k == 0 || k == m - 1 { 0.5 } else { 1.0 };
        action += weight * 0.5 * residual_sq * dt;
    }
    Ok(action)
}
