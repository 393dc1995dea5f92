//! Independent numerical oracles: brute-force or stepping-based computations
//! used to cross-check the closed-form implementations. Nothing in this module
//! calls into the code paths it verifies.

use crate::linalg::{ComplexMatrix, ComplexVector, RealMatrix};
use num_complex::Complex64;

/// Truncated Taylor series for e^{At} with Kahan-compensated entrywise
/// accumulation.
pub fn expm_taylor(a: &ComplexMatrix, t: f64, terms: usize) -> ComplexMatrix {
    let n = a.rows();
    let at = a.scale(Complex64::new(t, 0.0));
    let mut sum = ComplexMatrix::identity(n);
    let mut comp = ComplexMatrix::zeros(n, n); // Kahan compensation
    let mut term = ComplexMatrix::identity(n);
    for k in 1..=terms {
        term = term.matmul(&at).scale(Complex64::new(1.0 / k as f64, 0.0));
        for i in 0..n * n {
            let y = term.data()[i] - comp.data()[i];
            let t_new = sum.data()[i] + y;
            comp.data_mut()[i] = (t_new - sum.data()[i]) - y;
            sum.data_mut()[i] = t_new;
        }
    }
    sum
}

/// Fixed-step RK4 integration of dψ/dt = Gψ + β from ψ(0) = ψ₀ to time `t`.
pub fn affine_rk4(
    g: &ComplexMatrix,
    beta: &[Complex64],
    psi0: &[Complex64],
    t: f64,
    dt: f64,
) -> ComplexVector {
    let steps = (t / dt).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let f = |psi: &[Complex64]| -> ComplexVector {
        let mut out = g.matvec(psi);
        for (o, b) in out.iter_mut().zip(beta) {
            *o += b;
        }
        out
    };
    let mut psi = psi0.to_vec();
    for _ in 0..steps {
        let k1 = f(&psi);
        let k2 = f(&axpy(&psi, &k1, h / 2.0));
        let k3 = f(&axpy(&psi, &k2, h / 2.0));
        let k4 = f(&axpy(&psi, &k3, h));
        for i in 0..psi.len() {
            psi[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
        }
    }
    psi
}

fn axpy(x: &[Complex64], d: &[Complex64], s: f64) -> ComplexVector {
    x.iter().zip(d).map(|(a, b)| a + b * s).collect()
}

/// Fixed-step RK4 integration of the matrix ODE dΣ/dt = GΣ + ΣGᵀ + σ²I from
/// Σ(0) = 0.
pub fn lyapunov_rk4(g: &ComplexMatrix, sigma_noise: f64, t: f64, dt: f64) -> ComplexMatrix {
    let n = g.rows();
    let steps = (t / dt).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let gt = g.transpose();
    let q = sigma_noise * sigma_noise;
    let f = |s: &ComplexMatrix| -> ComplexMatrix {
        let mut out = g.matmul(s).add(&s.matmul(&gt));
        for i in 0..n {
            let v = out.get(i, i) + q;
            out.set(i, i, v);
        }
        out
    };
    let mut sigma = ComplexMatrix::zeros(n, n);
    for _ in 0..steps {
        let k1 = f(&sigma);
        let k2 = f(&sigma.add(&k1.scale(Complex64::new(h / 2.0, 0.0))));
        let k3 = f(&sigma.add(&k2.scale(Complex64::new(h / 2.0, 0.0))));
        let k4 = f(&sigma.add(&k3.scale(Complex64::new(h, 0.0))));
        let incr = k1
            .add(&k2.scale(Complex64::new(2.0, 0.0)))
            .add(&k3.scale(Complex64::new(2.0, 0.0)))
            .add(&k4)
            .scale(Complex64::new(h / 6.0, 0.0));
        sigma = sigma.add(&incr);
    }
    sigma
}

/// Naive O(i²) evaluation of the causal last-bin DFT: full complex
/// accumulation of bin i−1 over the length-i prefix, real part returned.
pub fn naive_dft_last_bin(x: &[Vec<f64>], i: usize) -> Vec<f64> {
    let n = i;
    let k = (n - 1) as f64;
    let dim = x[0].len();
    let mut re = vec![0.0; dim];
    for (s, xv) in x[..n].iter().enumerate() {
        let angle = -std::f64::consts::TAU * k * s as f64 / n as f64;
        let (sin, cos) = angle.sin_cos();
        let _ = sin; // imaginary part discarded by the definition
        for (r, &v) in re.iter_mut().zip(xv) {
            *r += v * cos;
        }
    }
    re
}

/// Naive O(N²·d) causal linear attention over pre-featurized inputs:
/// z_t = Σ_{s≤t} (qf_t · kf_s) v_s. Rows of the slices are positions.
pub fn naive_linear_attention(qf: &[Vec<f64>], kf: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = qf.len();
    let d = v[0].len();
    let mut out = vec![vec![0.0; d]; n];
    for t in 0..n {
        for s in 0..=t {
            let w: f64 = qf[t].iter().zip(&kf[s]).map(|(a, b)| a * b).sum();
            for (o, &vv) in out[t].iter_mut().zip(&v[s]) {
                *o += w * vv;
            }
        }
    }
    out
}

/// Posterior mean and covariance of the guidance-weighted endpoint density
///   p(ψ) ∝ exp(−½ (ψ−μ)ᵀ Σ⁻¹ (ψ−μ)) · exp(−‖U(q − W_K ψ)‖² / 2σ²)
/// by tensor-grid quadrature over `center ± half_width` per axis. Real
/// domain, d ≤ 3 by design.
pub struct QuadraturePosterior {
    pub mean: Vec<f64>,
    pub cov: RealMatrix,
}

#[allow(clippy::too_many_arguments)]
pub fn posterior_quadrature(
    mu: &[f64],
    sigma_t: &RealMatrix,
    wq_psi0: &[f64],
    wk: &RealMatrix,
    u_feat: &RealMatrix,
    sigma: f64,
    center: &[f64],
    half_width: &[f64],
    points_per_axis: usize,
) -> QuadraturePosterior {
    let d = mu.len();
    assert!(d <= 3, "quadrature oracle supports d <= 3 only");
    let prec = sigma_t
        .inverse()
        .expect("quadrature oracle: singular covariance");
    let inv_two_sigma_sq = if sigma.is_finite() {
        1.0 / (2.0 * sigma * sigma)
    } else {
        0.0
    };

    let log_density = |psi: &[f64]| -> f64 {
        let dv: Vec<f64> = psi.iter().zip(mu).map(|(a, b)| a - b).collect();
        let pd = prec.matvec(&dv);
        let gauss: f64 = dv.iter().zip(&pd).map(|(a, b)| a * b).sum();
        let wk_psi = wk.matvec(psi);
        let diff: Vec<f64> = wq_psi0.iter().zip(&wk_psi).map(|(a, b)| a - b).collect();
        let ud = u_feat.matvec(&diff);
        let energy: f64 = ud.iter().map(|x| x * x).sum();
        -0.5 * gauss - inv_two_sigma_sq * energy
    };

    let log_ref = log_density(center);
    let pp = points_per_axis;
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..pp)
                .map(|k| center[i] - half_width[i] + 2.0 * half_width[i] * k as f64 / (pp - 1) as f64)
                .collect()
        })
        .collect();

    let mut w_sum = 0.0;
    let mut first = vec![0.0; d];
    let mut second = RealMatrix::zeros(d, d);
    let mut idx = vec![0usize; d];
    let mut psi = vec![0.0; d];
    loop {
        for a in 0..d {
            psi[a] = axes[a][idx[a]];
        }
        let w = (log_density(&psi) - log_ref).exp();
        w_sum += w;
        for a in 0..d {
            first[a] += w * psi[a];
            for b in 0..d {
                let v = second.get(a, b) + w * psi[a] * psi[b];
                second.set(a, b, v);
            }
        }
        // odometer over the grid
        let mut carry = d;
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < pp {
                carry = a;
                break;
            }
            idx[a] = 0;
        }
        if carry == d {
            break;
        }
    }

    let mean: Vec<f64> = first.iter().map(|x| x / w_sum).collect();
    let cov = RealMatrix::from_fn(d, d, |a, b| second.get(a, b) / w_sum - mean[a] * mean[b]);
    QuadraturePosterior { mean, cov }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_recovers_plain_gaussian_moments() {
        // no guidance (sigma = inf): posterior is the prior itself
        let mu = vec![0.3, -0.7];
        let sigma_t =
            RealMatrix::from_vec(2, 2, vec![0.5, 0.1, 0.1, 0.8]).unwrap();
        let wk = RealMatrix::zeros(2, 2);
        let u = RealMatrix::identity(2);
        let hw = vec![0.5f64.sqrt() * 8.0, 0.8f64.sqrt() * 8.0];
        let q = posterior_quadrature(
            &mu,
            &sigma_t,
            &[0.0, 0.0],
            &wk,
            &u,
            f64::INFINITY,
            &mu,
            &hw,
            81,
        );
        for (got, want) in q.mean.iter().zip(&mu) {
            assert!((got - want).abs() < 1e-8);
        }
        assert!(q.cov.sub(&sigma_t).max_abs() < 1e-6);
    }

    #[test]
    fn rk4_matches_scalar_exponential() {
        let g = ComplexMatrix::from_vec(1, 1, vec![Complex64::new(-0.5, 0.0)]).unwrap();
        let psi = affine_rk4(
            &g,
            &[Complex64::new(0.0, 0.0)],
            &[Complex64::new(2.0, 0.0)],
            1.0,
            1e-4,
        );
        assert!((psi[0].re - 2.0 * (-0.5f64).exp()).abs() < 1e-10);
    }
}
