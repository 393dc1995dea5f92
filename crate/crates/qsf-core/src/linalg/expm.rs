//! Matrix exponential by scaling-and-squaring with diagonal Padé approximants,
//! plus the φ₁ action and the Fréchet derivative needed for backprop through
//! exponentials of skew-symmetric parameterizations.

use super::{ComplexMatrix, ComplexVector, LinalgError, LinalgResult, Mat, Scalar};
use num_complex::Complex64;

/// Largest `‖At‖₁` the exponential accepts. Beyond this the call reports a
/// range error instead of returning a silently inaccurate result.
pub const EXPM_MAX_NORM: f64 = 50.0;

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

/// `e^{At}` to ~1e-12 relative accuracy for `‖At‖₁ ≤ 50`.
pub fn mat_exp<S: Scalar>(a: &Mat<S>, t: f64) -> LinalgResult<Mat<S>> {
    if !a.is_square() {
        return Err(LinalgError::Dimension(format!(
            "mat_exp needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !t.is_finite() {
        return Err(LinalgError::Range("mat_exp time must be finite".into()));
    }
    let b = a.scale(S::from_f64(t));
    let norm = b.norm_one();
    if !norm.is_finite() || norm > EXPM_MAX_NORM {
        return Err(LinalgError::Range(format!(
            "mat_exp argument 1-norm {norm:.3e} exceeds supported bound {EXPM_MAX_NORM}"
        )));
    }
    Ok(expm_core(&b))
}

/// Exponential of a pre-scaled matrix; caller has already bounded the norm.
fn expm_core<S: Scalar>(b: &Mat<S>) -> Mat<S> {
    let norm = b.norm_one();
    if norm <= THETA_3 {
        return pade_low(b, &PADE3);
    }
    if norm <= THETA_5 {
        return pade_low(b, &PADE5);
    }
    if norm <= THETA_7 {
        return pade_low(b, &PADE7);
    }
    if norm <= THETA_9 {
        return pade_low(b, &PADE9);
    }
    let squarings = if norm <= THETA_13 {
        0
    } else {
        (norm / THETA_13).log2().ceil() as u32
    };
    let scaled = b.scale(S::from_f64(0.5f64.powi(squarings as i32)));
    let mut e = pade13(&scaled);
    for _ in 0..squarings {
        e = e.matmul(&e);
    }
    e
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Diagonal Padé approximant of odd order from even powers of `b`.
fn pade_low<S: Scalar>(b: &Mat<S>, coeff: &[f64]) -> Mat<S> {
    let n = b.rows();
    let ident = Mat::<S>::identity(n);
    let b2 = b.matmul(b);
    // U = b (c1 I + c3 b² + c5 b⁴ + …), V = c0 I + c2 b² + …
    let mut even_pow = ident.clone();
    let mut u_inner = ident.scale(S::from_f64(coeff[1]));
    let mut v = ident.scale(S::from_f64(coeff[0]));
    let mut idx = 2;
    while idx < coeff.len() {
        even_pow = even_pow.matmul(&b2);
        v = v.add(&even_pow.scale(S::from_f64(coeff[idx])));
        if idx + 1 < coeff.len() {
            u_inner = u_inner.add(&even_pow.scale(S::from_f64(coeff[idx + 1])));
        }
        idx += 2;
    }
    let u = b.matmul(&u_inner);
    solve_pade(&u, &v)
}

fn pade13<S: Scalar>(b: &Mat<S>) -> Mat<S> {
    let n = b.rows();
    let ident = Mat::<S>::identity(n);
    let c = &PADE13;
    let b2 = b.matmul(b);
    let b4 = b2.matmul(&b2);
    let b6 = b2.matmul(&b4);
    // U = b [ b⁶ (c13 b⁶ + c11 b⁴ + c9 b²) + c7 b⁶ + c5 b⁴ + c3 b² + c1 I ]
    let w1 = b6
        .scale(S::from_f64(c[13]))
        .add(&b4.scale(S::from_f64(c[11])))
        .add(&b2.scale(S::from_f64(c[9])));
    let w2 = b6
        .scale(S::from_f64(c[7]))
        .add(&b4.scale(S::from_f64(c[5])))
        .add(&b2.scale(S::from_f64(c[3])))
        .add(&ident.scale(S::from_f64(c[1])));
    let u = b.matmul(&b6.matmul(&w1).add(&w2));
    // V = b⁶ (c12 b⁶ + c10 b⁴ + c8 b²) + c6 b⁶ + c4 b⁴ + c2 b² + c0 I
    let z1 = b6
        .scale(S::from_f64(c[12]))
        .add(&b4.scale(S::from_f64(c[10])))
        .add(&b2.scale(S::from_f64(c[8])));
    let z2 = b6
        .scale(S::from_f64(c[6]))
        .add(&b4.scale(S::from_f64(c[4])))
        .add(&b2.scale(S::from_f64(c[2])))
        .add(&ident.scale(S::from_f64(c[0])));
    let v = b6.matmul(&z1).add(&z2);
    solve_pade(&u, &v)
}

/// `(V - U)⁻¹ (V + U)`; the denominator is provably nonsingular within the θ bounds.
fn solve_pade<S: Scalar>(u: &Mat<S>, v: &Mat<S>) -> Mat<S> {
    let denom = v.sub(u);
    let numer = v.add(u);
    denom
        .solve(&numer)
        .expect("Padé denominator singular inside its convergence region")
}

/// `T · φ₁(GT) β = G⁻¹(e^{GT} − I)β`, evaluated through the augmented
/// exponential so singular `G` is a supported input rather than an error.
pub fn phi1_apply(g: &ComplexMatrix, t: f64, beta: &[Complex64]) -> LinalgResult<ComplexVector> {
    if !g.is_square() {
        return Err(LinalgError::Dimension("phi1_apply needs square G".into()));
    }
    let d = g.rows();
    if beta.len() != d {
        return Err(LinalgError::Dimension(format!(
            "phi1_apply dim mismatch: G is {d}x{d}, beta has {}",
            beta.len()
        )));
    }
    let bscale: f64 = beta.iter().map(|z| z.norm()).sum();
    if bscale == 0.0 || t == 0.0 {
        return Ok(vec![Complex64::new(0.0, 0.0); d]);
    }
    // aug = [[G, β/s], [0, 0]]; exp(aug·t) has T·φ₁(GT)(β/s) in its last column.
    let mut aug = ComplexMatrix::zeros(d + 1, d + 1);
    for i in 0..d {
        for j in 0..d {
            aug.set(i, j, g.get(i, j));
        }
        aug.set(i, d, beta[i] / Complex64::new(bscale, 0.0));
    }
    let e = mat_exp(&aug, t)?;
    Ok((0..d)
        .map(|i| e.get(i, d) * Complex64::new(bscale, 0.0))
        .collect())
}

/// Fréchet derivative of the exponential: `L(A, E)` = d/ds exp(A + sE) at s=0,
/// read off the top-right block of exp([[A, E], [0, A]]). Linear in `E`, so the
/// direction is normalized before the block exponential to stay inside the
/// range guard.
pub fn expm_frechet<S: Scalar>(a: &Mat<S>, e: &Mat<S>) -> LinalgResult<Mat<S>> {
    if !a.is_square() || a.rows() != e.rows() || a.cols() != e.cols() {
        return Err(LinalgError::Dimension(
            "expm_frechet needs square A and E of equal size".into(),
        ));
    }
    let n = a.rows();
    let escale = e.norm_one();
    if escale == 0.0 {
        return Ok(Mat::zeros(n, n));
    }
    let mut block = Mat::<S>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            block.set(i, j, a.get(i, j));
            block.set(n + i, n + j, a.get(i, j));
            block.set(i, n + j, e.get(i, j) / S::from_f64(escale));
        }
    }
    let big = mat_exp(&block, 1.0)?;
    Ok(Mat::from_fn(n, n, |i, j| {
        big.get(i, n + j) * S::from_f64(escale)
    }))
}
