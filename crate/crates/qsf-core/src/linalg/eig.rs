//! Dense eigenvalue extraction: Householder reduction to upper Hessenberg form
//! followed by shifted QR iteration with deflation. Complex arithmetic
//! throughout, so real inputs with complex spectra need no special casing.
//!
//! Only eigenvalues are produced; callers must not rely on their ordering.

use super::{ComplexMatrix, LinalgError, LinalgResult, RealMatrix};
use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Eigenvalues of a square complex matrix, with multiplicity, unordered.
pub fn eigenvalues(a: &ComplexMatrix) -> LinalgResult<Vec<Complex64>> {
    if !a.is_square() {
        return Err(LinalgError::Dimension(format!(
            "eigenvalues need a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    match n {
        0 => return Ok(vec![]),
        1 => return Ok(vec![a.get(0, 0)]),
        _ => {}
    }
    let mut h = a.clone();
    hessenberg_in_place(&mut h);
    qr_eigenvalues(h)
}

/// Eigenvalues of a real matrix (complex, in conjugate pairs).
pub fn eigenvalues_real(a: &RealMatrix) -> LinalgResult<Vec<Complex64>> {
    eigenvalues(&a.to_complex())
}

/// Unitary similarity reduction to upper Hessenberg form via Householder
/// reflectors.
fn hessenberg_in_place(h: &mut ComplexMatrix) {
    let n = h.rows();
    for k in 0..n.saturating_sub(2) {
        let m = n - k - 1; // length of the column tail being reflected
        let mut v: Vec<Complex64> = (0..m).map(|i| h.get(k + 1 + i, k)).collect();
        let xnorm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if xnorm == 0.0 {
            continue;
        }
        let phase = if v[0] == ZERO {
            Complex64::new(1.0, 0.0)
        } else {
            v[0] / v[0].norm()
        };
        let alpha = -phase * xnorm;
        v[0] -= alpha;
        let vnorm_sq: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if vnorm_sq < f64::MIN_POSITIVE {
            continue;
        }
        let beta = 2.0 / vnorm_sq;
        // left: rows k+1.., cols k..   (I − β v v†) H
        for col in k..n {
            let mut w = ZERO;
            for i in 0..m {
                w += v[i].conj() * h.get(k + 1 + i, col);
            }
            w *= beta;
            for i in 0..m {
                let val = h.get(k + 1 + i, col) - v[i] * w;
                h.set(k + 1 + i, col, val);
            }
        }
        // right: all rows, cols k+1..   H (I − β v v†)
        for row in 0..n {
            let mut w = ZERO;
            for i in 0..m {
                w += h.get(row, k + 1 + i) * v[i];
            }
            w *= beta;
            for i in 0..m {
                let val = h.get(row, k + 1 + i) - w * v[i].conj();
                h.set(row, k + 1 + i, val);
            }
        }
        // entries below the subdiagonal of column k are now zero by construction
        for i in k + 2..n {
            h.set(i, k, ZERO);
        }
    }
}

/// Shifted QR with deflation on an upper Hessenberg matrix.
fn qr_eigenvalues(mut h: ComplexMatrix) -> LinalgResult<Vec<Complex64>> {
    let n = h.rows();
    let anorm = h.norm_one().max(f64::MIN_POSITIVE);
    let eps = f64::EPSILON;
    let mut eigs = vec![ZERO; n];
    let mut hi = n - 1;
    let mut budget: usize = 80 * n + 400;
    let mut since_deflation = 0usize;

    loop {
        // clean negligible subdiagonal entries and locate the active window
        let mut lo = hi;
        while lo > 0 {
            let sub = h.get(lo, lo - 1).norm();
            let mut tst = eps * (h.get(lo - 1, lo - 1).norm() + h.get(lo, lo).norm());
            if tst == 0.0 {
                tst = eps * anorm;
            }
            if sub <= tst {
                h.set(lo, lo - 1, ZERO);
                break;
            }
            lo -= 1;
        }

        if lo == hi {
            // 1×1 block converged
            eigs[hi] = h.get(hi, hi);
            since_deflation = 0;
            if hi == 0 {
                return Ok(eigs);
            }
            hi -= 1;
            continue;
        }
        if lo + 1 == hi {
            // 2×2 block: closed form
            let (l1, l2) = eig2(
                h.get(lo, lo),
                h.get(lo, hi),
                h.get(hi, lo),
                h.get(hi, hi),
            );
            eigs[hi] = l1;
            eigs[lo] = l2;
            since_deflation = 0;
            if lo == 0 {
                return Ok(eigs);
            }
            hi = lo - 1;
            continue;
        }

        if budget == 0 {
            return Err(LinalgError::NonConvergence(format!(
                "QR iteration stalled with {} eigenvalues unresolved (window {lo}..={hi})",
                hi + 1
            )));
        }
        budget -= 1;
        since_deflation += 1;

        let shift = if since_deflation % 10 == 0 {
            // exceptional shift to break symmetric stalls
            h.get(hi, hi) + Complex64::new(0.75 * h.get(hi, hi - 1).norm(), 0.0)
        } else {
            let (l1, l2) = eig2(
                h.get(hi - 1, hi - 1),
                h.get(hi - 1, hi),
                h.get(hi, hi - 1),
                h.get(hi, hi),
            );
            // Wilkinson: the 2×2 eigenvalue closer to the trailing entry
            let d = h.get(hi, hi);
            if (l1 - d).norm() <= (l2 - d).norm() {
                l1
            } else {
                l2
            }
        };

        qr_step(&mut h, lo, hi, shift);
    }
}

/// Eigenvalues of `[[a, b], [c, d]]`.
fn eig2(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> (Complex64, Complex64) {
    let mid = (a + d) * 0.5;
    let half_diff = (a - d) * 0.5;
    let disc = (half_diff * half_diff + b * c).sqrt();
    (mid + disc, mid - disc)
}

/// One explicit shifted QR sweep on the window `[lo, hi]`, applied as a global
/// similarity so the rest of the matrix stays consistent.
fn qr_step(h: &mut ComplexMatrix, lo: usize, hi: usize, shift: Complex64) {
    let n = h.rows();
    for i in lo..=hi {
        let v = h.get(i, i) - shift;
        h.set(i, i, v);
    }
    let mut rots: Vec<(f64, Complex64)> = Vec::with_capacity(hi - lo);
    for i in lo..hi {
        let (c, s) = givens(h.get(i, i), h.get(i + 1, i));
        rots.push((c, s));
        for j in i..n {
            let a = h.get(i, j);
            let b = h.get(i + 1, j);
            h.set(i, j, a * c + s * b);
            h.set(i + 1, j, -s.conj() * a + b * c);
        }
        h.set(i + 1, i, ZERO);
    }
    for (idx, &(c, s)) in rots.iter().enumerate() {
        let i = lo + idx;
        for r in 0..=(i + 1) {
            let a = h.get(r, i);
            let b = h.get(r, i + 1);
            h.set(r, i, a * c + s.conj() * b);
            h.set(r, i + 1, -s * a + b * c);
        }
    }
    for i in lo..=hi {
        let v = h.get(i, i) + shift;
        h.set(i, i, v);
    }
}

/// Complex Givens rotation: returns `(c, s)` with `c` real so that
/// `[c, s; -s̄, c] [f; g] = [r; 0]`.
fn givens(f: Complex64, g: Complex64) -> (f64, Complex64) {
    if g == ZERO {
        return (1.0, ZERO);
    }
    if f == ZERO {
        return (0.0, g.conj() / g.norm());
    }
    let fa = f.norm();
    let d = (fa * fa + g.norm_sqr()).sqrt();
    let phase = f / fa;
    (fa / d, phase * g.conj() / d)
}
