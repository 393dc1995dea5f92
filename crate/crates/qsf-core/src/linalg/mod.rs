//! Dense real/complex matrix kernels: products, LU solves, matrix exponential,
//! the φ₁ function, eigenvalues, Lyapunov integration, and the causal prefix DFT.
//!
//! Everything here is a pure function of its inputs; no shared mutable state.

pub mod dft;
pub mod eig;
pub mod expm;
pub mod lyapunov;

use num_complex::Complex64;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use thiserror::Error;

pub use dft::prefix_dft_last_bin;
pub use eig::eigenvalues;
pub use expm::{mat_exp, phi1_apply, EXPM_MAX_NORM};
pub use lyapunov::lyapunov_covariance;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("argument out of range: {0}")]
    Range(String),
    #[error("iteration did not converge: {0}")]
    NonConvergence(String),
    #[error("singular or ill-conditioned matrix: {0}")]
    Singular(String),
}

pub type LinalgResult<T> = Result<T, LinalgError>;

/// Scalar field the dense kernels are generic over: `f64` and `Complex64`.
pub trait Scalar:
    Copy
    + PartialEq
    + fmt::Debug
    + Default
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(x: f64) -> Self;
    /// Modulus (absolute value for reals).
    fn modulus(self) -> f64;
    fn conj(self) -> Self;
    fn is_finite(self) -> bool;
    /// `c = a @ b` for row-major slices; shapes `m×k`, `k×n`, `m×n`.
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]);
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn conj(self) -> Self {
        self
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(c.len(), m * n);
        if m == 0 || k == 0 || n == 0 {
            return;
        }
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                0.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(c.len(), m * n);
        for row in 0..m {
            let out = &mut c[row * n..(row + 1) * n];
            out.fill(Complex64::new(0.0, 0.0));
            for inner in 0..k {
                let av = a[row * k + inner];
                if av == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let brow = &b[inner * n..(inner + 1) * n];
                for (o, &bv) in out.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

/// Dense row-major matrix over `f64` or `Complex64`.
#[derive(Clone, PartialEq)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

pub type RealMatrix = Mat<f64>;
pub type ComplexMatrix = Mat<Complex64>;
pub type ComplexVector = Vec<Complex64>;

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
    }

    /// Build from row-major data; checks the length and that every entry is finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> LinalgResult<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::Range("non-finite matrix entry".into()));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
    pub fn data(&self) -> &[S] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(
            self.cols, other.rows,
            "matmul dims {}x{} @ {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Mat::zeros(self.rows, other.cols);
        S::gemm(
            self.rows, self.cols, other.cols, &self.data, &other.data, &mut out.data,
        );
        out
    }

    pub fn matvec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(self.cols, v.len(), "matvec dims");
        let mut out = vec![S::zero(); self.rows];
        for i in 0..self.rows {
            let mut acc = S::zero();
            let row = self.row(i);
            for (a, b) in row.iter().zip(v) {
                acc += *a * *b;
            }
            out[i] = acc;
        }
        out
    }

    pub fn add(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add dims");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a + *b)
            .collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "sub dims");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a - *b)
            .collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, s: S) -> Mat<S> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| *a * s).collect(),
        }
    }

    pub fn transpose(&self) -> Mat<S> {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn conj_transpose(&self) -> Mat<S> {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        let mut best = 0.0f64;
        for j in 0..self.cols {
            let mut s = 0.0;
            for i in 0..self.rows {
                s += self.get(i, j).modulus();
            }
            best = best.max(s);
        }
        best
    }

    pub fn norm_fro(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let a = v.modulus();
                a * a
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.modulus()).fold(0.0, f64::max)
    }

    /// LU factorization with partial pivoting. Returns (combined LU, pivot rows, sign swaps).
    fn lu(&self) -> LinalgResult<(Mat<S>, Vec<usize>, usize)> {
        if !self.is_square() {
            return Err(LinalgError::Dimension("LU of non-square matrix".into()));
        }
        let n = self.rows;
        let mut lu = self.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        let mut swaps = 0;
        for k in 0..n {
            let mut p = k;
            let mut best = lu.get(k, k).modulus();
            for i in k + 1..n {
                let v = lu.get(i, k).modulus();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(LinalgError::Singular(format!("zero pivot at column {k}")));
            }
            if p != k {
                for j in 0..n {
                    let a = lu.get(k, j);
                    let b = lu.get(p, j);
                    lu.set(k, j, b);
                    lu.set(p, j, a);
                }
                piv.swap(k, p);
                swaps += 1;
            }
            let diag = lu.get(k, k);
            for i in k + 1..n {
                let factor = lu.get(i, k) / diag;
                lu.set(i, k, factor);
                for j in k + 1..n {
                    let v = lu.get(i, j) - factor * lu.get(k, j);
                    lu.set(i, j, v);
                }
            }
        }
        Ok((lu, piv, swaps))
    }

    /// Solve `self @ X = rhs` by LU with partial pivoting.
    pub fn solve(&self, rhs: &Mat<S>) -> LinalgResult<Mat<S>> {
        if self.rows != rhs.rows {
            return Err(LinalgError::Dimension("solve rhs row mismatch".into()));
        }
        let (lu, piv, _) = self.lu()?;
        let n = self.rows;
        let m = rhs.cols;
        let mut x = Mat::zeros(n, m);
        // permuted rhs, forward, then back substitution
        for (i, &pi) in piv.iter().enumerate() {
            for j in 0..m {
                x.set(i, j, rhs.get(pi, j));
            }
        }
        for i in 1..n {
            for k in 0..i {
                let f = lu.get(i, k);
                for j in 0..m {
                    let v = x.get(i, j) - f * x.get(k, j);
                    x.set(i, j, v);
                }
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let f = lu.get(i, k);
                for j in 0..m {
                    let v = x.get(i, j) - f * x.get(k, j);
                    x.set(i, j, v);
                }
            }
            let d = lu.get(i, i);
            for j in 0..m {
                let v = x.get(i, j) / d;
                x.set(i, j, v);
            }
        }
        Ok(x)
    }

    pub fn solve_vec(&self, rhs: &[S]) -> LinalgResult<Vec<S>> {
        let r = Mat {
            rows: rhs.len(),
            cols: 1,
            data: rhs.to_vec(),
        };
        Ok(self.solve(&r)?.into_data())
    }

    pub fn inverse(&self) -> LinalgResult<Mat<S>> {
        self.solve(&Mat::identity(self.rows))
    }

    pub fn det(&self) -> LinalgResult<S> {
        let (lu, _, swaps) = self.lu()?;
        let mut d = if swaps % 2 == 0 {
            S::one()
        } else {
            -S::one()
        };
        for i in 0..self.rows {
            d *= lu.get(i, i);
        }
        Ok(d)
    }
}

impl RealMatrix {
    pub fn to_complex(&self) -> ComplexMatrix {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }
}

impl ComplexMatrix {
    /// Real part, entrywise.
    pub fn re(&self) -> RealMatrix {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.re).collect(),
        }
    }

    pub fn max_imag_abs(&self) -> f64 {
        self.data.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }
}

impl<S: Scalar> fmt::Debug for Mat<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for j in 0..self.cols.min(8) {
                write!(f, "{:?} ", self.get(i, j))?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

// ---------------------------------------------------------------------------
// small complex-vector helpers used across the propagator machinery
// ---------------------------------------------------------------------------

pub fn cvec_from_real(v: &[f64]) -> ComplexVector {
    v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

pub fn cvec_sub(a: &[Complex64], b: &[Complex64]) -> ComplexVector {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn cvec_add(a: &[Complex64], b: &[Complex64]) -> ComplexVector {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn cvec_norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}
