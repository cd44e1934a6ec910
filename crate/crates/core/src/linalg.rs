//! Dense real matrices and the handful of kernels the compression code needs:
//! products, Frobenius norm, a one-sided Jacobi SVD and an SVD-backed
//! least-squares solve.
//!
//! Storage is row-major `f64` throughout. Every constructor rejects NaN/Inf,
//! and every exported operation re-checks its output so non-finite values
//! surface as [`LinalgError::NonFinite`] instead of propagating silently.

use thiserror::Error;

/// Sweep cap for the Jacobi SVD.
pub const SVD_MAX_SWEEPS: usize = 60;
/// A column pair is treated as orthogonal once `|a_p . a_q| <= tol * |a_p| |a_q|`.
pub const SVD_ORTHOGONALITY_TOL: f64 = 1e-12;
/// `least_squares` refuses systems whose condition number exceeds `1 / RANK_TOL`.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix data length {len} does not match {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("svd did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("rank-deficient system: smallest/largest singular value ratio {ratio:e}")]
    RankDeficient { ratio: f64 },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Dense row-major matrix of finite `f64` values.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl std::fmt::Debug for Matrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for v in self.row(i).iter().take(8) {
                write!(f, "{v:>12.6} ")?;
            }
            if self.cols > 8 {
                write!(f, "...")?;
            }
            writeln!(f)?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::EmptyMatrix { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(LinalgError::NonFinite { op: "Matrix::new" });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input or non-finite values.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        assert!(!rows.is_empty(), "from_rows needs at least one row");
        let cols = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), cols, data).expect("from_rows: invalid matrix")
    }

    /// Single-row matrix holding `values`.
    pub fn row_vector(values: &[f64]) -> Self {
        Self::new(1, values.len(), values.to_vec()).expect("row_vector: invalid values")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data).expect("from_fn: invalid matrix")
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view of the raw data. Callers are responsible for keeping values finite.
    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    /// Elementwise map. Panics if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        Self::new(self.rows, self.cols, data).expect("map produced a non-finite value")
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(LinalgError::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Matrix::new(self.rows, self.cols, data).map_err(|_| LinalgError::NonFinite { op })
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    /// Largest absolute elementwise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn count_zeros(&self) -> usize {
        self.data.iter().filter(|v| **v == 0.0).count()
    }

    /// Keeps the first `n` columns.
    pub fn leading_columns(&self, n: usize) -> Matrix {
        assert!(n >= 1 && n <= self.cols);
        Matrix::from_fn(self.rows, n, |i, j| self.get(i, j))
    }

    /// Keeps the first `n` rows.
    pub fn leading_rows(&self, n: usize) -> Matrix {
        assert!(n >= 1 && n <= self.rows);
        Matrix {
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }

    fn check_finite(self, op: &'static str) -> Result<Self> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(LinalgError::NonFinite { op })
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Trans {
    No,
    Yes,
}

/// `C = op(A) * op(B)` through `matrixmultiply`, which is single-threaded and
/// therefore bitwise deterministic.
fn gemm(a: &Matrix, ta: Trans, b: &Matrix, tb: Trans, op: &'static str) -> Result<Matrix> {
    let (m, k) = match ta {
        Trans::No => (a.rows, a.cols),
        Trans::Yes => (a.cols, a.rows),
    };
    let (k2, n) = match tb {
        Trans::No => (b.rows, b.cols),
        Trans::Yes => (b.cols, b.rows),
    };
    if k != k2 {
        return Err(LinalgError::Shape {
            op,
            left: (m, k),
            right: (k2, n),
        });
    }
    let (rsa, csa) = match ta {
        Trans::No => (a.cols as isize, 1),
        Trans::Yes => (1, a.cols as isize),
    };
    let (rsb, csb) = match tb {
        Trans::No => (b.cols as isize, 1),
        Trans::Yes => (1, b.cols as isize),
    };
    let mut c = vec![0.0; m * n];
    // SAFETY: the strides above describe exactly the `m x k` and `k x n` views of
    // `a` and `b`, and `c` is an owned `m x n` row-major buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Matrix {
        rows: m,
        cols: n,
        data: c,
    }
    .check_finite(op)
}

/// Standard product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm(a, Trans::No, b, Trans::No, "matmul")
}

/// `aᵀ * b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm(a, Trans::Yes, b, Trans::No, "matmul_tn")
}

/// `a * bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm(a, Trans::No, b, Trans::Yes, "matmul_nt")
}

pub fn frobenius_norm(w: &Matrix) -> f64 {
    w.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Thin singular value decomposition `w = u * diag(sigma) * vt`.
///
/// `u` is `m x p`, `vt` is `p x n` with `p = min(m, n)`. `sigma` is sorted
/// non-increasing and each column of `u` has its largest-magnitude entry
/// positive.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    /// `u * diag(sigma) * vt` using only the leading `r` triplets.
    pub fn reconstruct_rank(&self, r: usize) -> Result<Matrix> {
        let r = r.min(self.sigma.len());
        let (m, n) = (self.u.rows, self.vt.cols);
        let mut us = Matrix::zeros(m, r);
        for i in 0..m {
            for j in 0..r {
                us.data[i * r + j] = self.u.get(i, j) * self.sigma[j];
            }
        }
        let vt = self.vt.leading_rows(r);
        let out = matmul(&us, &vt)?;
        debug_assert_eq!(out.shape(), (m, n));
        Ok(out)
    }

    pub fn reconstruct(&self) -> Result<Matrix> {
        self.reconstruct_rank(self.sigma.len())
    }
}

/// Column-major working copy used by the Jacobi iteration.
struct Columns {
    len: usize,
    data: Vec<f64>,
}

impl Columns {
    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.len..(j + 1) * self.len]
    }

    fn pair_mut(&mut self, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
        debug_assert!(p < q);
        let (head, tail) = self.data.split_at_mut(q * self.len);
        (&mut head[p * self.len..(p + 1) * self.len], &mut tail[..self.len])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let a = *xi;
        let b = *yi;
        *xi = c * a - s * b;
        *yi = s * a + c * b;
    }
}

/// One-sided (Hestenes) Jacobi on a matrix with `m >= n`.
/// Returns `(u: m x n, sigma, v: n x n)` with `v` in column-major order.
fn jacobi_tall(w: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (m, n) = w.shape();
    debug_assert!(m >= n);
    let mut a = Columns {
        len: m,
        data: w.transpose().data,
    };
    let mut v = Columns {
        len: n,
        data: Matrix::identity(n).data,
    };

    let mut converged = false;
    for _sweep in 0..SVD_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(a.col(p), a.col(p));
                let beta = dot(a.col(q), a.col(q));
                let gamma = dot(a.col(p), a.col(q));
                if gamma == 0.0 || gamma.abs() <= SVD_ORTHOGONALITY_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (ap, aq) = a.pair_mut(p, q);
                rotate(ap, aq, c, s);
                let (vp, vq) = v.pair_mut(p, q);
                rotate(vp, vq, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence {
            sweeps: SVD_MAX_SWEEPS,
        });
    }

    let norms: Vec<f64> = (0..n).map(|j| dot(a.col(j), a.col(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let sigma_max = norms[order[0]];
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    for &j in &order {
        let s = norms[j];
        let mut uj: Vec<f64> = if s > 0.0 {
            a.col(j).iter().map(|x| x / s).collect()
        } else {
            vec![0.0; m]
        };
        // Columns that collapsed to (numerically) zero carry no direction of their
        // own; rebuild them as an orthonormal completion of the earlier ones.
        if s <= sigma_max * f64::EPSILON * 16.0 || s == 0.0 {
            uj = orthonormal_completion(&u_cols, &uj, m);
        }
        let mut vj = v.col(j).to_vec();
        let lead = uj.iter().fold(0.0f64, |best, &x| if x.abs() > best.abs() { x } else { best });
        if lead < 0.0 {
            uj.iter_mut().for_each(|x| *x = -*x);
            vj.iter_mut().for_each(|x| *x = -*x);
        }
        sigma.push(s);
        u_cols.push(uj);
        v_cols.push(vj);
    }

    let u = Matrix::from_fn(m, n, |i, j| u_cols[j][i]);
    let v = Matrix::from_fn(n, n, |i, j| v_cols[j][i]);
    Ok((u, sigma, v))
}

/// Unit vector orthogonal to every vector in `basis`, preferring the direction of `hint`.
fn orthonormal_completion(basis: &[Vec<f64>], hint: &[f64], m: usize) -> Vec<f64> {
    let candidates = std::iter::once(hint.to_vec()).chain((0..m).map(|e| {
        let mut v = vec![0.0; m];
        v[e] = 1.0;
        v
    }));
    for mut cand in candidates {
        let start = dot(&cand, &cand).sqrt();
        if start == 0.0 {
            continue;
        }
        // Two passes of modified Gram-Schmidt.
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&cand, b);
                cand.iter_mut().zip(b).for_each(|(c, bi)| *c -= proj * bi);
            }
        }
        let norm = dot(&cand, &cand).sqrt();
        if norm > 1e-6 * start {
            cand.iter_mut().for_each(|c| *c /= norm);
            return cand;
        }
    }
    unreachable!("basis of size < m always admits an orthogonal unit vector")
}

/// Thin SVD by one-sided Jacobi rotations.
pub fn svd(w: &Matrix) -> Result<SvdResult> {
    if !w.data.iter().all(|v| v.is_finite()) {
        return Err(LinalgError::NonFinite { op: "svd" });
    }
    if w.rows >= w.cols {
        let (u, sigma, v) = jacobi_tall(w)?;
        Ok(SvdResult {
            u,
            sigma,
            vt: v.transpose(),
        })
    } else {
        // w = (wᵀ)ᵀ = (U' Σ V'ᵀ)ᵀ = V' Σ U'ᵀ
        let (u_t, sigma, v_t) = jacobi_tall(&w.transpose())?;
        let mut u = v_t;
        let mut vt = u_t.transpose();
        normalize_signs(&mut u, &mut vt);
        Ok(SvdResult { u, sigma, vt })
    }
}

/// Flips singular-vector pairs so each column of `u` has a positive largest-magnitude entry.
fn normalize_signs(u: &mut Matrix, vt: &mut Matrix) {
    for j in 0..u.cols {
        let mut lead = 0.0f64;
        for i in 0..u.rows {
            let x = u.get(i, j);
            if x.abs() > lead.abs() {
                lead = x;
            }
        }
        if lead < 0.0 {
            for i in 0..u.rows {
                let x = u.get(i, j);
                u.set(i, j, -x);
            }
            vt.row_mut(j).iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Solves `min_X ||a X - b||_F` through the SVD of `a`.
pub fn least_squares(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(LinalgError::Shape {
            op: "least_squares",
            left: a.shape(),
            right: b.shape(),
        });
    }
    if a.rows < a.cols {
        return Err(LinalgError::RankDeficient { ratio: 0.0 });
    }
    let dec = svd(a)?;
    let smax = dec.sigma[0];
    let smin = *dec.sigma.last().expect("non-empty sigma");
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if smax == 0.0 || ratio < RANK_TOL {
        return Err(LinalgError::RankDeficient { ratio });
    }
    // X = V Σ⁻¹ Uᵀ b
    let mut utb = matmul_tn(&dec.u, b)?;
    for (i, s) in dec.sigma.iter().enumerate() {
        utb.row_mut(i).iter_mut().for_each(|x| *x /= s);
    }
    let x = matmul_tn(&dec.vt, &utb)?;
    x.check_finite("least_squares")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matmul_identity() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);
    }

    #[test]
    fn matmul_annihilation() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]);
        let b = Matrix::from_rows(&[[0.0], [5.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), Matrix::from_rows(&[[0.0], [0.0]]));
    }

    #[test]
    fn matmul_hand_computed() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Matrix::from_rows(&[[5.0], [6.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), Matrix::from_rows(&[[17.0], [39.0]]));
    }

    #[test]
    fn matmul_shape_error() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &b), Err(LinalgError::Shape { .. })));
    }

    #[test]
    fn transposed_products_match_explicit() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.5 - 2.0);
        let b = Matrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 - 1.0);
        assert_eq!(matmul_tn(&a, &b).unwrap(), matmul(&a.transpose(), &b).unwrap());
        let c = Matrix::from_fn(5, 4, |i, j| (i as f64 - j as f64) * 0.25);
        assert_eq!(matmul_nt(&a, &c).unwrap(), matmul(&a, &c.transpose()).unwrap());
    }

    #[test]
    fn new_rejects_bad_input() {
        assert!(matches!(Matrix::new(2, 2, vec![1.0; 3]), Err(LinalgError::DataLength { .. })));
        assert!(matches!(Matrix::new(0, 2, vec![]), Err(LinalgError::EmptyMatrix { .. })));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(LinalgError::NonFinite { .. })
        ));
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 3)), 0.0);
        assert_relative_eq!(frobenius_norm(&Matrix::identity(3)), 3f64.sqrt());
        assert_eq!(frobenius_norm(&Matrix::from_rows(&[[3.0, 4.0]])), 5.0);
    }

    #[test]
    fn svd_identity() {
        let s = svd(&Matrix::identity(3)).unwrap();
        for v in &s.sigma {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn svd_rank_one() {
        let u = [0.6, 0.8];
        let v = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt()];
        let w = Matrix::from_fn(2, 2, |i, j| 7.0 * u[i] * v[j]);
        let s = svd(&w).unwrap();
        assert_relative_eq!(s.sigma[0], 7.0, epsilon = 1e-12);
        assert!(s.sigma[1].abs() < 1e-12);
    }

    #[test]
    fn svd_diagonal_sorted() {
        let s = svd(&Matrix::from_rows(&[[3.0, 0.0], [0.0, 4.0]])).unwrap();
        assert_eq!(s.sigma, vec![4.0, 3.0]);
        assert!(s.u.get(1, 0) > 0.0, "largest entry of u column is positive");
    }

    #[test]
    fn svd_wide_and_zero() {
        let w = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]]);
        let s = svd(&w).unwrap();
        assert_eq!(s.u.shape(), (2, 2));
        assert_eq!(s.vt.shape(), (2, 3));
        assert!(s.reconstruct().unwrap().max_abs_diff(&w) < 1e-12);
        let utu = matmul_tn(&s.u, &s.u).unwrap();
        assert!(utu.max_abs_diff(&Matrix::identity(2)) < 1e-12);

        let z = svd(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(z.sigma, vec![0.0, 0.0]);
        let utu = matmul_tn(&z.u, &z.u).unwrap();
        assert!(utu.max_abs_diff(&Matrix::identity(2)) < 1e-12);
    }

    #[test]
    fn least_squares_identity() {
        let b = Matrix::from_rows(&[[1.5, -2.0], [0.25, 9.0]]);
        let x = least_squares(&Matrix::identity(2), &b).unwrap();
        assert!(x.max_abs_diff(&b) < 1e-14);
    }

    #[test]
    fn least_squares_hand_examples() {
        let a = Matrix::from_rows(&[[1.0, 1.0], [1.0, -1.0]]);
        let b = Matrix::from_rows(&[[3.0], [1.0]]);
        let x = least_squares(&a, &b).unwrap();
        assert!(x.max_abs_diff(&Matrix::from_rows(&[[2.0], [1.0]])) < 1e-14);

        let a = Matrix::from_rows(&[[1.0], [1.0]]);
        let b = Matrix::from_rows(&[[1.0], [3.0]]);
        let x = least_squares(&a, &b).unwrap();
        assert_relative_eq!(x.get(0, 0), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn least_squares_rank_deficient() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]);
        let b = Matrix::from_rows(&[[1.0], [1.0], [1.0]]);
        assert!(matches!(least_squares(&a, &b), Err(LinalgError::RankDeficient { .. })));
        let wide = Matrix::from_rows(&[[1.0, 2.0]]);
        assert!(matches!(
            least_squares(&wide, &Matrix::from_rows(&[[1.0]])),
            Err(LinalgError::RankDeficient { .. })
        ));
    }
}
