//! Small dense linear-algebra kernel.
//!
//! Matrices are stored row-major. Vectorization (`vec`) stacks columns, so
//! `kron(a, b) * vec(x) == vec(b * x * a')`.
//!
//! Everything here is written for desk-scale problems (dimensions in the
//! tens); there is no blocking and no pivoting beyond what Cholesky needs.

use std::fmt;
use std::ops::{Add, Deref, Mul, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default relative pivot tolerance for positive-definiteness checks.
pub const DEFAULT_PD_TOL: f64 = 1e-12;

/// Dense real matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting empty shapes and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "Matrix::new",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        let m = Self { rows, cols, data };
        m.check_finite()?;
        Ok(m)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        if nrows == 0 || ncols == 0 {
            return Err(Error::EmptyMatrix {
                rows: nrows,
                cols: ncols,
            });
        }
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(Error::RaggedRows {
                    row: i,
                    found: r.len(),
                    expected: ncols,
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(nrows, ncols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
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

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds a matrix from a closure over `(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Row-major view of the entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Checked product; see also the `*` operator, which panics on mismatch.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        mat_mul(self, rhs)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(p) => Err(Error::NonFinite {
                row: p / self.cols,
                col: p % self.cols,
            }),
            None => Ok(()),
        }
    }

    /// Column-stacking vectorization.
    pub fn vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// Inverse of [`Matrix::vec`].
    pub fn from_col_stacked(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        assert_eq!(v.len(), rows * cols, "from_col_stacked: length mismatch");
        Matrix::from_fn(rows, cols, |i, j| v[j * rows + i])
    }

    /// `self * v` for a plain vector.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "mul_vec: length mismatch");
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn zip_with(&self, rhs: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(
            self.shape(),
            rhs.shape(),
            "{op}: shape mismatch {:?} vs {:?}",
            self.shape(),
            rhs.shape()
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix{}x{}", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols)).finish()
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, "add", |a, b| a + b)
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }
}

/// Panics on a dimension mismatch; use [`mat_mul`] for a checked product.
impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        mat_mul(self, rhs).expect("matrix product dimension mismatch")
    }
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Matrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Symmetric matrix. Construction symmetrizes with `(M + M') / 2`.
#[derive(Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare {
                rows: m.rows,
                cols: m.cols,
            });
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes a matrix the caller knows to be square.
    pub(crate) fn symmetrized(mut m: Matrix) -> Self {
        debug_assert!(m.is_square());
        let n = m.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (m.get(i, j) + m.get(j, i));
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        SymMatrix(m)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::from_matrix(Matrix::from_rows(rows)?)
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Matrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n))
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        SymMatrix(Matrix::from_diag(diag))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(self.0.scale(s))
    }

    /// `X * self * X'`, symmetrized.
    pub fn congruence(&self, x: &Matrix) -> SymMatrix {
        SymMatrix::symmetrized(&(x * &self.0) * &x.transpose())
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.0.get(i, j) == 0.0))
    }
}

impl Deref for SymMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sym")?;
        self.0.fmt(f)
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = Matrix::deserialize(d)?;
        SymMatrix::from_matrix(m).map_err(serde::de::Error::custom)
    }
}

/// Plain triple-loop product.
pub fn mat_mul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch {
            op: "mat_mul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.get(i, k);
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// Kronecker product with entry `(i*p + k, j*q + l) = a[i,j] * b[k,l]`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (p, q) = b.shape();
    Matrix::from_fn(a.rows * p, a.cols * q, |r, c| a.get(r / p, c / q) * b.get(r % p, c % q))
}

/// Lower Cholesky factor together with pivot diagnostics.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Matrix,
    min_pivot: f64,
}

impl Cholesky {
    pub fn factor(&self) -> &Matrix {
        &self.l
    }

    /// Smallest pivot `L[j,j]^2`, relative to the largest diagonal entry.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    /// Solves `L L' X = rhs`.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        let n = self.l.rows;
        if rhs.rows != n {
            return Err(Error::DimensionMismatch {
                op: "solve_spd",
                left: self.l.shape(),
                right: rhs.shape(),
            });
        }
        let mut x = rhs.clone();
        for c in 0..rhs.cols {
            // forward: L y = b
            for i in 0..n {
                let mut s = x.get(i, c);
                for k in 0..i {
                    s -= self.l.get(i, k) * x.get(k, c);
                }
                x.set(i, c, s / self.l.get(i, i));
            }
            // backward: L' x = y
            for i in (0..n).rev() {
                let mut s = x.get(i, c);
                for k in (i + 1)..n {
                    s -= self.l.get(k, i) * x.get(k, c);
                }
                x.set(i, c, s / self.l.get(i, i));
            }
        }
        Ok(x)
    }
}

fn pd_scale(m: &Matrix) -> f64 {
    m.diag().iter().fold(0.0_f64, |acc, d| acc.max(d.abs()))
}

/// Cholesky factorization with a relative pivot test: every pivot must
/// exceed `tol * max|diag(m)|`.
pub fn cholesky(m: &SymMatrix, tol: f64) -> Result<Cholesky> {
    m.check_finite()?;
    let n = m.dim();
    let scale = pd_scale(m);
    let threshold = tol * scale;
    let mut l = Matrix::zeros(n, n);
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        let rel = if scale > 0.0 { d / scale } else { d };
        min_pivot = min_pivot.min(rel);
        if !(d > threshold) || d <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                index: j,
                dim: n,
                pivot: rel,
            });
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(Cholesky { l, min_pivot })
}

/// Solves `m X = rhs` for positive definite `m`.
pub fn solve_spd(m: &SymMatrix, rhs: &Matrix) -> Result<Matrix> {
    cholesky(m, DEFAULT_PD_TOL)?.solve(rhs)
}

/// Inverse of a positive definite matrix.
pub fn inverse_spd(m: &SymMatrix) -> Result<SymMatrix> {
    let inv = solve_spd(m, &Matrix::identity(m.dim()))?;
    Ok(SymMatrix::symmetrized(inv))
}

/// True when `m - shift*I` admits a Cholesky factorization with strictly
/// positive pivots.
fn shifted_is_pd(m: &Matrix, shift: f64, work: &mut Matrix) -> bool {
    let n = m.rows;
    for j in 0..n {
        let mut d = m.get(j, j) - shift;
        for k in 0..j {
            d -= work.get(j, k) * work.get(j, k);
        }
        if !(d > 0.0) {
            return false;
        }
        let ljj = d.sqrt();
        work.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= work.get(i, k) * work.get(j, k);
            }
            work.set(i, j, s / ljj);
        }
    }
    true
}

/// Lower bound on the smallest eigenvalue, obtained by bisection on the
/// shift at which `m - shift*I` stops being positive definite. The bracket
/// starts from the Gershgorin discs.
pub fn min_eig_lower_bound(m: &SymMatrix) -> Result<f64> {
    m.check_finite()?;
    let n = m.dim();
    let mut lo = f64::INFINITY;
    let mut hi = f64::INFINITY;
    for i in 0..n {
        let radius: f64 = (0..n).filter(|&j| j != i).map(|j| m.get(i, j).abs()).sum();
        lo = lo.min(m.get(i, i) - radius);
        hi = hi.min(m.get(i, i));
    }
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    let width = 1e-13 * scale;
    let mut work = Matrix::zeros(n, n);
    // the Gershgorin bound itself may sit exactly on the spectrum
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if shifted_is_pd(m, mid, &mut work) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Principal square root of a positive semidefinite matrix.
///
/// Diagonal inputs take a shortcut. Otherwise the coupled Newton-Schulz
/// iteration (the inverse-free form of Denman-Beavers) runs on `m / ||m||_F`,
/// whose spectrum lies in `[0, 1]`.
pub fn sqrt_psd(m: &SymMatrix) -> Result<SymMatrix> {
    m.check_finite()?;
    let n = m.dim();
    let norm = m.frobenius_norm();
    if norm == 0.0 {
        return Ok(SymMatrix::zeros(n));
    }
    let bound = min_eig_lower_bound(m)?;
    if bound < -1e-10 * norm {
        return Err(Error::NotPositiveSemidefinite {
            what: "square root argument",
            bound,
        });
    }
    if m.is_diagonal() {
        let d: Vec<f64> = m.diag().iter().map(|v| v.max(0.0).sqrt()).collect();
        return Ok(SymMatrix::from_diag(&d));
    }

    let a = m.scale(1.0 / norm);
    let eye = Matrix::identity(n);
    let mut y = a.as_matrix().clone();
    let mut z = eye.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..200 {
        let zy = &z * &y;
        let t = (&eye.scale(3.0) - &zy).scale(0.5);
        y = &y * &t;
        z = &t * &z;
        let ys = SymMatrix::symmetrized(y.clone());
        residual = (&(&*ys * &*ys) - a.as_matrix()).frobenius_norm();
        if residual <= 1e-13 {
            break;
        }
    }
    if !(residual <= 1e-11) {
        return Err(Error::SquareRoot { residual });
    }
    Ok(SymMatrix::symmetrized(y).scale(norm.sqrt()))
}
