//! Dense complex matrices.
//!
//! [`ComplexMatrix`] is a thin newtype over a column-major `faer` matrix. All
//! public enumeration (iteration, serialization) is row-major with index 0
//! first, so that row `j` of an operator corresponds to the position state
//! `|q_j>`.

use std::io::{Read, Write};
use std::ops::{Add, Mul, Sub};

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;

use crate::error::{domain, Error, Result};
use crate::format::fmt_float;

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// `exp(i * phase)`.
#[inline]
pub fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    inner: Mat<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Self {
            inner: Mat::zeros(rows, cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        assert!(n >= 1, "matrix dimensions must be positive");
        Self {
            inner: Mat::identity(n, n),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Self {
            inner: Mat::from_fn(rows, cols, f),
        }
    }

    /// Builds a matrix from row-major entries, rejecting non-finite values.
    pub fn from_row_major(rows: usize, cols: usize, entries: &[C64]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return domain("matrix dimensions must be positive");
        }
        if entries.len() != rows * cols {
            return domain(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                entries.len()
            ));
        }
        if entries.iter().any(|z| !z.is_finite()) {
            return domain("matrix entries must be finite");
        }
        Ok(Self::from_fn(rows, cols, |i, j| entries[i * cols + j]))
    }

    pub fn diagonal(diag: &[C64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { diag[i] } else { ZERO })
    }

    /// Block-diagonal matrix with `count` blocks of size `size`; `None` blocks are zero.
    pub fn block_diagonal(blocks: &[Option<&ComplexMatrix>], size: usize) -> Result<Self> {
        for b in blocks.iter().flatten() {
            if b.rows() != size || b.cols() != size {
                return domain(format!(
                    "block of shape {}x{} does not match block size {size}",
                    b.rows(),
                    b.cols()
                ));
            }
        }
        let n = size * blocks.len();
        let mut out = Self::zeros(n, n);
        for (l, block) in blocks.iter().enumerate() {
            if let Some(b) = block {
                for i in 0..size {
                    for j in 0..size {
                        out.inner[(l * size + i, l * size + j)] = b.inner[(i, j)];
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn as_faer(&self) -> &Mat<C64> {
        &self.inner
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.inner[(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: C64) {
        self.inner[(i, j)] = value;
    }

    /// Entries in row-major order.
    pub fn row_major(&self) -> Vec<C64> {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(self.inner[(i, j)]);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        (0..self.cols()).all(|j| (0..self.rows()).all(|i| self.inner[(i, j)].is_finite()))
    }

    pub fn adjoint(&self) -> Self {
        Self {
            inner: self.inner.adjoint().to_owned(),
        }
    }

    pub fn map(&self, mut f: impl FnMut(C64) -> C64) -> Self {
        Self::from_fn(self.rows(), self.cols(), |i, j| f(self.inner[(i, j)]))
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map(|z| z * s)
    }

    pub fn matmul(&self, rhs: &ComplexMatrix) -> Self {
        assert_eq!(self.cols(), rhs.rows(), "inner dimensions differ");
        Self {
            inner: &self.inner * &rhs.inner,
        }
    }

    /// `self * rhs`, skipping the zero entries of `self`. Cheap when `self` is sparse.
    pub fn matmul_sparse_left(&self, rhs: &ComplexMatrix) -> Self {
        assert_eq!(self.cols(), rhs.rows(), "inner dimensions differ");
        let mut out = Mat::<C64>::zeros(self.rows(), rhs.cols());
        for l in 0..self.cols() {
            for i in 0..self.rows() {
                let a = self.inner[(i, l)];
                if a == ZERO {
                    continue;
                }
                for j in 0..rhs.cols() {
                    let b = rhs.inner[(l, j)];
                    if b != ZERO {
                        out[(i, j)] += a * b;
                    }
                }
            }
        }
        Self { inner: out }
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols(), v.len(), "vector length differs from column count");
        let mut out = vec![ZERO; self.rows()];
        for (j, &x) in v.iter().enumerate() {
            if x == ZERO {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.inner[(i, j)] * x;
            }
        }
        out
    }

    /// Principal or general submatrix selected by row and column index lists.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |a, b| self.inner[(rows[a], cols[b])])
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows().min(self.cols()))
            .map(|i| self.inner[(i, i)])
            .sum()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..self.cols() {
            for i in 0..self.rows() {
                m = m.max(self.inner[(i, j)].norm());
            }
        }
        m
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.norm_l2()
    }

    /// Singular values in nonincreasing order.
    pub fn singular_values(&self) -> Result<Vec<f64>> {
        self.inner
            .singular_values()
            .map_err(|e| Error::Solver(format!("singular value decomposition failed: {e:?}")))
    }

    /// Spectral (operator 2-) norm.
    pub fn op_norm(&self) -> Result<f64> {
        Ok(self.singular_values()?.first().copied().unwrap_or(0.0))
    }

    /// `max |(U* U - I)_{ij}|`.
    pub fn unitarity_defect(&self) -> f64 {
        let gram = self.adjoint().matmul(self);
        (&gram - &ComplexMatrix::identity(gram.rows())).max_abs()
    }

    pub fn commutator(&self, other: &ComplexMatrix) -> Self {
        &self.matmul(other) - &other.matmul(self)
    }

    /// Number of entries with modulus above `tol`.
    pub fn count_nonzero(&self, tol: f64) -> usize {
        let mut n = 0;
        for j in 0..self.cols() {
            for i in 0..self.rows() {
                if self.inner[(i, j)].norm() > tol {
                    n += 1;
                }
            }
        }
        n
    }

    /// Solves `self * X = rhs` by LU with partial pivoting.
    pub fn solve(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        if !self.is_square() || self.rows() != rhs.rows() {
            return domain("solve needs a square matrix and a conforming right-hand side");
        }
        let lu = self.inner.partial_piv_lu();
        let x = lu.solve(&rhs.inner);
        let out = Self { inner: x };
        if !out.is_finite() {
            return Err(Error::Solver("linear solve produced non-finite values".into()));
        }
        Ok(out)
    }

    /// Binary container: rows and cols as little-endian `u64`, then row-major
    /// `(re, im)` pairs as little-endian `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.rows() as u64).to_le_bytes())?;
        w.write_all(&(self.cols() as u64).to_le_bytes())?;
        for z in self.row_major() {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let rows = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let cols = u64::from_le_bytes(word) as usize;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Domain("matrix header overflows".into()))?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut word)?;
            let re = f64::from_le_bytes(word);
            r.read_exact(&mut word)?;
            let im = f64::from_le_bytes(word);
            entries.push(C64::new(re, im));
        }
        Self::from_row_major(rows, cols, &entries)
    }

    /// Inspection CSV `row,col,re,im` listing entries with modulus above `tol`.
    pub fn write_csv<W: Write>(&self, mut w: W, tol: f64) -> Result<()> {
        writeln!(w, "row,col,re,im")?;
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                let z = self.inner[(i, j)];
                if z.norm() > tol {
                    writeln!(w, "{i},{j},{},{}", fmt_float(z.re), fmt_float(z.im))?;
                }
            }
        }
        Ok(())
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix {
            inner: &self.inner + &rhs.inner,
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix {
            inner: &self.inner - &rhs.inner,
        }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}
