//! Packed upper-triangular factors of a precision matrix.
//!
//! A component's precision is stored as the Cholesky factor `Ū` with
//! `Σ⁻¹ = ŪᵀŪ`. The network emits an unconstrained triangle `U`; the factor is
//! obtained by exponentiating its diagonal, which keeps `Ū` a valid Cholesky
//! root for any real input. Both are stored packed, row-major over the upper
//! triangle including the diagonal:
//!
//! ```text
//! N = 3:  [u00 u01 u02 | u11 u12 | u22]
//! ```

use crate::error::{MdnError, Result};
use crate::scalar::Real;

/// Raw diagonal entries are clamped to `[-DIAG_CLAMP, DIAG_CLAMP]` before exponentiation.
pub const DIAG_CLAMP: f64 = 30.0;

/// Factor diagonals below this magnitude are reported as singular.
pub const SINGULARITY_THRESHOLD: f64 = 1e-300;

/// Number of packed entries in an `n × n` upper triangle.
#[inline]
pub const fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Offset of `(row, col)` in the packed triangle, `row <= col`.
#[inline]
pub const fn packed_index(n: usize, row: usize, col: usize) -> usize {
    row * n - row * row.saturating_sub(1) / 2 + (col - row)
}

/// Offset of the `j`-th diagonal entry in the packed triangle.
#[inline]
pub const fn diag_index(n: usize, j: usize) -> usize {
    packed_index(n, j, j)
}

#[inline]
pub(crate) fn clamp_diag<T: Real>(v: T) -> T {
    let c = T::lit(DIAG_CLAMP);
    v.max(-c).min(c)
}

fn dim_from_packed(len: usize) -> Option<usize> {
    let mut n = 0;
    while packed_len(n) < len {
        n += 1;
    }
    (packed_len(n) == len && n > 0).then_some(n)
}

/// Unconstrained upper triangle `U` as emitted by the network.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperTriangularRaw<T> {
    dim: usize,
    entries: Vec<T>,
}

impl<T: Real> UpperTriangularRaw<T> {
    pub fn new(dim: usize, entries: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(MdnError::InvalidInput("triangle dimension must be positive".into()));
        }
        if entries.len() != packed_len(dim) {
            return Err(MdnError::shape("upper triangle entries", packed_len(dim), entries.len()));
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(MdnError::InvalidInput(format!(
                "non-finite triangle entry at packed index {pos}"
            )));
        }
        Ok(Self { dim, entries })
    }

    /// Infers the dimension from the packed length.
    pub fn from_packed(entries: Vec<T>) -> Result<Self> {
        let dim = dim_from_packed(entries.len()).ok_or_else(|| {
            MdnError::InvalidInput(format!("{} is not a triangular number", entries.len()))
        })?;
        Self::new(dim, entries)
    }

    /// All-zero triangle: identity precision.
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0);
        Self {
            dim,
            entries: vec![T::zero(); packed_len(dim)],
        }
    }

    /// Triangle with the given raw diagonal and zero off-diagonals.
    pub fn from_diag(diag: &[T]) -> Result<Self> {
        let n = diag.len();
        let mut entries = vec![T::zero(); packed_len(n)];
        for (j, &d) in diag.iter().enumerate() {
            entries[diag_index(n, j)] = d;
        }
        Self::new(n, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        if col < row {
            T::zero()
        } else {
            self.entries[packed_index(self.dim, row, col)]
        }
    }

    pub fn diag(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.dim).map(move |j| self.entries[diag_index(self.dim, j)])
    }
}

/// Cholesky factor `Ū` of a precision matrix; upper triangular with positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor<T> {
    dim: usize,
    entries: Vec<T>,
}

impl<T: Real> CholeskyFactor<T> {
    /// Builds a factor from packed entries that already carry a positive diagonal.
    pub fn from_packed(dim: usize, entries: Vec<T>) -> Result<Self> {
        if dim == 0 || entries.len() != packed_len(dim) {
            return Err(MdnError::shape("cholesky factor entries", packed_len(dim.max(1)), entries.len()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(MdnError::InvalidInput("non-finite factor entry".into()));
        }
        for j in 0..dim {
            let d = entries[diag_index(dim, j)];
            if d <= T::zero() {
                return Err(MdnError::InvalidInput(format!(
                    "factor diagonal entry {j} is not positive"
                )));
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn identity(dim: usize) -> Self {
        exp_diag(&UpperTriangularRaw::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        if col < row {
            T::zero()
        } else {
            self.entries[packed_index(self.dim, row, col)]
        }
    }

    pub fn min_diag(&self) -> T {
        (0..self.dim)
            .map(|j| self.entries[diag_index(self.dim, j)])
            .fold(T::infinity(), T::min)
    }

    /// Dense row-major expansion.
    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut m = DenseMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for c in r..self.dim {
                m.set(r, c, self.get(r, c));
            }
        }
        m
    }
}

/// Maps the raw triangle to a Cholesky factor by exponentiating the (clamped) diagonal.
pub fn exp_diag<T: Real>(u: &UpperTriangularRaw<T>) -> CholeskyFactor<T> {
    let n = u.dim;
    let mut entries = u.entries.clone();
    for j in 0..n {
        let k = diag_index(n, j);
        entries[k] = clamp_diag(entries[k]).exp();
    }
    CholeskyFactor { dim: n, entries }
}

/// `log |Σ⁻¹|^{1/2}`, the sum of the raw diagonal entries.
///
/// Uses the same clamp as [`exp_diag`] so that it stays consistent with the
/// factor actually applied; inside the clamp range this is the plain sum.
pub fn log_det_half_precision<T: Real>(u: &UpperTriangularRaw<T>) -> T {
    u.diag().fold(T::zero(), |acc, d| acc + clamp_diag(d))
}

/// `Ū · v`.
pub fn tri_matvec<T: Real>(c: &CholeskyFactor<T>, v: &[T]) -> Result<Vec<T>> {
    let n = c.dim;
    if v.len() != n {
        return Err(MdnError::shape("tri_matvec vector", n, v.len()));
    }
    let mut out = vec![T::zero(); n];
    for (r, o) in out.iter_mut().enumerate() {
        let row = &c.entries[packed_index(n, r, r)..packed_index(n, r, r) + (n - r)];
        *o = row.iter().zip(&v[r..]).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
    }
    Ok(out)
}

/// Solves `Ūᵀ v = rhs` by forward substitution, i.e. returns `Ū⁻ᵀ · rhs`.
pub fn solve_lower_transposed<T: Real>(c: &CholeskyFactor<T>, rhs: &[T]) -> Result<Vec<T>> {
    let n = c.dim;
    if rhs.len() != n {
        return Err(MdnError::shape("solve_lower_transposed rhs", n, rhs.len()));
    }
    let tiny = T::lit(SINGULARITY_THRESHOLD);
    let mut v = vec![T::zero(); n];
    for r in 0..n {
        let d = c.get(r, r);
        if !(d >= tiny) {
            return Err(MdnError::Singular {
                index: r,
                value: d.to_f64_lossy(),
            });
        }
        // row r of Ūᵀ is column r of Ū
        let mut acc = rhs[r];
        for k in 0..r {
            acc -= c.get(k, r) * v[k];
        }
        v[r] = acc / d;
    }
    Ok(v)
}

/// Solves `Ū v = rhs` by back substitution, i.e. returns `Ū⁻¹ · rhs`.
///
/// `Ū⁻¹` is the factor with `Σ = Ū⁻¹ Ū⁻ᵀ`, so this is the sampling transform.
pub fn solve_upper<T: Real>(c: &CholeskyFactor<T>, rhs: &[T]) -> Result<Vec<T>> {
    let n = c.dim;
    if rhs.len() != n {
        return Err(MdnError::shape("solve_upper rhs", n, rhs.len()));
    }
    let tiny = T::lit(SINGULARITY_THRESHOLD);
    let mut v = vec![T::zero(); n];
    for r in (0..n).rev() {
        let d = c.get(r, r);
        if !(d >= tiny) {
            return Err(MdnError::Singular {
                index: r,
                value: d.to_f64_lossy(),
            });
        }
        let row = &c.entries[packed_index(n, r, r)..packed_index(n, r, r) + (n - r)];
        let mut acc = rhs[r];
        for (k, &u) in row.iter().enumerate().skip(1) {
            acc -= u * v[r + k];
        }
        v[r] = acc / d;
    }
    Ok(v)
}

/// `Σ = (ŪᵀŪ)⁻¹ = LLᵀ` with `L = Ū⁻¹`, built from `N` triangular solves.
pub fn covariance_from_factor<T: Real>(c: &CholeskyFactor<T>) -> Result<DenseMatrix<T>> {
    let n = c.dim;
    // columns of L
    let mut l = DenseMatrix::zeros(n, n);
    let mut unit = vec![T::zero(); n];
    for j in 0..n {
        unit.iter_mut().for_each(|u| *u = T::zero());
        unit[j] = T::one();
        let col = solve_upper(c, &unit)?;
        for (i, v) in col.into_iter().enumerate() {
            l.set(i, j, v);
        }
    }
    let mut sigma = DenseMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let mut acc = T::zero();
            for j in 0..n {
                acc += l.get(a, j) * l.get(b, j);
            }
            sigma.set(a, b, acc);
        }
    }
    Ok(sigma)
}

/// Row-major dense matrix. Used for tape values, covariance reconstruction and test oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(MdnError::shape("dense matrix data", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(MdnError::shape("dense matrix row", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(MdnError::shape("matmul inner dimension", self.cols, other.rows));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(MdnError::shape("matvec vector", self.cols, v.len()));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
            .collect())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
    }
}
