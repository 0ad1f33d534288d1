//! Dense real linear algebra: covariance estimation, symmetric
//! eigendecomposition, traces and a handful of matrix products.
//!
//! Matrices are small (embedding dimension squared) so everything is a plain
//! row-major `Vec<f64>`. The symmetric eigensolver is delegated to nalgebra;
//! this module owns ordering, sign convention and validation.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Symmetry tolerance relative to the largest absolute entry.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major storage, rejecting non-finite entries.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(rows.len(), cols, data)
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != rows {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    found: col.len(),
                });
            }
            for (i, &v) in col.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self[(i, l)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(l);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: v.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ * v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                found: v.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, other: &Self, scale: f64) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.data.len(),
                found: other.data.len(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + scale * b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute entry of `self - selfᵀ`.
    pub fn asymmetry(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                dev = dev.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        dev
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted by signed value, largest first. Column `j` of
/// `eigenvectors` pairs with `eigenvalues[j]` and has its largest-magnitude
/// entry positive (lowest index wins ties).
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DenseMatrix,
}

impl SymEigen {
    /// `V Λ Vᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.eigenvectors.rows();
        let mut out = DenseMatrix::zeros(n, n);
        for (j, &lambda) in self.eigenvalues.iter().enumerate() {
            for r in 0..n {
                let vr = self.eigenvectors[(r, j)] * lambda;
                for c in 0..n {
                    out[(r, c)] += vr * self.eigenvectors[(c, j)];
                }
            }
        }
        out
    }
}

pub fn sym_eigendecompose(a: &DenseMatrix) -> Result<SymEigen> {
    if !a.is_square() {
        return Err(Error::NonSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if a.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let deviation = a.asymmetry();
    if deviation > SYMMETRY_TOLERANCE * a.max_abs() {
        return Err(Error::NotSymmetric { deviation });
    }
    let n = a.rows();
    if n == 0 {
        return Ok(SymEigen {
            eigenvalues: Vec::new(),
            eigenvectors: DenseMatrix::zeros(0, 0),
        });
    }

    let m = a.to_nalgebra();
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut eigenvectors = DenseMatrix::zeros(n, n);
    let mut eigenvalues = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[src]);
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for r in 1..n {
            if col[r].abs() > col[pivot].abs() {
                pivot = r;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            eigenvectors[(r, dst)] = sign * col[r];
        }
    }
    Ok(SymEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// Biased (divide-by-total-weight) covariance about the weighted mean.
pub fn covariance<V: AsRef<[f64]>>(points: &[V], weights: Option<&[f64]>) -> Result<DenseMatrix> {
    Ok(weighted_mean_and_covariance(points, weights)?.1)
}

/// Weighted mean and biased covariance in one two-pass sweep.
pub fn weighted_mean_and_covariance<V: AsRef<[f64]>>(
    points: &[V],
    weights: Option<&[f64]>,
) -> Result<(Vec<f64>, DenseMatrix)> {
    let first = points.first().ok_or(Error::EmptyInput)?;
    let dim = first.as_ref().len();
    for p in points {
        if p.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.as_ref().len(),
            });
        }
    }
    let uniform;
    let weights = match weights {
        Some(w) => {
            if w.len() != points.len() {
                return Err(Error::DimensionMismatch {
                    expected: points.len(),
                    found: w.len(),
                });
            }
            if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
            }
            w
        }
        None => {
            uniform = vec![1.0; points.len()];
            &uniform[..]
        }
    };
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidWeights("weights sum to zero".into()));
    }

    let mut mean = vec![0.0; dim];
    for (p, &w) in points.iter().zip(weights) {
        for (m, &x) in mean.iter_mut().zip(p.as_ref()) {
            *m += w * x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);

    let mut cov = DenseMatrix::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for (p, &w) in points.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for ((c, &x), &m) in centered.iter_mut().zip(p.as_ref()).zip(&mean) {
            *c = x - m;
        }
        for i in 0..dim {
            let wi = w * centered[i];
            for j in i..dim {
                cov[(i, j)] += wi * centered[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] / total;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mean, cov))
}

pub fn trace(a: &DenseMatrix) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::NonSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    Ok(a.diagonal().iter().sum())
}

/// `Tr(A B)` without forming the product.
pub fn trace_of_product(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    if a.cols() != b.rows() || a.rows() != b.cols() {
        return Err(Error::DimensionMismatch {
            expected: a.cols(),
            found: b.rows(),
        });
    }
    let mut t = 0.0;
    for i in 0..a.rows() {
        for l in 0..a.cols() {
            t += a[(i, l)] * b[(l, i)];
        }
    }
    Ok(t)
}

/// Symmetric PSD square root `V sqrt(Λ) Vᵀ`, clamping eigenvalues within
/// `tolerance` of zero. Works for exactly singular inputs.
pub fn psd_sqrt(a: &DenseMatrix, tolerance: f64) -> Result<DenseMatrix> {
    let eig = sym_eigendecompose(a)?;
    let floor = -tolerance * eig.eigenvalues.first().map_or(1.0, |l| l.abs().max(1.0));
    if let Some(&min) = eig.eigenvalues.last() {
        if min < floor {
            return Err(Error::DegenerateWorld(format!(
                "matrix is not positive semidefinite (eigenvalue {min:e})"
            )));
        }
    }
    let roots = SymEigen {
        eigenvalues: eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect(),
        eigenvectors: eig.eigenvectors,
    };
    Ok(roots.reconstruct())
}
