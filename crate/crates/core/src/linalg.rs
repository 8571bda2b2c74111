//! Dense row-major matrices, symmetric eigendecomposition and subspace
//! comparison.
//!
//! Everything is `f64`. Matrix products go through `matrixmultiply`; the
//! eigensolver is a Householder tridiagonalisation followed by implicit QL
//! with Wilkinson-style shifts, which handles the n ≈ 2000 Laplacians the
//! oracle needs in seconds.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::dim("columns have unequal lengths"));
        }
        Ok(Matrix::from_fn(rows, columns.len(), |r, c| columns[c][r]))
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_column(&mut self, c: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (r, v) in values.iter().enumerate() {
            self[(r, c)] = *v;
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (dst, &src) in indices.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    pub fn select_columns(&self, indices: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, indices.len(), |r, c| self[(r, indices[c])])
    }

    /// Appends a column filled with `value`.
    pub fn with_constant_column(&self, value: f64) -> Matrix {
        Matrix::from_fn(self.rows, self.cols + 1, |r, c| if c < self.cols { self[(r, c)] } else { value })
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim(format!("cannot multiply {:?} by {:?}", self.shape(), other.shape())));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(1.0, self.view(), other.view(), 0.0, &mut out);
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::dim(format!("cannot multiply {:?}ᵀ by {:?}", self.shape(), other.shape())));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(1.0, self.view().t(), other.view(), 0.0, &mut out);
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::dim(format!("cannot multiply {:?} by {:?}ᵀ", self.shape(), other.shape())));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(1.0, self.view(), other.view().t(), 0.0, &mut out);
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::dim(format!("vector of length {} against {:?}", v.len(), self.shape())));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    pub fn scaled(&self, alpha: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| alpha * x).collect() }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!("shapes {:?} and {:?} differ", self.shape(), other.shape())));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Column means.
    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (m, x) in means.iter_mut().zip(self.row(r)) {
                *m += x;
            }
        }
        let n = self.rows.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Copy with column means subtracted.
    pub fn centered(&self) -> Matrix {
        let means = self.column_means();
        let mut out = self.clone();
        for r in 0..self.rows {
            for (x, m) in out.row_mut(r).iter_mut().zip(&means) {
                *x -= m;
            }
        }
        out
    }

    /// Largest |A − Aᵀ| entry.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for c in r + 1..self.cols {
                worst = worst.max((self[(r, c)] - self[(c, r)]).abs());
            }
        }
        worst
    }

    pub(crate) fn view(&self) -> MatView<'_> {
        MatView { data: &self.data, rows: self.rows, cols: self.cols, rs: self.cols as isize, cs: 1 }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Strided read-only view used to feed `dgemm` without copying.
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatView<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols);
        MatView { data, rows, cols, rs: cols as isize, cs: 1 }
    }

    pub fn t(self) -> Self {
        MatView { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }
}

/// `c = alpha · a · b + beta · c` for row-major `c`.
pub(crate) fn gemm(alpha: f64, a: MatView<'_>, b: MatView<'_>, beta: f64, c: &mut Matrix) {
    let (rows, cols) = c.shape();
    gemm_into(alpha, a, b, beta, &mut c.data, rows, cols);
}

pub(crate) fn gemm_into(alpha: f64, a: MatView<'_>, b: MatView<'_>, beta: f64, c: &mut [f64], rows: usize, cols: usize) {
    assert_eq!(a.rows, rows);
    assert_eq!(b.cols, cols);
    assert_eq!(a.cols, b.rows);
    assert!(c.len() >= rows * cols);
    let inner = a.cols;
    if rows == 0 || cols == 0 {
        return;
    }
    if inner == 0 {
        c[..rows * cols].iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let max_offset = |v: &MatView<'_>| (v.rows as isize - 1) * v.rs + (v.cols as isize - 1) * v.cs;
    assert!(max_offset(&a) < a.data.len() as isize && max_offset(&b) < b.data.len() as isize);
    // SAFETY: the shape and stride assertions above keep every access inside
    // the three slices, and `c` does not alias `a` or `b` (it is borrowed
    // mutably while they are borrowed shared).
    unsafe {
        matrixmultiply::dgemm(
            rows,
            inner,
            cols,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            cols as isize,
            1,
        );
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `j` is the unit eigenvector for `values[j]`.
    pub vectors: Matrix,
}

/// Relative symmetry tolerance accepted by [`sym_eig`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

const QL_MAX_ITERATIONS: usize = 60;

/// Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.
pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dim(format!("eigendecomposition needs a square matrix, got {:?}", a.shape())));
    }
    if !a.is_finite() {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    let tolerance = SYMMETRY_TOLERANCE * a.max_abs();
    let asymmetry = a.asymmetry();
    if asymmetry > tolerance {
        return Err(Error::Asymmetric { asymmetry, tolerance });
    }
    if n == 0 {
        return Ok(SymEig { values: vec![], vectors: Matrix::zeros(0, 0) });
    }

    // Column-major working copy: z[c * n + r] holds entry (r, c). Rotations in
    // the QL sweep then touch contiguous columns.
    let mut z = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            z[c * n + r] = 0.5 * (a[(r, c)] + a[(c, r)]);
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut z, &mut d, &mut e, n);
    tridiagonal_ql(&mut z, &mut d, &mut e, n)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let values = order.iter().map(|&i| d[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = &z[src * n..(src + 1) * n];
        for (r, v) in col.iter().enumerate() {
            vectors[(r, dst)] = *v;
        }
    }
    Ok(SymEig { values, vectors })
}

/// Householder reduction to tridiagonal form, accumulating the orthogonal
/// transform in `z` (column-major). On return `d` is the diagonal and
/// `e[1..]` the sub-diagonal.
fn tridiagonalize(z: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) {
    // v(r, c) with r the row index, stored at c * n + r.
    macro_rules! v {
        ($r:expr, $c:expr) => {
            z[($c) * n + ($r)]
        };
    }

    for j in 0..n {
        d[j] = v!(n - 1, j);
    }

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v!(i - 1, j);
                v!(i, j) = 0.0;
                v!(j, i) = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].iter_mut().for_each(|x| *x = 0.0);

            for j in 0..i {
                f = d[j];
                v!(j, i) = f;
                g = e[j] + v!(j, j) * f;
                let col = &z[j * n..j * n + i];
                for k in j + 1..i {
                    g += col[k] * d[k];
                    e[k] += col[k] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                let col = &mut z[j * n..j * n + i];
                for k in j..i {
                    col[k] -= f * e[k] + g * d[k];
                }
                d[j] = v!(i - 1, j);
                v!(i, j) = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v!(n - 1, i) = v!(i, i);
        v!(i, i) = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v!(k, i + 1) / h;
            }
            for j in 0..=i {
                let (head, tail) = z.split_at_mut((i + 1) * n);
                let reflector = &tail[..=i];
                let col = &mut head[j * n..j * n + i + 1];
                let g = dot(reflector, col);
                for k in 0..=i {
                    col[k] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v!(k, i + 1) = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v!(n - 1, j);
        v!(n - 1, j) = 0.0;
    }
    v!(n - 1, n - 1) = 1.0;
    e[0] = 0.0;
}

/// Implicit QL on the tridiagonal (d, e), rotating the columns of `z`.
fn tridiagonal_ql(z: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        // e[n-1] is zero so m < n always.
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_MAX_ITERATIONS {
                    return Err(Error::Convergence(QL_MAX_ITERATIONS));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    let (left, right) = z.split_at_mut((i + 1) * n);
                    let zi = &mut left[i * n..];
                    let zi1 = &mut right[..n];
                    for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                        let t = *b;
                        *b = s * *a + c * t;
                        *a = c * *a - s * t;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Largest singular value, from the top eigenvalue of `AᵀA`.
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    let gram = a.t_matmul(a)?;
    let eig = sym_eig(&gram)?;
    Ok(eig.values.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Relative threshold under which a Gram-Schmidt pivot counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Orthonormal basis for the column span of `a` (modified Gram-Schmidt,
/// applied twice). `which` names the input in the rank error.
pub fn orthonormal_basis(a: &Matrix, which: &'static str) -> Result<Matrix> {
    let (n, k) = a.shape();
    let scale = (0..k).map(|c| norm(&a.column(c))).fold(0.0f64, f64::max);
    if k == 0 || scale == 0.0 || !a.is_finite() {
        return Err(Error::RankDeficient { which });
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    for c in 0..k {
        let mut v = a.column(c);
        for _ in 0..2 {
            for q in &basis {
                let proj = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= proj * qi);
            }
        }
        let len = norm(&v);
        if len <= RANK_TOLERANCE * scale * (n as f64).sqrt().max(1.0) {
            return Err(Error::RankDeficient { which });
        }
        v.iter_mut().for_each(|x| *x /= len);
        basis.push(v);
    }
    Matrix::from_columns(&basis)
}

/// Cosines of the principal angles between the column spans of `a` and `b`,
/// descending. Returns `min(cols(a), cols(b))` values.
pub fn principal_angle_cosines(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    if a.rows() != b.rows() {
        return Err(Error::dim(format!("subspaces live in R^{} and R^{}", a.rows(), b.rows())));
    }
    if a.cols() == 0 || b.cols() == 0 || a.cols() > a.rows() || b.cols() > b.rows() {
        return Err(Error::dim(format!("need n >= k >= 1, got {:?} and {:?}", a.shape(), b.shape())));
    }
    let qa = orthonormal_basis(a, "first")?;
    let qb = orthonormal_basis(b, "second")?;
    let cross = qa.t_matmul(&qb)?;
    // Singular values of the small cross matrix via its Gram matrix.
    let gram = if cross.rows() <= cross.cols() { cross.matmul_t(&cross)? } else { cross.t_matmul(&cross)? };
    let gram = Matrix::from_fn(gram.rows(), gram.cols(), |r, c| 0.5 * (gram[(r, c)] + gram[(c, r)]));
    let eig = sym_eig(&gram)?;
    Ok(eig.values.iter().rev().map(|&s| s.max(0.0).sqrt().min(1.0)).collect())
}
