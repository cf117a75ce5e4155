//! Small dense linear algebra: a row-major matrix, Cholesky factorization and
//! Householder least squares.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is rank deficient (column {column})")]
    RankDeficient { column: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn from_column(col: &[T]) -> Self {
        Self::from_vec(col.len(), 1, col.to_vec())
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
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
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

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Self {
        let n = self.cols;
        let mut g = Self::zeros(n, n);
        for r in self.iter_rows() {
            for i in 0..n {
                let ri = r[i];
                if ri == T::zero() {
                    continue;
                }
                for j in i..n {
                    g.data[i * n + j] += ri * r[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                g.data[i * n + j] = g.data[j * n + i];
            }
        }
        g
    }

    /// `selfᵀ · v`.
    pub fn t_mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (r, &vi) in self.iter_rows().zip(v) {
            for (o, &x) in out.iter_mut().zip(r) {
                *o += x * vi;
            }
        }
        out
    }

    /// `self · v`.
    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        self.iter_rows().map(|r| crate::scalar::dot(r, v)).collect()
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L·Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn factor(a: &Matrix<T>) -> Result<Self, LinalgError> {
        let n = a.rows();
        if a.cols() != n {
            return Err(LinalgError::Dimension { expected: n, got: a.cols() });
        }
        let mut l = Matrix::zeros(n, n);
        // Relative pivot floor: anything below this is numerically singular.
        let scale = (0..n).map(|i| a[(i, i)].abs()).fold(T::zero(), T::max);
        let floor = scale * T::epsilon() * T::from_usize_lossy(n.max(1));
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > floor) {
                return Err(LinalgError::NotPositiveDefinite { pivot: j, value: d.to_f64_lossy() });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.l.rows();
        assert_eq!(b.len(), n);
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.l[(i, k)] * z[k];
            }
            z[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * z[k];
            }
            z[i] = s / self.l[(i, i)];
        }
        z
    }

    pub fn factor_matrix(&self) -> &Matrix<T> {
        &self.l
    }
}

/// Ordinary least squares result from a Householder QR solve.
#[derive(Debug, Clone)]
pub struct LeastSquares<T> {
    pub coefficients: Vec<T>,
    pub residuals: Vec<T>,
    pub ssr: T,
    /// Diagonal of `(XᵀX)⁻¹`, used for coefficient standard errors.
    pub xtx_inv_diag: Vec<T>,
}

impl<T: Scalar> LeastSquares<T> {
    /// Standard error of coefficient `j` using `σ̂² = SSR / (n − k)`.
    pub fn std_error(&self, j: usize) -> T {
        let n = self.residuals.len();
        let k = self.coefficients.len();
        let sigma2 = self.ssr / T::from_usize_lossy(n.saturating_sub(k).max(1));
        (sigma2 * self.xtx_inv_diag[j]).sqrt()
    }
}

/// Least squares via Householder QR on a copy of `x`.
pub fn lstsq<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<LeastSquares<T>, LinalgError> {
    let (n, k) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(LinalgError::Dimension { expected: n, got: y.len() });
    }
    if n < k {
        return Err(LinalgError::RankDeficient { column: n });
    }
    let mut a = x.clone();
    let mut qty = y.to_vec();
    let col_scale: Vec<T> = (0..k)
        .map(|j| (0..n).map(|i| a[(i, j)] * a[(i, j)]).sum::<T>().sqrt())
        .collect();
    for j in 0..k {
        let mut norm = T::zero();
        for i in j..n {
            norm += a[(i, j)] * a[(i, j)];
        }
        let norm = norm.sqrt();
        if !(norm > col_scale[j] * T::epsilon() * T::lit(64.0)) {
            return Err(LinalgError::RankDeficient { column: j });
        }
        let alpha = if a[(j, j)] > T::zero() { -norm } else { norm };
        let mut v: Vec<T> = (j..n).map(|i| a[(i, j)]).collect();
        v[0] -= alpha;
        let vnorm2: T = v.iter().map(|&t| t * t).sum();
        if vnorm2 > T::zero() {
            let two = T::lit(2.0);
            for c in j..k {
                let s: T = (j..n).map(|i| v[i - j] * a[(i, c)]).sum();
                let f = two * s / vnorm2;
                for i in j..n {
                    a[(i, c)] -= f * v[i - j];
                }
            }
            let s: T = (j..n).map(|i| v[i - j] * qty[i]).sum();
            let f = two * s / vnorm2;
            for i in j..n {
                qty[i] -= f * v[i - j];
            }
        }
    }
    // Back substitution with R (upper k×k of a).
    let mut beta = vec![T::zero(); k];
    for i in (0..k).rev() {
        let mut s = qty[i];
        for c in (i + 1)..k {
            s -= a[(i, c)] * beta[c];
        }
        beta[i] = s / a[(i, i)];
    }
    // R⁻¹ row norms give diag((XᵀX)⁻¹) = diag(R⁻¹R⁻ᵀ).
    let mut rinv = Matrix::zeros(k, k);
    for c in 0..k {
        rinv[(c, c)] = T::one() / a[(c, c)];
        for i in (0..c).rev() {
            let mut s = T::zero();
            for m in (i + 1)..=c {
                s += a[(i, m)] * rinv[(m, c)];
            }
            rinv[(i, c)] = -s / a[(i, i)];
        }
    }
    let xtx_inv_diag = (0..k).map(|i| (i..k).map(|c| rinv[(i, c)] * rinv[(i, c)]).sum()).collect();
    let fitted = x.mul_vec(&beta);
    let residuals: Vec<T> = y.iter().zip(&fitted).map(|(&a, &b)| a - b).collect();
    let ssr = residuals.iter().map(|&r| r * r).sum();
    Ok(LeastSquares { coefficients: beta, residuals, ssr, xtx_inv_diag })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = Matrix::<f64>::from_rows(&[vec![4.0, 2.0, 0.6], vec![2.0, 5.0, 1.0], vec![0.6, 1.0, 3.0]]);
        let x: Vec<f64> = vec![1.0, -2.0, 0.5];
        let b = a.mul_vec(&x);
        let sol = Cholesky::factor(&a).unwrap().solve(&b);
        for (s, t) in sol.iter().zip(&x) {
            assert!((s - t).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_singular() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(Cholesky::factor(&a), Err(LinalgError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn lstsq_exact_line_and_standard_errors() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, 3.0]]);
        let y = [1.0, 3.1, 4.9, 7.0];
        let ls = lstsq(&x, &y).unwrap();
        // slope = Sxy/Sxx with Sxx = 5, intercept = ȳ − slope·x̄
        let sxy: f64 = [(-1.5, 1.0), (-0.5, 3.1), (0.5, 4.9), (1.5, 7.0)].iter().map(|(a, b)| a * b).sum();
        assert!((ls.coefficients[1] - sxy / 5.0).abs() < 1e-12);
        assert!((ls.coefficients[0] - (4.0 - 1.5 * sxy / 5.0)).abs() < 1e-12);
        // (XᵀX)⁻¹ for this design: [[7/10, -3/10], [-3/10, 1/5]]
        assert!((ls.xtx_inv_diag[0] - 0.7).abs() < 1e-12);
        assert!((ls.xtx_inv_diag[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn lstsq_detects_collinear_columns() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]);
        assert!(lstsq(&x, &[1.0, 2.0, 3.0]).is_err());
    }
}
