//! Minimal dense linear algebra over a generic [`Real`] scalar.
//!
//! Everything here targets the small symmetric positive-definite systems of
//! this toolkit (dimension <= 20 by construction): row-major storage,
//! unpivoted Cholesky, triangular solves. Solves go through the
//! factorization; matrices are never inverted explicitly on the caller-facing
//! paths, matching the residual-checked solve contract.

use crate::error::{Error, Result};
use crate::num::Real;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Build from row-major data. Panics on length mismatch (programmer error).
    pub fn from_rows(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn from_f64_rows(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix {
            rows,
            cols,
            data: data.iter().map(|&x| T::from_f64(x)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        let mut y = vec![T::zero(); self.rows];
        for i in 0..self.rows {
            let mut acc = T::zero();
            for j in 0..self.cols {
                acc += self[(i, j)] * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// xᵀ A y without forming intermediates.
    pub fn quad_form(&self, x: &[T], y: &[T]) -> T {
        assert_eq!(x.len(), self.rows);
        assert_eq!(y.len(), self.cols);
        let mut acc = T::zero();
        for i in 0..self.rows {
            let mut row = T::zero();
            for j in 0..self.cols {
                row += self[(i, j)] * y[j];
            }
            acc += x[i] * row;
        }
        acc
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let d = (self[(i, j)] - self[(j, i)]).abs().to_f64();
                worst = worst.max(d);
            }
        }
        worst
    }

    pub fn map_to_f64(&self) -> Matrix<f64> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x.to_f64()).collect(),
        }
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

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factor an SPD matrix; a non-positive pivot reports the leading minor.
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        Self::with_context(a, "matrix")
    }

    /// Same as [`Cholesky::new`] with a caller-supplied name for errors.
    pub fn with_context(a: &Matrix<T>, what: &str) -> Result<Self> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "cholesky needs a square matrix");
        let mut l = Matrix::<T>::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::numerical(format!(
                    "{what} is not positive definite (pivot {} of {n})",
                    j + 1
                )));
            }
            let dj = d.sqrt();
            l[(j, j)] = dj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / dj;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// Solve A x = b through the factor.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(b.len(), n, "solve dimension mismatch");
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    /// bᵀ A⁻¹ b = ‖L⁻¹ b‖², evaluated through forward substitution only.
    pub fn quad_form_inv(&self, b: &[T]) -> T {
        let n = self.dim();
        assert_eq!(b.len(), n, "quad_form_inv dimension mismatch");
        let l = &self.l;
        let mut w = b.to_vec();
        let mut acc = T::zero();
        for i in 0..n {
            let mut s = w[i];
            for k in 0..i {
                s -= l[(i, k)] * w[k];
            }
            let wi = s / l[(i, i)];
            w[i] = wi;
            acc += wi * wi;
        }
        acc
    }

    /// A⁻¹ as a dense matrix (used only to cache the small per-group
    /// information blocks, never on the caller-facing solve path). The
    /// result is symmetrized so operators assembled from it are symmetric
    /// to the last bit.
    pub fn inverse(&self) -> Matrix<T> {
        let n = self.dim();
        let mut inv = Matrix::<T>::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
            e[j] = T::zero();
        }
        let half = T::from_f64(0.5);
        for i in 0..n {
            for j in (i + 1)..n {
                let s = (inv[(i, j)] + inv[(j, i)]) * half;
                inv[(i, j)] = s;
                inv[(j, i)] = s;
            }
        }
        inv
    }

    /// Cheap lower bound on the 2-norm condition number, from the extreme
    /// squared diagonal entries of the factor.
    pub fn condition_hint(&self) -> f64 {
        let n = self.dim();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..n {
            let d = self.l[(i, i)].to_f64();
            let d2 = d * d;
            lo = lo.min(d2);
            hi = hi.max(d2);
        }
        if lo > 0.0 {
            hi / lo
        } else {
            f64::INFINITY
        }
    }
}

/// Factor, solve and verify the relative residual in the infinity norm.
pub fn solve_spd_checked<T: Real>(
    a: &Matrix<T>,
    b: &[T],
    rel_tol: f64,
    what: &str,
) -> Result<Vec<T>> {
    let chol = Cholesky::with_context(a, what)?;
    let x = chol.solve(b);
    let ax = a.matvec(&x);
    let mut res = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..b.len() {
        res = res.max((ax[i] - b[i]).abs().to_f64());
        scale = scale.max(b[i].abs().to_f64());
    }
    if scale > 0.0 && res > rel_tol * scale {
        return Err(Error::numerical(format!(
            "{what}: solve residual {res:e} exceeds {rel_tol:e} of the right-hand side"
        )));
    }
    Ok(x)
}
