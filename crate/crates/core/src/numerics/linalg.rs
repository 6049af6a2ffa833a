//! Small dense linear-algebra kernel: row-major matrices, weighted Gram
//! products and Cholesky solves for symmetric positive (semi)definite systems.

use std::ops::{Index, IndexMut};

use crate::numerics::NumericsError;
use crate::scalar::Scalar;

/// Relative ridge added to the diagonal when a normal-equations system is
/// numerically rank deficient.
pub const RIDGE_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
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

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::InvalidInput(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericsError::InvalidInput("ragged rows".into()));
        }
        Self::from_row_major(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ v`.
    pub fn tr_mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(self.row(i)) {
                *o = *o + x * vi;
            }
        }
        out
    }

    /// `selfᵀ diag(w) self`, with `w = 1` when absent.
    pub fn weighted_gram(&self, w: Option<&[T]>) -> Matrix<T> {
        let p = self.cols;
        let mut g = Matrix::zeros(p, p);
        for i in 0..self.rows {
            let wi = w.map_or(T::one(), |w| w[i]);
            if wi == T::zero() {
                continue;
            }
            let r = self.row(i);
            for a in 0..p {
                let ra = r[a] * wi;
                let grow = &mut g.data[a * p..(a + 1) * p];
                for b in a..p {
                    grow[b] = grow[b] + ra * r[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                g.data[a * p + b] = g.data[b * p + a];
            }
        }
        g
    }

    /// `selfᵀ diag(w) y`.
    pub fn weighted_cross(&self, w: Option<&[T]>, y: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            let wy = w.map_or(T::one(), |w| w[i]) * y[i];
            if wy == T::zero() {
                continue;
            }
            for (o, &x) in out.iter_mut().zip(self.row(i)) {
                *o = *o + x * wy;
            }
        }
        out
    }

    pub fn submatrix(&self, idx: &[usize]) -> Matrix<T> {
        let k = idx.len();
        let mut m = Matrix::zeros(k, k);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                m[(a, b)] = self[(i, j)];
            }
        }
        m
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn cholesky_solve_factored<T: Scalar>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut z = b.to_vec();
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s = s - l[(i, k)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s = s - l[(k, i)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    z
}

/// Solution of a symmetric positive definite system.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdSolution<T> {
    pub x: Vec<T>,
    /// Set when the ridge jitter had to be added to the diagonal.
    pub ridge_applied: bool,
}

/// Solves `a x = b` for symmetric positive semidefinite `a`, adding a ridge of
/// `RIDGE_JITTER · max diag(a)` if the plain factorization breaks down.
pub fn solve_spd<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<SpdSolution<T>, NumericsError> {
    assert_eq!(a.rows(), a.cols());
    assert_eq!(a.rows(), b.len());
    if let Some(l) = cholesky_generic(a) {
        return Ok(SpdSolution { x: cholesky_solve_factored(&l, b), ridge_applied: false });
    }
    let n = a.rows();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(T::zero(), T::max);
    if !(max_diag > T::zero()) {
        return Err(NumericsError::SingularDesign);
    }
    let mut jittered = a.clone();
    let ridge = T::lit(RIDGE_JITTER) * max_diag;
    for i in 0..n {
        jittered[(i, i)] = jittered[(i, i)] + ridge;
    }
    match cholesky_generic_with_floor(&jittered, T::zero()) {
        Some(l) => Ok(SpdSolution { x: cholesky_solve_factored(&l, b), ridge_applied: true }),
        None => Err(NumericsError::SingularDesign),
    }
}

fn cholesky_generic<T: Scalar>(a: &Matrix<T>) -> Option<Matrix<T>> {
    let n = a.rows();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(T::zero(), T::max);
    let floor = T::epsilon() * T::from_count(n.max(1) * 16) * max_diag;
    cholesky_generic_with_floor(a, floor)
}

fn cholesky_generic_with_floor<T: Scalar>(a: &Matrix<T>, floor: T) -> Option<Matrix<T>> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d = d - l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky_lower<T: Scalar>(a: &Matrix<T>) -> Option<Matrix<T>> {
    cholesky_generic_with_floor(a, T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        let a = Matrix::<f64>::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let sol = solve_spd(&a, &[2.0, 1.0]).unwrap();
        assert!(!sol.ridge_applied);
        assert!((sol.x[0] - 0.5).abs() < 1e-14);
        assert!(sol.x[1].abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_system_gets_ridge() {
        let a = Matrix::<f64>::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let sol = solve_spd(&a, &[2.0, 2.0]).unwrap();
        assert!(sol.ridge_applied);
        assert!((sol.x[0] + sol.x[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_matrix_is_singular() {
        let a = Matrix::<f64>::zeros(2, 2);
        assert!(matches!(solve_spd(&a, &[0.0, 0.0]), Err(NumericsError::SingularDesign)));
    }

    #[test]
    fn weighted_gram_matches_explicit_product() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, -1.0], vec![1.0, 0.5]]).unwrap();
        let w = [1.0, 2.0, 0.5];
        let g = x.weighted_gram(Some(&w));
        assert_eq!(g[(0, 0)], 3.5);
        assert_eq!(g[(0, 1)], 2.0 - 2.0 + 0.25);
        assert_eq!(g[(1, 0)], g[(0, 1)]);
        assert_eq!(g[(1, 1)], 4.0 + 2.0 + 0.125);
        assert_eq!(x.weighted_cross(Some(&w), &[1.0, 1.0, 2.0]), vec![4.0, 2.0 - 2.0 + 0.5]);
    }
}
