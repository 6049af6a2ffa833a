//! Lawson–Hanson active-set solver for non-negative least squares.
//!
//! Works on the normal equations `AᵀA`, `Aᵀb`, which is adequate for the
//! handful of columns a stacking library produces.

use crate::numerics::linalg::{solve_spd, Matrix};
use crate::numerics::NumericsError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    /// `max_i max(-gᵢ, |xᵢ gᵢ|)` with `g = Aᵀ(Ax - b)`.
    pub kkt_residual: T,
}

/// Minimizes `‖Ax − b‖₂` subject to `x ≥ 0`.
pub fn nnls<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<NnlsSolution<T>, NumericsError> {
    if a.rows() != b.len() {
        return Err(NumericsError::InvalidInput(format!("A has {} rows, b has {} entries", a.rows(), b.len())));
    }
    if a.as_slice().iter().chain(b).any(|v| !v.is_finite()) {
        return Err(NumericsError::InvalidInput("non-finite entry in NNLS problem".into()));
    }
    let gram = a.weighted_gram(None);
    let atb = a.tr_mul_vec(b);
    nnls_normal(&gram, &atb)
}

/// Same problem posed through `AᵀA` and `Aᵀb`.
pub fn nnls_normal<T: Scalar>(gram: &Matrix<T>, atb: &[T]) -> Result<NnlsSolution<T>, NumericsError> {
    let n = atb.len();
    let scale = atb.iter().fold(T::one(), |m, v| m.max(v.abs()));
    let tol = T::epsilon() * T::lit(1e3) * scale;
    let max_iterations = 30 * n.max(1);

    let mut x = vec![T::zero(); n];
    let mut passive = vec![false; n];
    let mut iterations = 0;

    let dual =
        |x: &[T]| -> Vec<T> { (0..n).map(|i| atb[i] - (0..n).map(|j| gram[(i, j)] * x[j]).sum::<T>()).collect() };

    loop {
        let w = dual(&x);
        // Ties resolve to the lowest column index.
        let mut best: Option<usize> = None;
        for j in (0..n).filter(|&j| !passive[j]) {
            if w[j] > tol && best.map_or(true, |b| w[j] > w[b]) {
                best = Some(j);
            }
        }
        let Some(entering) = best else { break };
        passive[entering] = true;

        loop {
            iterations += 1;
            if iterations > max_iterations {
                return Err(NumericsError::MaxIterations(max_iterations));
            }
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = gram.submatrix(&idx);
            let rhs: Vec<T> = idx.iter().map(|&j| atb[j]).collect();
            let z_sub = solve_spd(&sub, &rhs)?.x;
            let mut z = vec![T::zero(); n];
            for (k, &j) in idx.iter().enumerate() {
                z[j] = z_sub[k];
            }
            if idx.iter().all(|&j| z[j] > T::zero()) {
                x = z;
                break;
            }
            let mut alpha = T::one();
            for &j in &idx {
                if z[j] <= T::zero() {
                    let denom = x[j] - z[j];
                    if denom > T::zero() {
                        alpha = alpha.min(x[j] / denom);
                    } else {
                        alpha = T::zero();
                    }
                }
            }
            for &j in &idx {
                x[j] = x[j] + alpha * (z[j] - x[j]);
            }
            let mut removed = false;
            for &j in &idx {
                if x[j] <= T::epsilon() * T::lit(16.0) || (z[j] <= T::zero() && alpha == T::zero()) {
                    x[j] = T::zero();
                    passive[j] = false;
                    removed = true;
                }
            }
            if !removed || !passive.iter().any(|&p| p) {
                break;
            }
        }
    }

    let w = dual(&x);
    let kkt_residual = (0..n).fold(T::zero(), |m, i| {
        let g = -w[i];
        m.max((-g).max(T::zero())).max((x[i] * g).abs())
    });
    Ok(NnlsSolution { x, iterations, kkt_residual })
}
