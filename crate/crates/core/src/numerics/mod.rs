//! Nuisance-model fitting: GLMs, non-negative least squares and the
//! cross-validated stacking ensemble built from them.

mod design;
pub mod glm;
pub mod linalg;
pub mod nnls;
pub mod stacking;

use thiserror::Error;

use crate::scalar::Scalar;

pub use design::{DesignMatrix, INTERCEPT};
pub use glm::{fit_glm, Family, GlmDiagnostics, GlmFit, IrlsConfig};
pub use linalg::Matrix;
pub use nnls::{nnls, NnlsSolution};
pub use stacking::{
    fit_single_learner, fit_super_learner, FittedLearner, LearnerKind, LearnerModel, LearnerSpec, NuisanceFit,
    StackingOptions,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("IRLS did not converge after {iterations} iterations (max |score| = {score_norm:.3e})")]
    NonConvergence { iterations: usize, score_norm: f64 },
    #[error("normal equations are singular")]
    SingularDesign,
    #[error("binomial response is constant and the design has no intercept")]
    DegenerateResponse,
    #[error("design columns [{found}] do not match training schema [{expected}]")]
    SchemaMismatch { expected: String, found: String },
    #[error("super learner failed: {0}")]
    SuperLearnerFailure(String),
    #[error("NNLS exceeded {0} iterations")]
    MaxIterations(usize),
}

/// Symmetric truncation applied to estimated probabilities before they are
/// used in a denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipBounds<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> Default for ClipBounds<T> {
    fn default() -> Self {
        Self { lo: T::lit(0.01), hi: T::lit(0.99) }
    }
}

impl<T: Scalar> ClipBounds<T> {
    pub fn new(lo: T, hi: T) -> Result<Self, NumericsError> {
        if !(lo > T::zero() && lo < hi && hi < T::one()) {
            return Err(NumericsError::InvalidInput(format!("clip bounds need 0 < lo < hi < 1, got [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    #[inline]
    pub fn apply(&self, p: T) -> T {
        p.max(self.lo).min(self.hi)
    }
}
