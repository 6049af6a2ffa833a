use crate::estimators::EstimationError;
use crate::numerics::DesignMatrix;
use crate::scalar::Scalar;

/// Main-study sample with a validation subsample.
///
/// Every row carries the outcome, the error-prone exposure, the validation
/// indicator and covariates; the true exposure is present exactly on
/// validated rows. Known sampling probabilities are optional.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseDataset<T> {
    y: Vec<T>,
    a_star: Vec<bool>,
    s: Vec<bool>,
    a: Vec<Option<bool>>,
    x: DesignMatrix<T>,
    kappa: Option<Vec<T>>,
}

impl<T: Scalar> TwoPhaseDataset<T> {
    pub fn new(
        y: Vec<T>,
        a_star: Vec<bool>,
        s: Vec<bool>,
        a: Vec<Option<bool>>,
        x: DesignMatrix<T>,
        kappa: Option<Vec<T>>,
    ) -> Result<Self, EstimationError> {
        let n = y.len();
        if n == 0 {
            return Err(EstimationError::InvalidData("dataset has no rows".into()));
        }
        if a_star.len() != n || s.len() != n || a.len() != n || x.rows() != n {
            return Err(EstimationError::InvalidData("column lengths disagree".into()));
        }
        if x.has_intercept() {
            return Err(EstimationError::InvalidData("covariates are stored without an intercept column".into()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(EstimationError::InvalidData(format!("non-finite outcome at row {i}")));
        }
        if let Some(i) = (0..n).find(|&i| s[i] != a[i].is_some()) {
            return Err(EstimationError::InvalidData(format!(
                "row {i}: true exposure must be present exactly when s = 1"
            )));
        }
        if let Some(k) = &kappa {
            if k.len() != n {
                return Err(EstimationError::InvalidData("kappa length mismatch".into()));
            }
            if let Some(i) = k.iter().position(|&v| !(v > T::zero() && v <= T::one())) {
                return Err(EstimationError::InvalidData(format!("kappa at row {i} is {}, outside (0, 1]", k[i])));
            }
        }
        Ok(Self { y, a_star, s, a, x, kappa })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_val(&self) -> usize {
        self.s.iter().filter(|&&s| s).count()
    }

    pub fn y(&self) -> &[T] {
        &self.y
    }

    pub fn a_star(&self) -> &[bool] {
        &self.a_star
    }

    pub fn s(&self) -> &[bool] {
        &self.s
    }

    pub fn a(&self) -> &[Option<bool>] {
        &self.a
    }

    /// Covariates, without intercept.
    pub fn x(&self) -> &DesignMatrix<T> {
        &self.x
    }

    pub fn kappa(&self) -> Option<&[T]> {
        self.kappa.as_deref()
    }

    pub fn validation_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.s[i]).collect()
    }

    /// Rows `idx` (repeats allowed), in order.
    pub fn resample(&self, idx: &[usize]) -> Self {
        Self {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            a_star: idx.iter().map(|&i| self.a_star[i]).collect(),
            s: idx.iter().map(|&i| self.s[i]).collect(),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            x: self.x.select_rows(idx),
            kappa: self.kappa.as_ref().map(|k| idx.iter().map(|&i| k[i]).collect()),
        }
    }

    /// Same data with the true exposure revealed everywhere (oracle view).
    pub fn with_full_exposure(&self, a_full: &[bool]) -> Result<Self, EstimationError> {
        if a_full.len() != self.n() {
            return Err(EstimationError::InvalidData("a_full length mismatch".into()));
        }
        Self::new(
            self.y.clone(),
            self.a_star.clone(),
            vec![true; self.n()],
            a_full.iter().map(|&v| Some(v)).collect(),
            self.x.clone(),
            None,
        )
    }

    /// Replaces the true exposure on unvalidated rows (imputation), keeping `s`.
    pub(crate) fn completed_exposure(&self, imputed: &[bool]) -> Vec<bool> {
        (0..self.n()).map(|i| self.a[i].unwrap_or(imputed[i])).collect()
    }
}
