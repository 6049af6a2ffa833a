//! Treatment-effect estimators for a main study with a validation subsample.
//!
//! Component estimators return an [`EstimateReport`] carrying per-row
//! influence values; [`combine_control_variates`] turns three of them into
//! the variance-reduced [`ControlVariateReport`].

mod aipw;
mod bootstrap;
mod control_variates;
mod data;
mod generalization;
mod ipsw;
mod mime;
mod nuisance;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::numerics::{ClipBounds, IrlsConfig, LearnerKind, NumericsError};
use crate::scalar::{mean, pairwise_sum, variance, Scalar};

pub use aipw::{estimate_aipw_main_ep, estimate_naive, estimate_oracle, estimate_validation_only};
pub use bootstrap::{bootstrap_gamma_v, bootstrap_moments, BootstrapMoments};
pub use control_variates::{
    combine_control_variates, combine_ipsw, control_variate_from_moments, estimate_components,
    estimate_control_variates, CvComponents, CvEstimate, VarianceSpec,
};
pub use data::TwoPhaseDataset;
pub use generalization::{estimate_generalization, ExposureSource};
pub use ipsw::{
    estimate_ipsw_control_variate, estimate_ipsw_cv, estimate_ipsw_val, ipsw_control_summands, ipsw_val_summands,
    IpswEstimate, KappaModel,
};
pub use mime::{estimate_mi_pmm, rubin_combine, MiConfig, RubinPooled};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error("{role} model: {source}")]
    Numerics { role: &'static str, source: NumericsError },
    #[error("positivity violation: {what} clipped on {clipped} of {rows} rows")]
    PositivityViolation { what: &'static str, clipped: usize, rows: usize },
    #[error("validation sample has {n_val} rows, at least {required} needed")]
    InsufficientValidation { n_val: usize, required: usize },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sampling probabilities are required but the dataset has none")]
    MissingKappa,
    #[error("reports are not aligned: {0}")]
    MisalignedReports(String),
    #[error("bootstrap failed on {failed} of {replicates} resamples")]
    BootstrapFailure { failed: usize, replicates: usize },
    #[error("{n_val} validated rows cannot supply {donors} donors plus one")]
    DonorPoolExhausted { n_val: usize, donors: usize },
    #[error("true exposure is not available on every row")]
    MissingTrueExposure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorTag {
    /// AIPW with the true exposure on every row.
    Oracle,
    /// AIPW with the error-prone exposure in place of the true one.
    Naive,
    /// AIPW on the validation rows alone, ignoring how they were selected.
    ValidationOnly,
    Val,
    ValEp,
    MainEp,
    Cv,
    IpswVal,
    IpswControl,
    IpswCv,
    MiPmm,
}

impl EstimatorTag {
    pub const ALL: [EstimatorTag; 11] = [
        EstimatorTag::Oracle,
        EstimatorTag::Naive,
        EstimatorTag::ValidationOnly,
        EstimatorTag::Val,
        EstimatorTag::ValEp,
        EstimatorTag::MainEp,
        EstimatorTag::Cv,
        EstimatorTag::IpswVal,
        EstimatorTag::IpswControl,
        EstimatorTag::IpswCv,
        EstimatorTag::MiPmm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorTag::Oracle => "oracle",
            EstimatorTag::Naive => "naive",
            EstimatorTag::ValidationOnly => "validation-only",
            EstimatorTag::Val => "val",
            EstimatorTag::ValEp => "val-ep",
            EstimatorTag::MainEp => "main-ep",
            EstimatorTag::Cv => "cv",
            EstimatorTag::IpswVal => "ipsw-val",
            EstimatorTag::IpswControl => "ipsw-control",
            EstimatorTag::IpswCv => "ipsw-cv",
            EstimatorTag::MiPmm => "mi-pmm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }
}

impl std::fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a report's standard error came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeSource {
    /// `sqrt(var(influence) / n)`; Wald intervals use normal quantiles.
    Influence,
    /// Rubin's rules; intervals use a t quantile with these degrees of freedom.
    Rubin { df: f64 },
}

/// Learner weights and clipping for one fitted nuisance model.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceSummary<T> {
    pub name: String,
    pub learner_weights: Vec<(LearnerKind, T)>,
    pub fallback_used: bool,
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport<T> {
    pub tag: EstimatorTag,
    pub estimate: T,
    /// Centered per-row influence values.
    pub influence: Vec<T>,
    pub se: T,
    pub se_source: SeSource,
    pub nuisance: Vec<NuisanceSummary<T>>,
}

impl<T: Scalar> EstimateReport<T> {
    /// Estimate = mean of the row-wise summands; influence = summands − estimate.
    pub fn from_summands(tag: EstimatorTag, summands: Vec<T>, nuisance: Vec<NuisanceSummary<T>>) -> Self {
        let estimate = mean(&summands);
        let influence: Vec<T> = summands.into_iter().map(|v| v - estimate).collect();
        let se = (variance(&influence) / T::from_count(influence.len())).sqrt();
        Self { tag, estimate, influence, se, se_source: SeSource::Influence, nuisance }
    }

    pub fn n(&self) -> usize {
        self.influence.len()
    }

    pub fn with_tag(mut self, tag: EstimatorTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn clipped(&self) -> usize {
        self.nuisance.iter().map(|s| s.clipped).sum()
    }

    /// Two-sided interval at `level` (e.g. 0.95).
    pub fn ci(&self, level: f64) -> (T, T) {
        let q = match self.se_source {
            SeSource::Influence => normal_quantile(level),
            SeSource::Rubin { df } => t_quantile(level, df),
        };
        let half = self.se * T::lit(q);
        (self.estimate - half, self.estimate + half)
    }

    pub fn influence_mean(&self) -> T {
        pairwise_sum(&self.influence) / T::from_count(self.n())
    }
}

pub(crate) fn normal_quantile(level: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + level / 2.0)
}

pub(crate) fn t_quantile(level: f64, df: f64) -> f64 {
    if !df.is_finite() || df > 1e7 {
        return normal_quantile(level);
    }
    StudentsT::new(0.0, 1.0, df).expect("positive df").inverse_cdf(0.5 + level / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceMethod {
    Influence,
    Bootstrap { replicates: usize, failed: usize },
}

impl VarianceMethod {
    pub fn name(self) -> &'static str {
        match self {
            VarianceMethod::Influence => "influence",
            VarianceMethod::Bootstrap { .. } => "bootstrap",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlVariateReport<T> {
    pub tau_cv: T,
    pub tau_val: T,
    pub tau_val_ep: T,
    pub tau_main_ep: T,
    pub v_hat: T,
    pub gamma_hat: T,
    pub v_big_hat: T,
    pub b_hat: T,
    pub se: T,
    /// Standard error of `tau_val` on the same variance scale.
    pub se_val: T,
    pub ci_low: T,
    pub ci_high: T,
    pub level: f64,
    pub n: usize,
    pub variance_method: VarianceMethod,
    pub degenerate_cv: bool,
}

/// Threshold below which `V̂ / v̂` is treated as a degenerate control variate.
pub const DEGENERATE_CV_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceConfig<T> {
    pub outcome_library: Vec<LearnerKind>,
    pub propensity_library: Vec<LearnerKind>,
    pub sampling_library: Vec<LearnerKind>,
    pub folds: usize,
    pub clip: ClipBounds<T>,
    pub irls: IrlsConfig<T>,
    /// Fraction of rows whose probability may be clipped before the fit is
    /// rejected as an overlap failure.
    pub positivity_threshold: f64,
    /// K-fold cross-fitting of every nuisance; `None` fits in-sample.
    pub cross_fit_folds: Option<usize>,
    /// Reuse the full-data error-prone outcome model in the error-prone
    /// validation estimator instead of refitting on validated rows.
    pub share_error_prone_outcome: bool,
    pub min_validation: usize,
    pub seed: u64,
}

impl<T: Scalar> Default for NuisanceConfig<T> {
    fn default() -> Self {
        Self {
            outcome_library: LearnerKind::ALL.to_vec(),
            propensity_library: LearnerKind::ALL.to_vec(),
            sampling_library: LearnerKind::ALL.to_vec(),
            folds: 10,
            clip: ClipBounds::default(),
            irls: IrlsConfig::default(),
            positivity_threshold: 0.25,
            cross_fit_folds: None,
            share_error_prone_outcome: false,
            min_validation: 20,
            seed: 0,
        }
    }
}

impl<T: Scalar> NuisanceConfig<T> {
    pub fn validate(&self) -> Result<(), EstimationError> {
        let bad = |m: &str| Err(EstimationError::InvalidConfig(m.to_string()));
        if self.outcome_library.is_empty() || self.propensity_library.is_empty() || self.sampling_library.is_empty() {
            return bad("learner libraries must be non-empty");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.positivity_threshold) {
            return bad("positivity_threshold must lie in [0, 1]");
        }
        if matches!(self.cross_fit_folds, Some(k) if k < 2) {
            return bad("cross_fit_folds must be at least 2");
        }
        if self.min_validation < self.folds {
            return bad("min_validation must be at least the number of folds");
        }
        Ok(())
    }
}
