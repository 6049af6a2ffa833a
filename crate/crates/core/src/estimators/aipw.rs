//! Full-data AIPW: oracle, naive (error-prone exposure) and the
//! validation-only variant that ignores selection.

use crate::estimators::nuisance::{clip_probabilities, fit_outcome, fit_probability, Role};
use crate::estimators::{
    EstimateReport, EstimationError, EstimatorTag, NuisanceConfig, NuisanceSummary, TwoPhaseDataset,
};
use crate::scalar::Scalar;

/// `(μ₁ − μ₀) + f · (a/p − (1−a)/(1−p)) · (y − μ_a)`.
///
/// Every doubly-robust summand in the crate goes through this one function;
/// `f` is 1 for plain AIPW and the selection weight otherwise.
#[inline]
pub(crate) fn dr_summand<T: Scalar>(f: T, a: bool, y: T, mu1: T, mu0: T, p: T) -> T {
    let contrast = mu1 - mu0;
    let (ipw, mu_a) = if a { (T::one() / p, mu1) } else { (-(T::one() / (T::one() - p)), mu0) };
    contrast + f * (ipw * (y - mu_a))
}

/// Outcome and exposure models fit on every row.
#[derive(Debug, Clone)]
pub(crate) struct AipwFits<T> {
    pub mu1: Vec<T>,
    pub mu0: Vec<T>,
    pub ps: Vec<T>,
    pub nuisance: Vec<NuisanceSummary<T>>,
}

pub(crate) fn fit_aipw<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    exposure: &[bool],
    cfg: &NuisanceConfig<T>,
    names: (&str, &str),
) -> Result<AipwFits<T>, EstimationError> {
    cfg.validate()?;
    let rows: Vec<usize> = (0..data.n()).collect();
    let outcome = fit_outcome(cfg, names.0, data.x(), data.y(), exposure, &rows, None)?;
    let (mut ps, mut ps_summary) =
        fit_probability(cfg, Role::Propensity, names.1, data.x(), &[], exposure, &rows, None)?;
    ps_summary.clipped = clip_probabilities(cfg, "propensity score", &mut ps, None)?;
    Ok(AipwFits { mu1: outcome.mu1, mu0: outcome.mu0, ps, nuisance: vec![outcome.summary, ps_summary] })
}

pub(crate) fn aipw_summands<T: Scalar>(data: &TwoPhaseDataset<T>, exposure: &[bool], fits: &AipwFits<T>) -> Vec<T> {
    (0..data.n())
        .map(|i| dr_summand(T::one(), exposure[i], data.y()[i], fits.mu1[i], fits.mu0[i], fits.ps[i]))
        .collect()
}

fn aipw<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    exposure: &[bool],
    cfg: &NuisanceConfig<T>,
    tag: EstimatorTag,
) -> Result<EstimateReport<T>, EstimationError> {
    let fits = fit_aipw(data, exposure, cfg, ("m", "g"))?;
    Ok(EstimateReport::from_summands(tag, aipw_summands(data, exposure, &fits), fits.nuisance))
}

/// AIPW with the error-prone exposure on the full data.
pub fn estimate_aipw_main_ep<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    cfg: &NuisanceConfig<T>,
) -> Result<EstimateReport<T>, EstimationError> {
    aipw(data, data.a_star(), cfg, EstimatorTag::MainEp)
}

/// Same computation as [`estimate_aipw_main_ep`], labelled as the naive comparator.
pub fn estimate_naive<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    cfg: &NuisanceConfig<T>,
) -> Result<EstimateReport<T>, EstimationError> {
    aipw(data, data.a_star(), cfg, EstimatorTag::Naive)
}

/// AIPW with the true exposure on every row; every row must be validated.
pub fn estimate_oracle<T: Scalar>(
    data_with_full_a: &TwoPhaseDataset<T>,
    cfg: &NuisanceConfig<T>,
) -> Result<EstimateReport<T>, EstimationError> {
    let a: Option<Vec<bool>> = data_with_full_a.a().iter().copied().collect();
    let a = a.ok_or(EstimationError::MissingTrueExposure)?;
    aipw(data_with_full_a, &a, cfg, EstimatorTag::Oracle)
}

/// AIPW on the validated rows only, as if they were the whole sample.
pub fn estimate_validation_only<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    cfg: &NuisanceConfig<T>,
) -> Result<EstimateReport<T>, EstimationError> {
    let rows = data.validation_rows();
    if rows.len() < cfg.min_validation {
        return Err(EstimationError::InsufficientValidation { n_val: rows.len(), required: cfg.min_validation });
    }
    let sub = data.resample(&rows);
    let a: Vec<bool> = sub.a().iter().map(|v| v.expect("validated row")).collect();
    aipw(&sub, &a, cfg, EstimatorTag::ValidationOnly)
}
