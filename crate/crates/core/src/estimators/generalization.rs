//! Doubly-robust generalization from the validation sample to the full
//! sample: outcome and exposure models fit on validated rows, selection
//! model fit on all rows.

use crate::estimators::aipw::dr_summand;
use crate::estimators::nuisance::{clip_probabilities, fit_outcome, fit_probability, Role};
use crate::estimators::{
    EstimateReport, EstimationError, EstimatorTag, NuisanceConfig, NuisanceSummary, TwoPhaseDataset,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExposureSource {
    /// True exposure `A` (validated rows only).
    Validated,
    /// Error-prone exposure `A*` restricted to the validated rows.
    ErrorProne,
}

/// `P(S = 1 | X)` on every row. Exactly 1 without fitting when every row
/// is validated.
pub(crate) fn selection_scores<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    cfg: &NuisanceConfig<T>,
) -> Result<(Vec<T>, Option<NuisanceSummary<T>>), EstimationError> {
    if data.s().iter().all(|&s| s) {
        return Ok((vec![T::one(); data.n()], None));
    }
    let rows: Vec<usize> = (0..data.n()).collect();
    let (mut k, mut summary) = fit_probability(cfg, Role::Sampling, "kappa", data.x(), &[], data.s(), &rows, None)?;
    summary.clipped = clip_probabilities(cfg, "sampling score", &mut k, None)?;
    Ok((k, Some(summary)))
}

pub(crate) fn check_validation<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    cfg: &NuisanceConfig<T>,
) -> Result<Vec<usize>, EstimationError> {
    cfg.validate()?;
    let rows = data.validation_rows();
    if rows.len() < cfg.min_validation {
        return Err(EstimationError::InsufficientValidation { n_val: rows.len(), required: cfg.min_validation });
    }
    Ok(rows)
}

pub(crate) fn exposure_for<T: Scalar>(data: &TwoPhaseDataset<T>, source: ExposureSource) -> Vec<bool> {
    match source {
        ExposureSource::Validated => data.a().iter().map(|a| a.unwrap_or(false)).collect(),
        ExposureSource::ErrorProne => data.a_star().to_vec(),
    }
}

/// Generalization estimator given selection scores. `outcome` overrides the
/// validated-row outcome model with precomputed `(μ₁, μ₀)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn generalization_with<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    exposure: &[bool],
    kappa: &[T],
    kappa_summary: Option<&NuisanceSummary<T>>,
    cfg: &NuisanceConfig<T>,
    tag: EstimatorTag,
    names: (&str, &str),
    outcome: Option<(&[T], &[T], &NuisanceSummary<T>)>,
) -> Result<EstimateReport<T>, EstimationError> {
    let rows = check_validation(data, cfg)?;
    let (mu1, mu0, outcome_summary) = match outcome {
        Some((m1, m0, s)) => (m1.to_vec(), m0.to_vec(), s.clone()),
        None => {
            let f = fit_outcome(cfg, names.0, data.x(), data.y(), exposure, &rows, None)?;
            (f.mu1, f.mu0, f.summary)
        }
    };
    let (mut ps, mut ps_summary) =
        fit_probability(cfg, Role::Propensity, names.1, data.x(), &[], exposure, &rows, None)?;
    ps_summary.clipped = clip_probabilities(cfg, "propensity score", &mut ps, Some(data.s()))?;

    let summands: Vec<T> = (0..data.n())
        .map(|i| {
            let f = if data.s()[i] { T::one() / kappa[i] } else { T::zero() };
            dr_summand(f, exposure[i], data.y()[i], mu1[i], mu0[i], ps[i])
        })
        .collect();
    let mut nuisance = vec![outcome_summary, ps_summary];
    nuisance.extend(kappa_summary.cloned());
    Ok(EstimateReport::from_summands(tag, summands, nuisance))
}

/// Generalization estimator with the true or the error-prone exposure.
pub fn estimate_generalization<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    source: ExposureSource,
    cfg: &NuisanceConfig<T>,
) -> Result<EstimateReport<T>, EstimationError> {
    check_validation(data, cfg)?;
    let (kappa, ks) = selection_scores(data, cfg)?;
    let exposure = exposure_for(data, source);
    match source {
        ExposureSource::Validated => {
            generalization_with(data, &exposure, &kappa, ks.as_ref(), cfg, EstimatorTag::Val, ("mu", "pi"), None)
        }
        ExposureSource::ErrorProne if cfg.share_error_prone_outcome => {
            let all: Vec<usize> = (0..data.n()).collect();
            let m = fit_outcome(cfg, "m-ep", data.x(), data.y(), &exposure, &all, None)?;
            generalization_with(
                data,
                &exposure,
                &kappa,
                ks.as_ref(),
                cfg,
                EstimatorTag::ValEp,
                ("mu-ep", "pi-ep"),
                Some((&m.mu1, &m.mu0, &m.summary)),
            )
        }
        ExposureSource::ErrorProne => generalization_with(
            data,
            &exposure,
            &kappa,
            ks.as_ref(),
            cfg,
            EstimatorTag::ValEp,
            ("mu-ep", "pi-ep"),
            None,
        ),
    }
}
