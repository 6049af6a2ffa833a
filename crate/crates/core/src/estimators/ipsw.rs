//! Inverse-probability-of-sampling weighted estimators for validation
//! samples drawn on `Z = (X, A*, Y)`.

use crate::estimators::aipw::{aipw_summands, dr_summand, fit_aipw};
use crate::estimators::control_variates::combine_ipsw;
use crate::estimators::generalization::check_validation;
use crate::estimators::nuisance::{clip_probabilities, fit_outcome, fit_probability, indicator, Role};
use crate::estimators::{
    ControlVariateReport, EstimateReport, EstimationError, EstimatorTag, NuisanceConfig, NuisanceSummary,
    TwoPhaseDataset,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KappaModel {
    /// Use the sampling probabilities stored with the dataset.
    Known,
    /// Fit `P(S = 1 | X, A*, Y)` on all rows.
    Estimated,
}

fn sampling_probabilities<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    model: KappaModel,
    cfg: &NuisanceConfig<T>,
) -> Result<(Vec<T>, Option<NuisanceSummary<T>>), EstimationError> {
    match model {
        KappaModel::Known => {
            let mut k = data.kappa().ok_or(EstimationError::MissingKappa)?.to_vec();
            let mut clipped = 0;
            for v in k.iter_mut() {
                if *v < cfg.clip.lo {
                    *v = cfg.clip.lo;
                    clipped += 1;
                }
            }
            if clipped as f64 > cfg.positivity_threshold * k.len() as f64 {
                return Err(EstimationError::PositivityViolation {
                    what: "sampling probability",
                    clipped,
                    rows: k.len(),
                });
            }
            Ok((k, None))
        }
        KappaModel::Estimated => {
            let rows: Vec<usize> = (0..data.n()).collect();
            let extra = [("a_star", indicator(data.a_star())), ("y", data.y().to_vec())];
            let (mut k, mut summary) =
                fit_probability(cfg, Role::Sampling, "kappa-z", data.x(), &extra, data.s(), &rows, None)?;
            summary.clipped = clip_probabilities(cfg, "sampling probability", &mut k, None)?;
            Ok((k, Some(summary)))
        }
    }
}

fn ipsw_val_with<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    kappa: &[T],
    cfg: &NuisanceConfig<T>,
) -> Result<(Vec<T>, Vec<NuisanceSummary<T>>), EstimationError> {
    let rows = check_validation(data, cfg)?;
    let weights: Vec<T> = rows.iter().map(|&i| T::one() / kappa[i]).collect();
    let weights = (!weights.iter().all(|&w| w == T::one())).then_some(weights);
    let a: Vec<bool> = data.a().iter().map(|v| v.unwrap_or(false)).collect();
    let outcome = fit_outcome(cfg, "m-ipsw", data.x(), data.y(), &a, &rows, weights.as_deref())?;
    let (mut g, mut g_summary) =
        fit_probability(cfg, Role::Propensity, "g-ipsw", data.x(), &[], &a, &rows, weights.as_deref())?;
    g_summary.clipped = clip_probabilities(cfg, "propensity score", &mut g, Some(data.s()))?;
    let summands = ipsw_val_summands(data.s(), kappa, &a, data.y(), &outcome.mu1, &outcome.mu0, &g);
    Ok((summands, vec![outcome.summary, g_summary]))
}

/// `S/κ · {m₁ − m₀ + (A/g − (1−A)/(1−g)) (Y − m_A)}` row by row; `a` is
/// ignored where `s` is false.
#[allow(clippy::too_many_arguments)]
pub fn ipsw_val_summands<T: Scalar>(
    s: &[bool],
    kappa: &[T],
    a: &[bool],
    y: &[T],
    m1: &[T],
    m0: &[T],
    g: &[T],
) -> Vec<T> {
    (0..s.len())
        .map(|i| if s[i] { dr_summand(T::one(), a[i], y[i], m1[i], m0[i], g[i]) / kappa[i] } else { T::zero() })
        .collect()
}

/// Weighted AIPW on the validated rows with weights `S / κ(Z)`.
pub fn estimate_ipsw_val<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    kappa_model: KappaModel,
    cfg: &NuisanceConfig<T>,
) -> Result<EstimateReport<T>, EstimationError> {
    check_validation(data, cfg)?;
    let (kappa, ks) = sampling_probabilities(data, kappa_model, cfg)?;
    let (summands, mut nuisance) = ipsw_val_with(data, &kappa, cfg)?;
    nuisance.extend(ks);
    Ok(EstimateReport::from_summands(EstimatorTag::IpswVal, summands, nuisance))
}

/// `(S/κ − 1) · {m₁ − m₀ + (A*/g − (1−A*)/(1−g)) (Y − m_{A*})}` row by row.
#[allow(clippy::too_many_arguments)]
pub fn ipsw_control_summands<T: Scalar>(
    s: &[bool],
    kappa: &[T],
    a_star: &[bool],
    y: &[T],
    m1: &[T],
    m0: &[T],
    g: &[T],
) -> Vec<T> {
    (0..s.len())
        .map(|i| {
            let w = if s[i] { T::one() / kappa[i] } else { T::zero() } - T::one();
            w * dr_summand(T::one(), a_star[i], y[i], m1[i], m0[i], g[i])
        })
        .collect()
}

fn control_with<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    kappa: &[T],
    cfg: &NuisanceConfig<T>,
) -> Result<(EstimateReport<T>, EstimateReport<T>), EstimationError> {
    let fits = fit_aipw(data, data.a_star(), cfg, ("m-ep", "g-ep"))?;
    let summands = ipsw_control_summands(data.s(), kappa, data.a_star(), data.y(), &fits.mu1, &fits.mu0, &fits.ps);
    let control = EstimateReport::from_summands(EstimatorTag::IpswControl, summands, fits.nuisance.clone());
    let main_ep =
        EstimateReport::from_summands(EstimatorTag::MainEp, aipw_summands(data, data.a_star(), &fits), fits.nuisance);
    Ok((control, main_ep))
}

/// The mean-zero weighted error-prone statistic used as control variate.
pub fn estimate_ipsw_control_variate<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    kappa_model: KappaModel,
    cfg: &NuisanceConfig<T>,
) -> Result<EstimateReport<T>, EstimationError> {
    cfg.validate()?;
    let (kappa, _) = sampling_probabilities(data, kappa_model, cfg)?;
    Ok(control_with(data, &kappa, cfg)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpswEstimate<T> {
    pub report: ControlVariateReport<T>,
    pub val: EstimateReport<T>,
    pub control: EstimateReport<T>,
    pub main_ep: EstimateReport<T>,
}

/// Weighted validation estimator adjusted by the weighted control variate.
pub fn estimate_ipsw_cv<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    kappa_model: KappaModel,
    cfg: &NuisanceConfig<T>,
    level: f64,
) -> Result<IpswEstimate<T>, EstimationError> {
    check_validation(data, cfg)?;
    let (kappa, ks) = sampling_probabilities(data, kappa_model, cfg)?;
    let (summands, mut nuisance) = ipsw_val_with(data, &kappa, cfg)?;
    nuisance.extend(ks);
    let val = EstimateReport::from_summands(EstimatorTag::IpswVal, summands, nuisance);
    let (control, main_ep) = control_with(data, &kappa, cfg)?;
    let report = combine_ipsw(&val, &control, level)?;
    Ok(IpswEstimate { report, val, control, main_ep })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_control_rows() {
        // Row 1: S = 1, κ = 0.5 → factor 1; A* = 1, g = 0.5, y = 2, m = (1.5, 0.5):
        //   1 + (1/0.5)(2 − 1.5) = 2.
        // Row 2: S = 0, κ = 0.5 → factor −1; A* = 0, g = 0.25, y = 1, m = (2, 0):
        //   2 − (1/0.75)(1 − 0) = 2/3, times −1.
        // Row 3: S = 1, κ = 1 → factor 0.
        let out = ipsw_control_summands(
            &[true, false, true],
            &[0.5f64, 0.5, 1.0],
            &[true, false, true],
            &[2.0, 1.0, 5.0],
            &[1.5, 2.0, 3.0],
            &[0.5, 0.0, 1.0],
            &[0.5, 0.25, 0.4],
        );
        assert_eq!(out[0], 2.0);
        assert!((out[1] + 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(out[2], 0.0);
    }

    #[test]
    fn two_row_horvitz_thompson() {
        // Row 1 validated with κ = 0.5: contrast 1 + (1/0.5)(3 − 2) = 3, weight 2.
        let out = ipsw_val_summands(
            &[true, false],
            &[0.5f64, 0.5],
            &[true, false],
            &[3.0, 9.0],
            &[2.0, 5.0],
            &[1.0, 0.0],
            &[0.5, 0.5],
        );
        assert_eq!(out, vec![6.0, 0.0]);
    }

    #[test]
    fn unit_sampling_probability_zeroes_control() {
        let out = ipsw_control_summands(
            &[true; 3],
            &[1.0; 3],
            &[true, false, true],
            &[1.0, 2.0, 3.0],
            &[1.0; 3],
            &[0.0; 3],
            &[0.5; 3],
        );
        assert!(out.iter().all(|&v| v == 0.0));
    }
}
