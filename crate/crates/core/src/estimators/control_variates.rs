use crate::estimators::aipw::{aipw_summands, fit_aipw};
use crate::estimators::bootstrap::bootstrap_gamma_v;
use crate::estimators::generalization::{
    check_validation, exposure_for, generalization_with, selection_scores, ExposureSource,
};
use crate::estimators::{
    normal_quantile, ControlVariateReport, EstimateReport, EstimationError, EstimatorTag, NuisanceConfig,
    TwoPhaseDataset, VarianceMethod, DEGENERATE_CV_RATIO,
};
use crate::scalar::{covariance, variance, Scalar};

/// The three component estimators of the control-variates estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct CvComponents<T> {
    pub val: EstimateReport<T>,
    pub val_ep: EstimateReport<T>,
    pub main_ep: EstimateReport<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceSpec {
    Influence,
    Bootstrap { replicates: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvEstimate<T> {
    pub report: ControlVariateReport<T>,
    pub components: CvComponents<T>,
}

/// Fits every nuisance once and returns the three component reports.
pub fn estimate_components<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    cfg: &NuisanceConfig<T>,
) -> Result<CvComponents<T>, EstimationError> {
    check_validation(data, cfg)?;
    let (kappa, ks) = selection_scores(data, cfg)?;

    let main_fits = fit_aipw(data, data.a_star(), cfg, ("m-ep", "g-ep"))?;
    let main_ep = EstimateReport::from_summands(
        EstimatorTag::MainEp,
        aipw_summands(data, data.a_star(), &main_fits),
        main_fits.nuisance.clone(),
    );

    let a = exposure_for(data, ExposureSource::Validated);
    let val = generalization_with(data, &a, &kappa, ks.as_ref(), cfg, EstimatorTag::Val, ("mu", "pi"), None)?;

    let shared = cfg
        .share_error_prone_outcome
        .then(|| (main_fits.mu1.as_slice(), main_fits.mu0.as_slice(), &main_fits.nuisance[0]));
    let val_ep = generalization_with(
        data,
        data.a_star(),
        &kappa,
        ks.as_ref(),
        cfg,
        EstimatorTag::ValEp,
        ("mu-ep", "pi-ep"),
        shared,
    )?;
    Ok(CvComponents { val, val_ep, main_ep })
}

/// Applies the control-variate adjustment given the variance components on
/// the per-observation scale.
#[allow(clippy::too_many_arguments)]
pub fn control_variate_from_moments<T: Scalar>(
    tau_val: T,
    tau_val_ep: T,
    tau_main_ep: T,
    v_hat: T,
    gamma_hat: T,
    v_big_hat: T,
    n: usize,
    variance_method: VarianceMethod,
    level: f64,
) -> ControlVariateReport<T> {
    let nf = T::from_count(n);
    let degenerate_cv = !(v_big_hat > T::lit(DEGENERATE_CV_RATIO) * v_hat);
    let b_hat = if degenerate_cv { T::zero() } else { gamma_hat / v_big_hat };
    let tau_cv = tau_val - b_hat * (tau_val_ep - tau_main_ep);
    let reduction = if degenerate_cv { T::zero() } else { gamma_hat * gamma_hat / v_big_hat };
    let se = ((v_hat - reduction).max(T::zero()) / nf).sqrt();
    let se_val = (v_hat / nf).sqrt();
    let half = se * T::lit(normal_quantile(level));
    ControlVariateReport {
        tau_cv,
        tau_val,
        tau_val_ep,
        tau_main_ep,
        v_hat,
        gamma_hat,
        v_big_hat,
        b_hat,
        se,
        se_val,
        ci_low: tau_cv - half,
        ci_high: tau_cv + half,
        level,
        n,
        variance_method,
        degenerate_cv,
    }
}

/// Influence-function control-variates combination of three aligned reports.
pub fn combine_control_variates<T: Scalar>(
    val: &EstimateReport<T>,
    val_ep: &EstimateReport<T>,
    main_ep: &EstimateReport<T>,
    level: f64,
) -> Result<ControlVariateReport<T>, EstimationError> {
    let n = val.n();
    if val_ep.n() != n || main_ep.n() != n {
        return Err(EstimationError::MisalignedReports(format!(
            "influence lengths {}, {}, {}",
            n,
            val_ep.n(),
            main_ep.n()
        )));
    }
    if n < 2 {
        return Err(EstimationError::MisalignedReports("at least two rows needed".into()));
    }
    let diff: Vec<T> = val_ep.influence.iter().zip(&main_ep.influence).map(|(&a, &b)| a - b).collect();
    Ok(control_variate_from_moments(
        val.estimate,
        val_ep.estimate,
        main_ep.estimate,
        variance(&val.influence),
        covariance(&val.influence, &diff),
        variance(&diff),
        n,
        VarianceMethod::Influence,
        level,
    ))
}

/// Combination for a mean-zero control variate such as the weighted
/// error-prone IPSW statistic.
pub fn combine_ipsw<T: Scalar>(
    val: &EstimateReport<T>,
    control: &EstimateReport<T>,
    level: f64,
) -> Result<ControlVariateReport<T>, EstimationError> {
    let n = val.n();
    if control.n() != n || n < 2 {
        return Err(EstimationError::MisalignedReports(format!("influence lengths {n}, {}", control.n())));
    }
    Ok(control_variate_from_moments(
        val.estimate,
        control.estimate,
        T::zero(),
        variance(&val.influence),
        covariance(&val.influence, &control.influence),
        variance(&control.influence),
        n,
        VarianceMethod::Influence,
        level,
    ))
}

/// Full pipeline: component estimators, then the combination with
/// influence-function or bootstrap variance components.
pub fn estimate_control_variates<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    cfg: &NuisanceConfig<T>,
    variance_spec: VarianceSpec,
    level: f64,
) -> Result<CvEstimate<T>, EstimationError> {
    let components = estimate_components(data, cfg)?;
    let report = match variance_spec {
        VarianceSpec::Influence => {
            combine_control_variates(&components.val, &components.val_ep, &components.main_ep, level)?
        }
        VarianceSpec::Bootstrap { replicates, seed } => {
            let original = [components.val.estimate, components.val_ep.estimate, components.main_ep.estimate];
            let recipe = |d: &TwoPhaseDataset<T>| {
                estimate_components(d, cfg).map(|c| [c.val.estimate, c.val_ep.estimate, c.main_ep.estimate])
            };
            let m = bootstrap_gamma_v(data, original, recipe, replicates, seed)?;
            control_variate_from_moments(
                original[0],
                original[1],
                original[2],
                m.v_hat,
                m.gamma_hat,
                m.v_big_hat,
                data.n(),
                VarianceMethod::Bootstrap { replicates, failed: m.failed },
                level,
            )
        }
    };
    Ok(CvEstimate { report, components })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_arithmetic() {
        let r = control_variate_from_moments(1.0f64, 0.5, 0.4, 4.0, 1.0, 2.0, 100, VarianceMethod::Influence, 0.95);
        assert!((r.se * r.se - 0.035).abs() < 1e-15);
        assert_eq!(r.b_hat, 0.5);
        assert_eq!(r.tau_cv, 1.0 - 0.5 * (0.5 - 0.4));
        assert!(r.se <= r.se_val);
    }

    #[test]
    fn zero_covariance_leaves_validation_estimate() {
        let r = control_variate_from_moments(1.3, 0.5, 0.4, 4.0, 0.0, 2.0, 50, VarianceMethod::Influence, 0.95);
        assert_eq!(r.tau_cv, 1.3);
        assert_eq!(r.se, r.se_val);
        assert!(!r.degenerate_cv);
    }

    #[test]
    fn vanishing_control_variance_is_flagged() {
        let r = control_variate_from_moments(1.3, 0.5, 0.4, 4.0, 1e-9, 1e-13, 50, VarianceMethod::Influence, 0.95);
        assert!(r.degenerate_cv);
        assert_eq!(r.b_hat, 0.0);
        assert_eq!(r.tau_cv, 1.3);
    }

    #[test]
    fn misaligned_reports_are_rejected() {
        let a = EstimateReport::from_summands(EstimatorTag::Val, vec![1.0, 2.0, 3.0], vec![]);
        let b = EstimateReport::from_summands(EstimatorTag::ValEp, vec![1.0, 2.0], vec![]);
        assert!(matches!(combine_control_variates(&a, &b, &b, 0.95), Err(EstimationError::MisalignedReports(_))));
    }
}
