//! Multiple imputation of the missing true exposure by predictive mean
//! matching, pooled with Rubin's rules.

use rand::Rng;
use rand_distr::Exp1;

use crate::estimators::aipw::{aipw_summands, fit_aipw};
use crate::estimators::nuisance::{design_with, indicator, Role};
use crate::estimators::{EstimateReport, EstimationError, EstimatorTag, NuisanceConfig, SeSource, TwoPhaseDataset};
use crate::numerics::linalg::dot;
use crate::numerics::{fit_glm, Family};
use crate::rng::{derive_seed, stream_rng};
use crate::scalar::{mean, variance, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiConfig {
    pub imputations: usize,
    pub donors: usize,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self { imputations: 10, donors: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RubinPooled<T> {
    pub point: T,
    pub within: T,
    pub between: T,
    pub total_variance: T,
    /// Barnard–Rubin small-sample degrees of freedom.
    pub df: f64,
}

/// Pools per-imputation estimates and squared standard errors.
/// `complete_df` is the degrees of freedom had no data been missing.
pub fn rubin_combine<T: Scalar>(estimates: &[T], within: &[T], complete_df: f64) -> RubinPooled<T> {
    let m = estimates.len();
    let point = mean(estimates);
    let w = mean(within);
    let b = if m > 1 { variance(estimates) } else { T::zero() };
    let inflation = T::one() + T::one() / T::from_count(m);
    let total = w + inflation * b;
    let lambda = if total > T::zero() { (inflation * b / total).as_f64() } else { 0.0 };
    let nu_obs = (complete_df + 1.0) / (complete_df + 3.0) * complete_df * (1.0 - lambda);
    let df = if lambda > 0.0 && m > 1 {
        let nu_old = (m as f64 - 1.0) / (lambda * lambda);
        nu_old * nu_obs / (nu_old + nu_obs)
    } else {
        nu_obs
    };
    RubinPooled { point, within: w, between: b, total_variance: total, df }
}

/// Indices of the `k` donors closest to `target`; `sorted` holds
/// `(score, row)` in ascending order. Ties go to the lower score.
fn nearest<T: Scalar>(sorted: &[(T, usize)], target: T, k: usize) -> Vec<usize> {
    let pos = sorted.partition_point(|(v, _)| *v < target);
    let (mut lo, mut hi) = (pos, pos);
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let left = (lo > 0).then(|| target - sorted[lo - 1].0);
        let right = (hi < sorted.len()).then(|| sorted[hi].0 - target);
        match (left, right) {
            (Some(l), Some(r)) if l <= r => {
                lo -= 1;
                out.push(sorted[lo].1);
            }
            (_, Some(_)) => {
                out.push(sorted[hi].1);
                hi += 1;
            }
            (Some(_), None) => {
                lo -= 1;
                out.push(sorted[lo].1);
            }
            (None, None) => break,
        }
    }
    out
}

/// MI-PMM: `m` imputations of `A` on unvalidated rows, AIPW on each
/// completed dataset, Rubin pooling.
pub fn estimate_mi_pmm<T: Scalar>(
    data: &TwoPhaseDataset<T>,
    mi: MiConfig,
    cfg: &NuisanceConfig<T>,
) -> Result<EstimateReport<T>, EstimationError> {
    cfg.validate()?;
    if mi.imputations == 0 || mi.donors == 0 {
        return Err(EstimationError::InvalidConfig("imputations and donors must be positive".into()));
    }
    let val_rows = data.validation_rows();
    if val_rows.len() < mi.donors + 1 {
        return Err(EstimationError::DonorPoolExhausted { n_val: val_rows.len(), donors: mi.donors });
    }
    let missing: Vec<usize> = (0..data.n()).filter(|&i| !data.s()[i]).collect();

    let design = design_with(data.x(), &[], &[("a_star", indicator(data.a_star())), ("y", data.y().to_vec())]);
    let train = design.select_rows(&val_rows);
    let response: Vec<T> =
        val_rows.iter().map(|&i| if data.a()[i] == Some(true) { T::one() } else { T::zero() }).collect();
    let wrap = |e| EstimationError::Numerics { role: Role::Imputation.name(), source: e };

    // Donor scores under each family, computed on first use. A logistic
    // fit that separates falls back to a linear-probability score.
    let mut donor_scores: [Option<Vec<(T, usize)>>; 2] = [None, None];
    let families = [Family::BinomialLogit, Family::GaussianIdentity];
    let mut sorted_scores = |k: usize| -> Result<Vec<(T, usize)>, EstimationError> {
        if donor_scores[k].is_none() {
            let base = fit_glm(&train, &response, families[k], None, &cfg.irls).map_err(wrap)?;
            let mut v: Vec<(T, usize)> =
                val_rows.iter().enumerate().map(|(r, &i)| (dot(train.row(r), &base.coefficients), i)).collect();
            v.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores").then(a.1.cmp(&b.1)));
            donor_scores[k] = Some(v);
        }
        Ok(donor_scores[k].clone().expect("just set"))
    };

    let mut estimates = Vec::with_capacity(mi.imputations);
    let mut within = Vec::with_capacity(mi.imputations);
    let mut influence = vec![T::zero(); data.n()];
    let mut nuisance = Vec::new();
    for j in 0..mi.imputations {
        let mut imputed = vec![false; data.n()];
        if !missing.is_empty() {
            let mut rng = stream_rng(derive_seed(cfg.seed, &[Role::Imputation.id(), j as u64]), 0);
            let raw: Vec<T> = (0..val_rows.len()).map(|_| T::lit(rng.sample::<f64, _>(Exp1))).collect();
            let scale = mean(&raw);
            let w: Vec<T> = raw.iter().map(|&v| v / scale).collect();
            let logistic = fit_glm(&train, &response, Family::BinomialLogit, Some(&w), &cfg.irls);
            let base_logistic = logistic.is_ok() && sorted_scores(0).is_ok();
            let (k, perturbed) = if base_logistic {
                (0, logistic.expect("checked"))
            } else {
                (1, fit_glm(&train, &response, Family::GaussianIdentity, Some(&w), &cfg.irls).map_err(wrap)?)
            };
            let donors_sorted = sorted_scores(k)?;
            for &i in &missing {
                let score = dot(design.row(i), &perturbed.coefficients);
                let pool = nearest(&donors_sorted, score, mi.donors);
                let donor = pool[rng.gen_range(0..pool.len())];
                imputed[i] = data.a()[donor] == Some(true);
            }
        }
        let completed = data.completed_exposure(&imputed);
        let fits = fit_aipw(data, &completed, cfg, ("m-imputed", "g-imputed"))?;
        let r =
            EstimateReport::from_summands(EstimatorTag::MiPmm, aipw_summands(data, &completed, &fits), fits.nuisance);
        estimates.push(r.estimate);
        within.push(r.se * r.se);
        for (acc, v) in influence.iter_mut().zip(&r.influence) {
            *acc = *acc + *v;
        }
        nuisance = r.nuisance;
    }
    let m = T::from_count(mi.imputations);
    for v in influence.iter_mut() {
        *v = *v / m;
    }
    let pooled = rubin_combine(&estimates, &within, data.n() as f64 - 1.0);
    Ok(EstimateReport {
        tag: EstimatorTag::MiPmm,
        estimate: pooled.point,
        influence,
        se: pooled.total_variance.sqrt(),
        se_source: SeSource::Rubin { df: pooled.df },
        nuisance,
    })
}
