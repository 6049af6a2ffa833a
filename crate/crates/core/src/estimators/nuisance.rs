//! Fitting and evaluating nuisance models with the configured library,
//! optionally cross-fitted.

use crate::estimators::{EstimationError, NuisanceConfig, NuisanceSummary};
use crate::numerics::stacking::fold_assignment;
use crate::numerics::{fit_super_learner, DesignMatrix, Family, LearnerKind, NuisanceFit, StackingOptions};
use crate::rng::derive_seed;
use crate::scalar::Scalar;

/// Nuisance role. Fold seeds depend on the role only, so two fits of the same
/// role on identical inputs agree bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Role {
    Outcome,
    Propensity,
    Sampling,
    Imputation,
}

impl Role {
    pub(crate) fn id(self) -> u64 {
        match self {
            Role::Outcome => 1,
            Role::Propensity => 2,
            Role::Sampling => 3,
            Role::Imputation => 4,
        }
    }

    pub(crate) fn name(self) -> &'static str {
        match self {
            Role::Outcome => "outcome",
            Role::Propensity => "propensity",
            Role::Sampling => "sampling",
            Role::Imputation => "imputation",
        }
    }
}

const CROSS_FIT_STREAM: u64 = 100;
pub(crate) const EXPOSURE_COLUMN: &str = "exposure";

pub(crate) fn library<T: Scalar>(cfg: &NuisanceConfig<T>, role: Role) -> &[LearnerKind] {
    match role {
        Role::Outcome => &cfg.outcome_library,
        Role::Propensity | Role::Imputation => &cfg.propensity_library,
        Role::Sampling => &cfg.sampling_library,
    }
}

pub(crate) fn family(role: Role) -> Family {
    match role {
        Role::Outcome => Family::GaussianIdentity,
        _ => Family::BinomialLogit,
    }
}

/// Covariates with an intercept, plus optional extra leading columns.
pub(crate) fn design_with<T: Scalar>(
    x: &DesignMatrix<T>,
    leading: &[(&str, Vec<T>)],
    trailing: &[(&str, Vec<T>)],
) -> DesignMatrix<T> {
    let cols: Vec<Vec<T>> = (0..x.cols()).map(|j| x.column(j)).collect();
    let mut names: Vec<&str> = leading.iter().map(|(n, _)| *n).collect();
    let mut refs: Vec<&[T]> = leading.iter().map(|(_, c)| c.as_slice()).collect();
    for (j, c) in cols.iter().enumerate() {
        names.push(&x.column_names()[j]);
        refs.push(c);
    }
    for (n, c) in trailing {
        names.push(n);
        refs.push(c);
    }
    DesignMatrix::from_columns(&names, &refs, true).expect("covariates already validated")
}

pub(crate) fn indicator<T: Scalar>(b: &[bool]) -> Vec<T> {
    b.iter().map(|&v| if v { T::one() } else { T::zero() }).collect()
}

/// Predictions of one fitted nuisance on each target design.
pub(crate) struct Fitted<T> {
    pub preds: Vec<Vec<T>>,
    pub summary: NuisanceSummary<T>,
}

fn summarize<T: Scalar>(name: &str, fits: &[NuisanceFit<T>]) -> NuisanceSummary<T> {
    let k = T::from_count(fits.len());
    let first = &fits[0];
    let learner_weights = first
        .learners
        .iter()
        .enumerate()
        .map(|(l, learner)| {
            let w: T = fits.iter().map(|f| f.learners[l].weight).sum();
            (learner.spec.kind, w / k)
        })
        .collect();
    NuisanceSummary {
        name: name.to_string(),
        learner_weights,
        fallback_used: fits.iter().any(|f| f.fallback_used),
        clipped: 0,
    }
}

/// Fits `role` on the training design and evaluates it on each target.
///
/// `train_rows[k]` is the dataset row of training row `k`; targets have one
/// row per dataset row. Predictions are unclipped.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_predict<T: Scalar>(
    cfg: &NuisanceConfig<T>,
    role: Role,
    name: &str,
    train: &DesignMatrix<T>,
    train_rows: &[usize],
    response: &[T],
    weights: Option<&[T]>,
    targets: &[&DesignMatrix<T>],
) -> Result<Fitted<T>, EstimationError> {
    let options = StackingOptions { folds: cfg.folds, irls: cfg.irls, clip: cfg.clip };
    let lib = library(cfg, role);
    let fam = family(role);
    let wrap = |e| EstimationError::Numerics { role: role.name(), source: e };
    if train.rows() < cfg.folds {
        return Err(EstimationError::InsufficientValidation { n_val: train.rows(), required: cfg.folds });
    }

    match cfg.cross_fit_folds {
        None => {
            let seed = derive_seed(cfg.seed, &[role.id()]);
            let fit = fit_super_learner(train, response, fam, lib, weights, &options, seed).map_err(wrap)?;
            let preds = targets.iter().map(|t| fit.predict_raw(t)).collect::<Result<Vec<_>, _>>().map_err(wrap)?;
            Ok(Fitted { preds, summary: summarize(name, std::slice::from_ref(&fit)) })
        }
        Some(k) => {
            let n = targets.first().map_or(0, |t| t.rows());
            let split = fold_assignment(n, k, derive_seed(cfg.seed, &[CROSS_FIT_STREAM]));
            let mut fold_of = vec![0usize; n];
            for (f, idx) in split.iter().enumerate() {
                for &i in idx {
                    fold_of[i] = f;
                }
            }
            let mut preds = vec![vec![T::zero(); n]; targets.len()];
            let mut fits = Vec::with_capacity(k);
            for (f, held_out) in split.iter().enumerate() {
                let keep: Vec<usize> = (0..train_rows.len()).filter(|&r| fold_of[train_rows[r]] != f).collect();
                if keep.len() < cfg.folds {
                    return Err(EstimationError::InsufficientValidation { n_val: keep.len(), required: cfg.folds });
                }
                let y: Vec<T> = keep.iter().map(|&r| response[r]).collect();
                let w: Option<Vec<T>> = weights.map(|w| keep.iter().map(|&r| w[r]).collect());
                let seed = derive_seed(cfg.seed, &[role.id(), f as u64]);
                let fit = fit_super_learner(&train.select_rows(&keep), &y, fam, lib, w.as_deref(), &options, seed)
                    .map_err(wrap)?;
                for (t, target) in targets.iter().enumerate() {
                    let p = fit.predict_raw(&target.select_rows(held_out)).map_err(wrap)?;
                    for (&i, v) in held_out.iter().zip(p) {
                        preds[t][i] = v;
                    }
                }
                fits.push(fit);
            }
            Ok(Fitted { preds, summary: summarize(name, &fits) })
        }
    }
}

/// Clips probabilities in place. Rows flagged in `used` (all rows when
/// `None`) count towards the overlap check.
pub(crate) fn clip_probabilities<T: Scalar>(
    cfg: &NuisanceConfig<T>,
    what: &'static str,
    probs: &mut [T],
    used: Option<&[bool]>,
) -> Result<usize, EstimationError> {
    let mut clipped = 0;
    let mut rows = 0;
    for (i, p) in probs.iter_mut().enumerate() {
        let c = cfg.clip.apply(*p);
        let counted = used.map_or(true, |u| u[i]);
        if counted {
            rows += 1;
            if c != *p {
                clipped += 1;
            }
        }
        *p = c;
    }
    if rows > 0 && clipped as f64 > cfg.positivity_threshold * rows as f64 {
        return Err(EstimationError::PositivityViolation { what, clipped, rows });
    }
    Ok(clipped)
}

/// Outcome regression of `y` on `(exposure, X)` over `rows`, evaluated at
/// exposure 1 and 0 on every dataset row.
pub(crate) struct OutcomeFit<T> {
    pub mu1: Vec<T>,
    pub mu0: Vec<T>,
    pub summary: NuisanceSummary<T>,
}

pub(crate) fn fit_outcome<T: Scalar>(
    cfg: &NuisanceConfig<T>,
    name: &str,
    x: &DesignMatrix<T>,
    y: &[T],
    exposure: &[bool],
    rows: &[usize],
    weights: Option<&[T]>,
) -> Result<OutcomeFit<T>, EstimationError> {
    let n = x.rows();
    let full = design_with(x, &[(EXPOSURE_COLUMN, vec![T::zero(); n])], &[]);
    let col = full.column_index(EXPOSURE_COLUMN).expect("exposure column");
    let a: Vec<T> = rows.iter().map(|&i| if exposure[i] { T::one() } else { T::zero() }).collect();
    let train = design_with(&x.select_rows(rows), &[(EXPOSURE_COLUMN, a)], &[]);
    let response: Vec<T> = rows.iter().map(|&i| y[i]).collect();
    let treated = full.with_column_fixed(col, T::one());
    let mut fitted = fit_predict(cfg, Role::Outcome, name, &train, rows, &response, weights, &[&treated, &full])?;
    let mu0 = fitted.preds.pop().expect("two targets");
    let mu1 = fitted.preds.pop().expect("two targets");
    Ok(OutcomeFit { mu1, mu0, summary: fitted.summary })
}

/// Logistic-type regression of a binary response on `X` (plus optional
/// trailing columns) over `rows`, evaluated on every dataset row.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_probability<T: Scalar>(
    cfg: &NuisanceConfig<T>,
    role: Role,
    name: &str,
    x: &DesignMatrix<T>,
    extra: &[(&str, Vec<T>)],
    response: &[bool],
    rows: &[usize],
    weights: Option<&[T]>,
) -> Result<(Vec<T>, NuisanceSummary<T>), EstimationError> {
    let full = design_with(x, &[], extra);
    let train = full.select_rows(rows);
    let r: Vec<T> = rows.iter().map(|&i| if response[i] { T::one() } else { T::zero() }).collect();
    let mut fitted = fit_predict(cfg, role, name, &train, rows, &r, weights, &[&full])?;
    Ok((fitted.preds.pop().expect("one target"), fitted.summary))
}
