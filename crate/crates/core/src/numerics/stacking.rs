//! Cross-validated non-negative stacking of the nuisance learner library.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::glm::{fit_glm, Family, GlmDiagnostics, IrlsConfig};
use crate::numerics::linalg::{dot, Matrix};
use crate::numerics::nnls::nnls;
use crate::numerics::{ClipBounds, DesignMatrix, NumericsError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    /// Weighted sample mean of the response.
    Mean,
    GlmMainEffects,
    /// Main effects plus every distinct pairwise product of non-intercept columns.
    GlmPairwiseInteractions,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 3] =
        [LearnerKind::Mean, LearnerKind::GlmMainEffects, LearnerKind::GlmPairwiseInteractions];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Mean => "mean",
            LearnerKind::GlmMainEffects => "glm",
            LearnerKind::GlmPairwiseInteractions => "glm-interaction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub family: Family,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LearnerModel<T> {
    Constant(T),
    Linear(Vec<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedLearner<T> {
    pub spec: LearnerSpec,
    pub weight: T,
    /// `None` for learners that were dropped (failed or zero stacking weight).
    pub model: Option<LearnerModel<T>>,
    pub cv_risk: Option<T>,
    pub diagnostics: Option<GlmDiagnostics<T>>,
    pub failure: Option<String>,
}

impl<T: Scalar> FittedLearner<T> {
    fn predict_into(&self, design: &DesignMatrix<T>, expanded: Option<&DesignMatrix<T>>, out: &mut [T]) {
        let Some(model) = &self.model else { return };
        match model {
            LearnerModel::Constant(c) => {
                for o in out.iter_mut() {
                    *o = *o + self.weight * *c;
                }
            }
            LearnerModel::Linear(beta) => {
                let d = match self.spec.kind {
                    LearnerKind::GlmPairwiseInteractions => expanded.expect("expanded design present"),
                    _ => design,
                };
                for (i, o) in out.iter_mut().enumerate() {
                    *o = *o + self.weight * self.spec.family.inverse_link(dot(d.row(i), beta));
                }
            }
        }
    }
}

/// A fitted prediction function: one learner or a stacked ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit<T> {
    pub family: Family,
    pub learners: Vec<FittedLearner<T>>,
    /// Column names of the design the fit was trained on.
    pub schema: Vec<String>,
    pub clip: ClipBounds<T>,
    pub observation_weights_used: bool,
    pub folds: usize,
    /// NNLS returned all zeros and the lowest-risk learner was used alone.
    pub fallback_used: bool,
}

impl<T: Scalar> NuisanceFit<T> {
    pub fn learner_weights(&self) -> Vec<T> {
        self.learners.iter().map(|l| l.weight).collect()
    }

    /// Predictions without clipping.
    pub fn predict_raw(&self, design: &DesignMatrix<T>) -> Result<Vec<T>, NumericsError> {
        if design.column_names() != self.schema.as_slice() {
            return Err(NumericsError::SchemaMismatch {
                expected: self.schema.join(","),
                found: design.column_names().join(","),
            });
        }
        let needs_expansion =
            self.learners.iter().any(|l| l.spec.kind == LearnerKind::GlmPairwiseInteractions && l.model.is_some());
        let expanded = needs_expansion.then(|| design.with_pairwise_interactions());
        let mut out = vec![T::zero(); design.rows()];
        for learner in &self.learners {
            learner.predict_into(design, expanded.as_ref(), &mut out);
        }
        Ok(out)
    }

    /// Predictions, with binomial outputs clipped; also returns how many
    /// rows were moved by the clipping.
    pub fn predict_counting_clips(&self, design: &DesignMatrix<T>) -> Result<(Vec<T>, usize), NumericsError> {
        let mut out = self.predict_raw(design)?;
        let mut clipped = 0;
        if self.family == Family::BinomialLogit {
            for v in out.iter_mut() {
                let c = self.clip.apply(*v);
                if c != *v {
                    clipped += 1;
                }
                *v = c;
            }
        }
        Ok((out, clipped))
    }

    pub fn predict(&self, design: &DesignMatrix<T>) -> Result<Vec<T>, NumericsError> {
        self.predict_counting_clips(design).map(|(p, _)| p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackingOptions<T> {
    pub folds: usize,
    pub irls: IrlsConfig<T>,
    pub clip: ClipBounds<T>,
}

impl<T: Scalar> Default for StackingOptions<T> {
    fn default() -> Self {
        Self { folds: 10, irls: IrlsConfig::default(), clip: ClipBounds::default() }
    }
}

struct Prepared<T> {
    main: DesignMatrix<T>,
    expanded: Option<DesignMatrix<T>>,
}

impl<T: Scalar> Prepared<T> {
    fn new(design: &DesignMatrix<T>, library: &[LearnerKind]) -> Self {
        let expanded =
            library.contains(&LearnerKind::GlmPairwiseInteractions).then(|| design.with_pairwise_interactions());
        Self { main: design.clone(), expanded }
    }

    fn for_kind(&self, kind: LearnerKind) -> &DesignMatrix<T> {
        match kind {
            LearnerKind::GlmPairwiseInteractions => self.expanded.as_ref().expect("expanded"),
            _ => &self.main,
        }
    }
}

fn weighted_mean<T: Scalar>(y: &[T], w: Option<&[T]>) -> T {
    match w {
        None => crate::scalar::mean(y),
        Some(w) => {
            let tw: T = w.iter().copied().sum();
            y.iter().zip(w).map(|(&a, &b)| a * b).sum::<T>() / tw
        }
    }
}

fn fit_learner<T: Scalar>(
    kind: LearnerKind,
    family: Family,
    design: &DesignMatrix<T>,
    y: &[T],
    w: Option<&[T]>,
    irls: &IrlsConfig<T>,
) -> Result<(LearnerModel<T>, Option<GlmDiagnostics<T>>), NumericsError> {
    match kind {
        LearnerKind::Mean => {
            if let Some(w) = w {
                if !w.iter().any(|v| *v > T::zero()) {
                    return Err(NumericsError::InvalidInput("no positive weight".into()));
                }
            }
            Ok((LearnerModel::Constant(weighted_mean(y, w)), None))
        }
        _ => {
            let fit = fit_glm(design, y, family, w, irls)?;
            Ok((LearnerModel::Linear(fit.coefficients), Some(fit.diagnostics)))
        }
    }
}

fn model_predict<T: Scalar>(model: &LearnerModel<T>, family: Family, design: &DesignMatrix<T>) -> Vec<T> {
    match model {
        LearnerModel::Constant(c) => vec![*c; design.rows()],
        LearnerModel::Linear(beta) => {
            (0..design.rows()).map(|i| family.inverse_link(dot(design.row(i), beta))).collect()
        }
    }
}

/// Random permutation split into contiguous, near-equal blocks.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..folds).map(|k| perm[k * n / folds..(k + 1) * n / folds].to_vec()).collect()
}

/// Fits one learner on all rows and wraps it as a single-member ensemble.
pub fn fit_single_learner<T: Scalar>(
    design: &DesignMatrix<T>,
    response: &[T],
    family: Family,
    kind: LearnerKind,
    weights: Option<&[T]>,
    options: &StackingOptions<T>,
) -> Result<NuisanceFit<T>, NumericsError> {
    let prepared = Prepared::new(design, &[kind]);
    let (model, diagnostics) = fit_learner(kind, family, prepared.for_kind(kind), response, weights, &options.irls)?;
    Ok(NuisanceFit {
        family,
        learners: vec![FittedLearner {
            spec: LearnerSpec { kind, family },
            weight: T::one(),
            model: Some(model),
            cv_risk: None,
            diagnostics,
            failure: None,
        }],
        schema: design.column_names().to_vec(),
        clip: options.clip,
        observation_weights_used: weights.is_some(),
        folds: 0,
        fallback_used: false,
    })
}

/// Super learner: K-fold cross-validated predictions per learner, NNLS
/// stacking weights on squared error, renormalized to the simplex, and a
/// full-data refit of every learner that received weight.
pub fn fit_super_learner<T: Scalar>(
    design: &DesignMatrix<T>,
    response: &[T],
    family: Family,
    library: &[LearnerKind],
    weights: Option<&[T]>,
    options: &StackingOptions<T>,
    seed: u64,
) -> Result<NuisanceFit<T>, NumericsError> {
    let n = design.rows();
    if library.is_empty() {
        return Err(NumericsError::InvalidInput("empty learner library".into()));
    }
    if options.folds < 2 || options.folds > n {
        return Err(NumericsError::InvalidInput(format!("folds must lie in [2, n = {n}], got {}", options.folds)));
    }
    if response.len() != n {
        return Err(NumericsError::InvalidInput("response length mismatch".into()));
    }
    if library.len() == 1 {
        return fit_single_learner(design, response, family, library[0], weights, options);
    }

    let prepared = Prepared::new(design, library);
    let folds = fold_assignment(n, options.folds, seed);
    let mut in_fold = vec![0usize; n];
    for (k, idx) in folds.iter().enumerate() {
        for &i in idx {
            in_fold[i] = k;
        }
    }

    // Column l holds learner l's out-of-fold predictions.
    let mut cv_preds: Vec<Option<Vec<T>>> = Vec::with_capacity(library.len());
    let mut failures: Vec<Option<String>> = Vec::with_capacity(library.len());
    for &kind in library {
        let full = prepared.for_kind(kind);
        let mut preds = vec![T::zero(); n];
        let mut failure = None;
        for (k, held_out) in folds.iter().enumerate() {
            let train: Vec<usize> = (0..n).filter(|&i| in_fold[i] != k).collect();
            let train_design = full.select_rows(&train);
            let train_y: Vec<T> = train.iter().map(|&i| response[i]).collect();
            let train_w: Option<Vec<T>> = weights.map(|w| train.iter().map(|&i| w[i]).collect());
            match fit_learner(kind, family, &train_design, &train_y, train_w.as_deref(), &options.irls) {
                Ok((model, _)) => {
                    let p = model_predict(&model, family, &full.select_rows(held_out));
                    for (&i, v) in held_out.iter().zip(p) {
                        preds[i] = v;
                    }
                }
                Err(e) => {
                    failure = Some(format!("fold {k}: {e}"));
                    break;
                }
            }
        }
        if failure.is_some() {
            cv_preds.push(None);
        } else {
            cv_preds.push(Some(preds));
        }
        failures.push(failure);
    }

    let usable: Vec<usize> = (0..library.len()).filter(|&l| cv_preds[l].is_some()).collect();
    if usable.is_empty() {
        return Err(NumericsError::SuperLearnerFailure(
            failures.iter().flatten().cloned().collect::<Vec<_>>().join("; "),
        ));
    }

    let sqrt_w: Vec<T> = (0..n).map(|i| weights.map_or(T::one(), |w| w[i]).sqrt()).collect();
    let total_w: T = (0..n).map(|i| sqrt_w[i] * sqrt_w[i]).sum();
    let cv_risk: Vec<Option<T>> = cv_preds
        .iter()
        .map(|p| {
            p.as_ref()
                .map(|p| (0..n).map(|i| sqrt_w[i] * sqrt_w[i] * (response[i] - p[i]).powi(2)).sum::<T>() / total_w)
        })
        .collect();

    let mut z = Vec::with_capacity(n * usable.len());
    for i in 0..n {
        for &l in &usable {
            z.push(sqrt_w[i] * cv_preds[l].as_ref().expect("usable")[i]);
        }
    }
    let z = Matrix::from_row_major(n, usable.len(), z)?;
    let target: Vec<T> = (0..n).map(|i| sqrt_w[i] * response[i]).collect();
    let sol = nnls(&z, &target)?;

    let mut stack = vec![T::zero(); library.len()];
    let total: T = sol.x.iter().copied().sum();
    let mut fallback_used = false;
    if total > T::zero() {
        for (k, &l) in usable.iter().enumerate() {
            stack[l] = sol.x[k] / total;
        }
    } else {
        fallback_used = true;
        let best = usable
            .iter()
            .copied()
            .min_by(|&a, &b| cv_risk[a].partial_cmp(&cv_risk[b]).unwrap_or(std::cmp::Ordering::Equal))
            .expect("usable non-empty");
        stack[best] = T::one();
    }

    let mut learners = Vec::with_capacity(library.len());
    for (l, &kind) in library.iter().enumerate() {
        let mut learner = FittedLearner {
            spec: LearnerSpec { kind, family },
            weight: stack[l],
            model: None,
            cv_risk: cv_risk[l],
            diagnostics: None,
            failure: failures[l].clone(),
        };
        if stack[l] > T::zero() {
            match fit_learner(kind, family, prepared.for_kind(kind), response, weights, &options.irls) {
                Ok((model, diag)) => {
                    learner.model = Some(model);
                    learner.diagnostics = diag;
                }
                Err(e) => {
                    learner.weight = T::zero();
                    learner.failure = Some(format!("full-data refit: {e}"));
                }
            }
        }
        learners.push(learner);
    }
    let kept: T = learners.iter().map(|l| l.weight).sum();
    if !(kept > T::zero()) {
        return Err(NumericsError::SuperLearnerFailure("every weighted learner failed to refit".into()));
    }
    for l in learners.iter_mut() {
        l.weight = l.weight / kept;
    }

    Ok(NuisanceFit {
        family,
        learners,
        schema: design.column_names().to_vec(),
        clip: options.clip,
        observation_weights_used: weights.is_some(),
        folds: options.folds,
        fallback_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::expit;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn linear_data(n: usize, seed: u64) -> (DesignMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x1: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y =
            x1.iter().zip(&x2).map(|(a, b)| 1.0 + 2.0 * a - b + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        (DesignMatrix::from_columns(&["x1", "x2"], &[&x1, &x2], true).unwrap(), y)
    }

    #[test]
    fn mean_only_library_is_the_sample_mean() {
        let (d, y) = linear_data(50, 1);
        let fit = fit_super_learner(
            &d,
            &y,
            Family::GaussianIdentity,
            &[LearnerKind::Mean],
            None,
            &StackingOptions::default(),
            3,
        )
        .unwrap();
        assert_eq!(fit.learner_weights(), vec![1.0]);
        let m = crate::scalar::mean(&y);
        assert!(fit.predict(&d).unwrap().iter().all(|&p| (p - m).abs() < 1e-12));
    }

    #[test]
    fn true_linear_model_dominates_the_stack() {
        let (d, y) = linear_data(4000, 7);
        let fit = fit_super_learner(
            &d,
            &y,
            Family::GaussianIdentity,
            &[LearnerKind::Mean, LearnerKind::GlmMainEffects],
            None,
            &StackingOptions::default(),
            9,
        )
        .unwrap();
        let w = fit.learner_weights();
        assert!(w[1] >= 0.95, "{w:?}");
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn convex_combination_of_learner_predictions() {
        let d = DesignMatrix::from_columns(&["x"], &[&[0.0, 1.0]], true).unwrap();
        let make = |c: f64, w: f64| FittedLearner {
            spec: LearnerSpec { kind: LearnerKind::Mean, family: Family::BinomialLogit },
            weight: w,
            model: Some(LearnerModel::Constant(c)),
            cv_risk: None,
            diagnostics: None,
            failure: None,
        };
        let fit = NuisanceFit {
            family: Family::BinomialLogit,
            learners: vec![make(0.2, 0.5), make(0.6, 0.5)],
            schema: d.column_names().to_vec(),
            clip: ClipBounds::default(),
            observation_weights_used: false,
            folds: 0,
            fallback_used: false,
        };
        let p = fit.predict(&d).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let (d, y) = linear_data(40, 2);
        let fit = fit_single_learner(
            &d,
            &y,
            Family::GaussianIdentity,
            LearnerKind::GlmMainEffects,
            None,
            &StackingOptions::default(),
        )
        .unwrap();
        let other = DesignMatrix::from_columns(&["x1", "z"], &[&[0.0], &[1.0]], true).unwrap();
        assert!(matches!(fit.predict(&other), Err(NumericsError::SchemaMismatch { .. })));
    }

    #[test]
    fn binomial_predictions_are_clipped() {
        let x: Vec<f64> = (0..200).map(|i| i as f64 / 20.0 - 5.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = x.iter().map(|&v| f64::from(rng.gen::<f64>() < expit(2.0 * v))).collect();
        let d = DesignMatrix::from_columns(&["x"], &[&x], true).unwrap();
        let fit =
            fit_super_learner(&d, &y, Family::BinomialLogit, &LearnerKind::ALL, None, &StackingOptions::default(), 1)
                .unwrap();
        let (p, clipped) = fit.predict_counting_clips(&d).unwrap();
        assert!(clipped > 0);
        assert!(p.iter().all(|&v| (0.01..=0.99).contains(&v)));
    }

    #[test]
    fn fit_and_predict_are_deterministic() {
        let (d, y) = linear_data(300, 3);
        let run = || {
            let f = fit_super_learner(
                &d,
                &y,
                Family::GaussianIdentity,
                &LearnerKind::ALL,
                None,
                &StackingOptions::default(),
                42,
            )
            .unwrap();
            f.predict(&d).unwrap()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn invalid_fold_counts_are_rejected() {
        let (d, y) = linear_data(5, 3);
        let opts = StackingOptions { folds: 6, ..StackingOptions::default() };
        assert!(fit_super_learner(&d, &y, Family::GaussianIdentity, &LearnerKind::ALL, None, &opts, 0).is_err());
        let opts = StackingOptions { folds: 1, ..StackingOptions::default() };
        assert!(fit_super_learner(&d, &y, Family::GaussianIdentity, &LearnerKind::ALL, None, &opts, 0).is_err());
    }

    #[test]
    fn folds_partition_rows() {
        let folds = fold_assignment(103, 10, 8);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == 10 || f.len() == 11));
    }
}
