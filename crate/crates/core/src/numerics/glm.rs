//! Generalized linear models: weighted least squares for the Gaussian family
//! and IRLS with step halving for the logistic family.

use serde::{Deserialize, Serialize};

use crate::numerics::linalg::{dot, solve_spd};
use crate::numerics::{ClipBounds, DesignMatrix, NumericsError};
use crate::scalar::{expit, logit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    GaussianIdentity,
    BinomialLogit,
}

impl Family {
    #[inline]
    pub fn inverse_link<T: Scalar>(self, eta: T) -> T {
        match self {
            Family::GaussianIdentity => eta,
            Family::BinomialLogit => expit(eta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsConfig<T> {
    pub max_iterations: usize,
    /// Convergence threshold on the largest absolute weighted score component.
    pub score_tolerance: T,
    /// Bounds used for the intercept-only fallback on a constant binary response.
    pub clip: ClipBounds<T>,
}

impl<T: Scalar> Default for IrlsConfig<T> {
    fn default() -> Self {
        Self { max_iterations: 100, score_tolerance: T::lit(1e-8), clip: ClipBounds::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GlmDiagnostics<T> {
    pub iterations: usize,
    /// `max |Xᵀ W (y - ŷ)|` at the returned coefficients.
    pub score_norm: T,
    pub step_halvings: usize,
    pub ridge_applied: bool,
    pub degenerate_response: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit<T> {
    pub coefficients: Vec<T>,
    pub family: Family,
    pub diagnostics: GlmDiagnostics<T>,
}

impl<T: Scalar> GlmFit<T> {
    pub fn predict(&self, design: &DesignMatrix<T>) -> Vec<T> {
        (0..design.rows()).map(|i| self.family.inverse_link(dot(design.row(i), &self.coefficients))).collect()
    }
}

fn validate<T: Scalar>(
    design: &DesignMatrix<T>,
    response: &[T],
    family: Family,
    weights: Option<&[T]>,
) -> Result<(), NumericsError> {
    if response.len() != design.rows() {
        return Err(NumericsError::InvalidInput(format!(
            "response has {} entries, design has {} rows",
            response.len(),
            design.rows()
        )));
    }
    if let Some(i) = response.iter().position(|v| !v.is_finite()) {
        return Err(NumericsError::InvalidInput(format!("non-finite response at row {i}")));
    }
    if family == Family::BinomialLogit {
        if let Some(i) = response.iter().position(|&v| v != T::zero() && v != T::one()) {
            return Err(NumericsError::InvalidInput(format!(
                "binomial response must be 0/1, row {i} is {}",
                response[i]
            )));
        }
    }
    if let Some(w) = weights {
        if w.len() != response.len() {
            return Err(NumericsError::InvalidInput("weights length mismatch".into()));
        }
        if w.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(NumericsError::InvalidInput("weights must be finite and >= 0".into()));
        }
        if !w.iter().any(|v| *v > T::zero()) {
            return Err(NumericsError::InvalidInput("at least one weight must be positive".into()));
        }
    }
    if design.rows() == 0 {
        return Err(NumericsError::InvalidInput("empty design".into()));
    }
    Ok(())
}

fn weighted_score<T: Scalar>(design: &DesignMatrix<T>, response: &[T], fitted: &[T], weights: Option<&[T]>) -> Vec<T> {
    let resid: Vec<T> = response.iter().zip(fitted).map(|(&y, &m)| y - m).collect();
    design.matrix().weighted_cross(weights, &resid)
}

fn max_abs<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Fits a GLM by (weighted) maximum likelihood.
pub fn fit_glm<T: Scalar>(
    design: &DesignMatrix<T>,
    response: &[T],
    family: Family,
    weights: Option<&[T]>,
    config: &IrlsConfig<T>,
) -> Result<GlmFit<T>, NumericsError> {
    validate(design, response, family, weights)?;
    match family {
        Family::GaussianIdentity => fit_gaussian(design, response, weights),
        Family::BinomialLogit => fit_logistic(design, response, weights, config),
    }
}

fn fit_gaussian<T: Scalar>(
    design: &DesignMatrix<T>,
    response: &[T],
    weights: Option<&[T]>,
) -> Result<GlmFit<T>, NumericsError> {
    let gram = design.matrix().weighted_gram(weights);
    let rhs = design.matrix().weighted_cross(weights, response);
    let sol = solve_spd(&gram, &rhs)?;
    let fitted = design.matrix().mul_vec(&sol.x);
    let score = weighted_score(design, response, &fitted, weights);
    Ok(GlmFit {
        coefficients: sol.x,
        family: Family::GaussianIdentity,
        diagnostics: GlmDiagnostics {
            iterations: 1,
            score_norm: max_abs(&score),
            step_halvings: 0,
            ridge_applied: sol.ridge_applied,
            degenerate_response: false,
        },
    })
}

/// `log(1 + e^x)` without overflow.
#[inline]
fn log1p_exp<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_likelihood<T: Scalar>(eta: &[T], response: &[T], weights: Option<&[T]>) -> T {
    eta.iter()
        .zip(response)
        .enumerate()
        .map(|(i, (&e, &y))| weights.map_or(T::one(), |w| w[i]) * (y * e - log1p_exp(e)))
        .sum()
}

/// Linear predictor beyond which a fitted probability is saturated in double
/// precision; reaching it at the optimum means the data are (quasi-)separated.
const SEPARATION_ETA: f64 = 30.0;

fn check_separation<T: Scalar>(
    eta: &[T],
    weights: Option<&[T]>,
    iterations: usize,
    score_norm: T,
) -> Result<(), NumericsError> {
    let saturated = eta
        .iter()
        .enumerate()
        .any(|(i, e)| weights.map_or(true, |w| w[i] > T::zero()) && e.abs() > T::lit(SEPARATION_ETA));
    if saturated {
        return Err(NumericsError::NonConvergence { iterations, score_norm: score_norm.as_f64() });
    }
    Ok(())
}

fn fit_logistic<T: Scalar>(
    design: &DesignMatrix<T>,
    response: &[T],
    weights: Option<&[T]>,
    config: &IrlsConfig<T>,
) -> Result<GlmFit<T>, NumericsError> {
    let p = design.cols();
    let w_of = |i: usize| weights.map_or(T::one(), |w| w[i]);
    let total_w: T = (0..response.len()).map(w_of).sum();
    let ybar = (0..response.len()).map(|i| w_of(i) * response[i]).sum::<T>() / total_w;

    let active = |i: &usize| w_of(*i) > T::zero();
    let first = (0..response.len()).find(active).expect("validated: a positive weight exists");
    let constant = (0..response.len()).filter(active).all(|i| response[i] == response[first]);
    if constant {
        if !design.has_intercept() {
            return Err(NumericsError::DegenerateResponse);
        }
        let mut coefficients = vec![T::zero(); p];
        coefficients[0] = logit(config.clip.apply(ybar));
        let fitted: Vec<T> = vec![expit(coefficients[0]); response.len()];
        let score = weighted_score(design, response, &fitted, weights);
        return Ok(GlmFit {
            coefficients,
            family: Family::BinomialLogit,
            diagnostics: GlmDiagnostics {
                iterations: 0,
                score_norm: max_abs(&score),
                step_halvings: 0,
                ridge_applied: false,
                degenerate_response: true,
            },
        });
    }

    let mut beta = vec![T::zero(); p];
    if design.has_intercept() {
        beta[0] = logit(ybar);
    }
    let x = design.matrix();
    let mut eta = x.mul_vec(&beta);
    let mut ll = log_likelihood(&eta, response, weights);
    let mut diagnostics = GlmDiagnostics::default();
    let tiny = T::epsilon() * T::lit(1e3);

    for iteration in 0..=config.max_iterations {
        let mu: Vec<T> = eta.iter().map(|&e| expit(e)).collect();
        let score = weighted_score(design, response, &mu, weights);
        let score_norm = max_abs(&score);
        diagnostics.iterations = iteration;
        diagnostics.score_norm = score_norm;
        if score_norm < config.score_tolerance {
            check_separation(&eta, weights, iteration, score_norm)?;
            return Ok(GlmFit { coefficients: beta, family: Family::BinomialLogit, diagnostics });
        }
        if iteration == config.max_iterations {
            break;
        }
        let info_w: Vec<T> = mu.iter().enumerate().map(|(i, &m)| w_of(i) * m * (T::one() - m)).collect();
        let info = x.weighted_gram(Some(&info_w));
        let sol = solve_spd(&info, &score)?;
        diagnostics.ridge_applied |= sol.ridge_applied;
        let step = sol.x;

        let mut scale = T::one();
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<T> = beta.iter().zip(&step).map(|(&b, &d)| b + scale * d).collect();
            let trial_eta = x.mul_vec(&trial);
            let trial_ll = log_likelihood(&trial_eta, response, weights);
            if trial_ll.is_finite() && trial_ll >= ll - tiny * (T::one() + ll.abs()) {
                beta = trial;
                eta = trial_eta;
                ll = trial_ll;
                accepted = true;
                break;
            }
            scale = scale / T::lit(2.0);
            diagnostics.step_halvings += 1;
        }
        let step_size = max_abs(&step) * scale;
        let beta_size = T::one() + max_abs(&beta);
        // Newton stalled at rounding level: the score cannot be reduced further.
        if !accepted || step_size <= T::epsilon() * T::lit(16.0) * beta_size {
            let mu: Vec<T> = eta.iter().map(|&e| expit(e)).collect();
            let score = weighted_score(design, response, &mu, weights);
            diagnostics.score_norm = max_abs(&score);
            diagnostics.iterations = iteration + 1;
            if diagnostics.score_norm.sqrt() < config.score_tolerance.sqrt() * T::lit(10.0) {
                check_separation(&eta, weights, iteration + 1, diagnostics.score_norm)?;
                return Ok(GlmFit { coefficients: beta, family: Family::BinomialLogit, diagnostics });
            }
            return Err(NumericsError::NonConvergence {
                iterations: iteration + 1,
                score_norm: diagnostics.score_norm.as_f64(),
            });
        }
    }
    Err(NumericsError::NonConvergence {
        iterations: config.max_iterations,
        score_norm: diagnostics.score_norm.as_f64(),
    })
}
