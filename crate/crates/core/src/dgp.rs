//! Synthetic two-phase data: correlated normal covariates, a logistic
//! exposure, misclassified exposure measurements, validation selection that
//! is random, covariate-driven or driven by `(X, Y, A*)`, and a linear (or
//! logistic) outcome with treatment-by-covariate interactions.
//!
//! Potential outcomes are generated alongside the factual outcome so the
//! target effect can be checked directly.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::TwoPhaseDataset;
use crate::numerics::linalg::{cholesky_lower, Matrix};
use crate::numerics::DesignMatrix;
use crate::rng::stream_rng;
use crate::scalar::expit;

pub const DELTA_GRID: [f64; 4] = [0.95, 0.90, 0.85, 0.80];
pub const RHO_GRID: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
/// Selection coefficients `(η₀, η)` used for covariate-dependent sampling.
pub const COVARIATE_SELECTION: [f64; 4] = [0.0, 0.1, -0.2, 0.6];
/// Extra selection coefficients on `(Y, A*)` in the complex design.
pub const COMPLEX_SELECTION_EXTRA: [f64; 2] = [0.25, 0.25];

pub const VCCC_FALSE_POSITIVE_RATE: f64 = 0.420;
pub const VCCC_FALSE_NEGATIVE_RATE: f64 = 0.031;
pub const VCCC_PREVALENCE: f64 = 0.123;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DgpError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("root finding failed: {0}")]
    RootFindFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    CompletelyRandom,
    CovariateDependent,
    ComplexZDependent,
}

impl SamplingMode {
    pub fn name(self) -> &'static str {
        match self {
            SamplingMode::CompletelyRandom => "completely-random",
            SamplingMode::CovariateDependent => "covariate-dependent",
            SamplingMode::ComplexZDependent => "complex-z-dependent",
        }
    }
}

/// How `P(A* = 1 | A = 0)` is given. Both forms are accepted so a
/// specificity is never mistaken for a false-positive probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FalsePositiveSpec {
    /// `P(A* = 0 | A = 0)`; the false-positive probability is `1 - value`.
    Specificity(f64),
    /// `P(A* = 1 | A = 0)` directly.
    Rate(f64),
}

impl FalsePositiveSpec {
    pub fn false_positive_rate(self) -> f64 {
        match self {
            FalsePositiveSpec::Specificity(s) => 1.0 - s,
            FalsePositiveSpec::Rate(r) => r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeLink {
    /// `Y = β₀ + τA + Xᵀβ + AXᵀγ + ε`, `ε ~ N(0, σ²)`.
    Identity,
    /// `Y ~ Bernoulli(expit(β₀ + τA + Xᵀβ + AXᵀγ))`.
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n: usize,
    pub alpha0: f64,
    pub alpha: Vec<f64>,
    /// Sensitivity `P(A* = 1 | A = 1)`.
    pub delta: f64,
    pub false_positive: FalsePositiveSpec,
    pub eta0: f64,
    pub eta: Vec<f64>,
    /// Target validation fraction `E[S]`.
    pub rho: f64,
    pub tau: f64,
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub epsilon_sd: f64,
    pub sigma_x: Vec<Vec<f64>>,
    pub sampling_mode: SamplingMode,
    /// Selection coefficients on `Z = (X₁..X_p, Y, A*)` in complex mode.
    pub zeta_complex: Vec<f64>,
    pub outcome_link: OutcomeLink,
    pub seed: u64,
}

/// Simulation defaults: δ = 0.85 and ρ = 0.2 within the standard grids.
pub fn default_scenario() -> SimScenario {
    let eta: Vec<f64> = COVARIATE_SELECTION[1..].to_vec();
    let mut zeta_complex = eta.clone();
    zeta_complex.extend_from_slice(&COMPLEX_SELECTION_EXTRA);
    SimScenario {
        n: 5000,
        alpha0: 0.1,
        alpha: vec![-0.5, 0.3, 0.85],
        delta: 0.85,
        false_positive: FalsePositiveSpec::Specificity(0.95),
        eta0: COVARIATE_SELECTION[0],
        eta,
        rho: 0.2,
        tau: 1.0,
        beta0: 0.0,
        beta: vec![1.0, -3.0, 0.5],
        gamma: vec![0.2, 0.4, -0.6],
        epsilon_sd: 1.0,
        sigma_x: vec![vec![1.0, 0.25, 0.5], vec![0.25, 1.0, -0.4], vec![0.5, -0.4, 1.0]],
        sampling_mode: SamplingMode::CompletelyRandom,
        zeta_complex,
        outcome_link: OutcomeLink::Identity,
        seed: 0,
    }
}

impl SimScenario {
    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (1..=self.dim()).map(|j| format!("x{j}")).collect()
    }

    pub fn validate(&self) -> Result<(), DgpError> {
        let p = self.dim();
        let bad = |m: String| Err(DgpError::InvalidScenario(m));
        if p == 0 {
            return bad("at least one covariate is required".into());
        }
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        for (name, len) in [("eta", self.eta.len()), ("beta", self.beta.len()), ("gamma", self.gamma.len())] {
            if len != p {
                return bad(format!("{name} has {len} entries, expected {p}"));
            }
        }
        if self.zeta_complex.len() != p + 2 {
            return bad(format!("zeta_complex needs {} entries (X, Y, A*)", p + 2));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("delta = {} outside (0, 1]", self.delta));
        }
        let fp = self.false_positive.false_positive_rate();
        if !(0.0..1.0).contains(&fp) {
            return bad(format!("false-positive rate {fp} outside [0, 1)"));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad(format!("rho = {} outside (0, 1]", self.rho));
        }
        if !(self.epsilon_sd >= 0.0) {
            return bad("epsilon_sd must be non-negative".into());
        }
        if self.sigma_x.len() != p || self.sigma_x.iter().any(|r| r.len() != p) {
            return bad(format!("sigma_x must be {p}x{p}"));
        }
        for i in 0..p {
            for j in 0..p {
                if (self.sigma_x[i][j] - self.sigma_x[j][i]).abs() > 1e-12 {
                    return bad("sigma_x is not symmetric".into());
                }
            }
        }
        let all_finite = [self.alpha0, self.eta0, self.tau, self.beta0]
            .iter()
            .chain(&self.alpha)
            .chain(&self.eta)
            .chain(&self.beta)
            .chain(&self.gamma)
            .chain(&self.zeta_complex)
            .chain(self.sigma_x.iter().flatten())
            .all(|v| v.is_finite());
        if !all_finite {
            return bad("non-finite coefficient".into());
        }
        self.covariance_factor()?;
        Ok(())
    }

    fn covariance_factor(&self) -> Result<Matrix<f64>, DgpError> {
        let sigma = Matrix::from_rows(&self.sigma_x).map_err(|e| DgpError::InvalidScenario(e.to_string()))?;
        cholesky_lower(&sigma).ok_or_else(|| DgpError::InvalidScenario("sigma_x is not positive definite".into()))
    }

    fn linear_outcome(&self, a: f64, x: &[f64]) -> f64 {
        let mut m = self.beta0 + self.tau * a;
        for j in 0..x.len() {
            m += x[j] * (self.beta[j] + a * self.gamma[j]);
        }
        m
    }

    /// `E[Y(1) - Y(0)]` in closed form; only available for the identity link
    /// with covariate mean 1.
    pub fn analytic_tate(&self) -> Option<f64> {
        match self.outcome_link {
            OutcomeLink::Identity => Some(self.tau + self.gamma.iter().sum::<f64>()),
            OutcomeLink::Logistic => None,
        }
    }
}

/// A generated dataset together with the quantities only a simulator knows.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub data: TwoPhaseDataset<f64>,
    pub a_full: Vec<bool>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub kappa_true: Vec<f64>,
    /// Rows whose normalized selection probability exceeded 1 and was capped.
    pub kappa_capped: usize,
}

impl GeneratedSample {
    /// The observable dataset (drops the hidden columns).
    pub fn observed(&self) -> &TwoPhaseDataset<f64> {
        &self.data
    }
}

const STREAM_COVARIATES: u64 = 0;
const STREAM_EXPOSURE: u64 = 1;
const STREAM_MEASUREMENT: u64 = 2;
const STREAM_OUTCOME: u64 = 3;
const STREAM_SELECTION: u64 = 4;

fn draw_covariates<R: Rng>(rng: &mut R, chol: &Matrix<f64>, p: usize, out: &mut [f64]) {
    let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    for i in 0..p {
        let mut v = 1.0;
        for k in 0..=i {
            v += chol[(i, k)] * z[k];
        }
        out[i] = v;
    }
}

/// Draws one dataset. Identical `(scenario, seed)` give bit-identical output.
pub fn generate(scenario: &SimScenario, seed: u64) -> Result<GeneratedSample, DgpError> {
    scenario.validate()?;
    let n = scenario.n;
    let p = scenario.dim();
    let chol = scenario.covariance_factor()?;

    let mut cov_rng = stream_rng(seed, STREAM_COVARIATES);
    let mut x = vec![0.0; n * p];
    for i in 0..n {
        draw_covariates(&mut cov_rng, &chol, p, &mut x[i * p..(i + 1) * p]);
    }
    let row = |i: usize| &x[i * p..(i + 1) * p];

    let mut exp_rng = stream_rng(seed, STREAM_EXPOSURE);
    let a_full: Vec<bool> = (0..n)
        .map(|i| {
            let lin = scenario.alpha0 + row(i).iter().zip(&scenario.alpha).map(|(a, b)| a * b).sum::<f64>();
            exp_rng.gen::<f64>() < expit(lin)
        })
        .collect();

    let fp = scenario.false_positive.false_positive_rate();
    let mut meas_rng = stream_rng(seed, STREAM_MEASUREMENT);
    let a_star: Vec<bool> = a_full
        .iter()
        .map(|&a| {
            let u: f64 = meas_rng.gen();
            u < if a { scenario.delta } else { fp }
        })
        .collect();

    let mut out_rng = stream_rng(seed, STREAM_OUTCOME);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    for i in 0..n {
        let (m0, m1) = (scenario.linear_outcome(0.0, row(i)), scenario.linear_outcome(1.0, row(i)));
        match scenario.outcome_link {
            OutcomeLink::Identity => {
                let e: f64 = out_rng.sample::<f64, _>(StandardNormal) * scenario.epsilon_sd;
                y0.push(m0 + e);
                y1.push(m1 + e);
            }
            OutcomeLink::Logistic => {
                let u: f64 = out_rng.gen();
                y0.push(f64::from(u < expit(m0)));
                y1.push(f64::from(u < expit(m1)));
            }
        }
    }
    let y: Vec<f64> = (0..n).map(|i| if a_full[i] { y1[i] } else { y0[i] }).collect();

    let scores: Vec<f64> = match scenario.sampling_mode {
        SamplingMode::CompletelyRandom => vec![1.0; n],
        SamplingMode::CovariateDependent => (0..n)
            .map(|i| expit(scenario.eta0 + row(i).iter().zip(&scenario.eta).map(|(a, b)| a * b).sum::<f64>()))
            .collect(),
        SamplingMode::ComplexZDependent => (0..n)
            .map(|i| {
                let z = &scenario.zeta_complex;
                let lin = scenario.eta0
                    + row(i).iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
                    + z[p] * y[i]
                    + z[p + 1] * f64::from(u8::from(a_star[i]));
                expit(lin)
            })
            .collect(),
    };
    let mean_score = scores.iter().sum::<f64>() / n as f64;
    let mut kappa_capped = 0;
    let kappa_true: Vec<f64> = scores
        .iter()
        .map(|&sc| {
            let k = scenario.rho * sc / mean_score;
            if k > 1.0 {
                kappa_capped += 1;
                1.0
            } else {
                k
            }
        })
        .collect();

    let mut sel_rng = stream_rng(seed, STREAM_SELECTION);
    let s: Vec<bool> = kappa_true.iter().map(|&k| sel_rng.gen::<f64>() < k).collect();
    let a: Vec<Option<bool>> = (0..n).map(|i| s[i].then_some(a_full[i])).collect();

    let names = scenario.covariate_names();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let columns: Vec<Vec<f64>> = (0..p).map(|j| (0..n).map(|i| x[i * p + j]).collect()).collect();
    let col_refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    let design = DesignMatrix::from_columns(&name_refs, &col_refs, false)
        .map_err(|e| DgpError::InvalidScenario(e.to_string()))?;
    let known_kappa = (scenario.sampling_mode == SamplingMode::ComplexZDependent).then(|| kappa_true.clone());
    let data = TwoPhaseDataset::new(y, a_star, s, a, design, known_kappa)
        .map_err(|e| DgpError::InvalidScenario(e.to_string()))?;

    Ok(GeneratedSample { data, a_full, y0, y1, kappa_true, kappa_capped })
}

/// Monte Carlo estimate of `E[Y(1) - Y(0)]` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TateEstimate {
    pub mean: f64,
    pub se: f64,
    pub draws: usize,
}

pub const MIN_ORACLE_DRAWS: usize = 100_000;

/// Ground-truth effect by simulating potential outcomes directly.
pub fn true_tate(scenario: &SimScenario, draws: usize, seed: u64) -> Result<TateEstimate, DgpError> {
    scenario.validate()?;
    if draws < MIN_ORACLE_DRAWS {
        return Err(DgpError::InvalidScenario(format!("oracle needs at least {MIN_ORACLE_DRAWS} draws, got {draws}")));
    }
    let p = scenario.dim();
    let chol = scenario.covariance_factor()?;
    let mut cov_rng = stream_rng(seed, STREAM_COVARIATES);
    let mut out_rng = stream_rng(seed, STREAM_OUTCOME);
    let mut x = vec![0.0; p];

    const CHUNK: usize = 1 << 16;
    let mut chunk_sums = Vec::with_capacity(draws / CHUNK + 1);
    let mut chunk_sq = Vec::with_capacity(draws / CHUNK + 1);
    let mut done = 0;
    while done < draws {
        let len = CHUNK.min(draws - done);
        let (mut s, mut sq) = (0.0, 0.0);
        for _ in 0..len {
            draw_covariates(&mut cov_rng, &chol, p, &mut x);
            let (m0, m1) = (scenario.linear_outcome(0.0, &x), scenario.linear_outcome(1.0, &x));
            let d = match scenario.outcome_link {
                // Shared noise cancels in the contrast.
                OutcomeLink::Identity => m1 - m0,
                OutcomeLink::Logistic => {
                    let u: f64 = out_rng.gen();
                    f64::from(u < expit(m1)) - f64::from(u < expit(m0))
                }
            };
            s += d;
            sq += d * d;
        }
        chunk_sums.push(s);
        chunk_sq.push(sq);
        done += len;
    }
    let nf = draws as f64;
    let mean = crate::scalar::pairwise_sum(&chunk_sums) / nf;
    let var = (crate::scalar::pairwise_sum(&chunk_sq) - nf * mean * mean) / (nf - 1.0);
    Ok(TateEstimate { mean, se: (var.max(0.0) / nf).sqrt(), draws })
}

/// `E[expit(c + N(m, s²))]` by composite Simpson quadrature on ±12 sd.
fn logistic_normal_mean(c: f64, m: f64, s: f64) -> f64 {
    if s == 0.0 {
        return expit(c + m);
    }
    const STEPS: usize = 4000;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / STEPS as f64;
    let f = |z: f64| expit(c + m + s * z) * (-0.5 * z * z).exp();
    let mut acc = f(lo) + f(hi);
    for k in 1..STEPS {
        let z = lo + k as f64 * h;
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(z);
    }
    acc * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exposure intercept giving marginal `P(A = 1) = prevalence` under `scenario`.
pub fn solve_exposure_intercept(scenario: &SimScenario, prevalence: f64) -> Result<f64, DgpError> {
    if !(prevalence > 0.0 && prevalence < 1.0) {
        return Err(DgpError::RootFindFailure(format!("prevalence {prevalence} not in (0, 1)")));
    }
    let p = scenario.dim();
    // Xᵀα ~ N(1ᵀα, αᵀΣα)
    let m: f64 = scenario.alpha.iter().sum();
    let mut var = 0.0;
    for i in 0..p {
        for j in 0..p {
            var += scenario.alpha[i] * scenario.sigma_x[i][j] * scenario.alpha[j];
        }
    }
    let s = var.max(0.0).sqrt();
    let g = |c: f64| logistic_normal_mean(c, m, s) - prevalence;
    let (mut lo, mut hi) = (-40.0, 40.0);
    if g(lo) > 0.0 || g(hi) < 0.0 {
        return Err(DgpError::RootFindFailure("prevalence not bracketed".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Misclassification and prevalence resembling an HIV-cohort chart-review
/// setting: false-positive rate 0.420, false-negative rate 0.031, exposure
/// prevalence 0.123, binary outcome.
pub fn vccc_like_scenario() -> Result<SimScenario, DgpError> {
    let mut sc = default_scenario();
    sc.delta = 1.0 - VCCC_FALSE_NEGATIVE_RATE;
    sc.false_positive = FalsePositiveSpec::Rate(VCCC_FALSE_POSITIVE_RATE);
    sc.outcome_link = OutcomeLink::Logistic;
    sc.alpha0 = solve_exposure_intercept(&sc, VCCC_PREVALENCE)?;
    Ok(sc)
}
