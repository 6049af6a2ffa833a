//! Monte Carlo harness: scenario grids, replicated estimation and the
//! usual operating characteristics (bias, coverage, RMSE, efficiency).

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgp::{default_scenario, generate, true_tate, DgpError, SamplingMode, SimScenario};
use crate::estimators::{
    combine_control_variates, estimate_components, estimate_ipsw_cv, estimate_mi_pmm, estimate_oracle,
    estimate_validation_only, EstimateReport, EstimationError, EstimatorTag, KappaModel, MiConfig, NuisanceConfig,
};
use crate::numerics::{ClipBounds, IrlsConfig, LearnerKind};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("reference estimator {reference} missing in cell {cell}")]
    MissingReference { reference: EstimatorTag, cell: usize },
    #[error(transparent)]
    Dgp(#[from] DgpError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Deliberate nuisance misspecification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Misspecification {
    None,
    /// Outcome library limited to main effects (no exposure interactions).
    Outcome,
    /// Exposure models limited to the marginal mean.
    Propensity,
}

impl Misspecification {
    pub fn name(self) -> &'static str {
        match self {
            Misspecification::None => "none",
            Misspecification::Outcome => "outcome",
            Misspecification::Propensity => "propensity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaSource {
    Known,
    Estimated,
}

/// Serializable nuisance settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuisanceSettings {
    pub outcome_library: Vec<LearnerKind>,
    pub propensity_library: Vec<LearnerKind>,
    pub sampling_library: Vec<LearnerKind>,
    pub folds: usize,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub positivity_threshold: f64,
    pub cross_fit_folds: Option<usize>,
    pub share_error_prone_outcome: bool,
    pub min_validation: usize,
    pub irls_max_iterations: usize,
    pub irls_tolerance: f64,
}

impl Default for NuisanceSettings {
    fn default() -> Self {
        let c = NuisanceConfig::<f64>::default();
        Self {
            outcome_library: c.outcome_library,
            propensity_library: c.propensity_library,
            sampling_library: c.sampling_library,
            folds: c.folds,
            clip_lo: c.clip.lo,
            clip_hi: c.clip.hi,
            positivity_threshold: c.positivity_threshold,
            cross_fit_folds: c.cross_fit_folds,
            share_error_prone_outcome: c.share_error_prone_outcome,
            min_validation: c.min_validation,
            irls_max_iterations: c.irls.max_iterations,
            irls_tolerance: c.irls.score_tolerance,
        }
    }
}

impl NuisanceSettings {
    pub fn to_config(&self, seed: u64) -> Result<NuisanceConfig<f64>, EstimationError> {
        let clip =
            ClipBounds::new(self.clip_lo, self.clip_hi).map_err(|e| EstimationError::InvalidConfig(e.to_string()))?;
        if self.irls_max_iterations == 0 || !(self.irls_tolerance > 0.0) {
            return Err(EstimationError::InvalidConfig("IRLS limits must be positive".into()));
        }
        let cfg = NuisanceConfig {
            outcome_library: self.outcome_library.clone(),
            propensity_library: self.propensity_library.clone(),
            sampling_library: self.sampling_library.clone(),
            folds: self.folds,
            clip,
            irls: IrlsConfig { max_iterations: self.irls_max_iterations, score_tolerance: self.irls_tolerance, clip },
            positivity_threshold: self.positivity_threshold,
            cross_fit_folds: self.cross_fit_folds,
            share_error_prone_outcome: self.share_error_prone_outcome,
            min_validation: self.min_validation,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentGrid {
    pub base: SimScenario,
    pub rho: Vec<f64>,
    pub delta: Vec<f64>,
    pub n: Vec<usize>,
    pub sampling_mode: Vec<SamplingMode>,
    pub misspecification: Vec<Misspecification>,
    pub estimators: Vec<EstimatorTag>,
    pub replicates: usize,
    pub seed_root: u64,
    pub level: f64,
    pub nuisance: NuisanceSettings,
    pub mi_imputations: usize,
    pub mi_donors: usize,
    pub kappa: KappaSource,
    /// Monte Carlo draws for the true effect when no closed form exists.
    pub oracle_draws: usize,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        let base = default_scenario();
        Self {
            rho: vec![base.rho],
            delta: vec![base.delta],
            n: vec![2000],
            sampling_mode: vec![base.sampling_mode],
            misspecification: vec![Misspecification::None],
            estimators: vec![EstimatorTag::Oracle, EstimatorTag::Naive, EstimatorTag::Val, EstimatorTag::Cv],
            replicates: 500,
            seed_root: 0,
            level: 0.95,
            nuisance: NuisanceSettings::default(),
            mi_imputations: MiConfig::default().imputations,
            mi_donors: MiConfig::default().donors,
            kappa: KappaSource::Known,
            oracle_draws: 1_000_000,
            base,
        }
    }
}

/// One point of the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub index: usize,
    pub rho: f64,
    pub delta: f64,
    pub n: usize,
    pub sampling_mode: SamplingMode,
    pub misspecification: Misspecification,
    pub seed: u64,
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidGrid(m.to_string()));
        if self.estimators.is_empty() {
            return bad("estimator set is empty");
        }
        if self.rho.is_empty()
            || self.delta.is_empty()
            || self.n.is_empty()
            || self.sampling_mode.is_empty()
            || self.misspecification.is_empty()
        {
            return bad("every axis needs at least one value");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level must lie in (0, 1)");
        }
        if self.mi_imputations == 0 || self.mi_donors == 0 {
            return bad("mi_imputations and mi_donors must be positive");
        }
        if self.oracle_draws < crate::dgp::MIN_ORACLE_DRAWS {
            return bad("oracle_draws below the minimum");
        }
        self.nuisance.to_config(0).map_err(|e| ExperimentError::InvalidGrid(e.to_string()))?;
        for c in self.cells() {
            self.scenario(&c).validate()?;
        }
        Ok(())
    }

    /// Cartesian product in the order mode, misspecification, n, δ, ρ.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &sampling_mode in &self.sampling_mode {
            for &misspecification in &self.misspecification {
                for &n in &self.n {
                    for &delta in &self.delta {
                        for &rho in &self.rho {
                            let index = out.len();
                            out.push(Cell {
                                index,
                                rho,
                                delta,
                                n,
                                sampling_mode,
                                misspecification,
                                seed: derive_seed(self.seed_root, &[index as u64]),
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn scenario(&self, cell: &Cell) -> SimScenario {
        SimScenario {
            n: cell.n,
            rho: cell.rho,
            delta: cell.delta,
            sampling_mode: cell.sampling_mode,
            ..self.base.clone()
        }
    }

    fn nuisance_for(&self, cell: &Cell, seed: u64) -> NuisanceConfig<f64> {
        let mut cfg = self.nuisance.to_config(seed).expect("validated settings");
        match cell.misspecification {
            Misspecification::None => {}
            Misspecification::Outcome => cfg.outcome_library = vec![LearnerKind::GlmMainEffects],
            Misspecification::Propensity => cfg.propensity_library = vec![LearnerKind::Mean],
        }
        cfg
    }
}

/// Outcome of one estimator on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub cell: usize,
    pub replicate: usize,
    pub estimator: EstimatorTag,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Set for control-variates estimators.
    pub degenerate_cv: Option<bool>,
    pub error: Option<String>,
}

fn record(
    cell: usize,
    replicate: usize,
    tag: EstimatorTag,
    r: Result<(f64, f64, f64, f64), String>,
) -> ReplicateRecord {
    match r {
        Ok((estimate, se, ci_low, ci_high)) => ReplicateRecord {
            cell,
            replicate,
            estimator: tag,
            estimate,
            se,
            ci_low,
            ci_high,
            degenerate_cv: None,
            error: None,
        },
        Err(e) => ReplicateRecord {
            cell,
            replicate,
            estimator: tag,
            estimate: f64::NAN,
            se: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
            degenerate_cv: None,
            error: Some(e),
        },
    }
}

fn from_report(r: &EstimateReport<f64>, level: f64) -> (f64, f64, f64, f64) {
    let (lo, hi) = r.ci(level);
    (r.estimate, r.se, lo, hi)
}

/// Runs every requested estimator on one generated dataset.
fn run_replicate(grid: &ExperimentGrid, cell: &Cell, replicate: usize) -> Vec<ReplicateRecord> {
    let seed = derive_seed(cell.seed, &[replicate as u64]);
    let scenario = grid.scenario(cell);
    let cfg = grid.nuisance_for(cell, seed);
    let level = grid.level;
    let tags = &grid.estimators;
    let fail_all = |e: String| tags.iter().map(|&t| record(cell.index, replicate, t, Err(e.clone()))).collect();
    let sample = match generate(&scenario, seed) {
        Ok(s) => s,
        Err(e) => return fail_all(e.to_string()),
    };
    let data = &sample.data;
    let wants = |group: &[EstimatorTag]| tags.iter().any(|t| group.contains(t));

    use EstimatorTag::*;
    let components = wants(&[Naive, MainEp, Val, ValEp, Cv]).then(|| {
        estimate_components(data, &cfg).and_then(|c| {
            let cv = combine_control_variates(&c.val, &c.val_ep, &c.main_ep, level)?;
            Ok((c, cv))
        })
    });
    let ipsw = wants(&[IpswVal, IpswControl, IpswCv]).then(|| {
        let model = match grid.kappa {
            KappaSource::Known => KappaModel::Known,
            KappaSource::Estimated => KappaModel::Estimated,
        };
        estimate_ipsw_cv(data, model, &cfg, level)
    });

    let err = |e: &EstimationError| e.to_string();
    tags.iter()
        .map(|&tag| {
            let r: Result<(f64, f64, f64, f64), String> = match tag {
                Oracle => data
                    .with_full_exposure(&sample.a_full)
                    .and_then(|full| estimate_oracle(&full, &cfg))
                    .map(|r| from_report(&r, level))
                    .map_err(|e| err(&e)),
                ValidationOnly => {
                    estimate_validation_only(data, &cfg).map(|r| from_report(&r, level)).map_err(|e| err(&e))
                }
                MiPmm => {
                    let mi = MiConfig { imputations: grid.mi_imputations, donors: grid.mi_donors };
                    estimate_mi_pmm(data, mi, &cfg).map(|r| from_report(&r, level)).map_err(|e| err(&e))
                }
                Naive | MainEp | Val | ValEp | Cv => match components.as_ref().expect("requested") {
                    Err(e) => Err(err(e)),
                    Ok((c, cv)) => Ok(match tag {
                        Naive | MainEp => from_report(&c.main_ep, level),
                        Val => from_report(&c.val, level),
                        ValEp => from_report(&c.val_ep, level),
                        _ => (cv.tau_cv, cv.se, cv.ci_low, cv.ci_high),
                    }),
                },
                IpswVal | IpswControl | IpswCv => match ipsw.as_ref().expect("requested") {
                    Err(e) => Err(err(e)),
                    Ok(r) => Ok(match tag {
                        IpswVal => from_report(&r.val, level),
                        IpswControl => from_report(&r.control, level),
                        _ => (r.report.tau_cv, r.report.se, r.report.ci_low, r.report.ci_high),
                    }),
                },
            };
            let mut rec = record(cell.index, replicate, tag, r);
            if rec.error.is_none() {
                rec.degenerate_cv = match tag {
                    Cv => components.as_ref().and_then(|c| c.as_ref().ok()).map(|(_, cv)| cv.degenerate_cv),
                    IpswCv => ipsw.as_ref().and_then(|r| r.as_ref().ok()).map(|r| r.report.degenerate_cv),
                    _ => None,
                };
            }
            rec
        })
        .collect()
}

/// Per-cell, per-estimator operating characteristics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub cell: usize,
    pub rho: f64,
    pub delta: f64,
    pub n: usize,
    pub sampling_mode: SamplingMode,
    pub misspecification: Misspecification,
    pub estimator: EstimatorTag,
    /// Value the estimator targets: the true effect, or 0 for a control variate.
    pub target: f64,
    pub replicates: usize,
    pub failures: usize,
    /// More than 2% of replicates failed.
    pub failure_flagged: bool,
    pub mean_estimate: f64,
    pub bias: f64,
    pub percent_bias: f64,
    pub coverage: f64,
    pub rmse: f64,
    pub empirical_sd: f64,
    pub mean_se: f64,
    pub relative_efficiency: Option<f64>,
    pub mc_se_bias: f64,
    pub mc_se_percent_bias: f64,
    pub mc_se_coverage: f64,
    pub mc_se_rmse: f64,
    pub mc_se_mean_se: f64,
}

pub const FAILURE_FLAG_FRACTION: f64 = 0.02;

fn mean(v: &[f64]) -> f64 {
    crate::scalar::pairwise_sum(v) / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    crate::scalar::variance(v).sqrt()
}

/// Aggregates successful replicates of one estimator in one cell, in
/// replicate order.
pub fn summarize(cell: &Cell, tag: EstimatorTag, target: f64, records: &[&ReplicateRecord]) -> MetricsRow {
    let ok: Vec<&&ReplicateRecord> = records.iter().filter(|r| r.error.is_none() && r.estimate.is_finite()).collect();
    let failures = records.len() - ok.len();
    let r = ok.len();
    let rf = r as f64;
    let est: Vec<f64> = ok.iter().map(|x| x.estimate).collect();
    let errors: Vec<f64> = est.iter().map(|e| e - target).collect();
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let covered: Vec<f64> = ok.iter().map(|x| f64::from(u8::from(x.ci_low <= target && target <= x.ci_high))).collect();
    let ses: Vec<f64> = ok.iter().map(|x| x.se).collect();

    let bias = mean(&errors);
    let rmse = mean(&sq).sqrt();
    let coverage = mean(&covered);
    let empirical_sd = sd(&est);
    let pct = |v: f64| if target != 0.0 { 100.0 * v / target } else { f64::NAN };
    MetricsRow {
        cell: cell.index,
        rho: cell.rho,
        delta: cell.delta,
        n: cell.n,
        sampling_mode: cell.sampling_mode,
        misspecification: cell.misspecification,
        estimator: tag,
        target,
        replicates: r,
        failures,
        failure_flagged: failures as f64 > FAILURE_FLAG_FRACTION * records.len() as f64,
        mean_estimate: mean(&est),
        bias,
        percent_bias: pct(bias),
        coverage,
        rmse,
        empirical_sd,
        mean_se: mean(&ses),
        relative_efficiency: None,
        mc_se_bias: empirical_sd / rf.sqrt(),
        mc_se_percent_bias: pct(empirical_sd / rf.sqrt()).abs(),
        mc_se_coverage: (coverage * (1.0 - coverage) / rf).sqrt(),
        mc_se_rmse: sd(&sq) / (2.0 * rmse * rf.sqrt()),
        mc_se_mean_se: sd(&ses) / rf.sqrt(),
    }
}

/// Raw per-replicate records together with the aggregated rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRun {
    pub cells: Vec<Cell>,
    pub tau_true: Vec<f64>,
    pub records: Vec<ReplicateRecord>,
    pub rows: Vec<MetricsRow>,
}

/// True effect for a cell: closed form for the linear outcome, Monte Carlo
/// otherwise.
pub fn cell_truth(grid: &ExperimentGrid, cell: &Cell) -> Result<f64, ExperimentError> {
    let sc = grid.scenario(cell);
    match sc.analytic_tate() {
        Some(t) => Ok(t),
        None => Ok(true_tate(&sc, grid.oracle_draws, derive_seed(cell.seed, &[u64::MAX]))?.mean),
    }
}

/// Runs the grid on a pool of `threads` workers (all cores when `None`).
/// Output does not depend on the number of workers.
pub fn run_grid_detailed(
    grid: &ExperimentGrid,
    threads: Option<usize>,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<GridRun, ExperimentError> {
    grid.validate()?;
    let cells = grid.cells();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build().map_err(|e| ExperimentError::Pool(e.to_string()))?;

    let tau_true = pool.install(|| cells.par_iter().map(|c| cell_truth(grid, c)).collect::<Result<Vec<_>, _>>())?;
    let work: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..grid.replicates).map(move |r| (c, r))).collect();
    let total = work.len();
    let done = AtomicUsize::new(0);
    let per_item: Vec<Vec<ReplicateRecord>> = pool.install(|| {
        work.par_iter()
            .map(|&(c, r)| {
                let out = run_replicate(grid, &cells[c], r);
                progress(done.fetch_add(1, Ordering::Relaxed) + 1, total);
                out
            })
            .collect()
    });
    let records: Vec<ReplicateRecord> = per_item.into_iter().flatten().collect();

    let mut rows = Vec::new();
    if grid.replicates > 0 {
        for cell in &cells {
            for &tag in &grid.estimators {
                let recs: Vec<&ReplicateRecord> =
                    records.iter().filter(|r| r.cell == cell.index && r.estimator == tag).collect();
                let target = if tag == EstimatorTag::IpswControl { 0.0 } else { tau_true[cell.index] };
                rows.push(summarize(cell, tag, target, &recs));
            }
        }
    }
    Ok(GridRun { cells, tau_true, records, rows })
}

pub fn run_grid(
    grid: &ExperimentGrid,
    threads: Option<usize>,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<Vec<MetricsRow>, ExperimentError> {
    run_grid_detailed(grid, threads, progress).map(|r| r.rows)
}

/// Fills `relative_efficiency` with `var(reference) / var(estimator)` per cell.
pub fn relative_efficiency(rows: &[MetricsRow], reference: EstimatorTag) -> Result<Vec<MetricsRow>, ExperimentError> {
    let mut out = rows.to_vec();
    for row in out.iter_mut() {
        let r = rows
            .iter()
            .find(|x| x.cell == row.cell && x.estimator == reference)
            .ok_or(ExperimentError::MissingReference { reference, cell: row.cell })?;
        row.relative_efficiency = Some(r.empirical_sd.powi(2) / row.empirical_sd.powi(2));
    }
    Ok(out)
}

/// One-sample Kolmogorov–Smirnov test against the standard normal.
/// Returns the statistic and its asymptotic p-value.
pub fn ks_standard_normal(samples: &[f64]) -> (f64, f64) {
    use statrs::distribution::{ContinuousCDF, Normal};
    let norm = Normal::new(0.0, 1.0).expect("standard normal");
    let mut x: Vec<f64> = samples.to_vec();
    x.sort_by(|a, b| a.total_cmp(b));
    let n = x.len() as f64;
    let d = x.iter().enumerate().fold(0.0f64, |d, (i, &v)| {
        let f = norm.cdf(v);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    });
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        p += if k % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}
