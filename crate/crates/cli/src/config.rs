//! TOML configuration files. Unknown keys are rejected everywhere.

use std::path::Path;

use cvme::dgp::{default_scenario, vccc_like_scenario, SimScenario};
use cvme::estimators::{EstimatorTag, MiConfig};
use cvme::experiments::{ExperimentGrid, KappaSource, NuisanceSettings};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::CliError;

pub const SCHEMA: &str = r#"cvme configuration files (TOML; unknown keys are errors)

estimate --config FILE
  estimators            list of: oracle naive validation-only val val-ep main-ep cv
                        ipsw-val ipsw-control ipsw-cv mi-pmm        default ["cv"]
  level                 confidence level in (0, 1)                   default 0.95
  seed                  u64, nuisance fold seed                      default 0
  variance_method       "influence" | "bootstrap"                    default "influence"
  bootstrap_replicates  >= 2                                         default 400
  kappa                 "known" (file column) | "estimated"          default "known"
  mi_imputations        >= 1                                         default 10
  mi_donors             >= 1                                         default 5
  [nuisance]            see below

[nuisance]
  outcome_library       list of: mean glm-main-effects glm-pairwise-interactions
  propensity_library    same choices; also used for imputation models
  sampling_library      same choices
  folds                 super learner folds >= 2                     default 10
  clip_lo, clip_hi      probability clipping bounds                  default 0.01, 0.99
  positivity_threshold  max fraction of clipped rows                 default 0.25
  cross_fit_folds       omit for none, else >= 2
  share_error_prone_outcome  bool                                    default false
  min_validation        minimum validated rows                       default 20
  irls_max_iterations   default 100
  irls_tolerance        max |score| at convergence                   default 1e-8

generate --config FILE
  preset                "default" | "vccc-like"                      default "default"
  [scenario]            any subset of the scenario keys below; the rest come from the preset
    n alpha0 alpha delta false_positive eta0 eta rho tau beta0 beta gamma epsilon_sd
    sigma_x sampling_mode zeta_complex outcome_link seed
    false_positive      { specificity = 0.95 } or { rate = 0.05 }
    sampling_mode       "completely-random" | "covariate-dependent" | "complex-z-dependent"
    outcome_link        "identity" | "logistic"

simulate --config FILE
  reference             estimator for relative efficiency (optional)
  preset                base scenario preset, as for generate
  [grid]
    rho, delta, n       axis value lists
    sampling_mode       list of sampling modes
    misspecification    list of: "none" "outcome" "propensity"
    estimators          non-empty list of estimator names
    replicates          count per cell
    seed_root           u64
    level               confidence level                             default 0.95
    mi_imputations, mi_donors
    kappa               "known" | "estimated"
    oracle_draws        Monte Carlo draws for the true effect (>= 100000)
    [grid.base]         scenario overrides, as [scenario] above
    [grid.nuisance]     as [nuisance] above

benchmark --config FILE
  n                     rows per dataset                             default 2000
  repetitions           timed runs per estimator                     default 3
  seed                  u64                                          default 0
  estimators            list of estimator names                      default all but oracle
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceChoice {
    Influence,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Default,
    VcccLike,
}

impl Preset {
    pub fn scenario(self) -> Result<SimScenario, CliError> {
        match self {
            Preset::Default => Ok(default_scenario()),
            Preset::VcccLike => vccc_like_scenario().map_err(|e| CliError::Config(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub estimators: Vec<EstimatorTag>,
    pub level: f64,
    pub seed: u64,
    pub variance_method: VarianceChoice,
    pub bootstrap_replicates: usize,
    pub kappa: KappaSource,
    pub mi_imputations: usize,
    pub mi_donors: usize,
    pub nuisance: NuisanceSettings,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            estimators: vec![EstimatorTag::Cv],
            level: 0.95,
            seed: 0,
            variance_method: VarianceChoice::Influence,
            bootstrap_replicates: 400,
            kappa: KappaSource::Known,
            mi_imputations: MiConfig::default().imputations,
            mi_donors: MiConfig::default().donors,
            nuisance: NuisanceSettings::default(),
        }
    }
}

impl EstimateConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if self.estimators.is_empty() {
            return bad("estimators must not be empty");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level must lie in (0, 1)");
        }
        if self.bootstrap_replicates < 2 {
            return bad("bootstrap_replicates must be at least 2");
        }
        if self.mi_imputations == 0 || self.mi_donors == 0 {
            return bad("mi_imputations and mi_donors must be positive");
        }
        self.nuisance.to_config(self.seed)?;
        Ok(())
    }

    pub fn mi(&self) -> MiConfig {
        MiConfig { imputations: self.mi_imputations, donors: self.mi_donors }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub n: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorTag>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            repetitions: 3,
            seed: 0,
            estimators: EstimatorTag::ALL.iter().copied().filter(|&t| t != EstimatorTag::Oracle).collect(),
        }
    }
}

pub struct SimulateConfig {
    pub reference: Option<EstimatorTag>,
    pub grid: ExperimentGrid,
}

fn read_table(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.parse::<toml::Table>().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn from_value<T: DeserializeOwned>(v: toml::Value, what: &str) -> Result<T, CliError> {
    v.try_into().map_err(|e: toml::de::Error| CliError::Config(format!("{what}: {}", e.message())))
}

/// Applies key-by-key overrides to a preset scenario.
fn scenario_with(base: SimScenario, overrides: Option<toml::Value>) -> Result<SimScenario, CliError> {
    let Some(overrides) = overrides else { return Ok(base) };
    let toml::Value::Table(overrides) = overrides else {
        return Err(CliError::Config("scenario must be a table".into()));
    };
    let mut merged = match toml::Value::try_from(&base) {
        Ok(toml::Value::Table(t)) => t,
        _ => return Err(CliError::Config("preset scenario is not representable in TOML".into())),
    };
    for (k, v) in overrides {
        if !merged.contains_key(&k) {
            return Err(CliError::Config(format!("unknown scenario key {k:?}")));
        }
        merged.insert(k, v);
    }
    let scenario: SimScenario = from_value(toml::Value::Table(merged), "scenario")?;
    scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(scenario)
}

fn take_preset(table: &mut toml::Table) -> Result<Preset, CliError> {
    table.remove("preset").map_or(Ok(Preset::Default), |v| from_value(v, "preset"))
}

pub fn load_estimate(path: Option<&Path>) -> Result<EstimateConfig, CliError> {
    let cfg = match path {
        Some(p) => from_value(toml::Value::Table(read_table(p)?), "estimate config")?,
        None => EstimateConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_generate(path: Option<&Path>) -> Result<SimScenario, CliError> {
    let Some(path) = path else { return Ok(default_scenario()) };
    let mut table = read_table(path)?;
    let preset = take_preset(&mut table)?;
    let overrides = table.remove("scenario");
    if let Some(k) = table.keys().next() {
        return Err(CliError::Config(format!("unknown key {k:?}")));
    }
    scenario_with(preset.scenario()?, overrides)
}

pub fn load_simulate(path: &Path) -> Result<SimulateConfig, CliError> {
    let mut table = read_table(path)?;
    let preset = take_preset(&mut table)?;
    let reference = table.remove("reference").map(|v| from_value(v, "reference")).transpose()?;
    let mut grid_table = match table.remove("grid") {
        Some(toml::Value::Table(t)) => t,
        Some(_) => return Err(CliError::Config("grid must be a table".into())),
        None => toml::Table::new(),
    };
    if let Some(k) = table.keys().next() {
        return Err(CliError::Config(format!("unknown key {k:?}")));
    }
    let base = scenario_with(preset.scenario()?, grid_table.remove("base"))?;
    let mut grid: ExperimentGrid = from_value(toml::Value::Table(grid_table), "grid")?;
    grid.base = base;
    grid.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(r) = reference {
        if !grid.estimators.contains(&r) {
            return Err(CliError::Config(format!("reference {r} is not in the estimator set")));
        }
    }
    Ok(SimulateConfig { reference, grid })
}

pub fn load_benchmark(path: Option<&Path>) -> Result<BenchmarkConfig, CliError> {
    let cfg: BenchmarkConfig = match path {
        Some(p) => from_value(toml::Value::Table(read_table(p)?), "benchmark config")?,
        None => BenchmarkConfig::default(),
    };
    if cfg.n == 0 || cfg.repetitions == 0 || cfg.estimators.is_empty() {
        return Err(CliError::Config("n, repetitions and estimators must be non-empty".into()));
    }
    Ok(cfg)
}
