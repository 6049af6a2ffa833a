use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cvme::dgp::{generate, SamplingMode};
use cvme::estimators::{
    estimate_control_variates, estimate_ipsw_cv, estimate_mi_pmm, estimate_oracle, estimate_validation_only,
    ControlVariateReport, EstimateReport, EstimationError, EstimatorTag, KappaModel, NuisanceSummary, SeSource,
    VarianceMethod, VarianceSpec,
};
use cvme::experiments::{relative_efficiency, run_grid_detailed, KappaSource, MetricsRow};
use cvme::rng::RNG_ALGORITHM;
use cvme::{Config, Dataset};
use serde_json::json;

use crate::config::{self, EstimateConfig, VarianceChoice};
use crate::dataset::{emit, read_dataset, render_dataset, write_atomic};
use crate::error::CliError;

/// One output line of `estimate`.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub tag: EstimatorTag,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub se_method: String,
    pub clipped: usize,
    pub degenerate_cv: Option<bool>,
    pub b_hat: Option<f64>,
    pub nuisance: String,
    pub error: Option<String>,
}

fn describe_nuisance(list: &[NuisanceSummary<f64>]) -> String {
    list.iter()
        .map(|s| {
            let w: Vec<String> = s.learner_weights.iter().map(|(k, w)| format!("{}={w}", k.name())).collect();
            let fb = if s.fallback_used { " fallback" } else { "" };
            format!("{}[{}{fb}]", s.name, w.join(" "))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn from_report(r: &EstimateReport<f64>, level: f64) -> Record {
    let (ci_low, ci_high) = r.ci(level);
    Record {
        tag: r.tag,
        estimate: r.estimate,
        se: r.se,
        ci_low,
        ci_high,
        se_method: match r.se_source {
            SeSource::Influence => "influence".into(),
            SeSource::Rubin { df } => format!("rubin-t(df={df})"),
        },
        clipped: r.clipped(),
        degenerate_cv: None,
        b_hat: None,
        nuisance: describe_nuisance(&r.nuisance),
        error: None,
    }
}

fn from_cv(tag: EstimatorTag, r: &ControlVariateReport<f64>, parts: &[&EstimateReport<f64>]) -> Record {
    let nuisance: Vec<NuisanceSummary<f64>> = parts.iter().flat_map(|p| p.nuisance.iter().cloned()).collect();
    Record {
        tag,
        estimate: r.tau_cv,
        se: r.se,
        ci_low: r.ci_low,
        ci_high: r.ci_high,
        se_method: match r.variance_method {
            VarianceMethod::Influence => "influence".into(),
            VarianceMethod::Bootstrap { replicates, failed } => format!("bootstrap(B={replicates},failed={failed})"),
        },
        clipped: parts.iter().map(|p| p.clipped()).sum(),
        degenerate_cv: Some(r.degenerate_cv),
        b_hat: Some(r.b_hat),
        nuisance: describe_nuisance(&nuisance),
        error: None,
    }
}

fn failed(tag: EstimatorTag, e: &EstimationError) -> Record {
    Record {
        tag,
        estimate: f64::NAN,
        se: f64::NAN,
        ci_low: f64::NAN,
        ci_high: f64::NAN,
        se_method: String::new(),
        clipped: 0,
        degenerate_cv: None,
        b_hat: None,
        nuisance: String::new(),
        error: Some(e.to_string()),
    }
}

/// Runs the requested estimators, sharing nuisance fits between those that
/// are computed together.
pub fn run_estimators(data: &Dataset, a_full: Option<&[bool]>, settings: &EstimateConfig, cfg: &Config) -> Vec<Record> {
    use EstimatorTag::*;
    let level = settings.level;
    let wants = |group: &[EstimatorTag]| settings.estimators.iter().any(|t| group.contains(t));
    let spec = match settings.variance_method {
        VarianceChoice::Influence => VarianceSpec::Influence,
        VarianceChoice::Bootstrap => {
            VarianceSpec::Bootstrap { replicates: settings.bootstrap_replicates, seed: settings.seed }
        }
    };
    let cv = wants(&[Naive, MainEp, Val, ValEp, Cv]).then(|| estimate_control_variates(data, cfg, spec, level));
    let kappa = match settings.kappa {
        KappaSource::Known => KappaModel::Known,
        KappaSource::Estimated => KappaModel::Estimated,
    };
    let ipsw = wants(&[IpswVal, IpswControl, IpswCv]).then(|| estimate_ipsw_cv(data, kappa, cfg, level));

    settings
        .estimators
        .iter()
        .map(|&tag| match tag {
            Oracle => {
                let full = match a_full {
                    Some(a) => data.with_full_exposure(a),
                    None => Ok(data.clone()),
                };
                match full.and_then(|d| estimate_oracle(&d, cfg)) {
                    Ok(r) => from_report(&r, level),
                    Err(e) => failed(tag, &e),
                }
            }
            ValidationOnly => match estimate_validation_only(data, cfg) {
                Ok(r) => from_report(&r, level),
                Err(e) => failed(tag, &e),
            },
            MiPmm => match estimate_mi_pmm(data, settings.mi(), cfg) {
                Ok(r) => from_report(&r, level),
                Err(e) => failed(tag, &e),
            },
            Naive | MainEp | Val | ValEp | Cv => match cv.as_ref().expect("requested") {
                Err(e) => failed(tag, e),
                Ok(est) => {
                    let c = &est.components;
                    match tag {
                        Naive => from_report(&c.main_ep.clone().with_tag(Naive), level),
                        MainEp => from_report(&c.main_ep, level),
                        Val => from_report(&c.val, level),
                        ValEp => from_report(&c.val_ep, level),
                        _ => from_cv(Cv, &est.report, &[&c.val, &c.val_ep, &c.main_ep]),
                    }
                }
            },
            IpswVal | IpswControl | IpswCv => match ipsw.as_ref().expect("requested") {
                Err(e) => failed(tag, e),
                Ok(r) => match tag {
                    IpswVal => from_report(&r.val, level),
                    IpswControl => from_report(&r.control, level),
                    _ => from_cv(IpswCv, &r.report, &[&r.val, &r.control]),
                },
            },
        })
        .collect()
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_records(records: &[Record], level: f64) -> String {
    let mut out = String::from(
        "estimator,estimate,se,ci_low,ci_high,level,se_method,clipped,degenerate_cv,b_hat,nuisance,error\n",
    );
    for r in records {
        let fields = [
            r.tag.name().to_string(),
            num(r.estimate),
            num(r.se),
            num(r.ci_low),
            num(r.ci_high),
            num(level),
            quote(&r.se_method),
            r.clipped.to_string(),
            r.degenerate_cv.map_or(String::new(), |b| b.to_string()),
            r.b_hat.map_or(String::new(), num),
            quote(&r.nuisance),
            quote(r.error.as_deref().unwrap_or("")),
        ];
        writeln!(out, "{}", fields.join(",")).expect("string write");
    }
    out
}

pub fn cmd_estimate(
    dataset: &Path,
    config_path: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut settings = config::load_estimate(config_path)?;
    if let Some(s) = seed {
        settings.seed = s;
    }
    let cfg = settings.nuisance.to_config(settings.seed)?;
    let loaded = read_dataset(dataset)?;
    let records = run_estimators(&loaded.data, loaded.a_full.as_deref(), &settings, &cfg);
    emit(out, render_records(&records, settings.level).as_bytes())?;
    let failures: Vec<String> =
        records.iter().filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.tag))).collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Estimation(failures.join("; ")))
    }
}

pub fn cmd_generate(
    config_path: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
    include_oracle: bool,
) -> Result<(), CliError> {
    let scenario = config::load_generate(config_path)?;
    let seed = seed.unwrap_or(scenario.seed);
    let sample = generate(&scenario, seed).map_err(|e| CliError::Config(e.to_string()))?;
    if sample.kappa_capped > 0 {
        eprintln!("note: {} sampling probabilities exceeded 1 and were capped", sample.kappa_capped);
    }
    emit(out, &render_dataset(&sample, include_oracle))
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), num)
}

pub fn render_metrics(rows: &[MetricsRow]) -> String {
    let mut out = String::from(
        "cell,sampling_mode,misspecification,n,delta,rho,estimator,target,replicates,failures,failure_flagged,\
mean_estimate,bias,percent_bias,coverage,rmse,empirical_sd,mean_se,relative_efficiency,\
mc_se_bias,mc_se_percent_bias,mc_se_coverage,mc_se_rmse,mc_se_mean_se\n",
    );
    for r in rows {
        let fields = [
            r.cell.to_string(),
            r.sampling_mode.name().to_string(),
            r.misspecification.name().to_string(),
            r.n.to_string(),
            num(r.delta),
            num(r.rho),
            r.estimator.name().to_string(),
            num(r.target),
            r.replicates.to_string(),
            r.failures.to_string(),
            r.failure_flagged.to_string(),
            num(r.mean_estimate),
            num(r.bias),
            num(r.percent_bias),
            num(r.coverage),
            num(r.rmse),
            num(r.empirical_sd),
            num(r.mean_se),
            opt(r.relative_efficiency),
            num(r.mc_se_bias),
            num(r.mc_se_percent_bias),
            num(r.mc_se_coverage),
            num(r.mc_se_rmse),
            num(r.mc_se_mean_se),
        ];
        writeln!(out, "{}", fields.join(",")).expect("string write");
    }
    out
}

pub fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

pub fn cmd_simulate(config_path: &Path, seed: Option<u64>, threads: Option<usize>, out: &Path) -> Result<(), CliError> {
    let mut sim = config::load_simulate(config_path)?;
    if let Some(s) = seed {
        sim.grid.seed_root = s;
    }
    let started = Instant::now();
    let progress = |done: usize, total: usize| {
        if done % 50 == 0 || done == total {
            eprintln!("{done}/{total} replicates");
        }
    };
    let run = run_grid_detailed(&sim.grid, threads, &progress).map_err(|e| CliError::Config(e.to_string()))?;
    let rows = match sim.reference {
        Some(r) if !run.rows.is_empty() => {
            relative_efficiency(&run.rows, r).map_err(|e| CliError::Config(e.to_string()))?
        }
        _ => run.rows.clone(),
    };
    let elapsed = started.elapsed().as_secs_f64();
    write_atomic(out, render_metrics(&rows).as_bytes())?;

    let flagged: Vec<_> = rows
        .iter()
        .filter(|r| r.failures > 0)
        .map(
            |r| json!({"cell": r.cell, "estimator": r.estimator, "failures": r.failures, "flagged": r.failure_flagged}),
        )
        .collect();
    let manifest = json!({
        "software": {"name": "cvme", "version": env!("CARGO_PKG_VERSION")},
        "rng": RNG_ALGORITHM,
        "grid": sim.grid,
        "reference": sim.reference,
        "cells": run.cells,
        "tau_true": run.tau_true,
        "failures": flagged,
        "mi_interval": "Student t with Barnard-Rubin degrees of freedom",
        "threads": threads,
        "elapsed_seconds": elapsed,
        "metrics_file": out.file_name().map(|f| f.to_string_lossy().to_string()),
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&manifest_path(out), text.as_bytes())
}

pub fn cmd_benchmark(config_path: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let bench = config::load_benchmark(config_path)?;
    let mut text = String::from("sampling_mode,n,estimator,repetitions,mean_ms,min_ms,max_ms\n");
    let modes = [SamplingMode::CompletelyRandom, SamplingMode::CovariateDependent, SamplingMode::ComplexZDependent];
    for mode in modes {
        let mut scenario = cvme::dgp::default_scenario();
        scenario.n = bench.n;
        scenario.sampling_mode = mode;
        let sample = generate(&scenario, bench.seed).map_err(|e| CliError::Config(e.to_string()))?;
        for &tag in &bench.estimators {
            let settings = EstimateConfig { estimators: vec![tag], seed: bench.seed, ..EstimateConfig::default() };
            let cfg = settings.nuisance.to_config(bench.seed)?;
            let mut times = Vec::with_capacity(bench.repetitions);
            let mut ok = true;
            for _ in 0..bench.repetitions {
                let t = Instant::now();
                let r = run_estimators(&sample.data, Some(&sample.a_full), &settings, &cfg);
                times.push(t.elapsed().as_secs_f64() * 1e3);
                ok &= r.iter().all(|r| r.error.is_none());
            }
            if !ok {
                writeln!(text, "{},{},{},{},,,", mode.name(), bench.n, tag.name(), bench.repetitions)
                    .expect("string write");
                continue;
            }
            let mean = times.iter().sum::<f64>() / times.len() as f64;
            let min = times.iter().copied().fold(f64::INFINITY, f64::min);
            let max = times.iter().copied().fold(0.0, f64::max);
            writeln!(
                text,
                "{},{},{},{},{mean:.3},{min:.3},{max:.3}",
                mode.name(),
                bench.n,
                tag.name(),
                bench.repetitions
            )
            .expect("string write");
        }
    }
    emit(out, text.as_bytes())
}
