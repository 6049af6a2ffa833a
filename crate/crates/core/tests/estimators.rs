use cvme::dgp::{
    default_scenario, generate, true_tate, vccc_like_scenario, FalsePositiveSpec, SamplingMode, SimScenario,
};
use cvme::estimators::*;
use cvme::numerics::LearnerKind;
use cvme::Config;

fn scenario(n: usize) -> SimScenario {
    SimScenario { n, ..default_scenario() }
}

fn within_3se(r: &EstimateReport<f64>, truth: f64) -> bool {
    (r.estimate - truth).abs() < 3.0 * r.se
}

#[test]
fn fully_validated_generalization_is_aipw_bit_for_bit() {
    let sc = SimScenario { rho: 1.0, ..scenario(800) };
    let g = generate(&sc, 11).unwrap();
    assert_eq!(g.data.n_val(), g.data.n());
    let cfg = Config::default();
    let val = estimate_generalization(&g.data, ExposureSource::Validated, &cfg).unwrap();
    let aipw = estimate_oracle(&g.data, &cfg).unwrap();
    assert_eq!(val.estimate.to_bits(), aipw.estimate.to_bits());
    assert_eq!(val.influence, aipw.influence);
}

#[test]
fn exact_measurement_collapses() {
    let sc = SimScenario { delta: 1.0, false_positive: FalsePositiveSpec::Rate(0.0), ..scenario(1000) };
    let g = generate(&sc, 5).unwrap();
    assert_eq!(g.data.a_star(), &g.a_full[..]);
    let cfg = Config::default();
    let full = g.data.with_full_exposure(&g.a_full).unwrap();
    let naive = estimate_naive(&g.data, &cfg).unwrap();
    let oracle = estimate_oracle(&full, &cfg).unwrap();
    assert_eq!(naive.estimate.to_bits(), oracle.estimate.to_bits());

    let c = estimate_components(&g.data, &cfg).unwrap();
    assert_eq!(c.val_ep.estimate.to_bits(), c.val.estimate.to_bits());
    let cv = combine_control_variates(&c.val, &c.val_ep, &c.main_ep, 0.95).unwrap();
    let drift = (cv.tau_cv - cv.tau_val).abs();
    assert!(drift <= cv.b_hat.abs() * (c.val_ep.estimate - c.main_ep.estimate).abs() + 1e-15);
}

#[test]
fn exact_measurement_control_variate_is_centered() {
    let sc = SimScenario { delta: 1.0, false_positive: FalsePositiveSpec::Rate(0.0), ..scenario(600) };
    let cfg = Config::default();
    let diffs: Vec<f64> = (0..200)
        .map(|seed| {
            let g = generate(&sc, 1000 + seed).unwrap();
            let c = estimate_components(&g.data, &cfg).unwrap();
            c.val_ep.estimate - c.main_ep.estimate
        })
        .collect();
    let m = diffs.iter().sum::<f64>() / 200.0;
    let sd = (diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / 199.0).sqrt();
    assert!(m.abs() < 3.0 * sd / 200f64.sqrt(), "mean {m}, sd {sd}");
}

#[test]
fn control_variates_are_deterministic_and_dominate() {
    let g = generate(&scenario(1500), 21).unwrap();
    let cfg = Config { seed: 9, ..Config::default() };
    let a = estimate_control_variates(&g.data, &cfg, VarianceSpec::Influence, 0.95).unwrap();
    let b = estimate_control_variates(&g.data, &cfg, VarianceSpec::Influence, 0.95).unwrap();
    assert_eq!(a, b);
    let r = &a.report;
    assert!(!r.degenerate_cv);
    assert!(r.se <= r.se_val);
    assert!((r.se * r.se - (r.v_hat - r.gamma_hat.powi(2) / r.v_big_hat) / r.n as f64).abs() < 1e-12);
    assert_eq!(r.tau_cv, r.tau_val - r.b_hat * (r.tau_val_ep - r.tau_main_ep));
    for rep in [&a.components.val, &a.components.val_ep, &a.components.main_ep] {
        assert!(rep.influence_mean().abs() < 1e-10);
    }
}

#[test]
fn estimates_are_reproducible_from_the_seed_alone() {
    let g = generate(&scenario(1000), 3).unwrap();
    let cfg = Config { seed: 4, ..Config::default() };
    let mi = MiConfig { imputations: 3, donors: 5 };
    assert_eq!(estimate_mi_pmm(&g.data, mi, &cfg).unwrap(), estimate_mi_pmm(&g.data, mi, &cfg).unwrap());
}

#[test]
fn unit_sampling_probabilities_reduce_ipsw() {
    let sc = SimScenario { rho: 1.0, ..scenario(800) };
    let g = generate(&sc, 2).unwrap();
    let ones = vec![1.0; g.data.n()];
    let x = g.data.x().clone();
    let data = Dataset::new(
        g.data.y().to_vec(),
        g.data.a_star().to_vec(),
        g.data.s().to_vec(),
        g.data.a().to_vec(),
        x,
        Some(ones),
    )
    .unwrap();
    let cfg = Config::default();
    let r = estimate_ipsw_cv(&data, KappaModel::Known, &cfg, 0.95).unwrap();
    let aipw = estimate_oracle(&data, &cfg).unwrap();
    assert_eq!(r.val.estimate.to_bits(), aipw.estimate.to_bits());
    assert!(r.control.influence.iter().all(|&v| v == 0.0));
    assert_eq!(r.control.estimate, 0.0);
    assert!(r.report.degenerate_cv);
    assert_eq!(r.report.tau_cv, r.val.estimate);
}

type Dataset = TwoPhaseDataset<f64>;

#[test]
fn mi_without_missing_exposure_is_a_single_aipw() {
    let sc = SimScenario { rho: 1.0, ..scenario(600) };
    let g = generate(&sc, 8).unwrap();
    let cfg = Config::default();
    let mi = estimate_mi_pmm(&g.data, MiConfig::default(), &cfg).unwrap();
    let aipw = estimate_oracle(&g.data, &cfg).unwrap();
    assert!((mi.estimate - aipw.estimate).abs() < 1e-12);
    assert!((mi.se - aipw.se).abs() < 1e-12);
}

#[test]
fn donor_pool_must_exceed_donor_count() {
    let sc = SimScenario { rho: 0.01, ..scenario(300) };
    let g = generate(&sc, 1).unwrap();
    let mi = MiConfig { imputations: 2, donors: g.data.n_val() };
    assert!(matches!(
        estimate_mi_pmm(&g.data, mi, &Config::default()),
        Err(EstimationError::DonorPoolExhausted { .. })
    ));
}

#[test]
fn too_few_validated_rows_are_rejected() {
    let sc = SimScenario { rho: 0.005, ..scenario(1000) };
    let g = generate(&sc, 1).unwrap();
    assert!(g.data.n_val() < 20);
    assert!(matches!(
        estimate_control_variates(&g.data, &Config::default(), VarianceSpec::Influence, 0.95),
        Err(EstimationError::InsufficientValidation { .. })
    ));
}

#[test]
fn known_kappa_is_required_when_requested() {
    let g = generate(&scenario(500), 1).unwrap();
    assert!(matches!(
        estimate_ipsw_val(&g.data, KappaModel::Known, &Config::default()),
        Err(EstimationError::MissingKappa)
    ));
}

#[test]
fn bootstrap_and_influence_agree_on_small_resample_count() {
    let g = generate(&scenario(600), 13).unwrap();
    let cfg = Config::default();
    let boot =
        estimate_control_variates(&g.data, &cfg, VarianceSpec::Bootstrap { replicates: 30, seed: 1 }, 0.95).unwrap();
    let infl = estimate_control_variates(&g.data, &cfg, VarianceSpec::Influence, 0.95).unwrap();
    assert_eq!(boot.report.tau_val, infl.report.tau_val);
    assert!(matches!(boot.report.variance_method, VarianceMethod::Bootstrap { replicates: 30, .. }));
    assert!(boot.report.v_hat > 0.0 && boot.report.v_big_hat > 0.0);
}

// Large-sample consistency checks.

#[test]
fn oracle_and_naive_on_a_large_sample() {
    let sc = SimScenario { delta: 0.8, ..scenario(100_000) };
    let g = generate(&sc, 17).unwrap();
    let cfg = Config::default();
    let full = g.data.with_full_exposure(&g.a_full).unwrap();
    assert!(within_3se(&estimate_oracle(&full, &cfg).unwrap(), 1.0));
    let naive = estimate_naive(&g.data, &cfg).unwrap();
    assert!((naive.estimate - 1.0).abs() > 0.1, "{}", naive.estimate);

    let exact = SimScenario { delta: 1.0, false_positive: FalsePositiveSpec::Rate(0.0), ..sc };
    let g = generate(&exact, 18).unwrap();
    assert!(within_3se(&estimate_naive(&g.data, &cfg).unwrap(), 1.0));
}

#[test]
fn generalization_corrects_covariate_shift() {
    let sc = SimScenario { rho: 0.3, sampling_mode: SamplingMode::CovariateDependent, ..scenario(100_000) };
    let g = generate(&sc, 19).unwrap();
    let r = estimate_generalization(&g.data, ExposureSource::Validated, &Config::default()).unwrap();
    assert!(within_3se(&r, 1.0), "{} ± {}", r.estimate, r.se);
}

#[test]
fn ipsw_on_outcome_dependent_sampling() {
    let sc = SimScenario { sampling_mode: SamplingMode::ComplexZDependent, ..scenario(100_000) };
    let g = generate(&sc, 23).unwrap();
    let r = estimate_ipsw_cv(&g.data, KappaModel::Known, &Config::default(), 0.95).unwrap();
    assert!(within_3se(&r.val, 1.0), "{} ± {}", r.val.estimate, r.val.se);
    assert!(r.control.estimate.abs() < 3.0 * r.control.se);
}

#[test]
fn either_nuisance_may_be_misspecified() {
    let sc = SimScenario { sampling_mode: SamplingMode::CovariateDependent, ..scenario(100_000) };
    let g = generate(&sc, 29).unwrap();
    let outcome_wrong = Config { outcome_library: vec![LearnerKind::GlmMainEffects], ..Config::default() };
    let propensity_wrong = Config { propensity_library: vec![LearnerKind::Mean], ..Config::default() };
    for cfg in [outcome_wrong, propensity_wrong] {
        let r = estimate_control_variates(&g.data, &cfg, VarianceSpec::Influence, 0.95).unwrap().report;
        assert!((r.tau_cv - 1.0).abs() < 3.0 * r.se, "{} ± {}", r.tau_cv, r.se);
    }
}

#[test]
fn vccc_misclassification_biases_naive_strongly() {
    let sc = SimScenario { n: 100_000, ..vccc_like_scenario().unwrap() };
    let truth = true_tate(&sc, 1_000_000, 1).unwrap().mean;
    let g = generate(&sc, 31).unwrap();
    let naive = estimate_naive(&g.data, &Config::default()).unwrap();
    assert!(((naive.estimate - truth) / truth).abs() > 0.25, "{} vs {truth}", naive.estimate);
}
