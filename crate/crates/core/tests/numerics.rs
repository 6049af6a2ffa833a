use cvme::dgp::{default_scenario, generate, SimScenario};
use cvme::numerics::*;
use cvme::scalar::expit;
use proptest::prelude::*;

fn design(cols: &[Vec<f64>]) -> DesignMatrix<f64> {
    let names: Vec<String> = (1..=cols.len()).map(|j| format!("x{j}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let c: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    DesignMatrix::from_columns(&refs, &c, true).unwrap()
}

fn score(d: &DesignMatrix<f64>, y: &[f64], fitted: &[f64], w: Option<&[f64]>) -> f64 {
    (0..d.cols())
        .map(|j| (0..d.rows()).map(|i| w.map_or(1.0, |w| w[i]) * d.row(i)[j] * (y[i] - fitted[i])).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

#[test]
fn logistic_recovers_exposure_model_on_a_million_rows() {
    let sc = SimScenario { n: 1_000_000, ..default_scenario() };
    let g = generate(&sc, 42).unwrap();
    let x = g.data.x();
    let cols: Vec<Vec<f64>> = (0..3).map(|j| x.column(j)).collect();
    let d = design(&cols);
    let y: Vec<f64> = g.a_full.iter().map(|&a| f64::from(u8::from(a))).collect();
    let fit = fit_glm(&d, &y, Family::BinomialLogit, None, &IrlsConfig::default()).unwrap();
    for (b, want) in fit.coefficients.iter().zip([0.1, -0.5, 0.3, 0.85]) {
        assert!((b - want).abs() < 0.02, "{:?}", fit.coefficients);
    }
}

#[test]
fn stacked_propensity_at_the_mean_covariate() {
    let sc = SimScenario { n: 200_000, ..default_scenario() };
    let g = generate(&sc, 43).unwrap();
    let x = g.data.x();
    let y: Vec<f64> = g.a_full.iter().map(|&a| f64::from(u8::from(a))).collect();
    let d = design(&(0..3).map(|j| x.column(j)).collect::<Vec<_>>());
    let fit = fit_super_learner(&d, &y, Family::BinomialLogit, &LearnerKind::ALL, None, &StackingOptions::default(), 1)
        .unwrap();
    let at = design(&[vec![1.0], vec![1.0], vec![1.0]]);
    let p = fit.predict(&at).unwrap()[0];
    assert!((p - expit(0.75)).abs() < 0.02, "{p}");
}

fn binary_problem() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    (30usize..120).prop_flat_map(|n| {
        (
            proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, n), 2),
            proptest::collection::vec(0.0f64..1.0, n),
            proptest::collection::vec(0.1f64..3.0, n),
        )
            .prop_map(|(cols, u, w)| {
                // Outcomes from a moderate logistic model so the MLE exists.
                let y: Vec<f64> = (0..u.len())
                    .map(|i| f64::from(u8::from(u[i] < expit(0.3 + 0.8 * cols[0][i] - 0.5 * cols[1][i]))))
                    .collect();
                (cols, y, w)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn converged_logistic_fits_solve_the_score_equations((cols, y, w) in binary_problem()) {
        let d = design(&cols);
        if let Ok(fit) = fit_glm(&d, &y, Family::BinomialLogit, Some(&w), &IrlsConfig::default()) {
            let fitted: Vec<f64> = (0..d.rows())
                .map(|i| expit(d.row(i).iter().zip(&fit.coefficients).map(|(a, b)| a * b).sum()))
                .collect();
            if !fit.diagnostics.degenerate_response {
                prop_assert!(score(&d, &y, &fitted, Some(&w)) < 1e-6);
            }
        }
    }

    #[test]
    fn gaussian_fit_is_weighted_least_squares(
        (cols, _y, w) in binary_problem(),
        noise in proptest::collection::vec(-1.0f64..1.0, 120),
    ) {
        let d = design(&cols);
        let y: Vec<f64> = (0..d.rows()).map(|i| 1.0 + 2.0 * cols[0][i] - cols[1][i] + noise[i]).collect();
        let fit = fit_glm(&d, &y, Family::GaussianIdentity, Some(&w), &IrlsConfig::default()).unwrap();
        // Closed form: solve (XᵀWX) b = XᵀWy by Gaussian elimination.
        let p = d.cols();
        let mut a = vec![vec![0.0; p + 1]; p];
        for i in 0..d.rows() {
            let r = d.row(i);
            for j in 0..p {
                for k in 0..p {
                    a[j][k] += w[i] * r[j] * r[k];
                }
                a[j][p] += w[i] * r[j] * y[i];
            }
        }
        for c in 0..p {
            let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..p {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=p {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        for j in 0..p {
            let want = a[j][p] / a[j][j];
            prop_assert!((fit.coefficients[j] - want).abs() < 1e-10 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn nnls_satisfies_kkt(
        rows in 5usize..40,
        cols in 1usize..5,
        seed in proptest::collection::vec(-3.0f64..3.0, 200),
        b in proptest::collection::vec(-3.0f64..3.0, 40),
    ) {
        let a = Matrix::from_row_major(rows, cols, seed[..rows * cols].to_vec()).unwrap();
        let b = &b[..rows];
        let sol = nnls(&a, b).unwrap();
        let ax: Vec<f64> = (0..rows).map(|i| a.row(i).iter().zip(&sol.x).map(|(p, q)| p * q).sum()).collect();
        for j in 0..cols {
            let g: f64 = (0..rows).map(|i| a.row(i)[j] * (ax[i] - b[i])).sum();
            prop_assert!(sol.x[j] >= 0.0);
            prop_assert!(g >= -1e-8);
            prop_assert!(sol.x[j] * g <= 1e-8);
        }
    }

    #[test]
    fn stacking_weights_lie_on_the_simplex((cols, y, _w) in binary_problem(), seed in 0u64..1000) {
        let d = design(&cols);
        let opts = StackingOptions { folds: 5, ..StackingOptions::default() };
        let fit = fit_super_learner(&d, &y, Family::BinomialLogit, &LearnerKind::ALL, None, &opts, seed).unwrap();
        let w = fit.learner_weights();
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let again = fit_super_learner(&d, &y, Family::BinomialLogit, &LearnerKind::ALL, None, &opts, seed).unwrap();
        prop_assert_eq!(fit.predict(&d).unwrap(), again.predict(&d).unwrap());
    }
}
