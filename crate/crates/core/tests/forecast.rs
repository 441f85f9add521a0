use nalgebra::{DMatrix, DVector};
use narvb_core::{
    backtest, fit, forecast_one, plugin_coefficients, select_structure, BacktestConfig,
    CoefficientTensor, EngineConfig, Estimator, IndicatorSet, Segmentation, SupportMask,
    TimeSeriesPanel, VariationalState,
};
use narvb_core::forecast::refit_restricted;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn state(p: usize, m: usize, seg: &Segmentation, phi: f64) -> VariationalState {
    let g = seg.g();
    let mut mu2 = Vec::new();
    let mut cov2 = Vec::new();
    for _ in 0..p {
        for i in 0..m {
            for k in 0..g {
                let d = seg.derived_group(i, k).unwrap().len();
                mu2.push(DVector::from_fn(d, |a, _| 0.1 * (a + 1) as f64 + i as f64));
                cov2.push(DMatrix::identity(d, d));
            }
        }
    }
    VariationalState {
        p,
        m,
        g,
        phi1: vec![phi; p * m],
        mu1: (0..p * m).map(|r| 0.5 + r as f64).collect(),
        var1: vec![1.0; p * m],
        phi2: vec![phi; p * m * g],
        mu2,
        cov2,
    }
}

fn ar_panel(seed: u64, t: usize, diag: &[f64], level: &[f64], noise: f64) -> TimeSeriesPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = diag.len();
    let mut v = DMatrix::zeros(t, m);
    let mut x = vec![0.0; m];
    for r in 0..t + 100 {
        for j in 0..m {
            x[j] = diag[j] * x[j] + noise * rng.sample::<f64, _>(StandardNormal);
            if r >= 100 {
                v[(r - 100, j)] = level[j] + x[j];
            }
        }
    }
    TimeSeriesPanel::from_values(v).unwrap()
}

#[test]
fn selection_thresholds() {
    let seg = Segmentation::universal(3);
    let st = state(2, 3, &seg, 0.5);
    let all = select_structure(&st);
    assert!(all.gamma_slice().iter().all(|b| *b));
    assert!(all.eta_slice().iter().all(|b| *b));
    let none = select_structure(&state(2, 3, &seg, 0.0));
    assert!(none.gamma_slice().iter().all(|b| !*b));
    assert!(none.eta_slice().iter().all(|b| !*b));
}

#[test]
fn plugin_examples() {
    let seg = Segmentation::from_one_based(&[vec![1, 2], vec![3]], 3).unwrap();
    let st = state(1, 3, &seg, 1.0);
    let mut ind = IndicatorSet::empty(1, 3, 2);
    assert_eq!(plugin_coefficients(&st, &ind, &seg).unwrap(), CoefficientTensor::zeros(1, 3));

    ind.set_gamma(0, 1, true);
    let b = plugin_coefficients(&st, &ind, &seg).unwrap();
    assert_eq!(b.get(0, 1, 1), st.mu1[1]);
    assert_eq!(b.nonzero_count(), 1);

    // node 3 (index 2), group {1, 2}: both cells take the block's means
    ind.set_eta(0, 2, 0, true);
    let b = plugin_coefficients(&st, &ind, &seg).unwrap();
    let mu = &st.mu2[st.group_index(0, 2, 0)];
    assert_eq!((b.get(0, 2, 0), b.get(0, 2, 1)), (mu[0], mu[1]));
    assert_eq!(b.nonzero_count(), 3);
    assert!(b.respects(&ind.support(&seg).unwrap()));

    let bad = IndicatorSet::empty(2, 3, 2);
    assert!(plugin_coefficients(&st, &bad, &seg).is_err());
}

#[test]
fn forecast_examples() {
    let b = CoefficientTensor::from_lags(vec![DMatrix::from_row_slice(1, 1, &[0.5])]).unwrap();
    let hist = TimeSeriesPanel::from_values(DMatrix::from_column_slice(2, 1, &[3.0, 4.0])).unwrap();
    let means = DVector::from_element(1, 2.0);
    // 2 + 0.5 * (4 - 2)
    assert_eq!(forecast_one(&hist, &b, &means).unwrap()[0], 3.0);

    let zero = CoefficientTensor::zeros(2, 1);
    assert_eq!(forecast_one(&hist, &zero, &means).unwrap()[0], 2.0);

    let short = TimeSeriesPanel::from_values(DMatrix::from_column_slice(1, 1, &[1.0])).unwrap();
    assert!(forecast_one(&short, &zero, &means).is_err());
}

/// Dense oracle: stacked lag row [y_T, y_{T-1}, ...] times the stacked tensor.
#[test]
fn forecast_matches_stacked_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (m, p, t) = (rng.random_range(1..5), rng.random_range(1..4), 8);
        let lags = (0..p)
            .map(|_| DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let b = CoefficientTensor::from_lags(lags).unwrap();
        let v = DMatrix::from_fn(t, m, |_, _| rng.random_range(-5.0..5.0));
        let means = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let got = forecast_one(&TimeSeriesPanel::from_values(v.clone()).unwrap(), &b, &means).unwrap();
        let mut x = DMatrix::zeros(1, m * p);
        for l in 0..p {
            for i in 0..m {
                x[(0, l * m + i)] = v[(t - 1 - l, i)] - means[i];
            }
        }
        let want = (x * b.stacked()).transpose() + &means;
        assert!((got - want).amax() < 1e-12);
    }
}

proptest! {
    #[test]
    fn forecast_is_linear_in_history(seed in 0u64..10_000, a in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = CoefficientTensor::from_lags(vec![
            DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)),
        ]).unwrap();
        let h1 = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let h2 = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let zero = DVector::zeros(3);
        let f = |h: &DMatrix<f64>| forecast_one(&TimeSeriesPanel::from_values(h.clone()).unwrap(), &b, &zero).unwrap();
        let lhs = f(&(&h1 * a + &h2));
        let rhs = f(&h1) * a + f(&h2);
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn raising_probabilities_only_adds_indicators(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seg = Segmentation::universal(3);
        let mut st = state(2, 3, &seg, 0.0);
        st.phi1.iter_mut().chain(st.phi2.iter_mut()).for_each(|p| *p = rng.random_range(0.0..1.0));
        let before = select_structure(&st);
        let mut up = st.clone();
        up.phi1.iter_mut().chain(up.phi2.iter_mut()).for_each(|p| *p = (*p + rng.random_range(0.0..0.3)).min(1.0));
        let after = select_structure(&up);
        for (a, b) in before.gamma_slice().iter().zip(after.gamma_slice()).chain(before.eta_slice().iter().zip(after.eta_slice())) {
            prop_assert!(!*a || *b);
        }
    }
}

fn bt_cfg(split: usize, every: usize) -> BacktestConfig {
    BacktestConfig {
        engine: EngineConfig::default(),
        split,
        refit_structure_every: every,
        estimator: Estimator::Ols,
    }
}

#[test]
fn backtest_with_no_test_rows_is_empty() {
    let panel = ar_panel(1, 30, &[0.5, 0.2], &[1.0, 2.0], 1.0);
    let r = backtest(&panel, &Segmentation::universal(2), 1, &bt_cfg(30, 1)).unwrap();
    assert!(r.is_empty());
    assert_eq!(r.mape, None);
    assert_eq!(r.nrmse, None);
    assert!(backtest(&panel, &Segmentation::universal(2), 1, &bt_cfg(31, 1)).is_err());
    assert!(backtest(&panel, &Segmentation::universal(2), 2, &bt_cfg(2, 1)).is_err());
}

#[test]
fn vanishing_noise_gives_vanishing_error() {
    let panel = ar_panel(2, 120, &[0.6, 0.4], &[10.0, 20.0], 1e-6);
    let r = backtest(&panel, &Segmentation::universal(2), 1, &bt_cfg(80, 10)).unwrap();
    assert_eq!(r.len(), 40);
    let mape = r.mape.unwrap().value;
    assert!(mape < 0.1, "{mape}");
}

/// A one-row test window is the same as fitting the training rows by hand and
/// forecasting one step.
#[test]
fn single_step_backtest_matches_manual_forecast() {
    let panel = ar_panel(3, 60, &[0.7, -0.3, 0.5], &[5.0, 6.0, 7.0], 1.0);
    let seg = Segmentation::singletons(3);
    let r = backtest(&panel, &seg, 2, &bt_cfg(59, 1)).unwrap();
    let train = panel.head(59);
    let f = fit(&train, &seg, 2, &EngineConfig::default()).unwrap();
    let want = forecast_one(&train, &f.result.coefficients, &f.means).unwrap();
    assert_eq!(r.forecasts.row(0).transpose(), want);
    assert_eq!(r.actuals.row(0), panel.values().row(59));
    assert!(r.steps[0].reselected);
}

#[test]
fn fixed_structure_steps_refit_on_the_support() {
    let panel = ar_panel(4, 80, &[0.8, 0.5], &[3.0, 4.0], 1.0);
    let r = backtest(&panel, &Segmentation::universal(2), 1, &bt_cfg(60, 0)).unwrap();
    assert!(r.steps[0].reselected);
    assert!(r.steps[1..].iter().all(|s| !s.reselected));
    assert!(r.forecasts.iter().all(|v| v.is_finite()));
}

/// Full support: OLS matches an unrestricted least-squares oracle, and GLS
/// with identical regressors in every equation coincides with OLS.
#[test]
fn restricted_refit_oracles() {
    let panel = ar_panel(5, 70, &[0.6, 0.3, -0.4], &[1.0, 2.0, 3.0], 1.0);
    let v = panel.values().clone();
    let mut full = SupportMask::empty(2, 3);
    for l in 0..2 {
        for i in 0..3 {
            for j in 0..3 {
                full.set(l, i, j, true);
            }
        }
    }
    let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 1.2, -0.2, 0.1, -0.2, 0.9]);
    let (ols, means) = refit_restricted(&v, &full, 2, Estimator::Ols, &sigma).unwrap();
    let (gls, _) = refit_restricted(&v, &full, 2, Estimator::Gls, &sigma).unwrap();

    let centred = DMatrix::from_fn(70, 3, |r, c| v[(r, c)] - means[c]);
    let y = centred.rows(2, 68).into_owned();
    let mut x = DMatrix::zeros(68, 6);
    x.columns_mut(0, 3).copy_from(&centred.rows(1, 68));
    x.columns_mut(3, 3).copy_from(&centred.rows(0, 68));
    let want = x.clone().svd(true, true).solve(&y, 1e-14).unwrap();
    assert!((ols.stacked() - &want).amax() < 1e-9);
    assert!((gls.stacked() - want).amax() < 1e-9);

    // restricted: only the diagonal of lag 1
    let mut diag = SupportMask::empty(2, 3);
    for i in 0..3 {
        diag.set(0, i, i, true);
    }
    let (b, _) = refit_restricted(&v, &diag, 2, Estimator::Ols, &sigma).unwrap();
    assert!(b.respects(&diag));
    for i in 0..3 {
        let xi = x.column(i);
        let want = xi.dot(&y.column(i)) / xi.dot(&xi);
        assert!((b.get(0, i, i) - want).abs() < 1e-12);
    }
}
