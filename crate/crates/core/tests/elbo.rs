use nalgebra::DMatrix;
use narvb_core::design::embed;
use narvb_core::oracle::exact_posterior;
use narvb_core::vb::PI_FLOOR;
use narvb_core::{
    demean, fit_fixed_hyperparams, Engine, EngineConfig, HyperParams, Segmentation,
    TimeSeriesPanel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn var1_panel(seed: u64, t: usize, m: usize, coef: f64) -> TimeSeriesPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = DMatrix::from_fn(m, m, |i, j| {
        if i == j || rng.random_bool(0.3) {
            coef * rng.random_range(-1.0..1.0)
        } else {
            0.0
        }
    });
    let mut v = DMatrix::<f64>::zeros(t, m);
    for r in 1..t {
        let prev = v.row(r - 1).into_owned();
        let e = DMatrix::from_fn(1, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        v.row_mut(r).copy_from(&(prev * &b + e));
    }
    TimeSeriesPanel::from_values(v).unwrap()
}

/// KL >= 0: the bound never exceeds the enumerated log evidence.
#[test]
fn elbo_is_below_the_exact_evidence() {
    for seed in 0..10 {
        let panel = var1_panel(seed, 40, 2, 0.6);
        let d = demean(&panel).unwrap();
        let dm = embed(&d.panel, 1).unwrap();
        let seg = Segmentation::universal(2);
        let engine = Engine::new(&dm, &seg).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.3]);
        let hp = HyperParams::new(0.3, 0.4, sigma, 0.8).unwrap();
        let exact = exact_posterior(&dm, &seg, &hp).unwrap();
        let (st, trace) = fit_fixed_hyperparams(&engine, &hp, &EngineConfig::default()).unwrap();
        let l = engine.elbo(&st, &hp).unwrap();
        assert_eq!(l, *trace.last().unwrap());
        assert!(l <= exact.log_evidence + 1e-8, "{l} > {}", exact.log_evidence);
        // and the bound is not vacuous
        assert!(exact.log_evidence - l < 5.0);
    }
}

/// Relative size of a central-difference derivative: |dL/dtheta| |theta| / max(1, |L|).
fn fd_relative(f: impl Fn(f64) -> f64, theta: f64) -> f64 {
    fd_relative_step(f, theta, 1e-5 * theta.abs().max(1e-12))
}

/// Probabilities step by 1e-5 of the distance to the nearer boundary.
fn fd_relative_prob(f: impl Fn(f64) -> f64, theta: f64) -> f64 {
    fd_relative_step(f, theta, 1e-5 * theta.min(1.0 - theta))
}

fn fd_relative_step(f: impl Fn(f64) -> f64, theta: f64, h: f64) -> f64 {
    let g = (f(theta + h) - f(theta - h)) / (2.0 * h);
    g.abs() * theta.abs() / f(theta).abs().max(1.0)
}

#[test]
fn m_step_output_is_stationary() {
    let mut worst: f64 = 0.0;
    let mut clamped = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let m = rng.random_range(2..5);
        let panel = var1_panel(seed, 80, m, 0.7);
        let d = demean(&panel).unwrap();
        let dm = embed(&d.panel, 1).unwrap();
        let seg = if seed % 2 == 0 { Segmentation::universal(m) } else { Segmentation::singletons(m) };
        let engine = Engine::new(&dm, &seg).unwrap();
        let (mut st, mut hp) = engine.initialize(&EngineConfig { pi_init: 0.3, ..Default::default() }).unwrap();
        for _ in 0..3 {
            engine.sweep(&mut st, &hp).unwrap();
            hp = engine.m_step(&st, &hp).unwrap().hyperparams;
        }
        let l = |h: &HyperParams| engine.elbo(&st, h).unwrap();
        // a probability on its clamp sits at a boundary optimum, not a stationary point
        let interior = |x: f64| x > PI_FLOOR && x < 1.0 - PI_FLOOR;
        let mut checks = vec![fd_relative(|x| l(&HyperParams { sigma2_b: x, ..hp.clone() }), hp.sigma2_b)];
        for (on, pi, which) in [(interior(hp.pi1), hp.pi1, 1), (interior(hp.pi2), hp.pi2, 2)] {
            if !on {
                clamped += 1;
                continue;
            }
            checks.push(fd_relative_prob(
                |x| {
                    let mut h = hp.clone();
                    if which == 1 { h.pi1 = x } else { h.pi2 = x }
                    l(&h)
                },
                pi,
            ));
        }
        for _ in 0..5 {
            let (a, b) = (rng.random_range(0..m), rng.random_range(0..m));
            let base = hp.sigma[(a, b)];
            checks.push(fd_relative(
                |x| {
                    let mut h = hp.clone();
                    h.sigma[(a, b)] = x;
                    h.sigma[(b, a)] = x;
                    l(&h)
                },
                base,
            ));
        }
        for c in checks {
            worst = worst.max(c);
        }
    }
    assert!(worst <= 1e-4, "{worst}");
    assert!(clamped <= 4, "{clamped}");
}
