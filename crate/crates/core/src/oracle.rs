//! Exact posterior for tiny models by enumerating every indicator
//! configuration and integrating the active coefficients in closed form.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::design::DesignMatrices;
use crate::error::{Error, Result};
use crate::math::{exp, ln, log_sum_exp, spd_inverse_logdet, LN_2PI};
use crate::types::{HyperParams, Segmentation, VariationalState};

pub const MAX_INDICATORS: usize = 16;

/// An enumerated indicator: own-lag `(lag, node)` or group `(lag, node, group)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Own { lag: usize, node: usize },
    Group { lag: usize, node: usize, group: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosterior {
    pub log_evidence: f64,
    pub slots: Vec<Slot>,
    /// `P(gamma = 1 | Y)`, laid out like `VariationalState::phi1`.
    pub gamma_probs: Vec<f64>,
    /// `P(eta = 1 | Y)`, laid out like `VariationalState::phi2`; empty groups
    /// carry 0.
    pub eta_probs: Vec<f64>,
    /// Log joint weight of each configuration; bit `s` of the index is slot `s`.
    pub log_weights: Vec<f64>,
}

impl ExactPosterior {
    /// Normalised probability of configuration `config`.
    pub fn config_prob(&self, config: usize) -> f64 {
        exp(self.log_weights[config] - self.log_evidence)
    }
}

pub fn exact_posterior(
    dm: &DesignMatrices,
    seg: &Segmentation,
    hp: &HyperParams,
) -> Result<ExactPosterior> {
    hp.validate()?;
    let (m, p) = (dm.dims.m, dm.dims.p);
    let g = seg.g();
    if seg.m() != m || hp.sigma.nrows() != m {
        return Err(Error::ShapeMismatch { context: "oracle inputs" });
    }
    let mut slots = Vec::new();
    for l in 0..p {
        for i in 0..m {
            slots.push(Slot::Own { lag: l, node: i });
            for k in 0..g {
                if !seg.derived(i, k).is_empty() {
                    slots.push(Slot::Group { lag: l, node: i, group: k });
                }
            }
        }
    }
    if slots.len() > MAX_INDICATORS {
        return Err(Error::TooManyIndicators { count: slots.len(), limit: MAX_INDICATORS });
    }

    let x = dm.x();
    let gram = x.tr_mul(&x);
    let xty = x.tr_mul(&dm.y);
    let (lambda, logdet_sigma) = spd_inverse_logdet(&hp.sigma, "Sigma")?;
    let n = dm.dims.n_eff as f64;
    let base = -0.5 * n * m as f64 * LN_2PI
        - 0.5 * n * logdet_sigma
        - 0.5 * lambda.component_mul(&dm.y.tr_mul(&dm.y)).sum();
    // c[(r, j)] = (X'Y Lambda)[r, j]
    let c = &xty * &lambda;
    let ln_s2 = ln(hp.sigma2_b);

    let configs = 1usize << slots.len();
    let mut log_weights = Vec::with_capacity(configs);
    for config in 0..configs {
        let mut entries: Vec<(usize, usize)> = Vec::new();
        let mut prior = 0.0;
        for (s, slot) in slots.iter().enumerate() {
            let on = config >> s & 1 == 1;
            let (pi, cells): (f64, Vec<(usize, usize)>) = match *slot {
                Slot::Own { lag, node } => (hp.pi1, alloc::vec![(lag * m + node, node)]),
                Slot::Group { lag, node, group } => (
                    hp.pi2,
                    seg.derived(node, group).iter().map(|&j| (lag * m + node, j)).collect(),
                ),
            };
            if on {
                prior += ln(pi);
                entries.extend(cells);
            } else {
                prior += ln(1.0 - pi);
            }
        }
        let k = entries.len();
        let mut lw = base + prior;
        if k > 0 {
            let mut prec = DMatrix::from_fn(k, k, |a, b| {
                let (ra, ja) = entries[a];
                let (rb, jb) = entries[b];
                lambda[(ja, jb)] * gram[(ra, rb)]
            });
            for a in 0..k {
                prec[(a, a)] += 1.0 / hp.sigma2_b;
            }
            let rhs = DVector::from_fn(k, |a, _| c[entries[a]]);
            let (cov, logdet_prec) = spd_inverse_logdet(&prec, "oracle precision")?;
            lw += -0.5 * k as f64 * ln_s2 - 0.5 * logdet_prec + 0.5 * rhs.dot(&(&cov * &rhs));
        }
        log_weights.push(lw);
    }
    let log_evidence = log_sum_exp(&log_weights);
    if !log_evidence.is_finite() {
        return Err(Error::NonFinite { context: "oracle evidence" });
    }

    let mut gamma_probs = alloc::vec![0.0; m * p];
    let mut eta_probs = alloc::vec![0.0; m * p * g];
    for (config, lw) in log_weights.iter().enumerate() {
        let w = exp(lw - log_evidence);
        for (s, slot) in slots.iter().enumerate() {
            if config >> s & 1 == 1 {
                match *slot {
                    Slot::Own { lag, node } => gamma_probs[lag * m + node] += w,
                    Slot::Group { lag, node, group } => {
                        eta_probs[(lag * m + node) * g + group] += w
                    }
                }
            }
        }
    }
    Ok(ExactPosterior { log_evidence, slots, gamma_probs, eta_probs, log_weights })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub max_abs_diff: f64,
    /// Indicators whose median-probability selections differ.
    pub mismatches: usize,
    pub selections_match: bool,
}

pub fn agreement(exact: &ExactPosterior, vb: &VariationalState) -> Result<Agreement> {
    if exact.gamma_probs.len() != vb.phi1.len() || exact.eta_probs.len() != vb.phi2.len() {
        return Err(Error::ShapeMismatch { context: "exact posterior vs variational state" });
    }
    let mut max_abs_diff: f64 = 0.0;
    let mut mismatches = 0;
    let g = vb.g;
    for slot in &exact.slots {
        let (e, q) = match *slot {
            Slot::Own { lag, node } => {
                let r = vb.own_index(lag, node);
                (exact.gamma_probs[r], vb.phi1[r])
            }
            Slot::Group { lag, node, group } => {
                let r = (lag * vb.m + node) * g + group;
                (exact.eta_probs[r], vb.phi2[r])
            }
        };
        max_abs_diff = max_abs_diff.max((e - q).abs());
        if (e >= 0.5) != (q >= 0.5) {
            mismatches += 1;
        }
    }
    Ok(Agreement { max_abs_diff, mismatches, selections_match: mismatches == 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::embed;
    use crate::types::TimeSeriesPanel;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn ar_panel(t: usize, diag: f64, seed: u64) -> TimeSeriesPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = DMatrix::zeros(t, 2);
        for r in 1..t {
            for j in 0..2 {
                let e: f64 = rng.sample(StandardNormal);
                v[(r, j)] = diag * v[(r - 1, j)] + e;
            }
        }
        TimeSeriesPanel::from_values(v).unwrap()
    }

    #[test]
    fn weights_normalise_and_marginals_are_probabilities() {
        let dm = embed(&ar_panel(60, 0.3, 1), 1).unwrap();
        let seg = Segmentation::universal(2);
        let hp = HyperParams::new(0.3, 0.2, DMatrix::identity(2, 2), 1.0).unwrap();
        let ex = exact_posterior(&dm, &seg, &hp).unwrap();
        assert_eq!(ex.slots.len(), 4);
        let total: f64 = (0..16).map(|c| ex.config_prob(c)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for p in ex.gamma_probs.iter().chain(&ex.eta_probs) {
            assert!((0.0..=1.0 + 1e-12).contains(p));
        }
    }

    #[test]
    fn strong_diagonal_signal_is_found() {
        let dm = embed(&ar_panel(400, 0.8, 3), 1).unwrap();
        let seg = Segmentation::universal(2);
        let hp = HyperParams::new(0.5, 0.5, DMatrix::identity(2, 2), 1.0).unwrap();
        let ex = exact_posterior(&dm, &seg, &hp).unwrap();
        assert!(ex.gamma_probs[0] > 0.99 && ex.gamma_probs[1] > 0.99, "{:?}", ex.gamma_probs);
    }

    #[test]
    fn identical_columns_get_identical_probabilities() {
        // zero-signal data where both nodes carry the same series
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let col: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
        let v = DMatrix::from_fn(40, 2, |r, _| col[r]);
        let dm = embed(&TimeSeriesPanel::from_values(v).unwrap(), 1).unwrap();
        let seg = Segmentation::universal(2);
        let hp = HyperParams::new(0.5, 0.5, DMatrix::identity(2, 2), 1.0).unwrap();
        let ex = exact_posterior(&dm, &seg, &hp).unwrap();
        assert!((ex.gamma_probs[0] - ex.gamma_probs[1]).abs() < 1e-12);
        assert!((ex.eta_probs[0] - ex.eta_probs[1]).abs() < 1e-12);
    }

    #[test]
    fn collapsing_slab_returns_the_prior() {
        let panel = TimeSeriesPanel::from_values(DMatrix::from_column_slice(
            5,
            1,
            &[0.3, -1.0, 0.8, 0.1, -0.4],
        ))
        .unwrap();
        let dm = embed(&panel, 1).unwrap();
        let seg = Segmentation::universal(1);
        let hp = HyperParams::new(0.3, 0.5, DMatrix::identity(1, 1), 1e-12).unwrap();
        let ex = exact_posterior(&dm, &seg, &hp).unwrap();
        assert_eq!(ex.slots.len(), 1);
        assert!((ex.gamma_probs[0] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn too_many_indicators() {
        let dm = embed(&ar_panel(30, 0.0, 1), 3).unwrap();
        let seg = Segmentation::universal(2);
        let hp = HyperParams::new(0.5, 0.5, DMatrix::identity(2, 2), 1.0).unwrap();
        // 3 lags x 2 nodes x (own + group) = 12 slots: fine
        assert!(exact_posterior(&dm, &seg, &hp).is_ok());
        let panel = TimeSeriesPanel::from_values(DMatrix::from_fn(30, 3, |r, c| {
            libm::sin((r * 3 + c) as f64)
        }))
        .unwrap();
        let dm = embed(&panel, 3).unwrap();
        let seg = Segmentation::universal(3);
        assert_eq!(
            exact_posterior(&dm, &seg, &HyperParams::new(0.5, 0.5, DMatrix::identity(3, 3), 1.0).unwrap()),
            Err(Error::TooManyIndicators { count: 18, limit: 16 })
        );
    }

    /// One-coefficient configuration checked against trapezoidal quadrature of
    /// likelihood times slab density.
    #[test]
    fn closed_form_matches_quadrature() {
        let panel = ar_panel(30, 0.5, 12);
        let v = panel.values().column(0).into_owned();
        let panel = TimeSeriesPanel::from_values(DMatrix::from_column_slice(30, 1, v.as_slice()))
            .unwrap();
        let dm = embed(&panel, 1).unwrap();
        let seg = Segmentation::universal(1);
        let (pi, s2, sig) = (0.4, 0.7, 1.3);
        let hp = HyperParams::new(pi, 0.5, DMatrix::from_element(1, 1, sig), s2).unwrap();
        let ex = exact_posterior(&dm, &seg, &hp).unwrap();

        let y = dm.y.column(0);
        let x = dm.blocks[0].column(0);
        let n = y.len() as f64;
        let loglik = |b: f64| {
            let rss: f64 = y.iter().zip(x.iter()).map(|(a, c)| (a - b * c) * (a - b * c)).sum();
            -0.5 * n * ln(2.0 * core::f64::consts::PI * sig) - rss / (2.0 * sig)
        };
        let peak = loglik(0.5);
        let (lo, hi, steps) = (-4.0, 4.0, 200_000);
        let h = (hi - lo) / steps as f64;
        let mut acc = 0.0;
        for s in 0..=steps {
            let b = lo + s as f64 * h;
            let w = if s == 0 || s == steps { 0.5 } else { 1.0 };
            let prior = -0.5 * ln(2.0 * core::f64::consts::PI * s2) - b * b / (2.0 * s2);
            acc += w * exp(loglik(b) + prior - peak);
        }
        let log_on = peak + ln(acc * h) + ln(pi);
        assert!((ex.log_weights[1] - log_on).abs() < 1e-8, "{} vs {}", ex.log_weights[1], log_on);
        assert!((ex.log_weights[0] - (loglik(0.0) + ln(1.0 - pi))).abs() < 1e-10);
    }

    #[test]
    fn agreement_examples() {
        let dm = embed(&ar_panel(50, 0.6, 2), 1).unwrap();
        let seg = Segmentation::universal(2);
        let hp = HyperParams::new(0.5, 0.5, DMatrix::identity(2, 2), 1.0).unwrap();
        let ex = exact_posterior(&dm, &seg, &hp).unwrap();
        let mut st = VariationalState {
            p: 1,
            m: 2,
            g: 1,
            phi1: ex.gamma_probs.clone(),
            mu1: vec![0.0; 2],
            var1: vec![1.0; 2],
            phi2: ex.eta_probs.clone(),
            mu2: vec![DVector::zeros(1); 2],
            cov2: vec![DMatrix::identity(1, 1); 2],
        };
        let a = agreement(&ex, &st).unwrap();
        assert_eq!(a.max_abs_diff, 0.0);
        assert!(a.selections_match);
        for v in st.phi1.iter_mut().chain(st.phi2.iter_mut()) {
            *v = 1.0 - *v;
        }
        let a = agreement(&ex, &st).unwrap();
        let ambiguous = ex.gamma_probs.iter().chain(&ex.eta_probs).filter(|p| **p == 0.5).count();
        assert_eq!(a.mismatches, 4 - ambiguous);
    }
}
