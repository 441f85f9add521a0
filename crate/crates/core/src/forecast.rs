//! Structure selection, plug-in coefficients, one-step forecasts and
//! expanding-window backtests.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{demean, embed_values};
use crate::error::{Error, Result};
use crate::math::spd_inverse_logdet;
use crate::metrics::{mape, nrmse, Mape, NrmseForm};
use crate::types::{
    CoefficientTensor, IndicatorSet, Segmentation, SupportMask, TimeSeriesPanel, VariationalState,
};
use crate::vb::{fit, EngineConfig};

/// Median probability rule: an indicator is on when its inclusion probability
/// is at least one half.
pub fn select_structure(state: &VariationalState) -> IndicatorSet {
    let (p, m, g) = (state.p, state.m, state.g);
    let mut out = IndicatorSet::empty(p, m, g);
    for l in 0..p {
        for i in 0..m {
            out.set_gamma(l, i, state.phi1[state.own_index(l, i)] >= 0.5);
            for k in 0..g {
                out.set_eta(l, i, k, state.phi2[state.group_index(l, i, k)] >= 0.5);
            }
        }
    }
    out
}

/// Posterior means conditional on inclusion, zero elsewhere.
pub fn plugin_coefficients(
    state: &VariationalState,
    indicators: &IndicatorSet,
    seg: &Segmentation,
) -> Result<CoefficientTensor> {
    let (p, m, g) = (state.p, state.m, state.g);
    if indicators.p != p || indicators.m != m || indicators.g != g || seg.m() != m || seg.g() != g {
        return Err(Error::ShapeMismatch { context: "state, indicators and segmentation" });
    }
    let mut b = CoefficientTensor::zeros(p, m);
    for l in 0..p {
        for i in 0..m {
            if indicators.gamma(l, i) {
                b.set(l, i, i, state.mu1[state.own_index(l, i)]);
            }
            for k in 0..g {
                if indicators.eta(l, i, k) {
                    let mu = &state.mu2[state.group_index(l, i, k)];
                    for (a, &j) in seg.derived(i, k).iter().enumerate() {
                        b.set(l, i, j, mu[a]);
                    }
                }
            }
        }
    }
    Ok(b)
}

/// `sum_l (Y_{T+1-l} - mean) B_l + mean` from the last `p` rows of `history`.
pub fn forecast_one(
    history: &TimeSeriesPanel,
    b: &CoefficientTensor,
    means: &DVector<f64>,
) -> Result<DVector<f64>> {
    forecast_values(history.values(), b, means)
}

fn forecast_values(
    values: &DMatrix<f64>,
    b: &CoefficientTensor,
    means: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (t, m) = values.shape();
    if b.m() != m || means.len() != m {
        return Err(Error::ShapeMismatch { context: "history vs coefficients" });
    }
    let p = b.p();
    if t < p {
        return Err(Error::InsufficientHistory { rows: t, lags: p });
    }
    let mut out = means.clone();
    for l in 0..p {
        let row = values.row(t - 1 - l).transpose() - means;
        out += b.lag(l).tr_mul(&row);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Equation-by-equation least squares on the active entries.
    #[default]
    Ols,
    /// Seemingly-unrelated-regressions GLS weighted by the fitted precision.
    Gls,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktestConfig {
    pub engine: EngineConfig,
    /// Row index of the first forecast target (0-based); rows before it form
    /// the initial training window.
    pub split: usize,
    /// Re-run the variational fit every this many steps; 0 keeps the initial
    /// structure throughout.
    pub refit_structure_every: usize,
    pub estimator: Estimator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BacktestStep {
    /// Row index being forecast.
    pub target: usize,
    /// Structure re-selected (and coefficients taken from the variational fit)
    /// at this step.
    pub reselected: bool,
    pub active: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub split: usize,
    pub steps: Vec<BacktestStep>,
    /// One row per step.
    pub forecasts: DMatrix<f64>,
    pub actuals: DMatrix<f64>,
    pub mape: Option<Mape>,
    pub nrmse: Option<f64>,
}

impl BacktestReport {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Expanding-window one-step-ahead evaluation.
///
/// Step 0 fits the model on rows `0..split` and forecasts row `split` from the
/// plug-in coefficients. Each later step adds one row, re-estimates the
/// coefficients on the current support and forecasts the next row, unless it
/// is a re-selection step, in which case the full fit is repeated.
pub fn backtest(
    panel: &TimeSeriesPanel,
    seg: &Segmentation,
    p: usize,
    cfg: &BacktestConfig,
) -> Result<BacktestReport> {
    let (t, m) = (panel.rows(), panel.nodes());
    if cfg.split > t {
        return Err(Error::InvalidConfig("split index beyond the panel"));
    }
    if cfg.split <= p {
        return Err(Error::InsufficientHistory { rows: cfg.split, lags: p });
    }
    let horizon = t - cfg.split;
    let mut forecasts = DMatrix::zeros(horizon, m);
    let actuals = panel.values().rows(cfg.split, horizon).into_owned();
    let mut steps = Vec::with_capacity(horizon);

    let mut support = SupportMask::empty(p, m);
    let mut sigma = DMatrix::identity(m, m);
    for s in 0..horizon {
        let rows = cfg.split + s;
        let window = panel.values().rows(0, rows).into_owned();
        let reselect = s == 0 || (cfg.refit_structure_every > 0 && s % cfg.refit_structure_every == 0);
        let (b, means) = if reselect {
            let wp = TimeSeriesPanel::from_values(window.clone())?;
            let f = fit(&wp, seg, p, &cfg.engine)?;
            support = f.result.indicators.support(seg)?;
            sigma = f.result.hyperparams.sigma.clone();
            (f.result.coefficients, f.means)
        } else {
            refit_restricted(&window, &support, p, cfg.estimator, &sigma)?
        };
        let yhat = forecast_values(&window, &b, &means)?;
        forecasts.row_mut(s).copy_from(&yhat.transpose());
        steps.push(BacktestStep { target: rows, reselected: reselect, active: support.count() });
    }

    let (mape_v, nrmse_v) = if horizon == 0 {
        (None, None)
    } else {
        (mape(&actuals, &forecasts).ok(), nrmse(&actuals, &forecasts, NrmseForm::AsTypeset).ok())
    };
    Ok(BacktestReport { split: cfg.split, steps, forecasts, actuals, mape: mape_v, nrmse: nrmse_v })
}

/// Least squares restricted to `support`, on the demeaned window. Returns the
/// coefficients and the window means.
pub fn refit_restricted(
    window: &DMatrix<f64>,
    support: &SupportMask,
    p: usize,
    estimator: Estimator,
    sigma: &DMatrix<f64>,
) -> Result<(CoefficientTensor, DVector<f64>)> {
    let m = window.ncols();
    if support.p != p || support.m != m {
        return Err(Error::ShapeMismatch { context: "support vs window" });
    }
    let d = demean(&TimeSeriesPanel::from_values(window.clone())?)?;
    let dm = embed_values(d.panel.values(), p)?;

    // stacked rows that carry at least one active entry
    let rows: Vec<usize> = (0..m * p)
        .filter(|&r| (0..m).any(|j| support.get(r / m, r % m, j)))
        .collect();
    let mut b = CoefficientTensor::zeros(p, m);
    if rows.is_empty() {
        return Ok((b, d.means));
    }
    let n = dm.dims.n_eff;
    let mut xa = DMatrix::zeros(n, rows.len());
    for (c, &r) in rows.iter().enumerate() {
        xa.column_mut(c).copy_from(&dm.blocks[r / m].column(r % m));
    }
    let gram = xa.tr_mul(&xa);
    let xty = xa.tr_mul(&dm.y);
    // active positions (into `rows`) per target column
    let cols: Vec<Vec<usize>> = (0..m)
        .map(|j| {
            (0..rows.len()).filter(|&c| support.get(rows[c] / m, rows[c] % m, j)).collect()
        })
        .collect();

    match estimator {
        Estimator::Ols => {
            for (j, act) in cols.iter().enumerate() {
                if act.is_empty() {
                    continue;
                }
                let k = act.len();
                let a = DMatrix::from_fn(k, k, |u, v| gram[(act[u], act[v])]);
                let rhs = DVector::from_fn(k, |u, _| xty[(act[u], j)]);
                let beta = a.cholesky().ok_or(Error::SingularDesign)?.solve(&rhs);
                for (u, &c) in act.iter().enumerate() {
                    b.set(rows[c] / m, rows[c] % m, j, beta[u]);
                }
            }
        }
        Estimator::Gls => {
            let (lambda, _) = spd_inverse_logdet(sigma, "Sigma")?;
            let offsets: Vec<usize> = cols
                .iter()
                .scan(0, |acc, c| {
                    let o = *acc;
                    *acc += c.len();
                    Some(o)
                })
                .collect();
            let total: usize = cols.iter().map(Vec::len).sum();
            let mut a = DMatrix::zeros(total, total);
            let mut rhs = DVector::zeros(total);
            for (j, aj) in cols.iter().enumerate() {
                for (u, &cu) in aj.iter().enumerate() {
                    let iu = offsets[j] + u;
                    for (jp, ajp) in cols.iter().enumerate() {
                        let w = lambda[(j, jp)];
                        rhs[iu] += w * xty[(cu, jp)];
                        for (v, &cv) in ajp.iter().enumerate() {
                            a[(iu, offsets[jp] + v)] = w * gram[(cu, cv)];
                        }
                    }
                }
            }
            let beta = a.cholesky().ok_or(Error::SingularDesign)?.solve(&rhs);
            for (j, aj) in cols.iter().enumerate() {
                for (u, &c) in aj.iter().enumerate() {
                    b.set(rows[c] / m, rows[c] % m, j, beta[offsets[j] + u]);
                }
            }
        }
    }
    if !b.lags().iter().all(|x| x.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite { context: "restricted refit" });
    }
    Ok((b, d.means))
}
