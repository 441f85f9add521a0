//! Variational EM: coordinate-ascent E-step, closed-form M-step, ELBO.

mod config;
mod engine;

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;

pub use config::EngineConfig;
pub use engine::{Engine, MStep, PI_FLOOR};

use crate::design::{demean, embed};
use crate::error::Result;
use crate::forecast::{plugin_coefficients, select_structure};
use crate::types::{
    Dimensions, FitResult, HyperParams, Segmentation, TimeSeriesPanel, VariationalState,
};

/// A finished fit with everything needed to forecast from it.
#[derive(Debug, Clone)]
pub struct Fit {
    pub state: VariationalState,
    pub result: FitResult,
    /// Column means removed before fitting.
    pub means: DVector<f64>,
    pub dims: Dimensions,
}

/// Demeans `panel` (unless already demeaned), embeds it with `p` lags and runs
/// variational EM to convergence.
pub fn fit(panel: &TimeSeriesPanel, seg: &Segmentation, p: usize, cfg: &EngineConfig) -> Result<Fit> {
    cfg.validate()?;
    let (centered, means) = if panel.is_demeaned() {
        (panel.clone(), DVector::zeros(panel.nodes()))
    } else {
        let d = demean(panel)?;
        (d.panel, d.means)
    };
    let dm = embed(&centered, p)?;
    let engine = Engine::new(&dm, seg)?;
    let (state, result) = engine.run(cfg)?;
    Ok(Fit { state, result, means, dims: dm.dims })
}

/// E-step sweeps only, with `theta` held at `hp`. Returns the final state and
/// the ELBO after each sweep (starting with the initial state).
pub fn fit_fixed_hyperparams(
    engine: &Engine,
    hp: &HyperParams,
    cfg: &EngineConfig,
) -> Result<(VariationalState, Vec<f64>)> {
    hp.validate()?;
    let (mut state, _) = engine.initialize(cfg)?;
    let mut trace = vec![engine.elbo(&state, hp)?];
    for _ in 0..cfg.max_iters {
        engine.sweep(&mut state, hp)?;
        let l = engine.elbo(&state, hp)?;
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(l);
        if converged(prev, l, cfg.tol) {
            break;
        }
    }
    Ok((state, trace))
}

fn converged(prev: f64, next: f64, tol: f64) -> bool {
    (next - prev).abs() < tol * prev.abs().max(1.0)
}

impl Engine {
    /// Full EM from the default initialisation.
    pub fn run(&self, cfg: &EngineConfig) -> Result<(VariationalState, FitResult)> {
        let (state, hp) = self.initialize(cfg)?;
        self.run_from(state, hp, cfg)
    }

    pub fn run_from(
        &self,
        mut state: VariationalState,
        mut hp: HyperParams,
        cfg: &EngineConfig,
    ) -> Result<(VariationalState, FitResult)> {
        cfg.validate()?;
        let mut trace = vec![self.elbo(&state, &hp)?];
        let mut iterations = 0;
        let mut is_converged = false;
        let mut degenerate_scale_steps = 0;
        while iterations < cfg.max_iters {
            self.sweep(&mut state, &hp)?;
            let step = self.m_step(&state, &hp)?;
            hp = step.hyperparams;
            degenerate_scale_steps += step.degenerate_scale as usize;
            iterations += 1;
            let l = self.elbo(&state, &hp)?;
            let prev = *trace.last().expect("trace starts non-empty");
            trace.push(l);
            if converged(prev, l, cfg.tol) {
                is_converged = true;
                break;
            }
        }
        let indicators = select_structure(&state);
        let coefficients = plugin_coefficients(&state, &indicators, self.segmentation())?;
        let result = FitResult {
            indicators,
            coefficients,
            hyperparams: hp,
            elbo_trace: trace,
            iterations,
            converged: is_converged,
            degenerate_scale_steps,
        };
        Ok((state, result))
    }
}
