//! Oracle-agreement suite: variational selections against exact enumeration on
//! tiny models with theta held fixed.

use nalgebra::DMatrix;
use narvb_core::design::embed;
use narvb_core::oracle::{agreement, exact_posterior};
use narvb_core::{
    demean, fit_fixed_hyperparams, DesignMatrices, Engine, EngineConfig, HyperParams,
    Segmentation, TimeSeriesPanel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;

pub const ROWS: usize = 120;
/// Every active coefficient has an OLS t-ratio at least this large.
pub const MIN_SNR: f64 = 3.0;
/// Slack on `ELBO <= log evidence`.
pub const KL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstanceOutcome {
    pub seed: u64,
    pub indicators: usize,
    pub selections_match: bool,
    pub max_abs_diff: f64,
    pub log_evidence: f64,
    pub elbo: f64,
}

impl InstanceOutcome {
    pub fn kl_ok(&self) -> bool {
        self.elbo <= self.log_evidence + KL_TOL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub instances: usize,
    pub matches: usize,
    pub kl_violations: usize,
    pub required_matches: usize,
    pub outcomes: Vec<InstanceOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.matches >= self.required_matches && self.kl_violations == 0
    }
}

/// A two-node VAR(1) instance with fixed theta. Even seeds use the universal
/// grouping, odd seeds singletons; both carry four indicators.
pub fn tiny_instance(seed: u64) -> Result<(DesignMatrices, Segmentation, HyperParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seg = if seed.is_multiple_of(2) { Segmentation::universal(2) } else { Segmentation::singletons(2) };
    loop {
        let b = DMatrix::from_fn(2, 2, |_, _| {
            if rng.random_bool(0.5) {
                let v = rng.random_range(0.3..0.6);
                if rng.random_bool(0.5) { v } else { -v }
            } else {
                0.0
            }
        });
        if b.iter().all(|v| *v == 0.0) {
            continue;
        }
        let rho = b.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        let b = if rho > 0.9 { b * (0.9 / rho) } else { b };
        let mut y = DMatrix::<f64>::zeros(ROWS + 50, 2);
        for r in 1..ROWS + 50 {
            let prev = y.row(r - 1).into_owned();
            let e = DMatrix::from_fn(1, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            y.row_mut(r).copy_from(&(prev * &b + e));
        }
        let panel = TimeSeriesPanel::from_values(y.rows(50, ROWS).into_owned())?;
        let d = demean(&panel)?;
        let dm = embed(&d.panel, 1)?;
        if min_t_ratio(&dm, &b) >= MIN_SNR {
            let hp = HyperParams::new(0.25, 0.25, DMatrix::identity(2, 2), 0.25)?;
            return Ok((dm, seg, hp));
        }
    }
}

/// Smallest |b| / se(b) over the active coefficients under unit noise.
fn min_t_ratio(dm: &DesignMatrices, b: &DMatrix<f64>) -> f64 {
    let x = dm.x();
    let Some(inv) = (x.transpose() * &x).try_inverse() else {
        return 0.0;
    };
    let mut worst = f64::INFINITY;
    for i in 0..2 {
        for j in 0..2 {
            if b[(i, j)] != 0.0 {
                worst = worst.min(b[(i, j)].abs() / inv[(i, i)].sqrt());
            }
        }
    }
    worst
}

pub fn check_instance(seed: u64) -> Result<InstanceOutcome> {
    let (dm, seg, hp) = tiny_instance(seed)?;
    let exact = exact_posterior(&dm, &seg, &hp)?;
    let engine = Engine::new(&dm, &seg)?;
    let cfg = EngineConfig { tol: 1e-12, max_iters: 5000, ..EngineConfig::default() };
    let (state, trace) = fit_fixed_hyperparams(&engine, &hp, &cfg)?;
    let agree = agreement(&exact, &state)?;
    Ok(InstanceOutcome {
        seed,
        indicators: exact.slots.len(),
        selections_match: agree.selections_match,
        max_abs_diff: agree.max_abs_diff,
        log_evidence: exact.log_evidence,
        elbo: *trace.last().expect("trace is non-empty"),
    })
}

/// Runs `instances` seeded checks; at least 90% must agree and none may
/// violate the evidence bound.
pub fn run(instances: usize, root_seed: u64) -> Result<VerifyReport> {
    let outcomes = (0..instances as u64)
        .into_par_iter()
        .map(|k| check_instance(root_seed.wrapping_mul(1_000_003).wrapping_add(k)))
        .collect::<Result<Vec<_>>>()?;
    let matches = outcomes.iter().filter(|o| o.selections_match).count();
    let kl_violations = outcomes.iter().filter(|o| !o.kl_ok()).count();
    Ok(VerifyReport {
        instances,
        matches,
        kl_violations,
        required_matches: (9 * instances).div_ceil(10),
        outcomes,
    })
}
