//! Synthetic designs: sparse coefficient tensors for the UG, SG and NG
//! structures, noise covariances and stationary sample paths.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{powi, sqrt};
use crate::types::{CoefficientTensor, GroupKind, IndicatorSet, Segmentation, TimeSeriesPanel};

pub const BURN_IN: usize = 200;
pub const SPECTRAL_TARGET: f64 = 0.9;
pub const EXPLOSION_BOUND: f64 = 1e8;
const MAGNITUDE: (f64, f64) = (0.2, 0.8);

const STREAM_COEFFICIENTS: u64 = 0;
const STREAM_NOISE: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovKind {
    Identity,
    #[serde(rename = "toeplitz")]
    Toeplitz04,
}

impl CovKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" | "I" => Some(CovKind::Identity),
            "toeplitz" | "toeplitz04" | "sigma" => Some(CovKind::Toeplitz04),
            _ => None,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub m: usize,
    pub p_true: usize,
    pub seg: Segmentation,
    /// Lag orders (1-based) that carry nonzero coefficients.
    pub active_lags: Vec<usize>,
    pub nonzero_count: usize,
    pub cov_kind: CovKind,
    /// Noise variances; used by the Toeplitz covariance.
    pub diag_values: Vec<f64>,
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
    /// Multiplies every noise draw.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub noise_scale: f64,
    /// Constant added to every observation after simulation.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub level: f64,
}

pub const PRESET_NAMES: [&str; 9] =
    ["m10UG", "m10SG", "m10NG", "m20UG", "m20SG", "m20NG", "m50UG", "m50SG", "m50NG"];

fn sigma_diag(m: usize) -> Vec<f64> {
    let runs: &[(f64, usize)] = match m {
        10 => &[(0.9, 6), (0.8, 4)],
        20 => &[(0.9, 3), (0.8, 3), (0.9, 14)],
        50 => &[(0.9, 3), (0.8, 3), (0.9, 14), (0.8, 20), (0.9, 10)],
        _ => &[(1.0, m)],
    };
    runs.iter().flat_map(|&(v, n)| core::iter::repeat_n(v, n)).collect()
}

fn ranges(bounds: &[(usize, usize)]) -> Vec<Vec<usize>> {
    bounds.iter().map(|&(a, b)| (a..=b).collect()).collect()
}

impl ScenarioSpec {
    /// One of the named simulation designs, e.g. `m10UG`.
    pub fn preset(name: &str, cov: CovKind, seed: u64) -> Result<Self> {
        let (m, nonzero, kind) = match name {
            "m10UG" => (10, 72, GroupKind::Universal),
            "m10SG" => (10, 40, GroupKind::Segmented),
            "m10NG" => (10, 18, GroupKind::NoGrouping),
            "m20UG" => (20, 145, GroupKind::Universal),
            "m20SG" => (20, 109, GroupKind::Segmented),
            "m20NG" => (20, 27, GroupKind::NoGrouping),
            "m50UG" => (50, 355, GroupKind::Universal),
            "m50SG" => (50, 360, GroupKind::Segmented),
            "m50NG" => (50, 128, GroupKind::NoGrouping),
            _ => return Err(Error::InvalidConfig("unknown scenario name")),
        };
        let seg = match kind {
            GroupKind::Universal => Segmentation::universal(m),
            GroupKind::NoGrouping => Segmentation::singletons(m),
            GroupKind::Segmented => {
                let bounds: &[(usize, usize)] = match m {
                    10 => &[(1, 3), (4, 6), (7, 10)],
                    20 => &[(1, 5), (6, 10), (11, 13), (14, 20)],
                    _ => &[(1, 5), (6, 10), (11, 13), (14, 20), (21, 30), (31, 35), (36, 40), (41, 50)],
                };
                Segmentation::from_one_based(&ranges(bounds), m)?
            }
        };
        Ok(ScenarioSpec {
            name: String::from(name),
            m,
            p_true: 5,
            seg,
            active_lags: vec![1, 3, 5],
            nonzero_count: nonzero,
            cov_kind: cov,
            diag_values: sigma_diag(m),
            t: if m == 50 { 701 } else { 301 },
            seed,
            noise_scale: 1.0,
            level: 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.seg.m() != self.m {
            return Err(Error::ShapeMismatch { context: "scenario nodes vs segmentation" });
        }
        if self.p_true == 0 || self.active_lags.iter().any(|&l| l == 0 || l > self.p_true) {
            return Err(Error::InvalidConfig("active lags must lie in 1..=p_true"));
        }
        if self.cov_kind == CovKind::Toeplitz04
            && (self.diag_values.len() != self.m || self.diag_values.iter().any(|v| !(*v > 0.0)))
        {
            return Err(Error::InvalidConfig("diag_values must hold m positive variances"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite() && self.level.is_finite()) {
            return Err(Error::InvalidConfig("noise_scale and level must be finite"));
        }
        if self.t == 0 {
            return Err(Error::InvalidConfig("T must be positive"));
        }
        Ok(())
    }

    /// Seed of replicate `rep` derived from this spec's root seed.
    pub fn replicate(&self, rep: u64) -> ScenarioSpec {
        ScenarioSpec { seed: replicate_seed(self.seed, rep), ..self.clone() }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Deterministic per-replicate seed.
pub fn replicate_seed(root: u64, rep: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(rep.wrapping_add(1 << 32));
    rng.next_u64()
}

pub fn build_covariance(spec: &ScenarioSpec) -> Result<DMatrix<f64>> {
    let m = spec.m;
    let sigma = match spec.cov_kind {
        CovKind::Identity => DMatrix::identity(m, m),
        CovKind::Toeplitz04 => {
            if spec.diag_values.len() != m || spec.diag_values.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidConfig("diag_values must hold m positive variances"));
            }
            let d = &spec.diag_values;
            DMatrix::from_fn(m, m, |i, j| {
                powi(0.4, i.abs_diff(j) as i32) * sqrt(d[i] * d[j])
            })
        }
    };
    if sigma.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite { context: "scenario covariance" });
    }
    Ok(sigma)
}

/// A block of coefficients switched on together.
#[derive(Debug, Clone, Copy)]
enum Unit {
    Own { lag: usize, node: usize },
    Group { lag: usize, node: usize, group: usize, size: usize },
}

impl Unit {
    fn size(&self) -> usize {
        match *self {
            Unit::Own { .. } => 1,
            Unit::Group { size, .. } => size,
        }
    }
}

/// Group units a pattern of the given kind may switch on.
fn group_units(spec: &ScenarioSpec, lag: usize) -> Vec<Unit> {
    let seg = &spec.seg;
    let mut out = Vec::new();
    for i in 0..spec.m {
        for k in 0..seg.g() {
            let size = seg.derived(i, k).len();
            let within = seg.group_of(i) == k;
            let allowed = match seg.kind() {
                GroupKind::Universal => true,
                GroupKind::Segmented => within,
                GroupKind::NoGrouping => !within,
            };
            if size > 0 && allowed {
                out.push(Unit::Group { lag, node: i, group: k, size });
            }
        }
    }
    out
}

/// Interleaves per-lag lists so that consecutive picks rotate through lags.
fn round_robin(mut lists: Vec<Vec<Unit>>) -> Vec<Unit> {
    let mut out = Vec::new();
    let longest = lists.iter().map(Vec::len).max().unwrap_or(0);
    for idx in 0..longest {
        for list in &mut lists {
            if let Some(u) = list.get(idx) {
                out.push(*u);
            }
        }
    }
    out
}

/// Picks units from `pool` (in order, greedily) whose sizes add to exactly
/// `target`; `None` when impossible.
fn pick_exact(pool: &[Unit], target: usize) -> Option<Vec<Unit>> {
    let n = pool.len();
    // reach[idx][s]: some subset of pool[idx..] sums to s
    let width = target + 1;
    let mut reach = vec![false; (n + 1) * width];
    reach[n * width] = true;
    for idx in (0..n).rev() {
        let size = pool[idx].size();
        for s in 0..width {
            let skip = reach[(idx + 1) * width + s];
            let take = s >= size && reach[(idx + 1) * width + s - size];
            reach[idx * width + s] = skip || take;
        }
    }
    if !reach[target] {
        return None;
    }
    let mut out = Vec::new();
    let mut left = target;
    for (idx, u) in pool.iter().enumerate() {
        if left == 0 {
            break;
        }
        let size = u.size();
        if left >= size && reach[(idx + 1) * width + left - size] {
            out.push(*u);
            left -= size;
        }
    }
    Some(out)
}

fn own_share(kind: GroupKind) -> f64 {
    match kind {
        GroupKind::NoGrouping => 0.5,
        _ => 0.25,
    }
}

/// Draws the sparsity pattern and magnitudes, then rescales for stationarity.
pub fn build_coefficients(spec: &ScenarioSpec) -> Result<(CoefficientTensor, IndicatorSet)> {
    spec.validate()?;
    let (m, p, g) = (spec.m, spec.p_true, spec.seg.g());
    let mut rng = spec.rng(STREAM_COEFFICIENTS);
    let mut b = CoefficientTensor::zeros(p, m);
    let mut ind = IndicatorSet::empty(p, m, g);
    let n = spec.nonzero_count;
    if n == 0 {
        return Ok((b, ind));
    }

    let mut lags: Vec<usize> = spec.active_lags.iter().map(|l| l - 1).collect();
    lags.sort_unstable();
    lags.dedup();
    let mut own_lists = Vec::new();
    let mut group_lists = Vec::new();
    for &l in &lags {
        let mut own: Vec<Unit> = (0..m).map(|i| Unit::Own { lag: l, node: i }).collect();
        own.shuffle(&mut rng);
        own_lists.push(own);
        let mut grp = group_units(spec, l);
        grp.shuffle(&mut rng);
        group_lists.push(grp);
    }
    let own_pool = round_robin(own_lists);
    let group_pool = round_robin(group_lists);
    let capacity = own_pool.len() + group_pool.iter().map(Unit::size).sum::<usize>();
    if n > capacity {
        return Err(Error::InfeasiblePattern { requested: n, capacity });
    }

    // own count closest to the target share for which the rest fits exactly
    let want = (own_share(spec.seg.kind()) * n as f64 + 0.5) as usize;
    let mut candidates: Vec<usize> = (0..=own_pool.len().min(n)).collect();
    candidates.sort_by_key(|&d| (d.abs_diff(want), d));
    let mut chosen = None;
    for d in candidates {
        if let Some(groups) = pick_exact(&group_pool, n - d) {
            chosen = Some((d, groups));
            break;
        }
    }
    let (d, groups) = chosen.ok_or(Error::InfeasiblePattern { requested: n, capacity })?;

    let mut cells = Vec::with_capacity(n);
    for u in own_pool.iter().take(d).chain(groups.iter()) {
        match *u {
            Unit::Own { lag, node } => {
                ind.set_gamma(lag, node, true);
                cells.push((lag, node, node));
            }
            Unit::Group { lag, node, group, .. } => {
                ind.set_eta(lag, node, group, true);
                cells.extend(spec.seg.derived(node, group).iter().map(|&j| (lag, node, j)));
            }
        }
    }
    for &(lag, i, j) in &cells {
        let mag = rng.random_range(MAGNITUDE.0..MAGNITUDE.1);
        b.set(lag, i, j, if rng.random_bool(0.5) { mag } else { -mag });
    }
    let b = stabilise(b)?;
    Ok((b, ind))
}

/// Shrinks `b` so its companion spectral radius is at most the target.
///
/// Tries a common factor on every lag first (found by false position); if that does
/// not certify, scales lag `l` by `c^l`, which maps every companion eigenvalue
/// `z` to `c z` exactly.
fn stabilise(b: CoefficientTensor) -> Result<CoefficientTensor> {
    let rho = b.spectral_radius();
    if !rho.is_finite() {
        return Err(Error::NonFinite { context: "spectral radius" });
    }
    if rho <= SPECTRAL_TARGET {
        return Ok(b);
    }
    let scaled = |c: f64| {
        let mut out = b.clone();
        out.scale(c);
        out
    };
    // Illinois false position on rho(c) - target, keeping the feasible end in `lo`.
    let f = |c: f64| scaled(c).spectral_radius() - SPECTRAL_TARGET;
    let (mut lo, mut hi) = (0.0, 1.0);
    let (mut flo, mut fhi) = (-SPECTRAL_TARGET, rho - SPECTRAL_TARGET);
    let mut gap = flo;
    let mut side = 0i8;
    for _ in 0..60 {
        if hi - lo < 1e-13 || gap > -1e-10 {
            break;
        }
        let mut c = (lo * fhi - hi * flo) / (fhi - flo);
        if !(c > lo && c < hi) {
            c = 0.5 * (lo + hi);
        }
        let fc = f(c);
        if !fc.is_finite() {
            return Err(Error::NonFinite { context: "spectral radius" });
        }
        if fc <= 0.0 {
            lo = c;
            flo = fc;
            gap = fc;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = c;
            fhi = fc;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    let out = scaled(lo);
    if lo > 0.0 && out.spectral_radius() <= SPECTRAL_TARGET + 1e-12 {
        return Ok(out);
    }
    let c = SPECTRAL_TARGET / rho * (1.0 - 1e-12);
    let lags = b
        .lags()
        .iter()
        .enumerate()
        .map(|(l, m)| m * powi(c, l as i32 + 1))
        .collect();
    CoefficientTensor::from_lags(lags)
}

/// A simulated path with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub panel: TimeSeriesPanel,
    pub coefficients: CoefficientTensor,
    pub indicators: IndicatorSet,
    pub covariance: DMatrix<f64>,
    /// The innovations of the retained rows (`T x m`).
    pub noise: DMatrix<f64>,
}

pub fn generate(spec: &ScenarioSpec) -> Result<Simulation> {
    let (coefficients, indicators) = build_coefficients(spec)?;
    generate_with(spec, coefficients, indicators)
}

/// Simulates `spec` with the given coefficients.
pub fn generate_with(
    spec: &ScenarioSpec,
    coefficients: CoefficientTensor,
    indicators: IndicatorSet,
) -> Result<Simulation> {
    spec.validate()?;
    let m = spec.m;
    if coefficients.m() != m {
        return Err(Error::ShapeMismatch { context: "coefficients vs scenario" });
    }
    let covariance = build_covariance(spec)?;
    let chol = covariance
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { context: "scenario covariance" })?;
    let lower = chol.l();
    let mut rng = spec.rng(STREAM_NOISE);
    let p = coefficients.p();
    let total = BURN_IN + spec.t;
    let mut path = DMatrix::zeros(total, m);
    let mut noise = DMatrix::zeros(spec.t, m);
    for t in 0..total {
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eps = (&lower * z) * spec.noise_scale;
        let mut row = eps.clone();
        for l in 0..p.min(t) {
            let prev = path.row(t - 1 - l).transpose();
            row += coefficients.lag(l).tr_mul(&prev);
        }
        if row.iter().any(|v| !(v.abs() <= EXPLOSION_BOUND)) {
            return Err(Error::ExplosivePath { step: t });
        }
        path.row_mut(t).copy_from(&row.transpose());
        if t >= BURN_IN {
            noise.row_mut(t - BURN_IN).copy_from(&eps.transpose());
        }
    }
    let values = path.rows(BURN_IN, spec.t).add_scalar(spec.level);
    let panel = TimeSeriesPanel::from_values(values)?;
    Ok(Simulation { panel, coefficients, indicators, covariance, noise })
}
