//! Model symbols: dimensions, panels, partitions, coefficients, indicators and
//! hyperparameters.
//!
//! Node and lag indices are 0-based everywhere in this crate. External formats
//! (JSON, CSV) are 1-based; the `*_one_based` converters are the only places
//! where the shift happens.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dimensions {
    pub m: usize,
    pub p: usize,
    pub t: usize,
    pub n_eff: usize,
}

impl Dimensions {
    pub fn new(m: usize, p: usize, t: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidPanel("node count must be positive"));
        }
        if p == 0 {
            return Err(Error::InvalidConfig("lag order must be at least 1"));
        }
        if t <= p {
            return Err(Error::InsufficientHistory { rows: t, lags: p });
        }
        Ok(Dimensions { m, p, t, n_eff: t - p })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Municipal,
    Industrial,
    Border,
    Other,
}

impl NodeType {
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        let eq = |a: &str| s.eq_ignore_ascii_case(a);
        if eq("municipal") || eq("m") {
            Some(NodeType::Municipal)
        } else if eq("industrial") || eq("i") {
            Some(NodeType::Industrial)
        } else if eq("border") || eq("b") {
            Some(NodeType::Border)
        } else if eq("other") || eq("others") || eq("o") {
            Some(NodeType::Other)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Municipal => "municipal",
            NodeType::Industrial => "industrial",
            NodeType::Border => "border",
            NodeType::Other => "other",
        }
    }
}

/// A `T x m` panel, oldest row first.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    values: DMatrix<f64>,
    node_ids: Vec<String>,
    node_types: Option<Vec<NodeType>>,
    demeaned: bool,
}

impl TimeSeriesPanel {
    pub fn new(values: DMatrix<f64>, node_ids: Vec<String>) -> Result<Self> {
        if values.ncols() != node_ids.len() {
            return Err(Error::ShapeMismatch { context: "panel columns vs node ids" });
        }
        if values.ncols() == 0 {
            return Err(Error::InvalidPanel("panel has no nodes"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "panel" });
        }
        Ok(TimeSeriesPanel { values, node_ids, node_types: None, demeaned: false })
    }

    /// Panel with generated ids `n1..nm`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let ids = (1..=values.ncols()).map(|i| alloc::format!("n{i}")).collect();
        Self::new(values, ids)
    }

    pub fn with_node_types(mut self, types: Vec<NodeType>) -> Result<Self> {
        if types.len() != self.nodes() {
            return Err(Error::ShapeMismatch { context: "node types vs node ids" });
        }
        self.node_types = Some(types);
        Ok(self)
    }

    pub(crate) fn mark_demeaned(mut self) -> Self {
        self.demeaned = true;
        self
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_types(&self) -> Option<&[NodeType]> {
        self.node_types.as_deref()
    }

    pub fn is_demeaned(&self) -> bool {
        self.demeaned
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn nodes(&self) -> usize {
        self.values.ncols()
    }

    /// Leading `rows` observations (same ids and types, demeaned flag cleared).
    pub fn head(&self, rows: usize) -> TimeSeriesPanel {
        let rows = rows.min(self.rows());
        TimeSeriesPanel {
            values: self.values.rows(0, rows).into_owned(),
            node_ids: self.node_ids.clone(),
            node_types: self.node_types.clone(),
            demeaned: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupKind {
    #[serde(rename = "UG")]
    Universal,
    #[serde(rename = "SG")]
    Segmented,
    #[serde(rename = "NG")]
    NoGrouping,
}

/// A partition of the node set into `g` disjoint, nonempty groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    groups: Vec<Vec<usize>>,
    kind: GroupKind,
    membership: Vec<usize>,
    // s_k \ {i}, indexed i * g + k
    derived: Vec<Vec<usize>>,
}

impl Segmentation {
    /// Validates a 0-based partition of `0..m`.
    pub fn new(groups: Vec<Vec<usize>>, m: usize) -> Result<Self> {
        let mut membership = vec![usize::MAX; m];
        for (k, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::EmptyGroup { group: k });
            }
            for &i in group {
                if i >= m {
                    return Err(Error::IndexOutOfRange { what: "node", index: i, bound: m });
                }
                if membership[i] != usize::MAX {
                    return Err(Error::OverlappingGroups { index: i });
                }
                membership[i] = k;
            }
        }
        if let Some(missing) = membership.iter().position(|&k| k == usize::MAX) {
            return Err(Error::IncompleteCover { missing });
        }
        let g = groups.len();
        let kind = if g == 1 {
            GroupKind::Universal
        } else if g == m {
            GroupKind::NoGrouping
        } else {
            GroupKind::Segmented
        };
        let mut derived = Vec::with_capacity(m * g);
        for i in 0..m {
            for group in &groups {
                derived.push(group.iter().copied().filter(|&j| j != i).collect());
            }
        }
        Ok(Segmentation { groups, kind, membership, derived })
    }

    pub fn from_one_based(groups: &[Vec<usize>], m: usize) -> Result<Self> {
        let mut zero = Vec::with_capacity(groups.len());
        for group in groups {
            let mut g0 = Vec::with_capacity(group.len());
            for &i in group {
                if i == 0 || i > m {
                    return Err(Error::IndexOutOfRange { what: "node", index: i, bound: m });
                }
                g0.push(i - 1);
            }
            zero.push(g0);
        }
        Self::new(zero, m)
    }

    pub fn universal(m: usize) -> Self {
        Self::new(vec![(0..m).collect()], m).expect("single group covers all nodes")
    }

    pub fn singletons(m: usize) -> Self {
        Self::new((0..m).map(|i| vec![i]).collect(), m).expect("singletons partition")
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn to_one_based(&self) -> Vec<Vec<usize>> {
        self.groups.iter().map(|g| g.iter().map(|i| i + 1).collect()).collect()
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn g(&self) -> usize {
        self.groups.len()
    }

    pub fn m(&self) -> usize {
        self.membership.len()
    }

    pub fn group_of(&self, node: usize) -> usize {
        self.membership[node]
    }

    /// `s_k` with node `i` removed; `s_k` itself when `i` is outside the group.
    pub fn derived_group(&self, node: usize, group: usize) -> Result<&[usize]> {
        let (m, g) = (self.m(), self.g());
        if node >= m {
            return Err(Error::IndexOutOfRange { what: "node", index: node, bound: m });
        }
        if group >= g {
            return Err(Error::IndexOutOfRange { what: "group", index: group, bound: g });
        }
        Ok(&self.derived[node * g + group])
    }

    pub(crate) fn derived(&self, node: usize, group: usize) -> &[usize] {
        &self.derived[node * self.groups.len() + group]
    }

    /// Number of group indicators that gate at least one coefficient, per lag.
    pub fn active_group_slots(&self) -> usize {
        self.derived.iter().filter(|s| !s.is_empty()).count()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentationRepr {
    groups: Vec<Vec<usize>>,
}

impl Serialize for Segmentation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        SegmentationRepr { groups: self.to_one_based() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Segmentation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let repr = SegmentationRepr::deserialize(d)?;
        let m = repr.groups.iter().map(Vec::len).sum();
        Segmentation::from_one_based(&repr.groups, m).map_err(serde::de::Error::custom)
    }
}

/// Lag matrices `B_1..B_p`; `lags[l][(i, j)]` carries lagged node `i` into node `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor {
    lags: Vec<DMatrix<f64>>,
    m: usize,
}

impl CoefficientTensor {
    pub fn zeros(p: usize, m: usize) -> Self {
        CoefficientTensor { lags: vec![DMatrix::zeros(m, m); p], m }
    }

    pub fn from_lags(lags: Vec<DMatrix<f64>>) -> Result<Self> {
        let m = lags.first().map_or(0, |b| b.nrows());
        if lags.iter().any(|b| b.nrows() != m || b.ncols() != m) {
            return Err(Error::ShapeMismatch { context: "lag matrices must be square and equal" });
        }
        if lags.iter().any(|b| !b.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite { context: "coefficient tensor" });
        }
        Ok(CoefficientTensor { lags, m })
    }

    pub fn p(&self) -> usize {
        self.lags.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn lag(&self, lag: usize) -> &DMatrix<f64> {
        &self.lags[lag]
    }

    pub fn lags(&self) -> &[DMatrix<f64>] {
        &self.lags
    }

    pub fn get(&self, lag: usize, source: usize, target: usize) -> f64 {
        self.lags[lag][(source, target)]
    }

    pub fn set(&mut self, lag: usize, source: usize, target: usize, value: f64) {
        self.lags[lag][(source, target)] = value;
    }

    pub fn scale(&mut self, factor: f64) {
        for b in &mut self.lags {
            *b *= factor;
        }
    }

    pub fn nonzero_count(&self) -> usize {
        self.lags.iter().map(|b| b.iter().filter(|v| **v != 0.0).count()).sum()
    }

    /// Rows stacked as `(B_1', ..., B_p')'`, i.e. a `pm x m` matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (p, m) = (self.p(), self.m);
        let mut out = DMatrix::zeros(p * m, m);
        for (l, b) in self.lags.iter().enumerate() {
            out.view_mut((l * m, 0), (m, m)).copy_from(b);
        }
        out
    }

    /// Companion matrix of the VAR(p) in row-vector form.
    pub fn companion(&self) -> DMatrix<f64> {
        let (p, m) = (self.p(), self.m);
        let mut c = DMatrix::zeros(p * m, p * m);
        for (l, b) in self.lags.iter().enumerate() {
            c.view_mut((l * m, 0), (m, m)).copy_from(b);
            if l + 1 < p {
                for d in 0..m {
                    c[(l * m + d, (l + 1) * m + d)] = 1.0;
                }
            }
        }
        c
    }

    pub fn spectral_radius(&self) -> f64 {
        if self.p() == 0 || self.m == 0 || self.nonzero_count() == 0 {
            return 0.0;
        }
        let c = self.companion();
        let n = c.nrows();
        match nalgebra::Schur::try_new(c.clone(), f64::EPSILON, 200 * n) {
            Some(schur) => schur
                .complex_eigenvalues()
                .iter()
                .map(|z| libm::hypot(z.re, z.im))
                .fold(0.0, f64::max),
            None => gelfand_radius(c),
        }
    }

    /// True when every entry outside `support` is exactly zero.
    pub fn respects(&self, support: &SupportMask) -> bool {
        if support.p != self.p() || support.m != self.m {
            return false;
        }
        for l in 0..self.p() {
            for i in 0..self.m {
                for j in 0..self.m {
                    if !support.get(l, i, j) && self.get(l, i, j) != 0.0 {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// `lim ||C^N||^(1/N)` by repeated squaring; an upper estimate that converges
/// to the spectral radius. Used when the QR iteration does not settle.
fn gelfand_radius(c: DMatrix<f64>) -> f64 {
    let norm = |a: &DMatrix<f64>| a.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut s = norm(&c);
    if s == 0.0 {
        return 0.0;
    }
    let mut a = c / s;
    // log ||C^(2^k)|| (up to the entrywise-norm constant)
    let mut log_norm = libm::log(s);
    let mut power = 1.0;
    for _ in 0..40 {
        a = &a * &a;
        s = norm(&a);
        if s == 0.0 {
            return 0.0;
        }
        a /= s;
        log_norm = 2.0 * log_norm + libm::log(s);
        power *= 2.0;
    }
    libm::exp(log_norm / power)
}

/// Scalar-level support of a coefficient tensor, indexed `(lag, source, target)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportMask {
    pub p: usize,
    pub m: usize,
    bits: Vec<bool>,
}

impl SupportMask {
    pub fn empty(p: usize, m: usize) -> Self {
        SupportMask { p, m, bits: vec![false; p * m * m] }
    }

    pub fn from_tensor(b: &CoefficientTensor) -> Self {
        let mut out = Self::empty(b.p(), b.m());
        for l in 0..b.p() {
            for i in 0..b.m() {
                for j in 0..b.m() {
                    out.set(l, i, j, b.get(l, i, j) != 0.0);
                }
            }
        }
        out
    }

    #[inline]
    fn index(&self, lag: usize, source: usize, target: usize) -> usize {
        (lag * self.m + source) * self.m + target
    }

    pub fn get(&self, lag: usize, source: usize, target: usize) -> bool {
        self.bits[self.index(lag, source, target)]
    }

    pub fn set(&mut self, lag: usize, source: usize, target: usize, on: bool) {
        let k = self.index(lag, source, target);
        self.bits[k] = on;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Extends (with inactive lags) or truncates to `p` lags.
    pub fn with_lags(&self, p: usize) -> SupportMask {
        let mut out = Self::empty(p, self.m);
        let keep = p.min(self.p) * self.m * self.m;
        out.bits[..keep].copy_from_slice(&self.bits[..keep]);
        out
    }
}

/// Own-lag indicators `gamma[l, i]` and group indicators `eta[l, i, k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorSet {
    pub p: usize,
    pub m: usize,
    pub g: usize,
    gamma: Vec<bool>,
    eta: Vec<bool>,
}

impl IndicatorSet {
    pub fn empty(p: usize, m: usize, g: usize) -> Self {
        IndicatorSet { p, m, g, gamma: vec![false; p * m], eta: vec![false; p * m * g] }
    }

    pub fn gamma(&self, lag: usize, node: usize) -> bool {
        self.gamma[lag * self.m + node]
    }

    pub fn eta(&self, lag: usize, node: usize, group: usize) -> bool {
        self.eta[(lag * self.m + node) * self.g + group]
    }

    pub fn set_gamma(&mut self, lag: usize, node: usize, on: bool) {
        self.gamma[lag * self.m + node] = on;
    }

    pub fn set_eta(&mut self, lag: usize, node: usize, group: usize, on: bool) {
        self.eta[(lag * self.m + node) * self.g + group] = on;
    }

    pub fn gamma_slice(&self) -> &[bool] {
        &self.gamma
    }

    pub fn eta_slice(&self) -> &[bool] {
        &self.eta
    }

    /// Scalar coefficients switched on by this indicator set under `seg`.
    pub fn support(&self, seg: &Segmentation) -> Result<SupportMask> {
        if seg.m() != self.m || seg.g() != self.g {
            return Err(Error::ShapeMismatch { context: "indicators vs segmentation" });
        }
        let mut out = SupportMask::empty(self.p, self.m);
        for l in 0..self.p {
            for i in 0..self.m {
                if self.gamma(l, i) {
                    out.set(l, i, i, true);
                }
                for k in 0..self.g {
                    if self.eta(l, i, k) {
                        for &j in seg.derived(i, k) {
                            out.set(l, i, j, true);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// `theta = {pi1, pi2, Sigma, sigma2_B}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub pi1: f64,
    pub pi2: f64,
    pub sigma: DMatrix<f64>,
    pub sigma2_b: f64,
}

impl HyperParams {
    pub fn new(pi1: f64, pi2: f64, sigma: DMatrix<f64>, sigma2_b: f64) -> Result<Self> {
        let hp = HyperParams { pi1, pi2, sigma, sigma2_b };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi1 > 0.0 && self.pi1 < 1.0) {
            return Err(Error::InvalidHyperParams("pi1 must lie in (0, 1)"));
        }
        if !(self.pi2 > 0.0 && self.pi2 < 1.0) {
            return Err(Error::InvalidHyperParams("pi2 must lie in (0, 1)"));
        }
        if !(self.sigma2_b > 0.0 && self.sigma2_b.is_finite()) {
            return Err(Error::InvalidHyperParams("sigma2_B must be positive"));
        }
        let s = &self.sigma;
        if s.nrows() != s.ncols() || s.nrows() == 0 {
            return Err(Error::InvalidHyperParams("Sigma must be square"));
        }
        for i in 0..s.nrows() {
            for j in 0..i {
                if (s[(i, j)] - s[(j, i)]).abs() > 1e-10 {
                    return Err(Error::InvalidHyperParams("Sigma must be symmetric"));
                }
            }
        }
        if s.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite { context: "Sigma" });
        }
        Ok(())
    }
}

/// Parameters of the factorised variational posterior.
///
/// Own-lag arrays are indexed `l * m + i`; group arrays `(l * m + i) * g + k`.
/// Group slots whose derived set is empty carry `phi2 = 0` and zero-length
/// moments and are never updated.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub p: usize,
    pub m: usize,
    pub g: usize,
    pub phi1: Vec<f64>,
    pub mu1: Vec<f64>,
    pub var1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub mu2: Vec<DVector<f64>>,
    pub cov2: Vec<DMatrix<f64>>,
}

impl VariationalState {
    #[inline]
    pub fn own_index(&self, lag: usize, node: usize) -> usize {
        lag * self.m + node
    }

    #[inline]
    pub fn group_index(&self, lag: usize, node: usize, group: usize) -> usize {
        (lag * self.m + node) * self.g + group
    }

    /// `E_q[B]` stacked as `pm x m`.
    pub fn posterior_mean(&self, seg: &Segmentation) -> DMatrix<f64> {
        let (p, m, g) = (self.p, self.m, self.g);
        let mut eb = DMatrix::zeros(p * m, m);
        for l in 0..p {
            for i in 0..m {
                let r = l * m + i;
                eb[(r, i)] = self.phi1[r] * self.mu1[r];
                for k in 0..g {
                    let gi = r * g + k;
                    for (c, &j) in seg.derived(i, k).iter().enumerate() {
                        eb[(r, j)] = self.phi2[gi] * self.mu2[gi][c];
                    }
                }
            }
        }
        eb
    }

    pub fn is_finite(&self) -> bool {
        self.phi1.iter().chain(&self.mu1).chain(&self.var1).chain(&self.phi2).all(|v| v.is_finite())
            && self.mu2.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.cov2.iter().all(|c| c.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub indicators: IndicatorSet,
    pub coefficients: CoefficientTensor,
    pub hyperparams: HyperParams,
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// M-steps in which the slab-variance update was skipped (all inclusion
    /// probabilities numerically zero).
    pub degenerate_scale_steps: usize,
}
