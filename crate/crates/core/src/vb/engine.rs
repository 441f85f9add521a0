use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::design::DesignMatrices;
use crate::error::{Error, Result};
use crate::math::{
    bernoulli_kl, ln, logit, sigmoid, spd_inverse_logdet, spd_logdet, symmetrize, LN_2PI,
};
use crate::types::{Dimensions, HyperParams, Segmentation, VariationalState};
use crate::vb::EngineConfig;

/// Probabilities produced by the M-step are kept this far from 0 and 1.
pub const PI_FLOOR: f64 = 1e-10;

/// Cached sufficient statistics of one design and segmentation.
///
/// Stacked coefficient row `r = l * m + i` is lagged node `i` at lag `l + 1`.
#[derive(Debug, Clone)]
pub struct Engine {
    dims: Dimensions,
    seg: Segmentation,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    gram: DMatrix<f64>,
    xty: DMatrix<f64>,
}

/// Per-sweep scratch: the precision matrix and `X'(Y - X E[B])`.
struct Workspace {
    lambda: DMatrix<f64>,
    xtr: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub hyperparams: HyperParams,
    /// The slab-variance denominator vanished and the previous value was kept.
    pub degenerate_scale: bool,
}

impl Engine {
    pub fn new(dm: &DesignMatrices, seg: &Segmentation) -> Result<Self> {
        if seg.m() != dm.dims.m {
            return Err(Error::ShapeMismatch { context: "segmentation vs panel width" });
        }
        let x = dm.x();
        let gram = symmetrize(x.tr_mul(&x));
        let xty = x.tr_mul(&dm.y);
        Ok(Engine { dims: dm.dims, seg: seg.clone(), x, y: dm.y.clone(), gram, xty })
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn segmentation(&self) -> &Segmentation {
        &self.seg
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn xty(&self) -> &DMatrix<f64> {
        &self.xty
    }

    /// Ridge least-squares start, `Sigma` from halved sample variances.
    pub fn initialize(&self, cfg: &EngineConfig) -> Result<(VariationalState, HyperParams)> {
        cfg.validate()?;
        let Dimensions { m, p, .. } = self.dims;
        let mp = m * p;
        let g = self.seg.g();

        let tr = self.gram.trace();
        let scale = if tr > 0.0 { tr / mp as f64 } else { 1.0 };
        let mut a = self.gram.clone();
        for d in 0..mp {
            a[(d, d)] += cfg.ridge * scale;
        }
        let b0 = a
            .cholesky()
            .ok_or(Error::SingularDesign)?
            .solve(&self.xty);
        if !b0.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularDesign);
        }

        let mut sigma = DMatrix::zeros(m, m);
        let vars: Vec<f64> = (0..m).map(|j| column_variance(&self.y, j)).collect();
        let top = vars.iter().copied().fold(0.0, f64::max);
        for (j, v) in vars.iter().enumerate() {
            sigma[(j, j)] = 0.5 * v.max(1e-10 * top).max(1e-12);
        }

        let s2 = cfg.sigma2_b_init;
        let mut st = VariationalState {
            p,
            m,
            g,
            phi1: vec![cfg.pi_init; mp],
            mu1: vec![0.0; mp],
            var1: vec![s2; mp],
            phi2: vec![0.0; mp * g],
            mu2: Vec::with_capacity(mp * g),
            cov2: Vec::with_capacity(mp * g),
        };
        for l in 0..p {
            for i in 0..m {
                let r = l * m + i;
                st.mu1[r] = b0[(r, i)];
                for k in 0..g {
                    let c = self.seg.derived(i, k);
                    st.mu2.push(DVector::from_iterator(c.len(), c.iter().map(|&j| b0[(r, j)])));
                    st.cov2.push(DMatrix::identity(c.len(), c.len()) * s2);
                    if !c.is_empty() {
                        st.phi2[r * g + k] = cfg.pi_init;
                    }
                }
            }
        }
        let hp = HyperParams::new(cfg.pi_init, cfg.pi_init, sigma, s2)?;
        Ok((st, hp))
    }

    fn workspace(&self, st: &VariationalState, hp: &HyperParams) -> Result<Workspace> {
        let (lambda, _) = spd_inverse_logdet(&hp.sigma, "Sigma")?;
        let eb = st.posterior_mean(&self.seg);
        let xtr = &self.xty - &self.gram * eb;
        Ok(Workspace { lambda, xtr })
    }

    fn check_state(&self, st: &VariationalState) -> Result<()> {
        let Dimensions { m, p, .. } = self.dims;
        let g = self.seg.g();
        if st.m != m || st.p != p || st.g != g || st.phi1.len() != m * p || st.mu2.len() != m * p * g
        {
            return Err(Error::ShapeMismatch { context: "variational state vs design" });
        }
        Ok(())
    }

    /// One own-lag coordinate update against freshly computed statistics.
    pub fn update_own(
        &self,
        st: &mut VariationalState,
        hp: &HyperParams,
        lag: usize,
        node: usize,
    ) -> Result<()> {
        self.check_state(st)?;
        self.check_index(lag, node)?;
        let mut ws = self.workspace(st, hp)?;
        self.own_step(&mut ws, st, hp, lag, node)
    }

    /// One group coordinate update against freshly computed statistics.
    pub fn update_group(
        &self,
        st: &mut VariationalState,
        hp: &HyperParams,
        lag: usize,
        node: usize,
        group: usize,
    ) -> Result<()> {
        self.check_state(st)?;
        self.check_index(lag, node)?;
        if group >= self.seg.g() {
            return Err(Error::IndexOutOfRange { what: "group", index: group, bound: self.seg.g() });
        }
        let mut ws = self.workspace(st, hp)?;
        self.group_step(&mut ws, st, hp, lag, node, group)
    }

    fn check_index(&self, lag: usize, node: usize) -> Result<()> {
        if lag >= self.dims.p {
            return Err(Error::IndexOutOfRange { what: "lag", index: lag, bound: self.dims.p });
        }
        if node >= self.dims.m {
            return Err(Error::IndexOutOfRange { what: "node", index: node, bound: self.dims.m });
        }
        Ok(())
    }

    /// Full Gauss-Seidel pass: lag, then node, then group.
    pub fn sweep(&self, st: &mut VariationalState, hp: &HyperParams) -> Result<()> {
        self.check_state(st)?;
        let mut ws = self.workspace(st, hp)?;
        for l in 0..self.dims.p {
            for i in 0..self.dims.m {
                self.own_step(&mut ws, st, hp, l, i)?;
                for k in 0..self.seg.g() {
                    self.group_step(&mut ws, st, hp, l, i, k)?;
                }
            }
        }
        Ok(())
    }

    fn own_step(
        &self,
        ws: &mut Workspace,
        st: &mut VariationalState,
        hp: &HyperParams,
        lag: usize,
        node: usize,
    ) -> Result<()> {
        let m = self.dims.m;
        let r = lag * m + node;
        let grr = self.gram[(r, r)];
        let b_old = st.phi1[r] * st.mu1[r];
        let lam_ii = ws.lambda[(node, node)];

        let mut h = grr * b_old * lam_ii;
        for j in 0..m {
            h += ws.xtr[(r, j)] * ws.lambda[(j, node)];
        }
        let s2 = 1.0 / (grr * lam_ii + 1.0 / hp.sigma2_b);
        let mu = s2 * h;
        let z = logit(hp.pi1) + 0.5 * mu * mu / s2 + 0.5 * ln(s2 / hp.sigma2_b);
        let phi = sigmoid(z);
        if !(mu.is_finite() && s2.is_finite() && s2 > 0.0 && phi.is_finite()) {
            return Err(Error::NonFinite { context: "own-lag update" });
        }
        st.var1[r] = s2;
        st.mu1[r] = mu;
        st.phi1[r] = phi;

        let delta = phi * mu - b_old;
        if delta != 0.0 {
            let gcol = self.gram.column(r);
            let mut col = ws.xtr.column_mut(node);
            col.axpy(-delta, &gcol, 1.0);
        }
        Ok(())
    }

    fn group_step(
        &self,
        ws: &mut Workspace,
        st: &mut VariationalState,
        hp: &HyperParams,
        lag: usize,
        node: usize,
        group: usize,
    ) -> Result<()> {
        let m = self.dims.m;
        let g = self.seg.g();
        let c = self.seg.derived(node, group);
        let d = c.len();
        if d == 0 {
            return Ok(());
        }
        let r = lag * m + node;
        let gi = r * g + group;
        let grr = self.gram[(r, r)];
        let phi_old = st.phi2[gi];

        // x_r' times the residual with this block's current mean put back
        let mut v: DVector<f64> = ws.xtr.row(r).transpose();
        for (a, &j) in c.iter().enumerate() {
            v[j] += grr * phi_old * st.mu2[gi][a];
        }
        let mut h = DVector::zeros(d);
        let mut prec = DMatrix::zeros(d, d);
        let inv_s2 = 1.0 / hp.sigma2_b;
        for (a, &ja) in c.iter().enumerate() {
            h[a] = ws.lambda.column(ja).dot(&v);
            for (b, &jb) in c.iter().enumerate() {
                prec[(a, b)] = grr * ws.lambda[(ja, jb)];
            }
            prec[(a, a)] += inv_s2;
        }
        let (cov, logdet_prec) = spd_inverse_logdet(&prec, "group precision")
            .map_err(|_| Error::SingularPrecision { lag, node, group })?;
        let mu = &cov * &h;
        let z = logit(hp.pi2) + 0.5 * h.dot(&mu) - 0.5 * logdet_prec
            - 0.5 * d as f64 * ln(hp.sigma2_b);
        let phi = sigmoid(z);
        if !(phi.is_finite() && mu.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite { context: "group update" });
        }

        for (a, &j) in c.iter().enumerate() {
            let delta = phi * mu[a] - phi_old * st.mu2[gi][a];
            if delta != 0.0 {
                let gcol = self.gram.column(r);
                let mut col = ws.xtr.column_mut(j);
                col.axpy(-delta, &gcol, 1.0);
            }
        }
        st.phi2[gi] = phi;
        st.mu2[gi] = mu;
        st.cov2[gi] = cov;
        Ok(())
    }

    /// `E_q[(Y - X B)'(Y - X B)]`.
    pub fn expected_rss(&self, st: &VariationalState) -> DMatrix<f64> {
        let Dimensions { m, p, .. } = self.dims;
        let g = self.seg.g();
        let eb = st.posterior_mean(&self.seg);
        let resid = &self.y - &self.x * eb;
        let mut e = resid.tr_mul(&resid);
        for l in 0..p {
            for i in 0..m {
                let r = l * m + i;
                let grr = self.gram[(r, r)];
                let (phi, mu) = (st.phi1[r], st.mu1[r]);
                e[(i, i)] += grr * (phi * st.var1[r] + phi * (1.0 - phi) * mu * mu);
                for k in 0..g {
                    let gi = r * g + k;
                    let phi = st.phi2[gi];
                    if phi == 0.0 {
                        continue;
                    }
                    let (mu, cov) = (&st.mu2[gi], &st.cov2[gi]);
                    for (a, &ja) in self.seg.derived(i, k).iter().enumerate() {
                        for (b, &jb) in self.seg.derived(i, k).iter().enumerate() {
                            e[(ja, jb)] +=
                                grr * (phi * cov[(a, b)] + phi * (1.0 - phi) * mu[a] * mu[b]);
                        }
                    }
                }
            }
        }
        symmetrize(e)
    }

    /// Evidence lower bound of `(q, theta)`.
    pub fn elbo(&self, st: &VariationalState, hp: &HyperParams) -> Result<f64> {
        self.check_state(st)?;
        let Dimensions { m, p, n_eff, .. } = self.dims;
        let g = self.seg.g();
        let (lambda, logdet_sigma) = spd_inverse_logdet(&hp.sigma, "Sigma")?;
        let erss = self.expected_rss(st);
        let n = n_eff as f64;
        let mut total = -0.5 * n * m as f64 * LN_2PI - 0.5 * n * logdet_sigma
            - 0.5 * lambda.component_mul(&erss).sum();

        let ln_s2 = ln(hp.sigma2_b);
        for r in 0..m * p {
            let (phi, mu, v) = (st.phi1[r], st.mu1[r], st.var1[r]);
            total -= bernoulli_kl(phi, hp.pi1);
            if phi > 0.0 {
                total += phi * (0.5 * ln(v) - 0.5 * ln_s2 + 0.5 - (v + mu * mu) / (2.0 * hp.sigma2_b));
            }
        }
        for l in 0..p {
            for i in 0..m {
                for k in 0..g {
                    let d = self.seg.derived(i, k).len();
                    if d == 0 {
                        continue;
                    }
                    let gi = (l * m + i) * g + k;
                    let phi = st.phi2[gi];
                    total -= bernoulli_kl(phi, hp.pi2);
                    if phi > 0.0 {
                        let cov = &st.cov2[gi];
                        let logdet_s = spd_logdet(cov, "group covariance")?;
                        let quad = cov.trace() + st.mu2[gi].norm_squared();
                        let d = d as f64;
                        total += phi
                            * (0.5 * logdet_s - 0.5 * d * ln_s2 + 0.5 * d
                                - quad / (2.0 * hp.sigma2_b));
                    }
                }
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite { context: "ELBO" });
        }
        Ok(total)
    }

    /// Closed-form maximiser of the ELBO in `theta` for fixed `q`.
    pub fn m_step(&self, st: &VariationalState, prev: &HyperParams) -> Result<MStep> {
        self.check_state(st)?;
        let Dimensions { m, p, n_eff, .. } = self.dims;
        let g = self.seg.g();
        let clamp = |x: f64| x.clamp(PI_FLOOR, 1.0 - PI_FLOOR);

        let pi1 = clamp(st.phi1.iter().sum::<f64>() / (m * p) as f64);

        let mut phi2_sum = 0.0;
        let mut slots = 0usize;
        let mut num = 0.0;
        let mut den = 0.0;
        for r in 0..m * p {
            num += st.phi1[r] * (st.var1[r] + st.mu1[r] * st.mu1[r]);
            den += st.phi1[r];
        }
        for l in 0..p {
            for i in 0..m {
                for k in 0..g {
                    let d = self.seg.derived(i, k).len();
                    if d == 0 {
                        continue;
                    }
                    let gi = (l * m + i) * g + k;
                    let phi = st.phi2[gi];
                    phi2_sum += phi;
                    slots += 1;
                    num += phi * (st.cov2[gi].trace() + st.mu2[gi].norm_squared());
                    den += phi * d as f64;
                }
            }
        }
        let pi2 = if slots == 0 { prev.pi2 } else { clamp(phi2_sum / slots as f64) };

        let (sigma2_b, degenerate_scale) =
            if den > 0.0 && num > 0.0 && (num / den).is_finite() {
                (num / den, false)
            } else {
                (prev.sigma2_b, true)
            };

        let mut sigma = self.expected_rss(st) / n_eff as f64;
        sigma = symmetrize(sigma);
        stabilise(&mut sigma);
        if !sigma.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "Sigma update" });
        }
        let hyperparams = HyperParams::new(pi1, pi2, sigma, sigma2_b)?;
        Ok(MStep { hyperparams, degenerate_scale })
    }
}

/// Adds a diagonal jitter when the smallest eigenvalue falls below
/// `1e-10 * trace / m`.
fn stabilise(sigma: &mut DMatrix<f64>) {
    let m = sigma.nrows();
    let floor = (1e-10 * sigma.trace() / m as f64).max(1e-150);
    let min_eig = sigma
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < floor {
        let bump = floor - min_eig;
        for i in 0..m {
            sigma[(i, i)] += bump;
        }
    }
}

fn column_variance(y: &DMatrix<f64>, j: usize) -> f64 {
    let n = y.nrows();
    if n < 2 {
        return 0.0;
    }
    let col = y.column(j);
    let mean = col.sum() / n as f64;
    col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}
