//! Demeaning and lag embedding: the stacked regression `Y = X B + E`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{Dimensions, TimeSeriesPanel};

/// A demeaned panel together with the column means that were removed.
#[derive(Debug, Clone, PartialEq)]
pub struct DemeanedPanel {
    pub panel: TimeSeriesPanel,
    pub means: DVector<f64>,
}

pub fn demean(panel: &TimeSeriesPanel) -> Result<DemeanedPanel> {
    let t = panel.rows();
    if t == 0 {
        return Err(Error::EmptyPanel);
    }
    let mut values = panel.values().clone();
    let mut means = DVector::zeros(panel.nodes());
    for (j, mut col) in values.column_iter_mut().enumerate() {
        // second pass removes the rounding left by the first
        let mut total = 0.0;
        for _ in 0..2 {
            let mu = col.sum() / t as f64;
            col.add_scalar_mut(-mu);
            total += mu;
        }
        means[j] = total;
    }
    let mut out = TimeSeriesPanel::new(values, panel.node_ids().to_vec())?;
    if let Some(types) = panel.node_types() {
        out = out.with_node_types(types.to_vec())?;
    }
    Ok(DemeanedPanel { panel: out.mark_demeaned(), means })
}

/// Response and lag blocks. Row `t` of block `l` (0-based lag `l`, lag order
/// `l + 1`) is panel row `p + t - (l + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub y: DMatrix<f64>,
    pub blocks: Vec<DMatrix<f64>>,
    pub dims: Dimensions,
}

pub fn embed(panel: &TimeSeriesPanel, p: usize) -> Result<DesignMatrices> {
    embed_values(panel.values(), p)
}

pub(crate) fn embed_values(values: &DMatrix<f64>, p: usize) -> Result<DesignMatrices> {
    let (t, m) = values.shape();
    let dims = Dimensions::new(m, p, t)?;
    let n = dims.n_eff;
    let y = values.rows(p, n).into_owned();
    let blocks = (1..=p).map(|lag| values.rows(p - lag, n).into_owned()).collect();
    Ok(DesignMatrices { y, blocks, dims })
}

impl DesignMatrices {
    /// Stacked regressors `[X_1 | ... | X_p]`, column `l * m + i`.
    pub fn x(&self) -> DMatrix<f64> {
        let Dimensions { m, p, n_eff, .. } = self.dims;
        let mut x = DMatrix::zeros(n_eff, m * p);
        for (l, b) in self.blocks.iter().enumerate() {
            x.view_mut((0, l * m), (n_eff, m)).copy_from(b);
        }
        x
    }

    pub fn lag_block(&self, lag: usize) -> Result<&DMatrix<f64>> {
        self.blocks.get(lag).ok_or(Error::IndexOutOfRange {
            what: "lag",
            index: lag,
            bound: self.dims.p,
        })
    }
}

/// Column `i` of `X_l` and the block of the remaining columns.
pub fn column_views(
    dm: &DesignMatrices,
    lag: usize,
    node: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let block = dm.lag_block(lag)?;
    let m = dm.dims.m;
    if node >= m {
        return Err(Error::IndexOutOfRange { what: "node", index: node, bound: m });
    }
    let col = block.column(node).into_owned();
    let rest = block.clone().remove_column(node);
    Ok((col, rest))
}
