//! Selection and forecast accuracy measures.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::SupportMask;

/// Cells with `|actual|` below this are left out of MAPE.
pub const MAPE_EXCLUSION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    /// Mean per-replicate true positive rate; `None` when no replicate has a
    /// true active coefficient.
    pub tpr: Option<f64>,
    /// Mean per-replicate false positive rate; `None` when no replicate has a
    /// true zero.
    pub fpr: Option<f64>,
    /// Mean number of selected scalar coefficients.
    pub ams: f64,
    pub replicate_count: usize,
}

/// Scores selected supports against the truth, one pair per replicate.
///
/// Supports with different lag orders are compared after padding the shorter
/// one with inactive lags.
pub fn selection_score(truth: &[SupportMask], selected: &[SupportMask]) -> Result<SelectionScore> {
    if truth.len() != selected.len() || truth.is_empty() {
        return Err(Error::ShapeMismatch { context: "replicate counts" });
    }
    let mut tpr = (0.0, 0usize);
    let mut fpr = (0.0, 0usize);
    let mut ams = 0.0;
    for (t, s) in truth.iter().zip(selected) {
        if t.m != s.m {
            return Err(Error::ShapeMismatch { context: "truth vs selected node count" });
        }
        let p = t.p.max(s.p);
        let (t, s) = (t.with_lags(p), s.with_lags(p));
        let (mut tp, mut pos, mut fp, mut neg) = (0usize, 0usize, 0usize, 0usize);
        for (&a, &b) in t.as_slice().iter().zip(s.as_slice()) {
            if a {
                pos += 1;
                tp += b as usize;
            } else {
                neg += 1;
                fp += b as usize;
            }
        }
        if pos > 0 {
            tpr.0 += tp as f64 / pos as f64;
            tpr.1 += 1;
        }
        if neg > 0 {
            fpr.0 += fp as f64 / neg as f64;
            fpr.1 += 1;
        }
        ams += s.count() as f64;
    }
    let n = truth.len();
    let avg = |(sum, k): (f64, usize)| if k == 0 { None } else { Some(sum / k as f64) };
    Ok(SelectionScore { tpr: avg(tpr), fpr: avg(fpr), ams: ams / n as f64, replicate_count: n })
}

fn check_shapes(actual: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<()> {
    if actual.shape() != predicted.shape() {
        return Err(Error::ShapeMismatch { context: "actual vs predicted" });
    }
    if actual.is_empty() {
        return Err(Error::ShapeMismatch { context: "no cells to score" });
    }
    Ok(())
}

/// Mean squared prediction error over every cell.
pub fn mspe(actual: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<f64> {
    check_shapes(actual, predicted)?;
    let sse: f64 = actual.iter().zip(predicted.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sse / actual.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    /// Percentage.
    pub value: f64,
    pub excluded: usize,
}

pub fn mape(actual: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<Mape> {
    check_shapes(actual, predicted)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (a, b) in actual.iter().zip(predicted.iter()) {
        if a.abs() < MAPE_EXCLUSION {
            continue;
        }
        sum += (a - b).abs() / a.abs();
        used += 1;
    }
    if used == 0 {
        return Err(Error::AllCellsExcluded);
    }
    Ok(Mape { value: 100.0 * sum / used as f64, excluded: actual.len() - used })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NrmseForm {
    /// Mean squared error divided by the mean actual value.
    #[default]
    AsTypeset,
    /// Root mean squared error divided by the mean actual value.
    RootOverMean,
}

pub fn nrmse(actual: &DMatrix<f64>, predicted: &DMatrix<f64>, form: NrmseForm) -> Result<f64> {
    let mse = mspe(actual, predicted)?;
    let level = actual.sum() / actual.len() as f64;
    if level == 0.0 {
        return Err(Error::ZeroNormalizer);
    }
    Ok(match form {
        NrmseForm::AsTypeset => mse / level,
        NrmseForm::RootOverMean => libm::sqrt(mse) / level,
    })
}

/// Flat metric bundle; absent metrics serialise as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricBundle {
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub ams: Option<f64>,
    pub mspe: Option<f64>,
    pub mape: Option<f64>,
    pub nrmse: Option<f64>,
}

impl From<SelectionScore> for MetricBundle {
    fn from(s: SelectionScore) -> Self {
        MetricBundle { tpr: s.tpr, fpr: s.fpr, ams: Some(s.ams), ..Default::default() }
    }
}
