//! Scalar and small dense helpers shared by the engine, oracle and simulator.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

#[inline]
pub(crate) fn logit(p: f64) -> f64 {
    ln(p) - libm::log1p(-p)
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + exp(-z))
    } else {
        let e = exp(z);
        e / (1.0 + e)
    }
}

/// `x ln x` with the limit convention `0 ln 0 = 0`.
#[inline]
pub(crate) fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * ln(x)
    }
}

/// Bernoulli KL divergence `KL(Ber(phi) || Ber(pi))`.
#[inline]
pub(crate) fn bernoulli_kl(phi: f64, pi: f64) -> f64 {
    xlogx(phi) + xlogx(1.0 - phi) - phi * ln(pi) - (1.0 - phi) * libm::log1p(-pi)
}

/// Inverse and log-determinant of a symmetric positive definite matrix.
pub(crate) fn spd_inverse_logdet(
    a: &DMatrix<f64>,
    context: &'static str,
) -> Result<(DMatrix<f64>, f64)> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { context })?;
    let l = chol.l_dirty();
    let mut logdet = 0.0;
    for i in 0..a.nrows() {
        logdet += 2.0 * ln(l[(i, i)]);
    }
    let inv = chol.inverse();
    Ok((symmetrize(inv), logdet))
}

pub(crate) fn spd_logdet(a: &DMatrix<f64>, context: &'static str) -> Result<f64> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { context })?;
    let l = chol.l_dirty();
    Ok((0..a.nrows()).map(|i| 2.0 * ln(l[(i, i)])).sum())
}

pub(crate) fn symmetrize(mut a: DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}


/// Stable `ln(sum(exp(x)))`.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = xs.iter().map(|x| exp(x - max)).sum();
    max + ln(s)
}
