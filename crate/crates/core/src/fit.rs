//! Ordinary least-squares fits on log–log data.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::num;

/// Fitted line `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope.
    pub stderr: f64,
    pub n_points: usize,
    /// Range of the abscissa in original (not log) units when fitted on logs.
    pub window: (f64, f64),
}

/// OLS of `ys` on `xs`.
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::DimensionMismatch(alloc::format!("{} abscissae, {} ordinates", n, ys.len())));
    }
    if n < 3 {
        return Err(Error::InsufficientPoints(n));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = (0..n)
        .map(|i| {
            let r = ys[i] - intercept - slope * xs[i];
            r * r
        })
        .sum();
    let stderr = num::sqrt(rss / (nf - 2.0) / sxx);
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    Ok(SlopeFit {
        slope,
        intercept,
        stderr,
        n_points: n,
        window: (lo, hi),
    })
}

/// OLS of `log y` on `log x`; the reported window is in `x` units.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|&x| num::ln(x)).collect();
    let ly: Vec<f64> = ys.iter().map(|&y| num::ln(y)).collect();
    let mut fit = ols(&lx, &ly)?;
    fit.window = (num::exp(fit.window.0), num::exp(fit.window.1));
    Ok(fit)
}

/// `n` log-uniform points on `[lo, hi]`, inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return alloc::vec![lo];
    }
    let (a, b) = (num::ln(lo), num::ln(hi));
    (0..n)
        .map(|i| num::exp(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}
