//! Log–log slope fits over seed means.

use std::collections::BTreeMap;

pub use saddle_core::fit::SlopeFit;
use saddle_core::fit::loglog_slope;

use crate::error::LabError;
use crate::table::Row;

/// Seed means of `value` per `eps`, over rows with `eps` inside `window`.
pub fn seed_means<F: Fn(&Row) -> Option<f64>>(rows: &[Row], window: (f64, f64), value: F) -> Vec<(f64, f64)> {
    let mut groups: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        let (Some(eps), Some(v)) = (r.eps, value(r)) else {
            continue;
        };
        if eps < window.0 || eps > window.1 || !v.is_finite() {
            continue;
        }
        let e = groups.entry(eps.to_bits()).or_insert((eps, 0.0, 0));
        e.1 += v;
        e.2 += 1;
    }
    let mut out: Vec<(f64, f64)> = groups.into_values().map(|(e, s, n)| (e, s / n as f64)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// OLS of `log t_esc` on `log eps` over seed means of crossed rows.
pub fn fit_slope(rows: &[Row], window: (f64, f64)) -> Result<SlopeFit, LabError> {
    fit_slope_by(rows, window, |r| if r.crossed { r.t_esc } else { None })
}

/// As [`fit_slope`] for an arbitrary per-row value.
pub fn fit_slope_by<F: Fn(&Row) -> Option<f64>>(rows: &[Row], window: (f64, f64), value: F) -> Result<SlopeFit, LabError> {
    let pts = seed_means(rows, window, value);
    if pts.len() < 3 {
        return Err(LabError::InsufficientPoints(pts.len()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Ok(loglog_slope(&xs, &ys)?)
}
