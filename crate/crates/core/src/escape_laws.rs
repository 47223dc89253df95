//! Escape-time predictions: the balanced closed form, the leading-order
//! escape integral, the critical-depth law, the resonance correction and
//! universality rescaling.

use alloc::vec::Vec;

use crate::activation::{hermite_moments, Activation};
use crate::error::{Error, Result};
use crate::num;
use crate::quadrature::{adaptive_integrate, LogSubstitution, QuadTolerance};

/// Default escape threshold on `X_1`.
pub const DEFAULT_THRESHOLD: f64 = 1.0;
/// Default minimum ratio `s_{r+1} / eps` for the critical-depth law.
pub const DEFAULT_RATIO_FLOOR: f64 = 10.0;
/// Default band for non-bottleneck scales.
pub const DEFAULT_BAND: (f64, f64) = (0.5, 2.0);

/// `K = beta_1 h_sigma alpha^{L-1} / sqrt(N)` with 128-node moments.
pub fn k_sigma(act: &Activation, l: usize, beta1: f64, n: f64) -> Result<f64> {
    let m = hermite_moments(act, 128)?;
    Ok(beta1 * m.h_sigma * num::powi(act.alpha, l as i32 - 1) / num::sqrt(n))
}

/// Leading-order balanced escape time from `X = eps` to `X_1 = 1`.
pub fn escape_closed_form_balanced(l: usize, eps: f64, k: f64) -> Result<f64> {
    escape_closed_form_balanced_to(l, eps, k, DEFAULT_THRESHOLD)
}

/// Leading-order balanced escape time from `eps` to `theta`.
pub fn escape_closed_form_balanced_to(l: usize, eps: f64, k: f64, theta: f64) -> Result<f64> {
    if l < 2 || !(eps > 0.0) || !(k > 0.0) || !(theta >= eps) {
        return Err(Error::InvalidArgument(alloc::format!(
            "need L >= 2, 0 < eps <= theta, K > 0 (got L = {l}, eps = {eps}, theta = {theta}, K = {k})"
        )));
    }
    if l == 2 {
        return Ok(num::ln(theta / eps) / k);
    }
    let p = (l - 2) as i32;
    let m = (l - 2) as f64;
    Ok((num::powi(eps, -p) - num::powi(theta, -p)) / (m * k))
}

/// Sorted initial scales with a bottleneck of multiplicity `r` at `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitProfile {
    pub s: Vec<f64>,
    pub r: usize,
    pub eps: f64,
}

impl InitProfile {
    /// Sorts `scales` and counts entries equal to the smallest one.
    pub fn from_scales(scales: &[f64]) -> Result<Self> {
        if scales.len() < 2 || scales.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("need at least two positive scales".into()));
        }
        let mut s = scales.to_vec();
        s.sort_by(f64::total_cmp);
        let eps = s[0];
        let r = s.iter().take_while(|&&v| v <= eps * (1.0 + 1e-12)).count();
        Ok(Self { s, r, eps })
    }

    /// `r` layers at `eps` followed by `others`.
    pub fn bottleneck(l: usize, r: usize, eps: f64, other: f64) -> Result<Self> {
        if r == 0 || r > l {
            return Err(Error::InvalidArgument(alloc::format!("need 1 <= r <= L (got r = {r}, L = {l})")));
        }
        let mut s = alloc::vec![eps; r];
        s.resize(l, other);
        Self::from_scales(&s)
    }

    pub fn depth(&self) -> usize {
        self.s.len()
    }

    /// `D_l = s_l^2 - s_1^2` for `l >= 2`.
    pub fn gaps(&self) -> Vec<f64> {
        let y0 = self.s[0] * self.s[0];
        self.s[1..].iter().map(|v| v * v - y0).collect()
    }
}

fn escape_integrand(k: f64, gaps: &[f64], y: f64) -> f64 {
    let mut p = y;
    for &d in gaps {
        p *= y + d;
    }
    1.0 / (2.0 * k * num::sqrt(p))
}

/// Leading-order escape quadrature from `Y_0 = s_1^2` to `threshold^2`.
pub fn escape_integral(profile: &InitProfile, k: f64, threshold: f64) -> Result<f64> {
    escape_integral_with(profile, k, threshold, QuadTolerance::default())
}

pub fn escape_integral_with(profile: &InitProfile, k: f64, threshold: f64, tol: QuadTolerance) -> Result<f64> {
    if !(k > 0.0) || threshold < profile.eps {
        return Err(Error::InvalidArgument(alloc::format!(
            "need K > 0 and threshold >= eps (got K = {k}, threshold = {threshold}, eps = {})",
            profile.eps
        )));
    }
    let gaps = profile.gaps();
    let sub = LogSubstitution::new(profile.eps, threshold * threshold);
    Ok(sub.integrate(|y| escape_integrand(k, &gaps, y), tol)?.value)
}

/// The escape integral split at the shell boundaries `s_j^2`.
pub fn shell_integrals(profile: &InitProfile, k: f64, threshold: f64) -> Result<Vec<f64>> {
    let gaps = profile.gaps();
    let top = threshold * threshold;
    let mut edges: Vec<f64> = profile.s.iter().map(|v| v * v).filter(|&y| y < top).collect();
    edges.dedup();
    edges.push(top);
    let tol = QuadTolerance::default();
    let mut out = Vec::with_capacity(edges.len() - 1);
    for w in edges.windows(2) {
        let sub = LogSubstitution::new(num::sqrt(w[0]), w[1]);
        out.push(sub.integrate(|y| escape_integrand(k, &gaps, y), tol)?.value);
    }
    Ok(out)
}

/// Scaling regime of the critical-depth law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Constant,
    Log,
    Power,
}

impl core::fmt::Display for Regime {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Regime::Constant => "O(1)",
            Regime::Log => "log",
            Regime::Power => "power",
        })
    }
}

/// Leading-order escape prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapePrediction {
    pub t_lead: f64,
    pub regime: Regime,
    /// `r - 2` in the power regime.
    pub exponent: Option<u32>,
    pub prefactor: f64,
    pub resonance_correction: Option<f64>,
}

/// Critical-depth law with the default ratio floor and band.
pub fn critical_depth_prediction(profile: &InitProfile, k: f64) -> Result<EscapePrediction> {
    critical_depth_prediction_with(profile, k, DEFAULT_RATIO_FLOOR, DEFAULT_BAND)
}

pub fn critical_depth_prediction_with(
    profile: &InitProfile,
    k: f64,
    ratio_floor: f64,
    band: (f64, f64),
) -> Result<EscapePrediction> {
    let r = profile.r;
    let l = profile.depth();
    let eps = profile.eps;
    if r < l {
        let ratio = profile.s[r] / eps;
        if ratio < ratio_floor {
            return Err(Error::HierarchyTooWeak { ratio, floor: ratio_floor });
        }
        if let Some(&bad) = profile.s[r..].iter().find(|&&v| v < band.0 || v > band.1) {
            return Err(Error::HypothesisViolation(alloc::format!(
                "non-bottleneck scale {bad} outside [{}, {}]",
                band.0,
                band.1
            )));
        }
    }
    let tail = |from: usize| profile.s[from.min(l)..].iter().product::<f64>();
    Ok(match r {
        1 => {
            let pre = 1.0 / (k * tail(1));
            EscapePrediction {
                t_lead: pre,
                regime: Regime::Constant,
                exponent: None,
                prefactor: pre,
                resonance_correction: None,
            }
        }
        2 => {
            let pre = 1.0 / (k * tail(2));
            EscapePrediction {
                t_lead: pre * num::ln(1.0 / eps),
                regime: Regime::Log,
                exponent: None,
                prefactor: pre,
                resonance_correction: None,
            }
        }
        _ => {
            let pre = 1.0 / ((r - 2) as f64 * k * tail(r));
            EscapePrediction {
                t_lead: pre * num::powi(eps, -((r - 2) as i32)),
                regime: Regime::Power,
                exponent: Some((r - 2) as u32),
                prefactor: pre,
                resonance_correction: None,
            }
        }
    })
}

/// First nonlinear correction to the balanced escape time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResonanceCorrection {
    /// `L = q + 1`: signed additive time `-(lambda / K) log(1/eps)`.
    Log(f64),
    /// Otherwise a relative correction of order `eps^order`.
    Power { order: u32 },
}

pub fn resonance_correction(l: usize, q: u32, lambda: f64, k: f64, eps: f64) -> ResonanceCorrection {
    if l == q as usize + 1 {
        ResonanceCorrection::Log(-(lambda / k) * num::ln(1.0 / eps))
    } else {
        ResonanceCorrection::Power { order: q - 1 }
    }
}

/// `lambda = C_1 / K = a_q E[sigma(g) g^q] / (alpha h_sigma)`.
pub fn resonance_lambda(act: &Activation) -> Result<f64> {
    let m = hermite_moments(act, 128)?;
    if act.q.is_none() {
        return Ok(0.0);
    }
    Ok(act.a_q * m.h_sigma_q / (act.alpha * m.h_sigma))
}

/// Flight time of `U' = K U^{L-1} (1 + lambda U^{q-1})` from `eps` to `u_star`.
pub fn first_resummed_flight_time(l: usize, q: u32, k: f64, lambda: f64, eps: f64, u_star: f64) -> Result<f64> {
    let f = |u: f64| 1.0 / (k * num::powi(u, l as i32 - 1) * (1.0 + lambda * num::powi(u, q as i32 - 1)));
    let s0 = num::ln(eps);
    let s1 = num::ln(u_star);
    Ok(adaptive_integrate(|s| {
        let u = num::exp(s);
        u * f(u)
    }, s0, s1, QuadTolerance::default())?
    .value)
}

/// `K t_esc`.
pub fn universality_rescale(t_esc: f64, act: &Activation, l: usize, beta1: f64, n: f64) -> Result<f64> {
    let k = k_sigma(act, l, beta1, n)?;
    if !(k > 0.0) {
        return Err(Error::HypothesisViolation(alloc::format!("K = {k} is not positive")));
    }
    Ok(k * t_esc)
}

/// Leading-order rescaled balanced time `K t` from `eps` to `theta`.
pub fn master_curve(l: usize, eps: f64, theta: f64) -> Result<f64> {
    escape_closed_form_balanced_to(l, eps, 1.0, theta)
}

/// Relative deviation of a rescaled time from the master curve.
pub fn master_deviation(rescaled: f64, l: usize, eps: f64, theta: f64) -> Result<f64> {
    let m = master_curve(l, eps, theta)?;
    Ok((rescaled - m) / m)
}

/// One row of a prediction table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRow {
    pub l: usize,
    pub r: usize,
    pub eps: f64,
    pub t_lead: f64,
    pub regime: Regime,
    pub prefactor: f64,
}

/// Prediction table over an `eps` grid for bottleneck profiles.
pub fn prediction_table(l: usize, r: usize, other: f64, k: f64, eps_grid: &[f64]) -> Result<Vec<PredictionRow>> {
    eps_grid
        .iter()
        .map(|&eps| {
            let p = critical_depth_prediction(&InitProfile::bottleneck(l, r, eps, other)?, k)?;
            Ok(PredictionRow {
                l,
                r,
                eps,
                t_lead: p.t_lead,
                regime: p.regime,
                prefactor: p.prefactor,
            })
        })
        .collect()
}
