//! Activation functions, their Taylor data at the origin, Gaussian/Hermite
//! moments, the Euler deficit and the four-class classification.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::{LN_2, PI};

use crate::error::{Error, Result};
use crate::num;
use crate::quadrature::{gauss_hermite, GaussHermiteRule};

/// Functional form of an activation.
#[derive(Debug, Clone, PartialEq)]
pub enum ActKind {
    Linear,
    Tanh,
    Erf,
    Sin,
    /// `u Phi(u)`.
    Gelu,
    /// `u * logistic(u)`.
    Swish,
    Sigmoid,
    Softplus,
    /// `sum_k c_k u^k`.
    Polynomial(Vec<f64>),
}

/// An activation with analytic Taylor data at the origin.
///
/// `sigma(u) = base(u) - shift`; the shift is nonzero only for centered
/// class-D activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub name: String,
    pub kind: ActKind,
    pub shift: f64,
    /// `sigma(0)`.
    pub sigma0: f64,
    /// `sigma'(0)`.
    pub alpha: f64,
    /// Order of the first nonlinear Taylor term; `None` for linear.
    pub q: Option<u32>,
    /// Coefficient of `u^q`.
    pub a_q: f64,
    /// `sigma''(0)`.
    pub sigma_pp0: f64,
    pub is_odd: bool,
}

/// Classes of smooth activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationClass {
    A,
    B(u32),
    C,
    D,
}

impl core::fmt::Display for ActivationClass {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ActivationClass::A => write!(f, "A"),
            ActivationClass::B(q) => write!(f, "B{q}"),
            ActivationClass::C => write!(f, "C"),
            ActivationClass::D => write!(f, "D"),
        }
    }
}

#[inline]
fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + num::exp(-u))
    } else {
        let e = num::exp(u);
        e / (1.0 + e)
    }
}

const SHIPPED: [&str; 8] = ["linear", "tanh", "erf", "sin", "gelu", "swish", "sigmoid", "softplus"];

impl Activation {
    /// Names accepted by [`Activation::by_name`].
    pub fn shipped() -> &'static [&'static str] {
        &SHIPPED
    }

    /// Registry lookup. Centered class-D variants are addressable as
    /// `sigmoid_centered` and `softplus_centered`.
    pub fn by_name(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        Ok(match lower.as_str() {
            "linear" => Self::linear(),
            "tanh" => Self::tanh(),
            "erf" => Self::erf(),
            "sin" => Self::sin(),
            "gelu" => Self::gelu(),
            "swish" | "silu" => Self::swish(),
            "sigmoid" => Self::sigmoid(),
            "softplus" => Self::softplus(),
            "sigmoid_centered" => center_class_d(&Self::sigmoid())?.0,
            "softplus_centered" => center_class_d(&Self::softplus())?.0,
            _ => return Err(Error::InvalidArgument(format!("unknown activation `{name}`"))),
        })
    }

    fn make(name: &str, kind: ActKind, sigma0: f64, alpha: f64, q: Option<u32>, a_q: f64, sigma_pp0: f64, is_odd: bool) -> Self {
        Self {
            name: name.to_string(),
            kind,
            shift: 0.0,
            sigma0,
            alpha,
            q,
            a_q,
            sigma_pp0,
            is_odd,
        }
    }

    pub fn linear() -> Self {
        Self::make("linear", ActKind::Linear, 0.0, 1.0, None, 0.0, 0.0, true)
    }

    pub fn tanh() -> Self {
        Self::make("tanh", ActKind::Tanh, 0.0, 1.0, Some(3), -1.0 / 3.0, 0.0, true)
    }

    pub fn erf() -> Self {
        let sp = num::sqrt(PI);
        Self::make("erf", ActKind::Erf, 0.0, 2.0 / sp, Some(3), -2.0 / (3.0 * sp), 0.0, true)
    }

    pub fn sin() -> Self {
        Self::make("sin", ActKind::Sin, 0.0, 1.0, Some(3), -1.0 / 6.0, 0.0, true)
    }

    pub fn gelu() -> Self {
        let a2 = 1.0 / num::SQRT_2PI;
        Self::make("gelu", ActKind::Gelu, 0.0, 0.5, Some(2), a2, 2.0 * a2, false)
    }

    pub fn swish() -> Self {
        Self::make("swish", ActKind::Swish, 0.0, 0.5, Some(2), 0.25, 0.5, false)
    }

    pub fn sigmoid() -> Self {
        Self::make("sigmoid", ActKind::Sigmoid, 0.5, 0.25, Some(3), -1.0 / 48.0, 0.0, false)
    }

    pub fn softplus() -> Self {
        Self::make("softplus", ActKind::Softplus, LN_2, 0.5, Some(2), 0.125, 0.25, false)
    }

    /// Polynomial activation `sum_k coeffs[k] u^k`; Taylor data is exact.
    pub fn polynomial(name: &str, coeffs: &[f64]) -> Result<Self> {
        let c = |k: usize| coeffs.get(k).copied().unwrap_or(0.0);
        let alpha = c(1);
        if alpha == 0.0 {
            return Err(Error::HypothesisViolation(format!("{name}: sigma'(0) = 0")));
        }
        let q = (2..coeffs.len()).find(|&k| coeffs[k] != 0.0);
        let is_odd = coeffs.iter().enumerate().all(|(k, &v)| k % 2 == 1 || v == 0.0);
        Ok(Self::make(
            name,
            ActKind::Polynomial(coeffs.to_vec()),
            c(0),
            alpha,
            q.map(|k| k as u32),
            q.map(|k| coeffs[k]).unwrap_or(0.0),
            2.0 * c(2),
            is_odd,
        ))
    }

    /// `sigma(u)`.
    #[inline]
    pub fn sigma(&self, u: f64) -> f64 {
        let v = match &self.kind {
            ActKind::Linear => u,
            ActKind::Tanh => num::tanh(u),
            ActKind::Erf => num::erf(u),
            ActKind::Sin => num::sin(u),
            ActKind::Gelu => u * num::norm_cdf(u),
            ActKind::Swish => u * logistic(u),
            ActKind::Sigmoid => logistic(u),
            ActKind::Softplus => u.max(0.0) + num::ln_1p(num::exp(-num::abs(u))),
            ActKind::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &k| acc * u + k),
        };
        v - self.shift
    }

    /// `sigma'(u)`.
    #[inline]
    pub fn sigma_prime(&self, u: f64) -> f64 {
        match &self.kind {
            ActKind::Linear => 1.0,
            ActKind::Tanh => {
                let t = num::tanh(u);
                1.0 - t * t
            }
            ActKind::Erf => 2.0 / num::sqrt(PI) * num::exp(-u * u),
            ActKind::Sin => num::cos(u),
            ActKind::Gelu => num::norm_cdf(u) + u * num::norm_pdf(u),
            ActKind::Swish => {
                let s = logistic(u);
                s + u * s * (1.0 - s)
            }
            ActKind::Sigmoid => {
                let s = logistic(u);
                s * (1.0 - s)
            }
            ActKind::Softplus => logistic(u),
            ActKind::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, &v)| acc * u + k as f64 * v),
        }
    }

    /// `(sigma(u), sigma'(u))` sharing work where possible.
    #[inline]
    pub fn eval(&self, u: f64) -> (f64, f64) {
        match &self.kind {
            ActKind::Linear => (u, 1.0),
            ActKind::Tanh => {
                let t = num::tanh(u);
                (t, 1.0 - t * t)
            }
            ActKind::Sigmoid => {
                let s = logistic(u);
                (s - self.shift, s * (1.0 - s))
            }
            ActKind::Swish => {
                let s = logistic(u);
                (u * s - self.shift, s + u * s * (1.0 - s))
            }
            _ => (self.sigma(u), self.sigma_prime(u)),
        }
    }

    /// Elementwise `(sigma, sigma')` over a slice.
    pub fn eval_slice(&self, z: &[f64], s: &mut [f64], ds: &mut [f64]) {
        match &self.kind {
            ActKind::Tanh => {
                for ((zv, sv), dv) in z.iter().zip(s.iter_mut()).zip(ds.iter_mut()) {
                    let t = num::tanh_poly(*zv);
                    *sv = t;
                    *dv = 1.0 - t * t;
                }
            }
            _ => {
                for ((zv, sv), dv) in z.iter().zip(s.iter_mut()).zip(ds.iter_mut()) {
                    let (a, b) = self.eval(*zv);
                    *sv = a;
                    *dv = b;
                }
            }
        }
    }
}

/// Euler deficit `z sigma'(z) - sigma(z)`.
pub fn euler_deficit(act: &Activation, z: f64) -> f64 {
    z * act.sigma_prime(z) - act.sigma(z)
}

/// Class of `act` from its Taylor data.
pub fn classify(act: &Activation) -> Result<ActivationClass> {
    if act.alpha == 0.0 {
        return Err(Error::HypothesisViolation(format!("{}: sigma'(0) = 0", act.name)));
    }
    if act.sigma0 != 0.0 {
        return Ok(ActivationClass::D);
    }
    let Some(q) = act.q else {
        return Ok(ActivationClass::A);
    };
    if act.sigma_pp0 != 0.0 {
        return Ok(ActivationClass::C);
    }
    if act.is_odd {
        return Ok(ActivationClass::B(q));
    }
    Err(Error::HypothesisViolation(format!(
        "{}: sigma(0) = 0 and sigma''(0) = 0 but not odd",
        act.name
    )))
}

/// Centers a class-D activation, returning `(sigma - sigma(0), sigma(0))`.
pub fn center_class_d(act: &Activation) -> Result<(Activation, f64)> {
    if classify(act)? != ActivationClass::D {
        return Err(Error::NotClassD(act.name.clone()));
    }
    let c0 = act.sigma0;
    let mut out = act.clone();
    out.name = format!("{}_centered", act.name);
    out.shift += c0;
    out.sigma0 = 0.0;
    out.is_odd = match act.kind {
        ActKind::Sigmoid => true,
        ActKind::Polynomial(ref c) => c.iter().enumerate().all(|(k, &v)| k % 2 == 1 || v == 0.0 || k == 0),
        _ => false,
    };
    Ok((out, c0))
}

/// Gaussian moments of an activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiteMoments {
    /// `E[g sigma(g)]`.
    pub h_sigma: f64,
    /// `E[sigma'(g)]`, computed independently.
    pub e_sigma_prime: f64,
    /// `E[sigma(g) g^q]`.
    pub h_sigma_q: f64,
    /// `E[g^{q+1} sigma(g)] / alpha`.
    pub mu_qp1: f64,
    /// `3 sigma''(0)^2 / (2 alpha h_sigma)`.
    pub gamma_c: f64,
}

/// Moments of `act` under `N(0, 1)` with an `nodes`-point Gauss–Hermite rule.
pub fn hermite_moments(act: &Activation, nodes: usize) -> Result<HermiteMoments> {
    if nodes < 32 {
        return Err(Error::InvalidArgument(format!("need at least 32 nodes, got {nodes}")));
    }
    let rule = gauss_hermite(nodes)?;
    hermite_moments_with(act, &rule)
}

/// As [`hermite_moments`] with a prebuilt rule.
pub fn hermite_moments_with(act: &Activation, rule: &GaussHermiteRule) -> Result<HermiteMoments> {
    let gmax = rule.nodes.iter().fold(0.0f64, |m, &g| m.max(num::abs(g)));
    let growth = num::abs(act.sigma(gmax)).max(num::abs(act.sigma(-gmax)));
    if !growth.is_finite() || growth > num::exp(gmax * gmax / 4.0) {
        return Err(Error::QuadratureDivergence(act.name.clone()));
    }
    let h_sigma = rule.expect(|g| g * act.sigma(g));
    let e_sigma_prime = rule.expect(|g| act.sigma_prime(g));
    let (h_sigma_q, mu_qp1) = match act.q {
        Some(q) => {
            let q = q as i32;
            (
                rule.expect(|g| act.sigma(g) * num::powi(g, q)),
                rule.expect(|g| act.sigma(g) * num::powi(g, q + 1)) / act.alpha,
            )
        }
        None => (0.0, 0.0),
    };
    let gamma_c = match classify(act) {
        Ok(ActivationClass::C) => 3.0 * act.sigma_pp0 * act.sigma_pp0 / (2.0 * act.alpha * h_sigma),
        _ => 0.0,
    };
    Ok(HermiteMoments {
        h_sigma,
        e_sigma_prime,
        h_sigma_q,
        mu_qp1,
        gamma_c,
    })
}
