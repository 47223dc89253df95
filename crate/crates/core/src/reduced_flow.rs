//! The scalar chain on the symmetric balanced manifold and its flows.
//!
//! Time is measured in the normalized metric of the layerwise learning-rate
//! convention (first layer `eta`, deeper layers `eta / N`), under which the
//! scalars obey `X_l' = -(1/N) dL/dX_l` and one gradient step of size `eta`
//! advances time by `eta`. In these units the drive near the origin is
//! `K prod_{m != l} X_m` with `K = beta_1 h_sigma alpha^{L-1} / sqrt(N)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::activation::{hermite_moments_with, Activation, HermiteMoments};
use crate::error::{Error, Result};
use crate::fit::{loglog_slope, SlopeFit};
use crate::num;
use crate::ode::{Dopri5, OdeOptions};
use crate::quadrature::{gauss_hermite, GaussHermiteRule};

/// Parameters of the reduced flow.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedFlowConfig {
    pub l: usize,
    pub n: f64,
    pub beta1: f64,
    pub act: Activation,
    pub gh_nodes: usize,
}

impl ReducedFlowConfig {
    pub fn new(l: usize, n: f64, beta1: f64, act: Activation) -> Self {
        Self {
            l,
            n,
            beta1,
            act,
            gh_nodes: 128,
        }
    }
}

/// Which right-hand side to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsKind {
    Exact,
    Leading,
}

/// Observable used to detect escape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    /// First-layer scale rising through the threshold.
    X1,
    /// Population loss falling through the threshold.
    Loss,
}

/// Requested escape detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapeSpec {
    pub observable: Observable,
    pub threshold: f64,
}

impl EscapeSpec {
    pub fn x1(threshold: f64) -> Self {
        Self {
            observable: Observable::X1,
            threshold,
        }
    }
}

/// Outcome of escape detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapeEvent {
    pub t_esc: f64,
    pub observable: Observable,
    pub threshold: f64,
    pub crossed: bool,
}

/// Sampled trajectory: times, states and population loss.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub loss: Vec<f64>,
}

/// Reduced flow with its quadrature rule and teacher values cached.
#[derive(Debug, Clone)]
pub struct ReducedFlow {
    pub cfg: ReducedFlowConfig,
    rule: GaussHermiteRule,
    teacher: Vec<f64>,
    moments: HermiteMoments,
    k_sigma: f64,
}

impl ReducedFlow {
    pub fn new(cfg: ReducedFlowConfig) -> Result<Self> {
        if cfg.l < 2 || !(cfg.n >= 1.0) || !(cfg.beta1 > 0.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "need L >= 2, N >= 1, beta1 > 0 (got L = {}, N = {}, beta1 = {})",
                cfg.l,
                cfg.n,
                cfg.beta1
            )));
        }
        let rule = gauss_hermite(cfg.gh_nodes)?;
        let moments = hermite_moments_with(&cfg.act, &rule)?;
        let teacher = rule.nodes.iter().map(|&g| cfg.beta1 * cfg.act.sigma(g)).collect();
        let k_sigma = cfg.beta1 * moments.h_sigma * num::powi(cfg.act.alpha, cfg.l as i32 - 1) / num::sqrt(cfg.n);
        Ok(Self {
            cfg,
            rule,
            teacher,
            moments,
            k_sigma,
        })
    }

    /// `K = beta_1 h_sigma alpha^{L-1} / sqrt(N)`.
    pub fn k_sigma(&self) -> f64 {
        self.k_sigma
    }

    pub fn moments(&self) -> &HermiteMoments {
        &self.moments
    }

    pub fn rule(&self) -> &GaussHermiteRule {
        &self.rule
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.cfg.l {
            return Err(Error::DimensionMismatch(alloc::format!(
                "state has {} scales, depth is {}",
                x.len(),
                self.cfg.l
            )));
        }
        Ok(())
    }

    /// `f = sqrt(N) X_L sigma(X_{L-1} sigma(... sigma(X_1 g)))`.
    pub fn chain_forward(&self, x: &[f64], g: f64) -> f64 {
        let l = x.len();
        let mut s = g;
        for &xl in &x[..l - 1] {
            s = self.cfg.act.sigma(xl * s);
        }
        num::sqrt(self.cfg.n) * x[l - 1] * s
    }

    /// Writes `df/dX_l` into `grad` and returns `f`.
    pub fn chain_grad(&self, x: &[f64], g: f64, grad: &mut [f64]) -> f64 {
        let l = x.len();
        let mut s_in = [0.0f64; 64];
        let mut dsig = [0.0f64; 64];
        debug_assert!(l <= 64);
        let mut s = g;
        for i in 0..l - 1 {
            s_in[i] = s;
            let (v, d) = self.cfg.act.eval(x[i] * s);
            dsig[i] = d;
            s = v;
        }
        let sq = num::sqrt(self.cfg.n);
        let f = sq * x[l - 1] * s;
        grad[l - 1] = sq * s;
        let mut back = sq * x[l - 1];
        for i in (0..l - 1).rev() {
            back *= dsig[i];
            grad[i] = back * s_in[i];
            back *= x[i];
        }
        f
    }

    /// Population loss `1/2 E[(f - beta_1 sigma(g))^2]`.
    pub fn loss(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((&g, &w), &y) in self.rule.nodes.iter().zip(&self.rule.weights).zip(&self.teacher) {
            let r = self.chain_forward(x, g) - y;
            acc += w * r * r;
        }
        0.5 * acc
    }

    /// Exact reduced flow `X_l' = -(1/N) E[(f - beta_1 sigma(g)) df/dX_l]`.
    pub fn exact_rhs(&self, x: &[f64], out: &mut [f64]) {
        let l = x.len();
        let mut grad = [0.0f64; 64];
        for v in out.iter_mut() {
            *v = 0.0;
        }
        for ((&g, &w), &y) in self.rule.nodes.iter().zip(&self.rule.weights).zip(&self.teacher) {
            let f = self.chain_grad(x, g, &mut grad[..l]);
            let r = w * (f - y);
            for i in 0..l {
                out[i] -= r * grad[i];
            }
        }
        let inv = 1.0 / self.cfg.n;
        for v in out.iter_mut() {
            *v *= inv;
        }
    }

    /// Leading-order flow `X_l' = K prod_{m != l} X_m`.
    pub fn leading_rhs(&self, x: &[f64], out: &mut [f64]) {
        leading_product_field(self.k_sigma, x, out);
    }

    pub fn rhs(&self, kind: RhsKind, x: &[f64], out: &mut [f64]) {
        match kind {
            RhsKind::Exact => self.exact_rhs(x, out),
            RhsKind::Leading => self.leading_rhs(x, out),
        }
    }

    /// Integrates from `x0` until the escape event or `t_max`.
    ///
    /// Returns the trajectory sampled at `snapshots` and the escape event;
    /// when the event is not reached `crossed` is false and `t_esc = t_max`.
    pub fn integrate(
        &self,
        x0: &[f64],
        kind: RhsKind,
        t_max: f64,
        escape: Option<EscapeSpec>,
        opts: OdeOptions,
        snapshots: &[f64],
    ) -> Result<(Trajectory, EscapeEvent)> {
        self.check(x0)?;
        if x0.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("initial scales must be nonnegative".into()));
        }
        let ev = escape.map(|e| {
            move |_t: f64, y: &[f64]| match e.observable {
                Observable::X1 => y[0] - e.threshold,
                Observable::Loss => e.threshold - self.loss(y),
            }
        });
        let sol = Dopri5::new(opts).solve(
            |_, y, dy| self.rhs(kind, y, dy),
            0.0,
            x0,
            t_max,
            ev,
            snapshots,
            false,
        )?;
        let mut traj = Trajectory::default();
        for (t, y) in sol.snapshots {
            traj.loss.push(self.loss(&y));
            traj.t.push(t);
            traj.x.push(y);
        }
        let spec = escape.unwrap_or(EscapeSpec::x1(f64::INFINITY));
        let event = match sol.event {
            Some(hit) => EscapeEvent {
                t_esc: hit.t,
                observable: spec.observable,
                threshold: spec.threshold,
                crossed: true,
            },
            None => EscapeEvent {
                t_esc: t_max,
                observable: spec.observable,
                threshold: spec.threshold,
                crossed: false,
            },
        };
        Ok((traj, event))
    }

    /// Escape time of the chosen flow; `EventNotReached` if `t_max` is hit.
    pub fn escape_time(&self, x0: &[f64], kind: RhsKind, spec: EscapeSpec, t_max: f64, opts: OdeOptions) -> Result<f64> {
        let (_, ev) = self.integrate(x0, kind, t_max, Some(spec), opts, &[])?;
        if ev.crossed {
            Ok(ev.t_esc)
        } else {
            Err(Error::EventNotReached { t_max })
        }
    }

    /// `d/dt (X_l^2 - X_1^2)` for `l = 2..L` along the exact flow.
    pub fn imbalance_drift(&self, x: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; x.len()];
        self.exact_rhs(x, &mut d);
        (1..x.len()).map(|l| 2.0 * (x[l] * d[l] - x[0] * d[0])).collect()
    }

    /// `d/dt (X_i^2 - X_j^2)` over pairs `2 <= i < j <= L`.
    pub fn pair_drift(&self, x: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; x.len()];
        self.exact_rhs(x, &mut d);
        let mut out = Vec::new();
        for i in 1..x.len() {
            for j in i + 1..x.len() {
                out.push(2.0 * (x[i] * d[i] - x[j] * d[j]));
            }
        }
        out
    }
}

/// `out_l = k prod_{m != l} x_m` without division.
pub fn leading_product_field(k: f64, x: &[f64], out: &mut [f64]) {
    let l = x.len();
    let mut prefix = 1.0;
    for i in 0..l {
        out[i] = prefix;
        prefix *= x[i];
    }
    let mut suffix = 1.0;
    for i in (0..l).rev() {
        out[i] *= suffix * k;
        suffix *= x[i];
    }
}

/// Probe state `eps (1, 1.1, 1.2, ...)` for drift measurements.
pub fn staggered_state(l: usize, eps: f64) -> Vec<f64> {
    (0..l).map(|i| eps * (1.0 + 0.1 * i as f64)).collect()
}

/// Floor below which drift is treated as exactly zero.
pub const DRIFT_FLOOR: f64 = 1e-14;

/// Log–log slope of `max_l |d/dt (X_l^2 - X_1^2)|` against `eps` at the
/// staggered probe states.
pub fn imbalance_drift_exponent(flow: &ReducedFlow, eps_grid: &[f64]) -> Result<SlopeFit> {
    drift_exponent_by(flow, eps_grid, |f, x| f.imbalance_drift(x))
}

/// Same for pairs `i, j >= 2`.
pub fn pair_drift_exponent(flow: &ReducedFlow, eps_grid: &[f64]) -> Result<SlopeFit> {
    drift_exponent_by(flow, eps_grid, |f, x| f.pair_drift(x))
}

fn drift_exponent_by<D: Fn(&ReducedFlow, &[f64]) -> Vec<f64>>(flow: &ReducedFlow, eps_grid: &[f64], drift: D) -> Result<SlopeFit> {
    if eps_grid.len() < 3 {
        return Err(Error::InsufficientPoints(eps_grid.len()));
    }
    let mut mags = Vec::with_capacity(eps_grid.len());
    for &e in eps_grid {
        let x = staggered_state(flow.cfg.l, e);
        let m = drift(flow, &x).iter().fold(0.0f64, |a, &v| a.max(num::abs(v)));
        mags.push(m);
    }
    let worst = mags.iter().fold(0.0f64, |a, &v| a.max(v));
    if worst < DRIFT_FLOOR {
        return Err(Error::DegenerateFit(worst));
    }
    loglog_slope(eps_grid, &mags)
}
