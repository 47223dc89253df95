//! Adaptive Dormand–Prince 5(4) integrator with continuous extension,
//! snapshot sampling and terminal event location.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::num;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integrator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Initial step; chosen automatically when `None`.
    pub h_init: Option<f64>,
    /// Largest allowed step magnitude.
    pub h_max: f64,
    pub max_steps: usize,
    /// Time tolerance of the event locator.
    pub event_tol: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            h_init: None,
            h_max: f64::INFINITY,
            max_steps: 5_000_000,
            event_tol: 1e-9,
        }
    }
}

/// One accepted step with its continuous extension.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSegment {
    pub t0: f64,
    pub h: f64,
    r: [Vec<f64>; 5],
}

impl DenseSegment {
    /// State at `t` inside the step.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        for i in 0..out.len() {
            out[i] = self.r[0][i]
                + th * (self.r[1][i] + th1 * (self.r[2][i] + th * (self.r[3][i] + th1 * self.r[4][i])));
        }
    }

    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }
}

/// Piecewise continuous solution on the accepted steps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseSolution {
    pub segments: Vec<DenseSegment>,
}

impl DenseSolution {
    /// Evaluates the stored solution at `t`, clamped to the covered span.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let segs = &self.segments;
        if segs.is_empty() {
            return;
        }
        let fwd = segs[0].h > 0.0;
        let idx = segs.partition_point(|s| if fwd { s.t1() < t } else { s.t1() > t });
        let s = &segs[idx.min(segs.len() - 1)];
        s.eval_into(t, out);
    }
}

/// Located terminal event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventHit {
    pub t: f64,
    pub y: Vec<f64>,
    pub value: f64,
}

/// Result of [`Dopri5::solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub t: f64,
    pub y: Vec<f64>,
    /// `(t, y)` at each requested snapshot time reached.
    pub snapshots: Vec<(f64, Vec<f64>)>,
    pub event: Option<EventHit>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub evaluations: usize,
    pub dense: Option<DenseSolution>,
}

/// Dormand–Prince 5(4) with PI step control.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dopri5 {
    pub opts: OdeOptions,
}

impl Dopri5 {
    pub fn new(opts: OdeOptions) -> Self {
        Self { opts }
    }

    /// Integrates `y' = f(t, y)` from `t0` towards `t_end` (either direction).
    ///
    /// `event` is a scalar function of the state; integration stops at the
    /// first crossing from negative to non-negative. Snapshots must be sorted
    /// in the direction of integration.
    pub fn solve<F, G>(
        &self,
        mut f: F,
        t0: f64,
        y0: &[f64],
        t_end: f64,
        mut event: Option<G>,
        snapshots: &[f64],
        keep_dense: bool,
    ) -> Result<OdeSolution>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
        G: FnMut(f64, &[f64]) -> f64,
    {
        let n = y0.len();
        let o = &self.opts;
        let dir = if t_end >= t0 { 1.0 } else { -1.0 };
        let mut t = t0;
        let mut y = y0.to_vec();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        let mut ys = vec![0.0; n];
        let mut y1 = vec![0.0; n];
        let mut evals = 0usize;
        f(t, &y, &mut k1);
        evals += 1;
        let mut out = OdeSolution {
            t,
            y: y.clone(),
            snapshots: Vec::new(),
            event: None,
            accepted_steps: 0,
            rejected_steps: 0,
            evaluations: 0,
            dense: if keep_dense { Some(DenseSolution::default()) } else { None },
        };
        let mut snap_idx = 0usize;
        while snap_idx < snapshots.len() && (snapshots[snap_idx] - t) * dir <= 0.0 {
            if snapshots[snap_idx] == t {
                out.snapshots.push((t, y.clone()));
            }
            snap_idx += 1;
        }
        let mut g_prev = event.as_mut().map(|g| g(t, &y));
        if let Some(gv) = g_prev {
            if gv >= 0.0 {
                out.event = Some(EventHit { t, y: y.clone(), value: gv });
                out.evaluations = evals;
                return Ok(out);
            }
        }
        if t == t_end {
            out.evaluations = evals;
            return Ok(out);
        }
        let sc = |a: f64, b: f64| o.abs_tol + o.rel_tol * num::abs(a).max(num::abs(b));
        let mut h = match o.h_init {
            Some(h) => num::abs(h),
            None => {
                // Hairer's starting-step heuristic.
                let mut d0 = 0.0;
                let mut d1 = 0.0;
                for i in 0..n {
                    let s = sc(y[i], y[i]);
                    d0 += (y[i] / s) * (y[i] / s);
                    d1 += (k1[i] / s) * (k1[i] / s);
                }
                d0 = num::sqrt(d0 / n as f64);
                d1 = num::sqrt(d1 / n as f64);
                let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
                let h0 = h0.min(num::abs(t_end - t0));
                for i in 0..n {
                    ys[i] = y[i] + dir * h0 * k1[i];
                }
                f(t + dir * h0, &ys, &mut k2);
                evals += 1;
                let mut d2 = 0.0;
                for i in 0..n {
                    let s = sc(y[i], y[i]);
                    d2 += ((k2[i] - k1[i]) / s) * ((k2[i] - k1[i]) / s);
                }
                d2 = num::sqrt(d2 / n as f64) / h0;
                let h1 = if d1.max(d2) <= 1e-15 {
                    (h0 * 1e-3).max(1e-6)
                } else {
                    num::powf(0.01 / d1.max(d2), 0.2)
                };
                (100.0 * h0).min(h1)
            }
        };
        h = h.min(o.h_max).min(num::abs(t_end - t0));
        let mut err_old = 1e-4f64;
        let mut reject_last = false;
        let mut steps = 0usize;
        loop {
            if steps >= o.max_steps {
                return Err(Error::StiffnessFailure { t });
            }
            steps += 1;
            let mut last = false;
            if (t + dir * h - t_end) * dir >= 0.0 {
                h = num::abs(t_end - t);
                last = true;
            }
            if h <= 1e-15 * num::abs(t).max(1e-300) || h == 0.0 {
                return Err(Error::StiffnessFailure { t });
            }
            let hs = dir * h;
            for i in 0..n {
                ys[i] = y[i] + hs * A21 * k1[i];
            }
            f(t + C2 * hs, &ys, &mut k2);
            for i in 0..n {
                ys[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
            }
            f(t + C3 * hs, &ys, &mut k3);
            for i in 0..n {
                ys[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(t + C4 * hs, &ys, &mut k4);
            for i in 0..n {
                ys[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(t + C5 * hs, &ys, &mut k5);
            for i in 0..n {
                ys[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            let t_new = if last { t_end } else { t + hs };
            f(t_new, &ys, &mut k6);
            for i in 0..n {
                y1[i] = y[i] + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            f(t_new, &y1, &mut k7);
            evals += 6;
            let mut err = 0.0;
            for i in 0..n {
                let e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let s = sc(y[i], y1[i]);
                err += (e / s) * (e / s);
            }
            err = num::sqrt(err / n as f64);
            if !err.is_finite() {
                h *= 0.2;
                reject_last = true;
                out.rejected_steps += 1;
                continue;
            }
            if err <= 1.0 {
                // Continuous extension coefficients.
                let mut r: [Vec<f64>; 5] = [y.clone(), vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
                for i in 0..n {
                    let ydiff = y1[i] - y[i];
                    let bspl = hs * k1[i] - ydiff;
                    r[1][i] = ydiff;
                    r[2][i] = bspl;
                    r[3][i] = ydiff - hs * k7[i] - bspl;
                    r[4][i] = hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                }
                let seg = DenseSegment { t0: t, h: hs, r };
                while snap_idx < snapshots.len() && (snapshots[snap_idx] - t_new) * dir <= 0.0 {
                    let mut v = vec![0.0; n];
                    seg.eval_into(snapshots[snap_idx], &mut v);
                    out.snapshots.push((snapshots[snap_idx], v));
                    snap_idx += 1;
                }
                if let (Some(g), Some(gp)) = (event.as_mut(), g_prev) {
                    let gn = g(t_new, &y1);
                    if gn >= 0.0 && gp < 0.0 {
                        let hit = locate_event(g, &seg, t, gp, t_new, gn, o.event_tol, n);
                        // Snapshots past the event are not produced.
                        out.snapshots.retain(|(ts, _)| (ts - hit.t) * dir <= 0.0);
                        out.t = hit.t;
                        out.y = hit.y.clone();
                        out.event = Some(hit);
                        out.accepted_steps += 1;
                        out.evaluations = evals;
                        if let Some(d) = out.dense.as_mut() {
                            d.segments.push(seg);
                        }
                        return Ok(out);
                    }
                    g_prev = Some(gn);
                }
                if let Some(d) = out.dense.as_mut() {
                    d.segments.push(seg);
                }
                out.accepted_steps += 1;
                t = t_new;
                core::mem::swap(&mut y, &mut y1);
                core::mem::swap(&mut k1, &mut k7);
                if last {
                    break;
                }
                // PI controller (beta = 0.04).
                let fac = 0.9 * num::powf(err.max(1e-10), -0.2 + 0.04 * 0.75) * num::powf(err_old, 0.04);
                let mut fac = fac.clamp(0.2, 10.0);
                if reject_last {
                    fac = fac.min(1.0);
                }
                err_old = err.max(1e-4);
                h = (h * fac).min(o.h_max);
                reject_last = false;
            } else {
                let fac = (0.9 * num::powf(err, -0.2)).max(0.2);
                h *= fac;
                reject_last = true;
                out.rejected_steps += 1;
            }
        }
        out.t = t;
        out.y = y;
        out.evaluations = evals;
        Ok(out)
    }
}

#[allow(clippy::too_many_arguments)]
fn locate_event<G: FnMut(f64, &[f64]) -> f64>(
    g: &mut G,
    seg: &DenseSegment,
    mut ta: f64,
    mut ga: f64,
    mut tb: f64,
    mut gb: f64,
    tol: f64,
    n: usize,
) -> EventHit {
    // Illinois-modified regula falsi on the dense output.
    let mut y = vec![0.0; n];
    let mut side = 0i32;
    for _ in 0..200 {
        if num::abs(tb - ta) <= tol {
            break;
        }
        let mut tc = tb - gb * (tb - ta) / (gb - ga);
        if !(tc - ta.min(tb) > 0.0 && ta.max(tb) - tc > 0.0) {
            tc = 0.5 * (ta + tb);
        }
        seg.eval_into(tc, &mut y);
        let gc = g(tc, &y);
        if gc >= 0.0 {
            tb = tc;
            gb = gc;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        } else {
            ta = tc;
            ga = gc;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        }
    }
    seg.eval_into(tb, &mut y);
    let value = g(tb, &y);
    EventHit { t: tb, y, value }
}
