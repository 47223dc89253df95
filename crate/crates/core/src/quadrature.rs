//! Quadrature rules: Gauss–Hermite for standard-normal expectations,
//! Gauss–Legendre on `[0, 1]`, adaptive Gauss–Kronrod on finite intervals and
//! the logarithmic substitution for integrands with a near-singular lower
//! endpoint.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::num;

/// Gauss–Hermite rule for the standard normal measure.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermiteRule {
    /// `E[f(g)]` for `g ~ N(0, 1)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&g, &w)| w * f(g))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Builds the `n`-node rule for `N(0, 1)`, `1 <= n <= 512`.
///
/// Roots of the Hermite functions are located by Newton iteration on the
/// normalized three-term recurrence; weights are formed in log space so that
/// tail weights keep full relative precision until they underflow.
pub fn gauss_hermite(n: usize) -> Result<GaussHermiteRule> {
    if n == 0 || n > 512 {
        return Err(Error::InvalidArgument(alloc::format!(
            "Gauss-Hermite node count {n} outside [1, 512]"
        )));
    }
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut x = alloc::vec![0.0f64; m];
    let mut w = alloc::vec![0.0f64; m];
    let pim4 = 0.751_125_544_464_942_5; // pi^{-1/4}
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => num::sqrt(2.0 * nf + 1.0) - 1.85575 * num::powf(2.0 * nf + 1.0, -1.0 / 6.0),
            1 => z - 1.14 * num::powf(nf, 0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut psi_nm1 = 0.0;
        for _ in 0..200 {
            // Hermite functions psi_j(z) = p_j(z) exp(-z^2/2).
            let mut p1 = pim4 * num::exp(-0.5 * z * z);
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * num::sqrt(2.0 / jf) * p2 - num::sqrt((jf - 1.0) / jf) * p3;
            }
            psi_nm1 = p2;
            let dpsi = num::sqrt(2.0 * nf) * p2 - z * p1;
            let dz = p1 / dpsi;
            z -= dz;
            if num::abs(dz) <= 1e-15 * num::abs(z).max(1.0) {
                break;
            }
        }
        if n % 2 == 1 && i == m - 1 {
            z = 0.0;
        }
        x[i] = z;
        // Physicists' weight exp(-z^2) / (n psi_{n-1}(z)^2), then divide by sqrt(pi).
        let lw = -z * z - num::ln(nf) - 2.0 * num::ln(num::abs(psi_nm1)) - 0.5 * num::ln(core::f64::consts::PI);
        w[i] = num::exp(lw);
    }
    if n % 2 == 1 {
        // Recompute the centre node's psi_{n-1}(0) with the converged abscissa.
        let mut p1 = pim4;
        let mut p2 = 0.0;
        for j in 1..n {
            let p3 = p2;
            p2 = p1;
            let jf = j as f64;
            p1 = -num::sqrt((jf - 1.0) / jf) * p3;
        }
        let lw = -num::ln(nf) - 2.0 * num::ln(num::abs(p1)) - 0.5 * num::ln(core::f64::consts::PI);
        w[m - 1] = num::exp(lw);
    }
    let s = core::f64::consts::SQRT_2;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..m {
        nodes.push(-s * x[i]);
        weights.push(w[i]);
    }
    for i in (0..n / 2).rev() {
        nodes.push(s * x[i]);
        weights.push(w[i]);
    }
    // Remove the residual rounding in the normalization.
    let total: f64 = weights.iter().sum();
    for v in &mut weights {
        *v /= total;
    }
    Ok(GaussHermiteRule { nodes, weights })
}

/// Gauss–Legendre rule mapped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendreRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Builds the `n`-node Gauss–Legendre rule on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Result<GaussLegendreRule> {
    if n == 0 {
        return Err(Error::InvalidArgument("Gauss-Legendre needs n >= 1".into()));
    }
    let nf = n as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut z = num::cos(core::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5));
        let mut pp = 1.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if num::abs(dz) < 1e-16 {
                break;
            }
        }
        nodes.push(0.5 * (1.0 - z));
        weights.push(1.0 / ((1.0 - z * z) * pp * pp));
    }
    Ok(GaussLegendreRule { nodes, weights })
}

/// Outcome of [`adaptive_integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveQuadResult {
    pub value: f64,
    pub abs_error_estimate: f64,
    pub subdivisions: usize,
}

/// Tolerances and budget for adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadTolerance {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_evaluations: usize,
}

impl Default for QuadTolerance {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_evaluations: 1_000_000,
        }
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = WGK[7] * fc;
    let mut rg = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        rk += WGK[j] * s;
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    (rk * h, num::abs((rk - rg) * h))
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Globally adaptive G7–K15 integration of `f` over `[a, b]`.
///
/// The panel with the largest error estimate is bisected until the summed
/// estimate drops below `max(abs_tol, rel_tol |value|)`.
pub fn adaptive_integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: QuadTolerance,
) -> Result<AdaptiveQuadResult> {
    if !(a < b) {
        if a == b {
            return Ok(AdaptiveQuadResult {
                value: 0.0,
                abs_error_estimate: 0.0,
                subdivisions: 0,
            });
        }
        return Err(Error::InvalidArgument(alloc::format!(
            "integration limits must satisfy a < b (got {a}, {b})"
        )));
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut evals = 15usize;
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value: v, err: e });
    let mut total = v;
    let mut total_err = e;
    let mut subdivisions = 0usize;
    loop {
        if !total.is_finite() {
            return Err(Error::InvalidArgument("integrand is not finite".into()));
        }
        let target = tol.abs_tol.max(tol.rel_tol * num::abs(total));
        if total_err <= target {
            break;
        }
        if evals + 30 > tol.max_evaluations {
            return Err(Error::MaxSubdivisions {
                evaluations: evals,
                error: total_err,
            });
        }
        let worst = heap.pop().expect("heap holds at least one panel");
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            // Panel collapsed to floating-point resolution.
            return Err(Error::MaxSubdivisions {
                evaluations: evals,
                error: total_err,
            });
        }
        let (v1, e1) = gk15(&mut f, worst.a, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.b);
        evals += 30;
        subdivisions += 1;
        heap.push(Panel { a: worst.a, b: mid, value: v1, err: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, err: e2 });
        // Re-sum to avoid drift from repeated subtraction.
        total = 0.0;
        total_err = 0.0;
        for p in heap.iter() {
            total += p.value;
            total_err += p.err;
        }
    }
    Ok(AdaptiveQuadResult {
        value: total,
        abs_error_estimate: total_err,
        subdivisions,
    })
}

/// Logarithmic substitution `Y = eps^2 exp(2 s)` for integrals over
/// `[eps^2, upper]` whose integrand is near-singular at the lower endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSubstitution {
    pub eps: f64,
    pub upper: f64,
}

impl LogSubstitution {
    pub fn new(eps: f64, upper: f64) -> Self {
        Self { eps, upper }
    }

    /// Limits in `s`.
    pub fn limits(&self) -> (f64, f64) {
        (0.0, 0.5 * num::ln(self.upper / (self.eps * self.eps)))
    }

    /// Original variable at `s`.
    pub fn y(&self, s: f64) -> f64 {
        self.eps * self.eps * num::exp(2.0 * s)
    }

    /// Transformed integrand value `2 Y F(Y)` at `s`.
    pub fn transform<F: FnMut(f64) -> f64>(&self, f: &mut F, s: f64) -> f64 {
        let y = self.y(s);
        2.0 * y * f(y)
    }

    /// Integrates `F` over `[eps^2, upper]` in the substituted variable.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, tol: QuadTolerance) -> Result<AdaptiveQuadResult> {
        let (s0, s1) = self.limits();
        if s1 <= s0 {
            return Ok(AdaptiveQuadResult {
                value: 0.0,
                abs_error_estimate: 0.0,
                subdivisions: 0,
            });
        }
        adaptive_integrate(|s| self.transform(&mut f, s), s0, s1, tol)
    }
}

/// Substitution mapping for an escape integral starting at scale `eps`.
pub fn log_substituted_escape_integrand(eps: f64, upper: f64) -> LogSubstitution {
    LogSubstitution::new(eps, upper)
}
