//! Multi-mode machinery: stage-k escape clocks, the off-block and layer-1
//! Duhamel channels, the Schur-Perron instability test and the escape-time
//! homotopy identity, together with the block-aligned closure field used to
//! exercise it.

use alloc::vec;
use alloc::vec::Vec;

use crate::activation::{hermite_moments, Activation};
use crate::error::{Error, Result};
use crate::fullnet::{loss_and_gradient, Batch, TeacherSpec, WeightStack};
use crate::linalg::{dot, norm2, perron_root, perron_root_from, Mat};
use crate::num;
use crate::ode::{Dopri5, OdeOptions};
use crate::quadrature::{adaptive_integrate, gauss_hermite, gauss_legendre, QuadTolerance};
use crate::reduced_flow::leading_product_field;

const TIGHT: QuadTolerance = QuadTolerance {
    abs_tol: 1e-14,
    rel_tol: 1e-13,
    max_evaluations: 1_000_000,
};

/// `I_L(theta) = int_0^theta (1 + s^2)^{-(L-1)/2} ds`.
pub fn universal_integral(l: usize, theta: f64) -> Result<f64> {
    if l < 2 || !(theta > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "need L >= 2 and theta > 0 (got L = {l}, theta = {theta})"
        )));
    }
    let p = -0.5 * (l as f64 - 1.0);
    Ok(adaptive_integrate(|s| num::powf(1.0 + s * s, p), 0.0, theta, TIGHT)?.value)
}

/// Closed forms of `I_2` and `I_3`; `None` for deeper networks.
pub fn universal_integral_closed_form(l: usize, theta: f64) -> Option<f64> {
    match l {
        2 => Some(num::asinh(theta)),
        3 => Some(num::atan(theta)),
        _ => None,
    }
}

/// `T_L(rho) = E[prod_{j<L} sigma'(z_j)]` along the balanced chain
/// `z_1 = rho g`, `z_{j+1} = rho sigma(z_j)`.
pub fn chain_moment(act: &Activation, l: usize, rho: f64, nodes: usize) -> Result<f64> {
    let rule = gauss_hermite(nodes)?;
    Ok(rule.expect(|g| {
        let mut z = rho * g;
        let mut prod = 1.0;
        for _ in 1..l {
            let (s, ds) = act.eval(z);
            prod *= ds;
            z = rho * s;
        }
        prod
    }))
}

/// One stage of the modewise cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub l: usize,
    /// Stage index (one-based).
    pub k: usize,
    pub beta_k: f64,
    /// Saddle scale `rho_op(k)`.
    pub rho_op: f64,
    pub act: Activation,
    pub n: f64,
}

impl StageConfig {
    pub fn new(l: usize, k: usize, beta_k: f64, rho_op: f64, act: Activation, n: f64) -> Result<Self> {
        if l < 2 || !(rho_op > 0.0) || !(beta_k > 0.0) || !(n > 0.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "need L >= 2 and positive beta, rho, N (got L = {l}, beta = {beta_k}, rho = {rho_op}, N = {n})"
            )));
        }
        Ok(Self { l, k, beta_k, rho_op, act, n })
    }

    /// `K_L^{(k)} = beta_k h_sigma T_L(rho) / sqrt(N)`.
    pub fn drive(&self) -> Result<f64> {
        let h = hermite_moments(&self.act, 128)?.h_sigma;
        Ok(self.beta_k * h * chain_moment(&self.act, self.l, self.rho_op, 128)? / num::sqrt(self.n))
    }

    /// `Gamma_k = K_L^{(k)} rho^{L-2}`.
    pub fn rate(&self) -> Result<f64> {
        Ok(self.drive()? * num::powi(self.rho_op, self.l as i32 - 2))
    }
}

/// `t_k(theta) = I_L(theta) / Gamma_k`.
pub fn stage_escape_time(cfg: &StageConfig, theta: f64) -> Result<f64> {
    Ok(universal_integral(cfg.l, theta)? / cfg.rate()?)
}

/// Forced linear channel `y' = -a y + b` started from zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearChannel {
    pub rate: f64,
    pub drive: f64,
}

impl LinearChannel {
    /// `b / a`.
    pub fn quasi_steady(&self) -> f64 {
        self.drive / self.rate
    }

    /// `(b / a)(1 - exp(-a t))`.
    pub fn closed_form(&self, t: f64) -> f64 {
        -self.quasi_steady() * num::exp_m1(-self.rate * t)
    }

    /// Integrates the channel from `y(0) = 0` and samples it on `t_grid`.
    pub fn integrate(&self, t_grid: &[f64]) -> Result<Vec<f64>> {
        let t_end = t_grid.iter().copied().fold(0.0, f64::max);
        let mut out = vec![0.0; t_grid.len()];
        if t_end == 0.0 {
            return Ok(out);
        }
        let mut sorted: Vec<f64> = t_grid.iter().copied().filter(|&t| t > 0.0).collect();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let (a, b) = (self.rate, self.drive);
        let opts = OdeOptions {
            abs_tol: 1e-16 * num::abs(self.quasi_steady()).max(1e-300),
            ..OdeOptions::default()
        };
        let sol = Dopri5::new(opts).solve(
            |_, y: &[f64], dy: &mut [f64]| dy[0] = -a * y[0] + b,
            0.0,
            &[0.0],
            t_end,
            None::<fn(f64, &[f64]) -> f64>,
            &sorted,
            false,
        )?;
        for (o, &t) in out.iter_mut().zip(t_grid) {
            if t > 0.0 {
                let i = sorted.partition_point(|&s| s < t);
                *o = sol.snapshots[i].1[0];
            }
        }
        Ok(out)
    }
}

/// Coefficients of the off-block `W_2` channel on a plateau.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffBlockParams {
    pub alpha_kk: f64,
    pub beta_kk: f64,
    /// Source first-layer scale `U_{k'}`.
    pub u: f64,
    /// Downstream product `D_k = prod_{l >= 3} X_{l,k}`.
    pub d: f64,
    pub q: u32,
}

impl OffBlockParams {
    /// Hermite coefficients `alpha^2/K E[sigma'(U z)^2]` and
    /// `a_q alpha/K E[z^q sigma'(U z)]` by quadrature.
    pub fn from_activation(act: &Activation, u: f64, d: f64, blocks: usize, nodes: usize) -> Result<Self> {
        let q = act
            .q
            .ok_or_else(|| Error::HypothesisViolation(alloc::format!("`{}` has no nonlinear order", act.name)))?;
        let rule = gauss_hermite(nodes)?;
        let kf = blocks as f64;
        let alpha_kk = act.alpha * act.alpha / kf * rule.expect(|z| num::powi(act.sigma_prime(u * z), 2));
        let beta_kk = act.a_q * act.alpha / kf * rule.expect(|z| num::powi(z, q as i32) * act.sigma_prime(u * z));
        Ok(Self { alpha_kk, beta_kk, u, d, q })
    }

    pub fn channel(&self) -> LinearChannel {
        LinearChannel {
            rate: self.alpha_kk * self.d * self.u,
            drive: self.beta_kk * self.d * num::powi(self.u, self.q as i32),
        }
    }

    /// `C* = (beta / alpha) U^{q-1}`.
    pub fn quasi_steady(&self) -> f64 {
        self.beta_kk / self.alpha_kk * num::powi(self.u, self.q as i32 - 1)
    }
}

/// Off-block amplitude `C_{kk'}(t)` from `C(0) = 0`.
pub fn offblock_duhamel(params: &OffBlockParams, t_grid: &[f64]) -> Result<Vec<f64>> {
    params.channel().integrate(t_grid)
}

/// The two summands of the cross-block moment `mu_{k,m}(U)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossMoment {
    /// `E[z^2 sigma'(U_k z) sigma(U_m z)]`, zero for odd activations.
    pub parity_term: f64,
    /// `U_m E[sigma'(U_k z) sigma'(U_m z)]`.
    pub slope_term: f64,
    pub mu: f64,
}

pub fn cross_moment(act: &Activation, uk: f64, um: f64, nodes: usize) -> Result<CrossMoment> {
    let rule = gauss_hermite(nodes)?;
    let parity_term = rule.expect(|z| z * z * act.sigma_prime(uk * z) * act.sigma(um * z));
    let slope_term = um * rule.expect(|z| act.sigma_prime(uk * z) * act.sigma_prime(um * z));
    Ok(CrossMoment {
        parity_term,
        slope_term,
        mu: parity_term + slope_term,
    })
}

/// Coefficients of the layer-1 cross-block rotation channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layer1CrossParams {
    pub alpha: f64,
    pub beta: f64,
    pub moment: CrossMoment,
}

impl Layer1CrossParams {
    /// From per-layer block scales `x_k`, `x_m` (first entry is `U`) and the
    /// unspecified positive scalar in the drive.
    pub fn from_scales(act: &Activation, x_k: &[f64], x_m: &[f64], scale: f64, nodes: usize) -> Result<Self> {
        if x_k.len() != x_m.len() || x_k.len() < 2 {
            return Err(Error::DimensionMismatch("block scale vectors must share a depth >= 2".into()));
        }
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(alloc::format!("drive scale must be positive (got {scale})")));
        }
        let l = x_k.len();
        let chain = |x: &[f64]| num::powi(act.alpha, l as i32 - 2) * x[1..].iter().product::<f64>();
        let (dk, dm) = (chain(x_k), chain(x_m));
        let moment = cross_moment(act, x_k[0], x_m[0], nodes)?;
        if !(moment.mu > 0.0) {
            return Err(Error::NonpositiveMoment(moment.mu));
        }
        let rule = gauss_hermite(nodes)?;
        let alpha = dk * dk * rule.expect(|z| num::powi(act.sigma_prime(x_k[0] * z), 2));
        Ok(Self {
            alpha,
            beta: dk * dm * moment.mu * scale,
            moment,
        })
    }

    pub fn channel(&self) -> LinearChannel {
        LinearChannel {
            rate: self.alpha,
            drive: self.beta,
        }
    }
}

/// Cross-block rotation `eta_{k,m}(t)` from `eta(0) = 0`.
pub fn layer1_cross_duhamel(params: &Layer1CrossParams, t_grid: &[f64]) -> Result<Vec<f64>> {
    params.channel().integrate(t_grid)
}

/// Blocks of `J = [[-A, B], [C, -D]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SchurBlocks {
    pub a: Vec<f64>,
    pub d: Vec<f64>,
    pub b: Mat,
    pub c: Mat,
}

impl SchurBlocks {
    pub fn new(a: Vec<f64>, d: Vec<f64>, b: Mat, c: Mat) -> Result<Self> {
        let n = a.len();
        if d.len() != n || b.rows != n || b.cols != n || c.rows != n || c.cols != n {
            return Err(Error::ShapeMismatch(alloc::format!("blocks of a {n}x{n} Schur system")));
        }
        if a.iter().chain(&d).any(|&v| !(v > 0.0)) {
            return Err(Error::HypothesisViolation("diagonal blocks must be strictly positive".into()));
        }
        if b.data.iter().chain(&c.data).any(|&v| !(v >= 0.0)) {
            return Err(Error::HypothesisViolation("coupling blocks must be entrywise nonnegative".into()));
        }
        Ok(Self { a, d, b, c })
    }

    /// Splits a `2n x 2n` Jacobian. The diagonal blocks must be diagonal to
    /// within `tol` times the largest entry; coupling entries above `-tol`
    /// times that scale are clamped to zero.
    pub fn from_jacobian(j: &Mat, tol: f64) -> Result<Self> {
        if j.rows != j.cols || j.rows % 2 != 0 {
            return Err(Error::ShapeMismatch(alloc::format!("{}x{} is not an even square", j.rows, j.cols)));
        }
        let n = j.rows / 2;
        let scale = j.max_abs().max(f64::MIN_POSITIVE);
        for blk in [0, n] {
            for r in 0..n {
                for c in 0..n {
                    if r != c && num::abs(j.get(blk + r, blk + c)) > tol * scale {
                        return Err(Error::HypothesisViolation(alloc::format!(
                            "diagonal block has off-diagonal entry {:e}",
                            j.get(blk + r, blk + c)
                        )));
                    }
                }
            }
        }
        let grab = |r0: usize, c0: usize| -> Result<Mat> {
            let mut m = Mat::zeros(n, n);
            for r in 0..n {
                for c in 0..n {
                    let v = j.get(r0 + r, c0 + c);
                    if v < -tol * scale {
                        return Err(Error::HypothesisViolation(alloc::format!("negative coupling entry {v:e}")));
                    }
                    m.set(r, c, v.max(0.0));
                }
            }
            Ok(m)
        };
        Self::new(
            (0..n).map(|i| -j.get(i, i)).collect(),
            (0..n).map(|i| -j.get(n + i, n + i)).collect(),
            grab(0, n)?,
            grab(n, 0)?,
        )
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// `K(lambda) = (D + lambda)^{-1} C (A + lambda)^{-1} B`.
    pub fn k_lambda(&self, lambda: f64) -> Mat {
        let n = self.n();
        Mat::from_fn(n, n, |i, j| {
            (0..n).map(|k| self.c.get(i, k) / (self.a[k] + lambda) * self.b.get(k, j)).sum::<f64>() / (self.d[i] + lambda)
        })
    }

    /// Loop-gain matrix `M = K(0)`.
    pub fn loop_gain(&self) -> Mat {
        self.k_lambda(0.0)
    }

    /// `J = [[-A, B], [C, -D]]`.
    pub fn jacobian(&self) -> Mat {
        let n = self.n();
        Mat::from_fn(2 * n, 2 * n, |r, c| match (r < n, c < n) {
            (true, true) => {
                if r == c {
                    -self.a[r]
                } else {
                    0.0
                }
            }
            (true, false) => self.b.get(r, c - n),
            (false, true) => self.c.get(r - n, c),
            (false, false) => {
                if r == c {
                    -self.d[r - n]
                } else {
                    0.0
                }
            }
        })
    }

    /// Principal truncation to the first `m` channels of each block.
    pub fn truncate(&self, m: usize) -> Self {
        let sub = |x: &Mat| Mat::from_fn(m, m, |i, j| x.get(i, j));
        Self {
            a: self.a[..m].to_vec(),
            d: self.d[..m].to_vec(),
            b: sub(&self.b),
            c: sub(&self.c),
        }
    }

    /// Whether the zero pattern of `M` is strongly connected.
    pub fn is_irreducible(&self) -> bool {
        is_irreducible(&self.loop_gain())
    }
}

/// Strong connectivity of the nonzero pattern of a square matrix.
pub fn is_irreducible(m: &Mat) -> bool {
    let n = m.rows;
    if n == 1 {
        return true;
    }
    let reach = |fwd: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let v = if fwd { m.get(i, j) } else { m.get(j, i) };
                if v != 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Positive real eigenvalue of a Schur block system.
#[derive(Debug, Clone, PartialEq)]
pub struct SchurPerron {
    pub lambda: f64,
    /// `(x*, y*)`, unit Euclidean norm.
    pub eigvec: Vec<f64>,
    /// `rho(M)`.
    pub loop_gain: f64,
    /// `||J v - lambda v||`.
    pub residual: f64,
}

const PERRON_TOL: f64 = 1e-15;
const PERRON_ITERS: usize = 200_000;

fn spectral_radius(m: &Mat) -> Result<(f64, Vec<f64>)> {
    match perron_root(m, PERRON_TOL, PERRON_ITERS) {
        Err(Error::PowerIterationStall) => {
            let start = (0..m.rows).map(|i| 1.0 + 0.37 * num::sin(1.0 + i as f64).abs()).collect();
            perron_root_from(m, start, PERRON_TOL, 4 * PERRON_ITERS)
        }
        r => r,
    }
}

/// Solves `rho(K(lambda)) = 1` by bisection when `rho(M) > 1`.
pub fn schur_perron(blocks: &SchurBlocks) -> Result<SchurPerron> {
    let (rho0, _) = spectral_radius(&blocks.loop_gain())?;
    if rho0 <= 1.0 {
        return Err(Error::NoPositiveEigenvalue(rho0));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while spectral_radius(&blocks.k_lambda(hi))?.0 >= 1.0 {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-14 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if spectral_radius(&blocks.k_lambda(mid))?.0 >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let (_, y) = spectral_radius(&blocks.k_lambda(lambda))?;
    let n = blocks.n();
    let mut v = vec![0.0; 2 * n];
    for i in 0..n {
        v[i] = (0..n).map(|k| blocks.b.get(i, k) * y[k]).sum::<f64>() / (blocks.a[i] + lambda);
        v[n + i] = y[i];
    }
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut jv = vec![0.0; 2 * n];
    blocks.jacobian().matvec(&v, &mut jv);
    let residual = num::sqrt(jv.iter().zip(&v).map(|(a, b)| num::powi(a - lambda * b, 2)).sum());
    Ok(SchurPerron {
        lambda,
        eigvec: v,
        loop_gain: rho0,
        residual,
    })
}

/// Positive eigenvalues of nested principal truncations; errors unless they
/// increase strictly.
pub fn perron_truncation_monotonicity(nested: &[SchurBlocks]) -> Result<Vec<f64>> {
    for (i, pair) in nested.windows(2).enumerate() {
        let m = pair[0].n();
        if pair[1].n() <= m || pair[1].truncate(m) != pair[0] {
            return Err(Error::HypothesisViolation(alloc::format!(
                "level {} does not extend level {} as a principal submatrix",
                i + 2,
                i + 1
            )));
        }
    }
    for (i, b) in nested.iter().enumerate() {
        if !b.is_irreducible() {
            return Err(Error::HypothesisViolation(alloc::format!("loop gain at level {} is reducible", i + 1)));
        }
    }
    let lambdas = nested.iter().map(|b| schur_perron(b).map(|s| s.lambda)).collect::<Result<Vec<_>>>()?;
    if let Some(i) = lambdas.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::MonotonicityViolation(i + 2));
    }
    Ok(lambdas)
}

/// Finite-difference Jacobian settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianOptions {
    pub rel_step: f64,
    pub min_step: f64,
    /// Allowed relative gap between the two step sizes.
    pub consistency: f64,
}

impl Default for JacobianOptions {
    fn default() -> Self {
        Self {
            rel_step: 1e-6,
            min_step: 1e-6,
            consistency: 1e-7,
        }
    }
}

pub fn reduced_field_jacobian<F: Fn(&[f64], &mut [f64])>(field: F, x: &[f64]) -> Result<Mat> {
    reduced_field_jacobian_with(field, x, JacobianOptions::default())
}

/// Central differences at steps `h` and `h/2` combined by Richardson
/// extrapolation.
pub fn reduced_field_jacobian_with<F: Fn(&[f64], &mut [f64])>(field: F, x: &[f64], opts: JacobianOptions) -> Result<Mat> {
    let n = x.len();
    let mut probe = vec![0.0; n];
    field(x, &mut probe);
    let rows = probe.len();
    let mut jac = Mat::zeros(rows, n);
    let mut coarse = Mat::zeros(rows, n);
    let mut fine = Mat::zeros(rows, n);
    let mut xp = x.to_vec();
    let (mut fp, mut fm) = (vec![0.0; rows], vec![0.0; rows]);
    let mut central = |xp: &mut Vec<f64>, j: usize, h: f64, out: &mut Mat| {
        let x0 = xp[j];
        xp[j] = x0 + h;
        field(xp, &mut fp);
        xp[j] = x0 - h;
        field(xp, &mut fm);
        xp[j] = x0;
        for i in 0..rows {
            out.set(i, j, (fp[i] - fm[i]) / (2.0 * h));
        }
    };
    for j in 0..n {
        let h = opts.min_step.max(opts.rel_step * num::abs(x[j]));
        central(&mut xp, j, h, &mut coarse);
        central(&mut xp, j, 0.5 * h, &mut fine);
    }
    for k in 0..rows * n {
        jac.data[k] = (4.0 * fine.data[k] - coarse.data[k]) / 3.0;
    }
    let scale = jac.max_abs();
    let gap = coarse.data.iter().zip(&fine.data).fold(0.0f64, |g, (a, b)| g.max(num::abs(a - b)));
    if scale > 0.0 && gap > opts.consistency * scale {
        return Err(Error::JacobianInconsistent(gap / scale));
    }
    Ok(jac)
}

/// Linear threshold functional `h(x) = grad . x - level`.
#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    pub grad: Vec<f64>,
    pub level: f64,
}

impl Threshold {
    /// `x_i - level`.
    pub fn coordinate(dim: usize, i: usize, level: f64) -> Self {
        let mut grad = vec![0.0; dim];
        grad[i] = 1.0;
        Self { grad, level }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.grad, x) - self.level
    }
}

/// Quadrature in the homotopy parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NuQuadrature {
    GaussLegendre(usize),
    Adaptive(QuadTolerance),
}

/// Integration settings for [`homotopy_escape_identity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomotopyOptions {
    pub forward: OdeOptions,
    pub adjoint: OdeOptions,
    pub t_max: f64,
    /// Interior times at which `p . f = 1` is checked.
    pub normalization_points: usize,
    pub transversality_tol: f64,
    pub jacobian: JacobianOptions,
    pub adjoint_jacobian: AdjointJacobian,
}

/// How the adjoint evaluates `J^T p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjointJacobian {
    /// Full finite-difference Jacobian at every evaluation.
    Full,
    /// `J p` by a Richardson-extrapolated directional difference; valid when
    /// every `f_nu` has a symmetric Jacobian (gradient fields).
    Symmetric,
}

impl Default for HomotopyOptions {
    fn default() -> Self {
        let forward = OdeOptions {
            rel_tol: 1e-12,
            abs_tol: 1e-16,
            event_tol: 1e-13,
            ..OdeOptions::default()
        };
        Self {
            forward,
            adjoint: OdeOptions {
                rel_tol: 1e-11,
                abs_tol: 1e-14,
                ..OdeOptions::default()
            },
            t_max: 1e12,
            normalization_points: 32,
            transversality_tol: 1e-300,
            jacobian: JacobianOptions::default(),
            adjoint_jacobian: AdjointJacobian::Full,
        }
    }
}

/// First variation at one homotopy node.
#[derive(Debug, Clone, PartialEq)]
pub struct HomotopyNode {
    pub nu: f64,
    pub a: f64,
    pub t_escape: f64,
    /// `max |p . f_nu - 1|` over the checked times.
    pub normalization_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomotopyResult {
    pub t0: f64,
    pub t1: f64,
    pub nodes: Vec<HomotopyNode>,
    pub integral: f64,
    pub identity_residual: f64,
}

impl HomotopyResult {
    pub fn max_normalization_error(&self) -> f64 {
        self.nodes.iter().map(|n| n.normalization_error).fold(0.0, f64::max)
    }
}

struct Homotopy<'a, F0, F1> {
    f0: &'a F0,
    f1: &'a F1,
    x0: &'a [f64],
    h: &'a Threshold,
    opts: &'a HomotopyOptions,
}

impl<F0, F1> Homotopy<'_, F0, F1>
where
    F0: Fn(&[f64], &mut [f64]),
    F1: Fn(&[f64], &mut [f64]),
{
    fn field(&self, nu: f64, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        (self.f0)(x, out);
        (self.f1)(x, scratch);
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o = (1.0 - nu) * *o + nu * s;
        }
    }

    fn escape(&self, nu: f64, keep_dense: bool) -> Result<(f64, Option<crate::ode::DenseSolution>)> {
        let n = self.x0.len();
        let mut scratch = vec![0.0; n];
        let sol = Dopri5::new(self.opts.forward).solve(
            |_, x: &[f64], dx: &mut [f64]| self.field(nu, x, dx, &mut scratch),
            0.0,
            self.x0,
            self.opts.t_max,
            Some(|_: f64, x: &[f64]| self.h.eval(x)),
            &[],
            keep_dense,
        )?;
        let hit = sol.event.ok_or(Error::EventNotReached { t_max: self.opts.t_max })?;
        let mut fx = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        self.field(nu, &hit.y, &mut fx, &mut scratch);
        let rate = dot(&self.h.grad, &fx);
        if !(rate > self.opts.transversality_tol) {
            return Err(Error::NonTransversalEscape(rate));
        }
        Ok((hit.t, sol.dense))
    }

    /// Richardson-extrapolated central difference of `f_nu` along `p`.
    fn directional(&self, nu: f64, x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        let n = x.len();
        let pn = norm2(p);
        if pn == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return Ok(());
        }
        let xn = norm2(x);
        let h = self.opts.jacobian.min_step.max(self.opts.jacobian.rel_step * xn);
        let mut xp = vec![0.0; n];
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut diff = |step: f64, res: &mut [f64]| {
            for i in 0..n {
                xp[i] = x[i] + step * p[i] / pn;
            }
            self.field(nu, &xp, &mut fp, &mut s);
            for i in 0..n {
                xp[i] = x[i] - step * p[i] / pn;
            }
            self.field(nu, &xp, &mut fm, &mut s);
            for i in 0..n {
                res[i] = (fp[i] - fm[i]) / (2.0 * step) * pn;
            }
        };
        let mut coarse = vec![0.0; n];
        diff(h, &mut coarse);
        diff(0.5 * h, out);
        let mut gap = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..n {
            gap = gap.max(num::abs(out[i] - coarse[i]));
            out[i] = (4.0 * out[i] - coarse[i]) / 3.0;
            scale = scale.max(num::abs(out[i]));
        }
        if scale > 0.0 && gap > self.opts.jacobian.consistency * scale {
            return Err(Error::JacobianInconsistent(gap / scale));
        }
        Ok(())
    }

    fn node(&self, nu: f64) -> Result<HomotopyNode> {
        let n = self.x0.len();
        let (t_esc, dense) = self.escape(nu, true)?;
        let dense = dense.expect("dense output requested");
        let mut x = vec![0.0; n];
        dense.eval_into(t_esc, &mut x);
        let mut fx = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        self.field(nu, &x, &mut fx, &mut scratch);
        let denom = dot(&self.h.grad, &fx);
        // State: adjoint p followed by the running integral of p . (f1 - f0).
        let mut y_end: Vec<f64> = self.h.grad.iter().map(|g| g / denom).collect();
        y_end.push(0.0);
        let k = self.opts.normalization_points;
        let checks: Vec<f64> = (0..=k).rev().map(|i| t_esc * i as f64 / (k + 1) as f64).collect();
        let mut err = None;
        let sol = {
            let mut xt = vec![0.0; n];
            let mut f0 = vec![0.0; n];
            let mut f1 = vec![0.0; n];
            Dopri5::new(self.opts.adjoint).solve(
                |t, y: &[f64], dy: &mut [f64]| {
                    dense.eval_into(t, &mut xt);
                    match self.opts.adjoint_jacobian {
                        AdjointJacobian::Full => {
                            let jac = reduced_field_jacobian_with(
                                |z: &[f64], out: &mut [f64]| {
                                    let mut s = vec![0.0; n];
                                    self.field(nu, z, out, &mut s)
                                },
                                &xt,
                                self.opts.jacobian,
                            );
                            match jac {
                                Ok(j) => j.matvec_t(&y[..n], &mut dy[..n]),
                                Err(e) => {
                                    err.get_or_insert(e);
                                    dy[..n].iter_mut().for_each(|v| *v = 0.0);
                                }
                            }
                        }
                        AdjointJacobian::Symmetric => {
                            if let Err(e) = self.directional(nu, &xt, &y[..n], &mut dy[..n]) {
                                err.get_or_insert(e);
                            }
                        }
                    }
                    dy[..n].iter_mut().for_each(|v| *v = -*v);
                    (self.f0)(&xt, &mut f0);
                    (self.f1)(&xt, &mut f1);
                    dy[n] = y[..n].iter().zip(f1.iter().zip(&f0)).map(|(p, (a, b))| p * (a - b)).sum();
                },
                t_esc,
                &y_end,
                0.0,
                None::<fn(f64, &[f64]) -> f64>,
                &checks,
                false,
            )?
        };
        if let Some(e) = err {
            return Err(e);
        }
        let mut worst = 0.0f64;
        for (t, y) in &sol.snapshots {
            dense.eval_into(*t, &mut x);
            self.field(nu, &x, &mut fx, &mut scratch);
            worst = worst.max(num::abs(dot(&y[..n], &fx) - 1.0));
        }
        Ok(HomotopyNode {
            nu,
            a: sol.y[n],
            t_escape: t_esc,
            normalization_error: worst,
        })
    }
}

/// Escape-time homotopy identity `T(1) - T(0) = int_0^1 A(nu) dnu` along
/// `f_nu = (1 - nu) f0 + nu f1`.
pub fn homotopy_escape_identity<F0, F1>(
    f0: &F0,
    f1: &F1,
    x0: &[f64],
    h: &Threshold,
    nu: NuQuadrature,
    opts: &HomotopyOptions,
) -> Result<HomotopyResult>
where
    F0: Fn(&[f64], &mut [f64]),
    F1: Fn(&[f64], &mut [f64]),
{
    if h.grad.len() != x0.len() {
        return Err(Error::DimensionMismatch("threshold gradient must match the state".into()));
    }
    let hom = Homotopy { f0, f1, x0, h, opts };
    let (t0, _) = hom.escape(0.0, false)?;
    let (t1, _) = hom.escape(1.0, false)?;
    let mut nodes = Vec::new();
    let integral = match nu {
        NuQuadrature::GaussLegendre(k) => {
            let rule = gauss_legendre(k)?;
            let mut acc = 0.0;
            for (&v, &w) in rule.nodes.iter().zip(&rule.weights) {
                let node = hom.node(v)?;
                acc += w * node.a;
                nodes.push(node);
            }
            acc
        }
        NuQuadrature::Adaptive(tol) => {
            let mut err = None;
            let res = adaptive_integrate(
                |v| match hom.node(v) {
                    Ok(node) => {
                        let a = node.a;
                        nodes.push(node);
                        a
                    }
                    Err(e) => {
                        err.get_or_insert(e);
                        0.0
                    }
                },
                0.0,
                1.0,
                tol,
            )?;
            if let Some(e) = err {
                return Err(e);
            }
            nodes.sort_by(|a, b| a.nu.total_cmp(&b.nu));
            res.value
        }
    };
    Ok(HomotopyResult {
        t0,
        t1,
        nodes,
        integral,
        identity_residual: num::abs(t1 - t0 - integral),
    })
}

/// Block-aligned closure of a `K`-mode teacher at depth `L`.
///
/// State layout: `X_{l,k}` at `k L + l`, then the off-block amplitudes
/// `C_{l,kk'}` of each hidden weight `W_2 .. W_{L-1}`, then the layer-1
/// rotations `eta_{k,m}`, pairs `k != k'` in row-major order. A block of
/// width `N_B` maps onto the full network as `W_1` rows
/// `X_{1,k} v_k + sum_m eta_{k,m} v_m`, hidden entries `X_{l,k}/N_B`
/// on-block and `C_{l,kk'}/N_B` off-block, readout entries
/// `X_{L,k}/sqrt(N_B)`. Permutation symmetry within blocks keeps the full
/// network on this family, so the closure flow is exact.
#[derive(Debug, Clone)]
pub struct BlockClosure {
    pub l: usize,
    pub k: usize,
    pub nb: f64,
    pub teacher: TeacherSpec,
    batch: Batch,
}

impl BlockClosure {
    /// `betas` sets the mode count; expectations use a tensor
    /// Gauss–Hermite grid with `nodes` points per mode.
    pub fn new(l: usize, nb: usize, betas: &[f64], act: Activation, nodes: usize) -> Result<Self> {
        if l < 3 || betas.len() < 2 {
            return Err(Error::InvalidArgument("need L >= 3 and at least two modes".into()));
        }
        let k = betas.len();
        let teacher = TeacherSpec::axis_aligned(k, betas, act)?;
        let basis: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let batch = Batch::subspace(&teacher, &basis, nodes)?;
        Ok(Self {
            l,
            k,
            nb: nb as f64,
            teacher,
            batch,
        })
    }

    pub fn dim(&self) -> usize {
        self.l * self.k + (self.l - 1) * self.k * (self.k - 1)
    }

    pub fn x_index(&self, layer: usize, block: usize) -> usize {
        block * self.l + layer
    }

    fn pair_index(&self, k: usize, m: usize) -> usize {
        k * (self.k - 1) + if m < k { m } else { m - 1 }
    }

    /// Off-block amplitude of hidden weight `layer` (`1..L-1`, zero-based).
    pub fn c_index(&self, layer: usize, k: usize, kp: usize) -> usize {
        debug_assert!(layer >= 1 && layer + 1 < self.l);
        self.l * self.k + (layer - 1) * self.k * (self.k - 1) + self.pair_index(k, kp)
    }

    pub fn eta_index(&self, k: usize, m: usize) -> usize {
        self.l * self.k + (self.l - 2) * self.k * (self.k - 1) + self.pair_index(k, m)
    }

    /// Every block on the balanced ansatz at `eps`, couplings zero.
    pub fn balanced_state(&self, eps: f64) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        x[..self.l * self.k].iter_mut().for_each(|v| *v = eps);
        x
    }

    /// Equivalent `K`-unit network on the `K` teacher coordinates.
    pub fn mini_network(&self, x: &[f64]) -> WeightStack {
        let (l, k) = (self.l, self.k);
        let mut w = Vec::with_capacity(l);
        w.push(Mat::from_fn(k, k, |r, c| {
            if r == c {
                x[self.x_index(0, r)]
            } else {
                x[self.eta_index(r, c)]
            }
        }));
        for layer in 1..l - 1 {
            w.push(Mat::from_fn(k, k, |r, c| {
                if r == c {
                    x[self.x_index(layer, r)]
                } else {
                    x[self.c_index(layer, r, c)]
                }
            }));
        }
        let s = num::sqrt(self.nb);
        w.push(Mat::from_fn(1, k, |_, c| s * x[self.x_index(l - 1, c)]));
        WeightStack { w }
    }

    /// Block-aligned full network of width `K N_B` on a `d`-dimensional
    /// input whose first `K` axes are the teacher directions.
    pub fn full_network(&self, x: &[f64], d: usize) -> Result<WeightStack> {
        if d < self.k {
            return Err(Error::DimensionMismatch(alloc::format!("input dimension {d} below {} modes", self.k)));
        }
        let nb = self.nb as usize;
        let n = nb * self.k;
        let mini = self.mini_network(x);
        let l = self.l;
        let mut w = Vec::with_capacity(l);
        w.push(Mat::from_fn(n, d, |r, c| if c < self.k { mini.w[0].get(r / nb, c) } else { 0.0 }));
        for layer in 1..l - 1 {
            w.push(Mat::from_fn(n, n, |r, c| mini.w[layer].get(r / nb, c / nb) / self.nb));
        }
        w.push(Mat::from_fn(1, n, |_, c| x[self.x_index(l - 1, c / nb)] / num::sqrt(self.nb)));
        WeightStack::new(w)
    }

    pub fn loss(&self, x: &[f64]) -> Result<f64> {
        Ok(loss_and_gradient(&self.mini_network(x), &self.teacher.act, &self.batch)?.0)
    }

    /// Population flow `y' = -(1/N_B) dL/dy` restricted to the closure.
    pub fn field(&self, x: &[f64], out: &mut [f64]) {
        let (l, k) = (self.l, self.k);
        let (_, g) = loss_and_gradient(&self.mini_network(x), &self.teacher.act, &self.batch)
            .expect("closure gradient is finite for finite states");
        let s = -1.0 / self.nb;
        for b in 0..k {
            out[self.x_index(0, b)] = s * g[0].get(b, b);
            for layer in 1..l - 1 {
                out[self.x_index(layer, b)] = s * g[layer].get(b, b);
            }
            out[self.x_index(l - 1, b)] = s * num::sqrt(self.nb) * g[l - 1].get(0, b);
            for m in 0..k {
                if m != b {
                    for layer in 1..l - 1 {
                        out[self.c_index(layer, b, m)] = s * g[layer].get(b, m);
                    }
                    out[self.eta_index(b, m)] = s * g[0].get(b, m);
                }
            }
        }
    }

    /// Per-mode drive `K_k = beta_k h_sigma alpha^{L-1} / sqrt(N_B)`.
    pub fn mode_drives(&self) -> Result<Vec<f64>> {
        let h = hermite_moments(&self.teacher.act, 128)?.h_sigma;
        let a = num::powi(self.teacher.act.alpha, self.l as i32 - 1);
        Ok(self.teacher.modes.iter().map(|(_, b)| b * h * a / num::sqrt(self.nb)).collect())
    }

    /// Decoupled leading-order field: each block follows its own product
    /// drive and the couplings are frozen.
    pub fn decoupled_field(&self) -> Result<impl Fn(&[f64], &mut [f64]) + '_> {
        let drives = self.mode_drives()?;
        Ok(move |x: &[f64], out: &mut [f64]| {
            out.iter_mut().for_each(|v| *v = 0.0);
            for (b, &kb) in drives.iter().enumerate() {
                let r = b * self.l..(b + 1) * self.l;
                leading_product_field(kb, &x[r.clone()], &mut out[r]);
            }
        })
    }
}
