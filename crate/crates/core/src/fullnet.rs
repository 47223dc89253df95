//! Dense network simulator on Gaussian inputs: initializations, population
//! loss and gradients, (S)GD, and the observables of the imbalance identity
//! and the signal-energy argument.
//!
//! The network is `f(x) = W_L h_{L-1}` with `h_0 = x`, `z_l = W_l h_{l-1}`,
//! `h_l = sigma(z_l)` for `l < L`. Inputs are `x ~ N(0, I_d)` and the teacher
//! is `y = sum_k beta_k sigma(v_k . x)`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::linalg::{dot, gemm, norm2, Mat};
use crate::num;
use crate::quadrature::gauss_hermite;
use crate::rng;

/// Layer weights `W_1 (N x d)`, `W_l (N x N)`, `W_L (1 x N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStack {
    pub w: Vec<Mat>,
}

impl WeightStack {
    pub fn new(w: Vec<Mat>) -> Result<Self> {
        if w.len() < 2 {
            return Err(Error::ShapeMismatch("need at least two layers".into()));
        }
        for i in 1..w.len() {
            if w[i].cols != w[i - 1].rows {
                return Err(Error::ShapeMismatch(alloc::format!(
                    "layer {} has {} inputs but layer {} has {} outputs",
                    i + 1,
                    w[i].cols,
                    i,
                    w[i - 1].rows
                )));
            }
        }
        if w[w.len() - 1].rows != 1 {
            return Err(Error::ShapeMismatch("output layer must have one row".into()));
        }
        Ok(Self { w })
    }

    pub fn depth(&self) -> usize {
        self.w.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w[0].cols
    }

    pub fn width(&self) -> usize {
        self.w[0].rows
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(Mat::is_finite)
    }

    /// Squared Frobenius norms per layer.
    pub fn frobenius_sq(&self) -> Vec<f64> {
        self.w.iter().map(Mat::frobenius_sq).collect()
    }

    pub fn param_count(&self) -> usize {
        self.w.iter().map(|m| m.data.len()).sum()
    }
}

/// Orthonormal teacher modes with strictly decreasing amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSpec {
    pub modes: Vec<(Vec<f64>, f64)>,
    pub act: Activation,
}

impl TeacherSpec {
    pub fn new(modes: Vec<(Vec<f64>, f64)>, act: Activation) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidArgument("teacher needs at least one mode".into()));
        }
        let d = modes[0].0.len();
        for (i, (vi, bi)) in modes.iter().enumerate() {
            if vi.len() != d {
                return Err(Error::DimensionMismatch("teacher directions differ in length".into()));
            }
            if !(*bi > 0.0) {
                return Err(Error::InvalidArgument(alloc::format!("amplitude {bi} is not positive")));
            }
            if i > 0 && !(modes[i - 1].1 > *bi) {
                return Err(Error::InvalidArgument("amplitudes must be strictly decreasing".into()));
            }
            for (j, (vj, _)) in modes.iter().enumerate().take(i + 1) {
                let target = if i == j { 1.0 } else { 0.0 };
                if num::abs(dot(vi, vj) - target) > 1e-12 {
                    return Err(Error::InvalidArgument("teacher directions are not orthonormal".into()));
                }
            }
        }
        Ok(Self { modes, act })
    }

    /// Modes along the first coordinate axes.
    pub fn axis_aligned(d: usize, betas: &[f64], act: Activation) -> Result<Self> {
        if betas.len() > d {
            return Err(Error::DimensionMismatch(alloc::format!("{} modes in dimension {d}", betas.len())));
        }
        let modes = betas
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let mut v = vec![0.0; d];
                v[k] = 1.0;
                (v, b)
            })
            .collect();
        Self::new(modes, act)
    }

    pub fn dim(&self) -> usize {
        self.modes[0].0.len()
    }

    pub fn direction(&self, k: usize) -> &[f64] {
        &self.modes[k].0
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.modes[k].1
    }

    pub fn target(&self, x: &[f64]) -> f64 {
        self.modes.iter().map(|(v, b)| b * self.act.sigma(dot(v, x))).sum()
    }
}

/// Symmetric aligned ansatz.
pub fn init_ansatz(d: usize, n: usize, x0: &[f64], direction: &[f64]) -> Result<WeightStack> {
    let l = x0.len();
    if l < 2 || direction.len() != d || n == 0 {
        return Err(Error::DimensionMismatch(alloc::format!(
            "need L >= 2 scales and a direction of length d = {d} (got {} and {})",
            l,
            direction.len()
        )));
    }
    if num::abs(norm2(direction) - 1.0) > 1e-12 {
        return Err(Error::InvalidArgument("direction must be a unit vector".into()));
    }
    let nf = n as f64;
    let mut w = Vec::with_capacity(l);
    w.push(Mat::from_fn(n, d, |_, j| x0[0] * direction[j]));
    for &x in &x0[1..l - 1] {
        w.push(Mat::from_fn(n, n, |_, _| x / nf));
    }
    w.push(Mat::from_fn(1, n, |_, _| x0[l - 1] / num::sqrt(nf)));
    WeightStack::new(w)
}

/// He-normal weights with the first `r` layers scaled by `eps`.
pub fn init_he_bottleneck(d: usize, n: usize, l: usize, eps: f64, r: usize, seed: u64) -> Result<WeightStack> {
    if l < 2 || r == 0 || r > l {
        return Err(Error::InvalidArgument(alloc::format!("need L >= 2 and 1 <= r <= L (got L = {l}, r = {r})")));
    }
    let mut g = rng::stream(seed, 0, 0);
    let mut w = Vec::with_capacity(l);
    for i in 0..l {
        let (rows, cols) = match i {
            0 => (n, d),
            _ if i == l - 1 => (1, n),
            _ => (n, n),
        };
        let sd = num::sqrt(2.0 / cols as f64) * if i < r { eps } else { 1.0 };
        let data = (0..rows * cols).map(|_| sd * rng::normal(&mut g)).collect();
        w.push(Mat::from_vec(rows, cols, data)?);
    }
    WeightStack::new(w)
}

/// Block-aligned ansatz: `N / K` units per teacher mode, every layer at `eps`.
pub fn init_block_modewise(n: usize, l: usize, k_modes: usize, eps: f64, teacher: &TeacherSpec) -> Result<WeightStack> {
    if k_modes == 0 || n % k_modes != 0 {
        return Err(Error::IndivisibleWidth { n, k: k_modes });
    }
    if k_modes > teacher.modes.len() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "{k_modes} blocks but {} teacher modes",
            teacher.modes.len()
        )));
    }
    let d = teacher.dim();
    let nb = n / k_modes;
    let nbf = nb as f64;
    let mut w = Vec::with_capacity(l);
    w.push(Mat::from_fn(n, d, |i, j| eps * teacher.direction(i / nb)[j]));
    for _ in 1..l - 1 {
        w.push(Mat::from_fn(n, n, |i, j| if i / nb == j / nb { eps / nbf } else { 0.0 }));
    }
    w.push(Mat::from_fn(1, n, |_, _| eps / num::sqrt(nbf)));
    WeightStack::new(w)
}

/// Ansatz scales `X_l` read off a network.
pub fn ansatz_scales(ws: &WeightStack, direction: &[f64]) -> Vec<f64> {
    let n = ws.width() as f64;
    let l = ws.depth();
    let mut out = Vec::with_capacity(l);
    let w1 = &ws.w[0];
    out.push((0..w1.rows).map(|i| dot(w1.row(i), direction)).sum::<f64>() / n);
    for m in &ws.w[1..l - 1] {
        out.push(m.data.iter().sum::<f64>() / n);
    }
    out.push(ws.w[l - 1].data.iter().sum::<f64>() / num::sqrt(n));
    out
}

/// Largest within-layer deviation from the shared row or entry, relative to
/// the layer scale.
pub fn ansatz_residual(ws: &WeightStack) -> f64 {
    let mut worst = 0.0f64;
    let w1 = &ws.w[0];
    let mut mean = vec![0.0; w1.cols];
    for i in 0..w1.rows {
        for (m, v) in mean.iter_mut().zip(w1.row(i)) {
            *m += v / w1.rows as f64;
        }
    }
    let scale = norm2(&mean).max(f64::MIN_POSITIVE);
    for i in 0..w1.rows {
        let dev = w1.row(i).iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        worst = worst.max(num::sqrt(dev) / scale);
    }
    for m in &ws.w[1..] {
        let mu = m.data.iter().sum::<f64>() / m.data.len() as f64;
        let dev = m.data.iter().fold(0.0f64, |a, &v| a.max(num::abs(v - mu)));
        worst = worst.max(dev / num::abs(mu).max(f64::MIN_POSITIVE));
    }
    worst
}

/// Inputs, teacher targets and probability weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Mat,
    pub y: Vec<f64>,
    pub weight: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Fresh `N(0, I_d)` sample with equal weights.
    pub fn monte_carlo<R: RngCore>(teacher: &TeacherSpec, size: usize, rng: &mut R) -> Self {
        let mut b = Self {
            x: Mat::default(),
            y: Vec::new(),
            weight: Vec::new(),
        };
        b.refill_monte_carlo(teacher, size, rng);
        b
    }

    /// Redraws in place, reusing storage.
    pub fn refill_monte_carlo<R: RngCore>(&mut self, teacher: &TeacherSpec, size: usize, rng: &mut R) {
        self.x.ensure_shape(size, teacher.dim());
        for v in self.x.data.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        self.y.clear();
        self.y.extend((0..size).map(|b| teacher.target(self.x.row(b))));
        self.weight.clear();
        self.weight.resize(size, 1.0 / size as f64);
    }

    /// Tensor Gauss–Hermite rule on `span(basis)`.
    pub fn subspace(teacher: &TeacherSpec, basis: &[Vec<f64>], nodes: usize) -> Result<Self> {
        let d = teacher.dim();
        let k = basis.len();
        if k == 0 || basis.iter().any(|b| b.len() != d) {
            return Err(Error::DimensionMismatch("basis vectors must have the input dimension".into()));
        }
        let rule = gauss_hermite(nodes)?;
        let total = nodes.checked_pow(k as u32).ok_or_else(|| Error::InvalidArgument("grid too large".into()))?;
        let mut x = Mat::zeros(total, d);
        let mut weight = vec![0.0; total];
        let mut idx = vec![0usize; k];
        for p in 0..total {
            let mut rem = p;
            for i in idx.iter_mut() {
                *i = rem % nodes;
                rem /= nodes;
            }
            let mut wgt = 1.0;
            let row = x.row_mut(p);
            for (a, &i) in idx.iter().enumerate() {
                wgt *= rule.weights[i];
                let g = rule.nodes[i];
                for (r, b) in row.iter_mut().zip(&basis[a]) {
                    *r += g * b;
                }
            }
            weight[p] = wgt;
        }
        let y = (0..total).map(|b| teacher.target(x.row(b))).collect();
        Ok(Self { x, y, weight })
    }
}

/// How population expectations are evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    /// Gauss–Hermite along the first teacher direction.
    Quadrature { nodes: usize },
    /// Tensor Gauss–Hermite over an orthonormal basis.
    Subspace { basis: Vec<Vec<f64>>, nodes: usize },
    /// Fresh Gaussian batch per evaluation, drawn from `(seed, run, step)`.
    MonteCarlo { batch: usize, seed: u64, run: u64 },
}

fn span_residual(v: &[f64], basis: &[Vec<f64>]) -> f64 {
    let mut r = v.to_vec();
    for b in basis {
        let c = dot(&r, b);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri -= c * bi;
        }
    }
    norm2(&r)
}

impl Estimator {
    fn basis(&self, teacher: &TeacherSpec) -> Option<Vec<Vec<f64>>> {
        match self {
            Estimator::Quadrature { .. } => Some(vec![teacher.direction(0).to_vec()]),
            Estimator::Subspace { basis, .. } => Some(basis.clone()),
            Estimator::MonteCarlo { .. } => None,
        }
    }

    /// Checks that the network and teacher depend on the input only through
    /// the quadrature subspace.
    pub fn validate(&self, ws: &WeightStack, teacher: &TeacherSpec) -> Result<()> {
        let Some(basis) = self.basis(teacher) else {
            return Ok(());
        };
        let w1 = &ws.w[0];
        let scale = w1.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..w1.rows {
            if span_residual(w1.row(i), &basis) > 1e-10 * scale * num::sqrt(w1.cols as f64) {
                return Err(Error::EstimatorMismatch);
            }
        }
        for (v, _) in &teacher.modes {
            if span_residual(v, &basis) > 1e-12 {
                return Err(Error::EstimatorMismatch);
            }
        }
        Ok(())
    }

    /// Deterministic batch for quadrature estimators; `None` for Monte Carlo.
    pub fn fixed_batch(&self, teacher: &TeacherSpec) -> Result<Option<Batch>> {
        match self {
            Estimator::Quadrature { nodes } => Ok(Some(Batch::subspace(teacher, &[teacher.direction(0).to_vec()], *nodes)?)),
            Estimator::Subspace { basis, nodes } => Ok(Some(Batch::subspace(teacher, basis, *nodes)?)),
            Estimator::MonteCarlo { .. } => Ok(None),
        }
    }

    /// Batch for step `step`.
    pub fn batch(&self, teacher: &TeacherSpec, step: u64) -> Result<Batch> {
        match self {
            Estimator::MonteCarlo { batch, seed, run } => {
                let mut g = rng::stream(*seed, *run, step);
                Ok(Batch::monte_carlo(teacher, *batch, &mut g))
            }
            _ => Ok(self.fixed_batch(teacher)?.expect("quadrature batch")),
        }
    }
}

/// Cached forward pass.
#[derive(Debug, Clone, Default)]
pub struct Forward {
    /// `h_l` for `l = 1..L-1`.
    pub h: Vec<Mat>,
    /// `sigma'(z_l)` for `l = 1..L-1`.
    pub dh: Vec<Mat>,
    /// `z_l` for `l = 1..L-1`.
    pub z: Vec<Mat>,
    pub f: Vec<f64>,
}

/// Reusable buffers for forward and backward passes.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    pub fw: Forward,
    pub grads: Vec<Mat>,
    coef: Vec<f64>,
    g: Mat,
    next: Mat,
    out: Mat,
}

pub fn forward(ws: &WeightStack, act: &Activation, x: &Mat) -> Forward {
    let mut fw = Forward::default();
    let mut out = Mat::default();
    forward_into(ws, act, x, &mut fw, &mut out);
    fw
}

fn forward_into(ws: &WeightStack, act: &Activation, x: &Mat, fw: &mut Forward, out: &mut Mat) {
    let l = ws.depth();
    let b = x.rows;
    fw.h.resize_with(l - 1, Mat::default);
    fw.dh.resize_with(l - 1, Mat::default);
    fw.z.resize_with(l - 1, Mat::default);
    for i in 0..l - 1 {
        let n = ws.w[i].rows;
        let (done, rest) = fw.h.split_at_mut(i);
        let prev = if i == 0 { x } else { &done[i - 1] };
        let z = &mut fw.z[i];
        z.ensure_shape(b, n);
        gemm(1.0, prev, false, &ws.w[i], true, 0.0, z);
        rest[0].ensure_shape(b, n);
        fw.dh[i].ensure_shape(b, n);
        act.eval_slice(&z.data, &mut rest[0].data, &mut fw.dh[i].data);
    }
    out.ensure_shape(b, 1);
    gemm(1.0, &fw.h[l - 2], false, &ws.w[l - 1], true, 0.0, out);
    fw.f.clear();
    fw.f.extend_from_slice(&out.data);
}

/// `sum_b coef_b d f(x_b) / d W_l` for every layer.
pub fn backward(ws: &WeightStack, x: &Mat, fw: &Forward, coef: &[f64]) -> Vec<Mat> {
    backward_with(ws, x, fw, coef, |_, _| {})
}

/// As [`backward`], calling `hook(l, g)` with `g = W_{l+1}^T (coef * d f / d z_{l+1})`
/// (one row per sample) before it is multiplied by `sigma'(z_l)`, for
/// `l = L-1` down to `1` (one-based).
pub fn backward_with<H: FnMut(usize, &Mat)>(ws: &WeightStack, x: &Mat, fw: &Forward, coef: &[f64], hook: H) -> Vec<Mat> {
    let mut grads = Vec::new();
    let (mut g, mut next) = (Mat::default(), Mat::default());
    backward_into(ws, x, fw, coef, &mut g, &mut next, &mut grads, hook);
    grads
}

#[allow(clippy::too_many_arguments)]
fn backward_into<H: FnMut(usize, &Mat)>(
    ws: &WeightStack,
    x: &Mat,
    fw: &Forward,
    coef: &[f64],
    g: &mut Mat,
    next: &mut Mat,
    grads: &mut Vec<Mat>,
    mut hook: H,
) {
    let l = ws.depth();
    let b = x.rows;
    grads.resize_with(l, Mat::default);
    for (gr, w) in grads.iter_mut().zip(&ws.w) {
        gr.ensure_shape(w.rows, w.cols);
    }
    // Output layer: grad_L = coef^T H_{L-1}.
    {
        let h = &fw.h[l - 2];
        let out = &mut grads[l - 1].data;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (bi, &c) in coef.iter().enumerate().take(b) {
            for (o, hv) in out.iter_mut().zip(h.row(bi)) {
                *o += c * hv;
            }
        }
    }
    let wl = ws.w[l - 1].row(0);
    g.ensure_shape(b, wl.len());
    for bi in 0..b {
        let c = coef[bi];
        for (gv, w) in g.row_mut(bi).iter_mut().zip(wl) {
            *gv = c * w;
        }
    }
    for i in (0..l - 1).rev() {
        hook(i + 1, g);
        for (gv, dv) in g.data.iter_mut().zip(&fw.dh[i].data) {
            *gv *= dv;
        }
        let prev = if i == 0 { x } else { &fw.h[i - 1] };
        gemm(1.0, g, true, prev, false, 0.0, &mut grads[i]);
        if i > 0 {
            next.ensure_shape(b, ws.w[i].cols);
            gemm(1.0, g, false, &ws.w[i], false, 0.0, next);
            core::mem::swap(g, next);
        }
    }
}

/// Loss `1/2 sum_b w_b (f_b - y_b)^2` and its gradient on a batch.
pub fn loss_and_gradient(ws: &WeightStack, act: &Activation, batch: &Batch) -> Result<(f64, Vec<Mat>)> {
    let mut work = Workspace::default();
    let loss = loss_and_gradient_into(ws, act, batch, &mut work)?;
    Ok((loss, work.grads))
}

/// As [`loss_and_gradient`], leaving the gradient in `work.grads`.
pub fn loss_and_gradient_into(ws: &WeightStack, act: &Activation, batch: &Batch, work: &mut Workspace) -> Result<f64> {
    forward_into(ws, act, &batch.x, &mut work.fw, &mut work.out);
    let mut loss = 0.0;
    work.coef.clear();
    for b in 0..batch.len() {
        let r = work.fw.f[b] - batch.y[b];
        loss += 0.5 * batch.weight[b] * r * r;
        work.coef.push(batch.weight[b] * r);
    }
    backward_into(ws, &batch.x, &work.fw, &work.coef, &mut work.g, &mut work.next, &mut work.grads, |_, _| {});
    for (i, g) in work.grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(i + 1));
        }
    }
    Ok(loss)
}

pub fn batch_loss(ws: &WeightStack, act: &Activation, batch: &Batch) -> f64 {
    let fw = forward(ws, act, &batch.x);
    (0..batch.len())
        .map(|b| {
            let r = fw.f[b] - batch.y[b];
            0.5 * batch.weight[b] * r * r
        })
        .sum()
}

/// Population loss under `estimator`; Monte Carlo uses step 0 of its stream.
pub fn population_loss(ws: &WeightStack, teacher: &TeacherSpec, estimator: &Estimator) -> Result<f64> {
    estimator.validate(ws, teacher)?;
    Ok(batch_loss(ws, &teacher.act, &estimator.batch(teacher, 0)?))
}

/// Monte Carlo loss with its standard error.
pub fn population_loss_mc(ws: &WeightStack, teacher: &TeacherSpec, samples: usize, seed: u64) -> (f64, f64) {
    let mut acc = MeanVar::default();
    for (chunk, size) in chunks(samples) {
        let mut g = rng::stream(seed, 1, chunk as u64);
        let batch = Batch::monte_carlo(teacher, size, &mut g);
        let fw = forward(ws, &teacher.act, &batch.x);
        for b in 0..size {
            let r = fw.f[b] - batch.y[b];
            acc.push(0.5 * r * r);
        }
    }
    (acc.mean(), acc.stderr())
}

const CHUNK: usize = 8192;

fn chunks(samples: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..samples.div_ceil(CHUNK)).map(move |c| (c, CHUNK.min(samples - c * CHUNK)))
}

/// Running mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanVar {
    n: f64,
    mean: f64,
    m2: f64,
}

impl MeanVar {
    pub fn push(&mut self, v: f64) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn count(&self) -> usize {
        self.n as usize
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            self.m2 / (self.n - 1.0)
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n < 2.0 {
            f64::INFINITY
        } else {
            num::sqrt(self.variance() / self.n)
        }
    }
}

/// Per-layer learning-rate convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    /// First layer `lr`, deeper layers `lr / width`.
    Normalized { width: f64 },
    Uniform,
}

impl Metric {
    pub fn layer_rate(&self, lr: f64, layer: usize) -> f64 {
        match *self {
            Metric::Normalized { width } if layer > 0 => lr / width,
            _ => lr,
        }
    }
}

/// In-place `W_l -= rate_l grad_l`.
pub fn apply_step(ws: &mut WeightStack, grads: &[Mat], lr: f64, metric: Metric) {
    for (i, (w, g)) in ws.w.iter_mut().zip(grads).enumerate() {
        w.axpy(-metric.layer_rate(lr, i), g);
    }
}

/// One gradient step on `batch`; returns the pre-step batch loss.
pub fn grad_step(ws: &mut WeightStack, teacher: &TeacherSpec, batch: &Batch, lr: f64, metric: Metric) -> Result<f64> {
    let (loss, grads) = loss_and_gradient(ws, &teacher.act, batch)?;
    apply_step(ws, &grads, lr, metric);
    Ok(loss)
}

/// Escape observable for training runs.
#[derive(Debug, Clone, PartialEq)]
pub enum EscapeRule {
    /// Instantaneous (batch) loss below each threshold; the run stops at the
    /// last one crossed.
    Loss(Vec<f64>),
    /// Mean over `rows` of `W_1 row . direction` at or above `threshold`.
    RowProjection {
        rows: core::ops::Range<usize>,
        direction: Vec<f64>,
        threshold: f64,
    },
}

impl EscapeRule {
    fn thresholds(&self) -> Vec<f64> {
        match self {
            EscapeRule::Loss(t) => t.clone(),
            EscapeRule::RowProjection { threshold, .. } => vec![*threshold],
        }
    }

    pub fn describe(&self) -> String {
        match self {
            EscapeRule::Loss(t) => alloc::format!("loss<{t:?}"),
            EscapeRule::RowProjection { rows, threshold, .. } => {
                alloc::format!("row_projection[{}..{}]>={threshold}", rows.start, rows.end)
            }
        }
    }
}

pub fn row_projection(ws: &WeightStack, rows: &core::ops::Range<usize>, direction: &[f64]) -> f64 {
    let w1 = &ws.w[0];
    rows.clone().map(|i| dot(w1.row(i), direction)).sum::<f64>() / rows.len() as f64
}

/// Training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub metric: Metric,
    pub estimator: Estimator,
    pub max_steps: usize,
    pub escape: EscapeRule,
    /// Keep a copy of the weights every this many steps (0 disables).
    pub snapshot_every: usize,
    /// Stop as soon as the escape rule fires.
    pub stop_at_escape: bool,
}

/// Weights and loss at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub loss: f64,
    pub weights: WeightStack,
}

/// Outcome of [`train_to_escape`].
#[derive(Debug, Clone, PartialEq)]
pub struct EscapeRecord {
    pub rule: String,
    pub thresholds: Vec<f64>,
    /// First step at which each threshold was crossed.
    pub escape_steps: Vec<Option<usize>>,
    pub lr: f64,
    pub steps_run: usize,
    pub final_loss: f64,
}

impl EscapeRecord {
    /// Escape time `step * lr` for threshold `i`.
    pub fn t_esc(&self, i: usize) -> Option<f64> {
        self.escape_steps[i].map(|s| s as f64 * self.lr)
    }

    pub fn crossed(&self) -> bool {
        self.escape_steps.iter().all(Option::is_some)
    }
}

/// Runs (S)GD until the escape rule fires or the step budget is spent.
///
/// Step `s` evaluates the rule on the weights after `s` updates; the escape
/// time is `s * lr`.
pub fn train_to_escape(w0: &WeightStack, teacher: &TeacherSpec, cfg: &TrainConfig) -> Result<(EscapeRecord, Vec<Snapshot>)> {
    if !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }
    cfg.estimator.validate(w0, teacher)?;
    let fixed = cfg.estimator.fixed_batch(teacher)?;
    let thresholds = cfg.escape.thresholds();
    let mut hits: Vec<Option<usize>> = vec![None; thresholds.len()];
    let mut ws = w0.clone();
    let mut snaps = Vec::new();
    let mut last_loss;
    let mut step = 0usize;
    let mut work = Workspace::default();
    let mut scratch = Batch {
        x: Mat::default(),
        y: Vec::new(),
        weight: Vec::new(),
    };
    loop {
        let batch = match (&fixed, &cfg.estimator) {
            (Some(b), _) => b,
            (None, Estimator::MonteCarlo { batch, seed, run }) => {
                let mut g = rng::stream(*seed, *run, step as u64);
                scratch.refill_monte_carlo(teacher, *batch, &mut g);
                &scratch
            }
            (None, _) => unreachable!("quadrature estimators have a fixed batch"),
        };
        let loss = loss_and_gradient_into(&ws, &teacher.act, batch, &mut work)?;
        last_loss = loss;
        if cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0 {
            snaps.push(Snapshot {
                step,
                t: step as f64 * cfg.lr,
                loss,
                weights: ws.clone(),
            });
        }
        match &cfg.escape {
            EscapeRule::Loss(_) => {
                for (h, &t) in hits.iter_mut().zip(&thresholds) {
                    if h.is_none() && loss < t {
                        *h = Some(step);
                    }
                }
            }
            EscapeRule::RowProjection { rows, direction, threshold } => {
                if hits[0].is_none() && row_projection(&ws, rows, direction) >= *threshold {
                    hits[0] = Some(step);
                }
            }
        }
        let done = hits.iter().all(Option::is_some);
        if (done && cfg.stop_at_escape) || step >= cfg.max_steps {
            break;
        }
        apply_step(&mut ws, &work.grads, cfg.lr, cfg.metric);
        step += 1;
    }
    let record = EscapeRecord {
        rule: cfg.escape.describe(),
        thresholds,
        escape_steps: hits,
        lr: cfg.lr,
        steps_run: step,
        final_loss: last_loss,
    };
    Ok((record, snaps))
}

/// Layer imbalances.
#[derive(Debug, Clone, PartialEq)]
pub struct Imbalance {
    /// `Delta_l = ||W_{l+1}||_F^2 - ||W_l||_F^2`.
    pub delta: Vec<f64>,
    /// `W_{l+1}^T W_{l+1} - W_l W_l^T`.
    pub matrix: Vec<Mat>,
}

pub fn imbalance_observables(ws: &WeightStack) -> Result<Imbalance> {
    let l = ws.depth();
    let mut delta = Vec::with_capacity(l - 1);
    let mut matrix = Vec::with_capacity(l - 1);
    for i in 0..l - 1 {
        let (a, b) = (&ws.w[i], &ws.w[i + 1]);
        if b.cols != a.rows {
            return Err(Error::ShapeMismatch(alloc::format!("layers {} and {} do not chain", i + 1, i + 2)));
        }
        delta.push(b.frobenius_sq() - a.frobenius_sq());
        let mut m = Mat::zeros(a.rows, a.rows);
        gemm(1.0, b, true, b, false, 0.0, &mut m);
        gemm(-1.0, a, false, a, true, 1.0, &mut m);
        matrix.push(m);
    }
    Ok(Imbalance { delta, matrix })
}

/// `d Delta_l / dt` under `W' = -grad L` by central differences along the
/// gradient computed on `batch`.
pub fn imbalance_rate_fd(ws: &WeightStack, teacher: &TeacherSpec, batch: &Batch, h: f64) -> Result<Vec<f64>> {
    let (_, grads) = loss_and_gradient(ws, &teacher.act, batch)?;
    let mut plus = ws.clone();
    let mut minus = ws.clone();
    apply_step(&mut plus, &grads, h, Metric::Uniform);
    apply_step(&mut minus, &grads, -h, Metric::Uniform);
    let dp = imbalance_observables(&plus)?.delta;
    let dm = imbalance_observables(&minus)?.delta;
    Ok(dp.iter().zip(&dm).map(|(p, m)| (p - m) / (2.0 * h)).collect())
}

/// Monte Carlo estimate of `2 E[<W_{l+1}^T grad_{z_{l+1}} loss, phi(z_l)>]`
/// per `l`, with standard errors. `dloss(f, y)` is the derivative of the
/// per-example loss in `f`.
pub fn identity_rhs_mc<D: Fn(f64, f64) -> f64>(
    ws: &WeightStack,
    teacher: &TeacherSpec,
    samples: usize,
    seed: u64,
    dloss: D,
) -> Vec<(f64, f64)> {
    let l = ws.depth();
    let act = &teacher.act;
    let mut acc = vec![MeanVar::default(); l - 1];
    let mut per = Vec::new();
    for (chunk, size) in chunks(samples) {
        let mut g = rng::stream(seed, 2, chunk as u64);
        let batch = Batch::monte_carlo(teacher, size, &mut g);
        let fw = forward(ws, act, &batch.x);
        let coef: Vec<f64> = (0..size).map(|b| dloss(fw.f[b], batch.y[b])).collect();
        per.clear();
        per.resize((l - 1) * size, 0.0);
        backward_with(ws, &batch.x, &fw, &coef, |layer, gm| {
            let z = &fw.z[layer - 1];
            for b in 0..size {
                let s: f64 = gm.row(b).iter().zip(z.row(b)).map(|(gv, &zv)| {
                    let (sv, dv) = act.eval(zv);
                    gv * (zv * dv - sv)
                }).sum();
                per[(layer - 1) * size + b] = 2.0 * s;
            }
        });
        for (li, a) in acc.iter_mut().enumerate() {
            for b in 0..size {
                a.push(per[li * size + b]);
            }
        }
    }
    acc.iter().map(|a| (a.mean(), a.stderr())).collect()
}

/// Closed-form population gradient of a linear network against the linear
/// teacher `y = t . x`.
pub fn linear_population_gradient(ws: &WeightStack, t: &[f64]) -> Vec<Mat> {
    let l = ws.depth();
    // Prefix products P_i = W_i ... W_1 applied as row spaces.
    let mut prefix: Vec<Mat> = Vec::with_capacity(l);
    prefix.push(ws.w[0].clone());
    for i in 1..l {
        prefix.push(ws.w[i].matmul(&prefix[i - 1]));
    }
    let weff = prefix[l - 1].row(0);
    let r: Vec<f64> = weff.iter().zip(t).map(|(a, b)| a - b).collect();
    // Suffix row vectors S_i = W_L ... W_{i+1}.
    let mut suffix: Vec<Vec<f64>> = vec![Vec::new(); l];
    suffix[l - 1] = vec![1.0];
    for i in (0..l - 1).rev() {
        let mut s = vec![0.0; ws.w[i + 1].cols];
        ws.w[i + 1].matvec_t(&suffix[i + 1], &mut s);
        suffix[i] = s;
    }
    (0..l)
        .map(|i| {
            let right: Vec<f64> = if i == 0 {
                r.clone()
            } else {
                let mut v = vec![0.0; prefix[i - 1].rows];
                prefix[i - 1].matvec(&r, &mut v);
                v
            };
            let a = &suffix[i];
            Mat::from_fn(a.len(), right.len(), |p, q| a[p] * right[q])
        })
        .collect()
}

/// Implicit midpoint on the linear-network gradient flow. The stage
/// equation is solved by fixed-point iteration, so quadratic invariants
/// such as the layer imbalances are kept to rounding level.
pub fn integrate_linear_flow(ws: &WeightStack, t: &[f64], h: f64, steps: usize) -> WeightStack {
    let mut w = ws.clone();
    let mut mid = ws.clone();
    for _ in 0..steps {
        let scale = w.w.iter().flat_map(|m| m.data.iter()).fold(1.0f64, |a, v| a.max(v.abs()));
        for _ in 0..200 {
            let g = linear_population_gradient(&mid, t);
            let mut change = 0.0f64;
            for (i, m) in mid.w.iter_mut().enumerate() {
                for (j, v) in m.data.iter_mut().enumerate() {
                    let next = w.w[i].data[j] - 0.5 * h * g[i].data[j];
                    change = change.max((next - *v).abs());
                    *v = next;
                }
            }
            if change <= 4.0 * f64::EPSILON * scale {
                break;
            }
        }
        for (wm, mm) in w.w.iter_mut().zip(&mid.w) {
            for (v, m) in wm.data.iter_mut().zip(&mm.data) {
                *v = 2.0 * m - *v;
            }
        }
    }
    w
}

/// Signal-energy observables.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalObservables {
    /// `E[f g]`.
    pub gamma: f64,
    pub gamma_se: f64,
    /// `||G_l||_F`.
    pub g_norms: Vec<f64>,
    /// `sum_l ||G_l||_F^2`.
    pub t: f64,
    /// `max_{l <= r} ||W_l||_op`.
    pub m: f64,
    /// `sum_l <G_l, E[f d f / d W_l]>`.
    pub s: f64,
    pub imbalance: Vec<f64>,
}

fn mc_accumulate(
    ws: &WeightStack,
    teacher: &TeacherSpec,
    samples: usize,
    seed: u64,
    run: u64,
    coef: impl Fn(f64, f64, f64) -> f64,
) -> Vec<Mat> {
    let mut total: Vec<Mat> = ws.w.iter().map(|m| Mat::zeros(m.rows, m.cols)).collect();
    for (chunk, size) in chunks(samples) {
        let mut g = rng::stream(seed, run, chunk as u64);
        let batch = Batch::monte_carlo(teacher, size, &mut g);
        let fw = forward(ws, &teacher.act, &batch.x);
        let v1 = teacher.direction(0);
        let c: Vec<f64> = (0..size)
            .map(|b| coef(fw.f[b], batch.y[b], dot(batch.x.row(b), v1)) / samples as f64)
            .collect();
        for (t, g) in total.iter_mut().zip(backward(ws, &batch.x, &fw, &c)) {
            t.axpy(1.0, &g);
        }
    }
    total
}

/// `gamma = E[f g]` with its standard error, on stream `(seed, 3)`.
pub fn gamma_mc(ws: &WeightStack, teacher: &TeacherSpec, samples: usize, seed: u64) -> (f64, f64) {
    let mut acc = MeanVar::default();
    let v1 = teacher.direction(0);
    for (chunk, size) in chunks(samples) {
        let mut g = rng::stream(seed, 3, chunk as u64);
        let batch = Batch::monte_carlo(teacher, size, &mut g);
        let fw = forward(ws, &teacher.act, &batch.x);
        for b in 0..size {
            acc.push(fw.f[b] * dot(batch.x.row(b), v1));
        }
    }
    (acc.mean(), acc.stderr())
}

/// Doubles the sample count until the standard error of `gamma` is at most
/// `rel_se |gamma|`.
pub fn gamma_mc_adaptive(ws: &WeightStack, teacher: &TeacherSpec, seed: u64, rel_se: f64, start: usize, cap: usize) -> Result<(f64, f64)> {
    let mut n = start.max(2);
    loop {
        let (g, se) = gamma_mc(ws, teacher, n, seed);
        if se <= rel_se * num::abs(g) {
            return Ok((g, se));
        }
        if n >= cap {
            return Err(Error::McBudgetExceeded { budget: cap, target: rel_se });
        }
        n = (2 * n).min(cap);
    }
}

/// Signal observables from `samples` Monte Carlo draws.
///
/// `T` is the cross product of `G` estimated on two independent halves.
pub fn signal_observables(ws: &WeightStack, teacher: &TeacherSpec, r: usize, samples: usize, seed: u64) -> Result<SignalObservables> {
    let half = samples / 2;
    let ga = mc_accumulate(ws, teacher, half, seed, 4, |_, _, g| g);
    let gb = mc_accumulate(ws, teacher, half, seed, 5, |_, _, g| g);
    let fa = mc_accumulate(ws, teacher, half, seed, 6, |f, _, _| f);
    let (gamma, gamma_se) = gamma_mc(ws, teacher, samples, seed);
    let g_norms = ga.iter().zip(&gb).map(|(a, b)| num::sqrt(a.dot(b).max(0.0))).collect::<Vec<_>>();
    let t = g_norms.iter().map(|g| g * g).sum();
    let s = gb.iter().zip(&fa).map(|(a, b)| a.dot(b)).sum();
    let m = ws.w[..r.min(ws.depth())].iter().map(Mat::op_norm).fold(0.0, f64::max);
    Ok(SignalObservables {
        gamma,
        gamma_se,
        g_norms,
        t,
        m,
        s,
        imbalance: imbalance_observables(ws)?.delta,
    })
}

/// Instantaneous `d gamma / dt = -sum_l <G_l, rate_l grad_l L>` under the
/// given metric (with `lr = 1`), and the lower bound `T` computed on
/// independent halves. Returns `(rate, rate_se, T)`.
pub fn gamma_rate_mc(ws: &WeightStack, teacher: &TeacherSpec, metric: Metric, samples: usize, seed: u64) -> (f64, f64, f64) {
    let half = samples / 2;
    let ga = mc_accumulate(ws, teacher, half, seed, 7, |_, _, g| g);
    let gb = mc_accumulate(ws, teacher, half, seed, 8, |_, _, g| g);
    let t: f64 = ga.iter().zip(&gb).map(|(a, b)| a.dot(b)).sum();
    let mut acc = MeanVar::default();
    let parts = 16;
    let size = (half / parts).max(1);
    for part in 0..parts {
        let mut g = rng::stream(seed, 9, part as u64);
        let batch = Batch::monte_carlo(teacher, size, &mut g);
        let fw = forward(ws, &teacher.act, &batch.x);
        let c: Vec<f64> = (0..size).map(|b| (fw.f[b] - batch.y[b]) / size as f64).collect();
        let grads = backward(ws, &batch.x, &fw, &c);
        let v: f64 = ga
            .iter()
            .zip(&grads)
            .enumerate()
            .map(|(i, (a, gr))| -metric.layer_rate(1.0, i) * a.dot(gr))
            .sum();
        acc.push(v);
    }
    (acc.mean(), acc.stderr(), t)
}

/// Rank-one linear-path tensors `B_l A_{l-1}^T` with `A_0 = v`,
/// `A_j = W_j A_{j-1}`, `B_L = 1`, `B_l = W_{l+1}^T B_{l+1}`.
pub fn linear_path_tensors(ws: &WeightStack, v: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let l = ws.depth();
    let mut a = vec![v.to_vec()];
    for i in 0..l - 1 {
        let mut next = vec![0.0; ws.w[i].rows];
        ws.w[i].matvec(&a[i], &mut next);
        a.push(next);
    }
    let mut b = vec![Vec::new(); l];
    b[l - 1] = vec![1.0];
    for i in (0..l - 1).rev() {
        let mut next = vec![0.0; ws.w[i + 1].cols];
        ws.w[i + 1].matvec_t(&b[i + 1], &mut next);
        b[i] = next;
    }
    (0..l).map(|i| (b[i].clone(), a[i].clone())).collect()
}
