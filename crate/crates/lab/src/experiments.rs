//! One runner per experiment family; each maps a grid point and a seed to
//! a result row.

use std::collections::BTreeMap;

use saddle_core::activation::{ActKind, Activation};
use saddle_core::cascade::{
    homotopy_escape_identity, AdjointJacobian, BlockClosure, HomotopyOptions, NuQuadrature, Threshold,
};
use saddle_core::escape_laws::{
    critical_depth_prediction, escape_closed_form_balanced_to, master_curve, InitProfile,
};
use saddle_core::fullnet::{
    ansatz_residual, ansatz_scales, identity_rhs_mc, imbalance_observables, imbalance_rate_fd, init_ansatz,
    init_he_bottleneck, integrate_linear_flow, train_to_escape, Batch, EscapeRule, Estimator, Metric, TeacherSpec,
    TrainConfig, WeightStack,
};
use saddle_core::linalg::Mat;
use saddle_core::ode::OdeOptions;
use saddle_core::reduced_flow::{
    imbalance_drift_exponent, staggered_state, EscapeSpec, ReducedFlow, ReducedFlowConfig, RhsKind,
};
use saddle_core::rng;

use crate::spec::{ConfigPoint, Experiment, SweepSpec};
use crate::table::Row;

/// Probe grid for drift exponents.
pub const DRIFT_EPS: [f64; 4] = [0.01, 0.02, 0.04, 0.08];

type Outcome = Result<Row, saddle_core::Error>;

/// Runs one `(config, seed)` pair; failures become rows with
/// `crossed = false` and the error text.
pub fn run_row(spec: &SweepSpec, cp: &ConfigPoint, seed: u64) -> Row {
    let out = match spec.experiment {
        Experiment::Exactness => exactness(spec, cp, seed),
        Experiment::DepthScaling => depth_scaling(spec, cp, seed),
        Experiment::CriticalDepthManifold => critical_depth_manifold(spec, cp, seed),
        Experiment::Universality => universality(spec, cp, seed),
        Experiment::CriticalDepthOffmanifold => offmanifold(spec, cp, seed),
        Experiment::CascadeHomotopy => cascade(spec, cp, seed),
        Experiment::IdentitySuite => identity(spec, cp, seed),
    };
    out.unwrap_or_else(|e| {
        let mut row = blank(spec, cp, seed, "failed");
        row.error = e.to_string();
        row
    })
}

fn blank(spec: &SweepSpec, cp: &ConfigPoint, seed: u64, rule: &str) -> Row {
    Row {
        experiment: spec.experiment.name().to_string(),
        config: cp.index,
        seed,
        activation: cp.activation.clone(),
        depth: cp.depth,
        bottleneck: cp.bottleneck,
        eps: cp.eps,
        rule: rule.to_string(),
        threshold: None,
        crossed: false,
        t_esc: None,
        steps: None,
        prediction: None,
        error: String::new(),
        observables: BTreeMap::new(),
    }
}

fn act_of(cp: &ConfigPoint) -> Result<Activation, saddle_core::Error> {
    Activation::by_name(&cp.activation)
}

fn need<T: Copy>(v: Option<T>, what: &str) -> Result<T, saddle_core::Error> {
    v.ok_or_else(|| saddle_core::Error::InvalidArgument(format!("unresolved parameter `{what}`")))
}

fn flow_for(spec: &SweepSpec, act: Activation, l: usize) -> Result<ReducedFlow, saddle_core::Error> {
    let p = &spec.params;
    let mut cfg = ReducedFlowConfig::new(l, need(p.width, "width")? as f64, p.betas.as_ref().map_or(1.0, |b| b[0]), act);
    if let Some(n) = p.gh_nodes {
        cfg.gh_nodes = n;
    }
    ReducedFlow::new(cfg)
}

fn axis_basis(d: usize, k: usize) -> Vec<Vec<f64>> {
    (0..k).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Reduced-ODE escape of `X_1` through the threshold, as a row.
fn ode_escape_row(
    spec: &SweepSpec,
    cp: &ConfigPoint,
    seed: u64,
    flow: &ReducedFlow,
    x0: &[f64],
    theta: f64,
) -> Outcome {
    let mut row = blank(spec, cp, seed, "x1");
    row.threshold = Some(theta);
    row.observables.insert("k_sigma".into(), flow.k_sigma());
    let t_max = need(spec.budget.t_max, "t_max")?;
    let (_, ev) = flow.integrate(x0, RhsKind::Exact, t_max, Some(EscapeSpec::x1(theta)), OdeOptions::default(), &[])?;
    row.crossed = ev.crossed;
    if ev.crossed {
        row.t_esc = Some(ev.t_esc);
    } else {
        row.error = saddle_core::Error::EventNotReached { t_max }.to_string();
    }
    Ok(row)
}

fn exactness(spec: &SweepSpec, cp: &ConfigPoint, seed: u64) -> Outcome {
    let p = &spec.params;
    let act = act_of(cp)?;
    let x0 = p.x0.clone().unwrap_or_default();
    let (n, d, lr) = (need(p.width, "width")?, need(p.input_dim, "input_dim")?, need(p.lr, "lr")?);
    let steps = need(spec.budget.max_steps, "max_steps")?;
    let snaps = need(p.snapshots, "snapshots")?.max(2);
    let nodes = need(p.gh_nodes, "gh_nodes")?;
    let betas = p.betas.clone().unwrap_or_else(|| vec![1.0]);
    let teacher = TeacherSpec::axis_aligned(d, &betas[..1], act.clone())?;
    let w0 = init_ansatz(d, n, &x0, teacher.direction(0))?;
    let flow = flow_for(spec, act, x0.len())?;
    let every = (steps / (snaps - 1)).max(1);
    let cfg = TrainConfig {
        lr,
        metric: Metric::Normalized { width: n as f64 },
        estimator: Estimator::Quadrature { nodes },
        max_steps: every * (snaps - 1),
        escape: EscapeRule::Loss(Vec::new()),
        snapshot_every: every,
        stop_at_escape: false,
    };
    let (rec, shots) = train_to_escape(&w0, &teacher, &cfg)?;
    let times: Vec<f64> = shots.iter().map(|s| s.t).collect();
    let t_end = *times.last().unwrap_or(&0.0);
    let (traj, _) = flow.integrate(&x0, RhsKind::Exact, t_end, None, OdeOptions::default(), &times)?;
    let mut dx = 0.0f64;
    let mut dl = 0.0f64;
    for (s, (x, loss)) in shots.iter().zip(traj.x.iter().zip(&traj.loss)) {
        let scales = ansatz_scales(&s.weights, teacher.direction(0));
        for (a, b) in scales.iter().zip(x) {
            dx = dx.max((a - b).abs());
        }
        dl = dl.max((s.loss - loss).abs());
    }
    let mut row = blank(spec, cp, seed, "horizon");
    row.depth = Some(x0.len());
    row.crossed = true;
    row.steps = Some(rec.steps_run as u64);
    row.observables.insert("max_x_dev".into(), dx);
    row.observables.insert("max_loss_dev".into(), dl);
    row.observables.insert("snapshots".into(), shots.len() as f64);
    row.observables.insert("t_end".into(), t_end);
    if let Some(last) = shots.last() {
        row.observables.insert("final_loss".into(), last.loss);
        row.observables.insert("ansatz_residual".into(), ansatz_residual(&last.weights));
    }
    Ok(row)
}

fn depth_scaling(spec: &SweepSpec, cp: &ConfigPoint, seed: u64) -> Outcome {
    let (l, eps) = (need(cp.depth, "depth")?, need(cp.eps, "eps")?);
    let theta = need(spec.params.threshold, "threshold")?;
    let flow = flow_for(spec, act_of(cp)?, l)?;
    let mut row = ode_escape_row(spec, cp, seed, &flow, &vec![eps; l], theta)?;
    let pred = escape_closed_form_balanced_to(l, eps, flow.k_sigma(), theta)?;
    row.prediction = Some(pred);
    if let Some(t) = row.t_esc {
        row.observables.insert("rel_err".into(), t / pred - 1.0);
    }
    Ok(row)
}

fn critical_depth_manifold(spec: &SweepSpec, cp: &ConfigPoint, seed: u64) -> Outcome {
    let (l, r, eps) = (need(cp.depth, "depth")?, need(cp.bottleneck, "bottleneck")?, need(cp.eps, "eps")?);
    let theta = need(spec.params.threshold, "threshold")?;
    let other = need(spec.params.other_scale, "other_scale")?;
    let profile = InitProfile::bottleneck(l, r, eps, other)?;
    let mut x0 = vec![eps; r];
    x0.resize(l, other);
    let flow = flow_for(spec, act_of(cp)?, l)?;
    let mut row = ode_escape_row(spec, cp, seed, &flow, &x0, theta)?;
    if let Ok(p) = critical_depth_prediction(&profile, flow.k_sigma()) {
        row.prediction = Some(p.t_lead);
    }
    Ok(row)
}

fn universality(spec: &SweepSpec, cp: &ConfigPoint, seed: u64) -> Outcome {
    let p = &spec.params;
    let (l, eps) = (need(cp.depth, "depth")?, need(cp.eps, "eps")?);
    let theta = need(p.threshold, "threshold")?;
    let act = act_of(cp)?;
    let flow = flow_for(spec, act.clone(), l)?;
    let x0 = vec![eps; l];
    let mut row = ode_escape_row(spec, cp, seed, &flow, &x0, theta)?;
    let k = flow.k_sigma();
    let master = master_curve(l, eps, theta)?;
    row.prediction = Some(master / k);
    row.observables.insert("master".into(), master);
    if let Some(t) = row.t_esc {
        row.observables.insert("rescaled".into(), k * t);
        row.observables.insert("deviation".into(), k * t / master - 1.0);
    }
    if p.fullnet == Some(true) {
        let (n, d) = (need(p.width, "width")?, need(p.input_dim, "input_dim")?);
        let betas = p.betas.clone().unwrap_or_else(|| vec![1.0]);
        let teacher = TeacherSpec::axis_aligned(d, &betas[..1], act)?;
        let w0 = init_ansatz(d, n, &x0, teacher.direction(0))?;
        let cfg = TrainConfig {
            lr: need(p.lr, "lr")?,
            metric: Metric::Normalized { width: n as f64 },
            estimator: Estimator::MonteCarlo {
                batch: need(p.batch, "batch")?,
                seed,
                run: 0,
            },
            max_steps: need(spec.budget.max_steps, "max_steps")?,
            escape: EscapeRule::RowProjection {
                rows: 0..n,
                direction: teacher.direction(0).to_vec(),
                threshold: theta,
            },
            snapshot_every: 0,
            stop_at_escape: true,
        };
        let (rec, _) = train_to_escape(&w0, &teacher, &cfg)?;
        row.observables.insert("fullnet_crossed".into(), f64::from(u8::from(rec.crossed())));
        if let Some(t) = rec.t_esc(0) {
            row.observables.insert("fullnet_t_esc".into(), t);
            row.observables.insert("fullnet_rescaled".into(), k * t);
        }
    }
    Ok(row)
}

fn offmanifold(spec: &SweepSpec, cp: &ConfigPoint, seed: u64) -> Outcome {
    let p = &spec.params;
    let (l, r, eps) = (need(cp.depth, "depth")?, need(cp.bottleneck, "bottleneck")?, need(cp.eps, "eps")?);
    let (n, d) = (need(p.width, "width")?, need(p.input_dim, "input_dim")?);
    let primary = need(p.threshold, "threshold")?;
    let mut thresholds = vec![primary];
    thresholds.extend(p.extra_thresholds.clone().unwrap_or_default());
    let betas = p.betas.clone().unwrap_or_else(|| vec![1.0]);
    let teacher = TeacherSpec::axis_aligned(d, &betas[..1], act_of(cp)?)?;
    let w0 = init_he_bottleneck(d, n, l, eps, r, seed)?;
    let cfg = TrainConfig {
        lr: need(p.lr, "lr")?,
        metric: Metric::Uniform,
        estimator: Estimator::MonteCarlo {
            batch: need(p.batch, "batch")?,
            seed,
            run: 0,
        },
        max_steps: need(spec.budget.max_steps, "max_steps")?,
        escape: EscapeRule::Loss(thresholds.clone()),
        snapshot_every: 0,
        stop_at_escape: true,
    };
    let (rec, _) = train_to_escape(&w0, &teacher, &cfg)?;
    let mut row = blank(spec, cp, seed, "loss");
    row.threshold = Some(primary);
    row.steps = rec.escape_steps[0].map(|s| s as u64);
    row.t_esc = rec.t_esc(0);
    row.crossed = row.t_esc.is_some();
    if !row.crossed {
        row.error = saddle_core::Error::EscapeNotReached { steps: rec.steps_run }.to_string();
    }
    for (i, thr) in thresholds.iter().enumerate() {
        if let Some(t) = rec.t_esc(i) {
            row.observables.insert(format!("t_esc@{thr}"), t);
        }
    }
    row.observables.insert("steps_run".into(), rec.steps_run as f64);
    row.observables.insert("final_loss".into(), rec.final_loss);
    Ok(row)
}

/// Homotopy options used for the block closure, whose fields are gradient
/// flows with symmetric Jacobians.
pub fn closure_homotopy_options() -> HomotopyOptions {
    let mut o = HomotopyOptions::default();
    o.adjoint_jacobian = AdjointJacobian::Symmetric;
    o.adjoint.rel_tol = 1e-9;
    o
}

fn cascade(spec: &SweepSpec, cp: &ConfigPoint, seed: u64) -> Outcome {
    let p = &spec.params;
    let (l, eps) = (need(cp.depth, "depth")?, need(cp.eps, "eps")?);
    let (n, d) = (need(p.width, "width")?, need(p.input_dim, "input_dim")?);
    let betas = p.betas.clone().unwrap_or_else(|| vec![1.0, 0.3, 0.08]);
    let k = betas.len();
    if n % k != 0 {
        return Err(saddle_core::Error::IndivisibleWidth { n, k });
    }
    let nb = n / k;
    let theta = need(p.threshold, "threshold")?;
    let nodes = need(p.gh_nodes, "gh_nodes")?;
    let act = act_of(cp)?;
    let closure = BlockClosure::new(l, nb, &betas, act.clone(), nodes)?;
    let x0 = closure.balanced_state(eps);
    let f0 = closure.decoupled_field()?;
    let f1 = |x: &[f64], o: &mut [f64]| closure.field(x, o);
    let h = Threshold::coordinate(closure.dim(), closure.x_index(0, 0), theta);
    let hom = homotopy_escape_identity(
        &f0,
        &f1,
        &x0,
        &h,
        NuQuadrature::GaussLegendre(need(p.nu_nodes, "nu_nodes")?),
        &closure_homotopy_options(),
    )?;
    let teacher = TeacherSpec::axis_aligned(d, &betas, act)?;
    let w0 = closure.full_network(&x0, d)?;
    let lr = need(p.lr, "lr")?;
    let cfg = TrainConfig {
        lr,
        metric: Metric::Normalized { width: nb as f64 },
        estimator: Estimator::Subspace {
            basis: axis_basis(d, k),
            nodes,
        },
        max_steps: need(spec.budget.max_steps, "max_steps")?,
        escape: EscapeRule::RowProjection {
            rows: 0..nb,
            direction: teacher.direction(0).to_vec(),
            threshold: theta,
        },
        snapshot_every: 0,
        stop_at_escape: true,
    };
    let (rec, _) = train_to_escape(&w0, &teacher, &cfg)?;
    let mut row = blank(spec, cp, seed, "row_projection");
    row.threshold = Some(theta);
    row.prediction = Some(hom.t0);
    row.t_esc = rec.t_esc(0);
    row.steps = rec.escape_steps[0].map(|s| s as u64);
    row.crossed = row.t_esc.is_some();
    if !row.crossed {
        row.error = saddle_core::Error::EscapeNotReached { steps: rec.steps_run }.to_string();
    }
    let o = &mut row.observables;
    o.insert("t0".into(), hom.t0);
    o.insert("t1".into(), hom.t1);
    o.insert("integral".into(), hom.integral);
    o.insert("t0_plus_integral".into(), hom.t0 + hom.integral);
    o.insert("identity_residual".into(), hom.identity_residual);
    o.insert("normalization_error".into(), hom.max_normalization_error());
    o.insert("resolution".into(), lr);
    Ok(row)
}

/// Random configuration whose first layer lies in the span of the first
/// two input axes.
pub fn random_identity_config(l: usize, n: usize, d: usize, seed: u64) -> Result<WeightStack, saddle_core::Error> {
    let mut g = rng::stream(seed, 11, 0);
    let mut w = Vec::with_capacity(l);
    w.push(Mat::from_fn(n, d, |_, j| if j < 2 { 0.7 * rng::normal(&mut g) } else { 0.0 }));
    for _ in 1..l - 1 {
        let s = 1.2 / (n as f64).sqrt();
        w.push(Mat::from_fn(n, n, |_, _| s * rng::normal(&mut g)));
    }
    let s = 1.0 / (n as f64).sqrt();
    w.push(Mat::from_fn(1, n, |_, _| s * rng::normal(&mut g)));
    WeightStack::new(w)
}

fn identity(spec: &SweepSpec, cp: &ConfigPoint, seed: u64) -> Outcome {
    let p = &spec.params;
    let l = need(cp.depth, "depth")?;
    let (n, d) = (need(p.width, "width")?, need(p.input_dim, "input_dim")?);
    let act = act_of(cp)?;
    let betas = p.betas.clone().unwrap_or_else(|| vec![1.0]);
    let teacher = TeacherSpec::axis_aligned(d, &betas[..1], act.clone())?;
    let ws = random_identity_config(l, n, d, seed)?;
    let mut row = blank(spec, cp, seed, "identity");
    row.crossed = true;
    let linear = matches!(act.kind, ActKind::Linear);
    if linear {
        let t: Vec<f64> = teacher.direction(0).iter().map(|v| v * betas[0]).collect();
        let before = imbalance_observables(&ws)?.delta;
        let steps = need(spec.budget.max_steps, "max_steps")?;
        let mut cur = ws.clone();
        let mut drift = 0.0f64;
        let chunk = steps.div_ceil(20).max(1);
        let mut done = 0;
        while done < steps {
            let n = chunk.min(steps - done);
            cur = integrate_linear_flow(&cur, &t, 0.01, n);
            done += n;
            let after = imbalance_observables(&cur)?.delta;
            for (a, b) in before.iter().zip(&after) {
                drift = drift.max((b - a).abs() / a.abs().max(1.0));
            }
        }
        row.steps = Some(steps as u64);
        row.observables.insert("linear_rel_drift".into(), drift);
        let flow = flow_for(spec, act, l)?;
        let probe = flow
            .imbalance_drift(&staggered_state(l, DRIFT_EPS[0]))
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        row.observables.insert("reduced_drift_max".into(), probe);
        return Ok(row);
    }
    let batch = Batch::subspace(&teacher, &axis_basis(d, 2), need(p.gh_nodes, "gh_nodes")?)?;
    let fd = imbalance_rate_fd(&ws, &teacher, &batch, 1e-3)?;
    let mc = identity_rhs_mc(&ws, &teacher, need(p.mc_samples, "mc_samples")?, seed, |f, y| f - y);
    let mut worst = 0.0f64;
    for (i, (a, (m, se))) in fd.iter().zip(&mc).enumerate() {
        let z = (a - m) / se;
        worst = worst.max(z.abs());
        row.observables.insert(format!("fd_{}", i + 1), *a);
        row.observables.insert(format!("mc_{}", i + 1), *m);
        row.observables.insert(format!("se_{}", i + 1), *se);
    }
    row.observables.insert("max_z".into(), worst);
    let flow = flow_for(spec, act, l)?;
    let fit = imbalance_drift_exponent(&flow, &DRIFT_EPS)?;
    row.observables.insert("drift_exponent".into(), fit.slope);
    row.observables.insert("drift_exponent_se".into(), fit.stderr);
    Ok(row)
}
