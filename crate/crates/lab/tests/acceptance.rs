//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Set `SADDLE_ACCEPT` to a comma-separated list of criterion numbers to run
//! a subset.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use saddle_core::activation::{hermite_moments, Activation};
use saddle_core::cascade::{
    homotopy_escape_identity, perron_truncation_monotonicity, schur_perron, universal_integral,
    universal_integral_closed_form, HomotopyOptions, NuQuadrature, SchurBlocks, Threshold,
};
use saddle_core::error::Error;
use saddle_core::fullnet::{
    gamma_mc, gamma_rate_mc, init_he_bottleneck, train_to_escape, EscapeRule, Estimator, Metric, TeacherSpec,
    TrainConfig,
};
use saddle_core::linalg::Mat;
use saddle_core::quadrature::{gauss_hermite, QuadTolerance};
use saddle_core::reduced_flow::{imbalance_drift_exponent, staggered_state, ReducedFlow, ReducedFlowConfig};
use saddle_core::rng;
use saddle_lab::experiments::DRIFT_EPS;
use saddle_lab::spec::{LogRange, SweepSpec};
use saddle_lab::{fit_slope, fit_slope_by, run_sweep, Experiment, Row, Table};

type Check = Result<(bool, String), String>;

fn sweep(spec: SweepSpec) -> Result<Table, String> {
    let table = run_sweep(&spec, 1).map_err(|e| e.to_string())?;
    if let Some(r) = table.rows.iter().find(|r| r.rule == "failed") {
        return Err(format!("{} row failed: {}", spec.experiment, r.error));
    }
    Ok(table)
}

fn spec(experiment: Experiment) -> SweepSpec {
    let mut s = SweepSpec::new(experiment);
    s.grid.seeds = vec![1];
    s
}

fn obs(r: &Row, key: &str) -> Result<f64, String> {
    r.observable(key).ok_or_else(|| format!("row {} lacks `{key}`", r.config))
}

/// The 20-point grid over `[1e-2, 10^-0.75]`.
fn eps_grid() -> LogRange {
    LogRange {
        lo: 1e-2,
        hi: 10f64.powf(-0.75),
        n: 20,
    }
}

fn c1() -> Check {
    let mut s = spec(Experiment::Exactness);
    s.grid.activations = vec!["tanh".into()];
    let t = sweep(s)?;
    let r = &t.rows[0];
    let (dx, dl, n) = (obs(r, "max_x_dev")?, obs(r, "max_loss_dev")?, obs(r, "snapshots")?);
    let steps = r.steps.unwrap_or(0);
    Ok((
        dx <= 1e-2 && dl <= 1e-2 && n == 25.0 && steps == 120_000,
        format!("max |dX| {dx:.3e}, max |dloss| {dl:.3e}, {n} snapshots over {steps} steps"),
    ))
}

fn c2() -> Check {
    let mut s = spec(Experiment::DepthScaling);
    s.grid.eps_log = Some(eps_grid());
    s.grid.depths = vec![3, 4, 5, 6];
    s.grid.activations = vec!["tanh".into()];
    let t = sweep(s)?;
    let cut = 10f64.powf(-1.5) * (1.0 + 1e-12);
    let mut ok = true;
    let mut parts = Vec::new();
    for l in 3..=6usize {
        let rows: Vec<Row> = t.rows.iter().filter(|r| r.depth == Some(l)).cloned().collect();
        let worst = rows
            .iter()
            .filter(|r| r.eps.unwrap_or(1.0) <= cut)
            .map(|r| obs(r, "rel_err").map(f64::abs))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .fold(0.0f64, f64::max);
        let fit = fit_slope(&rows, (0.0, cut)).map_err(|e| e.to_string())?;
        let target = -(l as f64 - 2.0);
        ok &= worst <= 0.05 && (fit.slope - target).abs() <= 0.15;
        parts.push(format!("L={l}: rel err {worst:.3}, slope {:.3} vs {target}", fit.slope));
    }
    Ok((ok, parts.join("; ")))
}

fn c3() -> Check {
    let mut s = spec(Experiment::CriticalDepthManifold);
    s.grid.eps_log = Some(eps_grid());
    s.grid.depths = vec![6];
    s.grid.bottlenecks = vec![3, 4, 5, 6];
    s.grid.activations = vec!["tanh".into()];
    let t = sweep(s)?;
    let mut eps: Vec<f64> = t.rows.iter().filter_map(|r| r.eps).collect();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    let hi = eps[eps.len() / 2 - 1];
    let mut ok = true;
    let mut parts = Vec::new();
    for r in 3..=6usize {
        let rows: Vec<Row> = t.rows.iter().filter(|x| x.bottleneck == Some(r)).cloned().collect();
        let fit = fit_slope(&rows, (0.0, hi)).map_err(|e| e.to_string())?;
        let target = -(r as f64 - 2.0);
        ok &= (fit.slope - target).abs() <= 0.2;
        parts.push(format!("r={r}: slope {:.3} vs {target}", fit.slope));
    }
    Ok((ok, parts.join("; ")))
}

fn c4() -> Check {
    let mut s = spec(Experiment::Universality);
    s.grid.eps = vec![0.03, 0.1];
    s.grid.depths = vec![4];
    s.grid.activations = ["tanh", "erf", "sin", "gelu", "swish"].map(String::from).to_vec();
    let t = sweep(s)?;
    let get = |act: &str, eps: f64, key: &str| -> Result<f64, String> {
        let r = t
            .rows
            .iter()
            .find(|r| r.activation == act && r.eps == Some(eps))
            .ok_or_else(|| format!("no row for {act} at {eps}"))?;
        obs(r, key)
    };
    let b: Vec<f64> = ["tanh", "erf", "sin"]
        .iter()
        .map(|a| get(a, 0.03, "rescaled"))
        .collect::<Result<_, _>>()?;
    let mut spread = 0.0f64;
    for i in 0..b.len() {
        for j in 0..i {
            spread = spread.max((b[i] / b[j] - 1.0).abs());
        }
    }
    let mut ok = spread <= 0.03;
    let mut parts = vec![format!("class B pairwise spread {spread:.4}")];
    for a in ["gelu", "swish"] {
        let ratio = get(a, 0.1, "deviation")?.abs() / get(a, 0.03, "deviation")?.abs();
        ok &= ratio >= 2.5;
        parts.push(format!("{a} deviation ratio {ratio:.2}"));
    }

    let mut f = spec(Experiment::Universality);
    f.grid.eps = vec![0.1];
    f.grid.depths = vec![4];
    f.grid.activations = vec!["tanh".into()];
    f.grid.seeds = vec![1, 2, 3];
    f.params.fullnet = Some(true);
    f.budget.max_steps = Some(20_000);
    let ft = sweep(f)?;
    let ode = obs(&ft.rows[0], "rescaled")?;
    let full: Vec<f64> = ft.rows.iter().filter_map(|r| r.observable("fullnet_rescaled")).collect();
    ok &= full.len() == 3;
    let mean = full.iter().sum::<f64>() / full.len().max(1) as f64;
    parts.push(format!(
        "full net tanh eps=0.1, {} of 3 seeds escaped, rescaled {mean:.4} vs ODE {ode:.4}",
        full.len()
    ));
    Ok((ok, parts.join("; ")))
}

fn c5() -> Check {
    let mut s = spec(Experiment::IdentitySuite);
    s.grid.depths = vec![3];
    s.grid.activations = vec!["tanh".into()];
    s.grid.seeds = (1..=5).collect();
    let t = sweep(s)?;
    let z = t.rows.iter().map(|r| obs(r, "max_z")).collect::<Result<Vec<_>, _>>()?;
    let zmax = z.iter().copied().fold(0.0f64, f64::max);

    let mut lin = spec(Experiment::IdentitySuite);
    lin.grid.depths = vec![3, 4];
    lin.grid.activations = vec!["linear".into()];
    let lt = sweep(lin)?;
    let drift = lt
        .rows
        .iter()
        .map(|r| obs(r, "linear_rel_drift"))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    let steps = lt.rows[0].steps.unwrap_or(0);
    Ok((
        zmax <= 3.0 && drift <= 1e-8 && steps >= 10_000,
        format!(
            "{} tanh configs, max |z| {zmax:.2}; linear relative drift {drift:.2e} over {steps} steps",
            z.len()
        ),
    ))
}

fn c6() -> Check {
    let flow = |name: &str, l: usize| -> Result<ReducedFlow, String> {
        let act = Activation::by_name(name).map_err(|e| e.to_string())?;
        ReducedFlow::new(ReducedFlowConfig::new(l, 64.0, 1.0, act)).map_err(|e| e.to_string())
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, l, target) in [("tanh", 3, 5.0), ("tanh", 4, 6.0), ("gelu", 4, 5.0)] {
        let fit = imbalance_drift_exponent(&flow(name, l)?, &DRIFT_EPS).map_err(|e| e.to_string())?;
        ok &= (fit.slope - target).abs() <= 0.3;
        parts.push(format!("{name} L={l}: {:.3} vs {target}", fit.slope));
    }
    let mut worst = 0.0f64;
    for l in [3, 4, 5] {
        let f = flow("linear", l)?;
        for &e in &DRIFT_EPS {
            worst = f.imbalance_drift(&staggered_state(l, e)).iter().fold(worst, |a, v| a.max(v.abs()));
        }
    }
    ok &= worst <= 1e-13;
    parts.push(format!("linear max drift {worst:.1e}"));
    Ok((ok, parts.join("; ")))
}

fn offmanifold(r: usize, lo: f64, hi: f64, n: usize) -> Result<Table, String> {
    let mut s = spec(Experiment::CriticalDepthOffmanifold);
    s.grid.eps_log = Some(LogRange { lo, hi, n });
    s.grid.depths = vec![8];
    s.grid.bottlenecks = vec![r];
    s.grid.activations = vec!["tanh".into()];
    s.grid.seeds = vec![1, 2, 3];
    let t = run_sweep(&s, 1).map_err(|e| e.to_string())?;
    Ok(t)
}

fn c7() -> Check {
    let runs = [(3usize, 0.01, 0.3, 6usize), (5, 0.08, 0.3, 5), (8, 0.25, 0.5, 4)];
    let mut slopes: BTreeMap<(usize, &str), f64> = BTreeMap::new();
    let mut parts = Vec::new();
    for (r, lo, hi, n) in runs {
        let t = offmanifold(r, lo, hi, n)?;
        let missed = t.rows.iter().filter(|x| !x.crossed).count();
        if missed > 0 {
            parts.push(format!("r={r}: {missed} runs without escape"));
        }
        for key in ["t_esc@0.02", "t_esc@0.01", "t_esc@0.05"] {
            let fit = fit_slope_by(&t.rows, (0.0, f64::INFINITY), |x| x.observable(key)).map_err(|e| e.to_string())?;
            slopes.insert((r, key), fit.slope);
        }
    }
    let s = |r: usize, k: &str| slopes[&(r, k)];
    let mut ok = true;
    for r in [3usize, 5] {
        let target = -(r as f64 - 2.0);
        ok &= (s(r, "t_esc@0.02") - target).abs() <= 0.6;
    }
    for key in ["t_esc@0.02", "t_esc@0.01", "t_esc@0.05"] {
        ok &= s(3, key) > s(5, key) && s(5, key) > s(8, key);
        parts.push(format!(
            "{}: slopes {:.2} / {:.2} / {:.2}",
            key.trim_start_matches("t_esc@"),
            s(3, key),
            s(5, key),
            s(8, key)
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn c8() -> Check {
    let act = Activation::by_name("tanh").map_err(|e| e.to_string())?;
    let h_sigma = hermite_moments(&act, 128).map_err(|e| e.to_string())?.h_sigma;
    let teacher = TeacherSpec::axis_aligned(16, &[1.0], act).map_err(|e| e.to_string())?;
    let w0 = init_he_bottleneck(16, 64, 8, 0.1, 3, 1).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        lr: 0.01,
        metric: Metric::Uniform,
        estimator: Estimator::MonteCarlo { batch: 512, seed: 1, run: 0 },
        max_steps: 200_000,
        escape: EscapeRule::Loss(vec![0.02]),
        snapshot_every: 10,
        stop_at_escape: true,
    };
    let (rec, snaps) = train_to_escape(&w0, &teacher, &cfg).map_err(|e| e.to_string())?;
    if !rec.crossed() {
        return Ok((false, format!("no escape within {} steps", rec.steps_run)));
    }
    let baseline = snaps[0].loss;
    let samples = 1 << 16;
    let mut prev: Option<(f64, f64)> = None;
    let mut drops = 0;
    let (mut checked, mut held) = (0usize, 0usize);
    for (i, s) in snaps.iter().enumerate() {
        let (g, se) = gamma_mc(&s.weights, &teacher, samples, 1000 + i as u64);
        if let Some((pg, pse)) = prev {
            if g < pg - 3.0 * (se * se + pse * pse).sqrt() {
                drops += 1;
            }
        }
        prev = Some((g, se));
        if s.loss >= 0.5 * baseline {
            let (rate, rse, t) = gamma_rate_mc(&s.weights, &teacher, Metric::Uniform, samples, 5000 + i as u64);
            checked += 1;
            if rate + 2.0 * rse >= 0.5 * h_sigma * t {
                held += 1;
            }
        }
    }
    let frac = held as f64 / checked.max(1) as f64;
    Ok((
        drops == 0 && checked > 0 && frac >= 0.95,
        format!(
            "{} snapshots to escape, gamma drops beyond 3 se: {drops}; rate bound holds at {held}/{checked} ({:.1}%)",
            snaps.len(),
            100.0 * frac
        ),
    ))
}

fn c9() -> Check {
    let mut s = spec(Experiment::CascadeHomotopy);
    s.grid.eps = vec![0.05];
    s.grid.depths = vec![4];
    s.grid.activations = vec!["tanh".into()];
    let t = sweep(s)?;
    let r = &t.rows[0];
    let (t0, t1, tc, res) = (obs(r, "t0")?, obs(r, "t1")?, obs(r, "t0_plus_integral")?, obs(r, "resolution")?);
    let te = r.t_esc.ok_or("full network did not escape")?;
    let (lo, hi) = (t0.min(tc) - res, t0.max(tc) + res);
    let mut ok = te >= lo && te <= hi;
    let mut parts = vec![format!(
        "full t_esc {te:.2} in [{:.2}, {:.2}] (T0 {t0:.2}, T0+int A {tc:.2}, T1 {t1:.2}, step {res})",
        lo + res,
        hi - res
    )];

    let f0 = |x: &[f64], o: &mut [f64]| o[0] = x[0];
    let f1 = |x: &[f64], o: &mut [f64]| o[0] = x[0] + x[0] * x[0];
    let tol = QuadTolerance {
        abs_tol: 1e-12,
        rel_tol: 1e-12,
        ..QuadTolerance::default()
    };
    let h = Threshold::coordinate(1, 0, 1.0);
    let o = homotopy_escape_identity(&f0, &f1, &[0.01], &h, NuQuadrature::Adaptive(tol), &HomotopyOptions::default())
        .map_err(|e| e.to_string())?;
    let exact = 50.5f64.ln();
    let norm = o.max_normalization_error();
    ok &= o.identity_residual <= 1e-8 && norm <= 1e-6;
    parts.push(format!(
        "oracle residual {:.1e}, normalization {norm:.1e}, T1 {:.10} vs exact {exact:.10}",
        o.identity_residual, o.t1
    ));
    Ok((ok, parts.join("; ")))
}

fn c10() -> Check {
    let one = |v: f64| Mat::from_vec(1, 1, vec![v]).expect("1x1");
    let sp = schur_perron(&SchurBlocks::new(vec![1.0], vec![1.0], one(2.0), one(2.0)).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut ok = (sp.lambda - 1.0).abs() <= 1e-10 && sp.eigvec.iter().all(|&v| v >= 0.0) && sp.residual <= 1e-8;
    let mut parts = vec![format!("scalar lambda {:.12}, residual {:.1e}", sp.lambda, sp.residual)];

    let mut rejected = 0;
    for (b, c) in [(1.0, 1.0), (0.5, 1.0), (0.3, 0.2)] {
        let blocks = SchurBlocks::new(vec![1.0], vec![1.0], one(b), one(c)).map_err(|e| e.to_string())?;
        if matches!(schur_perron(&blocks), Err(Error::NoPositiveEigenvalue(_))) {
            rejected += 1;
        }
    }
    ok &= rejected == 3;
    parts.push(format!("{rejected}/3 subcritical instances rejected"));

    let mut monotone = 0;
    for seed in 0..20u64 {
        let mut g = rng::stream(seed, 77, 0);
        let n = 5;
        let mut u = || 0.1 + rng::uniform(&mut g);
        let a: Vec<f64> = (0..n).map(|_| u()).collect();
        let d: Vec<f64> = (0..n).map(|_| u()).collect();
        let mut b = Mat::from_fn(n, n, |_, _| u());
        let c = Mat::from_fn(n, n, |_, _| u());
        // Supercritical already at the first level.
        let s = 1.5 * (a[0] * d[0] / (b.get(0, 0) * c.get(0, 0))).max(1.0);
        b.data.iter_mut().for_each(|v| *v *= s);
        let full = SchurBlocks::new(a, d, b, c).map_err(|e| e.to_string())?;
        let nested: Vec<SchurBlocks> = (1..=n).map(|m| full.truncate(m)).collect();
        if perron_truncation_monotonicity(&nested).is_ok() {
            monotone += 1;
        }
    }
    ok &= monotone == 20;
    parts.push(format!("{monotone}/20 random nested truncations strictly monotone"));
    Ok((ok, parts.join("; ")))
}

fn double_factorial(k: u32) -> f64 {
    (1..=k).rev().step_by(2).map(f64::from).product()
}

fn c11() -> Check {
    let mut worst = 0.0f64;
    for n in [4usize, 8, 16, 32] {
        let rule = gauss_hermite(n).map_err(|e| e.to_string())?;
        for k in 0..(2 * n as i32) {
            let got = rule.expect(|g| g.powi(k));
            let want = match k {
                0 => 1.0,
                _ if k % 2 == 1 => 0.0,
                _ => double_factorial(k as u32 - 1),
            };
            let scale = rule.expect(|g| g.abs().powi(k)).max(1.0);
            worst = worst.max((got - want).abs() / scale);
        }
    }
    let mut ok = worst <= 1e-10;
    let mut parts = vec![format!("GH monomials up to degree 2n-1, worst rel err {worst:.1e}")];

    let mut closed = 0.0f64;
    for l in [2usize, 3] {
        for theta in [0.1, 0.5, 1.0, 3.0] {
            let cf = universal_integral_closed_form(l, theta).ok_or("missing closed form")?;
            let q = universal_integral(l, theta).map_err(|e| e.to_string())?;
            closed = closed.max((q - cf).abs() / cf.abs());
        }
    }
    ok &= closed <= 1e-10;
    parts.push(format!("I2/I3 closed forms {closed:.1e}"));

    let mut stein = 0.0f64;
    for name in Activation::shipped() {
        let act = Activation::by_name(name).map_err(|e| e.to_string())?;
        let m = hermite_moments(&act, 128).map_err(|e| e.to_string())?;
        stein = stein.max((m.h_sigma - m.e_sigma_prime).abs());
    }
    ok &= stein <= 1e-10;
    parts.push(format!("Stein gap {stein:.1e}"));
    Ok((ok, parts.join("; ")))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Check); 11] = [
        (1, "exactness of the reduction", c1),
        (2, "balanced depth scaling", c2),
        (3, "critical depth on the manifold", c3),
        (4, "universality collapse", c4),
        (5, "imbalance identity", c5),
        (6, "imbalance drift exponent", c6),
        (7, "off-manifold critical depth", c7),
        (8, "signal-energy inequality", c8),
        (9, "cascade and homotopy", c9),
        (10, "Schur-Perron", c10),
        (11, "quadrature and integrator oracles", c11),
    ];
    let only: Option<Vec<u32>> = std::env::var("SADDLE_ACCEPT")
        .ok()
        .filter(|v| !v.trim().is_empty())
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match run() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {id:>2} {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
