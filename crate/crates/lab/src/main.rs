use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use saddle_core::activation::{classify, hermite_moments, Activation};
use saddle_core::cascade::{
    homotopy_escape_identity, schur_perron, BlockClosure, NuQuadrature, SchurBlocks, Threshold,
};
use saddle_core::escape_laws::{
    critical_depth_prediction, escape_closed_form_balanced_to, escape_integral, first_resummed_flight_time,
    k_sigma, resonance_correction, resonance_lambda, InitProfile, ResonanceCorrection,
};
use saddle_core::fullnet::{
    init_ansatz, init_he_bottleneck, train_to_escape, EscapeRule, Estimator, Metric, TeacherSpec, TrainConfig,
};
use saddle_core::linalg::Mat;
use saddle_core::ode::OdeOptions;
use saddle_core::reduced_flow::{EscapeSpec, ReducedFlow, ReducedFlowConfig, RhsKind};
use saddle_lab::config;
use saddle_lab::experiments::closure_homotopy_options;
use saddle_lab::table::{fmt_f64, SCHEMA_VERSION};
use saddle_lab::{default_workers, emit_results, run_sweep, Experiment, Format, LabError, SweepSpec};

#[derive(Parser)]
#[command(name = "saddle", version, about = "Saddle-escape experiments for deep nonlinear networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file (TOML, or a JSON results file to replay its config).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config entry; dotted keys reach nested tables.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv", global = true)]
    format: Format,
    /// Worker threads for sweeps; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Activation class and Gaussian moments.
    Classify,
    /// Integrate the reduced scalar flow.
    Reduce,
    /// Escape-time predictions for an initial profile.
    Escape,
    /// Run a sweep over a grid.
    Sweep,
    /// Train a full network until escape.
    Fullnet,
    /// Modewise cascade predictions and the Schur–Perron root.
    Cascade,
    /// Escape-time homotopy identity for the block closure.
    Homotopy,
    /// Imbalance identity suite.
    Verify,
}

/// Generic tabular output.
struct Report {
    command: &'static str,
    config: Value,
    columns: Vec<String>,
    rows: Vec<Vec<Value>>,
    summary: Value,
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Number(n) if n.is_f64() => fmt_f64(n.as_f64().unwrap_or(f64::NAN)),
        other => other.to_string(),
    }
}

fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::String(v.to_string())
    }
}

impl Report {
    fn write(&self, format: Format, out: &mut dyn Write) -> Result<(), LabError> {
        let io = |e: std::io::Error| LabError::Runtime(e.to_string());
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(out);
                let map = |e: csv::Error| LabError::Runtime(e.to_string());
                w.write_record(&self.columns).map_err(map)?;
                for r in &self.rows {
                    w.write_record(r.iter().map(cell)).map_err(map)?;
                }
                w.flush().map_err(io)
            }
            Format::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|r| Value::Object(self.columns.iter().cloned().zip(r.iter().cloned()).collect()))
                    .collect();
                let doc = json!({
                    "schema_version": SCHEMA_VERSION,
                    "command": self.command,
                    "config": self.config,
                    "rows": rows,
                    "summary": self.summary,
                });
                serde_json::to_writer_pretty(&mut *out, &doc).map_err(|e| LabError::Runtime(e.to_string()))?;
                out.write_all(b"\n").map_err(io)
            }
        }
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, LabError> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p).map_err(|source| {
            LabError::Io {
                path: p.display().to_string(),
                source,
            }
        })?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn echo<T: Serialize>(cfg: &T) -> Result<Value, LabError> {
    eprintln!("# resolved config\n{}", config::echo(cfg)?);
    serde_json::to_value(cfg).map_err(|e| LabError::Runtime(e.to_string()))
}

fn act(name: &str) -> Result<Activation, LabError> {
    Activation::by_name(name).map_err(|e| LabError::Validation(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ClassifyCfg {
    activations: Vec<String>,
    nodes: usize,
}

impl Default for ClassifyCfg {
    fn default() -> Self {
        Self {
            activations: Activation::shipped().iter().map(|s| s.to_string()).collect(),
            nodes: 128,
        }
    }
}

fn cmd_classify(cli: &Cli) -> Result<Report, LabError> {
    let cfg: ClassifyCfg = config::resolve(cli.config.as_deref(), &cli.set)?;
    let config = echo(&cfg)?;
    let mut rows = Vec::new();
    for name in &cfg.activations {
        let a = act(name)?;
        let class = classify(&a).map(|c| c.to_string()).unwrap_or_else(|e| format!("invalid: {e}"));
        let m = hermite_moments(&a, cfg.nodes)?;
        rows.push(vec![
            json!(a.name),
            json!(class),
            num(a.alpha),
            a.q.map_or(Value::Null, |q| json!(q)),
            num(a.a_q),
            num(m.h_sigma),
            num(m.e_sigma_prime),
            num((m.h_sigma - m.e_sigma_prime).abs()),
            num(resonance_lambda(&a)?),
        ]);
    }
    Ok(Report {
        command: "classify",
        config,
        columns: ["activation", "class", "alpha", "q", "a_q", "h_sigma", "e_sigma_prime", "stein_gap", "lambda"]
            .map(String::from)
            .to_vec(),
        rows,
        summary: Value::Null,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ReduceCfg {
    activation: String,
    width: f64,
    beta1: f64,
    x0: Vec<f64>,
    t_max: f64,
    points: usize,
    rhs: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
}

impl Default for ReduceCfg {
    fn default() -> Self {
        Self {
            activation: "tanh".into(),
            width: 64.0,
            beta1: 1.0,
            x0: vec![0.03, 0.05, 0.07, 0.09],
            t_max: 6000.0,
            points: 25,
            rhs: "exact".into(),
            threshold: None,
        }
    }
}

fn cmd_reduce(cli: &Cli) -> Result<Report, LabError> {
    let cfg: ReduceCfg = config::resolve(cli.config.as_deref(), &cli.set)?;
    let config = echo(&cfg)?;
    let kind = match cfg.rhs.as_str() {
        "exact" => RhsKind::Exact,
        "leading" => RhsKind::Leading,
        other => return Err(LabError::Validation(format!("rhs must be exact or leading, got `{other}`"))),
    };
    if cfg.points < 2 {
        return Err(LabError::Validation("points must be at least 2".into()));
    }
    let l = cfg.x0.len();
    let flow = ReducedFlow::new(ReducedFlowConfig::new(l, cfg.width, cfg.beta1, act(&cfg.activation)?))
        .map_err(|e| LabError::Validation(e.to_string()))?;
    let times: Vec<f64> = (0..cfg.points).map(|i| cfg.t_max * i as f64 / (cfg.points - 1) as f64).collect();
    let (traj, ev) = flow.integrate(
        &cfg.x0,
        kind,
        cfg.t_max,
        cfg.threshold.map(EscapeSpec::x1),
        OdeOptions::default(),
        &times,
    )?;
    let mut columns = vec!["t".to_string()];
    columns.extend((1..=l).map(|i| format!("x{i}")));
    columns.push("loss".into());
    let rows = traj
        .t
        .iter()
        .zip(traj.x.iter().zip(&traj.loss))
        .map(|(t, (x, loss))| {
            let mut r = vec![num(*t)];
            r.extend(x.iter().map(|v| num(*v)));
            r.push(num(*loss));
            r
        })
        .collect();
    Ok(Report {
        command: "reduce",
        config,
        columns,
        rows,
        summary: json!({ "k_sigma": flow.k_sigma(), "crossed": ev.crossed, "t_esc": ev.crossed.then_some(ev.t_esc) }),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EscapeCfg {
    activation: String,
    width: f64,
    beta1: f64,
    /// Initial layer scales; a balanced profile when only `eps` and `depth`.
    #[serde(skip_serializing_if = "Option::is_none")]
    scales: Option<Vec<f64>>,
    depth: usize,
    eps: f64,
    threshold: f64,
}

impl Default for EscapeCfg {
    fn default() -> Self {
        Self {
            activation: "tanh".into(),
            width: 64.0,
            beta1: 1.0,
            scales: None,
            depth: 4,
            eps: 0.05,
            threshold: 1.0,
        }
    }
}

fn cmd_escape(cli: &Cli) -> Result<Report, LabError> {
    let cfg: EscapeCfg = config::resolve(cli.config.as_deref(), &cli.set)?;
    let config = echo(&cfg)?;
    let a = act(&cfg.activation)?;
    let scales = cfg.scales.clone().unwrap_or_else(|| vec![cfg.eps; cfg.depth]);
    let profile = InitProfile::from_scales(&scales).map_err(|e| LabError::Validation(e.to_string()))?;
    let l = profile.depth();
    let k = k_sigma(&a, l, cfg.beta1, cfg.width)?;
    let mut rows = vec![
        vec![json!("k_sigma"), num(k)],
        vec![json!("escape_integral"), num(escape_integral(&profile, k, cfg.threshold)?)],
    ];
    if profile.r == l {
        rows.push(vec![
            json!("balanced_closed_form"),
            num(escape_closed_form_balanced_to(l, profile.eps, k, cfg.threshold)?),
        ]);
    }
    match critical_depth_prediction(&profile, k) {
        Ok(p) => {
            rows.push(vec![json!("critical_depth_t_lead"), num(p.t_lead)]);
            rows.push(vec![json!("critical_depth_regime"), json!(p.regime.to_string())]);
        }
        Err(e) => rows.push(vec![json!("critical_depth_t_lead"), json!(format!("unavailable: {e}"))]),
    }
    if let Some(q) = a.q {
        let lambda = resonance_lambda(&a)?;
        rows.push(vec![json!("resonance_lambda"), num(lambda)]);
        match resonance_correction(l, q, lambda, k, profile.eps) {
            ResonanceCorrection::Log(dt) => rows.push(vec![json!("resonance_log_shift"), num(dt)]),
            ResonanceCorrection::Power { order } => rows.push(vec![json!("resonance_power_order"), json!(order)]),
        }
        if profile.r == l {
            rows.push(vec![
                json!("resummed_flight_time"),
                num(first_resummed_flight_time(l, q, k, lambda, profile.eps, cfg.threshold)?),
            ]);
        }
    }
    Ok(Report {
        command: "escape",
        config,
        columns: vec!["quantity".into(), "value".into()],
        rows,
        summary: Value::Null,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FullnetCfg {
    activation: String,
    depth: usize,
    width: usize,
    input_dim: usize,
    eps: f64,
    /// `he` (first `bottleneck` layers scaled by `eps`) or `ansatz` (balanced).
    init: String,
    bottleneck: usize,
    lr: f64,
    batch: usize,
    /// `uniform` or `normalized`.
    metric: String,
    thresholds: Vec<f64>,
    max_steps: usize,
    seed: u64,
    snapshot_every: usize,
}

impl Default for FullnetCfg {
    fn default() -> Self {
        Self {
            activation: "tanh".into(),
            depth: 8,
            width: 64,
            input_dim: 16,
            eps: 0.1,
            init: "he".into(),
            bottleneck: 3,
            lr: 0.01,
            batch: 512,
            metric: "uniform".into(),
            thresholds: vec![0.02],
            max_steps: 200_000,
            seed: 1,
            snapshot_every: 0,
        }
    }
}

fn cmd_fullnet(cli: &Cli) -> Result<Report, LabError> {
    let mut cfg: FullnetCfg = config::resolve(cli.config.as_deref(), &cli.set)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let config = echo(&cfg)?;
    let teacher = TeacherSpec::axis_aligned(cfg.input_dim, &[1.0], act(&cfg.activation)?)
        .map_err(|e| LabError::Validation(e.to_string()))?;
    let w0 = match cfg.init.as_str() {
        "he" => init_he_bottleneck(cfg.input_dim, cfg.width, cfg.depth, cfg.eps, cfg.bottleneck, cfg.seed),
        "ansatz" => init_ansatz(cfg.input_dim, cfg.width, &vec![cfg.eps; cfg.depth], teacher.direction(0)),
        other => return Err(LabError::Validation(format!("init must be he or ansatz, got `{other}`"))),
    }
    .map_err(|e| LabError::Validation(e.to_string()))?;
    let metric = match cfg.metric.as_str() {
        "uniform" => Metric::Uniform,
        "normalized" => Metric::Normalized { width: cfg.width as f64 },
        other => return Err(LabError::Validation(format!("metric must be uniform or normalized, got `{other}`"))),
    };
    let tc = TrainConfig {
        lr: cfg.lr,
        metric,
        estimator: Estimator::MonteCarlo {
            batch: cfg.batch,
            seed: cfg.seed,
            run: 0,
        },
        max_steps: cfg.max_steps,
        escape: EscapeRule::Loss(cfg.thresholds.clone()),
        snapshot_every: cfg.snapshot_every,
        stop_at_escape: true,
    };
    let (rec, snaps) = train_to_escape(&w0, &teacher, &tc)?;
    let rows = snaps.iter().map(|s| vec![json!(s.step), num(s.t), num(s.loss)]).collect();
    let t_esc: Vec<Value> = (0..rec.thresholds.len()).map(|i| rec.t_esc(i).map_or(Value::Null, num)).collect();
    Ok(Report {
        command: "fullnet",
        config,
        columns: vec!["step".into(), "t".into(), "loss".into()],
        rows,
        summary: json!({
            "rule": rec.rule,
            "thresholds": rec.thresholds,
            "escape_steps": rec.escape_steps,
            "t_esc": t_esc,
            "steps_run": rec.steps_run,
            "final_loss": rec.final_loss,
        }),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchurCfg {
    a: Vec<f64>,
    d: Vec<f64>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CascadeCfg {
    activation: String,
    depth: usize,
    width: usize,
    betas: Vec<f64>,
    eps: f64,
    threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    schur: Option<SchurCfg>,
}

impl Default for CascadeCfg {
    fn default() -> Self {
        Self {
            activation: "tanh".into(),
            depth: 4,
            width: 60,
            betas: vec![1.0, 0.3, 0.08],
            eps: 0.05,
            threshold: 0.3,
            schur: None,
        }
    }
}

fn mat(rows: &[Vec<f64>]) -> Result<Mat, LabError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    Mat::from_vec(r, c, rows.concat()).map_err(|e| LabError::Validation(e.to_string()))
}

fn cmd_cascade(cli: &Cli) -> Result<Report, LabError> {
    let cfg: CascadeCfg = config::resolve(cli.config.as_deref(), &cli.set)?;
    let config = echo(&cfg)?;
    let k = cfg.betas.len();
    if k == 0 || cfg.width % k != 0 {
        return Err(LabError::Validation(format!("width {} is not divisible into {k} blocks", cfg.width)));
    }
    let closure = BlockClosure::new(cfg.depth, cfg.width / k, &cfg.betas, act(&cfg.activation)?, 12)
        .map_err(|e| LabError::Validation(e.to_string()))?;
    let drives = closure.mode_drives()?;
    let mut rows = Vec::new();
    for (i, (kd, b)) in drives.iter().zip(&cfg.betas).enumerate() {
        let t = escape_closed_form_balanced_to(cfg.depth, cfg.eps, *kd, cfg.threshold)?;
        rows.push(vec![json!(i + 1), num(*b), num(*kd), num(t)]);
    }
    let summary = match &cfg.schur {
        None => Value::Null,
        Some(s) => {
            let blocks = SchurBlocks::new(s.a.clone(), s.d.clone(), mat(&s.b)?, mat(&s.c)?)
                .map_err(|e| LabError::Validation(e.to_string()))?;
            match schur_perron(&blocks) {
                Ok(sp) => json!({
                    "lambda": sp.lambda,
                    "loop_gain": sp.loop_gain,
                    "residual": sp.residual,
                    "eigvec": sp.eigvec,
                }),
                Err(e) => json!({ "error": e.to_string() }),
            }
        }
    };
    if !summary.is_null() {
        eprintln!("# schur-perron {summary}");
    }
    Ok(Report {
        command: "cascade",
        config,
        columns: ["mode", "beta", "drive", "decoupled_t_esc"].map(String::from).to_vec(),
        rows,
        summary,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct HomotopyCfg {
    activation: String,
    depth: usize,
    width: usize,
    betas: Vec<f64>,
    eps: f64,
    threshold: f64,
    gh_nodes: usize,
    nu_nodes: usize,
}

impl Default for HomotopyCfg {
    fn default() -> Self {
        Self {
            activation: "tanh".into(),
            depth: 4,
            width: 60,
            betas: vec![1.0, 0.3, 0.08],
            eps: 0.05,
            threshold: 0.3,
            gh_nodes: 12,
            nu_nodes: 8,
        }
    }
}

fn cmd_homotopy(cli: &Cli) -> Result<Report, LabError> {
    let cfg: HomotopyCfg = config::resolve(cli.config.as_deref(), &cli.set)?;
    let config = echo(&cfg)?;
    let k = cfg.betas.len();
    if k == 0 || cfg.width % k != 0 {
        return Err(LabError::Validation(format!("width {} is not divisible into {k} blocks", cfg.width)));
    }
    let closure = BlockClosure::new(cfg.depth, cfg.width / k, &cfg.betas, act(&cfg.activation)?, cfg.gh_nodes)
        .map_err(|e| LabError::Validation(e.to_string()))?;
    let x0 = closure.balanced_state(cfg.eps);
    let f0 = closure.decoupled_field()?;
    let f1 = |x: &[f64], o: &mut [f64]| closure.field(x, o);
    let h = Threshold::coordinate(closure.dim(), closure.x_index(0, 0), cfg.threshold);
    let res = homotopy_escape_identity(
        &f0,
        &f1,
        &x0,
        &h,
        NuQuadrature::GaussLegendre(cfg.nu_nodes),
        &closure_homotopy_options(),
    )?;
    let rows = res
        .nodes
        .iter()
        .map(|n| vec![num(n.nu), num(n.a), num(n.t_escape), num(n.normalization_error)])
        .collect();
    Ok(Report {
        command: "homotopy",
        config,
        columns: ["nu", "a", "t_escape", "normalization_error"].map(String::from).to_vec(),
        rows,
        summary: json!({
            "t0": res.t0,
            "t1": res.t1,
            "integral": res.integral,
            "identity_residual": res.identity_residual,
        }),
    })
}

fn sweep_spec(cli: &Cli, forced: Option<Experiment>) -> Result<SweepSpec, LabError> {
    let mut table = match cli.config.as_deref() {
        Some(p) => config::load_table(p)?,
        None => toml::Table::new(),
    };
    if let Some(e) = forced {
        table.insert("experiment".into(), toml::Value::String(e.name().into()));
        let grid = table
            .entry("grid")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| LabError::Validation("`grid` must be a table".into()))?;
        grid.entry("depths").or_insert_with(|| toml::Value::try_from(vec![3, 4]).expect("array"));
        grid.entry("activations")
            .or_insert_with(|| toml::Value::try_from(vec!["tanh", "linear"]).expect("array"));
        grid.entry("seeds").or_insert_with(|| toml::Value::try_from(vec![1, 2, 3, 4, 5]).expect("array"));
    }
    for o in &cli.set {
        config::apply_override(&mut table, o)?;
    }
    let mut spec: SweepSpec = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| LabError::Validation(e.to_string()))?;
    if let Some(s) = cli.seed {
        spec.grid.seeds = vec![s];
    }
    spec.resolve()
}

fn cmd_sweep(cli: &Cli, forced: Option<Experiment>) -> Result<bool, LabError> {
    let spec = sweep_spec(cli, forced)?;
    eprintln!("# resolved config\n{}", config::echo(&spec)?);
    let table = run_sweep(&spec, cli.workers.unwrap_or_else(default_workers))?;
    match cli.out.as_deref() {
        Some(p) => emit_results(&table, &spec, cli.format, p)?,
        None => {
            let mut out = std::io::stdout().lock();
            match cli.format {
                Format::Csv => table.write_csv(&mut out)?,
                Format::Json => {
                    serde_json::to_writer_pretty(&mut out, &table.to_document(&spec))
                        .map_err(|e| LabError::Runtime(e.to_string()))?;
                    writeln!(out).map_err(|e| LabError::Runtime(e.to_string()))?;
                }
            }
        }
    }
    let failed = table.rows.iter().filter(|r| !r.error.is_empty()).count();
    if failed > 0 {
        eprintln!("# {failed} of {} rows failed", table.rows.len());
    }
    if forced == Some(Experiment::IdentitySuite) {
        let bad = table.rows.iter().filter(|r| !identity_row_ok(r)).count();
        eprintln!("# identity suite: {} of {} rows pass", table.rows.len() - bad, table.rows.len());
        return Ok(bad == 0);
    }
    Ok(true)
}

fn identity_row_ok(r: &saddle_lab::Row) -> bool {
    if !r.error.is_empty() {
        return false;
    }
    match (r.observable("max_z"), r.observable("linear_rel_drift")) {
        (Some(z), _) => z <= 3.0,
        (None, Some(d)) => d <= 1e-8,
        _ => false,
    }
}

fn run(cli: &Cli) -> Result<bool, LabError> {
    let report = match cli.command {
        Command::Classify => cmd_classify(cli)?,
        Command::Reduce => cmd_reduce(cli)?,
        Command::Escape => cmd_escape(cli)?,
        Command::Fullnet => cmd_fullnet(cli)?,
        Command::Cascade => cmd_cascade(cli)?,
        Command::Homotopy => cmd_homotopy(cli)?,
        Command::Sweep => return cmd_sweep(cli, None),
        Command::Verify => return cmd_sweep(cli, Some(Experiment::IdentitySuite)),
    };
    let mut out = open_out(cli.out.as_deref())?;
    report.write(cli.format, &mut out)?;
    out.flush().map_err(|e| LabError::Runtime(e.to_string()))?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
