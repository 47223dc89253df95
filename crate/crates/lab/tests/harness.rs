use std::collections::BTreeMap;
use std::process::Command;

use proptest::prelude::*;
use saddle_lab::config::{apply_override, resolve};
use saddle_lab::table::{read_document, Document};
use saddle_lab::{emit_results, fit_slope, run_sweep, Experiment, Format, LabError, Row, SweepSpec, Table};

fn row(eps: f64, seed: u64, t: f64) -> Row {
    Row {
        experiment: "depth_scaling".into(),
        config: 0,
        seed,
        activation: "tanh".into(),
        depth: Some(4),
        bottleneck: None,
        eps: Some(eps),
        rule: "x1".into(),
        threshold: Some(0.3),
        crossed: true,
        t_esc: Some(t),
        steps: None,
        prediction: Some(t * 1.01),
        error: String::new(),
        observables: BTreeMap::from([("rel_err".into(), -0.1 / 3.0), ("k_sigma".into(), 0.1 + 0.2)]),
    }
}

fn small_sweep() -> SweepSpec {
    let mut s = SweepSpec::new(Experiment::DepthScaling);
    s.grid.eps = vec![0.05, 0.1, 0.2];
    s.grid.depths = vec![3, 4];
    s.grid.activations = vec!["tanh".into(), "erf".into()];
    s.grid.seeds = vec![1];
    s
}

#[test]
fn csv_roundtrip_is_bitwise() {
    let mut r = row(0.1, 3, std::f64::consts::PI * 1e5);
    r.observables.insert("tiny".into(), 5e-324);
    r.observables.insert("neg".into(), -1.0 / 7.0);
    let mut failed = row(0.2, 4, 1.0);
    failed.crossed = false;
    failed.t_esc = None;
    failed.error = "run failed: \"quoted\", with comma".into();
    let table = Table { rows: vec![r, failed] };
    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    let back = Table::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, table);
    for (a, b) in back.rows.iter().zip(&table.rows) {
        for (x, y) in a.observables.values().zip(b.observables.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn empty_table_is_header_only() {
    let mut buf = Vec::new();
    Table::default().write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("experiment,config,seed"));
    assert_eq!(Table::read_csv(text.as_bytes()).unwrap(), Table::default());
    assert!(Table::read_csv("a,b\n1,2\n".as_bytes()).is_err());
}

#[test]
fn json_document_replays_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("res.json");
    let spec = small_sweep().resolve().unwrap();
    let table = Table { rows: vec![row(0.1, 1, 2.0)] };
    emit_results(&table, &spec, Format::Json, &path).unwrap();
    let doc: Document = read_document(&path).unwrap();
    assert_eq!(doc.schema_version, 1);
    assert_eq!(doc.rows, table.rows);
    let replay: SweepSpec = resolve(Some(&path), &[]).unwrap();
    assert_eq!(replay, spec);
}

#[test]
fn validation_errors() {
    let mut s = small_sweep();
    s.grid.eps.clear();
    assert!(matches!(run_sweep(&s, 1), Err(LabError::Validation(_))));
    let mut s = small_sweep();
    s.grid.seeds = vec![1, 2, 1];
    assert!(matches!(run_sweep(&s, 1), Err(LabError::Validation(_))));
    let mut s = small_sweep();
    s.grid.activations = vec!["relu".into()];
    assert!(matches!(run_sweep(&s, 1), Err(LabError::Validation(_))));
    let mut s = small_sweep();
    s.grid.eps = vec![0.1, -0.1];
    assert!(s.validate().is_err());
    let mut s = small_sweep();
    s.grid.seeds.clear();
    assert!(s.validate().is_err());
}

#[test]
fn slope_of_exact_power_law() {
    let rows: Vec<Row> = [0.01, 0.02, 0.04, 0.08]
        .iter()
        .flat_map(|&e: &f64| (1..=3).map(move |s| row(e, s, 7.0 * e.powi(-3))))
        .collect();
    let f = fit_slope(&rows, (0.0, 1.0)).unwrap();
    assert!((f.slope + 3.0).abs() < 1e-12);
    assert_eq!(f.n_points, 4);
    assert!(matches!(fit_slope(&rows, (0.015, 0.05)), Err(LabError::InsufficientPoints(2))));
    let mut uncrossed = rows.clone();
    uncrossed.iter_mut().for_each(|r| r.crossed = false);
    assert!(matches!(fit_slope(&uncrossed, (0.0, 1.0)), Err(LabError::InsufficientPoints(0))));
}

#[test]
fn worker_count_does_not_change_rows() {
    let a = run_sweep(&small_sweep(), 1).unwrap();
    let b = run_sweep(&small_sweep(), 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 12);
    assert!(a.rows.iter().all(|r| r.crossed && r.error.is_empty()));
    assert!(a.rows.windows(2).all(|w| w[0].config <= w[1].config));
}

#[test]
fn overrides() {
    let mut t = toml::Table::new();
    apply_override(&mut t, "grid.eps=[0.1, 0.2]").unwrap();
    apply_override(&mut t, "params.width = 32").unwrap();
    apply_override(&mut t, "experiment=depth_scaling").unwrap();
    apply_override(&mut t, "grid.activations=[\"tanh\"]").unwrap();
    let spec: SweepSpec = toml::Value::Table(t.clone()).try_into().unwrap();
    assert_eq!(spec.experiment, Experiment::DepthScaling);
    assert_eq!(spec.grid.eps, vec![0.1, 0.2]);
    assert_eq!(spec.params.width, Some(32));
    assert!(apply_override(&mut t, "novalue").is_err());
    assert!(apply_override(&mut t, "a..b=1").is_err());
    assert!(apply_override(&mut t, "params.width.x=1").is_err());
    let unknown: Result<SweepSpec, _> = resolve(None, &["experiment=exactness".into(), "params.bogus=1".into()]);
    assert!(matches!(unknown, Err(LabError::Validation(_))));
}

fn saddle(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_saddle")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    assert_eq!(saddle(&["--help"]).status.code(), Some(0));
    assert_eq!(saddle(&["nonsense"]).status.code(), Some(1));
    assert_eq!(saddle(&["classify", "--set", "bogus=1"]).status.code(), Some(1));
    let ok = saddle(&["classify", "--set", "activations=[\"tanh\", \"gelu\"]"]);
    assert_eq!(ok.status.code(), Some(0));
    let text = String::from_utf8(ok.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().starts_with("tanh,B3"));
}

#[test]
fn cli_sweep_json_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(
        &cfg,
        "experiment = \"depth_scaling\"\n[grid]\neps = [0.1, 0.2]\ndepths = [3]\nactivations = [\"tanh\"]\nseeds = [1]\n",
    )
    .unwrap();
    let first = dir.path().join("a.json");
    let second = dir.path().join("b.json");
    let run = |c: &std::path::Path, o: &std::path::Path| {
        saddle(&["sweep", "--config", c.to_str().unwrap(), "--format", "json", "--out", o.to_str().unwrap()])
    };
    assert_eq!(run(&cfg, &first).status.code(), Some(0));
    assert_eq!(run(&first, &second).status.code(), Some(0));
    let (a, b) = (read_document(&first).unwrap(), read_document(&second).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slope_invariant_under_time_rescaling(c in 1e-3f64..1e3, p in -5.0f64..0.0) {
        let rows: Vec<Row> = [0.01f64, 0.03, 0.1, 0.3].iter().map(|&e| row(e, 1, e.powf(p))).collect();
        let scaled: Vec<Row> = rows.iter().map(|r| Row { t_esc: r.t_esc.map(|t| t * c), ..r.clone() }).collect();
        let a = fit_slope(&rows, (0.0, 1.0)).unwrap().slope;
        let b = fit_slope(&scaled, (0.0, 1.0)).unwrap().slope;
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((a - p).abs() < 1e-9);
    }

    #[test]
    fn csv_float_roundtrip(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        let mut r = row(0.1, 1, v);
        r.observables.insert("v".into(), v);
        let t = Table { rows: vec![r] };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Table::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.rows[0].t_esc.unwrap().to_bits(), v.to_bits());
        prop_assert_eq!(back.rows[0].observables["v"].to_bits(), v.to_bits());
    }
}
