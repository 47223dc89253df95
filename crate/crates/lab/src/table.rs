//! Result rows and their CSV and JSON encodings.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::LabError;
use crate::spec::SweepSpec;

/// Version of the CSV column layout and the JSON document shape.
pub const SCHEMA_VERSION: u32 = 1;

/// CSV header, in column order.
pub const COLUMNS: [&str; 15] = [
    "experiment",
    "config",
    "seed",
    "activation",
    "depth",
    "bottleneck",
    "eps",
    "rule",
    "threshold",
    "crossed",
    "t_esc",
    "steps",
    "prediction",
    "error",
    "observables",
];

/// One `(config, seed)` outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub experiment: String,
    pub config: usize,
    pub seed: u64,
    pub activation: String,
    pub depth: Option<usize>,
    pub bottleneck: Option<usize>,
    pub eps: Option<f64>,
    pub rule: String,
    pub threshold: Option<f64>,
    pub crossed: bool,
    pub t_esc: Option<f64>,
    pub steps: Option<u64>,
    pub prediction: Option<f64>,
    /// Empty unless the run failed.
    pub error: String,
    pub observables: BTreeMap<String, f64>,
}

impl Row {
    pub fn observable(&self, key: &str) -> Option<f64> {
        self.observables.get(key).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Table {
    pub rows: Vec<Row>,
}

/// JSON results document: schema version, resolved config and rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub schema_version: u32,
    pub config: SweepSpec,
    pub rows: Vec<Row>,
}

/// Canonical float text: 17 significant digits, exact on reparse.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt<T, F: Fn(&T) -> String>(v: &Option<T>, f: F) -> String {
    v.as_ref().map(f).unwrap_or_default()
}

fn encode_observables(obs: &BTreeMap<String, f64>) -> String {
    obs.iter().map(|(k, v)| format!("{k}={}", fmt_f64(*v))).collect::<Vec<_>>().join(";")
}

fn decode_observables(s: &str) -> Result<BTreeMap<String, f64>, LabError> {
    let mut out = BTreeMap::new();
    if s.is_empty() {
        return Ok(out);
    }
    for part in s.split(';') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| LabError::Parse(format!("observable entry `{part}`")))?;
        out.insert(k.to_string(), parse_f64(v)?);
    }
    Ok(out)
}

fn parse_f64(s: &str) -> Result<f64, LabError> {
    s.parse().map_err(|_| LabError::Parse(format!("number `{s}`")))
}

fn parse_opt<T: std::str::FromStr>(s: &str) -> Result<Option<T>, LabError> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| LabError::Parse(format!("field `{s}`")))
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> LabError + '_ {
    move |source| LabError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl Table {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), LabError> {
        let mut wr = csv::Writer::from_writer(w);
        let map = |e: csv::Error| LabError::Runtime(e.to_string());
        wr.write_record(COLUMNS).map_err(map)?;
        for r in &self.rows {
            wr.write_record([
                r.experiment.clone(),
                r.config.to_string(),
                r.seed.to_string(),
                r.activation.clone(),
                opt(&r.depth, usize::to_string),
                opt(&r.bottleneck, usize::to_string),
                opt(&r.eps, |v| fmt_f64(*v)),
                r.rule.clone(),
                opt(&r.threshold, |v| fmt_f64(*v)),
                r.crossed.to_string(),
                opt(&r.t_esc, |v| fmt_f64(*v)),
                opt(&r.steps, u64::to_string),
                opt(&r.prediction, |v| fmt_f64(*v)),
                r.error.clone(),
                encode_observables(&r.observables),
            ])
            .map_err(map)?;
        }
        wr.flush().map_err(|e| LabError::Runtime(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, LabError> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(|e| LabError::Parse(e.to_string()))?;
        if header.iter().ne(COLUMNS.iter().copied()) {
            return Err(LabError::Parse("unexpected CSV header".into()));
        }
        let mut rows = Vec::new();
        for rec in rd.records() {
            let f = rec.map_err(|e| LabError::Parse(e.to_string()))?;
            if f.len() != COLUMNS.len() {
                return Err(LabError::Parse(format!("record with {} fields", f.len())));
            }
            rows.push(Row {
                experiment: f[0].to_string(),
                config: f[1].parse().map_err(|_| LabError::Parse(format!("config `{}`", &f[1])))?,
                seed: f[2].parse().map_err(|_| LabError::Parse(format!("seed `{}`", &f[2])))?,
                activation: f[3].to_string(),
                depth: parse_opt(&f[4])?,
                bottleneck: parse_opt(&f[5])?,
                eps: parse_opt(&f[6])?,
                rule: f[7].to_string(),
                threshold: parse_opt(&f[8])?,
                crossed: f[9].parse().map_err(|_| LabError::Parse(format!("crossed `{}`", &f[9])))?,
                t_esc: parse_opt(&f[10])?,
                steps: parse_opt(&f[11])?,
                prediction: parse_opt(&f[12])?,
                error: f[13].to_string(),
                observables: decode_observables(&f[14])?,
            });
        }
        Ok(Self { rows })
    }

    pub fn to_document(&self, config: &SweepSpec) -> Document {
        Document {
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
            rows: self.rows.clone(),
        }
    }
}

/// Output encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Writes `table` to `path`; JSON carries the resolved config.
pub fn emit_results(table: &Table, config: &SweepSpec, format: Format, path: &Path) -> Result<(), LabError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    match format {
        Format::Csv => table.write_csv(&mut w)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, &table.to_document(config)).map_err(|e| LabError::Runtime(e.to_string()))?;
            w.write_all(b"\n").map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv_file(path: &Path) -> Result<Table, LabError> {
    Table::read_csv(std::fs::File::open(path).map_err(io_err(path))?)
}

pub fn read_document(path: &Path) -> Result<Document, LabError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| LabError::Parse(e.to_string()))
}
