//! Sweep specifications, their validation and default resolution.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::LabError;

/// Experiment family run by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Exactness,
    DepthScaling,
    CriticalDepthManifold,
    Universality,
    CriticalDepthOffmanifold,
    CascadeHomotopy,
    IdentitySuite,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Exactness => "exactness",
            Experiment::DepthScaling => "depth_scaling",
            Experiment::CriticalDepthManifold => "critical_depth_manifold",
            Experiment::Universality => "universality",
            Experiment::CriticalDepthOffmanifold => "critical_depth_offmanifold",
            Experiment::CascadeHomotopy => "cascade_homotopy",
            Experiment::IdentitySuite => "identity_suite",
        }
    }

    /// Grid axes the experiment iterates over, besides seeds.
    pub fn axes(self) -> &'static [Axis] {
        use Axis::*;
        match self {
            Experiment::Exactness => &[Activations],
            Experiment::DepthScaling => &[Eps, Depths, Activations],
            Experiment::CriticalDepthManifold => &[Eps, Depths, Bottlenecks, Activations],
            Experiment::Universality => &[Eps, Depths, Activations],
            Experiment::CriticalDepthOffmanifold => &[Eps, Depths, Bottlenecks, Activations],
            Experiment::CascadeHomotopy => &[Eps, Depths, Activations],
            Experiment::IdentitySuite => &[Depths, Activations],
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Eps,
    Depths,
    Bottlenecks,
    Activations,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Eps => "eps",
            Axis::Depths => "depths",
            Axis::Bottlenecks => "bottlenecks",
            Axis::Activations => "activations",
        }
    }
}

/// Log-uniform grid shorthand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRange {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grid {
    pub eps: Vec<f64>,
    /// Appended to `eps` on resolution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_log: Option<LogRange>,
    pub depths: Vec<usize>,
    pub bottlenecks: Vec<usize>,
    pub activations: Vec<String>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budget {
    /// Step cap (or fixed horizon) for network training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    /// Time horizon for ODE integration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
}

/// Experiment knobs. Unset entries take per-experiment defaults on
/// resolution.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    /// Escape threshold of the primary rule.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Further loss thresholds recorded in the same run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra_thresholds: Option<Vec<f64>>,
    /// Teacher amplitudes, one per mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    /// Scale of non-bottleneck layers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub other_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gh_nodes: Option<usize>,
    /// Initial ansatz scales for the exactness run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<usize>,
    /// Also train the full network where the experiment supports it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fullnet: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,
    /// Gauss–Legendre nodes in the homotopy parameter.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu_nodes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub experiment: Experiment,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub params: Params,
}

fn fill<T: Clone>(slot: &mut Option<T>, v: T) {
    if slot.is_none() {
        *slot = Some(v);
    }
}

impl SweepSpec {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            grid: Grid::default(),
            budget: Budget::default(),
            params: Params::default(),
        }
    }

    /// Checks the grid and fills every unset parameter.
    pub fn resolve(mut self) -> Result<Self, LabError> {
        if let Some(r) = self.grid.eps_log.take() {
            if !(r.lo > 0.0 && r.hi >= r.lo && r.n >= 1) {
                return Err(LabError::Validation(format!("bad eps_log range {r:?}")));
            }
            self.grid.eps.extend(saddle_core::fit::log_grid(r.lo, r.hi, r.n));
        }
        self.validate()?;
        fill(&mut self.budget.t_max, 1e12);
        fill(
            &mut self.budget.max_steps,
            match self.experiment {
                Experiment::Exactness => 120_000,
                Experiment::IdentitySuite => 10_000,
                _ => 200_000,
            },
        );
        let p = &mut self.params;
        use Experiment::*;
        match self.experiment {
            Exactness => {
                fill(&mut p.width, 64);
                fill(&mut p.input_dim, 16);
                fill(&mut p.lr, 0.05);
                fill(&mut p.gh_nodes, 128);
                fill(&mut p.x0, vec![0.03, 0.05, 0.07, 0.09]);
                fill(&mut p.snapshots, 25);
                fill(&mut p.betas, vec![1.0]);
            }
            DepthScaling | CriticalDepthManifold => {
                fill(&mut p.width, 64);
                fill(&mut p.threshold, 0.3);
                fill(&mut p.betas, vec![1.0]);
                fill(&mut p.other_scale, 1.0);
            }
            Universality => {
                fill(&mut p.width, 64);
                fill(&mut p.input_dim, 16);
                fill(&mut p.threshold, 0.5);
                fill(&mut p.betas, vec![1.0]);
                fill(&mut p.fullnet, false);
                fill(&mut p.lr, 0.05);
                fill(&mut p.batch, 1024);
            }
            CriticalDepthOffmanifold => {
                fill(&mut p.width, 64);
                fill(&mut p.input_dim, 16);
                fill(&mut p.lr, 0.01);
                fill(&mut p.batch, 512);
                fill(&mut p.threshold, 0.02);
                fill(&mut p.extra_thresholds, vec![0.05, 0.01]);
                fill(&mut p.betas, vec![1.0]);
            }
            CascadeHomotopy => {
                fill(&mut p.width, 60);
                fill(&mut p.input_dim, 16);
                fill(&mut p.lr, 0.5);
                fill(&mut p.threshold, 0.3);
                fill(&mut p.betas, vec![1.0, 0.3, 0.08]);
                fill(&mut p.gh_nodes, 12);
                fill(&mut p.nu_nodes, 8);
            }
            IdentitySuite => {
                fill(&mut p.width, 8);
                fill(&mut p.input_dim, 4);
                fill(&mut p.gh_nodes, 48);
                fill(&mut p.mc_samples, 1_000_000);
                fill(&mut p.betas, vec![1.0]);
            }
        }
        Ok(self)
    }

    /// Grid and budget checks; does not fill defaults.
    pub fn validate(&self) -> Result<(), LabError> {
        let g = &self.grid;
        for axis in self.experiment.axes() {
            let empty = match axis {
                Axis::Eps => g.eps.is_empty() && g.eps_log.is_none(),
                Axis::Depths => g.depths.is_empty(),
                Axis::Bottlenecks => g.bottlenecks.is_empty(),
                Axis::Activations => g.activations.is_empty(),
            };
            if empty {
                return Err(LabError::Validation(format!(
                    "grid axis `{}` is empty but {} iterates over it",
                    axis.name(),
                    self.experiment
                )));
            }
        }
        if g.seeds.is_empty() {
            return Err(LabError::Validation("grid has no seeds".into()));
        }
        let distinct: BTreeSet<u64> = g.seeds.iter().copied().collect();
        if distinct.len() != g.seeds.len() {
            return Err(LabError::Validation("seeds must be distinct".into()));
        }
        if g.eps.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(LabError::Validation("eps values must be positive and finite".into()));
        }
        for a in &g.activations {
            saddle_core::activation::Activation::by_name(a)
                .map_err(|e| LabError::Validation(format!("activation `{a}`: {e}")))?;
        }
        if self.budget.max_steps == Some(0) || self.budget.t_max.is_some_and(|t| !(t > 0.0)) {
            return Err(LabError::Validation("budget must be positive".into()));
        }
        Ok(())
    }

    /// Grid points in row-major order over the experiment's axes.
    pub fn configs(&self) -> Vec<ConfigPoint> {
        let g = &self.grid;
        let axes = self.experiment.axes();
        let has = |a: Axis| axes.contains(&a);
        let eps: Vec<Option<f64>> = if has(Axis::Eps) { g.eps.iter().copied().map(Some).collect() } else { vec![None] };
        let depths: Vec<Option<usize>> = if has(Axis::Depths) { g.depths.iter().copied().map(Some).collect() } else { vec![None] };
        let bns: Vec<Option<usize>> = if has(Axis::Bottlenecks) { g.bottlenecks.iter().copied().map(Some).collect() } else { vec![None] };
        let mut out = Vec::new();
        for act in &g.activations {
            for &depth in &depths {
                for &bottleneck in &bns {
                    for &e in &eps {
                        out.push(ConfigPoint {
                            index: out.len(),
                            activation: act.clone(),
                            depth,
                            bottleneck,
                            eps: e,
                        });
                    }
                }
            }
        }
        out
    }
}

/// One grid point, without the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigPoint {
    pub index: usize,
    pub activation: String,
    pub depth: Option<usize>,
    pub bottleneck: Option<usize>,
    pub eps: Option<f64>,
}
