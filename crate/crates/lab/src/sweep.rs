//! Parallel execution of a sweep over its grid.

use rayon::prelude::*;

use crate::error::LabError;
use crate::experiments::run_row;
use crate::spec::SweepSpec;
use crate::table::Table;

/// Default worker count: available cores.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Runs every `(config, seed)` pair of the resolved `spec` on `workers`
/// threads. Rows come back in grid order whatever the scheduling, and a
/// failing run yields a row with its error instead of aborting the sweep.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<Table, LabError> {
    let spec = spec.clone().resolve()?;
    let jobs: Vec<_> = spec
        .configs()
        .into_iter()
        .flat_map(|cp| spec.grid.seeds.iter().map(move |&s| (cp.clone(), s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| LabError::Runtime(e.to_string()))?;
    let rows = pool.install(|| jobs.par_iter().map(|(cp, seed)| run_row(&spec, cp, *seed)).collect());
    Ok(Table { rows })
}
