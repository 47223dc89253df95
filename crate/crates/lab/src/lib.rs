//! Experiment harness for `saddle-core`: sweep specifications, parallel
//! execution, slope fits and result files.

pub mod config;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod spec;
pub mod sweep;
pub mod table;

pub use error::LabError;
pub use fit::{fit_slope, fit_slope_by, SlopeFit};
pub use spec::{Budget, Experiment, Grid, Params, SweepSpec};
pub use sweep::{default_workers, run_sweep};
pub use table::{emit_results, Format, Row, Table};
