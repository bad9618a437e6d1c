//! Experiment tooling around `eon-core`: dataset files, cross-validated grid
//! search, metrics and decision rasters. The `eon` binary exposes all of it
//! on the command line.

pub mod config;
pub mod cv;
pub mod error;
pub mod io;
pub mod metrics;
pub mod raster;

pub use config::{CvMode, DataSource, ExperimentConfig, FitSettings, Grid, GridCell, Metric, SplitSize, Splits};
pub use cv::{run_cv, run_cv_on, save_results, CellResult, FoldSummary, ResultsTable};
pub use error::{HarnessError, Result};
