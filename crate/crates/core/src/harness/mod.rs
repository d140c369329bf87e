//! Experiment configuration, orchestration and the decision-log analyses
//! behind the `kgmem` command line.

pub mod analysis;
pub mod checks;
pub mod compare;
pub mod config;
pub mod run;
pub mod snapshot;

pub use analysis::{analyze, parse_decision_log, Category, DecisionLogSummary, KeepDrop, SeriesPoint};
pub use compare::{compare_runs, load_run, Comparison, RunSummary};
pub use config::{ExperimentConfig, OutputConfig, PolicyConfig, TransferSpec};
pub use run::{eval_run, train_run, Manifest, TraceRecord};

use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}
