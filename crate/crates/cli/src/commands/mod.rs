mod evaluate;
mod gen_data;
mod report;
mod train;

pub use evaluate::evaluate;
pub use gen_data::gen_data;
pub use report::report;
pub use train::train;

use std::path::{Path, PathBuf};

use invsen::evalmetrics::MetricsReport;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub checkpoint: String,
    pub method: String,
    pub lambda: f64,
    pub mu: f64,
    pub epochs: usize,
    pub k: usize,
    pub splits: Vec<SplitMetrics>,
    /// Run details that may differ between identical runs; ignore when comparing.
    #[serde(default)]
    pub meta: Option<Meta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: String,
    pub dataset: String,
    #[serde(flatten)]
    pub metrics: MetricsReport,
    pub subspace_preserving: f64,
    pub sparsity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub created_unix: u64,
    pub version: String,
}

pub fn method_name(lambda: f64) -> &'static str {
    if lambda == 0.0 {
        "baseline"
    } else {
        "debiased"
    }
}

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::file(dir)(e.into()))
}

fn write_file(path: PathBuf, bytes: &[u8]) -> CliResult<()> {
    invsen::datagen::write_atomic(&path, bytes).map_err(CliError::file(path))
}
