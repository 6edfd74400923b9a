#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Experiment driver for the `isaacs-fd` solver library.
//!
//! A run reads a JSON config, performs one study (`solve`, `rates`, `kgap`
//! or `regularity`) and writes `<study>.csv` plus `manifest.json` into the
//! output directory. The manifest echoes the resolved config, so feeding
//! its `config` object back in reproduces the CSV exactly.

pub mod config;
pub mod study;

use std::fs;
use std::path::{Path, PathBuf};

use isaacs_fd::{AnalysisError, GridError, LatticeError, ProblemError, SolverError};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use config::{load_config, parse_config, ExperimentConfig, StudyKind};
pub use study::{run_study, StatsSummary};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "ISAACS_FD_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config at `{field}`: {message}")]
    ConfigParse { field: String, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{context}: {source}")]
    Problem { context: String, source: ProblemError },
    #[error("{context}: {source}")]
    Grid { context: String, source: GridError },
    #[error("lattice: {source}")]
    Lattice { source: LatticeError },
    #[error("{context}: {source}")]
    Solver { context: String, source: SolverError },
    #[error("{context}: {source}")]
    Analysis { context: String, source: AnalysisError },
    #[error("{THREADS_ENV}: {0}")]
    Threads(String),
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("writing json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit code: 2 for bad input, 1 for failures during the run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigParse { .. } | CliError::Threads(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub cli_version: String,
    pub library_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: ToolInfo,
    pub study: StudyKind,
    pub config: ExperimentConfig,
    pub results: Value,
    pub solver_stats: Vec<StatsSummary>,
    pub threads: usize,
    pub outputs: Vec<String>,
}

/// Applies `ISAACS_FD_THREADS` to the global rayon pool, if set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Threads(format!("expected a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Threads(e.to_string()))
}

fn format_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Loads the config at `config_path` and runs `kind`. The output directory
/// is `out`, else the config's `output`, else the current directory.
pub fn run(kind: StudyKind, config_path: &Path, out: Option<&Path>) -> Result<Manifest, CliError> {
    let config = load_config(config_path)?;
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    run_config(kind, config, &out_dir)
}

pub fn run_config(kind: StudyKind, config: ExperimentConfig, out_dir: &Path) -> Result<Manifest, CliError> {
    let config = config.resolve(kind)?;
    let output = run_study(&config)?;

    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let csv_name = format!("{}.csv", kind.name());
    let csv_path = out_dir.join(&csv_name);
    let mut writer = csv::Writer::from_path(&csv_path)?;
    writer.write_record(&output.header)?;
    for row in &output.rows {
        writer.write_record(row.iter().map(|&v| format_cell(v)))?;
    }
    writer.flush().map_err(io_err(&csv_path))?;

    let manifest = Manifest {
        tool: ToolInfo {
            name: env!("CARGO_PKG_NAME").into(),
            cli_version: env!("CARGO_PKG_VERSION").into(),
            library_version: isaacs_fd::VERSION.into(),
        },
        study: kind,
        config,
        results: output.results,
        solver_stats: output.stats,
        threads: rayon::current_num_threads(),
        outputs: vec![csv_name, "manifest.json".into()],
    };
    let manifest_path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text + "\n").map_err(io_err(&manifest_path))?;
    Ok(manifest)
}
