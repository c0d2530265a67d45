//! Batch front end for `hamflow`: named experiments driven by TOML
//! configuration files, emitting CSV tables and a JSON run manifest.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{Context, ExperimentConfig, Numeric};
pub use experiments::{find, Experiment, Outcome, REGISTRY};
pub use output::{Cell, Table};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(hamflow::Error),
    #[error("{0}")]
    Runtime(hamflow::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 0 is success; solver failures exit with 2, everything else with 1.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Solver(_) => 2,
            _ => 1,
        }
    }
}

impl From<hamflow::Error> for CliError {
    fn from(e: hamflow::Error) -> Self {
        if e.is_solver_failure() {
            CliError::Solver(e)
        } else {
            CliError::Runtime(e)
        }
    }
}

/// Overrides given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<String>,
}

/// Files written by a successful run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub experiment: String,
    pub files: Vec<PathBuf>,
    pub outcome: Outcome,
}

/// Parse `path`, run the experiment and write its tables and manifest.
/// Nothing is written unless the experiment succeeds.
pub fn run_file(path: &Path, overrides: &Overrides) -> Result<RunReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = overrides.seed {
        cfg.numeric.seed = Some(seed);
    }
    if let Some(out) = &overrides.out {
        cfg.output = Some(out.clone());
    }
    let exp = find(&cfg.experiment).ok_or_else(|| CliError::Config(format!("unknown experiment '{}'", cfg.experiment)))?;
    let outcome = exp.run(&cfg.context())?;
    let prefix = cfg.output_prefix();
    let files = output::write_run(&prefix, &cfg, Some(path), &outcome)?;
    Ok(RunReport {
        experiment: cfg.experiment.clone(),
        files,
        outcome,
    })
}
