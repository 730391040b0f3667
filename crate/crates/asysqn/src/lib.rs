//! File formats, experiment configs and the run driver around
//! `asysqn-core`.

pub mod config;
pub mod experiment;
pub mod io;
pub mod threads;

pub use config::{parse_config, ExperimentSpec};
pub use experiment::{report, run_experiment, sweep, write_reference};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("`{key}` expects {expected}, got `{got}`")]
    Type { key: String, expected: String, got: String },
    #[error("no dataset: set data.path or data.synthetic")]
    DatasetMissing,
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] asysqn_core::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        match e.position() {
            Some(p) => CliError::Parse {
                line: p.line() as usize,
                msg: e.to_string(),
            },
            None => CliError::Io(e.to_string()),
        }
    }
}
