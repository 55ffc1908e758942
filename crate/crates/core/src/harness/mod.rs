//! Experiment configuration, the accuracy metric, run directories and the
//! command implementations behind the `mlrp` binary.

pub mod accuracy;
pub mod commands;
pub mod config;
pub mod logs;

use std::path::PathBuf;

pub use accuracy::{evaluate_accuracy, AccuracyReport, EvalGrid};
pub use commands::{Runtime, RunKind, RunSummary, Target};
pub use config::ExperimentConfig;

use crate::diffnet::DiffnetError;
use crate::fdsolver::FdError;
use crate::gridmodel::ModelError;
use crate::meta::MetaError;

/// Environment variable capping worker threads; 0 selects single-threaded
/// deterministic mode.
pub const THREADS_ENV: &str = "MLRP_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fd(#[from] FdError),
    #[error(transparent)]
    Network(#[from] DiffnetError),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error("{0}")]
    Invariant(String),
}

impl HarnessError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Usage(_) => "usage",
            Self::Io { .. } => "io",
            Self::Model(_) => "model",
            Self::Fd(_) => "fd",
            Self::Network(_) => "network",
            Self::Meta(_) => "meta",
            Self::Invariant(_) => "invariant",
        }
    }

    /// `error: kind=<kind> msg=<message>` on a single line.
    pub fn one_line(&self) -> String {
        let msg: String = self.to_string().chars().map(|c| if c.is_control() { ' ' } else { c }).collect();
        format!("error: kind={} msg={msg}", self.kind())
    }
}

/// Worker-thread setting derived from [`THREADS_ENV`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Threads {
    /// `None` keeps the rayon default.
    pub count: Option<usize>,
    pub deterministic: bool,
}

impl Threads {
    pub fn parse(value: Option<&str>) -> Result<Self, HarnessError> {
        match value.map(str::trim) {
            None | Some("") => Ok(Self { count: None, deterministic: false }),
            Some(v) => match v.parse::<usize>() {
                Ok(0) => Ok(Self { count: Some(1), deterministic: true }),
                Ok(n) => Ok(Self { count: Some(n), deterministic: false }),
                Err(_) => Err(HarnessError::Config(format!("{THREADS_ENV}={v:?} is not a thread count"))),
            },
        }
    }

    pub fn from_env() -> Result<Self, HarnessError> {
        Self::parse(std::env::var(THREADS_ENV).ok().as_deref())
    }

    pub fn pool(&self) -> Result<rayon::ThreadPool, HarnessError> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.count {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| HarnessError::Config(format!("thread pool: {e}")))
    }
}
