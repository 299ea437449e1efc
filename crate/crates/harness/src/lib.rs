//! Scenario runner, metrics engine and live command endpoint for the
//! endonav simulator.

pub mod metrics;
pub mod protocol;
pub mod report;
pub mod rig;
pub mod run;
pub mod scenario;
pub mod server;
pub mod session;
pub mod study;
pub mod telemetry;

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("scenario aborted at tick {tick}: {cause} (artifacts in {})", dir.display())]
    ScenarioAborted { tick: u64, cause: String, dir: PathBuf },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("telemetry line {line}: {message}")]
    Telemetry { line: usize, message: String },
    #[error("image output: {0}")]
    Image(String),
    #[error(transparent)]
    Sim(#[from] endonav::sim::SimError),
    #[error(transparent)]
    Workspace(#[from] endonav::workspace::WorkspaceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
