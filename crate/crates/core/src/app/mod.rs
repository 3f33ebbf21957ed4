//! Command orchestration behind the `resnls` binary.

mod commands;
mod config;
mod manifest;

pub use commands::{
    cmd_backtest, cmd_evaluate, cmd_gradcheck, cmd_sweep, cmd_train, load_series, model_path, SweepRow,
};
pub use config::{RunConfig, ENV_PREFIX, SYNTHETIC_INSTRUMENT};
pub use manifest::{sha256_file, Artifact, RunManifest};

use crate::error::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_GRADCHECK: i32 = 5;
pub const EXIT_INTERNAL: i32 = 70;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Data(_) | Error::Io { .. } | Error::Load(_) | Error::Incompatible(_) => EXIT_DATA,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Dimension { .. } | Error::Contract(_) | Error::Domain(_) => EXIT_INTERNAL,
    }
}

/// One JSON object for the diagnostic stream.
pub fn error_json(err: &Error) -> String {
    serde_json::json!({
        "error": err.kind(),
        "message": err.to_string(),
        "exit_code": exit_code(err),
    })
    .to_string()
}
