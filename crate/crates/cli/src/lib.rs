//! Config-driven experiment runner for the function-space Langevin sampler.

pub mod config;
pub mod error;
pub mod render;
pub mod run;
pub mod sweep;

use std::path::Path;

use funclangevin::diagnostics::BoundParams;

pub use config::ExperimentConfig;
pub use error::CliError;

/// Reads bound parameters from a TOML file whose keys are the
/// [`BoundParams`] fields.
pub fn load_bound_params(path: &Path) -> Result<BoundParams, CliError> {
    let text = std::fs::read_to_string(path).map_err(error::io_err(path))?;
    let de = toml::Deserializer::parse(&text).map_err(|e| CliError::Config {
        path: "<document>".into(),
        message: e.message().to_string(),
    })?;
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
        path: e.path().to_string(),
        message: e.into_inner().message().to_string(),
    })
}
