//! TOML pipeline configuration.
//!
//! Each section mirrors the flags of the subcommand with the same name;
//! flags given on the command line win over the file. Relative paths are
//! taken relative to the working directory.
//!
//! ```toml
//! seed = 7
//!
//! [generate]
//! scenario = "scenario.json"
//! trace = "live.csv"
//! labels = "labels.csv"
//!
//! [train]
//! mode = "model-free"
//! trace = "clean.csv"
//! k = 8
//! window = 100
//! beta = 0.01
//! out = "ref.json"
//! ```

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::cli::{DetectArgs, EvaluateArgs, GenerateArgs, PlotDataArgs, TrainArgs};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Fallback seed for `generate`.
    pub seed: Option<u64>,
    pub generate: Option<GenerateArgs>,
    pub train: Option<TrainArgs>,
    pub detect: Option<DetectArgs>,
    pub evaluate: Option<EvaluateArgs>,
    pub plot_data: Option<PlotDataArgs>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }
}
