//! Shared pieces of detector training: alphabet selection, training
//! errors, the training summary and the on-disk reference envelope.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::empirical::MeasureError;
use crate::model_free::ModelFreeReference;
use crate::mmp::MmpReference;
use crate::quantizer::{self, Alphabet, QuantizerError};
use crate::spatial::SubnetReference;
use crate::trace::TraceError;
use crate::window::WindowDetector;

/// Smoothing floor applied to reference probabilities.
pub const DEFAULT_EPSILON: f64 = 1e-4;
/// Training must supply at least this many samples per symbol.
pub const DEFAULT_MIN_PER_SYMBOL: usize = 10;

#[derive(Debug, Error)]
pub enum ThresholdError {
    #[error("beta must lie in (0, 1], got {0}")]
    InvalidBeta(f64),
    #[error("window length {n} too small, need at least {min}")]
    InvalidWindow { n: usize, min: usize },
    #[error("alphabet size {0} too small")]
    InvalidAlphabetSize(usize),
}

pub(crate) fn check_beta(beta: f64) -> Result<(), ThresholdError> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(ThresholdError::InvalidBeta(beta))
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("insufficient training data: {have} usable samples, need at least {need}")]
    InsufficientTraining { have: usize, need: usize },
    #[error("training needs a single stream, trace has {0}; select one node")]
    MultipleStreams(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// How the training alphabet is constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AlphabetChoice {
    /// Empirical `j/K` quantiles of the training values.
    #[default]
    Quantile,
    /// Equal-width bins between `lo` and `hi`.
    Uniform { lo: f64, hi: f64 },
    /// Explicit edges; the requested `K` is ignored.
    Edges { edges: Vec<f64> },
}

impl AlphabetChoice {
    pub fn build(&self, values: &[f64], k: usize) -> Result<Alphabet, QuantizerError> {
        match self {
            AlphabetChoice::Quantile => quantizer::build_quantile_alphabet_from_values(values, k),
            AlphabetChoice::Uniform { lo, hi } => quantizer::build_uniform_alphabet(*lo, *hi, k),
            AlphabetChoice::Edges { edges } => Alphabet::from_edges(edges.clone()),
        }
    }
}

impl std::str::FromStr for AlphabetChoice {
    type Err = String;

    /// `quantile`, `uniform:LO:HI` or `edges:E1,E2,...`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad number '{t}'"));
        match s.split_once(':') {
            None if s == "quantile" => Ok(AlphabetChoice::Quantile),
            Some(("uniform", rest)) => {
                let (lo, hi) = rest.split_once(':').ok_or("expected uniform:LO:HI")?;
                Ok(AlphabetChoice::Uniform { lo: num(lo)?, hi: num(hi)? })
            }
            Some(("edges", rest)) => Ok(AlphabetChoice::Edges {
                edges: rest.split(',').map(num).collect::<Result<_, _>>()?,
            }),
            _ => Err(format!("unknown alphabet '{s}'")),
        }
    }
}

/// What training observed, for operators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingSummary {
    pub edges: Vec<f64>,
    pub requested_k: usize,
    pub effective_k: usize,
    pub training_samples: usize,
    /// Symbols (or states) never seen in training.
    pub unseen_symbols: usize,
    pub threshold: f64,
}

impl fmt::Display for TrainingSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "alphabet edges: {:?}", self.edges)?;
        write!(f, "effective K: {}", self.effective_k)?;
        if self.effective_k != self.requested_k {
            write!(f, " (requested {}, repeated quantiles merged)", self.requested_k)?;
        }
        writeln!(f)?;
        writeln!(f, "training samples: {}", self.training_samples)?;
        writeln!(f, "unseen symbols: {}", self.unseen_symbols)?;
        write!(f, "threshold eta: {:.6} nats", self.threshold)
    }
}

/// A trained reference of any detector kind, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    ModelFree(ModelFreeReference),
    Mmp(MmpReference),
    Subnet(SubnetReference),
}

#[derive(Debug, Error)]
pub enum ReferenceIoError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid reference file: {0}")]
    Format(String),
}

impl Reference {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Reference::ModelFree(r) => r.validate(),
            Reference::Mmp(r) => r.validate(),
            Reference::Subnet(r) => r.validate(),
        }
    }

    pub fn detector(&self) -> &dyn WindowDetector {
        match self {
            Reference::ModelFree(r) => &r.detector,
            Reference::Mmp(r) => &r.detector,
            Reference::Subnet(r) => r.detector.as_window_detector(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reference serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ReferenceIoError> {
        let r: Reference = serde_json::from_str(text).map_err(|e| ReferenceIoError::Format(e.to_string()))?;
        r.validate().map_err(ReferenceIoError::Format)?;
        Ok(r)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ReferenceIoError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|source| ReferenceIoError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReferenceIoError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ReferenceIoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Reference::from_json(&text)
    }
}
