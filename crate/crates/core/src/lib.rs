//! Traffic anomaly detection from deviations of empirical measures.
//!
//! Two detectors share one pipeline: a model-free detector compares the
//! type of a window of quantized buckets against a reference law with KL
//! divergence, and a model-based detector scores pair measures of raw
//! symbol windows against a trained Markov chain. Several streams can be
//! joined into a product alphabet and monitored together.

pub mod cli;
pub mod config;
pub mod empirical;
pub mod eval;
pub mod mmp;
pub mod model_free;
pub mod quantizer;
pub mod reference;
pub mod spatial;
pub mod synth;
pub mod trace;
pub mod window;

pub use empirical::{Divergence, EmpiricalMeasure, PairMeasure, TransitionMatrix};
pub use eval::{roc_sweep, score, Metrics, RocPoint};
pub use mmp::{markov_threshold, train_mmp, MmpConfig, MmpReference};
pub use model_free::{sanov_threshold, train_model_free, ModelFreeConfig, ModelFreeReference};
pub use quantizer::{Alphabet, Symbol};
pub use reference::{AlphabetChoice, Reference, TrainingSummary};
pub use spatial::{SubnetConfig, SubnetReference, SubnetSpec};
pub use trace::{BucketConfig, Role, StreamKey, TimeOfDayInterval, TraceSample, TrafficTrace, Unit};
pub use window::{DetectorKind, WindowReport};
