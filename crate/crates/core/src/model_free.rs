//! Model-free temporal detector.
//!
//! Training aggregates an anomaly-free trace into time buckets, quantizes
//! the bucket values and keeps their smoothed type `mu` as the reference
//! law. A detection window of `n` buckets is anomalous when
//! `D(type || mu) >= eta`, with `eta` chosen from the method-of-types bound
//!
//! ```text
//! P( D(E_n || mu) >= eta ) <= (n + 1)^K exp(-n eta)
//! ```
//!
//! so that the per-window false-alarm probability stays below `beta`.

use serde::{Deserialize, Serialize};

use crate::empirical::{self, Divergence, EmpiricalMeasure, MeasureError};
use crate::quantizer::{Alphabet, Symbol};
use crate::reference::{
    check_beta, AlphabetChoice, ThresholdError, TrainError, TrainingSummary, DEFAULT_EPSILON,
    DEFAULT_MIN_PER_SYMBOL,
};
use crate::trace::{self, BucketConfig, TimeOfDayInterval, TrafficTrace, Unit};
use crate::window::{self, DetectError, DetectorKind, SymbolStream, WindowDetector, WindowReport};

pub const DEFAULT_K: usize = 8;
pub const DEFAULT_WINDOW_N: usize = 100;

/// `eta = (K ln(n + 1) + ln(1 / beta)) / n`, in nats.
pub fn sanov_threshold(n: usize, k: usize, beta: f64) -> Result<f64, ThresholdError> {
    if n < 1 {
        return Err(ThresholdError::InvalidWindow { n, min: 1 });
    }
    if k < 2 {
        return Err(ThresholdError::InvalidAlphabetSize(k));
    }
    check_beta(beta)?;
    let n = n as f64;
    Ok((k as f64 * (n + 1.0).ln() + (1.0 / beta).ln()) / n)
}

/// Symbol-level part of the reference: the law `mu` and the test settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFreeDetector {
    pub mu: EmpiricalMeasure,
    pub window_n: usize,
    pub beta: f64,
}

impl ModelFreeDetector {
    /// Fits `mu` on symbol runs, applying the `epsilon` floor.
    pub fn fit<'a>(
        runs: impl IntoIterator<Item = &'a [Symbol]>,
        k: usize,
        window_n: usize,
        beta: f64,
        epsilon: f64,
    ) -> Result<Self, TrainError> {
        let mut counts = vec![0usize; k];
        for run in runs {
            for (c, n) in counts.iter_mut().zip(empirical::symbol_counts(run, k)?) {
                *c += n;
            }
        }
        let raw = EmpiricalMeasure::from_counts(&counts)?;
        let detector = ModelFreeDetector { mu: raw.floored(epsilon), window_n, beta };
        detector.validate().map_err(TrainError::InvalidConfig)?;
        Ok(detector)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.window_n < 2 {
            return Err(format!("window_n must be >= 2, got {}", self.window_n));
        }
        empirical::validate_pmf(self.mu.probs()).map_err(|e| e.to_string())?;
        if self.mu.probs().iter().any(|&p| p <= 0.0) {
            return Err("reference mu must be strictly positive".into());
        }
        sanov_threshold(self.window_n, self.mu.support_size(), self.beta).map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn eta(&self) -> f64 {
        sanov_threshold(self.window_n, self.mu.support_size(), self.beta).expect("validated reference")
    }
}

impl WindowDetector for ModelFreeDetector {
    fn kind(&self) -> DetectorKind {
        DetectorKind::ModelFree
    }

    fn window_n(&self) -> usize {
        self.window_n
    }

    fn alphabet_size(&self) -> usize {
        self.mu.support_size()
    }

    fn threshold(&self) -> f64 {
        self.eta()
    }

    fn statistic(&self, window: &[Symbol]) -> Result<Divergence, MeasureError> {
        let t = empirical::type_of(window, self.mu.support_size())?;
        empirical::kl_divergence(&t, &self.mu)
    }
}

/// Trained model-free reference for one stream and time-of-day interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFreeReference {
    pub alphabet: Alphabet,
    #[serde(flatten)]
    pub detector: ModelFreeDetector,
    pub bucket: BucketConfig,
    pub interval: TimeOfDayInterval,
    pub unit: Unit,
}

impl ModelFreeReference {
    pub fn validate(&self) -> Result<(), String> {
        self.detector.validate()?;
        if self.detector.mu.support_size() != self.alphabet.size() {
            return Err(format!(
                "mu has {} entries but the alphabet has {} symbols",
                self.detector.mu.support_size(),
                self.alphabet.size()
            ));
        }
        self.bucket.validate().map_err(|e| e.to_string())?;
        self.interval.validate().map_err(|e| e.to_string())
    }

    pub fn k(&self) -> usize {
        self.alphabet.size()
    }

    pub fn eta(&self) -> f64 {
        self.detector.eta()
    }

    /// Time-of-day segmentation, bucketing and quantization of `trace`.
    pub fn symbolize(&self, trace: &TrafficTrace) -> Result<SymbolStream, trace::TraceError> {
        let seg = trace::segment_by_time_of_day(trace, &self.interval)?;
        let buckets = trace::aggregate_buckets(&seg, &self.bucket)?;
        Ok(SymbolStream::from_trace(&buckets, &self.alphabet))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFreeConfig {
    pub k: usize,
    pub alphabet: AlphabetChoice,
    pub bucket: BucketConfig,
    pub window_n: usize,
    pub beta: f64,
    pub interval: TimeOfDayInterval,
    pub epsilon: f64,
    /// Training needs at least `min_per_symbol * K` buckets.
    pub min_per_symbol: usize,
}

impl Default for ModelFreeConfig {
    fn default() -> Self {
        ModelFreeConfig {
            k: DEFAULT_K,
            alphabet: AlphabetChoice::Quantile,
            bucket: BucketConfig::identity(),
            window_n: DEFAULT_WINDOW_N,
            beta: 0.01,
            interval: TimeOfDayInterval::whole_day(),
            epsilon: DEFAULT_EPSILON,
            min_per_symbol: DEFAULT_MIN_PER_SYMBOL,
        }
    }
}

pub fn train_model_free(
    trace: &TrafficTrace,
    cfg: &ModelFreeConfig,
) -> Result<(ModelFreeReference, TrainingSummary), TrainError> {
    if !trace.is_single_stream() {
        return Err(TrainError::MultipleStreams(trace.streams().len()));
    }
    if !(cfg.epsilon >= 0.0 && cfg.epsilon < 1.0) {
        return Err(TrainError::InvalidConfig(format!("epsilon {} outside [0, 1)", cfg.epsilon)));
    }
    sanov_threshold(cfg.window_n.max(2), cfg.k.max(2), cfg.beta)?;
    let seg = trace::segment_by_time_of_day(trace, &cfg.interval)?;
    let need = cfg.min_per_symbol * cfg.k;
    let buckets = match trace::aggregate_buckets(&seg, &cfg.bucket) {
        Ok(b) => b,
        Err(trace::TraceError::TraceTooShort { .. }) => {
            return Err(TrainError::InsufficientTraining { have: 0, need })
        }
        Err(e) => return Err(e.into()),
    };
    if buckets.len() < need {
        return Err(TrainError::InsufficientTraining { have: buckets.len(), need });
    }
    let alphabet = cfg.alphabet.build(&buckets.values(), cfg.k)?;
    let stream = SymbolStream::from_trace(&buckets, &alphabet);
    let detector = ModelFreeDetector::fit(
        std::iter::once(stream.symbols.as_slice()),
        alphabet.size(),
        cfg.window_n,
        cfg.beta,
        cfg.epsilon,
    )?;
    let counts = empirical::symbol_counts(&stream.symbols, alphabet.size())?;
    let summary = TrainingSummary {
        edges: alphabet.edges().to_vec(),
        requested_k: cfg.k,
        effective_k: alphabet.size(),
        training_samples: buckets.len(),
        unseen_symbols: counts.iter().filter(|&&c| c == 0).count(),
        threshold: detector.eta(),
    };
    let reference = ModelFreeReference {
        alphabet,
        detector,
        bucket: cfg.bucket,
        interval: cfg.interval.clone(),
        unit: trace.unit(),
    };
    Ok((reference, summary))
}

/// Scores one window of symbols. Window bounds are reported as sample
/// indices `[0, window_n)` since a bare symbol slice carries no time.
pub fn detect_window_mf(reference: &ModelFreeReference, window: &[Symbol]) -> Result<WindowReport, DetectError> {
    let (stat, eta) = reference.detector.score(window)?;
    Ok(WindowReport::new(0, window.len() as i64, stat, eta, DetectorKind::ModelFree))
}

/// Slides windows of `window_n` buckets, advanced by `stride` buckets.
pub fn detect_stream_mf(
    reference: &ModelFreeReference,
    trace: &TrafficTrace,
    stride: usize,
) -> Result<Vec<WindowReport>, DetectError> {
    if !trace.is_single_stream() {
        return Err(DetectError::MultipleStreams(trace.streams().len()));
    }
    let stream = match reference.symbolize(trace) {
        Ok(s) => s,
        Err(trace::TraceError::TraceTooShort { len, .. }) => {
            return Err(DetectError::TraceTooShort { window_n: reference.detector.window_n, longest: len })
        }
        Err(e) => return Err(e.into()),
    };
    window::detect_stream(&reference.detector, &stream, stride)
}
