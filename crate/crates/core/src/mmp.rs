//! Markov modulated process detector.
//!
//! Observation ranges of the modulating states are disjoint, so each
//! quantized raw sample identifies its state and the chain is fully
//! observed. Training estimates the transition matrix `P`; a window of `n`
//! raw samples is anomalous when the rate of its pair measure under `P`
//! reaches
//!
//! ```text
//! eta = (K^2 ln n + ln(1 / beta)) / (n - 1)
//! ```

use serde::{Deserialize, Serialize};

use crate::empirical::{self, Divergence, MeasureError, TransitionMatrix};
use crate::quantizer::{Alphabet, Symbol};
use crate::reference::{
    check_beta, AlphabetChoice, ThresholdError, TrainError, TrainingSummary, DEFAULT_EPSILON,
    DEFAULT_MIN_PER_SYMBOL,
};
use crate::trace::{self, TimeOfDayInterval, TrafficTrace};
use crate::window::{self, DetectError, DetectorKind, SymbolStream, WindowDetector, WindowReport};

pub const DEFAULT_WINDOW_N: usize = 500;

/// `eta = (K^2 ln n + ln(1 / beta)) / (n - 1)`, in nats. With `K = 1`
/// there is a single pair type and the polynomial term is dropped.
pub fn markov_threshold(n: usize, k: usize, beta: f64) -> Result<f64, ThresholdError> {
    if n < 2 {
        return Err(ThresholdError::InvalidWindow { n, min: 2 });
    }
    if k < 1 {
        return Err(ThresholdError::InvalidAlphabetSize(k));
    }
    check_beta(beta)?;
    let k2 = if k == 1 { 0.0 } else { (k * k) as f64 };
    Ok((k2 * (n as f64).ln() + (1.0 / beta).ln()) / (n - 1) as f64)
}

/// Row-normalized transition counts from one sequence, see
/// [`estimate_transition_matrix_runs`].
pub fn estimate_transition_matrix(seq: &[Symbol], k: usize, epsilon: f64) -> Result<TransitionMatrix, MeasureError> {
    if seq.len() < 2 {
        return Err(MeasureError::SequenceTooShort { len: seq.len(), need: 2 });
    }
    estimate_transition_matrix_runs(std::iter::once(seq), k, epsilon)
}

/// Estimates `P(i, j) = count(i -> j) / count(i -> .)` over several runs.
///
/// Entries are floored at `epsilon` and rows renormalized; states with no
/// outgoing transition get the uniform row.
pub fn estimate_transition_matrix_runs<'a>(
    runs: impl IntoIterator<Item = &'a [Symbol]>,
    k: usize,
    epsilon: f64,
) -> Result<TransitionMatrix, MeasureError> {
    let counts = pooled_counts(runs, k)?;
    if counts.iter().all(|&c| c == 0) {
        return Err(MeasureError::SequenceTooShort { len: 1, need: 2 });
    }
    Ok(smoothed_matrix(&counts, k, epsilon))
}

fn pooled_counts<'a>(runs: impl IntoIterator<Item = &'a [Symbol]>, k: usize) -> Result<Vec<usize>, MeasureError> {
    let mut counts = vec![0usize; k * k];
    for run in runs {
        for (c, n) in counts.iter_mut().zip(empirical::transition_counts(run, k)?) {
            *c += n;
        }
    }
    Ok(counts)
}

fn smoothed_matrix(counts: &[usize], k: usize, epsilon: f64) -> TransitionMatrix {
    let rows = counts
        .chunks(k)
        .map(|row| {
            let total: usize = row.iter().sum();
            if total == 0 {
                return vec![1.0 / k as f64; k];
            }
            let raised: Vec<f64> = row.iter().map(|&c| (c as f64 / total as f64).max(epsilon)).collect();
            let s: f64 = raised.iter().sum();
            raised.into_iter().map(|p| p / s).collect()
        })
        .collect();
    TransitionMatrix::from_rows(rows).expect("normalized rows are stochastic")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmpDetector {
    #[serde(rename = "P")]
    pub transition: TransitionMatrix,
    pub window_n: usize,
    pub beta: f64,
}

impl MmpDetector {
    pub fn fit<'a>(
        runs: impl IntoIterator<Item = &'a [Symbol]>,
        k: usize,
        window_n: usize,
        beta: f64,
        epsilon: f64,
    ) -> Result<Self, TrainError> {
        let transition = estimate_transition_matrix_runs(runs, k, epsilon)?;
        let d = MmpDetector { transition, window_n, beta };
        d.validate().map_err(TrainError::InvalidConfig)?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.window_n < 2 {
            return Err(format!("window_n must be >= 2, got {}", self.window_n));
        }
        markov_threshold(self.window_n, self.transition.k(), self.beta).map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn eta(&self) -> f64 {
        markov_threshold(self.window_n, self.transition.k(), self.beta).expect("validated reference")
    }
}

impl WindowDetector for MmpDetector {
    fn kind(&self) -> DetectorKind {
        DetectorKind::Mmp
    }

    fn window_n(&self) -> usize {
        self.window_n
    }

    fn alphabet_size(&self) -> usize {
        self.transition.k()
    }

    fn threshold(&self) -> f64 {
        self.eta()
    }

    fn statistic(&self, window: &[Symbol]) -> Result<Divergence, MeasureError> {
        let q = empirical::pair_measure_of(window, self.transition.k())?;
        empirical::markov_rate(&q, &self.transition)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmpReference {
    pub alphabet: Alphabet,
    #[serde(flatten)]
    pub detector: MmpDetector,
    pub interval: TimeOfDayInterval,
}

impl MmpReference {
    pub fn validate(&self) -> Result<(), String> {
        self.detector.validate()?;
        if self.detector.transition.k() != self.alphabet.size() {
            return Err(format!(
                "P is {0}x{0} but the alphabet has {1} symbols",
                self.detector.transition.k(),
                self.alphabet.size()
            ));
        }
        self.interval.validate().map_err(|e| e.to_string())
    }

    pub fn eta(&self) -> f64 {
        self.detector.eta()
    }

    pub fn symbolize(&self, trace: &TrafficTrace) -> Result<SymbolStream, trace::TraceError> {
        let seg = trace::segment_by_time_of_day(trace, &self.interval)?;
        Ok(SymbolStream::from_trace(&seg, &self.alphabet))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmpConfig {
    pub k: usize,
    pub alphabet: AlphabetChoice,
    pub window_n: usize,
    pub beta: f64,
    pub interval: TimeOfDayInterval,
    pub epsilon: f64,
    /// Training needs at least `min_per_symbol * K^2` transitions.
    pub min_per_symbol: usize,
}

impl Default for MmpConfig {
    fn default() -> Self {
        MmpConfig {
            k: crate::model_free::DEFAULT_K,
            alphabet: AlphabetChoice::Quantile,
            window_n: DEFAULT_WINDOW_N,
            beta: 0.01,
            interval: TimeOfDayInterval::whole_day(),
            epsilon: DEFAULT_EPSILON,
            min_per_symbol: DEFAULT_MIN_PER_SYMBOL,
        }
    }
}

pub fn train_mmp(trace: &TrafficTrace, cfg: &MmpConfig) -> Result<(MmpReference, TrainingSummary), TrainError> {
    if !trace.is_single_stream() {
        return Err(TrainError::MultipleStreams(trace.streams().len()));
    }
    if !(cfg.epsilon >= 0.0 && cfg.epsilon < 1.0) {
        return Err(TrainError::InvalidConfig(format!("epsilon {} outside [0, 1)", cfg.epsilon)));
    }
    markov_threshold(cfg.window_n.max(2), cfg.k.max(1), cfg.beta)?;
    let seg = trace::segment_by_time_of_day(trace, &cfg.interval)?;
    let transitions: usize = seg.runs().iter().map(|r| r.len().saturating_sub(1)).sum();
    let need = cfg.min_per_symbol * cfg.k * cfg.k;
    if transitions < need {
        return Err(TrainError::InsufficientTraining { have: transitions, need });
    }
    let alphabet = cfg.alphabet.build(&seg.values(), cfg.k)?;
    let stream = SymbolStream::from_trace(&seg, &alphabet);
    let k = alphabet.size();
    let detector = MmpDetector::fit(stream.run_slices(), k, cfg.window_n, cfg.beta, cfg.epsilon)?;
    let counts = pooled_counts(stream.run_slices(), k)?;
    let unvisited = counts.chunks(k).filter(|r| r.iter().all(|&c| c == 0)).count();
    let summary = TrainingSummary {
        edges: alphabet.edges().to_vec(),
        requested_k: cfg.k,
        effective_k: k,
        training_samples: seg.len(),
        unseen_symbols: unvisited,
        threshold: detector.eta(),
    };
    Ok((MmpReference { alphabet, detector, interval: cfg.interval.clone() }, summary))
}

/// Scores one window; bounds are sample indices as for the model-free case.
pub fn detect_window_mmp(reference: &MmpReference, window: &[Symbol]) -> Result<WindowReport, DetectError> {
    let (stat, eta) = reference.detector.score(window)?;
    Ok(WindowReport::new(0, window.len() as i64, stat, eta, DetectorKind::Mmp))
}

/// Slides windows of `window_n` raw samples, advanced by `stride` samples.
pub fn detect_stream_mmp(
    reference: &MmpReference,
    trace: &TrafficTrace,
    stride: usize,
) -> Result<Vec<WindowReport>, DetectError> {
    if !trace.is_single_stream() {
        return Err(DetectError::MultipleStreams(trace.streams().len()));
    }
    let stream = reference.symbolize(trace)?;
    window::detect_stream(&reference.detector, &stream, stride)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn matrix(rows: &[&[f64]]) -> TransitionMatrix {
        TransitionMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let eta = markov_threshold(500, 4, 0.01).unwrap();
        assert_abs_diff_eq!(eta, (16.0 * 500f64.ln() + 100f64.ln()) / 499.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eta, 0.20848, epsilon = 1e-4);
        assert_abs_diff_eq!(markov_threshold(100, 1, 0.05).unwrap(), 20f64.ln() / 99.0, epsilon = 1e-15);
        assert_abs_diff_eq!(markov_threshold(100, 3, 1.0).unwrap(), 9.0 * 100f64.ln() / 99.0, epsilon = 1e-15);
        assert!(markov_threshold(1, 3, 0.1).is_err());
        assert!(markov_threshold(10, 3, 2.0).is_err());
    }

    #[test]
    fn estimate_examples() {
        let p = estimate_transition_matrix(&[0, 1, 0, 1, 0], 2, 0.0).unwrap();
        assert_eq!(p.rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let p = estimate_transition_matrix(&[0, 0, 0, 0], 2, 0.0).unwrap();
        assert_eq!(p.rows(), vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        assert!(matches!(
            estimate_transition_matrix(&[1], 2, 0.0),
            Err(MeasureError::SequenceTooShort { .. })
        ));
        let p = estimate_transition_matrix(&[0, 0, 0, 0], 2, 1e-4).unwrap();
        assert!(p.get(0, 1) > 0.0);
        assert_abs_diff_eq!(p.row(0).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn runs_do_not_bridge() {
        let a: &[usize] = &[0, 0];
        let b: &[usize] = &[1, 1];
        let p = estimate_transition_matrix_runs([a, b], 2, 0.0).unwrap();
        assert_eq!(p.rows(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    fn reference(p: TransitionMatrix, n: usize) -> MmpReference {
        let k = p.k();
        MmpReference {
            alphabet: crate::quantizer::build_uniform_alphabet(0.0, k as f64, k).unwrap(),
            detector: MmpDetector { transition: p, window_n: n, beta: 0.01 },
            interval: TimeOfDayInterval::whole_day(),
        }
    }

    #[test]
    fn constant_window_rate() {
        let r = reference(matrix(&[&[0.5, 0.5], &[0.3, 0.7]]), 500);
        let rep = detect_window_mmp(&r, &[0; 500]).unwrap();
        assert_abs_diff_eq!(rep.statistic.value(), 2f64.ln(), epsilon = 1e-12);
        assert!(rep.eta < 2f64.ln());
        assert!(rep.is_anomaly);
        assert!(matches!(
            detect_window_mmp(&r, &[0; 10]),
            Err(DetectError::WindowLengthMismatch { got: 10, expected: 500 })
        ));
    }

    #[test]
    fn floored_transition_gives_large_finite_statistic() {
        let p = estimate_transition_matrix(&[0, 0, 0, 1, 1, 1, 0, 0, 0, 1, 1, 1], 3, 1e-4).unwrap();
        // state 2 never visited in training: uniform row
        assert_eq!(p.row(2), &[1.0 / 3.0; 3]);
        let r = reference(p.clone(), 6);
        // 0 -> 2 has floored probability
        let rep = detect_window_mmp(&r, &[0, 2, 2, 0, 0, 0]).unwrap();
        assert!(!rep.statistic.is_infinite());
        let q = empirical::pair_measure_of(&[0, 2, 2, 0, 0, 0], 3).unwrap();
        let oracle = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter(|&(i, j)| q.get(i, j) > 0.0)
            .map(|(i, j)| {
                let qi: f64 = (0..3).map(|c| q.get(i, c)).sum();
                q.get(i, j) * (q.get(i, j) / qi / p.get(i, j)).ln()
            })
            .sum::<f64>();
        assert_abs_diff_eq!(rep.statistic.value(), oracle, epsilon = 1e-12);
        assert!(rep.statistic.value() > 1.0);
    }

    #[test]
    fn reference_json_uses_p() {
        let r = reference(matrix(&[&[0.9, 0.1], &[0.5, 0.5]]), 50);
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["P"], serde_json::json!([[0.9, 0.1], [0.5, 0.5]]));
        for key in ["alphabet", "window_n", "beta", "interval"] {
            assert!(v.get(key).is_some());
        }
        assert_eq!(serde_json::from_value::<MmpReference>(v).unwrap(), r);
    }

    proptest! {
        #[test]
        fn estimated_rows_are_stochastic(
            seq in prop::collection::vec(0usize..5, 2..200),
            eps in prop::sample::select(vec![0.0, 1e-4, 0.05]),
        ) {
            let p = estimate_transition_matrix(&seq, 5, eps).unwrap();
            for i in 0..5 {
                prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }

        #[test]
        fn self_estimate_has_zero_rate(seq in prop::collection::vec(0usize..4, 2..200)) {
            let p = estimate_transition_matrix(&seq, 4, 0.0).unwrap();
            let q = empirical::pair_measure_of(&seq, 4).unwrap();
            prop_assert!(empirical::markov_rate(&q, &p).unwrap().value() <= 1e-9);
        }
    }
}
