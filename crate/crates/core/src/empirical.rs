//! Empirical measures (types), pair measures, KL divergence and the
//! large-deviations rate function of a Markov pair measure.
//!
//! All divergences are in nats. An observation that the reference assigns
//! zero probability yields [`Divergence::Infinite`], which downstream
//! detectors treat as a certain anomaly rather than an error.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantizer::Symbol;

/// Tolerance for probability vectors and stochastic rows summing to one.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("empty symbol sequence")]
    EmptySequence,
    #[error("sequence of length {len} is too short, need at least {need}")]
    SequenceTooShort { len: usize, need: usize },
    #[error("symbol {symbol} out of range for alphabet of size {k}")]
    SymbolOutOfRange { symbol: Symbol, k: usize },
    #[error("support mismatch: {left} vs {right} symbols")]
    SupportMismatch { left: usize, right: usize },
    #[error("dimension mismatch: {left} vs {right} states")]
    DimensionMismatch { left: usize, right: usize },
    #[error("row {row} sums to {sum}, not 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("invalid probability vector: {0}")]
    InvalidPmf(String),
}

pub type Result<T> = std::result::Result<T, MeasureError>;

/// Outcome of a divergence computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Divergence {
    Finite(f64),
    /// Mass observed where the reference has none.
    Infinite,
}

impl Divergence {
    pub fn value(&self) -> f64 {
        match self {
            Divergence::Finite(v) => *v,
            Divergence::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Divergence::Infinite)
    }

    /// Hoeffding rule: anomalous iff the divergence reaches the threshold.
    pub fn exceeds(&self, threshold: f64) -> bool {
        match self {
            Divergence::Finite(v) => *v >= threshold,
            Divergence::Infinite => true,
        }
    }

    pub fn from_value(v: f64) -> Self {
        if v.is_infinite() {
            Divergence::Infinite
        } else {
            Divergence::Finite(v)
        }
    }
}

impl PartialOrd for Divergence {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.value().partial_cmp(&other.value())
    }
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Divergence::Finite(v) => write!(f, "{v}"),
            Divergence::Infinite => f.write_str("inf"),
        }
    }
}

/// A probability vector over `0..K`, optionally the type of an `n`-sample.
///
/// Types produced by [`type_of`] have every entry a multiple of
/// `1/sample_count`; reference measures built with
/// [`EmpiricalMeasure::from_probs`] need not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    probs: Vec<f64>,
    sample_count: usize,
}

impl EmpiricalMeasure {
    pub fn from_probs(probs: Vec<f64>, sample_count: usize) -> Result<Self> {
        validate_pmf(&probs)?;
        Ok(EmpiricalMeasure { probs, sample_count })
    }

    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(MeasureError::EmptySequence);
        }
        let probs = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Ok(EmpiricalMeasure { probs, sample_count: n })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support_size(&self) -> usize {
        self.probs.len()
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Raises every entry to at least `epsilon`, then renormalizes.
    pub fn floored(&self, epsilon: f64) -> EmpiricalMeasure {
        let raised: Vec<f64> = self.probs.iter().map(|&p| p.max(epsilon)).collect();
        let total: f64 = raised.iter().sum();
        EmpiricalMeasure {
            probs: raised.into_iter().map(|p| p / total).collect(),
            sample_count: self.sample_count,
        }
    }
}

pub(crate) fn validate_pmf(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(MeasureError::InvalidPmf("no entries".into()));
    }
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(MeasureError::InvalidPmf("entries must be finite and non-negative".into()));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(MeasureError::InvalidPmf(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// Empirical distribution of consecutive symbol pairs, row-major `K x K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeasure {
    k: usize,
    probs: Vec<f64>,
    transitions: usize,
}

impl PairMeasure {
    /// Builds a pair measure from transition counts (row-major `k x k`).
    pub fn from_counts(k: usize, counts: &[usize]) -> Result<Self> {
        if counts.len() != k * k {
            return Err(MeasureError::DimensionMismatch { left: k * k, right: counts.len() });
        }
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(MeasureError::SequenceTooShort { len: 1, need: 2 });
        }
        let probs = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Ok(PairMeasure { k, probs, transitions: n })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn transitions(&self) -> usize {
        self.transitions
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.k + j]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        self.probs.chunks(self.k).map(|r| r.iter().sum()).collect()
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        (0..self.k).map(|j| (0..self.k).map(|i| self.get(i, j)).sum()).collect()
    }
}

/// Row-stochastic `K x K` matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TransitionMatrix {
    k: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(MeasureError::DimensionMismatch { left: 0, right: 0 });
        }
        if let Some(r) = rows.iter().find(|r| r.len() != k) {
            return Err(MeasureError::DimensionMismatch { left: k, right: r.len() });
        }
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(MeasureError::NotStochastic { row: i, sum: f64::NAN });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(MeasureError::NotStochastic { row: i, sum });
            }
        }
        Ok(TransitionMatrix { k, data: rows.concat() })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.k).map(<[f64]>::to_vec).collect()
    }

    /// Stationary distribution by power iteration; `None` if it does not
    /// settle (periodic or reducible chains may not).
    pub fn stationary(&self) -> Option<Vec<f64>> {
        let k = self.k;
        let mut pi = vec![1.0 / k as f64; k];
        for _ in 0..100_000 {
            let mut next = vec![0.0; k];
            for i in 0..k {
                for j in 0..k {
                    next[j] += pi[i] * self.get(i, j);
                }
            }
            let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if delta < 1e-15 {
                return Some(pi);
            }
        }
        None
    }
}

impl TryFrom<Vec<Vec<f64>>> for TransitionMatrix {
    type Error = MeasureError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        TransitionMatrix::from_rows(rows)
    }
}

impl From<TransitionMatrix> for Vec<Vec<f64>> {
    fn from(m: TransitionMatrix) -> Self {
        m.rows()
    }
}

fn check_symbols(seq: &[Symbol], k: usize) -> Result<()> {
    match seq.iter().find(|&&s| s >= k) {
        Some(&symbol) => Err(MeasureError::SymbolOutOfRange { symbol, k }),
        None => Ok(()),
    }
}

pub fn symbol_counts(seq: &[Symbol], k: usize) -> Result<Vec<usize>> {
    check_symbols(seq, k)?;
    let mut counts = vec![0usize; k];
    for &s in seq {
        counts[s] += 1;
    }
    Ok(counts)
}

pub fn transition_counts(seq: &[Symbol], k: usize) -> Result<Vec<usize>> {
    check_symbols(seq, k)?;
    let mut counts = vec![0usize; k * k];
    for w in seq.windows(2) {
        counts[w[0] * k + w[1]] += 1;
    }
    Ok(counts)
}

/// The type of `seq`: `probs[i] = count(i) / n`.
pub fn type_of(seq: &[Symbol], k: usize) -> Result<EmpiricalMeasure> {
    if seq.is_empty() {
        return Err(MeasureError::EmptySequence);
    }
    EmpiricalMeasure::from_counts(&symbol_counts(seq, k)?)
}

/// Pair measure of `seq`: `probs[i][j] = #{t : (x_t, x_t+1) = (i, j)} / (n - 1)`.
pub fn pair_measure_of(seq: &[Symbol], k: usize) -> Result<PairMeasure> {
    if seq.len() < 2 {
        return Err(MeasureError::SequenceTooShort { len: seq.len(), need: 2 });
    }
    PairMeasure::from_counts(k, &transition_counts(seq, k)?)
}

fn kl_slices(p: &[f64], q: &[f64]) -> Divergence {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Divergence::Infinite;
            }
            total += pi * (pi / qi).ln();
        }
    }
    // rounding can leave tiny negatives for p == q
    Divergence::Finite(total.max(0.0))
}

/// `D(p || q) = sum_i p_i ln(p_i / q_i)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> Result<Divergence> {
    kl_divergence_probs(p.probs(), q.probs())
}

pub fn kl_divergence_probs(p: &[f64], q: &[f64]) -> Result<Divergence> {
    if p.len() != q.len() {
        return Err(MeasureError::SupportMismatch { left: p.len(), right: q.len() });
    }
    Ok(kl_slices(p, q))
}

/// Rate of the pair measure `q` under the chain `p`:
/// `sum_ij Q(i,j) ln( Q(j|i) / P(i,j) )`, where `Q(j|i) = Q(i,j) / q(i)`.
///
/// Equivalently `sum_i q(i) D(Q(.|i) || P(i,.))`.
pub fn markov_rate(q: &PairMeasure, p: &TransitionMatrix) -> Result<Divergence> {
    if q.k() != p.k() {
        return Err(MeasureError::DimensionMismatch { left: q.k(), right: p.k() });
    }
    let k = q.k();
    let marginal = q.row_marginal();
    let mut total = 0.0;
    for i in 0..k {
        if marginal[i] <= 0.0 {
            continue;
        }
        for j in 0..k {
            let qij = q.get(i, j);
            if qij <= 0.0 {
                continue;
            }
            let pij = p.get(i, j);
            if pij <= 0.0 {
                return Ok(Divergence::Infinite);
            }
            total += qij * (qij / (marginal[i] * pij)).ln();
        }
    }
    Ok(Divergence::Finite(total.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pm(p: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_probs(p.to_vec(), 0).unwrap()
    }

    #[test]
    fn type_examples() {
        assert_eq!(type_of(&[0, 0, 1, 2], 3).unwrap().probs(), &[0.5, 0.25, 0.25]);
        assert_eq!(type_of(&[1, 1, 1, 1], 2).unwrap().probs(), &[0.0, 1.0]);
        assert_eq!(type_of(&[], 2), Err(MeasureError::EmptySequence));
        assert_eq!(type_of(&[0, 3], 3), Err(MeasureError::SymbolOutOfRange { symbol: 3, k: 3 }));
    }

    #[test]
    fn pair_measure_examples() {
        let q = pair_measure_of(&[0, 0, 1, 1, 0], 2).unwrap();
        assert_eq!(q.probs(), &[0.25; 4]);
        assert_eq!(q.transitions(), 4);
        let q = pair_measure_of(&[0, 0, 0], 2).unwrap();
        assert_eq!(q.probs(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(pair_measure_of(&[0], 2), Err(MeasureError::SequenceTooShort { len: 1, need: 2 }));
    }

    #[test]
    fn kl_examples() {
        let d = kl_divergence(&pm(&[0.25, 0.75]), &pm(&[0.25, 0.75])).unwrap();
        assert_eq!(d, Divergence::Finite(0.0));
        // 0.5 ln 2 + 0.5 ln(2/3)
        let d = kl_divergence(&pm(&[0.5, 0.5]), &pm(&[0.25, 0.75])).unwrap();
        assert_abs_diff_eq!(d.value(), 0.143841, epsilon = 1e-5);
        let d = kl_divergence(&pm(&[0.5, 0.5]), &pm(&[1.0, 0.0])).unwrap();
        assert!(d.is_infinite());
        assert!(d.exceeds(1e300));
        assert!(matches!(
            kl_divergence(&pm(&[1.0]), &pm(&[0.5, 0.5])),
            Err(MeasureError::SupportMismatch { .. })
        ));
    }

    #[test]
    fn markov_rate_examples() {
        let p = TransitionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let q = pair_measure_of(&[0, 0, 1, 1, 0], 2).unwrap();
        // 0.5 D([.5,.5] || [.9,.1]) + 0.5 D([.5,.5] || [.5,.5])
        let hand = 0.5 * (0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln());
        assert_abs_diff_eq!(hand, 0.25541, epsilon = 1e-5);
        assert_abs_diff_eq!(markov_rate(&q, &p).unwrap().value(), hand, epsilon = 1e-12);

        let blocked = TransitionMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert!(markov_rate(&q, &blocked).unwrap().is_infinite());

        let three = TransitionMatrix::from_rows(vec![vec![1.0 / 3.0; 3]; 3]).unwrap();
        assert!(matches!(markov_rate(&q, &three), Err(MeasureError::DimensionMismatch { .. })));
    }

    #[test]
    fn stationary_pair_measure_has_zero_rate() {
        let p = TransitionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let pi = p.stationary().unwrap();
        assert_abs_diff_eq!(pi[0], 5.0 / 6.0, epsilon = 1e-12);
        let probs: Vec<f64> = (0..4).map(|c| pi[c / 2] * p.get(c / 2, c % 2)).collect();
        let q = PairMeasure { k: 2, probs, transitions: 1000 };
        assert_abs_diff_eq!(markov_rate(&q, &p).unwrap().value(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn transition_matrix_validation() {
        assert!(matches!(
            TransitionMatrix::from_rows(vec![vec![0.5, 0.6], vec![0.5, 0.5]]),
            Err(MeasureError::NotStochastic { row: 0, .. })
        ));
        assert!(matches!(
            TransitionMatrix::from_rows(vec![vec![1.0], vec![0.5, 0.5]]),
            Err(MeasureError::DimensionMismatch { .. })
        ));
        let json = serde_json::to_string(&TransitionMatrix::from_rows(vec![vec![0.25, 0.75], vec![1.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(json, "[[0.25,0.75],[1.0,0.0]]");
    }

    #[test]
    fn floor_keeps_unseen_symbols_positive() {
        let t = type_of(&[0, 1, 2, 0], 4).unwrap().floored(1e-4);
        assert!(t.probs()[3] > 0.0);
        assert_abs_diff_eq!(t.probs()[3], 1e-4 / (1.0 + 1e-4), epsilon = 1e-15);
        assert_abs_diff_eq!(t.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    fn seq_strategy() -> impl Strategy<Value = (usize, Vec<usize>)> {
        (2usize..6).prop_flat_map(|k| (Just(k), prop::collection::vec(0..k, 2..80)))
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_on_self(
            (k, a) in seq_strategy(),
            b in prop::collection::vec(0usize..6, 1..80),
        ) {
            let b: Vec<usize> = b.into_iter().map(|s| s % k).collect();
            let (p, q) = (type_of(&a, k).unwrap(), type_of(&b, k).unwrap());
            let d = kl_divergence(&p, &q).unwrap();
            prop_assert!(d.value() >= 0.0);
            prop_assert_eq!(kl_divergence(&p, &p).unwrap().value(), 0.0);
            if p.probs() != q.probs() && !d.is_infinite() {
                prop_assert!(d.value() > 0.0);
            }
        }

        #[test]
        fn type_ignores_order_pairs_do_not_need_to((k, mut a) in seq_strategy()) {
            let t = type_of(&a, k).unwrap();
            a.reverse();
            prop_assert_eq!(type_of(&a, k).unwrap(), t);
        }

        #[test]
        fn pair_marginals_differ_by_at_most_one_transition((k, a) in seq_strategy()) {
            let q = pair_measure_of(&a, k).unwrap();
            let bound = 1.0 / (a.len() - 1) as f64 + 1e-12;
            for (r, c) in q.row_marginal().iter().zip(q.col_marginal()) {
                prop_assert!((r - c).abs() <= bound);
            }
            prop_assert!((q.probs().iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
        }

        #[test]
        fn rate_is_nonnegative_and_matches_conditional_form(
            (k, a) in seq_strategy(),
            raw in prop::collection::vec(0.01f64..1.0, 36),
        ) {
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|i| {
                    let r = &raw[i * 6..i * 6 + k];
                    let s: f64 = r.iter().sum();
                    r.iter().map(|x| x / s).collect()
                })
                .collect();
            let p = TransitionMatrix::from_rows(rows).unwrap();
            let q = pair_measure_of(&a, k).unwrap();
            let rate = markov_rate(&q, &p).unwrap().value();
            prop_assert!(rate >= 0.0);
            // sum_i q(i) D(Q(.|i) || P(i,.))
            let marg = q.row_marginal();
            let mut alt = 0.0;
            for i in 0..k {
                if marg[i] == 0.0 { continue; }
                let cond: Vec<f64> = (0..k).map(|j| q.get(i, j) / marg[i]).collect();
                alt += marg[i] * kl_divergence_probs(&cond, p.row(i)).unwrap().value();
            }
            prop_assert!((rate - alt).abs() <= 1e-10);
        }
    }
}
