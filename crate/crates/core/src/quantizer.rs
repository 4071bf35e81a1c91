//! Finite alphabets over traffic values.
//!
//! Symbol `i` covers the half-open range `[edge[i-1], edge[i])`, with the
//! outer ranges extending to minus and plus infinity. A value equal to an
//! edge belongs to the bin on its right.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::TrafficTrace;

/// Index of a bin in an [`Alphabet`].
pub type Symbol = usize;

#[derive(Debug, Error, PartialEq)]
pub enum QuantizerError {
    #[error("degenerate trace: need at least 2 distinct values, found {distinct}")]
    DegenerateTrace { distinct: usize },
    #[error("invalid range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("alphabet size must be at least 2, got {0}")]
    InvalidSize(usize),
    #[error("alphabet edges must be finite and strictly increasing")]
    InvalidEdges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AlphabetWire", into = "AlphabetWire")]
pub struct Alphabet {
    edges: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AlphabetWire {
    edges: Vec<f64>,
    k: usize,
}

impl TryFrom<AlphabetWire> for Alphabet {
    type Error = String;

    fn try_from(w: AlphabetWire) -> Result<Self, Self::Error> {
        let a = Alphabet::from_edges(w.edges).map_err(|e| e.to_string())?;
        if a.size() != w.k {
            return Err(format!("alphabet k={} does not match {} edges", w.k, a.edges.len()));
        }
        Ok(a)
    }
}

impl From<Alphabet> for AlphabetWire {
    fn from(a: Alphabet) -> Self {
        let k = a.size();
        AlphabetWire { edges: a.edges, k }
    }
}

impl Alphabet {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self, QuantizerError> {
        if edges.is_empty() {
            return Err(QuantizerError::InvalidSize(1));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(QuantizerError::InvalidEdges);
        }
        Ok(Alphabet { edges })
    }

    /// Number of symbols, `edges.len() + 1`.
    pub fn size(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn quantize(&self, value: f64) -> Symbol {
        self.edges.partition_point(|&e| e <= value)
    }

    pub fn quantize_all(&self, values: &[f64]) -> Vec<Symbol> {
        values.iter().map(|&v| self.quantize(v)).collect()
    }
}

/// Linearly interpolated empirical quantile of sorted data (the
/// `h = (n-1)p` convention, as used by numpy's default and R type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Alphabet whose edges are the `j/k` empirical quantiles of `values`.
///
/// Repeated quantiles are merged, so the result may have fewer than `k`
/// symbols; callers compare [`Alphabet::size`] with the request.
pub fn build_quantile_alphabet_from_values(values: &[f64], k: usize) -> Result<Alphabet, QuantizerError> {
    if k < 2 {
        return Err(QuantizerError::InvalidSize(k));
    }
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(QuantizerError::DegenerateTrace { distinct: distinct.len() });
    }
    let mut edges: Vec<f64> = (1..k).map(|j| quantile_sorted(&sorted, j as f64 / k as f64)).collect();
    edges.dedup();
    // An edge at the minimum would leave symbol 0 empty.
    if edges.len() > 1 && edges[0] <= sorted[0] {
        edges.remove(0);
    }
    if edges[0] <= sorted[0] {
        // every quantile sits on the minimum: split just above it
        edges[0] = distinct[1];
    }
    Alphabet::from_edges(edges)
}

pub fn build_quantile_alphabet(trace: &TrafficTrace, k: usize) -> Result<Alphabet, QuantizerError> {
    build_quantile_alphabet_from_values(&trace.values(), k)
}

/// `k - 1` equally spaced edges strictly between `lo` and `hi`.
pub fn build_uniform_alphabet(lo: f64, hi: f64, k: usize) -> Result<Alphabet, QuantizerError> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(QuantizerError::InvalidRange { lo, hi });
    }
    if k < 2 {
        return Err(QuantizerError::InvalidSize(k));
    }
    let width = hi - lo;
    let edges = (1..k).map(|j| lo + width * j as f64 / k as f64).collect();
    Alphabet::from_edges(edges)
}

pub fn quantize(alphabet: &Alphabet, value: f64) -> Symbol {
    alphabet.quantize(value)
}

pub fn quantize_series(alphabet: &Alphabet, trace: &TrafficTrace) -> Vec<Symbol> {
    trace.samples().iter().map(|s| alphabet.quantize(s.value)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn quantile_edges_for_one_to_hundred() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let a = build_quantile_alphabet_from_values(&values, 4).unwrap();
        // (n-1)p + 1 = 25.75, 50.5, 75.25
        let expected = [25.75, 50.5, 75.25];
        for (e, x) in a.edges().iter().zip(expected) {
            assert_abs_diff_eq!(*e, x, epsilon = 1e-12);
        }
        assert_eq!(a.size(), 4);
    }

    #[test]
    fn median_split() {
        let values: Vec<f64> = (0..10).map(f64::from).collect();
        let a = build_quantile_alphabet_from_values(&values, 2).unwrap();
        assert_eq!(a.edges(), &[4.5]);
    }

    #[test]
    fn constant_trace_is_degenerate() {
        assert_eq!(
            build_quantile_alphabet_from_values(&[3.0; 50], 2),
            Err(QuantizerError::DegenerateTrace { distinct: 1 })
        );
    }

    #[test]
    fn repeated_quantiles_reduce_k() {
        let mut values = vec![0.0; 90];
        values.extend((1..=10).map(f64::from));
        let a = build_quantile_alphabet_from_values(&values, 8).unwrap();
        assert!(a.size() < 8);
        // zeros keep their own symbol
        assert_eq!(a.quantize(0.0), 0);
        assert!(a.quantize(10.0) > 0);
    }

    #[test]
    fn uniform_edges() {
        assert_eq!(build_uniform_alphabet(0.0, 100.0, 4).unwrap().edges(), &[25.0, 50.0, 75.0]);
        assert_eq!(build_uniform_alphabet(0.0, 1.0, 2).unwrap().edges(), &[0.5]);
        assert!(matches!(build_uniform_alphabet(1.0, 1.0, 4), Err(QuantizerError::InvalidRange { .. })));
        assert!(matches!(build_uniform_alphabet(0.0, 1.0, 1), Err(QuantizerError::InvalidSize(1))));
    }

    #[test]
    fn quantize_examples() {
        let a = Alphabet::from_edges(vec![10.0, 20.0]).unwrap();
        assert_eq!(a.quantize(5.0), 0);
        assert_eq!(a.quantize(15.0), 1);
        assert_eq!(a.quantize(25.0), 2);
        assert_eq!(a.quantize(10.0), 1);
        assert_eq!(a.quantize(20.0), 2);
        assert_eq!(a.quantize(-3.0), 0);
    }

    #[test]
    fn json_shape() {
        let a = Alphabet::from_edges(vec![1.5, 2.5]).unwrap();
        let j = serde_json::to_string(&a).unwrap();
        assert_eq!(j, r#"{"edges":[1.5,2.5],"k":3}"#);
        assert_eq!(serde_json::from_str::<Alphabet>(&j).unwrap(), a);
        assert!(serde_json::from_str::<Alphabet>(r#"{"edges":[1.5,2.5],"k":4}"#).is_err());
        assert!(serde_json::from_str::<Alphabet>(r#"{"edges":[2.5,1.5],"k":3}"#).is_err());
    }

    proptest! {
        #[test]
        fn quantize_is_monotone_and_total(
            mut edges in prop::collection::vec(-1e6f64..1e6, 1..12),
            a in -2e6f64..2e6,
            b in -2e6f64..2e6,
        ) {
            edges.sort_by(f64::total_cmp);
            edges.dedup();
            let alpha = Alphabet::from_edges(edges).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (sl, sh) = (alpha.quantize(lo), alpha.quantize(hi));
            prop_assert!(sl <= sh);
            prop_assert!(sh < alpha.size());
            // the bin really contains the value
            let e = alpha.edges();
            prop_assert!(sl == 0 || e[sl - 1] <= lo);
            prop_assert!(sl == e.len() || lo < e[sl]);
        }

        #[test]
        fn quantile_alphabet_gives_near_uniform_type(
            values in prop::collection::vec(0.0f64..1e4, 40..400),
            k in 2usize..9,
        ) {
            let alpha = build_quantile_alphabet_from_values(&values, k).unwrap();
            prop_assume!(alpha.size() == k);
            let n = values.len() as f64;
            let mut counts = vec![0usize; k];
            for s in alpha.quantize_all(&values) {
                counts[s] += 1;
            }
            // continuous draws are tie-free with probability one
            for c in counts {
                prop_assert!((c as f64 / n - 1.0 / k as f64).abs() <= 1.0 / n + 1e-12);
            }
        }
    }
}
