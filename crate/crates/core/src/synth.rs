//! Synthetic traces with known ground truth.
//!
//! Every generator is a pure function of its configuration and a `u64`
//! seed. Randomness comes from ChaCha8 (`rand_chacha`), seeded with
//! `seed_from_u64` and split into independent streams with `set_stream`,
//! which is stable across platforms.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::empirical::{validate_pmf, MeasureError, TransitionMatrix};
use crate::trace::{BucketConfig, Role, StreamKey, TraceSample, TrafficTrace, Unit};

pub const RNG_ALGORITHM: &str = "ChaCha8Rng/rand_chacha-0.3/seed_from_u64+set_stream";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid pmf: {0}")]
    InvalidPmf(String),
    #[error("transition matrix is not stochastic: {0}")]
    NotStochastic(MeasureError),
    #[error("invalid value map: {0}")]
    InvalidValues(String),
    #[error("anomaly {label}: interval [{start}, {end}) is outside the trace span [{lo}, {hi})")]
    IntervalOutOfRange { label: u32, start: i64, end: i64, lo: i64, hi: i64 },
    #[error("anomalies {0} and {1} overlap on the same stream")]
    OverlappingAnomalies(u32, u32),
    #[error("invalid anomaly {label}: {reason}")]
    InvalidAnomaly { label: u32, reason: String },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("labels line {line}: {reason}")]
    MalformedLabels { line: usize, reason: String },
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Traffic value emitted for each bin or state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ValueMap {
    /// One representative value per bin.
    Points { values: Vec<f64> },
    /// Disjoint, increasing `[lo, hi)` ranges; values drawn uniformly.
    Ranges { ranges: Vec<[f64; 2]> },
}

impl ValueMap {
    pub fn points(values: Vec<f64>) -> Self {
        ValueMap::Points { values }
    }

    pub fn len(&self) -> usize {
        match self {
            ValueMap::Points { values } => values.len(),
            ValueMap::Ranges { ranges } => ranges.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self, bins: usize) -> Result<()> {
        if self.len() != bins {
            return Err(SynthError::InvalidValues(format!("{} values for {} bins", self.len(), bins)));
        }
        match self {
            ValueMap::Points { values } => {
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(SynthError::InvalidValues("values must be finite and non-negative".into()));
                }
            }
            ValueMap::Ranges { ranges } => {
                if ranges.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && *lo >= 0.0 && lo < hi)) {
                    return Err(SynthError::InvalidValues("ranges must satisfy 0 <= lo < hi".into()));
                }
                if ranges.windows(2).any(|w| w[0][1] > w[1][0]) {
                    return Err(SynthError::InvalidValues("ranges must be disjoint and increasing".into()));
                }
            }
        }
        Ok(())
    }

    fn emit(&self, bin: usize, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            ValueMap::Points { values } => values[bin],
            ValueMap::Ranges { ranges } => {
                let [lo, hi] = ranges[bin];
                lo + (hi - lo) * rng.gen::<f64>()
            }
        }
    }

    /// Mean emitted value when bins are drawn from `pmf`.
    pub fn mean(&self, pmf: &[f64]) -> f64 {
        match self {
            ValueMap::Points { values } => pmf.iter().zip(values).map(|(p, v)| p * v).sum(),
            ValueMap::Ranges { ranges } => pmf.iter().zip(ranges).map(|(p, [lo, hi])| p * (lo + hi) / 2.0).sum(),
        }
    }
}

/// Where a generated stream lives and how it is stamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub node_id: String,
    pub role: Role,
    #[serde(default)]
    pub start: i64,
    pub sample_period: u64,
    #[serde(default)]
    pub unit: Unit,
}

impl StreamMeta {
    pub fn new(node_id: impl Into<String>, role: Role, sample_period: u64) -> Self {
        StreamMeta { node_id: node_id.into(), role, start: 0, sample_period, unit: Unit::default() }
    }

    fn samples(&self, values: Vec<f64>) -> Vec<TraceSample> {
        values
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                TraceSample::new(self.start + i as i64 * self.sample_period as i64, self.node_id.clone(), self.role, v)
            })
            .collect()
    }
}

fn check_pmf(pmf: &[f64]) -> Result<()> {
    validate_pmf(pmf).map_err(|e| SynthError::InvalidPmf(e.to_string()))
}

/// Inverse-CDF draw; never returns a zero-probability bin.
fn draw(pmf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc && p > 0.0 {
            return i;
        }
    }
    pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn iid_states(pmf: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| draw(pmf, rng)).collect()
}

fn markov_states(p: &TransitionMatrix, n: usize, initial: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut states = Vec::with_capacity(n);
    let mut s = initial;
    for i in 0..n {
        if i > 0 {
            s = draw(p.row(s), rng);
        }
        states.push(s);
    }
    states
}

fn emit_all(states: &[usize], values: &ValueMap, rng: &mut ChaCha8Rng) -> Vec<f64> {
    states.iter().map(|&s| values.emit(s, rng)).collect()
}

/// I.i.d. bins drawn from `pmf`, emitted through `values`.
pub fn generate_iid(pmf: &[f64], values: &ValueMap, n: usize, seed: u64, meta: &StreamMeta) -> Result<TrafficTrace> {
    check_pmf(pmf)?;
    values.validate(pmf.len())?;
    let mut rng = rng_for(seed, 0);
    let states = iid_states(pmf, n, &mut rng);
    let v = emit_all(&states, values, &mut rng);
    Ok(TrafficTrace::new(meta.samples(v), meta.sample_period, meta.unit)?)
}

/// Markov chain path from `initial_state`, emitted through per-state values.
pub fn generate_mmp(
    p: &TransitionMatrix,
    values: &ValueMap,
    n: usize,
    seed: u64,
    initial_state: usize,
    meta: &StreamMeta,
) -> Result<TrafficTrace> {
    values.validate(p.k())?;
    if initial_state >= p.k() {
        return Err(SynthError::InvalidValues(format!("initial state {initial_state} out of range")));
    }
    let mut rng = rng_for(seed, 0);
    let states = markov_states(p, n, initial_state, &mut rng);
    let v = emit_all(&states, values, &mut rng);
    Ok(TrafficTrace::new(meta.samples(v), meta.sample_period, meta.unit)?)
}

/// Raw Markov state path, mainly for estimator checks.
pub fn markov_path(p: &TransitionMatrix, n: usize, seed: u64, initial_state: usize) -> Vec<usize> {
    markov_states(p, n, initial_state, &mut rng_for(seed, 0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Multiply values by `factor`.
    VolumeShift { factor: f64 },
    /// Re-draw values from a different law `pmf` over `values`.
    DistributionShift { pmf: Vec<f64>, values: ValueMap },
    /// Add `amplitude` to every affected sample.
    Burst { amplitude: f64 },
    /// Shuffle the time order of every target after the first, inside the
    /// interval. Per-stream values are unchanged as multisets; their
    /// co-occurrence with the first target is broken.
    CorrelationFlip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub label: u32,
    #[serde(flatten)]
    pub kind: AnomalyKind,
    /// Inclusive start, seconds.
    pub start: i64,
    /// Exclusive end, seconds.
    pub end: i64,
    /// Affected streams; empty means every stream.
    #[serde(default, with = "target_strings")]
    pub targets: Vec<StreamKey>,
}

mod target_strings {
    use super::StreamKey;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(t: &[StreamKey], s: S) -> Result<S::Ok, S::Error> {
        t.iter().map(|k| k.to_string()).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<StreamKey>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}

impl AnomalySpec {
    fn hits(&self, s: &TraceSample) -> bool {
        (self.targets.is_empty() || self.targets.iter().any(|k| k.node_id == s.node_id && k.role == s.role))
            && s.timestamp >= self.start
            && s.timestamp < self.end
    }

    fn shares_stream(&self, other: &AnomalySpec) -> bool {
        self.targets.is_empty() || other.targets.is_empty() || self.targets.iter().any(|k| other.targets.contains(k))
    }
}

/// Ground truth aligned index-for-index with a trace's samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTrack {
    pub sample_period: u64,
    pub rows: Vec<LabelRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub timestamp: i64,
    pub node_id: String,
    pub is_anomaly: bool,
    pub label_id: Option<u32>,
}

impl LabelTrack {
    pub fn clean(trace: &TrafficTrace) -> Self {
        LabelTrack {
            sample_period: trace.sample_period(),
            rows: trace
                .samples()
                .iter()
                .map(|s| LabelRow { timestamp: s.timestamp, node_id: s.node_id.clone(), is_anomaly: false, label_id: None })
                .collect(),
        }
    }

    pub fn anomalous_count(&self) -> usize {
        self.rows.iter().filter(|r| r.is_anomaly).count()
    }

    /// Rows for one node only.
    pub fn for_node(&self, node_id: &str) -> LabelTrack {
        LabelTrack {
            sample_period: self.sample_period,
            rows: self.rows.iter().filter(|r| r.node_id == node_id).cloned().collect(),
        }
    }

    /// Bucket labels matching [`crate::trace::aggregate_buckets`] on the
    /// same trace: a bucket is anomalous iff any of its samples is.
    pub fn aggregate(&self, trace: &TrafficTrace, cfg: &BucketConfig) -> LabelTrack {
        let len = cfg.bucket_length.max(1);
        let mut rows = Vec::new();
        for run in trace.runs() {
            for chunk in self.rows[run].chunks_exact(len) {
                let hit = chunk.iter().find(|r| r.is_anomaly);
                rows.push(LabelRow {
                    timestamp: chunk[0].timestamp,
                    node_id: chunk[0].node_id.clone(),
                    is_anomaly: hit.is_some(),
                    label_id: hit.and_then(|r| r.label_id),
                });
            }
        }
        LabelTrack { sample_period: self.sample_period * len as u64, rows }
    }
}

pub const LABEL_HEADER: &str = "timestamp,node_id,is_anomaly,label_id";

pub fn write_labels<W: Write>(labels: &LabelTrack, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# sample_period={}", labels.sample_period)?;
    writeln!(out, "{LABEL_HEADER}")?;
    for r in &labels.rows {
        let id = r.label_id.map(|i| i.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", r.timestamp, r.node_id, r.is_anomaly, id)?;
    }
    out.flush()
}

/// Reads labels CSV. Without a `# sample_period=` line the period is the
/// smallest positive timestamp step within a node.
pub fn read_labels<R: Read>(reader: R) -> Result<LabelTrack> {
    let mut text = String::new();
    let mut reader = reader;
    reader.read_to_string(&mut text)?;
    let mut period = None;
    let mut offset = 0;
    let mut body = text.as_str();
    if let Some(rest) = text.strip_prefix('#') {
        let (meta, tail) = rest.split_once('\n').unwrap_or((rest, ""));
        for kv in meta.split_whitespace() {
            if let Some(v) = kv.strip_prefix("sample_period=") {
                period = Some(v.parse::<u64>().map_err(|_| SynthError::MalformedLabels {
                    line: 1,
                    reason: format!("bad sample_period '{v}'"),
                })?);
            }
        }
        body = tail;
        offset = 1;
    }
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let header = csv
        .headers()
        .map_err(|e| SynthError::MalformedLabels { line: offset + 1, reason: e.to_string() })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != LABEL_HEADER {
        return Err(SynthError::MalformedLabels { line: offset + 1, reason: format!("unexpected header '{header}'") });
    }
    let mut rows = Vec::new();
    for rec in csv.records() {
        let rec = rec.map_err(|e| SynthError::MalformedLabels {
            line: offset + e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = offset + rec.position().map_or(0, |p| p.line() as usize);
        let bad = |what: &str| SynthError::MalformedLabels { line, reason: format!("bad {what}") };
        rows.push(LabelRow {
            timestamp: rec[0].parse().map_err(|_| bad("timestamp"))?,
            node_id: rec[1].to_string(),
            is_anomaly: rec[2].parse().map_err(|_| bad("is_anomaly"))?,
            label_id: match &rec[3] {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("label_id"))?),
            },
        });
    }
    let sample_period = match period {
        Some(p) => p,
        None => {
            let mut by_node: HashMap<&str, Vec<i64>> = HashMap::new();
            for r in &rows {
                by_node.entry(&r.node_id).or_default().push(r.timestamp);
            }
            by_node
                .values_mut()
                .flat_map(|ts| {
                    ts.sort_unstable();
                    ts.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0).collect::<Vec<_>>()
                })
                .min()
                .unwrap_or(1) as u64
        }
    };
    Ok(LabelTrack { sample_period, rows })
}

pub fn inject(trace: &TrafficTrace, spec: &AnomalySpec, seed: u64) -> Result<(TrafficTrace, LabelTrack)> {
    inject_all(trace, std::slice::from_ref(spec), seed)
}

/// Applies every anomaly and returns the modified trace with labels.
pub fn inject_all(trace: &TrafficTrace, specs: &[AnomalySpec], seed: u64) -> Result<(TrafficTrace, LabelTrack)> {
    let (lo, hi) = trace.span();
    let streams = trace.streams();
    for s in specs {
        if s.start >= s.end {
            return Err(SynthError::InvalidAnomaly { label: s.label, reason: "start must precede end".into() });
        }
        if s.start < lo || s.end > hi {
            return Err(SynthError::IntervalOutOfRange { label: s.label, start: s.start, end: s.end, lo, hi });
        }
        if let Some(missing) = s.targets.iter().find(|k| !streams.contains(k)) {
            return Err(SynthError::InvalidAnomaly { label: s.label, reason: format!("unknown stream {missing}") });
        }
        match &s.kind {
            AnomalyKind::CorrelationFlip if s.targets.len() < 2 => {
                return Err(SynthError::InvalidAnomaly { label: s.label, reason: "correlation_flip needs two or more targets".into() })
            }
            AnomalyKind::DistributionShift { pmf, values } => {
                check_pmf(pmf)?;
                values.validate(pmf.len())?;
            }
            AnomalyKind::VolumeShift { factor } if !(factor.is_finite() && *factor >= 0.0) => {
                return Err(SynthError::InvalidAnomaly { label: s.label, reason: "factor must be >= 0".into() })
            }
            AnomalyKind::Burst { amplitude } if !(amplitude.is_finite() && *amplitude >= 0.0) => {
                return Err(SynthError::InvalidAnomaly { label: s.label, reason: "amplitude must be >= 0".into() })
            }
            _ => {}
        }
    }
    for (i, a) in specs.iter().enumerate() {
        for b in &specs[i + 1..] {
            if a.shares_stream(b) && a.start < b.end && b.start < a.end {
                return Err(SynthError::OverlappingAnomalies(a.label, b.label));
            }
        }
    }

    let samples = trace.samples();
    let mut values = trace.values();
    let mut labels = LabelTrack::clean(trace);
    for (i, spec) in specs.iter().enumerate() {
        let mut rng = rng_for(seed, 1_000 + i as u64);
        let hit: Vec<usize> = (0..samples.len()).filter(|&j| spec.hits(&samples[j])).collect();
        for &j in &hit {
            labels.rows[j].is_anomaly = true;
            labels.rows[j].label_id = Some(spec.label);
        }
        match &spec.kind {
            AnomalyKind::VolumeShift { factor } => hit.iter().for_each(|&j| values[j] *= factor),
            AnomalyKind::Burst { amplitude } => hit.iter().for_each(|&j| values[j] += amplitude),
            AnomalyKind::DistributionShift { pmf, values: map } => {
                for &j in &hit {
                    let bin = draw(pmf, &mut rng);
                    values[j] = map.emit(bin, &mut rng);
                }
            }
            AnomalyKind::CorrelationFlip => {
                for key in &spec.targets[1..] {
                    let idx: Vec<usize> = hit
                        .iter()
                        .copied()
                        .filter(|&j| samples[j].node_id == key.node_id && samples[j].role == key.role)
                        .collect();
                    let mut shuffled: Vec<f64> = idx.iter().map(|&j| values[j]).collect();
                    shuffled.shuffle(&mut rng);
                    idx.iter().zip(shuffled).for_each(|(&j, v)| values[j] = v);
                }
            }
        }
    }
    Ok((trace.with_values(&values), labels))
}

/// How one scenario stream is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Source {
    Iid { pmf: Vec<f64>, values: ValueMap },
    Mmp {
        #[serde(rename = "P")]
        transition: TransitionMatrix,
        values: ValueMap,
        #[serde(default)]
        initial_state: usize,
    },
    /// Copies the bin of `leader` (an earlier stream) with probability
    /// `fidelity`, otherwise draws a fresh bin from `pmf`.
    Follow { leader: String, fidelity: f64, pmf: Vec<f64>, values: ValueMap },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStream {
    pub node_id: String,
    #[serde(default = "default_role")]
    pub role: Role,
    pub source: Source,
}

fn default_role() -> Role {
    Role::Unspecified
}

/// A complete synthetic experiment: sources, anomalies, seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub start: i64,
    pub sample_period: u64,
    #[serde(default)]
    pub unit: Unit,
    /// Samples per stream.
    pub length: usize,
    pub streams: Vec<ScenarioStream>,
    #[serde(default)]
    pub anomalies: Vec<AnomalySpec>,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SynthError::InvalidScenario(e.to_string()))
    }
}

/// Generates all streams (stream `i` uses RNG stream `i`) and injects the
/// anomalies. `seed` overrides the scenario's own seed when given.
pub fn generate_scenario(scenario: &Scenario, seed: Option<u64>) -> Result<(TrafficTrace, LabelTrack)> {
    let seed = seed.unwrap_or(scenario.seed);
    if scenario.streams.is_empty() {
        return Err(SynthError::InvalidScenario("no streams".into()));
    }
    let mut states_by_node: HashMap<String, Vec<usize>> = HashMap::new();
    let mut samples = Vec::with_capacity(scenario.length * scenario.streams.len());
    for (i, st) in scenario.streams.iter().enumerate() {
        let mut rng = rng_for(seed, i as u64);
        let meta = StreamMeta {
            node_id: st.node_id.clone(),
            role: st.role,
            start: scenario.start,
            sample_period: scenario.sample_period,
            unit: scenario.unit,
        };
        let (states, values) = match &st.source {
            Source::Iid { pmf, values } => {
                check_pmf(pmf)?;
                values.validate(pmf.len())?;
                (iid_states(pmf, scenario.length, &mut rng), values)
            }
            Source::Mmp { transition, values, initial_state } => {
                values.validate(transition.k())?;
                if *initial_state >= transition.k() {
                    return Err(SynthError::InvalidScenario(format!("initial state {initial_state} out of range")));
                }
                (markov_states(transition, scenario.length, *initial_state, &mut rng), values)
            }
            Source::Follow { leader, fidelity, pmf, values } => {
                check_pmf(pmf)?;
                values.validate(pmf.len())?;
                if !(0.0..=1.0).contains(fidelity) {
                    return Err(SynthError::InvalidScenario("fidelity must lie in [0, 1]".into()));
                }
                let lead = states_by_node
                    .get(leader)
                    .ok_or_else(|| SynthError::InvalidScenario(format!("leader '{leader}' must precede its follower")))?;
                if lead.iter().any(|&s| s >= pmf.len()) {
                    return Err(SynthError::InvalidScenario("leader has more bins than follower".into()));
                }
                let states = lead
                    .iter()
                    .map(|&s| if rng.gen::<f64>() < *fidelity { s } else { draw(pmf, &mut rng) })
                    .collect();
                (states, values)
            }
        };
        let v = emit_all(&states, values, &mut rng);
        samples.extend(meta.samples(v));
        states_by_node.insert(st.node_id.clone(), states);
    }
    let trace = TrafficTrace::new(samples, scenario.sample_period, scenario.unit)?;
    inject_all(&trace, &scenario.anomalies, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> StreamMeta {
        StreamMeta::new("A", Role::Origin, 60)
    }

    fn freqs(values: &[f64], reps: &[f64]) -> Vec<f64> {
        reps.iter()
            .map(|r| values.iter().filter(|v| *v == r).count() as f64 / values.len() as f64)
            .collect()
    }

    #[test]
    fn iid_is_deterministic_and_matches_pmf() {
        let map = ValueMap::points(vec![10.0, 20.0]);
        let a = generate_iid(&[0.3, 0.7], &map, 100_000, 7, &meta()).unwrap();
        let b = generate_iid(&[0.3, 0.7], &map, 100_000, 7, &meta()).unwrap();
        assert_eq!(a, b);
        let f = freqs(&a.values(), &[10.0, 20.0]);
        assert!((f[0] - 0.3).abs() <= 0.01 && (f[1] - 0.7).abs() <= 0.01, "{f:?}");
        let c = generate_iid(&[0.3, 0.7], &map, 100, 8, &meta()).unwrap();
        assert_ne!(c.values(), a.values()[..100].to_vec());
    }

    #[test]
    fn iid_edge_cases() {
        let t = generate_iid(&[1.0], &ValueMap::points(vec![5.0]), 50, 1, &meta()).unwrap();
        assert!(t.values().iter().all(|&v| v == 5.0));
        assert!(matches!(
            generate_iid(&[0.5, 0.6], &ValueMap::points(vec![1.0, 2.0]), 5, 1, &meta()),
            Err(SynthError::InvalidPmf(_))
        ));
        assert!(matches!(
            generate_iid(&[0.5, 0.5], &ValueMap::points(vec![1.0]), 5, 1, &meta()),
            Err(SynthError::InvalidValues(_))
        ));
    }

    #[test]
    fn ranges_emit_inside_their_bins() {
        let map = ValueMap::Ranges { ranges: vec![[0.0, 10.0], [10.0, 20.0]] };
        let t = generate_iid(&[0.0, 1.0], &map, 1000, 3, &meta()).unwrap();
        assert!(t.values().iter().all(|&v| (10.0..20.0).contains(&v)));
        let overlapping = ValueMap::Ranges { ranges: vec![[0.0, 11.0], [10.0, 20.0]] };
        assert!(generate_iid(&[0.5, 0.5], &overlapping, 10, 3, &meta()).is_err());
    }

    #[test]
    fn mmp_paths() {
        let map = ValueMap::points(vec![1.0, 2.0]);
        let id = TransitionMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let t = generate_mmp(&id, &map, 100, 1, 0, &meta()).unwrap();
        assert!(t.values().iter().all(|&v| v == 1.0));
        let flip = TransitionMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let t = generate_mmp(&flip, &map, 6, 1, 0, &meta()).unwrap();
        assert_eq!(t.values(), vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn mmp_transition_frequencies() {
        let p = TransitionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let path = markov_path(&p, 100_000, 11, 0);
        let mut c = [[0usize; 2]; 2];
        path.windows(2).for_each(|w| c[w[0]][w[1]] += 1);
        for i in 0..2 {
            let row = (c[i][0] + c[i][1]) as f64;
            for j in 0..2 {
                assert!((c[i][j] as f64 / row - p.get(i, j)).abs() <= 0.01);
            }
        }
    }

    fn two_streams() -> TrafficTrace {
        let map = ValueMap::points(vec![1.0, 2.0, 3.0]);
        let a = generate_iid(&[0.2, 0.3, 0.5], &map, 200, 1, &StreamMeta::new("A", Role::Origin, 60)).unwrap();
        let b = generate_iid(&[0.2, 0.3, 0.5], &map, 200, 2, &StreamMeta::new("B", Role::Origin, 60)).unwrap();
        let mut s = a.samples().to_vec();
        s.extend_from_slice(b.samples());
        TrafficTrace::new(s, 60, Unit::Bytes).unwrap()
    }

    fn spec(label: u32, kind: AnomalyKind, start: i64, end: i64, targets: &[&str]) -> AnomalySpec {
        AnomalySpec {
            label,
            kind,
            start,
            end,
            targets: targets.iter().map(|t| StreamKey::new(*t, Role::Origin)).collect(),
        }
    }

    #[test]
    fn unit_volume_shift_only_labels() {
        let t = two_streams();
        let (out, labels) = inject(&t, &spec(1, AnomalyKind::VolumeShift { factor: 1.0 }, 600, 1200, &["A"]), 0).unwrap();
        assert_eq!(out, t);
        assert_eq!(labels.anomalous_count(), 10);
        assert!(labels.rows.iter().filter(|r| r.is_anomaly).all(|r| r.node_id == "A" && r.label_id == Some(1)));
    }

    #[test]
    fn burst_and_volume() {
        let t = two_streams();
        let (out, _) = inject(&t, &spec(1, AnomalyKind::Burst { amplitude: 100.0 }, 0, 60, &["B"]), 0).unwrap();
        let b0 = out.samples().iter().find(|s| s.node_id == "B" && s.timestamp == 0).unwrap();
        let orig = t.samples().iter().find(|s| s.node_id == "B" && s.timestamp == 0).unwrap();
        assert_eq!(b0.value, orig.value + 100.0);
    }

    #[test]
    fn correlation_flip_preserves_multisets() {
        let t = two_streams();
        let (out, labels) = inject(&t, &spec(3, AnomalyKind::CorrelationFlip, 1200, 9000, &["A", "B"]), 5).unwrap();
        for node in ["A", "B"] {
            let inside = |tr: &TrafficTrace| {
                let mut v: Vec<f64> = tr
                    .samples()
                    .iter()
                    .filter(|s| s.node_id == node && (1200..9000).contains(&s.timestamp))
                    .map(|s| s.value)
                    .collect();
                v.sort_by(f64::total_cmp);
                v
            };
            assert_eq!(inside(&out), inside(&t));
        }
        // the anchor stream is untouched, the other one is reordered
        assert_eq!(out.stream(&StreamKey::new("A", Role::Origin)), t.stream(&StreamKey::new("A", Role::Origin)));
        assert_ne!(out.stream(&StreamKey::new("B", Role::Origin)), t.stream(&StreamKey::new("B", Role::Origin)));
        assert_eq!(labels.anomalous_count(), 2 * 130);
        assert!(inject(&t, &spec(3, AnomalyKind::CorrelationFlip, 0, 600, &["A"]), 5).is_err());
    }

    #[test]
    fn null_distribution_shift_keeps_support() {
        let t = two_streams();
        let kind = AnomalyKind::DistributionShift {
            pmf: vec![0.2, 0.3, 0.5],
            values: ValueMap::points(vec![1.0, 2.0, 3.0]),
        };
        let (out, _) = inject(&t, &spec(1, kind, 0, 12000, &[]), 9).unwrap();
        assert!(out.values().iter().all(|v| [1.0, 2.0, 3.0].contains(v)));
    }

    #[test]
    fn injection_errors() {
        let t = two_streams();
        let vs = AnomalyKind::VolumeShift { factor: 2.0 };
        assert!(matches!(
            inject(&t, &spec(1, vs.clone(), 0, 1_000_000, &["A"]), 0),
            Err(SynthError::IntervalOutOfRange { .. })
        ));
        assert!(matches!(
            inject_all(&t, &[spec(1, vs.clone(), 0, 600, &["A"]), spec(2, vs.clone(), 300, 900, &["A"])], 0),
            Err(SynthError::OverlappingAnomalies(1, 2))
        ));
        // same interval on different streams is fine
        assert!(inject_all(&t, &[spec(1, vs.clone(), 0, 600, &["A"]), spec(2, vs.clone(), 0, 600, &["B"])], 0).is_ok());
        assert!(matches!(
            inject_all(&t, &[spec(1, vs.clone(), 0, 600, &[]), spec(2, vs, 300, 900, &["B"])], 0),
            Err(SynthError::OverlappingAnomalies(1, 2))
        ));
    }

    #[test]
    fn bucket_labels_use_any() {
        let map = ValueMap::points(vec![1.0]);
        let t = generate_iid(&[1.0], &map, 10, 0, &meta()).unwrap();
        let (_, labels) = inject(&t, &spec(4, AnomalyKind::Burst { amplitude: 1.0 }, 180, 240, &["A"]), 0).unwrap();
        let b = labels.aggregate(&t, &BucketConfig::new(4, Default::default()).unwrap());
        assert_eq!(b.rows.iter().map(|r| r.is_anomaly).collect::<Vec<_>>(), vec![true, false]);
        assert_eq!(b.rows[0].label_id, Some(4));
        assert_eq!(b.sample_period, 240);
    }

    #[test]
    fn labels_csv_round_trip() {
        let t = two_streams();
        let (_, labels) = inject(&t, &spec(2, AnomalyKind::Burst { amplitude: 1.0 }, 600, 1200, &["B"]), 0).unwrap();
        let mut buf = Vec::new();
        write_labels(&labels, &mut buf).unwrap();
        assert_eq!(read_labels(buf.as_slice()).unwrap(), labels);
        let text = String::from_utf8(buf).unwrap();
        let without_meta = text.split_once('\n').unwrap().1;
        assert_eq!(read_labels(without_meta.as_bytes()).unwrap().sample_period, 60);
    }

    #[test]
    fn scenario_follow_source() {
        let json = r#"{
            "sample_period": 60, "length": 5000, "seed": 4,
            "streams": [
                {"node_id": "A", "role": "origin", "source": {"type": "iid", "pmf": [0.5, 0.5], "values": {"type": "points", "values": [1, 2]}}},
                {"node_id": "B", "role": "origin", "source": {"type": "follow", "leader": "A", "fidelity": 1.0, "pmf": [0.5, 0.5], "values": {"type": "points", "values": [10, 20]}}}
            ],
            "anomalies": [{"label": 1, "type": "volume_shift", "factor": 3.0, "start": 600, "end": 1200, "targets": ["A:origin"]}]
        }"#;
        let sc = Scenario::from_json(json).unwrap();
        let (trace, labels) = generate_scenario(&sc, None).unwrap();
        let (again, _) = generate_scenario(&sc, None).unwrap();
        assert_eq!(trace, again);
        let (other, _) = generate_scenario(&sc, Some(5)).unwrap();
        assert_ne!(trace, other);
        let a = trace.stream(&StreamKey::new("A", Role::Origin)).unwrap();
        let b = trace.stream(&StreamKey::new("B", Role::Origin)).unwrap();
        // outside the anomaly B mirrors A exactly
        for (x, y) in a.samples().iter().zip(b.samples()).filter(|(x, _)| !(600..1200).contains(&x.timestamp)) {
            assert_eq!(y.value, x.value * 10.0);
        }
        assert_eq!(labels.anomalous_count(), 10);
    }
}
