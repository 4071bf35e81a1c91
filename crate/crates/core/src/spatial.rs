//! Spatio-temporal detection over a group of network elements.
//!
//! Member streams are time-aligned into vectors, each coordinate is
//! quantized with its own small alphabet and the tuple is encoded as one
//! symbol of the product alphabet (mixed radix, first member least
//! significant). Either temporal detector then runs on the joint symbols,
//! so spatial correlation and temporal structure are both kept.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::empirical::{Divergence, MeasureError};
use crate::model_free::ModelFreeDetector;
use crate::mmp::MmpDetector;
use crate::quantizer::{Alphabet, Symbol};
use crate::reference::{AlphabetChoice, TrainError, TrainingSummary, DEFAULT_EPSILON, DEFAULT_MIN_PER_SYMBOL};
use crate::trace::{self, Aggregation, BucketConfig, StreamKey, TimeOfDayInterval, TrafficTrace};
use crate::window::{self, DetectError, DetectorKind, SymbolStream, WindowDetector, WindowReport};

pub const DEFAULT_PER_NODE_K: usize = 3;
pub const DEFAULT_MAX_JOINT: usize = 4096;

#[derive(Debug, Error)]
pub enum SpatialError {
    #[error("invalid subnet: {0}")]
    InvalidSpec(String),
    #[error("stream {0} missing from trace")]
    MissingMember(String),
    #[error("member streams have different sample periods")]
    PeriodMismatch,
    #[error("member streams never overlap in time")]
    NoOverlap,
    #[error("expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Trace(#[from] trace::TraceError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Detect(#[from] DetectError),
}

fn default_max_joint() -> usize {
    DEFAULT_MAX_JOINT
}

/// Group of monitored streams and the per-node alphabet size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetSpec {
    pub name: String,
    #[serde(with = "member_strings")]
    pub members: Vec<StreamKey>,
    pub per_node_k: usize,
    #[serde(default = "default_max_joint")]
    pub max_joint: usize,
}

mod member_strings {
    use super::StreamKey;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(members: &[StreamKey], s: S) -> Result<S::Ok, S::Error> {
        members.iter().map(|m| m.to_string()).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<StreamKey>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}

impl SubnetSpec {
    pub fn new(name: impl Into<String>, members: Vec<StreamKey>, per_node_k: usize) -> Result<Self, SpatialError> {
        let spec = SubnetSpec { name: name.into(), members, per_node_k, max_joint: DEFAULT_MAX_JOINT };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SpatialError> {
        if self.members.is_empty() {
            return Err(SpatialError::InvalidSpec("no members".into()));
        }
        let distinct: HashSet<&StreamKey> = self.members.iter().collect();
        if distinct.len() != self.members.len() {
            return Err(SpatialError::InvalidSpec("duplicate members".into()));
        }
        if self.per_node_k < 2 {
            return Err(SpatialError::InvalidSpec("per_node_k must be >= 2".into()));
        }
        match self.per_node_k.checked_pow(self.members.len() as u32) {
            Some(size) if size <= self.max_joint => Ok(()),
            _ => Err(SpatialError::InvalidSpec(format!(
                "joint alphabet {}^{} exceeds the limit of {}",
                self.per_node_k,
                self.members.len(),
                self.max_joint
            ))),
        }
    }
}

/// Time-aligned observations; `values[t][d]` is member `d` at `timestamps[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSeries {
    pub timestamps: Vec<i64>,
    pub values: Vec<Vec<f64>>,
    pub sample_period: u64,
}

impl VectorSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    fn runs(&self) -> Vec<std::ops::Range<usize>> {
        SymbolStream::from_timed(vec![0; self.len()], self.timestamps.clone(), self.sample_period).runs
    }

    /// Values of one member, in time order.
    pub fn column(&self, d: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[d]).collect()
    }

    /// Bucket aggregation per coordinate; buckets stay inside runs.
    pub fn aggregate(&self, cfg: &BucketConfig) -> Result<VectorSeries, trace::TraceError> {
        cfg.validate()?;
        let len = cfg.bucket_length;
        if len == 1 {
            return Ok(self.clone());
        }
        let mut out = VectorSeries {
            timestamps: Vec::new(),
            values: Vec::new(),
            sample_period: self.sample_period * len as u64,
        };
        for run in self.runs() {
            let mut start = run.start;
            while start + len <= run.end {
                let mut acc = vec![0.0; self.dim()];
                for v in &self.values[start..start + len] {
                    acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
                }
                if cfg.aggregation == Aggregation::Mean {
                    acc.iter_mut().for_each(|a| *a /= len as f64);
                }
                out.timestamps.push(self.timestamps[start]);
                out.values.push(acc);
                start += len;
            }
        }
        if out.is_empty() {
            return Err(trace::TraceError::TraceTooShort { len: self.len(), need: len });
        }
        Ok(out)
    }
}

/// Joins single-stream traces on time: a timestamp of the first trace is
/// kept when every other trace has a sample within `tolerance` seconds.
pub fn align_streams(traces: &[TrafficTrace], tolerance: u64) -> Result<VectorSeries, SpatialError> {
    let first = traces.first().ok_or_else(|| SpatialError::InvalidSpec("no streams".into()))?;
    let period = first.sample_period();
    if traces.iter().any(|t| t.sample_period() != period) {
        return Err(SpatialError::PeriodMismatch);
    }
    let columns: Vec<(Vec<i64>, Vec<f64>)> = traces.iter().map(|t| (t.timestamps(), t.values())).collect();
    let tol = tolerance as i64;
    let mut out = VectorSeries { timestamps: Vec::new(), values: Vec::new(), sample_period: period };
    'anchor: for (t, v0) in columns[0].0.iter().zip(&columns[0].1) {
        let mut row = Vec::with_capacity(traces.len());
        row.push(*v0);
        for (ts, vs) in &columns[1..] {
            // nearest sample by time
            let pos = ts.partition_point(|x| *x < *t);
            let best = [pos.checked_sub(1), Some(pos)]
                .into_iter()
                .flatten()
                .filter(|&i| i < ts.len())
                .min_by_key(|&i| (ts[i] - t).abs());
            match best {
                Some(i) if (ts[i] - t).abs() <= tol => row.push(vs[i]),
                _ => continue 'anchor,
            }
        }
        out.timestamps.push(*t);
        out.values.push(row);
    }
    if out.is_empty() {
        return Err(SpatialError::NoOverlap);
    }
    Ok(out)
}

/// Mixed-radix product of per-member alphabets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointAlphabet {
    sizes: Vec<usize>,
}

impl JointAlphabet {
    pub fn new(sizes: Vec<usize>) -> Self {
        JointAlphabet { sizes }
    }

    pub fn size(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// `sum_d s_d * prod_{d' < d} K_d'`.
    pub fn encode(&self, symbols: &[Symbol]) -> Symbol {
        let mut code = 0;
        let mut radix = 1;
        for (&s, &k) in symbols.iter().zip(&self.sizes) {
            code += s * radix;
            radix *= k;
        }
        code
    }

    pub fn decode(&self, mut code: Symbol) -> Vec<Symbol> {
        self.sizes
            .iter()
            .map(|&k| {
                let s = code % k;
                code /= k;
                s
            })
            .collect()
    }

    /// Marginal of member `d` from a probability vector over joint symbols.
    pub fn marginal(&self, joint: &[f64], d: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.sizes[d]];
        for (code, &p) in joint.iter().enumerate() {
            out[self.decode(code)[d]] += p;
        }
        out
    }
}

/// Quantizes every coordinate and encodes the tuple as one joint symbol.
pub fn joint_symbolize(vectors: &VectorSeries, alphabets: &[Alphabet]) -> Result<SymbolStream, SpatialError> {
    if vectors.dim() != alphabets.len() {
        return Err(SpatialError::DimensionMismatch { expected: alphabets.len(), got: vectors.dim() });
    }
    let joint = JointAlphabet::new(alphabets.iter().map(Alphabet::size).collect());
    let symbols = vectors
        .values
        .iter()
        .map(|v| {
            let s: Vec<Symbol> = v.iter().zip(alphabets).map(|(&x, a)| a.quantize(x)).collect();
            joint.encode(&s)
        })
        .collect();
    Ok(SymbolStream::from_timed(symbols, vectors.timestamps.clone(), vectors.sample_period))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointDetector {
    ModelFree(ModelFreeDetector),
    Mmp(MmpDetector),
}

impl JointDetector {
    pub fn as_window_detector(&self) -> &dyn WindowDetector {
        match self {
            JointDetector::ModelFree(d) => d,
            JointDetector::Mmp(d) => d,
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            JointDetector::ModelFree(d) => d.validate(),
            JointDetector::Mmp(d) => d.validate(),
        }
    }
}

impl WindowDetector for JointDetector {
    fn kind(&self) -> DetectorKind {
        self.as_window_detector().kind()
    }

    fn window_n(&self) -> usize {
        self.as_window_detector().window_n()
    }

    fn alphabet_size(&self) -> usize {
        self.as_window_detector().alphabet_size()
    }

    fn threshold(&self) -> f64 {
        self.as_window_detector().threshold()
    }

    fn statistic(&self, window: &[Symbol]) -> Result<Divergence, MeasureError> {
        self.as_window_detector().statistic(window)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubnetConfig {
    pub detector: DetectorKind,
    pub alphabet: AlphabetChoice,
    pub bucket: BucketConfig,
    pub window_n: usize,
    pub beta: f64,
    pub interval: TimeOfDayInterval,
    pub epsilon: f64,
    /// Alignment tolerance in seconds.
    pub tolerance: u64,
    pub min_per_symbol: usize,
}

impl Default for SubnetConfig {
    fn default() -> Self {
        SubnetConfig {
            detector: DetectorKind::ModelFree,
            alphabet: AlphabetChoice::Quantile,
            bucket: BucketConfig::identity(),
            window_n: crate::model_free::DEFAULT_WINDOW_N,
            beta: 0.01,
            interval: TimeOfDayInterval::whole_day(),
            epsilon: DEFAULT_EPSILON,
            tolerance: 0,
            min_per_symbol: DEFAULT_MIN_PER_SYMBOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetReference {
    pub subnet: SubnetSpec,
    pub alphabets: Vec<Alphabet>,
    pub bucket: BucketConfig,
    pub interval: TimeOfDayInterval,
    pub tolerance: u64,
    pub detector: JointDetector,
}

impl SubnetReference {
    pub fn validate(&self) -> Result<(), String> {
        self.subnet.validate().map_err(|e| e.to_string())?;
        if self.alphabets.len() != self.subnet.members.len() {
            return Err("one alphabet per member required".into());
        }
        self.detector.validate()?;
        let joint = self.joint_alphabet().size();
        if joint != self.detector.alphabet_size() {
            return Err(format!(
                "joint alphabet has {joint} symbols, detector expects {}",
                self.detector.alphabet_size()
            ));
        }
        self.bucket.validate().map_err(|e| e.to_string())?;
        self.interval.validate().map_err(|e| e.to_string())
    }

    pub fn joint_alphabet(&self) -> JointAlphabet {
        JointAlphabet::new(self.alphabets.iter().map(Alphabet::size).collect())
    }

    /// Member extraction, segmentation, alignment and bucketing.
    fn vectors(&self, trace: &TrafficTrace) -> Result<VectorSeries, SpatialError> {
        member_vectors(&self.subnet, trace, &self.interval, &self.bucket, self.tolerance)
    }

    pub fn symbolize(&self, trace: &TrafficTrace) -> Result<SymbolStream, SpatialError> {
        joint_symbolize(&self.vectors(trace)?, &self.alphabets)
    }
}

fn member_vectors(
    spec: &SubnetSpec,
    trace: &TrafficTrace,
    interval: &TimeOfDayInterval,
    bucket: &BucketConfig,
    tolerance: u64,
) -> Result<VectorSeries, SpatialError> {
    let members = spec
        .members
        .iter()
        .map(|m| {
            let stream = trace.stream(m).ok_or_else(|| SpatialError::MissingMember(m.to_string()))?;
            Ok(trace::segment_by_time_of_day(&stream, interval)?)
        })
        .collect::<Result<Vec<_>, SpatialError>>()?;
    Ok(align_streams(&members, tolerance)?.aggregate(bucket)?)
}

pub fn train_subnet(
    spec: &SubnetSpec,
    trace: &TrafficTrace,
    cfg: &SubnetConfig,
) -> Result<(SubnetReference, TrainingSummary), SpatialError> {
    spec.validate()?;
    let vectors = member_vectors(spec, trace, &cfg.interval, &cfg.bucket, cfg.tolerance)?;
    let alphabets = (0..spec.members.len())
        .map(|d| cfg.alphabet.build(&vectors.column(d), spec.per_node_k).map_err(TrainError::from))
        .collect::<Result<Vec<_>, _>>()?;
    let joint = JointAlphabet::new(alphabets.iter().map(Alphabet::size).collect());
    let k = joint.size();
    let stream = joint_symbolize(&vectors, &alphabets)?;
    let detector = match cfg.detector {
        DetectorKind::ModelFree => {
            let need = cfg.min_per_symbol * k;
            if stream.len() < need {
                return Err(TrainError::InsufficientTraining { have: stream.len(), need }.into());
            }
            JointDetector::ModelFree(ModelFreeDetector::fit(
                stream.run_slices(),
                k,
                cfg.window_n,
                cfg.beta,
                cfg.epsilon,
            )?)
        }
        DetectorKind::Mmp => {
            let transitions: usize = stream.runs.iter().map(|r| r.len() - 1).sum();
            let need = cfg.min_per_symbol * k * k;
            if transitions < need {
                return Err(TrainError::InsufficientTraining { have: transitions, need }.into());
            }
            JointDetector::Mmp(MmpDetector::fit(stream.run_slices(), k, cfg.window_n, cfg.beta, cfg.epsilon)?)
        }
        DetectorKind::MeanBaseline => {
            return Err(SpatialError::InvalidSpec("subnet detector must be model_free or mmp".into()))
        }
    };
    let mut seen = vec![false; k];
    stream.symbols.iter().for_each(|&s| seen[s] = true);
    let summary = TrainingSummary {
        edges: alphabets.iter().flat_map(|a| a.edges().iter().copied()).collect(),
        requested_k: spec.per_node_k.pow(spec.members.len() as u32),
        effective_k: k,
        training_samples: stream.len(),
        unseen_symbols: seen.iter().filter(|s| !**s).count(),
        threshold: detector.threshold(),
    };
    let reference = SubnetReference {
        subnet: spec.clone(),
        alphabets,
        bucket: cfg.bucket,
        interval: cfg.interval.clone(),
        tolerance: cfg.tolerance,
        detector,
    };
    Ok((reference, summary))
}

pub fn detect_subnet(
    reference: &SubnetReference,
    trace: &TrafficTrace,
    stride: usize,
) -> Result<Vec<WindowReport>, SpatialError> {
    let stream = reference.symbolize(trace)?;
    Ok(window::detect_stream(&reference.detector, &stream, stride)?)
}

/// Trains on `reference` traffic and scores `live` traffic in one call.
pub fn train_and_detect_subnet(
    spec: &SubnetSpec,
    reference: &TrafficTrace,
    live: &TrafficTrace,
    cfg: &SubnetConfig,
    stride: usize,
) -> Result<Vec<WindowReport>, SpatialError> {
    let (trained, _) = train_subnet(spec, reference, cfg)?;
    detect_subnet(&trained, live, stride)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirical::type_of;
    use crate::trace::{Role, TraceSample, Unit};
    use proptest::prelude::*;

    fn stream(node: &str, ts: &[i64], values: &[f64]) -> TrafficTrace {
        let samples = ts
            .iter()
            .zip(values)
            .map(|(&t, &v)| TraceSample::new(t, node, Role::Origin, v))
            .collect();
        TrafficTrace::new(samples, 60, Unit::Bytes).unwrap()
    }

    #[test]
    fn spec_validation() {
        let a = StreamKey::new("A", Role::Origin);
        let b = StreamKey::new("B", Role::Destination);
        assert!(SubnetSpec::new("s", vec![a.clone(), b.clone()], 3).is_ok());
        assert!(SubnetSpec::new("s", vec![], 3).is_err());
        assert!(SubnetSpec::new("s", vec![a.clone(), a.clone()], 3).is_err());
        let many: Vec<StreamKey> = (0..8).map(|i| StreamKey::new(format!("N{i}"), Role::Origin)).collect();
        assert!(matches!(SubnetSpec::new("s", many, 3), Err(SpatialError::InvalidSpec(_))));
        let json = serde_json::to_string(&SubnetSpec::new("s", vec![a, b], 3).unwrap()).unwrap();
        assert!(json.contains(r#"["A:origin","B:destination"]"#));
    }

    #[test]
    fn align_examples() {
        let ts: Vec<i64> = (0..100).map(|i| i * 60).collect();
        let v = vec![1.0; 100];
        let aligned = align_streams(&[stream("A", &ts, &v), stream("B", &ts, &v)], 0).unwrap();
        assert_eq!(aligned.len(), 100);

        let shifted: Vec<i64> = ts.iter().map(|t| t + 30).collect();
        assert!(matches!(
            align_streams(&[stream("A", &ts, &v), stream("B", &shifted, &v)], 10),
            Err(SpatialError::NoOverlap)
        ));
        assert_eq!(align_streams(&[stream("A", &ts, &v), stream("B", &shifted, &v)], 30).unwrap().len(), 100);

        let a = stream("A", &[0, 60, 120], &[1.0, 2.0, 3.0]);
        let b = stream("B", &[0, 120], &[10.0, 30.0]);
        let aligned = align_streams(&[a, b], 0).unwrap();
        assert_eq!(aligned.timestamps, vec![0, 120]);
        assert_eq!(aligned.values, vec![vec![1.0, 10.0], vec![3.0, 30.0]]);
        // the hole at 60 splits the series
        let s = joint_symbolize(&aligned, &[Alphabet::from_edges(vec![2.0]).unwrap(), Alphabet::from_edges(vec![20.0]).unwrap()]).unwrap();
        assert_eq!(s.runs.len(), 2);
    }

    #[test]
    fn mixed_radix() {
        let j = JointAlphabet::new(vec![3, 3]);
        assert_eq!(j.encode(&[2, 1]), 5);
        assert_eq!(j.encode(&[0, 0]), 0);
        assert_eq!(JointAlphabet::new(vec![3, 3, 3]).size(), 27);
        assert_eq!(j.decode(5), vec![2, 1]);
    }

    #[test]
    fn dimension_mismatch() {
        let vs = VectorSeries { timestamps: vec![0], values: vec![vec![1.0, 2.0]], sample_period: 60 };
        let a = Alphabet::from_edges(vec![1.0]).unwrap();
        assert!(matches!(joint_symbolize(&vs, &[a]), Err(SpatialError::DimensionMismatch { .. })));
    }

    #[test]
    fn vector_buckets_follow_runs() {
        let vs = VectorSeries {
            timestamps: vec![0, 60, 120, 300, 360],
            values: vec![vec![1.0, 2.0]; 5],
            sample_period: 60,
        };
        let b = vs.aggregate(&BucketConfig::new(2, Aggregation::Sum).unwrap()).unwrap();
        assert_eq!(b.timestamps, vec![0, 300]);
        assert_eq!(b.values, vec![vec![2.0, 4.0]; 2]);
        assert_eq!(b.sample_period, 120);
    }

    proptest! {
        #[test]
        fn encode_decode_bijection(sizes in prop::collection::vec(2usize..5, 1..5)) {
            let j = JointAlphabet::new(sizes);
            let mut seen = HashSet::new();
            for code in 0..j.size() {
                let s = j.decode(code);
                prop_assert!(s.iter().zip(j.sizes()).all(|(a, k)| a < k));
                prop_assert_eq!(j.encode(&s), code);
                prop_assert!(seen.insert(s));
            }
        }

        #[test]
        fn joint_marginal_recovers_member_type(
            rows in prop::collection::vec(prop::collection::vec(0usize..3, 3), 1..100),
        ) {
            let j = JointAlphabet::new(vec![3, 3, 3]);
            let joint: Vec<usize> = rows.iter().map(|r| j.encode(r)).collect();
            let jt = type_of(&joint, 27).unwrap();
            for d in 0..3 {
                let member: Vec<usize> = rows.iter().map(|r| r[d]).collect();
                let mt = type_of(&member, 3).unwrap();
                for (a, b) in j.marginal(jt.probs(), d).iter().zip(mt.probs()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
