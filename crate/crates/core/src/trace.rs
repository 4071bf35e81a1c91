//! Traffic traces: per-node count series, CSV ingestion, time-of-day
//! segmentation and time-bucket aggregation.
//!
//! A trace holds one or more streams, each identified by `(node_id, role)`.
//! Samples are kept sorted by `(node_id, role, timestamp)`. Gaps are never
//! filled: two consecutive samples of a stream belong to the same contiguous
//! run only when their timestamps differ by exactly one sample period.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SAMPLE_PERIOD: u64 = 60;

const SECONDS_PER_DAY: i64 = 86_400;
const MINUTES_PER_DAY: u16 = 1440;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: negative traffic value {value}")]
    NegativeValue { line: usize, value: f64 },
    #[error("trace file contains no samples")]
    EmptyFile,
    #[error("invalid trace: {0}")]
    Invalid(String),
    #[error("invalid time-of-day interval: {0}")]
    InvalidInterval(String),
    #[error("invalid bucket configuration: {0}")]
    InvalidBucket(String),
    #[error("no sample falls inside time-of-day interval {0}")]
    EmptySegment(String),
    #[error("trace too short: {len} samples, need at least {need}")]
    TraceTooShort { len: usize, need: usize },
}

pub type Result<T> = std::result::Result<T, TraceError>;

/// Role of a point of presence with respect to the monitored flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Origin,
    Destination,
    Unspecified,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Origin => "origin",
            Role::Destination => "destination",
            Role::Unspecified => "unspecified",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "origin" => Ok(Role::Origin),
            "destination" => Ok(Role::Destination),
            "unspecified" => Ok(Role::Unspecified),
            other => Err(format!("unknown role '{other}'")),
        }
    }
}

/// Unit of the traffic volume per sampling interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Bits,
    #[default]
    Bytes,
    Packets,
    Flows,
}

impl Unit {
    pub fn as_str(&self) -> &'static str {
        match self {
            Unit::Bits => "bits",
            Unit::Bytes => "bytes",
            Unit::Packets => "packets",
            Unit::Flows => "flows",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Unit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "bits" => Ok(Unit::Bits),
            "bytes" => Ok(Unit::Bytes),
            "packets" => Ok(Unit::Packets),
            "flows" => Ok(Unit::Flows),
            other => Err(format!("unknown unit '{other}'")),
        }
    }
}

/// Identifies one stream inside a trace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub node_id: String,
    pub role: Role,
}

impl StreamKey {
    pub fn new(node_id: impl Into<String>, role: Role) -> Self {
        StreamKey { node_id: node_id.into(), role }
    }
}

impl fmt::Display for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node_id, self.role)
    }
}

impl FromStr for StreamKey {
    type Err = String;

    /// Parses `node_id:role`; a bare `node_id` means role `unspecified`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.split_once(':') {
            Some((node, role)) => {
                validate_node_id(node)?;
                Ok(StreamKey::new(node, role.parse()?))
            }
            None => {
                validate_node_id(s)?;
                Ok(StreamKey::new(s, Role::Unspecified))
            }
        }
    }
}

fn validate_node_id(node: &str) -> std::result::Result<(), String> {
    if node.is_empty() {
        return Err("empty node_id".into());
    }
    if !node
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        return Err(format!("node_id '{node}' must match [A-Za-z0-9_-]+"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    /// Seconds since the epoch, UTC.
    pub timestamp: i64,
    pub node_id: String,
    pub role: Role,
    pub value: f64,
}

impl TraceSample {
    pub fn new(timestamp: i64, node_id: impl Into<String>, role: Role, value: f64) -> Self {
        TraceSample { timestamp, node_id: node_id.into(), role, value }
    }

    fn same_stream(&self, other: &TraceSample) -> bool {
        self.node_id == other.node_id && self.role == other.role
    }

    pub fn key(&self) -> StreamKey {
        StreamKey::new(self.node_id.clone(), self.role)
    }
}

/// An immutable, validated collection of traffic samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficTrace {
    samples: Vec<TraceSample>,
    sample_period: u64,
    unit: Unit,
}

impl TrafficTrace {
    /// Builds a trace, sorting samples by `(node_id, role, timestamp)`.
    ///
    /// Rejects empty input, negative or non-finite values, duplicate
    /// timestamps within a stream and timestamps off the sample-period grid.
    pub fn new(mut samples: Vec<TraceSample>, sample_period: u64, unit: Unit) -> Result<Self> {
        if sample_period == 0 {
            return Err(TraceError::Invalid("sample_period must be positive".into()));
        }
        if samples.is_empty() {
            return Err(TraceError::Invalid("trace has no samples".into()));
        }
        if let Some(s) = samples.iter().find(|s| s.value < 0.0 || !s.value.is_finite()) {
            return Err(TraceError::Invalid(format!(
                "value {} at t={} for {}:{} is not a non-negative number",
                s.value, s.timestamp, s.node_id, s.role
            )));
        }
        sort_samples(&mut samples);
        if let Some(i) = first_spacing_violation(&samples, sample_period) {
            let s = &samples[i];
            return Err(TraceError::Invalid(format!(
                "sample at t={} for {}:{} is duplicated or off the {}s grid",
                s.timestamp, s.node_id, s.role, sample_period
            )));
        }
        Ok(TrafficTrace { samples, sample_period, unit })
    }

    pub(crate) fn from_sorted_unchecked(samples: Vec<TraceSample>, sample_period: u64, unit: Unit) -> Self {
        TrafficTrace { samples, sample_period, unit }
    }

    pub fn samples(&self) -> &[TraceSample] {
        &self.samples
    }

    pub fn sample_period(&self) -> u64 {
        self.sample_period
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.value).collect()
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.samples.iter().map(|s| s.timestamp).collect()
    }

    /// Distinct streams in storage order.
    pub fn streams(&self) -> Vec<StreamKey> {
        let mut keys: Vec<StreamKey> = Vec::new();
        for s in &self.samples {
            if keys.last().is_none_or(|k| k.node_id != s.node_id || k.role != s.role) {
                keys.push(s.key());
            }
        }
        keys
    }

    pub fn is_single_stream(&self) -> bool {
        self.samples.windows(2).all(|w| w[0].same_stream(&w[1]))
    }

    /// Sub-trace holding one stream, or `None` when the stream is absent.
    pub fn stream(&self, key: &StreamKey) -> Option<TrafficTrace> {
        let samples: Vec<TraceSample> = self
            .samples
            .iter()
            .filter(|s| s.node_id == key.node_id && s.role == key.role)
            .cloned()
            .collect();
        if samples.is_empty() {
            None
        } else {
            Some(TrafficTrace::from_sorted_unchecked(samples, self.sample_period, self.unit))
        }
    }

    /// Index ranges of maximal contiguous runs (same stream, one period apart).
    pub fn runs(&self) -> Vec<Range<usize>> {
        contiguous_runs(&self.samples, self.sample_period)
    }

    /// Time covered by the trace: `[first timestamp, last timestamp + period)`.
    pub fn span(&self) -> (i64, i64) {
        let lo = self.samples.iter().map(|s| s.timestamp).min().unwrap_or(0);
        let hi = self.samples.iter().map(|s| s.timestamp).max().unwrap_or(0);
        (lo, hi + self.sample_period as i64)
    }

    /// Same samples with new values, keeping order. `values.len()` must match.
    pub(crate) fn with_values(&self, values: &[f64]) -> TrafficTrace {
        debug_assert_eq!(values.len(), self.samples.len());
        let samples = self
            .samples
            .iter()
            .zip(values)
            .map(|(s, &v)| TraceSample { value: v, ..s.clone() })
            .collect();
        TrafficTrace::from_sorted_unchecked(samples, self.sample_period, self.unit)
    }
}

fn sort_samples(samples: &mut [TraceSample]) {
    samples.sort_by(|a, b| {
        a.node_id
            .cmp(&b.node_id)
            .then(a.role.cmp(&b.role))
            .then(a.timestamp.cmp(&b.timestamp))
    });
}

fn first_spacing_violation(samples: &[TraceSample], period: u64) -> Option<usize> {
    let p = period as i64;
    samples.windows(2).position(|w| {
        w[0].same_stream(&w[1]) && {
            let d = w[1].timestamp - w[0].timestamp;
            d <= 0 || d % p != 0
        }
    }).map(|i| i + 1)
}

pub(crate) fn contiguous_runs(samples: &[TraceSample], period: u64) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=samples.len() {
        let breaks = i == samples.len() || {
            let (a, b) = (&samples[i - 1], &samples[i]);
            !a.same_stream(b) || b.timestamp - a.timestamp != period as i64
        };
        if breaks {
            if i > start {
                runs.push(start..i);
            }
            start = i;
        }
    }
    runs
}

/// Half-open minute-of-day window `[start_minute, end_minute)`.
///
/// `start_minute > end_minute` wraps past midnight. Minutes are computed in
/// UTC shifted by `utc_offset_minutes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeOfDayInterval {
    pub start_minute: u16,
    pub end_minute: u16,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub utc_offset_minutes: i32,
}

impl TimeOfDayInterval {
    pub fn new(start_minute: u16, end_minute: u16, label: impl Into<String>) -> Result<Self> {
        if start_minute >= MINUTES_PER_DAY {
            return Err(TraceError::InvalidInterval(format!(
                "start_minute {start_minute} must be < 1440"
            )));
        }
        if end_minute > MINUTES_PER_DAY {
            return Err(TraceError::InvalidInterval(format!(
                "end_minute {end_minute} must be <= 1440"
            )));
        }
        if start_minute == end_minute {
            return Err(TraceError::InvalidInterval("empty interval".into()));
        }
        Ok(TimeOfDayInterval {
            start_minute,
            end_minute,
            label: label.into(),
            utc_offset_minutes: 0,
        })
    }

    pub fn whole_day() -> Self {
        TimeOfDayInterval {
            start_minute: 0,
            end_minute: MINUTES_PER_DAY,
            label: "all-day".into(),
            utc_offset_minutes: 0,
        }
    }

    pub fn with_utc_offset(mut self, minutes: i32) -> Self {
        self.utc_offset_minutes = minutes;
        self
    }

    pub fn wraps(&self) -> bool {
        self.start_minute > self.end_minute
    }

    pub fn is_whole_day(&self) -> bool {
        self.start_minute == 0 && self.end_minute == MINUTES_PER_DAY
    }

    pub fn validate(&self) -> Result<()> {
        TimeOfDayInterval::new(self.start_minute, self.end_minute, "").map(|_| ())
    }

    pub fn contains_minute(&self, minute: u16) -> bool {
        if self.wraps() {
            minute >= self.start_minute || minute < self.end_minute
        } else {
            minute >= self.start_minute && minute < self.end_minute
        }
    }

    pub fn minute_of_day(&self, timestamp: i64) -> u16 {
        let local = timestamp + self.utc_offset_minutes as i64 * 60;
        (local.rem_euclid(SECONDS_PER_DAY) / 60) as u16
    }

    pub fn contains(&self, timestamp: i64) -> bool {
        self.contains_minute(self.minute_of_day(timestamp))
    }
}

impl Default for TimeOfDayInterval {
    fn default() -> Self {
        TimeOfDayInterval::whole_day()
    }
}

impl fmt::Display for TimeOfDayInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hm = |m: u16| format!("{:02}:{:02}", m / 60, m % 60);
        write!(f, "[{}, {})", hm(self.start_minute), hm(self.end_minute))?;
        if !self.label.is_empty() {
            write!(f, " {}", self.label)?;
        }
        Ok(())
    }
}

impl FromStr for TimeOfDayInterval {
    type Err = TraceError;

    /// Accepts `START-END` in minutes (`480-540`) or clock time (`08:00-09:00`).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || TraceError::InvalidInterval(format!("cannot parse '{s}'"));
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        let minute = |t: &str| -> Option<u16> {
            match t.trim().split_once(':') {
                Some((h, m)) => Some(h.parse::<u16>().ok()? * 60 + m.parse::<u16>().ok()?),
                None => t.trim().parse().ok(),
            }
        };
        let start = minute(a).ok_or_else(bad)?;
        let end = minute(b).ok_or_else(bad)?;
        TimeOfDayInterval::new(start, end, s.trim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Aggregation::Sum),
            "mean" => Ok(Aggregation::Mean),
            other => Err(format!("unknown aggregation '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketConfig {
    /// Raw samples per bucket.
    pub bucket_length: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl BucketConfig {
    pub fn new(bucket_length: usize, aggregation: Aggregation) -> Result<Self> {
        let cfg = BucketConfig { bucket_length, aggregation };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn identity() -> Self {
        BucketConfig { bucket_length: 1, aggregation: Aggregation::Sum }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bucket_length == 0 {
            return Err(TraceError::InvalidBucket("bucket_length must be >= 1".into()));
        }
        Ok(())
    }
}

/// Keeps the samples whose minute of day falls inside `interval`.
///
/// Days become separate contiguous runs because the timestamps between
/// them are missing.
pub fn segment_by_time_of_day(trace: &TrafficTrace, interval: &TimeOfDayInterval) -> Result<TrafficTrace> {
    interval.validate()?;
    if interval.is_whole_day() {
        return Ok(trace.clone());
    }
    let samples: Vec<TraceSample> = trace
        .samples
        .iter()
        .filter(|s| interval.contains(s.timestamp))
        .cloned()
        .collect();
    if samples.is_empty() {
        return Err(TraceError::EmptySegment(interval.to_string()));
    }
    Ok(TrafficTrace::from_sorted_unchecked(samples, trace.sample_period, trace.unit))
}

/// Aggregates consecutive samples into buckets of `cfg.bucket_length`.
///
/// Buckets never cross a gap or a stream boundary; the trailing partial
/// bucket of every contiguous run is dropped. Each bucket is stamped with
/// the timestamp of its first raw sample.
pub fn aggregate_buckets(trace: &TrafficTrace, cfg: &BucketConfig) -> Result<TrafficTrace> {
    cfg.validate()?;
    let len = cfg.bucket_length;
    let mut out = Vec::with_capacity(trace.len() / len);
    for run in trace.runs() {
        for chunk in trace.samples[run].chunks_exact(len) {
            let total: f64 = chunk.iter().map(|s| s.value).sum();
            let value = match cfg.aggregation {
                Aggregation::Sum => total,
                Aggregation::Mean => total / len as f64,
            };
            out.push(TraceSample { value, ..chunk[0].clone() });
        }
    }
    if out.is_empty() {
        return Err(TraceError::TraceTooShort { len: trace.len(), need: len });
    }
    Ok(TrafficTrace::from_sorted_unchecked(
        out,
        trace.sample_period * len as u64,
        trace.unit,
    ))
}

/// Column names and metadata overrides used when reading a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSchema {
    pub timestamp: String,
    pub node_id: String,
    pub role: String,
    pub value: String,
    /// Overrides the `sample_period` from the metadata line.
    pub sample_period: Option<u64>,
    /// Overrides the `unit` from the metadata line.
    pub unit: Option<Unit>,
}

impl Default for TraceSchema {
    fn default() -> Self {
        TraceSchema {
            timestamp: "timestamp".into(),
            node_id: "node_id".into(),
            role: "role".into(),
            value: "value".into(),
            sample_period: None,
            unit: None,
        }
    }
}

pub fn load_trace(path: impl AsRef<Path>, schema: &TraceSchema) -> Result<TrafficTrace> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_trace(file, schema)
}

/// Reads the trace CSV format.
///
/// An optional first line `# sample_period=60 unit=bytes` carries metadata;
/// it is followed by a header naming the schema columns and one row per
/// sample.
pub fn read_trace<R: Read>(reader: R, schema: &TraceSchema) -> Result<TrafficTrace> {
    let mut reader = BufReader::new(reader);
    let io_err = |source| TraceError::Io { path: "<input>".into(), source };
    let mut first = String::new();
    reader.read_line(&mut first).map_err(io_err)?;

    let mut period = DEFAULT_SAMPLE_PERIOD;
    let mut unit = Unit::default();
    let mut line_offset = 0;
    let mut header_line = Some(first.clone());
    if let Some(meta) = first.trim_start().strip_prefix('#') {
        line_offset = 1;
        header_line = None;
        for kv in meta.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| TraceError::MalformedRow {
                line: 1,
                reason: format!("metadata entry '{kv}' is not key=value"),
            })?;
            match k {
                "sample_period" => {
                    period = v.parse().map_err(|_| TraceError::MalformedRow {
                        line: 1,
                        reason: format!("bad sample_period '{v}'"),
                    })?
                }
                "unit" => {
                    unit = v.parse().map_err(|e: String| TraceError::MalformedRow { line: 1, reason: e })?
                }
                _ => {}
            }
        }
    }
    if let Some(p) = schema.sample_period {
        period = p;
    }
    if let Some(u) = schema.unit {
        unit = u;
    }
    if period == 0 {
        return Err(TraceError::MalformedRow { line: 1, reason: "sample_period must be positive".into() });
    }

    let body: Box<dyn Read> = match header_line {
        Some(h) => Box::new(std::io::Cursor::new(h.into_bytes()).chain(reader)),
        None => Box::new(reader),
    };
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body);
    let headers = csv.headers().map_err(|e| TraceError::MalformedRow {
        line: line_offset + 1,
        reason: e.to_string(),
    })?;
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| TraceError::MalformedRow {
            line: line_offset + 1,
            reason: format!("missing column '{name}'"),
        })
    };
    let (c_ts, c_node, c_role, c_val) = (
        column(&schema.timestamp)?,
        column(&schema.node_id)?,
        column(&schema.role)?,
        column(&schema.value)?,
    );

    let mut rows: Vec<(usize, TraceSample)> = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| TraceError::MalformedRow {
            line: e.position().map_or(0, |p| p.line() as usize) + line_offset,
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize) + line_offset;
        let malformed = |reason: String| TraceError::MalformedRow { line, reason };
        let field = |i: usize| record.get(i).ok_or_else(|| malformed(format!("missing field {i}")));
        let timestamp: i64 = field(c_ts)?
            .parse()
            .map_err(|_| malformed(format!("bad timestamp '{}'", &record[c_ts])))?;
        let node_id = field(c_node)?;
        validate_node_id(node_id).map_err(malformed)?;
        let role: Role = field(c_role)?.parse().map_err(malformed)?;
        let value: f64 = field(c_val)?
            .parse()
            .map_err(|_| malformed(format!("bad value '{}'", &record[c_val])))?;
        if !value.is_finite() {
            return Err(malformed(format!("non-finite value '{}'", &record[c_val])));
        }
        if value < 0.0 {
            return Err(TraceError::NegativeValue { line, value });
        }
        rows.push((line, TraceSample::new(timestamp, node_id, role, value)));
    }
    if rows.is_empty() {
        return Err(TraceError::EmptyFile);
    }

    rows.sort_by(|(_, a), (_, b)| {
        a.node_id
            .cmp(&b.node_id)
            .then(a.role.cmp(&b.role))
            .then(a.timestamp.cmp(&b.timestamp))
    });
    let p = period as i64;
    for w in rows.windows(2) {
        let ((_, a), (line, b)) = (&w[0], &w[1]);
        if !a.same_stream(b) {
            continue;
        }
        let d = b.timestamp - a.timestamp;
        if d == 0 {
            return Err(TraceError::MalformedRow {
                line: *line,
                reason: format!("duplicate sample ({}, {}, {})", b.node_id, b.role, b.timestamp),
            });
        }
        if d % p != 0 {
            return Err(TraceError::MalformedRow {
                line: *line,
                reason: format!("timestamp {} is off the {}s sampling grid", b.timestamp, period),
            });
        }
    }
    let samples = rows.into_iter().map(|(_, s)| s).collect();
    Ok(TrafficTrace::from_sorted_unchecked(samples, period, unit))
}

/// Writes the trace CSV format, metadata line included.
pub fn write_trace<W: Write>(trace: &TrafficTrace, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# sample_period={} unit={}", trace.sample_period, trace.unit)?;
    writeln!(out, "timestamp,node_id,role,value")?;
    for s in &trace.samples {
        writeln!(out, "{},{},{},{}", s.timestamp, s.node_id, s.role, s.value)?;
    }
    out.flush()
}

pub fn save_trace(trace: &TrafficTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| TraceError::Io { path: path.display().to_string(), source };
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_trace(trace, std::io::BufWriter::new(file)).map_err(io_err)
}
