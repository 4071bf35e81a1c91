//! Sliding detection windows over symbol streams and the per-window report.

use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::empirical::{Divergence, MeasureError};
use crate::quantizer::{Alphabet, Symbol};
use crate::trace::TrafficTrace;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("window has {got} symbols, reference expects {expected}")]
    WindowLengthMismatch { got: usize, expected: usize },
    #[error("trace too short: no contiguous run holds a {window_n}-sample window (longest run {longest})")]
    TraceTooShort { window_n: usize, longest: usize },
    #[error("stride must be positive")]
    InvalidStride,
    #[error("detection needs a single stream, trace has {0}")]
    MultipleStreams(usize),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    ModelFree,
    Mmp,
    /// Contrast detector on window means, see [`crate::eval`].
    MeanBaseline,
}

impl DetectorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DetectorKind::ModelFree => "model_free",
            DetectorKind::Mmp => "mmp",
            DetectorKind::MeanBaseline => "mean_baseline",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "model_free" | "model-free" => Ok(DetectorKind::ModelFree),
            "mmp" => Ok(DetectorKind::Mmp),
            "mean_baseline" => Ok(DetectorKind::MeanBaseline),
            other => Err(format!("unknown detector '{other}'")),
        }
    }
}

/// Verdict for one detection window. `window_end` is exclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub window_start: i64,
    pub window_end: i64,
    pub statistic: Divergence,
    pub eta: f64,
    pub is_anomaly: bool,
    pub detector: DetectorKind,
}

impl WindowReport {
    pub fn new(window_start: i64, window_end: i64, statistic: Divergence, eta: f64, detector: DetectorKind) -> Self {
        WindowReport {
            window_start,
            window_end,
            statistic,
            eta,
            is_anomaly: statistic.exceeds(eta),
            detector,
        }
    }
}

/// Something that scores a fixed-length window of symbols.
pub trait WindowDetector {
    fn kind(&self) -> DetectorKind;
    fn window_n(&self) -> usize;
    /// Alphabet size the detector was trained on.
    fn alphabet_size(&self) -> usize;
    fn threshold(&self) -> f64;
    fn statistic(&self, window: &[Symbol]) -> Result<Divergence, MeasureError>;

    fn score(&self, window: &[Symbol]) -> Result<(Divergence, f64), DetectError> {
        if window.len() != self.window_n() {
            return Err(DetectError::WindowLengthMismatch { got: window.len(), expected: self.window_n() });
        }
        Ok((self.statistic(window)?, self.threshold()))
    }
}

/// Symbols with their timestamps, split into contiguous runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolStream {
    pub symbols: Vec<Symbol>,
    pub timestamps: Vec<i64>,
    pub runs: Vec<Range<usize>>,
    pub sample_period: u64,
}

impl SymbolStream {
    pub fn from_trace(trace: &TrafficTrace, alphabet: &Alphabet) -> Self {
        SymbolStream {
            symbols: trace.samples().iter().map(|s| alphabet.quantize(s.value)).collect(),
            timestamps: trace.timestamps(),
            runs: trace.runs(),
            sample_period: trace.sample_period(),
        }
    }

    /// Builds a stream from time-ordered symbols; runs break wherever the
    /// timestamp step differs from `sample_period`.
    pub fn from_timed(symbols: Vec<Symbol>, timestamps: Vec<i64>, sample_period: u64) -> Self {
        debug_assert_eq!(symbols.len(), timestamps.len());
        let mut runs = Vec::new();
        let mut start = 0;
        for i in 1..=timestamps.len() {
            if i == timestamps.len() || timestamps[i] - timestamps[i - 1] != sample_period as i64 {
                if i > start {
                    runs.push(start..i);
                }
                start = i;
            }
        }
        SymbolStream { symbols, timestamps, runs, sample_period }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn run_slices(&self) -> impl Iterator<Item = &[Symbol]> {
        self.runs.iter().map(|r| &self.symbols[r.clone()])
    }

    pub fn longest_run(&self) -> usize {
        self.runs.iter().map(|r| r.len()).max().unwrap_or(0)
    }
}

/// Start indices of `n`-long windows advanced by `stride` inside each run.
pub fn sliding_windows(runs: &[Range<usize>], n: usize, stride: usize) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    for run in runs {
        if run.len() < n || n == 0 {
            continue;
        }
        let mut start = run.start;
        while start + n <= run.end {
            out.push(start..start + n);
            start += stride;
        }
    }
    out
}

/// Scores every window of `stream`, in time order.
pub fn detect_stream<D: WindowDetector + ?Sized>(
    detector: &D,
    stream: &SymbolStream,
    stride: usize,
) -> Result<Vec<WindowReport>, DetectError> {
    if stride == 0 {
        return Err(DetectError::InvalidStride);
    }
    let n = detector.window_n();
    let windows = sliding_windows(&stream.runs, n, stride);
    if windows.is_empty() {
        return Err(DetectError::TraceTooShort { window_n: n, longest: stream.longest_run() });
    }
    let period = stream.sample_period as i64;
    let mut reports = windows
        .into_iter()
        .map(|w| {
            let (stat, eta) = detector.score(&stream.symbols[w.clone()])?;
            Ok(WindowReport::new(
                stream.timestamps[w.start],
                stream.timestamps[w.end - 1] + period,
                stat,
                eta,
                detector.kind(),
            ))
        })
        .collect::<Result<Vec<_>, DetectError>>()?;
    reports.sort_by_key(|r| (r.window_start, r.window_end));
    Ok(reports)
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("reports line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const REPORT_HEADER: &str = "window_start,window_end,detector,statistic,eta,is_anomaly";
pub const PLOT_HEADER: &str = "window_start,statistic,eta,is_anomaly";

pub fn write_reports<W: Write>(reports: &[WindowReport], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.window_start, r.window_end, r.detector, r.statistic, r.eta, r.is_anomaly
        )?;
    }
    out.flush()
}

/// Plot-ready series, one row per window.
pub fn write_plot_data<W: Write>(reports: &[WindowReport], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{PLOT_HEADER}")?;
    for r in reports {
        writeln!(out, "{},{},{},{}", r.window_start, r.statistic, r.eta, r.is_anomaly)?;
    }
    out.flush()
}

pub fn read_reports<R: Read>(reader: R) -> Result<Vec<WindowReport>, ReportError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| ReportError::Malformed { line: 1, reason: e.to_string() })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if headers != REPORT_HEADER {
        return Err(ReportError::Malformed { line: 1, reason: format!("unexpected header '{headers}'") });
    }
    let mut out = Vec::new();
    for rec in csv.records() {
        let rec = rec.map_err(|e| ReportError::Malformed {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |what: &str| ReportError::Malformed { line, reason: format!("bad {what}") };
        let window_start: i64 = rec[0].parse().map_err(|_| bad("window_start"))?;
        let window_end: i64 = rec[1].parse().map_err(|_| bad("window_end"))?;
        let detector: DetectorKind = rec[2].parse().map_err(|_| bad("detector"))?;
        let statistic = match &rec[3] {
            "inf" => Divergence::Infinite,
            s => Divergence::Finite(s.parse().map_err(|_| bad("statistic"))?),
        };
        let eta: f64 = rec[4].parse().map_err(|_| bad("eta"))?;
        let is_anomaly: bool = rec[5].parse().map_err(|_| bad("is_anomaly"))?;
        if window_end <= window_start {
            return Err(bad("window bounds"));
        }
        if is_anomaly != statistic.exceeds(eta) {
            return Err(ReportError::Malformed { line, reason: "is_anomaly disagrees with statistic and eta".into() });
        }
        out.push(WindowReport { window_start, window_end, statistic, eta, is_anomaly, detector });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_counts() {
        assert_eq!(sliding_windows(&[0..300], 100, 50).len(), 5);
        let disjoint = sliding_windows(&[0..300], 100, 100);
        assert_eq!(disjoint, vec![0..100, 100..200, 200..300]);
        // runs are never bridged
        assert_eq!(sliding_windows(&[0..150, 150..260], 100, 100), vec![0..100, 150..250]);
        assert!(sliding_windows(&[0..99], 100, 1).is_empty());
    }

    #[test]
    fn timed_runs_break_on_gaps() {
        let s = SymbolStream::from_timed(vec![0, 1, 0, 1], vec![0, 60, 180, 240], 60);
        assert_eq!(s.runs, vec![0..2, 2..4]);
    }

    #[test]
    fn report_rule_and_csv() {
        let r = WindowReport::new(0, 600, Divergence::Finite(0.5), 0.5, DetectorKind::ModelFree);
        assert!(r.is_anomaly);
        let r2 = WindowReport::new(600, 1200, Divergence::Infinite, 3.0, DetectorKind::Mmp);
        assert!(r2.is_anomaly);
        let r3 = WindowReport::new(1200, 1800, Divergence::Finite(0.1), 0.25, DetectorKind::Mmp);
        assert!(!r3.is_anomaly);
        let reports = vec![r, r2, r3];
        let mut buf = Vec::new();
        write_reports(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("600,1200,mmp,inf,3,true"));
        assert_eq!(read_reports(buf.as_slice()).unwrap(), reports);

        let mut plot = Vec::new();
        write_plot_data(&[], &mut plot).unwrap();
        assert_eq!(String::from_utf8(plot).unwrap(), format!("{PLOT_HEADER}\n"));
    }

    #[test]
    fn inconsistent_report_rejected() {
        let text = format!("{REPORT_HEADER}\n0,10,mmp,0.1,0.5,true\n");
        assert!(matches!(read_reports(text.as_bytes()), Err(ReportError::Malformed { line: 2, .. })));
    }
}
