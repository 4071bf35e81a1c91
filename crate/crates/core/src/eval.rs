//! Scoring detector reports against ground truth.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::empirical::Divergence;
use crate::synth::LabelTrack;
use crate::trace::TrafficTrace;
use crate::window::{self, DetectError, DetectorKind, WindowReport};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("reports span [{report_lo}, {report_hi}) but labels cover [{label_lo}, {label_hi})")]
    SpanMismatch { report_lo: i64, report_hi: i64, label_lo: i64, label_hi: i64 },
    #[error("label track is empty")]
    EmptyLabels,
    #[error("eta grid is empty")]
    EmptyGrid,
    #[error("eta grid must be ascending")]
    UnsortedGrid,
}

/// An anomaly episode: one label id, or a maximal run of anomalous
/// samples when labels carry no id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Episode {
    pub label_id: Option<u32>,
    pub start: i64,
    pub end: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub windows: usize,
    pub anomalous_windows: usize,
    pub clean_windows: usize,
    pub flagged_windows: usize,
    pub false_alarms: usize,
    pub episodes: usize,
    pub detected_episodes: usize,
    pub detection_rate: f64,
    pub false_alarm_rate: f64,
    /// Mean of (first overlapping flagged window start − episode start),
    /// clamped at zero, over detected episodes.
    pub mean_latency_seconds: Option<f64>,
    /// The same latency in units of window duration.
    pub mean_latency_windows: Option<f64>,
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        writeln!(f, "{:<22}{:>12}", "metric", "value")?;
        writeln!(f, "{:<22}{:>12}", "windows", self.windows)?;
        writeln!(f, "{:<22}{:>12}", "anomalous windows", self.anomalous_windows)?;
        writeln!(f, "{:<22}{:>12}", "flagged windows", self.flagged_windows)?;
        writeln!(f, "{:<22}{:>12}", "false alarms", self.false_alarms)?;
        writeln!(f, "{:<22}{:>12}", "episodes", self.episodes)?;
        writeln!(f, "{:<22}{:>12}", "detected episodes", self.detected_episodes)?;
        writeln!(f, "{:<22}{:>12.4}", "detection rate", self.detection_rate)?;
        writeln!(f, "{:<22}{:>12.4}", "false-alarm rate", self.false_alarm_rate)?;
        writeln!(f, "{:<22}{:>12}", "latency (s)", opt(self.mean_latency_seconds))?;
        write!(f, "{:<22}{:>12}", "latency (windows)", opt(self.mean_latency_windows))
    }
}

pub fn episodes(labels: &LabelTrack) -> Vec<Episode> {
    let p = labels.sample_period as i64;
    let mut by_id: BTreeMap<u32, (i64, i64)> = BTreeMap::new();
    let mut loose: Vec<i64> = Vec::new();
    for r in labels.rows.iter().filter(|r| r.is_anomaly) {
        match r.label_id {
            Some(id) => {
                let e = by_id.entry(id).or_insert((r.timestamp, r.timestamp + p));
                e.0 = e.0.min(r.timestamp);
                e.1 = e.1.max(r.timestamp + p);
            }
            None => loose.push(r.timestamp),
        }
    }
    let mut out: Vec<Episode> =
        by_id.into_iter().map(|(id, (start, end))| Episode { label_id: Some(id), start, end }).collect();
    loose.sort_unstable();
    loose.dedup();
    for (start, end) in merge(loose.iter().map(|&t| (t, t + p))) {
        out.push(Episode { label_id: None, start, end });
    }
    out.sort_by_key(|e| (e.start, e.end));
    out
}

fn merge(intervals: impl Iterator<Item = (i64, i64)>) -> Vec<(i64, i64)> {
    let mut v: Vec<(i64, i64)> = intervals.collect();
    v.sort_unstable();
    let mut out: Vec<(i64, i64)> = Vec::new();
    for (s, e) in v {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

fn overlaps(intervals: &[(i64, i64)], lo: i64, hi: i64) -> bool {
    let i = intervals.partition_point(|&(_, e)| e <= lo);
    intervals.get(i).is_some_and(|&(s, _)| s < hi)
}

/// Ground truth laid over a fixed set of windows, reused across thresholds.
struct Scoring {
    windows: Vec<(i64, i64)>,
    truth: Vec<bool>,
    /// Episodes each window overlaps.
    hits: Vec<Vec<usize>>,
    episodes: Vec<Episode>,
}

impl Scoring {
    fn new(reports: &[WindowReport], labels: &LabelTrack) -> Result<Self, EvalError> {
        let p = labels.sample_period as i64;
        let label_lo = labels.rows.iter().map(|r| r.timestamp).min().ok_or(EvalError::EmptyLabels)?;
        let label_hi = labels.rows.iter().map(|r| r.timestamp + p).max().ok_or(EvalError::EmptyLabels)?;
        if let (Some(lo), Some(hi)) =
            (reports.iter().map(|r| r.window_start).min(), reports.iter().map(|r| r.window_end).max())
        {
            if lo < label_lo || hi > label_hi {
                return Err(EvalError::SpanMismatch { report_lo: lo, report_hi: hi, label_lo, label_hi });
            }
        }
        let anomalous = merge(labels.rows.iter().filter(|r| r.is_anomaly).map(|r| (r.timestamp, r.timestamp + p)));
        let episodes = episodes(labels);
        let windows: Vec<(i64, i64)> = reports.iter().map(|r| (r.window_start, r.window_end)).collect();
        let truth = windows.iter().map(|&(s, e)| overlaps(&anomalous, s, e)).collect();
        let hits = windows
            .iter()
            .map(|&(s, e)| (0..episodes.len()).filter(|&i| episodes[i].start < e && s < episodes[i].end).collect())
            .collect();
        Ok(Scoring { windows, truth, hits, episodes })
    }

    fn metrics(&self, flagged: &[bool]) -> Metrics {
        let windows = self.windows.len();
        let anomalous_windows = self.truth.iter().filter(|&&t| t).count();
        let clean_windows = windows - anomalous_windows;
        let flagged_windows = flagged.iter().filter(|&&f| f).count();
        let false_alarms = (0..windows).filter(|&i| flagged[i] && !self.truth[i]).count();
        // earliest flagged window start per episode
        let mut first: Vec<Option<usize>> = vec![None; self.episodes.len()];
        for (i, eps) in self.hits.iter().enumerate() {
            if !flagged[i] {
                continue;
            }
            for &e in eps {
                if first[e].is_none_or(|j| self.windows[i].0 < self.windows[j].0) {
                    first[e] = Some(i);
                }
            }
        }
        let detected: Vec<(usize, usize)> =
            first.iter().enumerate().filter_map(|(e, w)| w.map(|w| (e, w))).collect();
        let (mut secs, mut wins) = (0.0, 0.0);
        for &(e, w) in &detected {
            let (s, end) = self.windows[w];
            let lag = (s - self.episodes[e].start).max(0) as f64;
            secs += lag;
            wins += lag / (end - s) as f64;
        }
        let d = detected.len();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Metrics {
            windows,
            anomalous_windows,
            clean_windows,
            flagged_windows,
            false_alarms,
            episodes: self.episodes.len(),
            detected_episodes: d,
            detection_rate: ratio(d, self.episodes.len()),
            false_alarm_rate: ratio(false_alarms, clean_windows),
            mean_latency_seconds: (d > 0).then(|| secs / d as f64),
            mean_latency_windows: (d > 0).then(|| wins / d as f64),
        }
    }
}

fn sorted(reports: &[WindowReport]) -> Vec<WindowReport> {
    let mut v = reports.to_vec();
    v.sort_by_key(|r| (r.window_start, r.window_end));
    v
}

/// Scores `reports` by their `is_anomaly` flags.
pub fn score(reports: &[WindowReport], labels: &LabelTrack) -> Result<Metrics, EvalError> {
    let reports = sorted(reports);
    let s = Scoring::new(&reports, labels)?;
    let flagged: Vec<bool> = reports.iter().map(|r| r.is_anomaly).collect();
    Ok(s.metrics(&flagged))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub eta: f64,
    pub detection_rate: f64,
    pub false_alarm_rate: f64,
}

/// Re-thresholds the reported statistics at each `eta` in `grid`.
pub fn roc_sweep(reports: &[WindowReport], labels: &LabelTrack, grid: &[f64]) -> Result<Vec<RocPoint>, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if grid.iter().any(|g| g.is_nan()) || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(EvalError::UnsortedGrid);
    }
    let reports = sorted(reports);
    let s = Scoring::new(&reports, labels)?;
    Ok(grid
        .iter()
        .map(|&eta| {
            let flagged: Vec<bool> = reports.iter().map(|r| r.statistic.exceeds(eta)).collect();
            let m = s.metrics(&flagged);
            RocPoint { eta, detection_rate: m.detection_rate, false_alarm_rate: m.false_alarm_rate }
        })
        .collect())
}

pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![lo],
        _ => (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect(),
    }
}

pub const ROC_HEADER: &str = "eta,detection_rate,false_alarm_rate";

pub fn write_roc<W: Write>(points: &[RocPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{ROC_HEADER}")?;
    for p in points {
        writeln!(out, "{},{},{}", p.eta, p.detection_rate, p.false_alarm_rate)?;
    }
    out.flush()
}

/// Contrast detector: flags a window whose mean value sits more than
/// `k_sigma` standard deviations from the mean of clean window means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanThresholdDetector {
    pub center: f64,
    pub spread: f64,
    pub k_sigma: f64,
    pub window_n: usize,
}

impl MeanThresholdDetector {
    /// Fits on the window means of a clean, already prepared trace.
    pub fn fit(trace: &TrafficTrace, window_n: usize, stride: usize, k_sigma: f64) -> Result<Self, DetectError> {
        let means = window_means(trace, window_n, stride)?;
        let m = means.len() as f64;
        let center = means.iter().map(|(_, _, v)| v).sum::<f64>() / m;
        let var = means.iter().map(|(_, _, v)| (v - center).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
        Ok(MeanThresholdDetector { center, spread: var.sqrt(), k_sigma, window_n })
    }

    /// Statistic is the absolute z-score of the window mean.
    pub fn statistic(&self, mean: f64) -> f64 {
        let z = (mean - self.center).abs();
        if self.spread > 0.0 {
            z / self.spread
        } else if z > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }

    pub fn detect(&self, trace: &TrafficTrace, stride: usize) -> Result<Vec<WindowReport>, DetectError> {
        Ok(window_means(trace, self.window_n, stride)?
            .into_iter()
            .map(|(s, e, v)| {
                WindowReport::new(s, e, Divergence::from_value(self.statistic(v)), self.k_sigma, DetectorKind::MeanBaseline)
            })
            .collect())
    }
}

fn window_means(trace: &TrafficTrace, n: usize, stride: usize) -> Result<Vec<(i64, i64, f64)>, DetectError> {
    if stride == 0 {
        return Err(DetectError::InvalidStride);
    }
    if !trace.is_single_stream() {
        return Err(DetectError::MultipleStreams(trace.streams().len()));
    }
    let runs = trace.runs();
    let windows = window::sliding_windows(&runs, n, stride);
    if windows.is_empty() {
        let longest = runs.iter().map(|r| r.len()).max().unwrap_or(0);
        return Err(DetectError::TraceTooShort { window_n: n, longest });
    }
    let s = trace.samples();
    let p = trace.sample_period() as i64;
    Ok(windows
        .into_iter()
        .map(|w| {
            let mean = s[w.clone()].iter().map(|x| x.value).sum::<f64>() / n as f64;
            (s[w.start].timestamp, s[w.end - 1].timestamp + p, mean)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::LabelRow;
    use crate::trace::{Role, TraceSample, Unit};
    use proptest::prelude::*;

    // 100 samples, period 1, anomaly on [40, 50) with id 1
    fn labels() -> LabelTrack {
        LabelTrack {
            sample_period: 1,
            rows: (0..100)
                .map(|t| LabelRow {
                    timestamp: t,
                    node_id: "A".into(),
                    is_anomaly: (40..50).contains(&t),
                    label_id: (40..50).contains(&t).then_some(1),
                })
                .collect(),
        }
    }

    fn reports(stats: &[f64]) -> Vec<WindowReport> {
        stats
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let start = i as i64 * 10;
                WindowReport::new(start, start + 10, Divergence::Finite(s), 0.5, DetectorKind::ModelFree)
            })
            .collect()
    }

    #[test]
    fn all_flagged() {
        let m = score(&reports(&[1.0; 10]), &labels()).unwrap();
        assert_eq!(m.detection_rate, 1.0);
        assert_eq!(m.anomalous_windows, 1);
        assert_eq!(m.false_alarms, 9);
        assert_eq!(m.false_alarm_rate, 1.0);
        assert_eq!(m.mean_latency_seconds, Some(0.0));
    }

    #[test]
    fn none_flagged() {
        let m = score(&reports(&[0.0; 10]), &labels()).unwrap();
        assert_eq!((m.detection_rate, m.false_alarm_rate), (0.0, 0.0));
        assert_eq!(m.mean_latency_seconds, None);
    }

    #[test]
    fn latency_counts_from_episode_start() {
        let l = LabelTrack {
            sample_period: 1,
            rows: labels()
                .rows
                .into_iter()
                .map(|mut r| {
                    r.is_anomaly = (35..60).contains(&r.timestamp);
                    r.label_id = r.is_anomaly.then_some(1);
                    r
                })
                .collect(),
        };
        let mut s = [0.0; 10];
        s[5] = 1.0;
        let m = score(&reports(&s), &l).unwrap();
        assert_eq!(m.mean_latency_seconds, Some(15.0));
        assert_eq!(m.mean_latency_windows, Some(1.5));
        assert_eq!(m.false_alarms, 0);
    }

    #[test]
    fn span_mismatch() {
        let mut r = reports(&[0.0; 10]);
        r.push(WindowReport::new(100, 110, Divergence::Finite(0.0), 0.5, DetectorKind::ModelFree));
        assert!(matches!(score(&r, &labels()), Err(EvalError::SpanMismatch { .. })));
    }

    #[test]
    fn episodes_from_ids_and_runs() {
        let mut l = labels();
        for t in 70..75 {
            l.rows[t].is_anomaly = true;
        }
        let e = episodes(&l);
        assert_eq!(e.len(), 2);
        assert_eq!((e[0].start, e[0].end, e[0].label_id), (40, 50, Some(1)));
        assert_eq!((e[1].start, e[1].end, e[1].label_id), (70, 75, None));
    }

    #[test]
    fn roc_extremes_and_errors() {
        let r = reports(&[0.1, 0.2, 0.3, 0.4, 0.9, 0.1, 0.2, 0.3, 0.2, 0.1]);
        let pts = roc_sweep(&r, &labels(), &[0.0, f64::INFINITY]).unwrap();
        assert_eq!(pts[0].detection_rate, 1.0);
        assert_eq!(pts[0].false_alarm_rate, 1.0);
        assert_eq!((pts[1].detection_rate, pts[1].false_alarm_rate), (0.0, 0.0));
        assert_eq!(roc_sweep(&r, &labels(), &[]), Err(EvalError::EmptyGrid));
        assert_eq!(roc_sweep(&r, &labels(), &[0.5, 0.1]), Err(EvalError::UnsortedGrid));
    }

    #[test]
    fn roc_matches_score_at_own_eta() {
        let r = reports(&[0.1, 0.6, 0.3, 0.4, 0.9, 0.1, 0.5, 0.3, 0.2, 0.1]);
        let m = score(&r, &labels()).unwrap();
        let p = roc_sweep(&r, &labels(), &[0.5]).unwrap()[0];
        assert_eq!((p.detection_rate, p.false_alarm_rate), (m.detection_rate, m.false_alarm_rate));
    }

    #[test]
    fn baseline_flags_level_shifts_only() {
        let samples: Vec<TraceSample> = (0..400)
            .map(|i| TraceSample::new(i, "A", Role::Origin, if i % 2 == 0 { 10.0 } else { 12.0 }))
            .collect();
        let t = TrafficTrace::new(samples, 1, Unit::Bytes).unwrap();
        let b = MeanThresholdDetector::fit(&t, 10, 5, 3.0).unwrap();
        assert_eq!(b.center, 11.0);
        assert!(b.detect(&t, 10).unwrap().iter().all(|r| !r.is_anomaly));
        assert!(b.statistic(20.0).is_infinite());
    }

    proptest! {
        #[test]
        fn score_ignores_order(stats in prop::collection::vec(0.0f64..1.0, 10), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let r = reports(&stats);
            let mut shuffled = r.clone();
            shuffled.shuffle(&mut crate::synth::rng_for(seed, 0));
            prop_assert_eq!(score(&r, &labels()).unwrap(), score(&shuffled, &labels()).unwrap());
        }

        #[test]
        fn roc_is_monotone(stats in prop::collection::vec(0.0f64..1.0, 10)) {
            let pts = roc_sweep(&reports(&stats), &labels(), &linear_grid(0.0, 1.0, 50)).unwrap();
            for w in pts.windows(2) {
                prop_assert!(w[1].detection_rate <= w[0].detection_rate);
                prop_assert!(w[1].false_alarm_rate <= w[0].false_alarm_rate);
            }
        }
    }
}
