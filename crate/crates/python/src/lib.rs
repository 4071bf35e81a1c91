//! Python bindings for `ldwatch`.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ldwatch_core::empirical::{self, Divergence};
use ldwatch_core::reference::{AlphabetChoice, Reference};
use ldwatch_core::spatial::{self, SubnetConfig, SubnetSpec};
use ldwatch_core::synth::{self, LabelTrack, Scenario};
use ldwatch_core::trace::{self, Aggregation, BucketConfig, Role, StreamKey, TimeOfDayInterval, TraceSample, TraceSchema};
use ldwatch_core::window::{DetectorKind, WindowReport};
use ldwatch_core::{eval, mmp, model_free};

create_exception!(ldwatch, LdwatchError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    LdwatchError::new_err(e.to_string())
}

fn parsed<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(err)
}

fn interval(text: Option<&str>) -> PyResult<TimeOfDayInterval> {
    text.map_or(Ok(TimeOfDayInterval::whole_day()), parsed)
}

#[pyclass(name = "TrafficTrace", module = "ldwatch")]
struct PyTrace {
    inner: trace::TrafficTrace,
}

#[pymethods]
impl PyTrace {
    #[new]
    #[pyo3(signature = (timestamps, values, node_id = "A", role = "unspecified", sample_period = 60, unit = "bytes"))]
    fn new(
        timestamps: Vec<i64>,
        values: Vec<f64>,
        node_id: &str,
        role: &str,
        sample_period: u64,
        unit: &str,
    ) -> PyResult<Self> {
        if timestamps.len() != values.len() {
            return Err(err("timestamps and values differ in length"));
        }
        let role: Role = parsed(role)?;
        let samples = timestamps
            .into_iter()
            .zip(values)
            .map(|(t, v)| TraceSample::new(t, node_id, role, v))
            .collect();
        let inner = trace::TrafficTrace::new(samples, sample_period, parsed(unit)?).map_err(err)?;
        Ok(PyTrace { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, sample_period = None))]
    fn load(path: &str, sample_period: Option<u64>) -> PyResult<Self> {
        let schema = TraceSchema { sample_period, ..TraceSchema::default() };
        Ok(PyTrace { inner: trace::load_trace(path, &schema).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        trace::save_trace(&self.inner, path).map_err(err)
    }

    /// Single stream `node:role`.
    fn stream(&self, key: &str) -> PyResult<Self> {
        let key: StreamKey = parsed(key)?;
        let inner = self.inner.stream(&key).ok_or_else(|| err(format!("no stream {key}")))?;
        Ok(PyTrace { inner })
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values()
    }

    #[getter]
    fn timestamps(&self) -> Vec<i64> {
        self.inner.timestamps()
    }

    #[getter]
    fn sample_period(&self) -> u64 {
        self.inner.sample_period()
    }

    #[getter]
    fn streams(&self) -> Vec<String> {
        self.inner.streams().iter().map(|k| k.to_string()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("TrafficTrace(len={}, streams={:?})", self.inner.len(), self.streams())
    }
}

#[pyclass(name = "LabelTrack", module = "ldwatch")]
struct PyLabels {
    inner: LabelTrack,
}

#[pymethods]
impl PyLabels {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(err)?;
        Ok(PyLabels { inner: synth::read_labels(file).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(err)?;
        synth::write_labels(&self.inner, std::io::BufWriter::new(file)).map_err(err)
    }

    fn for_node(&self, node_id: &str) -> Self {
        PyLabels { inner: self.inner.for_node(node_id) }
    }

    #[getter]
    fn is_anomaly(&self) -> Vec<bool> {
        self.inner.rows.iter().map(|r| r.is_anomaly).collect()
    }

    fn anomalous_count(&self) -> usize {
        self.inner.anomalous_count()
    }

    fn __len__(&self) -> usize {
        self.inner.rows.len()
    }
}

#[pyclass(name = "WindowReport", module = "ldwatch", get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyReport {
    window_start: i64,
    window_end: i64,
    statistic: f64,
    eta: f64,
    is_anomaly: bool,
    detector: String,
}

impl From<&WindowReport> for PyReport {
    fn from(r: &WindowReport) -> Self {
        PyReport {
            window_start: r.window_start,
            window_end: r.window_end,
            statistic: r.statistic.value(),
            eta: r.eta,
            is_anomaly: r.is_anomaly,
            detector: r.detector.to_string(),
        }
    }
}

impl PyReport {
    fn to_core(&self) -> PyResult<WindowReport> {
        let kind: DetectorKind = parsed(&self.detector)?;
        Ok(WindowReport::new(self.window_start, self.window_end, Divergence::from_value(self.statistic), self.eta, kind))
    }
}

#[pymethods]
impl PyReport {
    fn __repr__(&self) -> String {
        format!(
            "WindowReport(start={}, end={}, statistic={}, eta={}, is_anomaly={})",
            self.window_start,
            self.window_end,
            self.statistic,
            self.eta,
            if self.is_anomaly { "True" } else { "False" }
        )
    }
}

#[pyclass(name = "Reference", module = "ldwatch")]
struct PyReference {
    inner: Reference,
    summary: Option<String>,
}

#[pymethods]
impl PyReference {
    #[staticmethod]
    #[pyo3(signature = (trace, k = 8, window_n = 100, beta = 0.01, bucket = 1, aggregation = "sum", alphabet = "quantile", interval = None, epsilon = 1e-4))]
    #[allow(clippy::too_many_arguments)]
    fn train_model_free(
        trace: PyRef<'_, PyTrace>,
        k: usize,
        window_n: usize,
        beta: f64,
        bucket: usize,
        aggregation: &str,
        alphabet: &str,
        interval: Option<&str>,
        epsilon: f64,
    ) -> PyResult<Self> {
        let cfg = model_free::ModelFreeConfig {
            k,
            alphabet: parsed(alphabet)?,
            bucket: BucketConfig::new(bucket, parsed::<Aggregation>(aggregation)?).map_err(err)?,
            window_n,
            beta,
            interval: self::interval(interval)?,
            epsilon,
            ..Default::default()
        };
        let (r, s) = model_free::train_model_free(&trace.inner, &cfg).map_err(err)?;
        Ok(PyReference { inner: Reference::ModelFree(r), summary: Some(s.to_string()) })
    }

    #[staticmethod]
    #[pyo3(signature = (trace, k = 8, window_n = 500, beta = 0.01, alphabet = "quantile", interval = None, epsilon = 1e-4))]
    fn train_mmp(
        trace: PyRef<'_, PyTrace>,
        k: usize,
        window_n: usize,
        beta: f64,
        alphabet: &str,
        interval: Option<&str>,
        epsilon: f64,
    ) -> PyResult<Self> {
        let cfg = mmp::MmpConfig {
            k,
            alphabet: parsed(alphabet)?,
            window_n,
            beta,
            interval: self::interval(interval)?,
            epsilon,
            ..Default::default()
        };
        let (r, s) = mmp::train_mmp(&trace.inner, &cfg).map_err(err)?;
        Ok(PyReference { inner: Reference::Mmp(r), summary: Some(s.to_string()) })
    }

    /// `members` are `node:role` strings.
    #[staticmethod]
    #[pyo3(signature = (trace, members, per_node_k = 3, detector = "model_free", window_n = 100, beta = 0.01, bucket = 1, alphabet = "quantile", tolerance = 0))]
    #[allow(clippy::too_many_arguments)]
    fn train_subnet(
        trace: PyRef<'_, PyTrace>,
        members: Vec<String>,
        per_node_k: usize,
        detector: &str,
        window_n: usize,
        beta: f64,
        bucket: usize,
        alphabet: &str,
        tolerance: u64,
    ) -> PyResult<Self> {
        let members = members.iter().map(|m| parsed::<StreamKey>(m)).collect::<PyResult<Vec<_>>>()?;
        let spec = SubnetSpec::new("subnet", members, per_node_k).map_err(err)?;
        let cfg = SubnetConfig {
            detector: parsed(detector)?,
            alphabet: parsed::<AlphabetChoice>(alphabet)?,
            bucket: BucketConfig::new(bucket, Aggregation::Sum).map_err(err)?,
            window_n,
            beta,
            tolerance,
            ..Default::default()
        };
        let (r, s) = spatial::train_subnet(&spec, &trace.inner, &cfg).map_err(err)?;
        Ok(PyReference { inner: Reference::Subnet(r), summary: Some(s.to_string()) })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyReference { inner: Reference::load(path).map_err(err)?, summary: None })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyReference { inner: Reference::from_json(text).map_err(err)?, summary: None })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Training summary, when this reference was trained in-process.
    #[getter]
    fn summary(&self) -> Option<String> {
        self.summary.clone()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match &self.inner {
            Reference::ModelFree(_) => "model_free",
            Reference::Mmp(_) => "mmp",
            Reference::Subnet(_) => "subnet",
        }
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.inner.detector().threshold()
    }

    #[getter]
    fn window_n(&self) -> usize {
        self.inner.detector().window_n()
    }

    #[getter]
    fn alphabet_size(&self) -> usize {
        self.inner.detector().alphabet_size()
    }

    /// Statistic and verdict for one window of symbols.
    fn score_window(&self, symbols: Vec<usize>) -> PyResult<(f64, f64, bool)> {
        let (stat, eta) = self.inner.detector().score(&symbols).map_err(err)?;
        Ok((stat.value(), eta, stat.exceeds(eta)))
    }

    #[pyo3(signature = (trace, stride = None))]
    fn detect(&self, trace: PyRef<'_, PyTrace>, stride: Option<usize>) -> PyResult<Vec<PyReport>> {
        let stride = stride.unwrap_or((self.window_n() / 2).max(1));
        let reports = match &self.inner {
            Reference::ModelFree(r) => model_free::detect_stream_mf(r, &trace.inner, stride).map_err(err)?,
            Reference::Mmp(r) => mmp::detect_stream_mmp(r, &trace.inner, stride).map_err(err)?,
            Reference::Subnet(r) => spatial::detect_subnet(r, &trace.inner, stride).map_err(err)?,
        };
        Ok(reports.iter().map(PyReport::from).collect())
    }

    fn __repr__(&self) -> String {
        format!("Reference(kind={}, K={}, n={}, eta={:.6})", self.kind(), self.alphabet_size(), self.window_n(), self.eta())
    }
}

#[pyfunction]
fn sanov_threshold(n: usize, k: usize, beta: f64) -> PyResult<f64> {
    model_free::sanov_threshold(n, k, beta).map_err(err)
}

#[pyfunction]
fn markov_threshold(n: usize, k: usize, beta: f64) -> PyResult<f64> {
    mmp::markov_threshold(n, k, beta).map_err(err)
}

/// `D(p || q)` in nats; `inf` when `p` puts mass where `q` has none.
#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    Ok(empirical::kl_divergence_probs(&p, &q).map_err(err)?.value())
}

#[pyfunction]
fn type_of(symbols: Vec<usize>, k: usize) -> PyResult<Vec<f64>> {
    Ok(empirical::type_of(&symbols, k).map_err(err)?.probs().to_vec())
}

#[pyfunction]
#[pyo3(signature = (symbols, k, epsilon = 1e-4))]
fn estimate_transition_matrix(symbols: Vec<usize>, k: usize, epsilon: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(mmp::estimate_transition_matrix(&symbols, k, epsilon).map_err(err)?.rows())
}

/// Markov rate of the pair measure of `symbols` under transition matrix `p`.
#[pyfunction]
fn markov_rate(symbols: Vec<usize>, p: Vec<Vec<f64>>) -> PyResult<f64> {
    let p = empirical::TransitionMatrix::from_rows(p).map_err(err)?;
    let q = empirical::pair_measure_of(&symbols, p.k()).map_err(err)?;
    Ok(empirical::markov_rate(&q, &p).map_err(err)?.value())
}

/// Trace and labels from a scenario JSON string.
#[pyfunction]
#[pyo3(signature = (scenario_json, seed = None))]
fn generate_scenario(scenario_json: &str, seed: Option<u64>) -> PyResult<(PyTrace, PyLabels)> {
    let scenario = Scenario::from_json(scenario_json).map_err(err)?;
    let (t, l) = synth::generate_scenario(&scenario, seed).map_err(err)?;
    Ok((PyTrace { inner: t }, PyLabels { inner: l }))
}

fn core_reports(reports: &[PyRef<'_, PyReport>]) -> PyResult<Vec<WindowReport>> {
    reports.iter().map(|r| r.to_core()).collect()
}

/// Detection and false-alarm metrics as a dict.
#[pyfunction]
fn score<'py>(
    py: Python<'py>,
    reports: Vec<PyRef<'py, PyReport>>,
    labels: PyRef<'py, PyLabels>,
) -> PyResult<Bound<'py, PyDict>> {
    let m = eval::score(&core_reports(&reports)?, &labels.inner).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("windows", m.windows)?;
    d.set_item("anomalous_windows", m.anomalous_windows)?;
    d.set_item("clean_windows", m.clean_windows)?;
    d.set_item("flagged_windows", m.flagged_windows)?;
    d.set_item("false_alarms", m.false_alarms)?;
    d.set_item("episodes", m.episodes)?;
    d.set_item("detected_episodes", m.detected_episodes)?;
    d.set_item("detection_rate", m.detection_rate)?;
    d.set_item("false_alarm_rate", m.false_alarm_rate)?;
    d.set_item("mean_latency_seconds", m.mean_latency_seconds)?;
    d.set_item("mean_latency_windows", m.mean_latency_windows)?;
    Ok(d)
}

/// `(eta, detection_rate, false_alarm_rate)` per grid point.
#[pyfunction]
fn roc_sweep(
    reports: Vec<PyRef<'_, PyReport>>,
    labels: PyRef<'_, PyLabels>,
    grid: Vec<f64>,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let pts = eval::roc_sweep(&core_reports(&reports)?, &labels.inner, &grid).map_err(err)?;
    Ok(pts.iter().map(|p| (p.eta, p.detection_rate, p.false_alarm_rate)).collect())
}

#[pymodule]
#[pyo3(name = "ldwatch")]
fn ldwatch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LdwatchError", m.py().get_type::<LdwatchError>())?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyLabels>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyReference>()?;
    m.add_function(wrap_pyfunction!(sanov_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(markov_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(type_of, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_transition_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(markov_rate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(roc_sweep, m)?)?;
    Ok(())
}
