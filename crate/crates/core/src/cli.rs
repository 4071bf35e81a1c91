//! `ldwatch` command line.
//!
//! Exit codes: 0 clean, 1 anomaly flagged, 2 usage or configuration
//! error, 3 data error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::config::{ConfigError, PipelineConfig};
use crate::eval::{self, EvalError};
use crate::mmp::{self, MmpConfig};
use crate::model_free::{self, ModelFreeConfig};
use crate::quantizer::QuantizerError;
use crate::reference::{AlphabetChoice, Reference, ReferenceIoError, TrainError, TrainingSummary};
use crate::spatial::{self, SpatialError, SubnetConfig, SubnetSpec};
use crate::synth::{self, Scenario, SynthError};
use crate::trace::{self, Aggregation, BucketConfig, Role, StreamKey, TimeOfDayInterval, TraceError, TraceSchema, TrafficTrace};
use crate::window::{self, DetectError, DetectorKind, ReportError, WindowReport};

pub const EXIT_CLEAN: u8 = 0;
pub const EXIT_ANOMALY: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "ldwatch", version, about = "Traffic anomaly detection from empirical measure deviations")]
pub struct Cli {
    /// TOML file supplying defaults for every subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a reference from an anomaly-free trace.
    Train(TrainArgs),
    /// Score a live trace against a reference.
    Detect(DetectArgs),
    /// Generate a synthetic trace and labels from a scenario.
    Generate(GenerateArgs),
    /// Score reports against labels, or sweep thresholds.
    Evaluate(EvaluateArgs),
    /// Turn a report file into a plot-ready series.
    PlotData(PlotDataArgs),
    /// Run every stage present in the config: generate, train, detect,
    /// evaluate, plot-data.
    Run,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// model-free, mmp or subnet.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Restrict the trace to one node.
    #[arg(long)]
    pub node: Option<String>,
    #[arg(long)]
    pub role: Option<String>,
    /// Alphabet size (per node in subnet mode).
    #[arg(long)]
    pub k: Option<usize>,
    /// quantile, uniform:LO:HI or edges:E1,E2,...
    #[arg(long)]
    pub alphabet: Option<String>,
    /// Raw samples per bucket.
    #[arg(long)]
    pub bucket: Option<usize>,
    /// sum or mean.
    #[arg(long)]
    pub aggregation: Option<String>,
    /// Window length in buckets (model-free) or samples (mmp).
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Time-of-day interval such as 08:00-09:00.
    #[arg(long)]
    pub interval: Option<String>,
    /// Minutes east of UTC for the interval.
    #[arg(long, allow_hyphen_values = true)]
    pub utc_offset: Option<i32>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub min_per_symbol: Option<usize>,
    /// Overrides the trace file's sample period.
    #[arg(long)]
    pub sample_period: Option<u64>,
    /// Subnet members as node:role, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub members: Option<Vec<String>>,
    #[arg(long)]
    pub subnet_name: Option<String>,
    /// Joint detector in subnet mode: model-free or mmp.
    #[arg(long)]
    pub subnet_detector: Option<String>,
    /// Alignment tolerance in seconds.
    #[arg(long)]
    pub tolerance: Option<u64>,
    /// Reference JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectArgs {
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub node: Option<String>,
    #[arg(long)]
    pub role: Option<String>,
    /// Window advance; defaults to half a window.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub sample_period: Option<u64>,
    /// Report CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateArgs {
    /// Scenario JSON.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Output labels CSV.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub reports: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Only labels of this node count.
    #[arg(long)]
    pub node: Option<String>,
    /// ROC sweep as LO:HI:POINTS.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Metrics JSON or ROC CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotDataArgs {
    #[arg(long)]
    pub reports: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! fill {
    ($a:expr, $b:expr; $($f:ident),* $(,)?) => {
        if let Some(b) = $b {
            $( if $a.$f.is_none() { $a.$f = b.$f.clone(); } )*
        }
    };
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(m: impl std::fmt::Display) -> CliError {
    CliError::Usage(m.to_string())
}

fn data(m: impl std::fmt::Display) -> CliError {
    CliError::Data(m.to_string())
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| usage(format!("missing required --{flag}")))
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::InvalidInterval(_) | TraceError::InvalidBucket(_) => usage(e),
            _ => data(e),
        }
    }
}

impl From<QuantizerError> for CliError {
    fn from(e: QuantizerError) -> Self {
        match e {
            QuantizerError::DegenerateTrace { .. } => data(e),
            _ => usage(e),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InsufficientTraining { .. } | TrainError::Measure(_) => data(e),
            TrainError::Trace(t) => t.into(),
            TrainError::Quantizer(q) => q.into(),
            _ => usage(e),
        }
    }
}

impl From<DetectError> for CliError {
    fn from(e: DetectError) -> Self {
        match e {
            DetectError::InvalidStride | DetectError::MultipleStreams(_) => usage(e),
            DetectError::Trace(t) => t.into(),
            _ => data(e),
        }
    }
}

impl From<SpatialError> for CliError {
    fn from(e: SpatialError) -> Self {
        match e {
            SpatialError::InvalidSpec(_) => usage(e),
            SpatialError::Train(t) => t.into(),
            SpatialError::Detect(d) => d.into(),
            SpatialError::Trace(t) => t.into(),
            _ => data(e),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::MalformedLabels { .. } | SynthError::Io(_) => data(e),
            SynthError::Trace(t) => t.into(),
            _ => usage(e),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::EmptyGrid | EvalError::UnsortedGrid => usage(e),
            _ => data(e),
        }
    }
}

impl From<ReferenceIoError> for CliError {
    fn from(e: ReferenceIoError) -> Self {
        data(e)
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        data(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        usage(e)
    }
}

fn parse<T: std::str::FromStr>(v: &Option<String>, what: &str) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    v.as_deref()
        .map(|s| s.parse::<T>().map_err(|e| usage(format!("invalid {what} '{s}': {e}"))))
        .transpose()
}

fn writer(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| data(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn io_data(e: std::io::Error) -> CliError {
    data(format!("write failed: {e}"))
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| data(format!("cannot open {}: {e}", path.display())))
}

fn load(path: &Path, sample_period: Option<u64>) -> CliResult<TrafficTrace> {
    let schema = TraceSchema { sample_period, ..TraceSchema::default() };
    Ok(trace::load_trace(path, &schema)?)
}

/// Keeps the samples of one node (and role); the whole trace otherwise.
fn select(trace: TrafficTrace, node: Option<&str>, role: Option<Role>) -> CliResult<TrafficTrace> {
    let Some(node) = node else { return Ok(trace) };
    let keys: Vec<StreamKey> = trace
        .streams()
        .into_iter()
        .filter(|k| k.node_id == node && role.is_none_or(|r| r == k.role))
        .collect();
    match keys.as_slice() {
        [] => Err(data(format!("no samples for node '{node}'"))),
        [key] => Ok(trace.stream(key).expect("stream listed by the trace")),
        _ => Err(usage(format!("node '{node}' has several roles; pass --role"))),
    }
}

fn interval(text: &Option<String>, offset: Option<i32>) -> CliResult<TimeOfDayInterval> {
    let base = match text {
        Some(s) => s.parse::<TimeOfDayInterval>().map_err(usage)?,
        None => TimeOfDayInterval::whole_day(),
    };
    Ok(match offset {
        Some(m) => base.with_utc_offset(m),
        None => base,
    })
}

fn mode(text: &str) -> CliResult<DetectorKind> {
    match text.parse::<DetectorKind>() {
        Ok(k @ (DetectorKind::ModelFree | DetectorKind::Mmp)) => Ok(k),
        _ => Err(usage(format!("unknown mode '{text}'; expected model-free, mmp or subnet"))),
    }
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<(Reference, TrainingSummary)> {
    let mode_text = a.mode.clone().unwrap_or_else(|| "model-free".into());
    let path = required(&a.trace, "trace")?;
    let role = parse::<Role>(&a.role, "role")?;
    let alphabet = parse::<AlphabetChoice>(&a.alphabet, "alphabet")?.unwrap_or_default();
    let aggregation = parse::<Aggregation>(&a.aggregation, "aggregation")?.unwrap_or_default();
    let bucket = BucketConfig::new(a.bucket.unwrap_or(1), aggregation)?;
    let interval = interval(&a.interval, a.utc_offset)?;
    let beta = a.beta.unwrap_or(0.01);
    let epsilon = a.epsilon.unwrap_or(crate::reference::DEFAULT_EPSILON);
    let min_per_symbol = a.min_per_symbol.unwrap_or(crate::reference::DEFAULT_MIN_PER_SYMBOL);
    let trace = load(&path, a.sample_period)?;

    if mode_text == "subnet" {
        let members = required(&a.members, "members")?
            .iter()
            .map(|m| m.parse::<StreamKey>().map_err(usage))
            .collect::<CliResult<Vec<_>>>()?;
        let spec = SubnetSpec::new(
            a.subnet_name.clone().unwrap_or_else(|| "subnet".into()),
            members,
            a.k.unwrap_or(spatial::DEFAULT_PER_NODE_K),
        )?;
        let cfg = SubnetConfig {
            detector: mode(a.subnet_detector.as_deref().unwrap_or("model-free"))?,
            alphabet,
            bucket,
            window_n: a.window.unwrap_or(model_free::DEFAULT_WINDOW_N),
            beta,
            interval,
            epsilon,
            tolerance: a.tolerance.unwrap_or(0),
            min_per_symbol,
        };
        let (r, s) = spatial::train_subnet(&spec, &trace, &cfg)?;
        return Ok((Reference::Subnet(r), s));
    }

    let trace = select(trace, a.node.as_deref(), role)?;
    match mode(&mode_text)? {
        DetectorKind::ModelFree => {
            let cfg = ModelFreeConfig {
                k: a.k.unwrap_or(model_free::DEFAULT_K),
                alphabet,
                bucket,
                window_n: a.window.unwrap_or(model_free::DEFAULT_WINDOW_N),
                beta,
                interval,
                epsilon,
                min_per_symbol,
            };
            let (r, s) = model_free::train_model_free(&trace, &cfg)?;
            Ok((Reference::ModelFree(r), s))
        }
        _ => {
            if a.bucket.is_some_and(|b| b != 1) {
                return Err(usage("mmp mode works on raw samples; drop --bucket"));
            }
            let cfg = MmpConfig {
                k: a.k.unwrap_or(model_free::DEFAULT_K),
                alphabet,
                window_n: a.window.unwrap_or(mmp::DEFAULT_WINDOW_N),
                beta,
                interval,
                epsilon,
                min_per_symbol,
            };
            let (r, s) = mmp::train_mmp(&trace, &cfg)?;
            Ok((Reference::Mmp(r), s))
        }
    }
}

pub fn cmd_detect(a: &DetectArgs) -> CliResult<Vec<WindowReport>> {
    let reference = Reference::load(required(&a.reference, "reference")?)?;
    let trace = load(&required(&a.trace, "trace")?, a.sample_period)?;
    let role = parse::<Role>(&a.role, "role")?;
    let stride = a.stride.unwrap_or((reference.detector().window_n() / 2).max(1));
    Ok(match &reference {
        Reference::ModelFree(r) => {
            model_free::detect_stream_mf(r, &select(trace, a.node.as_deref(), role)?, stride)?
        }
        Reference::Mmp(r) => mmp::detect_stream_mmp(r, &select(trace, a.node.as_deref(), role)?, stride)?,
        Reference::Subnet(r) => spatial::detect_subnet(r, &trace, stride)?,
    })
}

pub fn cmd_generate(a: &GenerateArgs, fallback_seed: Option<u64>) -> CliResult<(TrafficTrace, synth::LabelTrack)> {
    let path = required(&a.scenario, "scenario")?;
    let text = std::fs::read_to_string(&path).map_err(|e| data(format!("cannot read {}: {e}", path.display())))?;
    let scenario = Scenario::from_json(&text)?;
    Ok(synth::generate_scenario(&scenario, a.seed.or(fallback_seed))?)
}

pub enum Evaluation {
    Metrics(eval::Metrics),
    Roc(Vec<eval::RocPoint>),
}

fn sweep_grid(text: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || usage(format!("invalid --sweep '{text}', expected LO:HI:POINTS"));
    let [lo, hi, n] = parts.as_slice() else { return Err(bad()) };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let n: usize = n.parse().map_err(|_| bad())?;
    Ok(eval::linear_grid(lo, hi, n))
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<Evaluation> {
    let grid = a.sweep.as_deref().map(sweep_grid).transpose()?;
    let reports = window::read_reports(open(&required(&a.reports, "reports")?)?)?;
    let mut labels = synth::read_labels(open(&required(&a.labels, "labels")?)?)?;
    if let Some(node) = &a.node {
        labels = labels.for_node(node);
    }
    Ok(match grid {
        Some(g) => Evaluation::Roc(eval::roc_sweep(&reports, &labels, &g)?),
        None => Evaluation::Metrics(eval::score(&reports, &labels)?),
    })
}

pub fn cmd_plot_data(a: &PlotDataArgs) -> CliResult<()> {
    let reports = window::read_reports(open(&required(&a.reports, "reports")?)?)?;
    window::write_plot_data(&reports, writer(a.out.as_deref())?).map_err(io_data)
}

fn train(a: &TrainArgs) -> CliResult<u8> {
    let (reference, summary) = cmd_train(a)?;
    match &a.out {
        Some(p) => {
            reference.save(p)?;
            println!("{summary}");
            println!("reference written to {}", p.display());
        }
        None => {
            println!("{}", reference.to_json());
            eprintln!("{summary}");
        }
    }
    Ok(EXIT_CLEAN)
}

fn detect(a: &DetectArgs) -> CliResult<u8> {
    let reports = cmd_detect(a)?;
    window::write_reports(&reports, writer(a.out.as_deref())?).map_err(io_data)?;
    let flagged = reports.iter().filter(|r| r.is_anomaly).count();
    eprintln!("{} windows, {flagged} flagged", reports.len());
    Ok(if flagged > 0 { EXIT_ANOMALY } else { EXIT_CLEAN })
}

fn generate(a: &GenerateArgs, seed: Option<u64>) -> CliResult<u8> {
    let out = required(&a.trace, "trace")?;
    let (trace, labels) = cmd_generate(a, seed)?;
    trace::save_trace(&trace, &out)?;
    if let Some(p) = &a.labels {
        synth::write_labels(&labels, writer(Some(p))?).map_err(io_data)?;
    }
    eprintln!("{} samples, {} labeled anomalous", trace.len(), labels.anomalous_count());
    Ok(EXIT_CLEAN)
}

fn evaluate(a: &EvaluateArgs) -> CliResult<u8> {
    match cmd_evaluate(a)? {
        Evaluation::Roc(points) => eval::write_roc(&points, writer(a.out.as_deref())?).map_err(io_data)?,
        Evaluation::Metrics(m) => {
            let json = serde_json::to_string_pretty(&m).expect("metrics serialize");
            println!("{m}");
            match &a.out {
                Some(p) => std::fs::write(p, json + "\n").map_err(io_data)?,
                None => println!("{json}"),
            }
        }
    }
    Ok(EXIT_CLEAN)
}

fn dispatch(cli: Cli) -> CliResult<u8> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Train(mut a) => {
            fill!(a, &cfg.train; mode, trace, node, role, k, alphabet, bucket, aggregation, window, beta,
                interval, utc_offset, epsilon, min_per_symbol, sample_period, members, subnet_name,
                subnet_detector, tolerance, out);
            train(&a)
        }
        Command::Detect(mut a) => {
            fill!(a, &cfg.detect; reference, trace, node, role, stride, sample_period, out);
            detect(&a)
        }
        Command::Generate(mut a) => {
            fill!(a, &cfg.generate; scenario, seed, trace, labels);
            generate(&a, cfg.seed)
        }
        Command::Evaluate(mut a) => {
            fill!(a, &cfg.evaluate; reports, labels, node, sweep, out);
            evaluate(&a)
        }
        Command::PlotData(mut a) => {
            fill!(a, &cfg.plot_data; reports, out);
            cmd_plot_data(&a).map(|_| EXIT_CLEAN)
        }
        Command::Run => {
            if cli.config.is_none() {
                return Err(usage("run needs --config"));
            }
            let mut code = EXIT_CLEAN;
            if let Some(a) = &cfg.generate {
                generate(a, cfg.seed)?;
            }
            if let Some(a) = &cfg.train {
                train(a)?;
            }
            if let Some(a) = &cfg.detect {
                code = detect(a)?;
            }
            if let Some(a) = &cfg.evaluate {
                evaluate(a)?;
            }
            if let Some(a) = &cfg.plot_data {
                cmd_plot_data(a)?;
            }
            Ok(code)
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_CLEAN });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
