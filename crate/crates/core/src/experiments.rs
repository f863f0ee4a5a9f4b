//! Declarative sweeps over the analytic and Monte Carlo evaluators with
//! resumable CSV output.
//!
//! Rows are produced in the order `sf, sir_db, lambda_cfo, sigma_tr2,
//! snr_db, receiver, method`. Combinations a method does not cover are
//! skipped:
//! - analytic methods evaluate the coherent receiver with perfect phase
//!   only, so they appear once, at `sigma_tr2 = 0`;
//! - the non-coherent receiver ignores phase, so it appears once per point
//!   with an empty `sigma_tr2` field;
//! - symbol error rates assume perfect phase.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::analytic::{
    fer_collision_sweep, ser_interference_sweep, AwgnModel, InterferenceMethod, MaxSearch, QuadratureSpec,
};
use crate::chirp::LoraParams;
use crate::error::{Error, Result};
use crate::interference::{check_cluster_width, received_pattern, InterfererConfig};
use crate::montecarlo::{
    required_snr, simulate_frames_paired, simulate_symbols_paired, FerEvaluator, PairedEstimate, ProgressSink,
    Receiver, RequiredSnr, TrialConfig,
};

/// CSV header of every experiment output.
pub const CSV_HEADER: [&str; 14] = [
    "sf",
    "snr_db",
    "sir_db",
    "lambda_cfo",
    "receiver",
    "method",
    "metric",
    "F",
    "sigma_tr2",
    "value",
    "ci_low",
    "ci_high",
    "n_trials",
    "seed",
];

/// Leading columns that identify a row for resuming.
const KEY_COLUMNS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mc,
    Exact,
    Bound,
    Approx,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mc => "mc",
            Method::Exact => "exact",
            Method::Bound => "bound",
            Method::Approx => "approx",
        }
    }

    fn is_analytic(&self) -> bool {
        *self != Method::Mc
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc" => Ok(Method::Mc),
            "exact" => Ok(Method::Exact),
            "bound" => Ok(Method::Bound),
            "approx" => Ok(Method::Approx),
            other => Err(Error::config("methods", format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ser,
    Fer,
    RequiredSnr,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Ser => "ser",
            Metric::Fer => "fer",
            Metric::RequiredSnr => "required_snr",
        }
    }
}

/// Inclusive SNR grid in dB. For `required_snr` it is the search bracket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl SnrGrid {
    pub fn points(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| ((self.start + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect()
    }
}

/// Accepts `start:stop:step` or a single value.
impl FromStr for SnrGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("snr", format!("expected 'start:stop:step' or a number, got '{s}'"));
        let parts: Vec<f64> = s
            .split(':')
            .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match parts[..] {
            [x] => Ok(SnrGrid {
                start: x,
                stop: x,
                step: 1.0,
            }),
            [start, stop, step] => Ok(SnrGrid { start, stop, step }),
            _ => Err(bad()),
        }
    }
}

fn default_sigma_tr2() -> Vec<f64> {
    vec![0.0]
}

fn default_metric() -> Metric {
    Metric::Fer
}

fn default_min_errors() -> Option<u64> {
    Some(100)
}

fn default_cluster_width() -> usize {
    5
}

fn default_symbol_nodes() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub sf: Vec<u8>,
    pub snr: SnrGrid,
    pub sir_db: Vec<f64>,
    /// Frame length in symbols.
    #[serde(rename = "F")]
    pub frame_len: u32,
    pub lambda_cfo: Vec<f64>,
    pub receivers: Vec<Receiver>,
    pub methods: Vec<Method>,
    #[serde(default = "default_sigma_tr2")]
    pub sigma_tr2: Vec<f64>,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    /// Required for `metric = "required_snr"`.
    #[serde(default)]
    pub target_fer: Option<f64>,
    pub n_trials: u64,
    pub seed: u64,
    /// Monte Carlo points stop after the chunk reaching this many errors.
    #[serde(default = "default_min_errors")]
    pub min_errors: Option<u64>,
    /// `K` of the approximation.
    #[serde(default = "default_cluster_width")]
    pub cluster_width: usize,
    #[serde(default)]
    pub awgn_model: AwgnModel,
    /// Cap on interfering-symbol nodes per symbol slot; larger SFs use a
    /// proportionally larger `symbol_stride`.
    #[serde(default = "default_symbol_nodes")]
    pub symbol_nodes: usize,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    pub output: PathBuf,
}

impl ExperimentSpec {
    /// Parses TOML text; errors name the offending field.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<root>", e.message().to_string()))?;
        let spec: ExperimentSpec = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().message().to_string())
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec fields are TOML-representable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        non_empty("sf", &self.sf)?;
        for (i, &sf) in self.sf.iter().enumerate() {
            LoraParams::new(sf).map_err(|e| Error::config(format!("sf[{i}]"), e.to_string()))?;
        }
        if !(self.snr.start.is_finite() && self.snr.stop.is_finite()) {
            return Err(Error::config("snr", "start and stop must be finite"));
        }
        if !(self.snr.step > 0.0 && self.snr.step.is_finite()) {
            return Err(Error::config("snr.step", format!("must be > 0, got {}", self.snr.step)));
        }
        if self.snr.stop < self.snr.start {
            return Err(Error::config("snr.stop", "must not be below snr.start"));
        }
        non_empty("sir_db", &self.sir_db)?;
        for (i, x) in self.sir_db.iter().enumerate() {
            // +inf disables the interferer
            if x.is_nan() || *x == f64::NEG_INFINITY {
                return Err(Error::config(format!("sir_db[{i}]"), "must be finite or +inf"));
            }
        }
        finite_list("lambda_cfo", &self.lambda_cfo)?;
        non_empty("receivers", &self.receivers)?;
        non_empty("methods", &self.methods)?;
        finite_list("sigma_tr2", &self.sigma_tr2)?;
        for (i, &s) in self.sigma_tr2.iter().enumerate() {
            if s < 0.0 {
                return Err(Error::config(format!("sigma_tr2[{i}]"), "must be >= 0"));
            }
        }
        if self.frame_len == 0 {
            return Err(Error::config("F", "must be at least 1"));
        }
        if self.n_trials == 0 {
            return Err(Error::config("n_trials", "must be at least 1"));
        }
        if self.metric == Metric::RequiredSnr {
            match self.target_fer {
                Some(t) if t > 0.0 && t < 1.0 => {}
                Some(t) => return Err(Error::config("target_fer", format!("must lie in (0, 1), got {t}"))),
                None => return Err(Error::config("target_fer", "required for metric required_snr")),
            }
            if self.snr.stop <= self.snr.start {
                return Err(Error::config("snr", "the search bracket needs stop > start"));
            }
        }
        if self.symbol_nodes == 0 {
            return Err(Error::config("symbol_nodes", "must be at least 1"));
        }
        self.quadrature
            .validate()
            .map_err(|e| Error::config("quadrature", e.to_string()))?;
        if self.methods.contains(&Method::Approx) {
            for &sf in &self.sf {
                let n = 1usize << sf;
                check_cluster_width(self.cluster_width, n)
                    .map_err(|e| Error::config("cluster_width", e.to_string()))?;
            }
        }
        if self.output.as_os_str().is_empty() {
            return Err(Error::config("output", "must not be empty"));
        }
        let parent = match self.output.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        if !parent.is_dir() {
            return Err(Error::config(
                "output",
                format!("directory {} does not exist", parent.display()),
            ));
        }
        Ok(())
    }

    /// Quadrature used for spreading factor `sf`.
    pub fn quadrature_for(&self, sf: u8) -> QuadratureSpec {
        let n = 1usize << sf;
        let stride = (n / self.symbol_nodes).max(1);
        QuadratureSpec {
            symbol_stride: self.quadrature.symbol_stride.max(stride),
            ..self.quadrature
        }
    }

    fn interference_method(&self, m: Method) -> Option<InterferenceMethod> {
        match m {
            Method::Mc => None,
            Method::Exact => Some(InterferenceMethod::Exact),
            Method::Bound => Some(InterferenceMethod::Bound(MaxSearch::Full)),
            Method::Approx => Some(InterferenceMethod::Approx {
                k: self.cluster_width,
                awgn: self.awgn_model,
            }),
        }
    }

    /// Replaces fields with the values given on the command line.
    pub fn apply_overrides(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = &o.sf {
            self.sf = v.clone();
        }
        if let Some(v) = o.snr {
            self.snr = v;
        }
        if let Some(v) = &o.sir_db {
            self.sir_db = v.clone();
        }
        if let Some(v) = &o.lambda_cfo {
            self.lambda_cfo = v.clone();
        }
        if let Some(v) = &o.receivers {
            self.receivers = v.clone();
        }
        if let Some(v) = &o.methods {
            self.methods = v.clone();
        }
        if let Some(v) = o.frame_len {
            self.frame_len = v;
        }
        if let Some(v) = o.n_trials {
            self.n_trials = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.output {
            self.output = v.clone();
        }
        self.validate()
    }
}

fn non_empty<T>(path: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::config(path, "must not be empty"));
    }
    Ok(())
}

fn finite_list(path: &str, v: &[f64]) -> Result<()> {
    non_empty(path, v)?;
    for (i, x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::config(format!("{path}[{i}]"), "must be finite"));
        }
    }
    Ok(())
}

/// Command-line replacements for [`ExperimentSpec`] fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub sf: Option<Vec<u8>>,
    pub snr: Option<SnrGrid>,
    pub sir_db: Option<Vec<f64>>,
    pub lambda_cfo: Option<Vec<f64>>,
    pub receivers: Option<Vec<Receiver>>,
    pub methods: Option<Vec<Method>>,
    pub frame_len: Option<u32>,
    pub n_trials: Option<u64>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

/// Built-in specs for the published figures. SNR ranges are approximate.
pub fn preset(name: &str) -> Result<ExperimentSpec> {
    let base = ExperimentSpec {
        name: name.to_string(),
        sf: vec![7],
        snr: SnrGrid {
            start: -10.0,
            stop: 10.0,
            step: 1.0,
        },
        sir_db: vec![0.0],
        frame_len: 20,
        lambda_cfo: vec![0.0],
        receivers: Receiver::BOTH.to_vec(),
        methods: vec![Method::Mc, Method::Approx],
        sigma_tr2: vec![0.0],
        metric: Metric::Fer,
        target_fer: None,
        n_trials: 10_000,
        seed: 1,
        min_errors: default_min_errors(),
        cluster_width: default_cluster_width(),
        awgn_model: AwgnModel::default(),
        symbol_nodes: default_symbol_nodes(),
        quadrature: QuadratureSpec::default(),
        output: PathBuf::from(format!("{name}.csv")),
    };
    let spec = match name {
        "fig4" => ExperimentSpec {
            lambda_cfo: vec![0.0, 0.5],
            ..base
        },
        "fig5" => ExperimentSpec {
            sir_db: vec![3.0],
            lambda_cfo: vec![0.0, 0.5],
            ..base
        },
        "fig6" => ExperimentSpec {
            sf: vec![7, 9, 11],
            snr: SnrGrid {
                start: -22.0,
                stop: 0.0,
                step: 1.0,
            },
            sir_db: vec![3.0],
            frame_len: 1,
            metric: Metric::Ser,
            n_trials: 100_000,
            ..base
        },
        "fig7" => ExperimentSpec {
            snr: SnrGrid {
                start: -20.0,
                stop: 20.0,
                step: 1.0,
            },
            sir_db: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 15.0, 20.0],
            methods: vec![Method::Mc],
            metric: Metric::RequiredSnr,
            target_fer: Some(0.1),
            ..base
        },
        "fig8" => ExperimentSpec {
            sir_db: vec![3.0],
            methods: vec![Method::Mc],
            sigma_tr2: vec![0.0, 0.2, 0.3, 0.4],
            ..base
        },
        other => {
            return Err(Error::config(
                "preset",
                format!("unknown preset '{other}' (expected fig4..fig8)"),
            ))
        }
    };
    Ok(spec)
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 5] = ["fig4", "fig5", "fig6", "fig7", "fig8"];

/// One CSV row; `None` renders as an empty field.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sf: u8,
    pub snr_db: Option<f64>,
    pub sir_db: f64,
    pub lambda_cfo: f64,
    pub receiver: Receiver,
    pub method: Method,
    pub metric: Metric,
    pub frame_len: Option<u32>,
    pub sigma_tr2: Option<f64>,
    pub value: RowValue,
    pub ci: Option<(f64, f64)>,
    pub n_trials: Option<u64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowValue {
    Number(f64),
    /// Evaluator failure, written as `ERR:<code>`.
    Error(&'static str),
}

impl RowValue {
    pub fn error_code(&self) -> Option<&'static str> {
        match self {
            RowValue::Number(_) => None,
            RowValue::Error(code) => Some(code),
        }
    }
}

impl ResultRow {
    pub fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let value = match &self.value {
            RowValue::Number(v) => v.to_string(),
            RowValue::Error(code) => format!("ERR:{code}"),
        };
        vec![
            self.sf.to_string(),
            opt(self.snr_db),
            self.sir_db.to_string(),
            self.lambda_cfo.to_string(),
            self.receiver.as_str().to_string(),
            self.method.as_str().to_string(),
            self.metric.as_str().to_string(),
            self.frame_len.map(|f| f.to_string()).unwrap_or_default(),
            opt(self.sigma_tr2),
            value,
            opt(self.ci.map(|c| c.0)),
            opt(self.ci.map(|c| c.1)),
            self.n_trials.map(|n| n.to_string()).unwrap_or_default(),
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
        ]
    }

    fn key(&self) -> Vec<String> {
        self.fields().into_iter().take(KEY_COLUMNS).collect()
    }
}

fn error_code(e: &Error) -> &'static str {
    match e {
        Error::Domain(_) => "domain",
        Error::Config { .. } => "config",
        Error::Numerical(_) => "numerical",
        Error::Io(_) => "io",
    }
}

/// Outcome counts of [`run_experiment`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub written: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// One row to evaluate, before its value is known.
#[derive(Debug, Clone, Copy)]
struct Point {
    sf: u8,
    snr_db: Option<f64>,
    sir_db: f64,
    lambda_cfo: f64,
    sigma_tr2: f64,
    sigma_column: bool,
    receiver: Receiver,
    method: Method,
}

impl Point {
    fn row(&self, spec: &ExperimentSpec, value: RowValue, ci: Option<(f64, f64)>, n_trials: Option<u64>) -> ResultRow {
        ResultRow {
            sf: self.sf,
            snr_db: self.snr_db,
            sir_db: self.sir_db,
            lambda_cfo: self.lambda_cfo,
            receiver: self.receiver,
            method: self.method,
            metric: spec.metric,
            frame_len: (spec.metric != Metric::Ser).then_some(spec.frame_len),
            sigma_tr2: self.sigma_column.then_some(self.sigma_tr2),
            value,
            ci,
            n_trials,
            seed: (self.method == Method::Mc).then_some(spec.seed),
        }
    }
}

/// All rows of `spec` in output order.
fn points(spec: &ExperimentSpec) -> Vec<Point> {
    let snrs: Vec<Option<f64>> = match spec.metric {
        Metric::RequiredSnr => vec![None],
        _ => spec.snr.points().into_iter().map(Some).collect(),
    };
    let mut out = Vec::new();
    for &sf in &spec.sf {
        for &sir_db in &spec.sir_db {
            for &lambda_cfo in &spec.lambda_cfo {
                for (si, &sigma_tr2) in spec.sigma_tr2.iter().enumerate() {
                    for &snr_db in &snrs {
                        for &receiver in &spec.receivers {
                            for &method in &spec.methods {
                                let phase_tracked =
                                    receiver == Receiver::Coherent && method == Method::Mc && spec.metric != Metric::Ser;
                                let keep = match receiver {
                                    Receiver::Noncoherent => si == 0 && !method.is_analytic(),
                                    Receiver::Coherent => phase_tracked || sigma_tr2 == 0.0,
                                };
                                if keep {
                                    out.push(Point {
                                        sf,
                                        snr_db,
                                        sir_db,
                                        lambda_cfo,
                                        sigma_tr2: if receiver == Receiver::Coherent { sigma_tr2 } else { 0.0 },
                                        sigma_column: receiver == Receiver::Coherent,
                                        receiver,
                                        method,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Memoized evaluations shared by rows of the same grid point.
#[derive(Default)]
struct Cache {
    analytic: HashMap<(u8, u64, u64, Method), std::result::Result<Vec<f64>, &'static str>>,
    paired: Option<((u8, u64, u64, u64, u64), std::result::Result<PairedEstimate, &'static str>)>,
}

fn bits(x: f64) -> u64 {
    x.to_bits()
}

fn evaluate(spec: &ExperimentSpec, pt: &Point, cache: &mut Cache, progress: &dyn ProgressSink) -> ResultRow {
    let params = LoraParams::new(pt.sf).expect("validated spectrum factor");
    let template = TrialConfig {
        p_i_db: -pt.sir_db,
        lambda_cfo: pt.lambda_cfo,
        receiver: pt.receiver,
        frame_len: spec.frame_len,
        sigma_tr2: pt.sigma_tr2,
        n_trials: spec.n_trials,
        seed: spec.seed,
        min_errors: spec.min_errors,
        ..TrialConfig::new(params)
    };
    let quad = spec.quadrature_for(pt.sf);

    if spec.metric == Metric::RequiredSnr {
        let evaluator = match spec.interference_method(pt.method) {
            None => FerEvaluator::MonteCarlo,
            Some(method) => FerEvaluator::Analytic { quad, method },
        };
        let target = spec.target_fer.expect("validated target");
        let n = (pt.method == Method::Mc).then_some(spec.n_trials);
        return match required_snr(target, pt.sir_db, &template, (spec.snr.start, spec.snr.stop), &evaluator) {
            Ok(RequiredSnr::Found { snr_db, .. }) => pt.row(spec, RowValue::Number(snr_db), None, n),
            Ok(RequiredSnr::Unreachable { .. }) => pt.row(spec, RowValue::Number(f64::INFINITY), None, n),
            Err(e) => pt.row(spec, RowValue::Error(error_code(&e)), None, n),
        };
    }

    let snr_db = pt.snr_db.expect("grid metrics carry an SNR");
    if let Some(method) = spec.interference_method(pt.method) {
        let key = (pt.sf, bits(pt.sir_db), bits(pt.lambda_cfo), pt.method);
        let grid = spec.snr.points();
        let values = cache.analytic.entry(key).or_insert_with(|| {
            let res = match spec.metric {
                Metric::Ser => ser_interference_sweep(&params, &grid, -pt.sir_db, pt.lambda_cfo, &quad, method)
                    .map(|v| v.into_iter().map(|r| r.value).collect()),
                _ => fer_collision_sweep(spec.frame_len, &params, &grid, -pt.sir_db, pt.lambda_cfo, &quad, method),
            };
            res.map_err(|e| error_code(&e))
        });
        let i = grid.iter().position(|&g| g == snr_db).expect("point from grid");
        return match values {
            Ok(v) => pt.row(spec, RowValue::Number(v[i]), None, None),
            Err(code) => pt.row(spec, RowValue::Error(code), None, None),
        };
    }

    let key = (pt.sf, bits(pt.sir_db), bits(pt.lambda_cfo), bits(pt.sigma_tr2), bits(snr_db));
    if cache.paired.as_ref().map(|(k, _)| *k) != Some(key) {
        let cfg = TrialConfig {
            snr_db,
            // stop on the receiver with fewer errors when both are requested
            receiver: if spec.receivers.contains(&Receiver::Coherent) && pt.sigma_tr2 == 0.0 {
                Receiver::Coherent
            } else {
                pt.receiver
            },
            ..template
        };
        let res = match spec.metric {
            Metric::Ser => simulate_symbols_paired(&cfg, progress),
            _ => simulate_frames_paired(&cfg, progress),
        };
        cache.paired = Some((key, res.map_err(|e| error_code(&e))));
    }
    match &cache.paired.as_ref().expect("just filled").1 {
        Ok(p) => {
            let e = p.get(pt.receiver);
            pt.row(spec, RowValue::Number(e.rate), Some(e.ci95), Some(e.trials))
        }
        Err(code) => pt.row(spec, RowValue::Error(code), None, Some(spec.n_trials)),
    }
}

/// Evaluates every row of `spec` in memory; `spec.output` is not touched.
pub fn evaluate_rows(spec: &ExperimentSpec, progress: &dyn ProgressSink) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let mut cache = Cache::default();
    Ok(points(spec)
        .iter()
        .map(|pt| evaluate(spec, pt, &mut cache, progress))
        .collect())
}

/// Reads completed row keys from an existing output, dropping a trailing
/// partial line. Returns `None` when the file is absent or empty.
fn completed_rows(path: &Path) -> Result<Option<HashSet<Vec<String>>>> {
    let mut file = match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::config("output", format!("cannot open {}: {e}", path.display()))),
    };
    let mut text = String::new();
    std::io::Read::read_to_string(&mut file, &mut text)?;
    if text.is_empty() {
        return Ok(None);
    }
    if !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        file.set_len(keep as u64)?;
        text.truncate(keep);
    }
    let mut lines = BufReader::new(text.as_bytes())
        .lines()
        .map_while(std::result::Result::ok)
        .filter(|l| !l.starts_with('#'));
    match lines.next() {
        None => return Ok(None),
        Some(h) if h == CSV_HEADER.join(",") => {}
        Some(_) => {
            return Err(Error::config(
                "output",
                format!("{} exists with a different header", path.display()),
            ))
        }
    }
    let rows = lines.collect::<Vec<_>>().join("\n");
    let mut done = HashSet::new();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(rows.as_bytes());
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::config("output", format!("unreadable row: {e}")))?;
        done.insert(rec.iter().take(KEY_COLUMNS).map(str::to_string).collect());
    }
    Ok(Some(done))
}

/// Evaluates every grid point of `spec` and appends rows to
/// `spec.output`, skipping rows already present. Evaluator failures are
/// written as `ERR:<code>` and the run continues.
pub fn run_experiment(spec: &ExperimentSpec, progress: &dyn ProgressSink) -> Result<RunSummary> {
    spec.validate()?;
    let done = completed_rows(&spec.output)?;
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&spec.output)
        .map_err(|e| Error::config("output", format!("cannot write {}: {e}", spec.output.display())))?;
    file.seek(SeekFrom::End(0))?;
    let done = match done {
        Some(d) => d,
        None => {
            let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            writeln!(file, "# experiment {} started at unix time {stamp}", spec.name)?;
            writeln!(file, "{}", CSV_HEADER.join(","))?;
            file.flush()?;
            HashSet::new()
        }
    };
    write_rows(spec, &done, file, progress)
}

fn write_rows(spec: &ExperimentSpec, done: &HashSet<Vec<String>>, file: File, progress: &dyn ProgressSink) -> Result<RunSummary> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let mut summary = RunSummary::default();
    let mut cache = Cache::default();
    for pt in points(spec) {
        let pending = pt.row(spec, RowValue::Number(0.0), None, None);
        if done.contains(&pending.key()) {
            summary.skipped += 1;
            continue;
        }
        let row = evaluate(spec, &pt, &mut cache, progress);
        if matches!(row.value, RowValue::Error(_)) {
            summary.failed += 1;
        }
        out.write_record(row.fields()).map_err(csv_error)?;
        out.flush()?;
        summary.written += 1;
    }
    Ok(summary)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes the received interference pattern of `cfg` as
/// `bin,magnitude,re,im`.
pub fn write_pattern<W: Write>(cfg: &InterfererConfig, p: &LoraParams, out: W) -> Result<()> {
    let pattern = received_pattern(cfg, p)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin", "magnitude", "re", "im"]).map_err(csv_error)?;
    for (k, v) in pattern.bins.iter().enumerate() {
        w.write_record([k.to_string(), v.norm().to_string(), v.re.to_string(), v.im.to_string()])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
