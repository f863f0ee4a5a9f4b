use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use colora::experiments::{
    evaluate_rows, preset, run_experiment, write_pattern, ExperimentSpec, Method, Metric, Overrides, ResultRow,
    SnrGrid, CSV_HEADER, PRESETS,
};
use colora::montecarlo::{JsonLinesProgress, NoProgress, ProgressSink, Receiver};
use colora::{Error, InterfererConfig, LoraParams};

#[derive(Parser, Debug)]
#[command(name = "colora", version, about = "Coherent vs non-coherent LoRa error rates under same-SF interference")]
struct Cli {
    /// Emit Monte Carlo progress as JSON lines on stderr
    #[arg(long, global = true)]
    progress: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment spec file (TOML)
    Run {
        spec: PathBuf,
        #[command(flatten)]
        overrides: SweepArgs,
    },
    /// Run a built-in figure preset, or print it with --print
    Preset {
        name: String,
        /// Print the spec as TOML instead of running it
        #[arg(long)]
        print: bool,
        #[command(flatten)]
        overrides: SweepArgs,
    },
    /// Dump the received interference pattern as CSV (bin,magnitude,re,im)
    Pattern(PatternArgs),
    /// SNR needed to reach a target FER
    RequiredSnr {
        #[command(flatten)]
        point: PointArgs,
        /// Target frame error rate
        #[arg(long, default_value_t = 0.1)]
        target: f64,
        /// Search bracket in dB, `lo:hi`
        #[arg(long, default_value = "-20:25", allow_hyphen_values = true)]
        bracket: String,
    },
    /// Symbol error rate at one SNR
    Ser {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, allow_hyphen_values = true)]
        snr: f64,
    },
    /// Frame error rate at one SNR
    Fer {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, allow_hyphen_values = true)]
        snr: f64,
    },
}

/// Overrides for spec fields; lists are comma separated.
#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',')]
    sf: Option<Vec<u8>>,
    /// `start:stop:step` or a single value
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<SnrGrid>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    sir: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    lambda_cfo: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    receiver: Option<Vec<Receiver>>,
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<Method>>,
    #[arg(long)]
    frame_len: Option<u32>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SweepArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            sf: self.sf.clone(),
            snr: self.snr,
            sir_db: self.sir.clone(),
            lambda_cfo: self.lambda_cfo.clone(),
            receivers: self.receiver.clone(),
            methods: self.method.clone(),
            frame_len: self.frame_len,
            n_trials: self.trials,
            seed: self.seed,
            output: self.out.clone(),
        }
    }
}

#[derive(Args, Debug)]
struct PointArgs {
    #[arg(long, default_value_t = 7)]
    sf: u8,
    /// Signal-to-interference ratio in dB; omit for AWGN only
    #[arg(long, allow_hyphen_values = true)]
    sir: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    lambda_cfo: f64,
    #[arg(long, default_value = "coherent")]
    receiver: Receiver,
    /// mc, exact, bound or approx
    #[arg(long, default_value = "mc")]
    method: Method,
    #[arg(long, default_value_t = 20)]
    frame_len: u32,
    /// Phase-tracking error variance (rad^2)
    #[arg(long, default_value_t = 0.0)]
    sigma_tr2: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl PointArgs {
    fn spec(&self, metric: Metric, snr: SnrGrid) -> ExperimentSpec {
        ExperimentSpec {
            name: metric.as_str().to_string(),
            sf: vec![self.sf],
            snr,
            sir_db: vec![self.sir.unwrap_or(f64::INFINITY)],
            frame_len: if metric == Metric::Ser { 1 } else { self.frame_len },
            lambda_cfo: vec![self.lambda_cfo],
            receivers: vec![self.receiver],
            methods: vec![self.method],
            sigma_tr2: vec![self.sigma_tr2],
            metric,
            n_trials: self.trials,
            seed: self.seed,
            min_errors: None,
            output: PathBuf::from("-"),
            ..preset("fig4").expect("built-in preset")
        }
    }
}

#[derive(Args, Debug)]
struct PatternArgs {
    #[arg(long, default_value_t = 7)]
    sf: u8,
    /// Time offset in chips, [0, N)
    #[arg(long)]
    tau: f64,
    /// Interferer CFO in bins
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    lambda_cfo: f64,
    #[arg(long, default_value_t = 0)]
    s1: usize,
    #[arg(long, default_value_t = 0)]
    s2: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    sir: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    omega: f64,
    /// 1-based symbol index within the interfering packet
    #[arg(long, default_value_t = 1)]
    m: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Domain(_) => 2,
        Error::Numerical(_) => 3,
        Error::Io(_) => 1,
    }
}

fn sink(progress: bool) -> Box<dyn ProgressSink> {
    if progress {
        Box::new(JsonLinesProgress::new(io::stderr()))
    } else {
        Box::new(NoProgress)
    }
}

fn print_rows(rows: &[ResultRow]) -> colora::Result<u8> {
    let mut out = io::stdout().lock();
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    let mut code = 0;
    for r in rows {
        writeln!(out, "{}", r.fields().join(","))?;
        if r.value.error_code().is_some() {
            code = 3;
        }
    }
    Ok(code)
}

fn single_point(spec: &ExperimentSpec, progress: bool) -> colora::Result<u8> {
    let rows = evaluate_rows(spec, sink(progress).as_ref())?;
    if rows.is_empty() {
        return Err(Error::Config {
            path: "method".into(),
            message: "analytic methods cover the coherent receiver with perfect phase only".into(),
        });
    }
    print_rows(&rows)
}

fn run_spec(mut spec: ExperimentSpec, args: &SweepArgs, progress: bool) -> colora::Result<u8> {
    spec.apply_overrides(&args.overrides())?;
    let summary = run_experiment(&spec, sink(progress).as_ref())?;
    eprintln!(
        "{}: {} rows written, {} already present, {} failed",
        spec.output.display(),
        summary.written,
        summary.skipped,
        summary.failed
    );
    Ok(if summary.failed > 0 { 3 } else { 0 })
}

fn execute(cli: Cli) -> colora::Result<u8> {
    match cli.command {
        Command::Run { spec, overrides } => run_spec(ExperimentSpec::from_file(&spec)?, &overrides, cli.progress),
        Command::Preset { name, print, overrides } => {
            let mut spec = preset(&name).map_err(|e| match e {
                Error::Config { path, message } => Error::Config {
                    path,
                    message: format!("{message}; known presets: {}", PRESETS.join(", ")),
                },
                other => other,
            })?;
            if print {
                spec.apply_overrides(&overrides.overrides())?;
                print!("{}", spec.to_toml_string());
                return Ok(0);
            }
            run_spec(spec, &overrides, cli.progress)
        }
        Command::Pattern(a) => {
            let p = LoraParams::new(a.sf)?;
            let cfg = InterfererConfig::new(a.s1, a.s2, a.tau, a.lambda_cfo)
                .with_power_db(-a.sir)
                .with_omega(a.omega)
                .with_symbol_index(a.m);
            match a.out {
                Some(path) => write_pattern(&cfg, &p, File::create(path)?)?,
                None => write_pattern(&cfg, &p, io::stdout().lock())?,
            }
            Ok(0)
        }
        Command::RequiredSnr { point, target, bracket } => {
            let (lo, hi) = bracket
                .split_once(':')
                .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)))
                .ok_or_else(|| Error::Config {
                    path: "bracket".into(),
                    message: format!("expected 'lo:hi', got '{bracket}'"),
                })?;
            let spec = ExperimentSpec {
                target_fer: Some(target),
                ..point.spec(
                    Metric::RequiredSnr,
                    SnrGrid {
                        start: lo,
                        stop: hi,
                        step: hi - lo,
                    },
                )
            };
            single_point(&spec, cli.progress)
        }
        Command::Ser { point, snr } => single_point(&point.spec(Metric::Ser, single(snr)), cli.progress),
        Command::Fer { point, snr } => single_point(&point.spec(Metric::Fer, single(snr)), cli.progress),
    }
}

fn single(snr: f64) -> SnrGrid {
    SnrGrid {
        start: snr,
        stop: snr,
        step: 1.0,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
