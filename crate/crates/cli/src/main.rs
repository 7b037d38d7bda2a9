//! `tailcp`: tail-adaptive change-point tests from the command line.
//!
//! Exit codes: 0 on success, 1 on any error (including usage errors) and 2
//! when `--exit-on-reject` is set and the test rejects or detection finds a
//! change.

mod input;
mod report;
mod settings;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tailcp::run_adaptive_test;
use tailcp::simlab::{self, ErrorDist, ExperimentConfig, ExperimentRecord, ScenarioSpec};
use tailcp::wbs::{generate_intervals, wbs_detect};

use crate::report::{DetectReport, Metadata, TestReport, Timing, SCHEMA_VERSION};
use crate::settings::{resolve, CommonArgs, Resolved, WbsSection};

#[derive(Parser)]
#[command(name = "tailcp", version, about = "Tail-adaptive change-point testing for high-dimensional regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single change-point test with the tail-adaptive statistic.
    Test {
        #[command(flatten)]
        common: CommonArgs,
        /// Keep bootstrap replicates in the report.
        #[arg(long)]
        include_samples: bool,
        /// Exit with status 2 when the adaptive test rejects.
        #[arg(long)]
        exit_on_reject: bool,
    },
    /// Multiple change points by wild binary segmentation.
    Detect {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of random intervals.
        #[arg(long = "V", value_parser = clap::value_parser!(u64).range(1..))]
        v: Option<u64>,
        /// Minimum interval length (relative; default 30/n).
        #[arg(long)]
        v0: Option<f64>,
        /// Spans this short are not split (relative; default 2 v0).
        #[arg(long)]
        v1: Option<f64>,
        /// Exit with status 2 when at least one change is found.
        #[arg(long)]
        exit_on_reject: bool,
    },
    /// Monte-Carlo experiment from a TOML description.
    Simulate {
        config: PathBuf,
        /// CSV table destination (default: stdout).
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
        /// Externally produced result rows (same columns) appended to the table.
        #[arg(long)]
        baseline: Vec<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Population SNR curve over a grid of loss weights, as CSV.
    Snr {
        #[arg(long, value_enum)]
        dist: DistArg,
        /// Normal standard deviation.
        #[arg(long, default_value_t = 1.0)]
        sd: f64,
        /// Student t degrees of freedom.
        #[arg(long, default_value_t = 4.0)]
        df: f64,
        /// Laplace or Cauchy scale.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.5")]
        tau: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
        alphas: Vec<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Draws a dataset from a scenario description and writes it as CSV.
    Generate {
        scenario: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// JSON file receiving the true change locations and coefficients.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Normal,
    T,
    Laplace,
    Cauchy,
}

fn init_threads(threads: Option<usize>) -> Result<usize> {
    if let Some(t) = threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("cannot configure the thread pool")?;
    }
    Ok(rayon::current_num_threads())
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn metadata(command: &str, common: &CommonArgs, res: &Resolved, header: bool, n: usize, p: usize) -> Metadata {
    Metadata {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        input: common.input.display().to_string(),
        n,
        p,
        header,
        standardize: res.standardize,
        seed: res.test.seed,
        config: res.test.clone(),
        wbs: None,
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn cmd_test(common: CommonArgs, include_samples: bool, exit_on_reject: bool) -> Result<ExitCode> {
    let start = Instant::now();
    let threads = init_threads(common.threads)?;
    let mut res = resolve(&common, 200, false)?;
    let loaded = input::load_csv(&common.input, res.header)?;
    let data = if res.standardize { loaded.data.standardized() } else { loaded.data };
    res.test.s0 = res.test.s0.min(data.p());
    let load_ms = ms(start);
    let t = Instant::now();
    let result = run_adaptive_test(&data, &res.test)?;
    let analysis_ms = ms(t);
    let meta = metadata("test", &common, &res, loaded.header, data.n(), data.p());
    let reject = result.reject;
    let report =
        TestReport::new(meta, result, include_samples, Timing { threads, load_ms, analysis_ms, total_ms: ms(start) });
    emit(common.output.as_deref(), &to_json(&report)?)?;
    Ok(if exit_on_reject && reject { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn cmd_detect(
    common: CommonArgs,
    v: Option<u64>,
    v0: Option<f64>,
    v1: Option<f64>,
    exit_on_reject: bool,
) -> Result<ExitCode> {
    let start = Instant::now();
    let threads = init_threads(common.threads)?;
    let mut res = resolve(&common, 100, true)?;
    let loaded = input::load_csv(&common.input, res.header)?;
    let data = if res.standardize { loaded.data.standardized() } else { loaded.data };
    res.test.s0 = res.test.s0.min(data.p());
    let wbs = WbsSection {
        v: Some(v.map(|v| v as usize).or(res.wbs.v).unwrap_or(500)),
        v0: Some(v0.or(res.wbs.v0).unwrap_or(30.0 / data.n() as f64)),
        v1: None,
    };
    let wbs = WbsSection { v1: Some(v1.or(res.wbs.v1).unwrap_or(2.0 * wbs.v0.unwrap())), ..wbs };
    let (nv, nv0, nv1) = (wbs.v.unwrap(), wbs.v0.unwrap(), wbs.v1.unwrap());
    if nv == 0 {
        bail!("V must be at least 1");
    }
    let load_ms = ms(start);
    let t = Instant::now();
    let intervals = generate_intervals(&res.test, nv, nv0, nv1, res.test.seed)?;
    let result = wbs_detect(&data, &res.test, &intervals)?;
    let analysis_ms = ms(t);
    let mut meta = metadata("detect", &common, &res, loaded.header, data.n(), data.p());
    meta.wbs = Some(wbs);
    let found = !result.changepoints.is_empty();
    let report = DetectReport {
        schema_version: SCHEMA_VERSION,
        metadata: meta,
        result,
        timing: Timing { threads, load_ms, analysis_ms, total_ms: ms(start) },
    };
    emit(common.output.as_deref(), &to_json(&report)?)?;
    Ok(if exit_on_reject && found { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("cannot open baseline file {}", path.display()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, rec)| rec.with_context(|| format!("{}: bad baseline row {}", path.display(), i + 1)))
        .collect()
}

fn records_csv(rows: &[ExperimentRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner().context("cannot flush CSV")?)?)
}

fn cmd_simulate(
    config: PathBuf,
    csv_out: Option<PathBuf>,
    json_out: Option<PathBuf>,
    baseline: Vec<PathBuf>,
    threads: Option<usize>,
) -> Result<ExitCode> {
    init_threads(threads)?;
    let text = std::fs::read_to_string(&config).with_context(|| format!("cannot read {}", config.display()))?;
    let exp: ExperimentConfig =
        toml::from_str(&text).with_context(|| format!("{}: invalid experiment", config.display()))?;
    let mut rows = simlab::run_experiment(&exp)?;
    for b in &baseline {
        rows.extend(read_records(b)?);
    }
    let table = records_csv(&rows)?;
    if let Some(p) = &json_out {
        emit(Some(p), &to_json(&rows)?)?;
    }
    if csv_out.is_some() || json_out.is_none() {
        emit(csv_out.as_deref(), &table)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_snr(
    dist: DistArg,
    sd: f64,
    df: f64,
    scale: f64,
    tau: Vec<f64>,
    alphas: Vec<f64>,
    output: Option<PathBuf>,
) -> Result<ExitCode> {
    let law = match dist {
        DistArg::Normal => ErrorDist::Normal { sd },
        DistArg::T => ErrorDist::StudentT { df },
        DistArg::Laplace => ErrorDist::Laplace { scale },
        DistArg::Cauchy => ErrorDist::Cauchy { scale },
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["alpha", "snr", "dist"])?;
    for a in alphas {
        let value = match simlab::snr(a, &tau, &law) {
            Ok(v) => format!("{v}"),
            Err(tailcp::Error::SnrUndefined(_)) => "NaN".to_string(),
            Err(e) => return Err(e.into()),
        };
        w.write_record([format!("{a}"), value, law.label()])?;
    }
    let text = String::from_utf8(w.into_inner().context("cannot flush CSV")?)?;
    emit(output.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct Truth {
    changepoints: Vec<f64>,
    splits: Vec<usize>,
    betas: Vec<Vec<f64>>,
}

fn cmd_generate(scenario: PathBuf, output: PathBuf, truth: Option<PathBuf>) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&scenario).with_context(|| format!("cannot read {}", scenario.display()))?;
    let spec: ScenarioSpec =
        toml::from_str(&text).with_context(|| format!("{}: invalid scenario", scenario.display()))?;
    let sc = simlab::generate(&spec)?;
    input::write_csv(&output, &sc.data)?;
    if let Some(t) = truth {
        let info = Truth { changepoints: sc.changepoints, splits: sc.splits, betas: sc.betas };
        emit(Some(&t), &to_json(&info)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Test { common, include_samples, exit_on_reject } => cmd_test(common, include_samples, exit_on_reject),
        Command::Detect { common, v, v0, v1, exit_on_reject } => cmd_detect(common, v, v0, v1, exit_on_reject),
        Command::Simulate { config, csv, json, baseline, threads } => {
            cmd_simulate(config, csv, json, baseline, threads)
        }
        Command::Snr { dist, sd, df, scale, tau, alphas, output } => cmd_snr(dist, sd, df, scale, tau, alphas, output),
        Command::Generate { scenario, output, truth } => cmd_generate(scenario, output, truth),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
