//! Run settings: command-line flags over a TOML config file over defaults.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use tailcp::{Engine, TestConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EngineArg {
    InteriorPoint,
    Admm,
}

/// Flags shared by `test` and `detect`.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// CSV file: column 1 = y, columns 2..p+1 = X, rows in time order.
    pub input: PathBuf,
    /// TOML file with [test], [input] and [wbs] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Loss weights, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub alpha_set: Option<Vec<f64>>,
    #[arg(long)]
    pub s0: Option<usize>,
    #[arg(long)]
    pub q0: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Bootstrap replicates.
    #[arg(long = "B")]
    pub bootstrap_reps: Option<usize>,
    /// Quantile levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub tau: Option<Vec<f64>>,
    #[arg(long)]
    pub h: Option<f64>,
    /// `C` in `lambda = C sqrt(log(p m) / m)`.
    #[arg(long)]
    pub lambda_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub engine: Option<EngineArg>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    pub threads: Option<usize>,
    /// First row is a header (default: detected).
    #[arg(long, conflicts_with = "no_header")]
    pub header: bool,
    #[arg(long)]
    pub no_header: bool,
    /// Center and scale every column before the analysis.
    #[arg(long, conflicts_with = "no_standardize")]
    pub standardize: bool,
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    pub header: Option<bool>,
    pub standardize: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WbsSection {
    pub v: Option<usize>,
    pub v0: Option<f64>,
    pub v1: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    test: TestConfig,
    input: InputSection,
    wbs: WbsSection,
}

/// Fully resolved settings.
pub struct Resolved {
    pub test: TestConfig,
    pub header: Option<bool>,
    pub standardize: bool,
    pub wbs: WbsSection,
}

fn read_config(path: &Path) -> Result<(FileConfig, bool)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    let table: toml::Table = toml::from_str(&text).with_context(|| format!("{}: invalid TOML", path.display()))?;
    let sets_b = table.get("test").and_then(|t| t.get("bootstrap_reps")).is_some();
    let cfg: FileConfig =
        toml::from_str(&text).with_context(|| format!("{}: invalid configuration", path.display()))?;
    Ok((cfg, sets_b))
}

/// Merges flags over the config file over defaults. `default_b` and
/// `default_standardize` are the command-specific defaults.
pub fn resolve(args: &CommonArgs, default_b: usize, default_standardize: bool) -> Result<Resolved> {
    let (file, sets_b) = match &args.config {
        Some(p) => read_config(p)?,
        None => (FileConfig::default(), false),
    };
    let mut test = file.test;
    if !sets_b {
        test.bootstrap_reps = default_b;
    }
    if let Some(v) = &args.alpha_set {
        test.alpha_set = v.clone();
    }
    if let Some(v) = args.s0 {
        test.s0 = v;
    }
    if let Some(v) = args.q0 {
        test.q0 = v;
    }
    if let Some(v) = args.gamma {
        test.gamma = v;
    }
    if let Some(v) = args.bootstrap_reps {
        test.bootstrap_reps = v;
    }
    if let Some(v) = &args.tau {
        test.taus = v.clone();
    }
    if let Some(v) = args.h {
        test.h = v;
    }
    if let Some(v) = args.lambda_scale {
        test.lambda_scale = v;
    }
    if let Some(v) = args.seed {
        test.seed = v;
    }
    if let Some(e) = args.engine {
        test.solver.engine = match e {
            EngineArg::InteriorPoint => Engine::InteriorPoint,
            EngineArg::Admm => Engine::Admm,
        };
    }
    let header = if args.header {
        Some(true)
    } else if args.no_header {
        Some(false)
    } else {
        file.input.header
    };
    let standardize = if args.standardize {
        true
    } else if args.no_standardize {
        false
    } else {
        file.input.standardize.unwrap_or(default_standardize)
    };
    Ok(Resolved { test, header, standardize, wbs: file.wbs })
}
