//! Command-line surface. Hyperparameters resolve as
//! flag > config file > built-in default.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rankmerge::ensemble::{
    DEFAULT_P, DEFAULT_RHO_H, DEFAULT_RHO_NM, DEFAULT_RHO_NN, DEFAULT_RHO_T,
};
use rankmerge::experiments::{Objective, SweepParameter};
use rankmerge::metrics::EmptyRelevance;
use rankmerge::EvalOptions;
use serde::Deserialize;

use crate::error::CliError;

const ABOUT: &str =
    "Merge rankings from MRR-optimized models and an NDCG-optimized model, and evaluate them.";

const AFTER_HELP: &str = "\
Hyperparameters resolve in this order: command-line flag, then --config file, \
then built-in defaults (rho_h=3, rho_t=1, rho_nn=5, rho_nm=10, p=3).

Exit codes: 0 success, 1 usage error, 2 data validation error, 3 internal error.";

#[derive(Debug, Parser)]
#[command(name = "rankmerge", version, about = ABOUT, after_help = AFTER_HELP)]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "RANKMERGE_THREADS")]
    pub threads: Option<usize>,

    /// Print diagnostics to stderr; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute MRR, R@k, mean rank and NDCG for prediction runs or merged rankings.
    Evaluate(EvaluateArgs),
    /// Merge MRR and NDCG runs into one ranking per question (JSONL).
    Ensemble(EnsembleCmd),
    /// Alpha-blend the primary MRR run with the NDCG run (JSONL).
    Blend(BlendCmd),
    /// Evaluate a grid of values for one hyperparameter, others fixed (CSV).
    Sweep(SweepCmd),
    /// Evaluate all seven on/off combinations of the H, T and N subsets (CSV).
    Ablate(AblateCmd),
    /// List ranked MRR candidate sets with [H]/[T]/[N] tags and the next NDCG candidates.
    Report(ReportCmd),
    /// Write a synthetic annotation file and score runs.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    /// Recall cut-offs.
    #[arg(long = "recall-k", value_delimiter = ',', default_values_t = [1usize, 5, 10])]
    pub recall_k: Vec<usize>,

    /// Leave questions without any relevant candidate out of the NDCG mean
    /// instead of counting them as 0.
    #[arg(long)]
    pub ndcg_skip_empty: bool,
}

impl MetricArgs {
    pub fn eval_options(&self) -> Result<EvalOptions, CliError> {
        if self.recall_k.contains(&0) {
            return Err(CliError::Usage(
                "--recall-k values must be at least 1".into(),
            ));
        }
        let mut recall_cutoffs = self.recall_k.clone();
        recall_cutoffs.sort_unstable();
        recall_cutoffs.dedup();
        Ok(EvalOptions {
            recall_cutoffs,
            empty_relevance: if self.ndcg_skip_empty {
                EmptyRelevance::Skip
            } else {
                EmptyRelevance::Zero
            },
        })
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub annotations: PathBuf,

    /// Prediction file (scores or ranks); repeatable.
    #[arg(long = "run")]
    pub runs: Vec<PathBuf>,

    /// Merged-ranking JSONL written by `ensemble`; repeatable.
    #[arg(long = "merged")]
    pub merged: Vec<PathBuf>,

    #[command(flatten)]
    pub metrics: MetricArgs,

    /// Emit one JSON record per input instead of a text table.
    #[arg(long)]
    pub json: bool,

    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// Inputs and hyperparameters shared by the ensemble-based subcommands.
#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub annotations: PathBuf,

    /// Prediction file of an MRR model; repeat for each model.
    #[arg(long = "mrr-run", required = true)]
    pub mrr_runs: Vec<PathBuf>,

    /// Prediction file of the NDCG model.
    #[arg(long = "ndcg-run")]
    pub ndcg_run: PathBuf,

    /// TOML file with hyperparameter defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long, value_parser = nonnegative, allow_hyphen_values = true)]
    pub rho_h: Option<usize>,
    #[arg(long, value_parser = nonnegative, allow_hyphen_values = true)]
    pub rho_t: Option<usize>,
    #[arg(long, value_parser = nonnegative, allow_hyphen_values = true)]
    pub rho_nn: Option<usize>,
    #[arg(long, value_parser = nonnegative, allow_hyphen_values = true)]
    pub rho_nm: Option<usize>,
    /// Exponent on the NDCG model's rank in the second step.
    #[arg(long, value_parser = positive_real, allow_hyphen_values = true)]
    pub p: Option<f64>,

    #[arg(long)]
    pub disable_h: bool,
    #[arg(long)]
    pub disable_t: bool,
    #[arg(long)]
    pub disable_n: bool,

    /// Model id of the primary MRR model (default: first --mrr-run).
    #[arg(long = "primary-mrr")]
    pub primary_mrr: Option<String>,

    #[command(flatten)]
    pub metrics: MetricArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    TwoStep,
    Blend,
}

#[derive(Debug, Args)]
pub struct EnsembleCmd {
    #[command(flatten)]
    pub common: EnsembleArgs,

    #[arg(long, value_enum, default_value_t = Mode::TwoStep)]
    pub mode: Mode,

    /// Weight of the MRR scores in blend mode.
    #[arg(long, value_parser = unit_interval, allow_hyphen_values = true)]
    pub alpha: Option<f64>,

    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BlendCmd {
    #[command(flatten)]
    pub common: EnsembleArgs,

    #[arg(long, value_parser = unit_interval, allow_hyphen_values = true)]
    pub alpha: Option<f64>,

    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepTarget {
    One(SweepParameter),
    /// Every two-step hyperparameter, one CSV each.
    All,
}

fn sweep_target(s: &str) -> Result<SweepTarget, String> {
    if s.eq_ignore_ascii_case("all") {
        Ok(SweepTarget::All)
    } else {
        s.parse().map(SweepTarget::One)
    }
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    #[command(flatten)]
    pub common: EnsembleArgs,

    /// rho_h, rho_t, rho_nn, rho_nm, p, alpha, or all.
    #[arg(long, value_parser = sweep_target)]
    pub parameter: SweepTarget,

    /// Comma-separated, strictly increasing grid (default depends on the parameter).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub values: Option<Vec<f64>>,

    /// Weights `w_mrr,w_ndcg` for picking the best value.
    #[arg(long, value_parser = objective, default_value = "0.5,0.5")]
    pub objective: Objective,

    /// Output file for a single parameter.
    #[arg(short, long, conflicts_with = "output_dir")]
    pub output: Option<PathBuf>,

    /// Directory receiving `sweep_<parameter>.csv` files.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateCmd {
    #[command(flatten)]
    pub common: EnsembleArgs,

    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportCmd {
    #[command(flatten)]
    pub common: EnsembleArgs,

    /// Question ids to list (default: the first five).
    #[arg(long, value_delimiter = ',')]
    pub questions: Vec<String>,

    /// Number of second-step candidates shown after the MRR set.
    #[arg(long, default_value_t = rankmerge::experiments::DEFAULT_REMAINDER_DEPTH)]
    pub depth: usize,

    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub d: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long = "n-m", default_value_t = 2)]
    pub n_m: usize,
    #[arg(long, value_parser = unit_interval, default_value_t = 0.7)]
    pub mrr_fidelity: f64,
    #[arg(long, value_parser = unit_interval, default_value_t = 0.9)]
    pub ndcg_fidelity: f64,
    #[arg(long)]
    pub seed: u64,
    /// Receives annotations.jsonl, mrr_<i>.jsonl and ndcg.jsonl.
    #[arg(long)]
    pub output_dir: PathBuf,
}

fn nonnegative(s: &str) -> Result<usize, String> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| "nonnegative integer required".to_string())
}

fn positive_real(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err("positive real number required".into()),
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err("number in [0, 1] required".into()),
    }
}

fn objective(s: &str) -> Result<Objective, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [m, n] = parts.as_slice() else {
        return Err("expected w_mrr,w_ndcg".into());
    };
    let parse = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| format!("{v:?} is not a number"))
    };
    Ok(Objective {
        w_mrr: parse(m)?,
        w_ndcg: parse(n)?,
    })
}

/// Optional hyperparameters from a `--config` TOML file.
#[derive(Debug, Default, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub rho_h: Option<usize>,
    pub rho_t: Option<usize>,
    pub rho_nn: Option<usize>,
    pub rho_nm: Option<usize>,
    pub p: Option<f64>,
    pub enable_h: Option<bool>,
    pub enable_t: Option<bool>,
    pub enable_n: Option<bool>,
    pub primary_mrr: Option<String>,
    pub alpha: Option<f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| {
            let msg = e.to_string().replace('\n', " ");
            CliError::Usage(format!("config file {}: {}", path.display(), msg.trim()))
        })
    }
}

/// Resolved hyperparameters, before model ids are known.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub rho_h: usize,
    pub rho_t: usize,
    pub rho_nn: usize,
    pub rho_nm: usize,
    pub p: f64,
    pub enable_h: bool,
    pub enable_t: bool,
    pub enable_n: bool,
    pub primary_mrr: Option<String>,
    pub alpha: Option<f64>,
}

impl EnsembleArgs {
    pub fn hyperparams(&self, alpha_flag: Option<f64>) -> Result<Hyperparams, CliError> {
        let file = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let hp = Hyperparams {
            rho_h: self.rho_h.or(file.rho_h).unwrap_or(DEFAULT_RHO_H),
            rho_t: self.rho_t.or(file.rho_t).unwrap_or(DEFAULT_RHO_T),
            rho_nn: self.rho_nn.or(file.rho_nn).unwrap_or(DEFAULT_RHO_NN),
            rho_nm: self.rho_nm.or(file.rho_nm).unwrap_or(DEFAULT_RHO_NM),
            p: self.p.or(file.p).unwrap_or(DEFAULT_P),
            enable_h: !self.disable_h && file.enable_h.unwrap_or(true),
            enable_t: !self.disable_t && file.enable_t.unwrap_or(true),
            enable_n: !self.disable_n && file.enable_n.unwrap_or(true),
            primary_mrr: self.primary_mrr.clone().or(file.primary_mrr),
            alpha: alpha_flag.or(file.alpha),
        };
        if !(hp.p.is_finite() && hp.p > 0.0) {
            return Err(CliError::Usage(format!(
                "p must be a positive real, got {}",
                hp.p
            )));
        }
        if let Some(alpha) = hp.alpha {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(CliError::Usage(format!(
                    "alpha = {alpha} is outside [0, 1]"
                )));
            }
        }
        Ok(hp)
    }
}

/// Parses argv (including the program name).
pub fn parse_args<I, T>(argv: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(argv)
}
