mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use cafata_core::explain::{Ranking, DEFAULT_THETA_HI, DEFAULT_THETA_LO};
use cafata_core::Variant;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Context-aware recommendation with argumentation-based explanations.
#[derive(Debug, Parser)]
#[command(name = "cafata", version)]
pub struct Cli {
    /// JSON file supplying default flags; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest interaction and feature files into a prepared dataset.
    #[command(args_override_self = true)]
    Prepare(PrepareArgs),
    /// Train a model on a prepared dataset.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Report RMSE/MAE of a checkpoint on one split.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Explain a recommendation, or contrast the best and worst candidates.
    #[command(args_override_self = true)]
    Explain(ExplainArgs),
    /// Search for counterexamples to weak balance, weak monotonicity and
    /// feedback monotonicity.
    #[command(args_override_self = true)]
    CheckAxioms(CheckArgs),
    /// Cluster users by their learned context-factor importance.
    #[command(args_override_self = true)]
    Cluster(ClusterArgs),
    /// Serve the HTTP API.
    #[command(args_override_self = true)]
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// CSV with header `user,item,value,<factor>...`.
    #[arg(long)]
    pub interactions: PathBuf,
    /// TSV of `item<TAB>type<TAB>feature` triples.
    #[arg(long)]
    pub features: PathBuf,
    /// JSON context schema.
    #[arg(long)]
    pub schema: PathBuf,
    /// Replace usage counts by `ln(1 + count)`.
    #[arg(long)]
    pub log_transform: bool,
    /// Keep only users and items with at least N interactions (iterated).
    #[arg(long, value_name = "N")]
    pub k_core: Option<usize>,
    /// Raw rating range mapped onto [-1, 1]; defaults to the observed range.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub scale: Option<Vec<f64>>,
    /// Train/validation/test ratios.
    #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_split)]
    pub split: cafata_core::data::SplitRatios,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "prepared.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Attribution(Variant),
    Mf,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    if s == "mf" {
        return Ok(ModelKind::Mf);
    }
    s.parse::<Variant>()
        .map(ModelKind::Attribution)
        .map_err(|_| "expected one of ca-fata, fata, avg-ca-fata, avg-fata, mf".to_owned())
}

fn parse_split(s: &str) -> Result<cafata_core::data::SplitRatios, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    let [train, valid, test] = parts[..] else {
        return Err("expected three comma-separated ratios".to_owned());
    };
    if !(train > 0.0 && valid > 0.0 && test > 0.0) || ((train + valid + test) - 1.0).abs() > 1e-9 {
        return Err("ratios must be positive and sum to 1".to_owned());
    }
    Ok(cafata_core::data::SplitRatios { train, valid, test })
}

fn parse_slope(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err("slope must lie in (0, 1)".to_owned())
    }
}

fn parse_non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("must be finite and non-negative".to_owned())
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("must be finite and positive".to_owned())
    }
}

fn parse_assignment(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((f, c)) if !f.is_empty() && !c.is_empty() => Ok((f.trim().to_owned(), c.trim().to_owned())),
        _ => Err(format!("expected FACTOR=CONDITION, got `{s}`")),
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared dataset.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "ca-fata", value_parser = parse_kind)]
    pub variant: ModelKind,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long, default_value_t = 0.05, value_parser = parse_non_negative)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-5, value_parser = parse_non_negative)]
    pub l2: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// Negative slope of the leaky ReLU.
    #[arg(long, default_value_t = 0.01, value_parser = parse_slope)]
    pub slope: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "checkpoint.json")]
    pub out: PathBuf,
    /// Per-epoch JSON-lines log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prepared dataset the checkpoint was trained on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExplainMode {
    /// Natural-language template over the strongest arguments.
    Template,
    /// The full argumentation framework.
    Taf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RankingArg {
    Weighted,
    Raw,
}

impl From<RankingArg> for Ranking {
    fn from(r: RankingArg) -> Self {
        match r {
            RankingArg::Weighted => Ranking::Weighted,
            RankingArg::Raw => Ranking::Raw,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub user: String,
    #[arg(long, required_unless_present = "contrastive", conflicts_with = "contrastive")]
    pub item: Option<String>,
    /// Contrast the best and worst of the candidate items.
    #[arg(long)]
    pub contrastive: bool,
    /// Candidate items; defaults to every item the user has not seen.
    #[arg(long, num_args = 1.., requires = "contrastive")]
    pub candidates: Vec<String>,
    /// Context assignment; repeatable, later values win.
    #[arg(long, num_args = 1.., value_name = "FACTOR=CONDITION", value_parser = parse_assignment, action = clap::ArgAction::Append)]
    pub context: Vec<(String, String)>,
    #[arg(long, value_enum, default_value_t = ExplainMode::Template)]
    pub mode: ExplainMode,
    #[arg(long, value_enum, default_value_t = RankingArg::Weighted)]
    pub ranking: RankingArg,
    #[arg(long, default_value_t = DEFAULT_THETA_LO)]
    pub theta_lo: f64,
    #[arg(long, default_value_t = DEFAULT_THETA_HI)]
    pub theta_hi: f64,
    /// Feature ratings within this distance of zero are neutral.
    #[arg(long, default_value_t = 0.0, value_parser = parse_non_negative)]
    pub neutral_eps: f64,
    /// Feedback journal whose overrides apply to the user.
    #[arg(long)]
    pub journal: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Trials per property.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Check a trained model instead of random ones.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = cafata_core::analysis::DEFAULT_K as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_iter: u64,
    /// Per-user importance rows with their cluster.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// Per-cluster mean importance.
    #[arg(long)]
    pub report_csv: Option<PathBuf>,
    /// Also report final inertia for k = 1..=10.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, env = "CAFATA_ADDR", default_value = "127.0.0.1:8080")]
    pub addr: std::net::SocketAddr,
    /// Append-only feedback journal, replayed at startup.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// Default feedback step.
    #[arg(long, default_value_t = cafata_core::feedback::DEFAULT_STEP, value_parser = parse_positive)]
    pub step: f64,
    /// Allowed browser origin; any when unset.
    #[arg(long)]
    pub cors_origin: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
