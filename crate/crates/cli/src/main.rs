//! `figqa`: dataset statistics, inference runs, ensembling, evaluation and
//! error breakdowns over chart question answering splits.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use figqa_core::prompt::PromptMode;

/// Exit codes.
pub const EXIT_PARTIAL: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_TRANSPORT: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "figqa",
    version,
    about = "Question answering over scientific figures with remote vision-language models"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Record counts per split, figure type or QA-pair type.
    Stats(StatsArgs),
    /// Query one backend for every record and write a run directory.
    Run(RunArgs),
    /// Combine per-backend predictions by figure-type routing or voting.
    Ensemble(EnsembleArgs),
    /// Score predictions against gold answers.
    Eval(EvalArgs),
    /// Per-group tables and the mismatch list from an evaluation.
    Breakdown(BreakdownArgs),
    /// Print the prompt templates, or the prompts rendered for one record.
    DumpPrompts(DumpArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GroupBy {
    #[value(name = "figure_type")]
    FigureType,
    #[value(name = "qa_type")]
    QaType,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Split files; the split name is the file stem.
    #[arg(long, required = true)]
    pub dataset: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub by: Option<GroupBy>,
}

fn parse_mode(s: &str) -> Result<PromptMode, String> {
    s.parse()
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Backend name from the registry.
    #[arg(long)]
    pub backend: String,
    /// Backend registry; the built-in one when omitted.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// baseline1, baseline2, single or cot.
    #[arg(long, value_parser = parse_mode, default_value = "single")]
    pub mode: PromptMode,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    /// Keep completed records from an earlier run in the same directory.
    #[arg(long)]
    pub resume: bool,
    /// Answer from the cache only; misses fail without a request.
    #[arg(long)]
    pub offline: bool,
    /// Response cache directory; defaults to `<out>/cache`.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Base for relative figure paths; defaults to the dataset's directory.
    #[arg(long)]
    pub image_root: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    /// Records to combine predictions for.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Per-backend prediction file as `backend=path`; order sets vote priority.
    #[arg(long = "pred", required = true)]
    pub preds: Vec<String>,
    /// Routing file; the built-in routing when neither this nor --vote is given.
    #[arg(long, conflicts_with = "vote")]
    pub routing: Option<PathBuf>,
    /// Majority vote across all given backends instead of routing.
    #[arg(long)]
    pub vote: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Prediction file as `path` or `backend=path`; repeat to compare backends.
    #[arg(long = "pred", required = true)]
    pub preds: Vec<String>,
    /// Split file with gold answers.
    #[arg(long)]
    pub gold: PathBuf,
    /// Comma-separated subset of rouge, bertscore, exact.
    #[arg(long, default_value = "rouge,exact")]
    pub metrics: String,
    /// Base URL of the token embedding service, needed for bertscore.
    #[arg(long)]
    pub embed_url: Option<String>,
    /// Routing file to audit against the exact-match table.
    #[arg(long)]
    pub routing: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BreakdownArgs {
    /// `instances.jsonl` written by eval, or the directory holding it.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum)]
    pub by: Option<GroupBy>,
    /// Directory for `breakdown.tsv` and `mismatches.tsv`; printed otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    /// Render prompts for a record of this split instead of raw templates.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Record to render; the first record when omitted.
    #[arg(long, requires = "dataset")]
    pub id: Option<String>,
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CmdResult = Result<u8, Failure>;

pub trait ExitWith<T> {
    fn or_exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn or_exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Stats(a) => commands::stats(&a),
        Command::Run(a) => commands::run(&a),
        Command::Ensemble(a) => commands::ensemble(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Breakdown(a) => commands::breakdown(&a),
        Command::DumpPrompts(a) => commands::dump_prompts(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
