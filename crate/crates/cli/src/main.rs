//! `conceptplan` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod analyze;
mod eval;
mod files;
mod prepare;
mod run;

/// Exit status for a command-line error (bad flags, unknown metric).
pub const EXIT_USAGE: u8 = 1;
/// Exit status for malformed inputs.
pub const EXIT_VALIDATION: u8 = 2;
/// Exit status when the generator or its transport failed.
pub const EXIT_GENERATOR: u8 = 3;
/// Exit status when some instances completed and some did not.
pub const EXIT_PARTIAL: u8 = 4;

/// A bad flag combination detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A run that stopped with some instances unfinished.
#[derive(Debug)]
pub struct PartialRun {
    pub failed: usize,
    pub total: usize,
}

impl std::fmt::Display for PartialRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} of {} instances failed; see PARTIAL", self.failed, self.total)
    }
}

impl std::error::Error for PartialRun {}

#[derive(Debug, Parser)]
#[command(
    name = "conceptplan",
    version,
    about = "Plan-aware concept-to-text generation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build oracle-plan and draft training pairs (and gold relations from parses).
    Prepare(PrepareArgs),
    /// Run a system variant over a corpus.
    Run(RunArgs),
    /// Generate outputs for every concept permutation of each instance.
    Sweep(SweepArgs),
    /// Score generation records against a corpus.
    Eval(EvalArgs),
    /// Permutation-invariance or attention analysis.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PrepareArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// CoNLL-U-style parses of the references, with `# instance_id = ...` comments.
    #[arg(long)]
    pub parses: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for the shuffled draft-mode concept orders.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
#[group(skip)]
#[command(group(ArgGroup::new("backend").required(true).multiple(false)))]
pub struct GeneratorArgs {
    /// Root URL of the generation service.
    #[arg(long, group = "backend")]
    pub endpoint: Option<String>,
    /// JSON mock script for offline runs.
    #[arg(long, group = "backend")]
    pub mock_script: Option<PathBuf>,
    /// Upper bound on requests in flight.
    #[arg(long, default_value_t = 8)]
    pub max_inflight: usize,
    /// Transport retries per request (remote only).
    #[arg(long, default_value_t = 2)]
    pub retries: usize,
    /// Per-request timeout in seconds (remote only).
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum VariantArg {
    Unordered,
    Planned,
    UnorderedRank,
    PlannedRank,
}

#[derive(Debug, Args, Serialize)]
pub struct RunArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum)]
    pub variant: VariantArg,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    /// Candidates kept per instance for rank variants.
    #[arg(long, default_value_t = 1)]
    pub top_k: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Shuffle the stage-one concept order with this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rank by mean rather than summed token log-probability.
    #[arg(long)]
    pub length_normalize: bool,
    /// Reuse generations cached in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Draft,
    Planned,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Planned)]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// records.jsonl from `run`.
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated: coverage, repetition, bleu3, bleu4, rouge2, rougel, cider, discrepancy.
    #[arg(long, default_value = "coverage,bleu3,bleu4,rouge2,rougel,cider")]
    pub metrics: String,
    /// Candidates per instance for discrepancy (default: all records of the instance).
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyzeMode {
    Invariance,
    Attn,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum)]
    pub mode: AnalyzeMode,
    /// sweeps.jsonl from `sweep`.
    #[arg(long)]
    pub sweeps: Option<PathBuf>,
    /// Records whose plan/output pairs feed the skeleton-consistency statistic.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Dump files or directories of dumps.
    #[arg(long, num_args = 1..)]
    pub dumps: Vec<PathBuf>,
    /// Reference parses for gold relations (attn mode).
    #[arg(long)]
    pub parses: Option<PathBuf>,
    #[arg(long, default_value_t = conceptplan::invariance::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = conceptplan::invariance::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Maps an error chain onto the documented exit codes.
fn exit_code(err: &anyhow::Error) -> u8 {
    use conceptplan::genclient::GenError;
    use conceptplan::pipeline::PipelineError;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<PartialRun>() {
            return EXIT_PARTIAL;
        }
        if cause.is::<GenError>() {
            return EXIT_GENERATOR;
        }
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            if p.is_generator() {
                return EXIT_GENERATOR;
            }
        }
    }
    EXIT_VALIDATION
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Prepare(a) => prepare::run(a),
        Command::Run(a) => run::run(a),
        Command::Sweep(a) => run::sweep(a),
        Command::Eval(a) => eval::run(a),
        Command::Analyze(a) => analyze::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
