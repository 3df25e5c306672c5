//! The `semdec` command line.
//!
//! Every command reads JSONL, writes into an output directory and finishes
//! by writing `manifest.json` there. Exit codes: 0 success, 1 usage error,
//! 2 invalid input or I/O failure, 3 internal invariant violation.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod error;
pub mod output;

pub use error::{CliError, CliResult};

/// Environment variable that supplies the seed when the config has none.
pub const SEED_ENV: &str = "SEMDEC_SEED";

#[derive(Debug, Parser)]
#[command(name = "semdec", version, about = "Semantic reranking of next-item candidate sets")]
pub struct Cli {
    /// Worker threads; 0 lets the pool pick. Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rerank every request and write one record per request.
    Decode(DecodeArgs),
    /// Score one strategy against held-out truths.
    Eval(EvalArgs),
    /// Score several strategies side by side.
    Compare(CompareArgs),
    /// Re-run the evaluation across values of one hyperparameter.
    Sweep(SweepArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Request JSONL.
    #[arg(long)]
    pub input: PathBuf,
    /// `key = value` config file; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Catalog JSONL with token codes (needed by `beam`).
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Output directory.
    #[arg(long, visible_alias = "out")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct StrategyArgs {
    /// Nucleus mass for `nucleus`.
    #[arg(long, default_value_t = semdec::baselines::DEFAULT_TOP_P)]
    pub top_p: f64,
    /// Samples for `best_of_n` and `self_consistency`.
    #[arg(long, default_value_t = semdec::baselines::DEFAULT_N)]
    pub n: usize,
    /// Width for `beam`.
    #[arg(long, default_value_t = semdec::baselines::DEFAULT_BEAM_WIDTH)]
    pub beam_width: usize,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub io: InputArgs,
    #[arg(long, default_value = "usd")]
    pub strategy: String,
    #[command(flatten)]
    pub knobs: StrategyArgs,
    /// Also write each request's cosine similarity matrix.
    #[arg(long)]
    pub dump_similarity: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub io: InputArgs,
    #[arg(long, default_value = "usd")]
    pub strategy: String,
    #[command(flatten)]
    pub knobs: StrategyArgs,
    /// Comma-separated cutoffs.
    #[arg(long, default_value = "3,5")]
    pub k: String,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub io: InputArgs,
    /// Comma-separated strategy names; repeats are dropped with a warning.
    #[arg(long)]
    pub strategies: String,
    #[command(flatten)]
    pub knobs: StrategyArgs,
    #[arg(long, default_value = "1,3,5")]
    pub k: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    Beta,
    SimThreshold,
    Gamma,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
            SweepParam::SimThreshold => "sim_threshold",
            SweepParam::Gamma => "gamma",
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub io: InputArgs,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated values, each validated before anything runs.
    #[arg(long)]
    pub values: String,
    #[arg(long, default_value = "1,3,5")]
    pub k: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON spec; flags below override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, visible_alias = "output")]
    pub out: PathBuf,
    #[arg(long)]
    pub n_users: Option<usize>,
    #[arg(long)]
    pub n_items: Option<usize>,
    #[arg(long)]
    pub n_groups: Option<usize>,
    #[arg(long)]
    pub intra_group_sim_target: Option<f64>,
    #[arg(long)]
    pub inter_group_sim_cap: Option<f64>,
    #[arg(long)]
    pub logit_dim: Option<usize>,
    /// Accepts `inf`.
    #[arg(long)]
    pub markov_concentration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub n_candidates: Option<usize>,
    /// usd_wins, weak or mixed.
    #[arg(long)]
    pub regime: Option<String>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let recorded: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, recorded) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, args: Vec<String>) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Decode(a) => commands::decode(&a, args),
        Command::Eval(a) => commands::eval(&a, args),
        Command::Compare(a) => commands::compare(&a, args),
        Command::Sweep(a) => commands::sweep(&a, args),
        Command::Synth(a) => commands::synth(&a, args),
    })
}

/// Parses `"3,5"` into ascending, distinct cutoffs.
pub fn parse_ks(text: &str) -> CliResult<Vec<usize>> {
    let mut ks = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.parse::<usize>() {
            Ok(k) if k >= 1 => ks.push(k),
            _ => return Err(CliError::Usage(format!("invalid cutoff {part:?} in --k"))),
        }
    }
    if ks.is_empty() {
        return Err(CliError::Usage("--k needs at least one cutoff".into()));
    }
    ks.sort_unstable();
    ks.dedup();
    Ok(ks)
}

pub(crate) fn display(p: &Path) -> String {
    p.display().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoffs() {
        assert_eq!(parse_ks("5,3,3").unwrap(), [3, 5]);
        assert!(matches!(parse_ks("0"), Err(CliError::Usage(_))));
        assert!(matches!(parse_ks("x"), Err(CliError::Usage(_))));
        assert!(matches!(parse_ks(""), Err(CliError::Usage(_))));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["semdec", "frobnicate"]), 1);
        assert_eq!(run(["semdec", "decode"]), 1);
        assert_eq!(run(["semdec", "--help"]), 0);
        assert_eq!(run(["semdec", "--version"]), 0);
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
