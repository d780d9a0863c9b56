//! `idistill`: command-line front end for two-stage distillation runs.

mod commands;
mod error;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::{CliError, CliResult, EXIT_CODE_HELP};
use settings::{Settings, KEYS};

#[derive(Parser)]
#[command(
    name = "idistill",
    version,
    about = "Distil a black-box re-ranker into a dense retriever"
)]
#[command(after_help = help_footer())]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic corpus, questions and latent relevance (corpus.jsonl, examples.jsonl, latent.tsv).
    Synth,
    /// Encode a corpus; writes index.json and, without --checkpoint, the seeded retriever_init.ckpt.
    Index,
    /// Top-k candidates for one split (--corpus, --examples, [--checkpoint]) into candidates.jsonl.
    Retrieve,
    /// Label candidate sets with a teacher (--candidates, [--latent]) into records.jsonl and teach_report.json.
    Teach,
    /// Stage 1: fit the ranker to teacher orderings (--records) into ranker.ckpt.
    TrainRanker,
    /// Stage 2: fit the retriever to a frozen ranker (--records, --ranker) into retriever.ckpt.
    TrainRetriever,
    /// Fit the retriever straight to teacher scores (--records) into retriever_direct.ckpt.
    Direct,
    /// Hit rates of a checkpoint on one split (default test) into metrics.json.
    Eval,
    /// Full pipeline per value of --axis (train_size | list_size | data_category) into sweep.json.
    Ablate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Index => "index",
            Command::Retrieve => "retrieve",
            Command::Teach => "teach",
            Command::TrainRanker => "train-ranker",
            Command::TrainRetriever => "train-retriever",
            Command::Direct => "direct",
            Command::Eval => "eval",
            Command::Ablate => "ablate",
        }
    }
}

/// Every flag is a shorthand for the config key of the same name; flags win over --config.
#[derive(Args, Default)]
struct Opts {
    /// Flat `key = value` file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    k: Option<String>,
    #[arg(long, global = true)]
    theta: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<String>,
    #[arg(long, global = true)]
    batch_size: Option<String>,
    #[arg(long, global = true)]
    lr: Option<String>,
    #[arg(long, global = true)]
    teacher: Option<String>,
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    cache_dir: Option<String>,
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    corpus: Option<String>,
    #[arg(long, global = true)]
    examples: Option<String>,
    #[arg(long, global = true)]
    latent: Option<String>,
    #[arg(long, global = true)]
    candidates: Option<String>,
    #[arg(long, global = true)]
    records: Option<String>,
    #[arg(long, global = true)]
    checkpoint: Option<String>,
    #[arg(long, global = true)]
    ranker: Option<String>,
    #[arg(long, global = true)]
    split: Option<String>,
    #[arg(long, global = true)]
    train_size: Option<String>,
    #[arg(long, global = true)]
    axis: Option<String>,
    #[arg(long, global = true)]
    values: Option<String>,
    /// Any other config key, e.g. `--set p_swap=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

fn help_footer() -> String {
    let keys: Vec<String> = KEYS.iter().map(|(k, d)| format!("  {k:<21} {d}")).collect();
    format!("Config keys:\n{}\n\n{EXIT_CODE_HELP}", keys.join("\n"))
}

impl Opts {
    fn settings(&self) -> CliResult<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let flags = [
            ("seed", &self.seed),
            ("k", &self.k),
            ("theta", &self.theta),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("teacher", &self.teacher),
            ("endpoint", &self.endpoint),
            ("cache_dir", &self.cache_dir),
            ("out", &self.out),
            ("corpus", &self.corpus),
            ("examples", &self.examples),
            ("latent", &self.latent),
            ("candidates", &self.candidates),
            ("records", &self.records),
            ("checkpoint", &self.checkpoint),
            ("ranker", &self.ranker),
            ("split", &self.split),
            ("train_size", &self.train_size),
            ("axis", &self.axis),
            ("values", &self.values),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                s.set(key, v.as_str())?;
            }
        }
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {pair:?}")))?;
            s.set(k.trim(), v.trim())?;
        }
        Ok(s)
    }
}

fn run(command: Command, s: &Settings) -> CliResult<()> {
    match command {
        Command::Synth => commands::synth(s),
        Command::Index => commands::index(s),
        Command::Retrieve => commands::retrieve(s),
        Command::Teach => commands::teach(s),
        Command::TrainRanker => commands::train_ranker(s),
        Command::TrainRetriever => commands::train_retriever(s),
        Command::Direct => commands::direct(s),
        Command::Eval => commands::eval(s),
        Command::Ablate => commands::ablate(s),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.opts.settings().and_then(|s| run(cli.command, &s)) {
        Ok(()) => ExitCode::from(error::code::OK),
        Err(e) => {
            eprintln!(
                "idistill {}: {} error: {e}",
                cli.command.name(),
                e.category()
            );
            e.exit_code()
        }
    }
}
