//! `focusqa`: ingest documents, compile domain knowledge into directives,
//! ask questions and run evaluations.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use focusqa_core::Plan;

use crate::config::{EngineConfig, Overrides, Settings};
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "focusqa",
    version,
    about = "Directive-driven question answering over long documents"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags override environment variables, which override the config file.
#[derive(Args)]
struct GlobalArgs {
    /// Engine config file (TOML, or JSON by extension).
    #[arg(long, global = true, env = "FOCUSQA_CONFIG")]
    config: Option<PathBuf>,
    /// Document store directory [default: .focusqa/store].
    #[arg(long, global = true, env = "FOCUSQA_STORE")]
    store: Option<PathBuf>,
    /// Scripted backend scenario (JSON); replaces all HTTP endpoints.
    #[arg(long, global = true, env = "FOCUSQA_SCENARIO")]
    scenario: Option<PathBuf>,
    /// Price table (TOML or JSON, dollars per million tokens by model id).
    #[arg(long, global = true, env = "FOCUSQA_PRICES")]
    prices: Option<PathBuf>,
    /// OpenAI-compatible base URL for the answer-generating model.
    #[arg(long, global = true, env = "FOCUSQA_EXPENSIVE_BASE_URL")]
    expensive_url: Option<String>,
    /// Model id for the answer-generating model.
    #[arg(long, global = true, env = "FOCUSQA_EXPENSIVE_MODEL")]
    expensive_model: Option<String>,
    /// OpenAI-compatible base URL for the chunk filter model.
    #[arg(long, global = true, env = "FOCUSQA_FILTER_BASE_URL")]
    filter_url: Option<String>,
    /// Model id for the chunk filter model.
    #[arg(long, global = true, env = "FOCUSQA_FILTER_MODEL")]
    filter_model: Option<String>,
    /// OpenAI-compatible base URL for the embedding model.
    #[arg(long, global = true, env = "FOCUSQA_EMBEDDER_BASE_URL")]
    embedder_url: Option<String>,
    /// Model id for the embedding model.
    #[arg(long, global = true, env = "FOCUSQA_EMBEDDER_MODEL")]
    embedder_model: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a Document JSON file and add it to the store.
    Ingest(IngestArgs),
    /// Compile domain knowledge into a directive set (JSON on stdout).
    #[command(alias = "parse-directives")]
    Directives(DirectivesArgs),
    /// Answer one question about a stored document.
    Ask(AskArgs),
    /// Run a plan (or the operator ablation) over a queries file.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct IngestArgs {
    /// Document JSON file.
    pub path: PathBuf,
    /// Store under this id instead of the file's `doc_id`.
    #[arg(long)]
    pub doc_id: Option<String>,
    /// Replace an existing document with the same id.
    #[arg(long)]
    pub force: bool,
    /// Print the summary as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
#[command(group = ArgGroup::new("source").multiple(false))]
pub struct DirectivesArgs {
    /// Knowledge text.
    #[arg(long, group = "source")]
    pub prompt: Option<String>,
    /// File holding the knowledge text.
    #[arg(long, group = "source")]
    pub prompt_file: Option<PathBuf>,
    /// Load a directive set JSON instead of calling a backend.
    #[arg(long, group = "source")]
    pub directives_file: Option<PathBuf>,
    /// Use the offline cue-phrase extractor instead of a model.
    #[arg(long)]
    pub rules_only: bool,
}

#[derive(Args)]
pub struct AskArgs {
    /// Stored document to query.
    #[arg(long)]
    pub doc_id: String,
    /// Question to answer.
    #[arg(long)]
    pub question: String,
    /// Domain knowledge; omitted means no directives.
    #[arg(long, conflicts_with = "knowledge_file")]
    pub knowledge: Option<String>,
    /// File holding the domain knowledge.
    #[arg(long)]
    pub knowledge_file: Option<PathBuf>,
    /// Precompiled directive set JSON; skips extraction.
    #[arg(long)]
    pub directives_file: Option<PathBuf>,
    /// full, no-dk, vanilla or rag.
    #[arg(long, default_value = "full")]
    pub plan: Plan,
    #[command(flatten)]
    pub tuning: Tuning,
    /// Print the full query result as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Queries JSON file.
    #[arg(long)]
    pub queries: PathBuf,
    /// full, no-dk, vanilla or rag.
    #[arg(long, default_value = "full", conflicts_with = "ablation")]
    pub plan: Plan,
    /// Run the five operator-subset rows instead of one plan.
    #[arg(long)]
    pub ablation: bool,
    /// Report JSON destination.
    #[arg(long, default_value = "eval-report.json")]
    pub out: PathBuf,
    /// Queries in flight at once.
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    #[command(flatten)]
    pub tuning: Tuning,
}

/// Per-run overrides of the pipeline configuration.
#[derive(Args)]
pub struct Tuning {
    /// Chunks kept by similarity selection.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Chunk size in estimated tokens.
    #[arg(long)]
    pub chunk_budget: Option<usize>,
    /// Minimum label similarity for a structural match.
    #[arg(long)]
    pub match_threshold: Option<f64>,
    /// Ranked answers to report.
    #[arg(long)]
    pub answers: Option<usize>,
}

impl GlobalArgs {
    fn settings(&self) -> Result<Settings, CliError> {
        let file = match &self.config {
            Some(path) => EngineConfig::load(path)?,
            None => EngineConfig::default(),
        };
        let over = Overrides {
            store: self.store.clone(),
            prices: self.prices.clone(),
            scenario: self.scenario.clone(),
            expensive: (self.expensive_url.clone(), self.expensive_model.clone()),
            filter: (self.filter_url.clone(), self.filter_model.clone()),
            embedder: (self.embedder_url.clone(), self.embedder_model.clone()),
        };
        Ok(Settings::resolve(file, over))
    }
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let settings = cli.global.settings()?;
    match cli.command {
        Command::Ingest(args) => commands::ingest(&settings, &args),
        Command::Directives(args) => commands::directives(&settings, &args).await,
        Command::Ask(args) => commands::ask(&settings, &args).await,
        Command::Eval(args) => commands::eval(&settings, &args).await,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("FOCUSQA_LOG")
                .unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(error::EXIT_BACKEND);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
