//! `ipag`: build, compress and link program graphs, then train and apply
//! the vulnerability classifier.

mod artifacts;
mod commands;
mod e2e;
mod labels;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ipag::embed::{EmbedMode, DEFAULT_TEXT_WIDTH};
use ipag::ipag::Stage;
use ipag::link::DEFAULT_MAX_CALL_DEPTH;
use thiserror::Error;

use commands::EmbedChoice;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", .path.display())]
    Input { path: PathBuf, message: String },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

macro_rules! failed_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Failed(e.to_string())
            }
        }
    )*};
}

failed_from!(
    ipag::pipeline::PipelineError,
    ipag::rules::RulesError,
    ipag::compress::CompressError,
    ipag::embed::EmbedError,
    ipag::hagnn::TrainError,
    ipag::hagnn::EvalError,
    ipag::hagnn::ModelError,
    ipag::hagnn::PredictError
);

#[derive(Debug, Parser)]
#[command(name = "ipag", version, about = "Program-graph vulnerability classifier")]
struct Cli {
    /// Worker threads for per-routine stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for embeddings and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Inputs {
    /// Mini-C source files or glob patterns.
    sources: Vec<String>,
    /// AST interchange files.
    #[arg(long = "ast-in")]
    ast_in: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Hash,
    Service,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    Preliminary,
    SequenceReduced,
    AggregationReduced,
    Complete,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Preliminary => Stage::Preliminary,
            StageArg::SequenceReduced => Stage::SequenceReduced,
            StageArg::AggregationReduced => Stage::AggregationReduced,
            StageArg::Complete => Stage::Complete,
        }
    }
}

#[derive(Debug, Args)]
struct ServiceArgs {
    /// Base URL of the embedding service.
    #[arg(long, env = "IPAG_EMBED_ENDPOINT")]
    embed_endpoint: Option<String>,
    /// Fail instead of falling back to hash embeddings.
    #[arg(long)]
    strict_embed: bool,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long, value_enum, default_value = "hash")]
    embed_mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_TEXT_WIDTH)]
    embed_width: usize,
    /// JSON file of cached text vectors, created if missing.
    #[arg(long)]
    embed_cache: Option<PathBuf>,
    #[command(flatten)]
    service: ServiceArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse sources into an AST interchange file.
    Parse {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Build graphs, by default stopping at the preliminary stage.
    BuildIpag {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "preliminary")]
        stage: StageArg,
        /// Used with `--stage complete`.
        #[arg(long, default_value_t = DEFAULT_MAX_CALL_DEPTH)]
        max_call_depth: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Merge property sequences and aggregations.
    Compress {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Splice callee graphs into their callers.
    Link {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_CALL_DEPTH)]
        max_call_depth: usize,
        /// Also write the call-depth index.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Node and edge totals, and reductions against a baseline file.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        /// Graph file to measure reductions against (default: the input).
        #[arg(long)]
        before: Option<PathBuf>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
        /// Write the JSON report here.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Turn complete graphs into model features.
    Embed {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        embed: EmbedArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train a classifier on embedded graphs.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// TOML model and training settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint to write.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Cross-validate, or score a trained model on labelled graphs.
    Eval {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Evaluate this checkpoint instead of cross-validating.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Classify complete graphs with a trained model.
    Predict {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        service: ServiceArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run every stage from a TOML manifest.
    E2e {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn embed_choice(args: EmbedArgs, seed: Option<u64>) -> EmbedChoice {
    EmbedChoice {
        mode: match args.embed_mode {
            ModeArg::Hash => EmbedMode::Hash,
            ModeArg::Service => EmbedMode::Service,
        },
        endpoint: args.service.embed_endpoint,
        width: args.embed_width,
        strict: args.service.strict_embed,
        seed: seed.unwrap_or(0),
        cache: args.embed_cache,
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Failed(e.to_string()))?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Parse { inputs, rules, out } => {
            let sources = commands::expand_sources(&inputs.sources)?;
            commands::parse(&sources, &inputs.ast_in, &commands::load_rules(rules.as_deref())?, &out)
        }
        Command::BuildIpag {
            inputs,
            rules,
            stage,
            max_call_depth,
            out,
        } => {
            let sources = commands::expand_sources(&inputs.sources)?;
            let rules = commands::load_rules(rules.as_deref())?;
            commands::build(&sources, &inputs.ast_in, &rules, stage.into(), max_call_depth, &out)
        }
        Command::Compress { input, rules, out } => {
            commands::compress(&input, &commands::load_rules(rules.as_deref())?, &out)
        }
        Command::Link {
            input,
            rules,
            max_call_depth,
            index,
            out,
        } => commands::link(
            &input,
            &commands::load_rules(rules.as_deref())?,
            max_call_depth,
            &out,
            index.as_deref(),
        ),
        Command::Stats {
            input,
            before,
            json,
            out,
        } => {
            let report = commands::stats(&input, before.as_deref())?;
            if let Some(p) = &out {
                artifacts::write_json(p, &report)?;
            }
            if json {
                artifacts::emit_json(None, &report)
            } else {
                print!("{}", commands::stats_table(&report));
                Ok(())
            }
        }
        Command::Embed {
            input,
            labels,
            embed,
            out,
        } => commands::embed(&input, labels.as_deref(), &embed_choice(embed, seed), &out),
        Command::Train {
            input,
            labels,
            config,
            model,
            history,
        } => commands::train_model(
            &input,
            labels.as_deref(),
            commands::load_config(config.as_deref(), seed)?,
            &model,
            history.as_deref(),
        ),
        Command::Eval {
            input,
            labels,
            config,
            folds,
            model,
            out,
        } => commands::eval(
            &input,
            labels.as_deref(),
            commands::load_config(config.as_deref(), seed)?,
            folds,
            model.as_deref(),
            out.as_deref(),
        ),
        Command::Predict {
            input,
            model,
            service,
            out,
        } => commands::predict_routines(&input, &model, service.embed_endpoint, service.strict_embed, out.as_deref()),
        Command::E2e { manifest } => {
            let report = e2e::run(&manifest)?;
            let failed: Vec<&str> = report
                .expectations
                .iter()
                .filter(|e| !e.pass)
                .map(|e| e.routine.as_str())
                .collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Failed(format!("expected counts not met for: {}", failed.join(", "))))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
