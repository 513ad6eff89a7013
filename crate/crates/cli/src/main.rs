//! `contm`: ingest a timestamped corpus, train the continual topic model
//! slice by slice, evaluate it and export topics.
//!
//! Exit codes: 0 ok, 2 input error, 3 state/consistency error,
//! 4 numerical divergence.

mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "contm", version, about = "Continual neural topic model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. CLI flags override config values.
#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize, prune and vectorize a JSON-Lines corpus into a slice store.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Corpus path; overrides the config.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Train the model over the stored slices, writing a timeline directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Process slices as they arrive, re-scanning the store for slices
        /// appended after start.
        #[arg(long)]
        stream: bool,
        /// Continue an interrupted run from its last completed slice.
        #[arg(long)]
        resume: bool,
    },
    /// Compute metrics over a trained timeline.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of tc,td,tq,tts,ppl,ttest.
        #[arg(long, value_delimiter = ',')]
        metric: Vec<String>,
        /// Predictive-perplexity horizon: slice t+h scored under model t.
        #[arg(long, default_value_t = 1)]
        horizon: usize,
        /// Top words per topic.
        #[arg(long)]
        topn: Option<usize>,
        /// Another run directory to t-test this run's perplexities against.
        #[arg(long)]
        against: Option<PathBuf>,
    },
    /// Export per-slice top words and word-probability trajectories.
    Topics {
        #[command(flatten)]
        common: Common,
        /// Top words per topic.
        #[arg(long)]
        topn: Option<usize>,
        /// Slice range, e.g. `3` or `2-5`; defaults to the whole timeline.
        #[arg(long)]
        slices: Option<String>,
        /// Comma-separated words whose probability trajectories to export.
        #[arg(long, value_delimiter = ',')]
        words: Vec<String>,
    },
    /// Generate a synthetic slice store for test fixtures.
    Synth {
        #[command(flatten)]
        common: Common,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest { common, corpus } => commands::ingest(&common, corpus.as_deref()),
        Command::Train {
            common,
            stream,
            resume,
        } => commands::train(&common, stream, resume),
        Command::Eval {
            common,
            metric,
            horizon,
            topn,
            against,
        } => commands::eval(&common, &metric, horizon, topn, against.as_deref()),
        Command::Topics {
            common,
            topn,
            slices,
            words,
        } => commands::topics(&common, topn, slices.as_deref(), &words),
        Command::Synth { common } => commands::synth(&common),
    };
    match result {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
