use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, Context, Outcome};
use crate::config::{Config, Mode, Overrides};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "dualfilter", version, about = "Exact filtering, dual control and fixed-point checks for finite HMMs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Model file (JSON with d, m, T, mu, A, C).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Flat JSON configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Treat conditionals on impossible prefixes as zero instead of failing.
    #[arg(long)]
    pub zero_convention: bool,
    /// Largest number of joint paths an exact expectation may visit.
    #[arg(long)]
    pub enum_budget: Option<u64>,
    /// Horizon override.
    #[arg(short = 'T', long = "horizon")]
    pub horizon: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact filter and next-token probabilities along a path.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Comma-separated tokens; sampled from the model when absent.
        #[arg(long)]
        path: Option<String>,
    },
    /// Fixed-point residual of the filter and an iteration trace.
    Fixedpoint {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        path: Option<String>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Number of applications of the map.
        #[arg(long = "iterations", short = 'K', value_parser = clap::value_parser!(u64).range(1..))]
        iterations: Option<u64>,
    },
    /// Duality gap for random controls and optimality of the filter feedback.
    Duality {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        draws: Option<u64>,
    },
    /// Predictor representation of next-token conditionals.
    Represent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        query: Option<usize>,
    },
    /// Toy attention stack with structural checks and a layer KL curve.
    AttentionDemo {
        #[command(flatten)]
        common: Common,
        /// Prompt tokens; sampled when absent.
        #[arg(long)]
        path: Option<String>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        heads: Option<usize>,
        #[arg(long)]
        embed_dim: Option<usize>,
        /// Alphabet size when no model is given.
        #[arg(long)]
        vocab: Option<usize>,
        /// Enable residual connections, layer normalization and the feed-forward block.
        #[arg(long)]
        misc: bool,
    },
}

fn overrides(common: &Common) -> Overrides {
    Overrides {
        model: common.model.clone(),
        seed: common.seed,
        out: common.out.clone(),
        zero_convention: common.zero_convention,
        enum_budget: common.enum_budget,
        horizon: common.horizon,
        ..Overrides::default()
    }
}

fn resolve(common: &Common, extra: Overrides) -> CliResult<Config> {
    let mut config = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let mut o = overrides(common);
    o.path = extra.path;
    o.mode = extra.mode;
    o.iterations = extra.iterations;
    o.query = extra.query;
    o.draws = extra.draws;
    o.layers = extra.layers;
    o.heads = extra.heads;
    o.embed_dim = extra.embed_dim;
    o.vocab = extra.vocab;
    o.misc = extra.misc;
    config.apply(o);
    Ok(config)
}

/// Resolves the configuration and runs the command.
pub fn execute(command: Command) -> CliResult<Outcome> {
    match command {
        Command::Oracle { common, path } => {
            let cfg = resolve(&common, Overrides { path, ..Overrides::default() })?;
            commands::oracle(&Context::new(cfg)?)
        }
        Command::Fixedpoint {
            common,
            path,
            mode,
            iterations,
        } => {
            let cfg = resolve(
                &common,
                Overrides {
                    path,
                    mode,
                    iterations: iterations.map(|k| k as usize),
                    ..Overrides::default()
                },
            )?;
            commands::fixedpoint(&Context::new(cfg)?)
        }
        Command::Duality { common, draws } => {
            let cfg = resolve(
                &common,
                Overrides {
                    draws: draws.map(|k| k as usize),
                    ..Overrides::default()
                },
            )?;
            commands::duality(&Context::new(cfg)?)
        }
        Command::Represent { common, query } => {
            let cfg = resolve(&common, Overrides { query, ..Overrides::default() })?;
            commands::represent(&Context::new(cfg)?)
        }
        Command::AttentionDemo {
            common,
            path,
            layers,
            heads,
            embed_dim,
            vocab,
            misc,
        } => {
            let cfg = resolve(
                &common,
                Overrides {
                    path,
                    layers,
                    heads,
                    embed_dim,
                    vocab,
                    misc,
                    ..Overrides::default()
                },
            )?;
            commands::attention_demo(&Context::new(cfg)?)
        }
    }
}

/// Parses arguments, runs, prints a summary and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { CliError::EXIT_INPUT } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(outcome) => {
            for note in &outcome.notes {
                eprintln!("{note}");
            }
            for file in &outcome.files {
                println!("{}", file.display());
            }
            0
        }
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}
