//! The five subcommands. Each writes its reports under the output directory
//! and returns the files written; invariant violations are reported after
//! the files are on disk.

mod attention_demo;
mod duality;
mod fixedpoint;
mod oracle;
mod represent;

use std::path::PathBuf;

use dualfilter_core::hmm::{HmmModel, ObservationPath};
use dualfilter_core::oracle::ZeroPolicy;
use dualfilter_core::sample::sample_path;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use attention_demo::attention_demo;
pub use duality::duality;
pub use fixedpoint::fixedpoint;
pub use oracle::oracle;
pub use represent::represent;

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::model_io::{model_json, parse_tokens, read_model};
use crate::report::{Header, ReportSink};

/// What a successful command produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// One-line human-readable summaries.
    pub notes: Vec<String>,
}

/// Resolved configuration, loaded model and configuration hash.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: Config,
    pub model: Option<HmmModel>,
    pub config_hash: String,
}

impl Context {
    pub fn new(config: Config) -> CliResult<Self> {
        config.validate()?;
        let model = match &config.model {
            Some(path) => {
                let model = read_model(path)?;
                Some(match config.horizon {
                    Some(h) => model.with_horizon(h)?,
                    None => model,
                })
            }
            None => None,
        };
        let config_hash = config.hash(model.as_ref().map(model_json).as_deref());
        Ok(Context {
            config,
            model,
            config_hash,
        })
    }

    pub fn model(&self) -> CliResult<&HmmModel> {
        self.model
            .as_ref()
            .ok_or_else(|| CliError::Input("this command needs a model (--model or \"model\" in the config)".into()))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.config.seed)
    }

    pub fn policy(&self) -> ZeroPolicy {
        if self.config.zero_convention {
            ZeroPolicy::Convention
        } else {
            ZeroPolicy::Strict
        }
    }

    pub fn sink(&self, command: &str) -> CliResult<ReportSink> {
        ReportSink::new(
            &self.config.out,
            Header::new(command, self.config.seed, self.config_hash.clone()),
        )
    }

    /// The configured path, or one sampled from the model over its horizon.
    pub fn observation_path(&self, model: &HmmModel, rng: &mut ChaCha8Rng) -> CliResult<ObservationPath> {
        let tokens = match &self.config.path {
            Some(text) => parse_tokens(text)?,
            None => sample_path(rng, model, model.horizon()),
        };
        Ok(ObservationPath::new(model.m(), tokens)?)
    }
}

pub(crate) fn tokens_string(tokens: &[usize]) -> String {
    tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
}
