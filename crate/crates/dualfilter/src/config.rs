//! Experiment configuration: a flat JSON object whose keys mirror the
//! command-line flags. Flags override values read from the file.

use std::path::{Path, PathBuf};

use dualfilter_core::oracle::DEFAULT_ENUM_BUDGET;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Which fixed-point map to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Path,
    Adapted,
    Both,
}

impl Mode {
    pub fn includes_path(self) -> bool {
        matches!(self, Mode::Path | Mode::Both)
    }

    pub fn includes_adapted(self) -> bool {
        matches!(self, Mode::Adapted | Mode::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub zero_convention: bool,
    pub enum_budget: u64,
    /// Horizon override; the model's `T` otherwise.
    #[serde(rename = "T")]
    pub horizon: Option<usize>,
    /// Comma-separated tokens.
    pub path: Option<String>,
    pub mode: Mode,
    pub iterations: usize,
    pub query: Option<usize>,
    pub draws: usize,
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub misc: bool,
    /// Alphabet size for the attention demo when no model is given.
    pub vocab: usize,
    pub tol_fixed_point: f64,
    pub tol_duality: f64,
    pub tol_representation: f64,
    pub tol_attention: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            model: None,
            seed: 0,
            out: PathBuf::from("out"),
            zero_convention: false,
            enum_budget: DEFAULT_ENUM_BUDGET as u64,
            horizon: None,
            path: None,
            mode: Mode::Path,
            iterations: 20,
            query: None,
            draws: 20,
            layers: 2,
            heads: 2,
            embed_dim: 8,
            misc: false,
            vocab: 3,
            tol_fixed_point: 1e-10,
            tol_duality: 1e-9,
            tol_representation: 1e-12,
            tol_attention: 1e-12,
        }
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub zero_convention: bool,
    pub enum_budget: Option<u64>,
    pub horizon: Option<usize>,
    pub path: Option<String>,
    pub mode: Option<Mode>,
    pub iterations: Option<usize>,
    pub query: Option<usize>,
    pub draws: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub embed_dim: Option<usize>,
    pub misc: bool,
    pub vocab: Option<usize>,
}

impl Config {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = Self::from_json(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        // a relative model path is read relative to the config file
        if let (Some(model), Some(dir)) = (&config.model, path.parent()) {
            if model.is_relative() {
                config.model = Some(dir.join(model));
            }
        }
        Ok(config)
    }

    pub fn apply(&mut self, o: Overrides) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = o.$field { self.$field = v; })*
            };
        }
        take!(seed, out, enum_budget, mode, iterations, draws, layers, heads, embed_dim, vocab);
        if o.model.is_some() {
            self.model = o.model;
        }
        if o.horizon.is_some() {
            self.horizon = o.horizon;
        }
        if o.path.is_some() {
            self.path = o.path;
        }
        if o.query.is_some() {
            self.query = o.query;
        }
        self.zero_convention |= o.zero_convention;
        self.misc |= o.misc;
    }

    pub fn validate(&self) -> CliResult<()> {
        let tolerances = [
            ("tol_fixed_point", self.tol_fixed_point),
            ("tol_duality", self.tol_duality),
            ("tol_representation", self.tol_representation),
            ("tol_attention", self.tol_attention),
        ];
        for (name, tol) in tolerances {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(CliError::Input(format!("{name} must be positive, got {tol}")));
            }
        }
        let counts = [
            ("enum_budget", self.enum_budget as usize),
            ("iterations", self.iterations),
            ("draws", self.draws),
            ("heads", self.heads),
            ("embed_dim", self.embed_dim),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(CliError::Input(format!("{name} must be at least 1")));
            }
        }
        if self.vocab < 2 {
            return Err(CliError::Input("vocab must be at least 2".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of the settings that determine the
    /// results: the output directory is dropped and the model path is
    /// replaced by the canonical model text.
    pub fn hash(&self, model_json: Option<&str>) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        canonical.model = None;
        let value = serde_json::json!({
            "config": canonical,
            "model": model_json,
        });
        hex::encode(Sha256::digest(serde_json::to_vec(&value).expect("config serializes")))
    }
}
