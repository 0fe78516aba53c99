//! The JSON model file: `{"d", "m", "T", "mu", "A", "C"}` with `A` and `C`
//! given as arrays of rows.

use std::path::Path;

use dualfilter_core::hmm::HmmModel;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub d: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub mu: Vec<f64>,
    #[serde(rename = "A")]
    pub transition: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub emission: Vec<Vec<f64>>,
}

impl ModelFile {
    pub fn from_model(model: &HmmModel) -> Self {
        ModelFile {
            d: model.d(),
            m: model.m(),
            horizon: model.horizon(),
            mu: model.mu().as_slice().to_vec(),
            transition: model.transition_rows(),
            emission: model.emission_rows(),
        }
    }

    pub fn into_model(self) -> CliResult<HmmModel> {
        if self.mu.len() != self.d {
            return Err(CliError::Input(format!(
                "model declares d = {} but mu has {} entries",
                self.d,
                self.mu.len()
            )));
        }
        if let Some(row) = self.emission.iter().find(|r| r.len() != self.m + 1) {
            return Err(CliError::Input(format!(
                "model declares m = {} but an emission row has {} entries",
                self.m,
                row.len()
            )));
        }
        if let Some(row) = self.transition.iter().find(|r| r.len() != self.d) {
            return Err(CliError::Input(format!(
                "model declares d = {} but a transition row has {} entries",
                self.d,
                row.len()
            )));
        }
        Ok(HmmModel::new(self.mu, self.transition, self.emission, self.horizon)?)
    }
}

pub fn parse_model(text: &str) -> CliResult<HmmModel> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("model file: {e}")))?;
    file.into_model()
}

pub fn read_model(path: &Path) -> CliResult<HmmModel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_model(&text).map_err(|e| match e {
        CliError::Input(msg) => CliError::Input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn model_json(model: &HmmModel) -> String {
    serde_json::to_string_pretty(&ModelFile::from_model(model)).expect("model serializes")
}

pub fn write_model(path: &Path, model: &HmmModel) -> CliResult<()> {
    std::fs::write(path, model_json(model) + "\n").map_err(|e| CliError::io(path, e))
}

/// `"1,1,0"` to tokens; the empty string is the empty path.
pub fn parse_tokens(text: &str) -> CliResult<Vec<usize>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Input(format!("path token {tok:?} is not a non-negative integer")))
        })
        .collect()
}
