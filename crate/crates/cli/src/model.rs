//! Model specification files.
//!
//! A file either holds one stage's term lists at the top level (shared by
//! every stage) or an array of `[[stage]]` tables, one per stage:
//!
//! ```toml
//! treatment_free = ["*", "exp(x1)"]
//! blip = ["*"]
//! propensity = ["x1", "x2"]
//! ```
//!
//! `*` expands to every covariate of the stage.

use std::path::Path;

use pdwols::ModelSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageModel {
    pub treatment_free: Vec<String>,
    pub blip: Vec<String>,
    #[serde(default)]
    pub propensity: Vec<String>,
    #[serde(default)]
    pub penalize_psi0: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Staged {
    stage: Vec<StageModel>,
}

impl StageModel {
    pub fn resolve(&self, columns: &[String]) -> Result<ModelSpec> {
        let mut spec = ModelSpec::from_patterns(&self.treatment_free, &self.blip, &self.propensity, columns)?;
        spec.penalize_psi0 = self.penalize_psi0;
        Ok(spec)
    }
}

pub fn parse_models(src: &str) -> Result<Vec<StageModel>> {
    let value: toml::Table = toml::from_str(src).map_err(|e| CliError::parse(format!("model file: {e}")))?;
    if value.contains_key("stage") {
        let s: Staged = value.try_into().map_err(|e| CliError::config(format!("model file: {e}")))?;
        if s.stage.is_empty() {
            return Err(CliError::config("model file: `stage` must list at least one stage"));
        }
        Ok(s.stage)
    } else {
        let m: StageModel = value.try_into().map_err(|e| CliError::config(format!("model file: {e}")))?;
        Ok(vec![m])
    }
}

/// One resolved spec per stage; a single-stage file is reused for all.
pub fn load_specs(path: &Path, columns: &[&[String]]) -> Result<Vec<ModelSpec>> {
    let src = std::fs::read_to_string(path).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
    let models = parse_models(&src)?;
    let k = columns.len();
    match models.len() {
        1 => columns.iter().map(|c| models[0].resolve(c)).collect(),
        m if m == k => models.iter().zip(columns).map(|(m, c)| m.resolve(c)).collect(),
        m => Err(CliError::config(format!("model file: {m} stage models for {k} stages"))),
    }
}
