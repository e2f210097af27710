//! Declarative experiment description.

use std::path::Path;

use pdwols::{Error, Method, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    OneStage,
    HighDim,
    TwoStageS1,
}

/// One estimator to run on every replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default)]
    pub refit: bool,
}

impl MethodSpec {
    pub fn label(&self) -> &'static str {
        match (self.method, self.refit) {
            (Method::Pdwols, false) => "pdwols",
            (Method::Pdwols, true) => "rpdwols",
            (Method::Qlasso, false) => "ql",
            (Method::Qlasso, true) => "rql",
        }
    }

    /// All four method/refit combinations.
    pub fn all() -> Vec<Self> {
        [Method::Pdwols, Method::Qlasso]
            .into_iter()
            .flat_map(|method| [false, true].map(|refit| Self { method, refit }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyChoice {
    #[default]
    Uniform,
    Adaptive,
}

fn default_n_test() -> usize {
    10_000
}
fn default_alpha() -> f64 {
    0.5
}
fn default_folds() -> usize {
    4
}
fn default_n_lambda() -> usize {
    100
}
fn default_methods() -> Vec<MethodSpec> {
    MethodSpec::all()
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub generator: Generator,
    /// Model-specification scenario 1..4 (one-stage generator only).
    #[serde(default)]
    pub scenario: Option<u8>,
    pub n: usize,
    /// Covariate count; fixed at 10 except for the high-dimensional design.
    #[serde(default)]
    pub p: Option<usize>,
    pub reps: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_n_lambda")]
    pub n_lambda: usize,
    #[serde(default)]
    pub penalty: PenaltyChoice,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

impl ScenarioConfig {
    pub fn new(generator: Generator, n: usize, reps: usize) -> Self {
        Self {
            generator,
            scenario: None,
            n,
            p: None,
            reps,
            n_test: default_n_test(),
            base_seed: 0,
            methods: default_methods(),
            alpha: default_alpha(),
            folds: default_folds(),
            n_lambda: default_n_lambda(),
            penalty: PenaltyChoice::Uniform,
            standardize: true,
        }
    }

    pub fn one_stage(scenario: u8, n: usize, reps: usize) -> Self {
        Self { scenario: Some(scenario), ..Self::new(Generator::OneStage, n, reps) }
    }

    /// The high-dimensional design at its default size (n = 200, p = 400).
    pub fn high_dim(reps: usize) -> Self {
        Self { p: Some(400), ..Self::new(Generator::HighDim, 200, reps) }
    }

    pub fn two_stage(n: usize, reps: usize) -> Self {
        Self::new(Generator::TwoStageS1, n, reps)
    }

    pub fn with_methods(mut self, methods: Vec<MethodSpec>) -> Self {
        self.methods = methods;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.base_seed = seed;
        self
    }

    pub fn covariates(&self) -> usize {
        match self.generator {
            Generator::HighDim => self.p.unwrap_or(400),
            _ => 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (self.generator, self.scenario) {
            (Generator::OneStage, Some(1..=4)) => {}
            (Generator::OneStage, s) => return bad(format!("scenario: one_stage needs 1..=4, got {s:?}")),
            (_, Some(_)) => return bad("scenario: only valid for the one_stage generator".into()),
            _ => {}
        }
        if self.generator != Generator::HighDim && self.p.is_some_and(|p| p != 10) {
            return bad("p: only the high_dim generator accepts a covariate count".into());
        }
        if self.covariates() < 2 {
            return bad("p: at least 2 covariates are needed".into());
        }
        if self.n < 2 * self.folds || self.folds < 2 {
            return bad(format!("n: need n >= 2*folds (n={}, folds={})", self.n, self.folds));
        }
        if self.reps == 0 || self.n_test == 0 {
            return bad("reps/n_test: must be positive".into());
        }
        if self.methods.is_empty() {
            return bad("methods: at least one method is required".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha: must lie in (0, 1)".into());
        }
        if self.n_lambda < 2 {
            return bad("n_lambda: must be at least 2".into());
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    /// Load from `.json` or (otherwise) TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&s)
        } else {
            Self::from_toml_str(&s)
        }
    }
}
