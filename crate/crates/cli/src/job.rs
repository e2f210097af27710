//! Resolved commands. A [`Job`] holds everything needed to recompute a run's
//! outputs, so it doubles as the configuration echo in the manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use pdwols::io::{
    fmt_num, read_covariates_file, read_long, read_stage_file, read_trial_files, read_weights, write_coefficients,
    StageTable,
};
use pdwols::{
    backward_fit, fit_stage, CvOptions, EstimatorConfig, Method, Penalty, Pilot, Regime, SelectionRule, StageFit,
    Trial, Tuning, Weighting,
};
use pdwols_sim::{run_experiment, write_report, MetricsReport, ScenarioConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::model::load_specs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Pdwols,
    Qlasso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsArg {
    Estimate,
    Ones,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleArg {
    Min,
    OneSe,
}

/// Estimator flags shared by `fit`, `cv-curve` and `dtr`.
#[derive(Debug, Clone, PartialEq, clap::Args, Serialize, Deserialize)]
pub struct EstimatorArgs {
    /// pdwols (heredity, balancing weights) or qlasso (plain LASSO, unit weights)
    #[arg(long, value_enum, default_value_t = ModeArg::Pdwols)]
    pub mode: ModeArg,
    /// Mixing between main-effect and interaction penalties, in (0, 1)
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Fixed penalty level (skips cross-validation)
    #[arg(long, conflicts_with = "cv")]
    pub lambda: Option<f64>,
    /// Choose the penalty by K-fold cross-validation (the default)
    #[arg(long)]
    pub cv: bool,
    #[arg(long, default_value_t = 4)]
    pub folds: usize,
    #[arg(long, default_value_t = 100)]
    pub n_lambda: usize,
    /// Smallest λ as a fraction of λ_max (default depends on n and p)
    #[arg(long)]
    pub min_ratio: Option<f64>,
    #[arg(long, value_enum, default_value_t = RuleArg::Min)]
    pub rule: RuleArg,
    /// Seed for fold assignment
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Adaptive penalty factors from a pilot fit
    #[arg(long)]
    pub adaptive: bool,
    /// Recompute adaptive factors inside every CV fold
    #[arg(long, requires = "adaptive")]
    pub per_fold: bool,
    /// Refit the selected support by unpenalized weighted least squares
    #[arg(long)]
    pub refit: bool,
    /// Observation weights (default: estimate for pdwols, ones for qlasso)
    #[arg(long, value_enum)]
    pub weights: Option<WeightsArg>,
    /// CSV with a `w` column, for `--weights file`
    #[arg(long)]
    pub weights_file: Option<PathBuf>,
    /// Keep columns on their raw scale
    #[arg(long)]
    pub no_standardize: bool,
}

impl EstimatorArgs {
    fn method(&self) -> Method {
        match self.mode {
            ModeArg::Pdwols => Method::Pdwols,
            ModeArg::Qlasso => Method::Qlasso,
        }
    }

    fn weights_choice(&self) -> Result<Option<WeightsArg>> {
        match (self.weights, &self.weights_file) {
            (Some(WeightsArg::File), None) => Err(CliError::config("weights: `file` needs --weights-file")),
            (Some(WeightsArg::Estimate | WeightsArg::Ones), Some(_)) => {
                Err(CliError::config("weights-file: only valid with --weights file"))
            }
            (None, Some(_)) => Ok(Some(WeightsArg::File)),
            (w, _) => Ok(w),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::config(format!("alpha: must lie in (0, 1), got {}", self.alpha)));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(CliError::config(format!("lambda: must be finite and nonnegative, got {l}")));
            }
        }
        if let Some(r) = self.min_ratio {
            if !(r > 0.0 && r < 1.0) {
                return Err(CliError::config(format!("min-ratio: must lie in (0, 1), got {r}")));
            }
        }
        if self.folds < 2 {
            return Err(CliError::config("folds: at least 2 are needed"));
        }
        if self.n_lambda < 2 {
            return Err(CliError::config("n-lambda: at least 2 are needed"));
        }
        self.weights_choice().map(|_| ())
    }

    /// Estimator configuration; `weights` supplies the vector for
    /// `--weights file`.
    pub fn config(&self, weights: Option<Vec<f64>>) -> Result<EstimatorConfig<f64>> {
        self.validate()?;
        let mut c = EstimatorConfig::new(self.method()).with_refit(self.refit);
        c.alpha = self.alpha;
        c.standardize = !self.no_standardize;
        c.tuning = match self.lambda {
            Some(lambda) => Tuning::Fixed { lambda },
            None => Tuning::Cv(CvOptions {
                folds: self.folds,
                seed: self.seed,
                n_lambda: self.n_lambda,
                min_ratio: self.min_ratio,
                rule: match self.rule {
                    RuleArg::Min => SelectionRule::Min,
                    RuleArg::OneSe => SelectionRule::OneSe,
                },
                ..CvOptions::default()
            }),
        };
        if self.adaptive {
            c.penalty = Penalty::Adaptive { pilot: Pilot::Auto, per_fold: self.per_fold };
        }
        match self.weights_choice()? {
            Some(WeightsArg::Estimate) => c.weighting = Weighting::Estimated,
            Some(WeightsArg::Ones) => c.weighting = Weighting::Ones,
            Some(WeightsArg::File) => {
                let w = weights.ok_or_else(|| CliError::config("weights: `file` is only supported by fit and cv-curve"))?;
                c.weighting = Weighting::User { w };
            }
            None => {}
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    Fit { data: PathBuf, model: PathBuf, estimator: EstimatorArgs },
    CvCurve { data: PathBuf, model: PathBuf, estimator: EstimatorArgs },
    Dtr { data: Vec<PathBuf>, long: bool, model: PathBuf, estimator: EstimatorArgs },
    Decide { regime: PathBuf, data: PathBuf, stage: usize },
    Simulate { config: PathBuf, scenario: ScenarioConfig },
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Fit { .. } => "fit",
            Job::CvCurve { .. } => "cv-curve",
            Job::Dtr { .. } => "dtr",
            Job::Decide { .. } => "decide",
            Job::Simulate { .. } => "simulate",
        }
    }

    pub fn inputs(&self) -> Vec<PathBuf> {
        let mut v = match self {
            Job::Fit { data, model, estimator } | Job::CvCurve { data, model, estimator } => {
                let mut v = vec![data.clone(), model.clone()];
                v.extend(estimator.weights_file.clone());
                v
            }
            Job::Dtr { data, model, .. } => {
                let mut v = data.clone();
                v.push(model.clone());
                v
            }
            Job::Decide { regime, data, .. } => vec![regime.clone(), data.clone()],
            Job::Simulate { config, .. } => vec![config.clone()],
        };
        v.dedup();
        v
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut m = BTreeMap::new();
        match self {
            Job::Fit { estimator, .. } | Job::CvCurve { estimator, .. } | Job::Dtr { estimator, .. } => {
                if estimator.lambda.is_none() {
                    m.insert("cv_folds".to_string(), estimator.seed);
                }
            }
            Job::Simulate { scenario, .. } => {
                m.insert("base_seed".to_string(), scenario.base_seed);
            }
            Job::Decide { .. } => {}
        }
        m
    }

    /// Run the job, writing outputs into `out`; returns the output file names.
    pub fn execute(&self, out: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(out)?;
        match self {
            Job::Fit { data, model, estimator } => run_fit(data, model, estimator, out),
            Job::CvCurve { data, model, estimator } => run_cv_curve(data, model, estimator, out),
            Job::Dtr { data, long, model, estimator } => run_dtr(data, *long, model, estimator, out),
            Job::Decide { regime, data, stage } => run_decide(regime, data, *stage, out),
            Job::Simulate { scenario, .. } => run_simulate(scenario, out),
        }
    }
}

fn open_stage(path: &Path) -> Result<StageTable<f64>> {
    read_stage_file(path).map_err(|e| with_path(e, path))
}

fn with_path(e: pdwols::Error, path: &Path) -> CliError {
    let mut c = CliError::from(e);
    c.message = format!("{}: {}", path.display(), c.message);
    c
}

fn user_weights(args: &EstimatorArgs) -> Result<Option<Vec<f64>>> {
    match &args.weights_file {
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::parse(format!("{}: {e}", p.display())))?;
            Ok(Some(read_weights(f).map_err(|e| with_path(e, p))?))
        }
        None => Ok(None),
    }
}

fn write_json<T: Serialize>(out: &Path, name: &str, v: &T, files: &mut Vec<String>) -> Result<()> {
    let f = File::create(out.join(name))?;
    serde_json::to_writer_pretty(BufWriter::new(f), v)?;
    files.push(name.to_string());
    Ok(())
}

fn write_coef_file(out: &Path, name: &str, c: &pdwols::Coefficients<f64>, files: &mut Vec<String>) -> Result<()> {
    write_coefficients(c, BufWriter::new(File::create(out.join(name))?))?;
    files.push(name.to_string());
    Ok(())
}

/// The selected-λ record written next to a fit.
#[derive(Debug, Serialize)]
struct LambdaRecord {
    lambda: f64,
    tuning: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_1se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rule: Option<SelectionRule>,
    converged: bool,
    kkt_violation: f64,
}

fn lambda_record(s: &StageFit<f64>) -> LambdaRecord {
    LambdaRecord {
        lambda: s.lambda,
        tuning: if s.cv.is_some() { "cv" } else { "fixed" },
        lambda_max: s.cv.as_ref().map(|c| c.lambda_max),
        lambda_min: s.cv.as_ref().map(|c| c.lambda_min),
        lambda_1se: s.cv.as_ref().map(|c| c.lambda_1se),
        rule: s.cv.as_ref().map(|c| c.rule),
        converged: s.fit.converged,
        kkt_violation: s.fit.kkt_violation,
    }
}

fn stage_inputs(data: &Path, model: &Path, args: &EstimatorArgs) -> Result<(StageTable<f64>, pdwols::ModelSpec, EstimatorConfig<f64>)> {
    let table = open_stage(data)?;
    if table.y.is_none() {
        return Err(CliError::config(format!("{}: outcome column `y` is required", data.display())));
    }
    let spec = load_specs(model, &[table.history.names()])?.remove(0);
    let cfg = args.config(user_weights(args)?)?;
    Ok((table, spec, cfg))
}

fn run_fit(data: &Path, model: &Path, args: &EstimatorArgs, out: &Path) -> Result<Vec<String>> {
    let (table, spec, cfg) = stage_inputs(data, model, args)?;
    let y = table.y.as_deref().expect("checked");
    let fit = fit_stage(&table.history, y, &spec, &cfg)?;
    let mut files = Vec::new();
    write_json(out, "fit.json", &fit.fit, &mut files)?;
    write_json(out, "lambda.json", &lambda_record(&fit), &mut files)?;
    write_json(out, "stage_fit.json", &fit, &mut files)?;
    write_coef_file(out, "coefficients.csv", &fit.coefficients, &mut files)?;
    if let Some(r) = &fit.refitted {
        write_coef_file(out, "refitted_coefficients.csv", r, &mut files)?;
    }
    println!("lambda = {}", fmt_num(fit.lambda));
    let c = fit.final_coefficients();
    let selected: Vec<String> = std::iter::once(format!("A={}", fmt_num(c.psi0)))
        .chain(
            c.interaction_terms
                .iter()
                .zip(&c.psi)
                .filter(|(_, &p)| p != 0.0)
                .map(|(t, &p)| format!("A*{}={}", t.label(), fmt_num(p))),
        )
        .collect();
    println!("blip: {}", selected.join(", "));
    Ok(files)
}

fn run_cv_curve(data: &Path, model: &Path, args: &EstimatorArgs, out: &Path) -> Result<Vec<String>> {
    if args.lambda.is_some() {
        return Err(CliError::config("lambda: cv-curve always cross-validates; drop --lambda"));
    }
    let (table, spec, cfg) = stage_inputs(data, model, args)?;
    let y = table.y.as_deref().expect("checked");
    let stage = fit_stage(&table.history, y, &spec, &EstimatorConfig { refit: false, ..cfg })?;
    let cv = stage.cv.expect("cross-validated fit");
    let name = "cv_curve.csv";
    let mut wtr = csv::Writer::from_path(out.join(name))?;
    wtr.write_record(["lambda", "cv_mean", "cv_se", "is_min", "is_1se", "selected"])?;
    for (l, &lambda) in cv.lambdas.iter().enumerate() {
        wtr.write_record([
            fmt_num(lambda),
            fmt_num(cv.cv_mean[l]),
            fmt_num(cv.cv_se[l]),
            (lambda == cv.lambda_min).to_string(),
            (lambda == cv.lambda_1se).to_string(),
            (l == cv.selected).to_string(),
        ])?;
    }
    wtr.flush()?;
    let mut files = vec![name.to_string()];
    write_json(out, "cv.json", &cv, &mut files)?;
    println!("lambda_max = {}, lambda_min = {}, lambda_1se = {}", fmt_num(cv.lambda_max), fmt_num(cv.lambda_min), fmt_num(cv.lambda_1se));
    Ok(files)
}

fn load_trial(data: &[PathBuf], long: bool) -> Result<(Trial<f64>, Vec<String>)> {
    if long {
        let [path] = data else {
            return Err(CliError::config("data: --long takes exactly one file"));
        };
        let f = File::open(path).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
        return read_long(f).map_err(|e| with_path(e, path));
    }
    if data.is_empty() {
        return Err(CliError::config("data: at least one stage file is required"));
    }
    let (trial, ids) = read_trial_files(data)?;
    let n = trial.outcome().len();
    Ok((trial, ids.unwrap_or_else(|| (1..=n).map(|i| i.to_string()).collect())))
}

fn run_dtr(data: &[PathBuf], long: bool, model: &Path, args: &EstimatorArgs, out: &Path) -> Result<Vec<String>> {
    let (trial, ids) = load_trial(data, long)?;
    let columns: Vec<&[String]> = trial.stages().iter().map(|h| h.names()).collect();
    let specs = load_specs(model, &columns)?;
    let cfg = args.config(None)?;
    let bf = backward_fit(&trial, &specs, &[cfg])?;
    let mut files = Vec::new();
    write_json(out, "regime.json", &bf.regime, &mut files)?;
    write_json(out, "stages.json", &bf.stages, &mut files)?;
    for (k, s) in bf.stages.iter().enumerate() {
        write_coef_file(out, &format!("stage{}_coefficients.csv", k + 1), &s.coefficients, &mut files)?;
        if let Some(r) = &s.refitted {
            write_coef_file(out, &format!("stage{}_refitted_coefficients.csv", k + 1), r, &mut files)?;
        }
    }
    let name = "decisions.csv";
    let mut wtr = csv::Writer::from_path(out.join(name))?;
    wtr.write_record(["id", "stage", "a", "recommended", "contrast"])?;
    for (k, h) in trial.stages().iter().enumerate() {
        let model = &bf.regime.stages[k];
        let c = model.contrast(h)?;
        let rec = model.optimal_actions(h)?;
        for i in 0..h.nrows() {
            wtr.write_record([
                ids[i].clone(),
                (k + 1).to_string(),
                h.a()[i].to_string(),
                rec[i].to_string(),
                fmt_num(c[i]),
            ])?;
        }
    }
    wtr.flush()?;
    files.push(name.to_string());
    for (k, m) in bf.regime.stages.iter().enumerate() {
        let terms: Vec<String> =
            m.terms.iter().zip(&m.psi).map(|(t, &p)| format!(" + {}*{}", fmt_num(p), t.label())).collect();
        println!("stage {}: contrast = {}{}", k + 1, fmt_num(m.psi0), terms.concat());
    }
    Ok(files)
}

fn run_decide(regime: &Path, data: &Path, stage: usize, out: &Path) -> Result<Vec<String>> {
    let f = File::open(regime).map_err(|e| CliError::parse(format!("{}: {e}", regime.display())))?;
    let regime: Regime<f64> = serde_json::from_reader(f)?;
    if stage == 0 || stage > regime.n_stages() {
        return Err(CliError::config(format!("stage: regime has stages 1..={}, got {stage}", regime.n_stages())));
    }
    let table = read_covariates_file::<f64>(data).map_err(|e| with_path(e, data))?;
    let model = &regime.stages[stage - 1];
    let c = model.contrast(&table.history)?;
    let rec = regime.decide(stage - 1, &table.history)?;
    let n = table.history.nrows();
    let ids = table.ids.unwrap_or_else(|| (1..=n).map(|i| i.to_string()).collect());
    let name = "decisions.csv";
    let mut wtr = csv::Writer::from_path(out.join(name))?;
    wtr.write_record(["id", "recommended", "contrast"])?;
    for i in 0..n {
        wtr.write_record([ids[i].clone(), rec[i].to_string(), fmt_num(c[i])])?;
    }
    wtr.flush()?;
    let treated = rec.iter().filter(|&&a| a == 1).count();
    println!("{treated}/{n} recommended treatment");
    Ok(vec![name.to_string()])
}

fn run_simulate(cfg: &ScenarioConfig, out: &Path) -> Result<Vec<String>> {
    let report = run_experiment(cfg)?;
    let paths = write_report(&report, out)?;
    print_summary(&report);
    Ok(paths.iter().map(|p| p.file_name().expect("file").to_string_lossy().into_owned()).collect())
}

fn print_summary(r: &MetricsReport) {
    println!("{:<8} {:>5} {:>8} {:>8} {:>8} {:>8}", "method", "ok", "TER", "FN", "FP", "value");
    for m in &r.methods {
        println!(
            "{:<8} {:>5} {:>7.2}% {:>7.2}% {:>7.2}% {:>8.3}",
            m.method,
            m.n_ok,
            100.0 * m.total_error_rate,
            100.0 * m.fn_rate,
            100.0 * m.fp_rate,
            m.value
        );
        for f in &m.failures {
            println!("  replicate {} failed: {}", f.rep, f.message);
        }
    }
}
