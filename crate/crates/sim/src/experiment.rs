//! Replicated experiments: per-replicate pipelines and aggregation.

use std::time::Instant;

use pdwols::{
    backward_fit, backward_fit_pair, fit_stage, BackwardFit, Coefficients, CvOptions, EstimatorConfig, Method,
    ModelSpec, Penalty, Pilot, Regime, Result, StageFit, Term, Tuning, Weighting,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Generator, MethodSpec, PenaltyChoice, ScenarioConfig};
use crate::generate::{
    covariate_names, gen_high_dim, gen_one_stage, gen_two_stage_s1, rng_for, OneStageTest, TwoStageTest,
};
use crate::metrics::{error_rate, mean, sd, total_error_rate};

/// Magnitude above which a coefficient counts as selected.
pub const SELECTED_EPS: f64 = 1e-10;

/// The only true tailoring variable in every design.
pub const TAILORING_TERM: &str = "x1";

fn linear_terms(p: usize) -> Vec<Term> {
    covariate_names(p).iter().map(|c| Term::column(c)).collect()
}

/// Per-stage model specifications for a configuration.
pub fn model_specs(cfg: &ScenarioConfig) -> Vec<ModelSpec> {
    let p = cfg.covariates();
    let linear = linear_terms(p);
    match cfg.generator {
        Generator::OneStage => {
            let s = cfg.scenario.unwrap_or(4);
            let mut terms = Vec::new();
            if s >= 3 {
                terms.push(Term::parse("exp(x1)").expect("valid term"));
            }
            terms.extend(linear);
            let prop = if s == 2 || s == 4 { vec![Term::column("x1"), Term::column("x2")] } else { Vec::new() };
            vec![ModelSpec::symmetric(terms).with_propensity(prop)]
        }
        Generator::HighDim => vec![ModelSpec::symmetric(linear)],
        Generator::TwoStageS1 => {
            let spec = ModelSpec::symmetric(linear.clone()).with_propensity(linear);
            vec![spec.clone(), spec]
        }
    }
}

/// Estimator settings for one method on one replicate.
pub fn estimator_config(cfg: &ScenarioConfig, method: Method, seed: u64) -> EstimatorConfig<f64> {
    let mut e = EstimatorConfig::new(method);
    let unit_weights = matches!((cfg.generator, cfg.scenario), (Generator::OneStage, Some(1 | 3)));
    if method == Method::Pdwols && unit_weights {
        e.weighting = Weighting::Ones;
    }
    e.alpha = cfg.alpha;
    e.standardize = cfg.standardize;
    e.tuning = Tuning::Cv(CvOptions { folds: cfg.folds, seed, n_lambda: cfg.n_lambda, ..CvOptions::default() });
    if cfg.penalty == PenaltyChoice::Adaptive {
        e.penalty = Penalty::Adaptive { pilot: Pilot::Auto, per_fold: false };
    }
    e
}

/// Results of one method at one stage of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub terms: Vec<String>,
    pub selected: Vec<bool>,
    pub psi0: f64,
    pub psi: Vec<f64>,
    pub lambda: f64,
    pub error_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub stages: Vec<StageOutcome>,
    pub total_error_rate: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<MethodOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub rep: usize,
    pub seed: u64,
    pub runs: Vec<MethodRun>,
    /// Wall-clock seconds spent fitting (not part of serialized reports).
    #[serde(skip)]
    pub fit_seconds: f64,
}

/// Fitted chains for one method: penalized and/or refitted.
struct Chains {
    penalized: Option<Vec<StageFit<f64>>>,
    refitted: Option<Vec<StageFit<f64>>>,
}

fn fit_chains(
    cfg: &ScenarioConfig,
    data: &Data,
    specs: &[ModelSpec],
    method: Method,
    want: (bool, bool),
    seed: u64,
) -> Result<Chains> {
    let est = estimator_config(cfg, method, seed);
    match data {
        Data::One(s) => {
            let fit = fit_stage(&s.history, &s.y, &specs[0], &est.with_refit(want.1))?;
            Ok(Chains {
                penalized: want.0.then(|| vec![fit.penalized_only()]),
                refitted: want.1.then(|| vec![fit]),
            })
        }
        Data::Two(t) => match want {
            (true, true) => {
                let (p, r) = backward_fit_pair(&t.trial, specs, &est)?;
                Ok(Chains { penalized: Some(p.stages), refitted: Some(r.stages) })
            }
            (pen, _) => {
                let BackwardFit { stages, .. } = backward_fit(&t.trial, specs, &[est.with_refit(!pen)])?;
                Ok(if pen {
                    Chains { penalized: Some(stages), refitted: None }
                } else {
                    Chains { penalized: None, refitted: Some(stages) }
                })
            }
        },
    }
}

enum Data {
    One(crate::generate::OneStageSample),
    Two(crate::generate::TwoStageSample),
}

enum Test {
    One(OneStageTest),
    Two(TwoStageTest),
}

fn stage_outcome(c: &Coefficients<f64>, lambda: f64, er: f64) -> StageOutcome {
    StageOutcome {
        terms: c.interaction_terms.iter().map(|t| t.label().to_string()).collect(),
        selected: c.psi.iter().map(|p| p.abs() > SELECTED_EPS).collect(),
        psi0: c.psi0,
        psi: c.psi.clone(),
        lambda,
        error_rate: er,
    }
}

fn evaluate(stages: &[StageFit<f64>], refitted: bool, test: &Test) -> Result<MethodOutcome> {
    let coefs: Vec<&Coefficients<f64>> =
        stages.iter().map(|s| if refitted { s.final_coefficients() } else { &s.coefficients }).collect();
    let regime = Regime::new(stages.iter().map(|s| s.blip(refitted)).collect())?;
    match test {
        Test::One(t) => {
            let a = regime.decide(0, &t.history)?;
            let er = error_rate(&a, &t.oracle);
            Ok(MethodOutcome {
                stages: vec![stage_outcome(coefs[0], stages[0].lambda, er)],
                total_error_rate: er,
                value: mean(&t.outcomes(&a)),
            })
        }
        Test::Two(t) => {
            let r = t.rollout(|k, h| regime.decide(k, h))?;
            let e1 = error_rate(&r.a1, &r.oracle1);
            let e2 = error_rate(&r.a2, &r.oracle2);
            Ok(MethodOutcome {
                stages: vec![
                    stage_outcome(coefs[0], stages[0].lambda, e1),
                    stage_outcome(coefs[1], stages[1].lambda, e2),
                ],
                total_error_rate: total_error_rate(&[(&r.a1, &r.oracle1), (&r.a2, &r.oracle2)]),
                value: mean(&r.y),
            })
        }
    }
}

/// Run every configured method on replicate `rep`.
pub fn run_replicate(cfg: &ScenarioConfig, rep: usize) -> ReplicateResult {
    let seed = cfg.base_seed.wrapping_add(rep as u64);
    let data = match cfg.generator {
        Generator::OneStage => Data::One(gen_one_stage(cfg.n, seed)),
        Generator::HighDim => Data::One(gen_high_dim(cfg.n, cfg.covariates(), seed)),
        Generator::TwoStageS1 => Data::Two(gen_two_stage_s1(cfg.n, seed)),
    };
    let mut trng = rng_for(seed, 1);
    let test = match cfg.generator {
        Generator::TwoStageS1 => Test::Two(TwoStageTest::new(cfg.n_test, &mut trng)),
        _ => Test::One(OneStageTest::new(cfg.n_test, cfg.covariates(), &mut trng)),
    };
    let specs = model_specs(cfg);
    let mut runs: Vec<MethodRun> = cfg
        .methods
        .iter()
        .map(|m| MethodRun { method: m.label().to_string(), outcome: None, error: None })
        .collect();
    let mut fit_seconds = 0.0;
    for method in [Method::Pdwols, Method::Qlasso] {
        let idx = |refit: bool| cfg.methods.iter().position(|m| *m == MethodSpec { method, refit });
        let (ip, ir) = (idx(false), idx(true));
        if ip.is_none() && ir.is_none() {
            continue;
        }
        let start = Instant::now();
        let chains = fit_chains(cfg, &data, &specs, method, (ip.is_some(), ir.is_some()), seed);
        fit_seconds += start.elapsed().as_secs_f64();
        match chains {
            Err(e) => {
                for i in [ip, ir].into_iter().flatten() {
                    runs[i].error = Some(e.to_string());
                }
            }
            Ok(ch) => {
                for (i, stages, refitted) in [(ip, &ch.penalized, false), (ir, &ch.refitted, true)] {
                    if let (Some(i), Some(st)) = (i, stages) {
                        match evaluate(st, refitted, &test) {
                            Ok(o) => runs[i].outcome = Some(o),
                            Err(e) => runs[i].error = Some(e.to_string()),
                        }
                    }
                }
            }
        }
    }
    ReplicateResult { rep, seed, runs, fit_seconds }
}

/// Per-term summary of blip estimates over successful replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlipSummary {
    pub term: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub terms: Vec<String>,
    pub selection_rate: Vec<f64>,
    pub error_rate: f64,
    /// Treatment main effect first (`A`), then one entry per blip term.
    pub blip: Vec<BlipSummary>,
}

impl StageSummary {
    pub fn selection_rate_of(&self, term: &str) -> Option<f64> {
        self.terms.iter().position(|t| t == term).map(|i| self.selection_rate[i])
    }

    pub fn blip_of(&self, term: &str) -> Option<&BlipSummary> {
        self.blip.iter().find(|b| b.term == term)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub rep: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub n_ok: usize,
    pub failures: Vec<Failure>,
    pub stages: Vec<StageSummary>,
    /// Fraction of (replicate, stage) pairs missing the true tailoring term.
    pub fn_rate: f64,
    /// Fraction of noise blip terms selected, over replicates and stages.
    pub fp_rate: f64,
    pub total_error_rate: f64,
    pub value: f64,
    pub value_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ScenarioConfig,
    pub methods: Vec<MethodSummary>,
    pub replicates: Vec<ReplicateResult>,
}

impl MetricsReport {
    pub fn method(&self, label: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == label)
    }
}

/// True blip coefficient of `term` at `stage` (0-based); `A` is ψ₀.
pub fn true_blip(generator: Generator, stage: usize, term: &str) -> f64 {
    match (generator, stage, term) {
        (Generator::TwoStageS1, 0, "A") => 0.8,
        (Generator::TwoStageS1, 0, TAILORING_TERM) => -2.0,
        (_, _, "A") => 1.0,
        (_, _, TAILORING_TERM) => -1.5,
        _ => 0.0,
    }
}

fn summarize(cfg: &ScenarioConfig, label: &str, reps: &[ReplicateResult]) -> MethodSummary {
    let mut failures = Vec::new();
    let mut ok: Vec<&MethodOutcome> = Vec::new();
    for r in reps {
        if let Some(run) = r.runs.iter().find(|m| m.method == label) {
            match (&run.outcome, &run.error) {
                (Some(o), _) => ok.push(o),
                (None, e) => failures.push(Failure { rep: r.rep, message: e.clone().unwrap_or_default() }),
            }
        }
    }
    let n_stages = ok.first().map_or(0, |o| o.stages.len());
    let nf = ok.len() as f64;
    let (mut fn_num, mut fn_den, mut fp_num, mut fp_den) = (0usize, 0usize, 0usize, 0usize);
    let stages = (0..n_stages)
        .map(|k| {
            let terms = ok[0].stages[k].terms.clone();
            let selection_rate = (0..terms.len())
                .map(|j| ok.iter().filter(|o| o.stages[k].selected[j]).count() as f64 / nf)
                .collect();
            for o in &ok {
                for (t, &s) in terms.iter().zip(&o.stages[k].selected) {
                    if t == TAILORING_TERM {
                        fn_den += 1;
                        fn_num += usize::from(!s);
                    } else {
                        fp_den += 1;
                        fp_num += usize::from(s);
                    }
                }
            }
            let mut blip = Vec::with_capacity(terms.len() + 1);
            let mut push = |term: &str, draws: Vec<f64>| {
                let truth = true_blip(cfg.generator, k, term);
                let m = mean(&draws);
                blip.push(BlipSummary { term: term.to_string(), truth, mean: m, bias: m - truth, sd: sd(&draws) });
            };
            push("A", ok.iter().map(|o| o.stages[k].psi0).collect());
            for (j, t) in terms.iter().enumerate() {
                push(t, ok.iter().map(|o| o.stages[k].psi[j]).collect());
            }
            StageSummary {
                terms,
                selection_rate,
                error_rate: mean(&ok.iter().map(|o| o.stages[k].error_rate).collect::<Vec<_>>()),
                blip,
            }
        })
        .collect();
    let values: Vec<f64> = ok.iter().map(|o| o.value).collect();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    MethodSummary {
        method: label.to_string(),
        n_ok: ok.len(),
        failures,
        stages,
        fn_rate: ratio(fn_num, fn_den),
        fp_rate: ratio(fp_num, fp_den),
        total_error_rate: mean(&ok.iter().map(|o| o.total_error_rate).collect::<Vec<_>>()),
        value: mean(&values),
        value_se: sd(&values) / nf.sqrt(),
    }
}

/// Run all replicates (in parallel on the current rayon pool) and aggregate
/// in replicate order.
pub fn run_experiment(cfg: &ScenarioConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let replicates: Vec<ReplicateResult> = (0..cfg.reps).into_par_iter().map(|r| run_replicate(cfg, r)).collect();
    for r in &replicates {
        for run in &r.runs {
            if let Some(e) = &run.error {
                log::warn!("replicate {} ({}) failed: {e}", r.rep, run.method);
            }
        }
    }
    let methods = cfg.methods.iter().map(|m| summarize(cfg, m.label(), &replicates)).collect();
    Ok(MetricsReport { config: cfg.clone(), methods, replicates })
}
