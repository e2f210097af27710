//! Blip and regret evaluation, decision rules, single-stage estimation
//! pipelines and the backward-recursive multi-stage loop.

use serde::{Deserialize, Serialize};

use crate::data::{build_design, CenteringMode, Coefficients, ModelSpec, StageHistory, Trial};
use crate::error::{Error, Result};
use crate::propensity::{dwols_weights, fit_logistic, null_weights, predict_propensity, PropensityModel, WeightVector};
use crate::scalar::Scalar;
use crate::selection::{
    adaptive_factors, kfold_cv, refit, CvOptions, CvResult, FactorSource, Pilot, Support,
};
use crate::solver::{cd_fit, fit_lambdas, HeredityFit, Mode, PenaltyFactors, PenaltySpec, Problem, SolverOptions};
use crate::term::Term;

/// Magnitude above which an original-scale coefficient counts as selected.
pub const SELECTION_EPS: f64 = 1e-10;

/// `γ(h, a) = a (ψ₀ + Σ ψ_j x_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct BlipModel<F> {
    pub psi0: F,
    pub terms: Vec<Term>,
    pub psi: Vec<F>,
}

impl<F: Scalar> BlipModel<F> {
    pub fn new(psi0: F, terms: Vec<Term>, psi: Vec<F>) -> Result<Self> {
        if terms.len() != psi.len() {
            return Err(Error::Shape(format!("{} blip terms but {} coefficients", terms.len(), psi.len())));
        }
        Ok(Self { psi0, terms, psi })
    }

    /// Blip part of a fitted outcome model.
    pub fn from_coefficients(c: &Coefficients<F>) -> Self {
        Self { psi0: c.psi0, terms: c.interaction_terms.clone(), psi: c.psi.clone() }
    }

    pub fn is_intercept_only(&self) -> bool {
        self.psi.iter().all(|&p| p == F::zero())
    }

    /// `ψ₀ + Σ ψ_j x_j` on one covariate row.
    pub fn contrast_row(&self, row: &[(&str, F)]) -> Result<F> {
        let mut v = self.psi0;
        for (t, &p) in self.terms.iter().zip(&self.psi) {
            if p != F::zero() {
                v = v + p * t.evaluate_row(row)?;
            }
        }
        Ok(v)
    }

    /// `ψ₀ + Σ ψ_j x_j` for every row of a history.
    pub fn contrast(&self, history: &StageHistory<F>) -> Result<Vec<F>> {
        let n = history.nrows();
        let mut out = vec![self.psi0; n];
        for (t, &p) in self.terms.iter().zip(&self.psi) {
            if p != F::zero() {
                let x = t.evaluate(n, |c| history.column(c))?;
                out.iter_mut().zip(&x).for_each(|(o, &v)| *o = *o + p * v);
            }
        }
        Ok(out)
    }

    pub fn optimal_actions(&self, history: &StageHistory<F>) -> Result<Vec<u8>> {
        Ok(self.contrast(history)?.into_iter().map(decide).collect())
    }
}

fn decide<F: Scalar>(contrast: F) -> u8 {
    u8::from(contrast > F::zero())
}

fn a_f<F: Scalar>(a: u8) -> F {
    if a == 0 {
        F::zero()
    } else {
        F::one()
    }
}

pub fn blip_value<F: Scalar>(model: &BlipModel<F>, row: &[(&str, F)], a: u8) -> Result<F> {
    if a == 0 {
        // Still resolve the terms so an unknown column is reported.
        model.contrast_row(row)?;
        return Ok(F::zero());
    }
    model.contrast_row(row)
}

/// `I(ψ₀ + Σ ψ_j x_j > 0)`; a zero contrast maps to the reference action 0.
pub fn optimal_action<F: Scalar>(model: &BlipModel<F>, row: &[(&str, F)]) -> Result<u8> {
    Ok(decide(model.contrast_row(row)?))
}

/// `γ(h, a_opt) − γ(h, a)`, nonnegative.
pub fn regret<F: Scalar>(model: &BlipModel<F>, row: &[(&str, F)], a: u8) -> Result<F> {
    let c = model.contrast_row(row)?;
    Ok(regret_from_contrast(c, a))
}

fn regret_from_contrast<F: Scalar>(c: F, a: u8) -> F {
    let opt = decide(c);
    (a_f::<F>(opt) - a_f::<F>(a)) * c
}

/// Response for the next-earlier stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct PseudoOutcome<F> {
    pub values: Vec<F>,
    /// 1-based stage the values feed into.
    pub stage: usize,
}

/// Regret-added pseudo-outcome `ỹ = y + γ(h, â_opt) − γ(h, a)`.
pub fn pseudo_outcome<F: Scalar>(
    y_next: &[F],
    model: &BlipModel<F>,
    history: &StageHistory<F>,
    stage: usize,
) -> Result<PseudoOutcome<F>> {
    if y_next.len() != history.nrows() {
        return Err(Error::Shape(format!("{} outcomes for {} rows", y_next.len(), history.nrows())));
    }
    let c = model.contrast(history)?;
    let values = y_next
        .iter()
        .zip(&c)
        .zip(history.a())
        .map(|((&y, &ci), &a)| y + regret_from_contrast(ci, a))
        .collect();
    Ok(PseudoOutcome { values, stage })
}

/// Q-learning pseudo-outcome `ỹ = f̂(h) + γ(h, â_opt)`.
pub fn q_pseudo_outcome<F: Scalar>(
    coefficients: &Coefficients<F>,
    spec: &ModelSpec,
    history: &StageHistory<F>,
    stage: usize,
) -> Result<PseudoOutcome<F>> {
    let raw = build_design(history, spec)?;
    let f = coefficients.predict_treatment_free(&raw);
    let c = BlipModel::from_coefficients(coefficients).contrast(history)?;
    let values = f.iter().zip(&c).map(|(&fi, &ci)| fi + ci.max(F::zero())).collect();
    Ok(PseudoOutcome { values, stage })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Heredity-constrained fit with balancing weights.
    Pdwols,
    /// Plain LASSO on the outcome model with unit weights (Q-learning).
    Qlasso,
}

impl Method {
    pub fn mode(self) -> Mode {
        match self {
            Self::Pdwols => Mode::Heredity,
            Self::Qlasso => Mode::Plain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
#[serde(bound = "F: Scalar")]
pub enum Weighting<F> {
    /// `|a − π̂|` from a logistic model on the spec's propensity terms
    /// (intercept-only when the list is empty).
    Estimated,
    Ones,
    User { w: Vec<F> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
#[serde(bound = "F: Scalar")]
pub enum Tuning<F> {
    Fixed { lambda: F },
    Cv(CvOptions<F>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
#[serde(bound = "F: Scalar")]
pub enum Penalty<F> {
    Uniform,
    /// Adaptive factors from a pilot fit, on the full data or per CV fold.
    Adaptive { pilot: Pilot<F>, per_fold: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct EstimatorConfig<F> {
    pub method: Method,
    pub refit: bool,
    pub alpha: F,
    pub weighting: Weighting<F>,
    pub tuning: Tuning<F>,
    pub penalty: Penalty<F>,
    pub standardize: bool,
    pub centering: CenteringMode,
    pub solver: SolverOptions<F>,
}

impl<F: Scalar> EstimatorConfig<F> {
    /// Method defaults: estimated weights for pdWOLS, unit weights for
    /// Q-learning; four-fold CV, α = 0.5, standardized columns.
    pub fn new(method: Method) -> Self {
        Self {
            method,
            refit: false,
            alpha: F::lit(0.5),
            weighting: match method {
                Method::Pdwols => Weighting::Estimated,
                Method::Qlasso => Weighting::Ones,
            },
            tuning: Tuning::Cv(CvOptions::default()),
            penalty: Penalty::Uniform,
            standardize: true,
            centering: CenteringMode::WeightedMean,
            solver: SolverOptions::default(),
        }
    }

    pub fn with_refit(mut self, refit: bool) -> Self {
        self.refit = refit;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        if let Tuning::Cv(o) = &mut self.tuning {
            o.seed = seed;
        }
        self
    }
}

/// Everything produced by one stage of estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct StageFit<F> {
    pub spec: ModelSpec,
    pub weights: WeightVector<F>,
    pub propensity: Option<PropensityModel<F>>,
    pub factors: PenaltyFactors<F>,
    pub cv: Option<CvResult<F>>,
    pub lambda: F,
    /// Penalized fit on the solver's standardized scale.
    pub fit: HeredityFit<F>,
    /// Penalized fit on the original scale.
    pub coefficients: Coefficients<F>,
    pub support: Support,
    pub refitted: Option<Coefficients<F>>,
}

impl<F: Scalar> StageFit<F> {
    /// Refitted coefficients when present, otherwise the penalized ones.
    pub fn final_coefficients(&self) -> &Coefficients<F> {
        self.refitted.as_ref().unwrap_or(&self.coefficients)
    }

    pub fn blip(&self, refitted: bool) -> BlipModel<F> {
        let c = if refitted { self.refitted.as_ref().unwrap_or(&self.coefficients) } else { &self.coefficients };
        BlipModel::from_coefficients(c)
    }

    /// Same stage with the refitted coefficients removed.
    pub fn penalized_only(&self) -> Self {
        Self { refitted: None, ..self.clone() }
    }
}

fn stage_weights<F: Scalar>(
    history: &StageHistory<F>,
    spec: &ModelSpec,
    weighting: &Weighting<F>,
) -> Result<(WeightVector<F>, Option<PropensityModel<F>>)> {
    match weighting {
        Weighting::Estimated => {
            let m = fit_logistic(history, &spec.propensity)?;
            let pi = predict_propensity(&m, history)?;
            Ok((dwols_weights(history.a(), &pi), Some(m)))
        }
        Weighting::Ones => Ok((null_weights(history.nrows()), None)),
        Weighting::User { w } => {
            if w.len() != history.nrows() {
                return Err(Error::Shape(format!("{} weights for {} rows", w.len(), history.nrows())));
            }
            Ok((WeightVector::user(w.clone())?, None))
        }
    }
}

/// Estimate one stage: design, weights, penalty factors, λ, penalized fit
/// and (optionally) the refit on the selected support.
pub fn fit_stage<F: Scalar>(
    history: &StageHistory<F>,
    y: &[F],
    spec: &ModelSpec,
    cfg: &EstimatorConfig<F>,
) -> Result<StageFit<F>> {
    if history.is_treatment_constant() {
        return Err(Error::ConstantTreatment);
    }
    let raw = build_design(history, spec)?;
    let (weights, propensity) = stage_weights(history, spec, &cfg.weighting)?;
    let w = &weights.w;
    let mode = cfg.method.mode();
    let problem = Problem::prepare(&raw, y, w, cfg.centering, cfg.standardize)?;
    let factors = match &cfg.penalty {
        Penalty::Uniform => PenaltyFactors::for_blocks(problem.blocks(), spec.penalize_psi0),
        Penalty::Adaptive { pilot, .. } => adaptive_factors(&problem, *pilot)?.penalty_factors(mode, spec.penalize_psi0),
    };
    let (fit, cv) = match &cfg.tuning {
        Tuning::Fixed { lambda } => {
            let s = PenaltySpec { lambda: *lambda, alpha: cfg.alpha, factors: factors.clone(), mode };
            (cd_fit(&problem, &s, None, &cfg.solver)?, None)
        }
        Tuning::Cv(opts) => {
            let opts = CvOptions {
                standardize: cfg.standardize,
                centering: cfg.centering,
                solver: cfg.solver.clone(),
                ..opts.clone()
            };
            let source = match &cfg.penalty {
                Penalty::Adaptive { pilot, per_fold: true } => FactorSource::AdaptivePerFold {
                    full: factors.clone(),
                    pilot: *pilot,
                    penalize_psi0: spec.penalize_psi0,
                },
                _ => FactorSource::Fixed(factors.clone()),
            };
            let cv = kfold_cv(&raw, y, w, cfg.alpha, &source, mode, &opts)?;
            let mut fits = fit_lambdas(&problem, &cv.lambdas[..=cv.selected], cfg.alpha, &factors, mode, &cfg.solver)?;
            (fits.pop().expect("non-empty λ prefix"), Some(cv))
        }
    };
    if !fit.converged {
        log::warn!("stage fit did not converge (λ={}, kkt {})", fit.lambda, fit.kkt_violation);
    }
    let coefficients = fit.original(&problem);
    let support = Support::from_coefficients(&coefficients, F::lit(SELECTION_EPS));
    let refitted = if cfg.refit { Some(refit(&raw, y, w, &support)?) } else { None };
    Ok(StageFit {
        spec: spec.clone(),
        weights,
        propensity,
        factors,
        cv,
        lambda: fit.lambda,
        fit,
        coefficients,
        support,
        refitted,
    })
}

/// Provenance of a regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct EstimatorTag<F> {
    pub method: Method,
    pub refit: bool,
    pub alpha: F,
    /// Penalty level per stage (stage 1 first).
    pub lambdas: Vec<F>,
}

/// One decision rule per stage, stage 1 first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Regime<F> {
    pub stages: Vec<BlipModel<F>>,
    pub estimator: Option<EstimatorTag<F>>,
}

impl<F: Scalar> Regime<F> {
    pub fn new(stages: Vec<BlipModel<F>>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Config("a regime needs at least one stage".into()));
        }
        Ok(Self { stages, estimator: None })
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    /// Recommended actions for stage `k` (0-based) on the given history.
    pub fn decide(&self, k: usize, history: &StageHistory<F>) -> Result<Vec<u8>> {
        self.stages
            .get(k)
            .ok_or_else(|| Error::Config(format!("regime has {} stages, asked for stage {}", self.n_stages(), k + 1)))?
            .optimal_actions(history)
    }
}

/// Stage fits (stage 1 first) plus the regime they define.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct BackwardFit<F> {
    pub stages: Vec<StageFit<F>>,
    pub regime: Regime<F>,
}

fn stage_configs<F: Scalar>(cfgs: &[EstimatorConfig<F>], k: usize) -> Result<Vec<&EstimatorConfig<F>>> {
    match cfgs.len() {
        1 => Ok(vec![&cfgs[0]; k]),
        n if n == k => Ok(cfgs.iter().collect()),
        n => Err(Error::Config(format!("{n} estimator configs for {k} stages"))),
    }
}

fn next_outcome<F: Scalar>(
    fit: &StageFit<F>,
    cfg: &EstimatorConfig<F>,
    history: &StageHistory<F>,
    y: &[F],
    stage: usize,
) -> Result<Vec<F>> {
    let c = if cfg.refit { fit.final_coefficients() } else { &fit.coefficients };
    let po = match cfg.method {
        Method::Pdwols => pseudo_outcome(y, &BlipModel::from_coefficients(c), history, stage)?,
        Method::Qlasso => q_pseudo_outcome(c, &fit.spec, history, stage)?,
    };
    Ok(po.values)
}

fn assemble<F: Scalar>(stages: Vec<StageFit<F>>, cfg: &EstimatorConfig<F>) -> Result<BackwardFit<F>> {
    let rules = stages.iter().map(|s| s.blip(cfg.refit)).collect();
    let mut regime = Regime::new(rules)?;
    regime.estimator = Some(EstimatorTag {
        method: cfg.method,
        refit: cfg.refit,
        alpha: cfg.alpha,
        lambdas: stages.iter().map(|s| s.lambda).collect(),
    });
    Ok(BackwardFit { stages, regime })
}

fn run_backward<F: Scalar>(
    trial: &Trial<F>,
    specs: &[ModelSpec],
    cfgs: &[&EstimatorConfig<F>],
    last: Option<StageFit<F>>,
) -> Result<Vec<StageFit<F>>> {
    let k_total = trial.n_stages();
    let mut fits: Vec<StageFit<F>> = Vec::with_capacity(k_total);
    let mut y = trial.outcome().to_vec();
    let mut last = last;
    for k in (0..k_total).rev() {
        let h = trial.stage(k);
        let fit = match (k + 1 == k_total, last.take()) {
            (true, Some(f)) => f,
            _ => fit_stage(h, &y, &specs[k], cfgs[k])?,
        };
        if k > 0 {
            y = next_outcome(&fit, cfgs[k], h, &y, k)?;
        }
        fits.push(fit);
    }
    fits.reverse();
    Ok(fits)
}

/// Backward recursion from stage K to stage 1. `cfgs` holds one config per
/// stage or a single config shared by all stages. The stage-1 config's
/// method and refit flag label the regime.
pub fn backward_fit<F: Scalar>(
    trial: &Trial<F>,
    specs: &[ModelSpec],
    cfgs: &[EstimatorConfig<F>],
) -> Result<BackwardFit<F>> {
    let k = trial.n_stages();
    if specs.len() != k {
        return Err(Error::Config(format!("{} model specs for {k} stages", specs.len())));
    }
    let cfgs = stage_configs(cfgs, k)?;
    let stages = run_backward(trial, specs, &cfgs, None)?;
    assemble(stages, cfgs[0])
}

/// Penalized and refitted chains from one shared stage-K fit, returned as
/// `(penalized, refitted)`. Only the single-config form is supported.
pub fn backward_fit_pair<F: Scalar>(
    trial: &Trial<F>,
    specs: &[ModelSpec],
    cfg: &EstimatorConfig<F>,
) -> Result<(BackwardFit<F>, BackwardFit<F>)> {
    let k = trial.n_stages();
    if specs.len() != k {
        return Err(Error::Config(format!("{} model specs for {k} stages", specs.len())));
    }
    let with = cfg.clone().with_refit(true);
    let without = cfg.clone().with_refit(false);
    let last = fit_stage(trial.stage(k - 1), trial.outcome(), &specs[k - 1], &with)?;
    let refit_stages = run_backward(trial, specs, &vec![&with; k], Some(last.clone()))?;
    let pen_stages = run_backward(trial, specs, &vec![&without; k], Some(last.penalized_only()))?;
    Ok((assemble(pen_stages, &without)?, assemble(refit_stages, &with)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> BlipModel<f64> {
        BlipModel::new(1.0, vec![Term::column("x1")], vec![-1.5]).unwrap()
    }

    #[test]
    fn blip_examples() {
        let m = model();
        assert_eq!(blip_value(&m, &[("x1", 3.0)], 0).unwrap(), 0.0);
        assert!((blip_value(&m, &[("x1", 1.0)], 1).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(optimal_action(&m, &[("x1", 1.0)]).unwrap(), 0);
        assert_eq!(optimal_action(&m, &[("x1", 0.0)]).unwrap(), 1);
        assert!((regret(&m, &[("x1", 1.0)], 1).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(regret(&m, &[("x1", 1.0)], 0).unwrap(), 0.0);
    }

    #[test]
    fn boundary_goes_to_reference() {
        let m = BlipModel::new(1.0, vec![Term::column("x1")], vec![-0.5]).unwrap();
        assert_eq!(optimal_action(&m, &[("x1", 2.0)]).unwrap(), 0);
    }

    #[test]
    fn unknown_column() {
        assert!(matches!(blip_value(&model(), &[("x2", 0.0)], 0), Err(Error::UnknownColumn(_))));
    }

    #[test]
    fn pseudo_outcome_arithmetic() {
        let m: BlipModel<f64> = BlipModel::new(0.25, vec![Term::column("x1")], vec![0.25]).unwrap();
        let h = StageHistory::new(
            vec![0],
            crate::linalg::Columns::from_columns(1, vec![vec![1.0]]).unwrap(),
            vec!["x1".into()],
        )
        .unwrap();
        let po = pseudo_outcome(&[2.0], &m, &h, 1).unwrap();
        assert!((po.values[0] - 2.5).abs() < 1e-15);
    }
}
