//! Data-generating processes with known optimal regimes.

use pdwols::{Columns, StageHistory, Trial};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Correlation of adjacent covariates in the one-stage designs.
pub const AR_RHO: f64 = 0.25;

/// Training draws use stream 0 of a replicate's seed, test sets stream 1.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn expit(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn covariate_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn bernoulli(rng: &mut ChaCha8Rng, prob: f64) -> u8 {
    u8::from(rng.random::<f64>() < prob)
}

/// Rows of `N(0, Σ)` with `Σ_jk = ρ^|j−k|`, drawn as a stationary AR(1)
/// across the covariate index.
pub fn ar1_covariates(n: usize, p: usize, rho: f64, rng: &mut ChaCha8Rng) -> Columns<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut cols = vec![vec![0.0; n]; p];
    for i in 0..n {
        let mut prev = 0.0;
        for (j, col) in cols.iter_mut().enumerate() {
            let z = normal(rng);
            prev = if j == 0 { z } else { rho * prev + innov * z };
            col[i] = prev;
        }
    }
    Columns::from_columns(n, cols).expect("consistent shape")
}

/// One-stage treatment-free mean `0.5 − 0.6e^{x₁} − 2x₁ − 2x₂`.
pub fn one_stage_treatment_free(x1: f64, x2: f64) -> f64 {
    0.5 - 0.6 * x1.exp() - 2.0 * x1 - 2.0 * x2
}

/// One-stage blip contrast `1 − 1.5x₁`.
pub fn one_stage_contrast(x1: f64) -> f64 {
    1.0 - 1.5 * x1
}

/// How treatment is assigned in a one-stage design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Assignment {
    /// `P(A=1|x) = expit(1 + x₁ + x₂)`
    Confounded,
    /// `P(A=1) = 0.5`
    Randomized,
}

impl Assignment {
    pub fn probability(self, x1: f64, x2: f64) -> f64 {
        match self {
            Self::Confounded => expit(1.0 + x1 + x2),
            Self::Randomized => 0.5,
        }
    }
}

/// A single-stage sample with its oracle actions.
#[derive(Debug, Clone)]
pub struct OneStageSample {
    pub history: StageHistory<f64>,
    pub y: Vec<f64>,
    pub oracle: Vec<u8>,
}

pub fn one_stage(n: usize, p: usize, assignment: Assignment, rng: &mut ChaCha8Rng) -> OneStageSample {
    assert!(p >= 2, "the outcome model needs x1 and x2");
    let x = ar1_covariates(n, p, AR_RHO, rng);
    let (x1, x2) = (x.col(0), x.col(1));
    let a: Vec<u8> = (0..n).map(|i| bernoulli(rng, assignment.probability(x1[i], x2[i]))).collect();
    let y = (0..n)
        .map(|i| {
            let c = one_stage_contrast(x1[i]);
            one_stage_treatment_free(x1[i], x2[i]) + f64::from(a[i]) * c + normal(rng)
        })
        .collect();
    let oracle = x1.iter().map(|&v| u8::from(one_stage_contrast(v) > 0.0)).collect();
    let history = StageHistory::new(a, x, covariate_names(p)).expect("valid generated history");
    OneStageSample { history, y, oracle }
}

/// Confounded one-stage design with ten covariates.
pub fn gen_one_stage(n: usize, seed: u64) -> OneStageSample {
    one_stage(n, 10, Assignment::Confounded, &mut rng_for(seed, 0))
}

/// Randomized one-stage design with `p` covariates.
pub fn gen_high_dim(n: usize, p: usize, seed: u64) -> OneStageSample {
    one_stage(n, p, Assignment::Randomized, &mut rng_for(seed, 0))
}

/// Covariates and noise for evaluating one-stage regimes; the outcome of
/// any action vector is computed with the same noise draws.
#[derive(Debug, Clone)]
pub struct OneStageTest {
    /// Treatment column is a placeholder (all zero).
    pub history: StageHistory<f64>,
    pub oracle: Vec<u8>,
    base: Vec<f64>,
    contrast: Vec<f64>,
}

impl OneStageTest {
    pub fn new(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Self {
        let x = ar1_covariates(n, p, AR_RHO, rng);
        let (x1, x2) = (x.col(0), x.col(1));
        let base = (0..n).map(|i| one_stage_treatment_free(x1[i], x2[i]) + normal(rng)).collect();
        let contrast: Vec<f64> = x1.iter().map(|&v| one_stage_contrast(v)).collect();
        let oracle = contrast.iter().map(|&c| u8::from(c > 0.0)).collect();
        let history = StageHistory::new(vec![0; n], x, covariate_names(p)).expect("valid test history");
        Self { history, oracle, base, contrast }
    }

    pub fn len(&self) -> usize {
        self.oracle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oracle.is_empty()
    }

    /// Simulated outcomes when treatment follows `actions`.
    pub fn outcomes(&self, actions: &[u8]) -> Vec<f64> {
        self.base.iter().zip(&self.contrast).zip(actions).map(|((&b, &c), &a)| b + f64::from(a) * c).collect()
    }
}

pub const TWO_STAGE_P: usize = 10;

pub fn stage1_contrast(x11: f64) -> f64 {
    0.8 - 2.0 * x11
}

pub fn stage2_contrast(x12: f64) -> f64 {
    1.0 - 1.5 * x12
}

/// Outcome under optimal treatment at both stages, from stage-1 covariates.
pub fn two_stage_optimal_outcome(x11: f64, x21: f64) -> f64 {
    0.5 + 2.0 * x11 + 2.0 * x21
}

fn regret(contrast: f64, a: u8) -> f64 {
    (f64::from(u8::from(contrast > 0.0)) - f64::from(a)) * contrast
}

/// Stage-2 covariates given stage-1 covariates, action and standard-normal
/// innovations.
fn stage2_covariates(x1: &Columns<f64>, a1: &[u8], e: &[Vec<f64>]) -> Columns<f64> {
    let n = a1.len();
    let cols = (0..TWO_STAGE_P)
        .map(|j| {
            (0..n)
                .map(|i| {
                    let shift = if j == 0 { 0.5 * f64::from(a1[i]) } else { 0.0 };
                    shift + 0.8 * x1.get(i, j) + e[j][i]
                })
                .collect()
        })
        .collect();
    Columns::from_columns(n, cols).expect("consistent shape")
}

fn iid(n: usize, p: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut cols = vec![vec![0.0; n]; p];
    for i in 0..n {
        for col in cols.iter_mut() {
            col[i] = normal(rng);
        }
    }
    cols
}

/// A two-stage trial; both stages use covariate names `x1..x10`.
#[derive(Debug, Clone)]
pub struct TwoStageSample {
    pub trial: Trial<f64>,
    pub oracle1: Vec<u8>,
    pub oracle2: Vec<u8>,
}

pub fn gen_two_stage_s1(n: usize, seed: u64) -> TwoStageSample {
    let rng = &mut rng_for(seed, 0);
    let x1 = Columns::from_columns(n, iid(n, TWO_STAGE_P, rng)).expect("shape");
    let a1: Vec<u8> = (0..n).map(|i| bernoulli(rng, expit(x1.get(i, 0) - x1.get(i, 1)))).collect();
    let e2 = iid(n, TWO_STAGE_P, rng);
    let x2 = stage2_covariates(&x1, &a1, &e2);
    let a2: Vec<u8> = (0..n).map(|i| bernoulli(rng, expit(x2.get(i, 0) - x2.get(i, 1)))).collect();
    let y = (0..n)
        .map(|i| {
            let mu1 = regret(stage1_contrast(x1.get(i, 0)), a1[i]);
            let mu2 = regret(stage2_contrast(x2.get(i, 0)), a2[i]);
            two_stage_optimal_outcome(x1.get(i, 0), x1.get(i, 1)) - mu1 - mu2 + normal(rng)
        })
        .collect();
    let oracle1 = x1.col(0).iter().map(|&v| u8::from(stage1_contrast(v) > 0.0)).collect();
    let oracle2 = x2.col(0).iter().map(|&v| u8::from(stage2_contrast(v) > 0.0)).collect();
    let names = covariate_names(TWO_STAGE_P);
    let s1 = StageHistory::new(a1, x1, names.clone()).expect("valid stage 1");
    let s2 = StageHistory::new(a2, x2, names).expect("valid stage 2");
    TwoStageSample { trial: Trial::new(vec![s1, s2], y).expect("valid trial"), oracle1, oracle2 }
}

/// Result of running a two-stage regime on a test population.
#[derive(Debug, Clone)]
pub struct TwoStageRollout {
    pub a1: Vec<u8>,
    pub a2: Vec<u8>,
    pub oracle1: Vec<u8>,
    /// Stage-2 optimum given the covariates reached under `a1`.
    pub oracle2: Vec<u8>,
    pub y: Vec<f64>,
}

/// Test population for two-stage regimes: stage-1 covariates plus all
/// innovations, so every regime sees the same random draws.
#[derive(Debug, Clone)]
pub struct TwoStageTest {
    x1: Columns<f64>,
    e2: Vec<Vec<f64>>,
    eps: Vec<f64>,
}

impl TwoStageTest {
    pub fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let x1 = Columns::from_columns(n, iid(n, TWO_STAGE_P, rng)).expect("shape");
        let e2 = iid(n, TWO_STAGE_P, rng);
        let eps = (0..n).map(|_| normal(rng)).collect();
        Self { x1, e2, eps }
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    /// Roll the population forward with actions chosen by `rule(stage, history)`
    /// (stage 0 or 1).
    pub fn rollout<E>(
        &self,
        mut rule: impl FnMut(usize, &StageHistory<f64>) -> Result<Vec<u8>, E>,
    ) -> Result<TwoStageRollout, E> {
        let n = self.len();
        let names = covariate_names(TWO_STAGE_P);
        let h1 = StageHistory::new(vec![0; n], self.x1.clone(), names.clone()).expect("valid");
        let a1 = rule(0, &h1)?;
        let x2 = stage2_covariates(&self.x1, &a1, &self.e2);
        let h2 = StageHistory::new(vec![0; n], x2, names).expect("valid");
        let a2 = rule(1, &h2)?;
        let x11 = self.x1.col(0);
        let x12 = h2.x().col(0);
        let y = (0..n)
            .map(|i| {
                let mu1 = regret(stage1_contrast(x11[i]), a1[i]);
                let mu2 = regret(stage2_contrast(x12[i]), a2[i]);
                two_stage_optimal_outcome(x11[i], self.x1.get(i, 1)) - mu1 - mu2 + self.eps[i]
            })
            .collect();
        Ok(TwoStageRollout {
            oracle1: x11.iter().map(|&v| u8::from(stage1_contrast(v) > 0.0)).collect(),
            oracle2: x12.iter().map(|&v| u8::from(stage2_contrast(v) > 0.0)).collect(),
            a1,
            a2,
            y,
        })
    }
}
