//! Tuning-parameter selection by K-fold cross-validation, adaptive penalty
//! factors from a pilot fit, and unpenalized refitting on a selected support.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{weighted_center, CenteringMode, Coefficients, DesignBlocks};
use crate::error::{Error, Result};
use crate::linalg::{pivoted_wls, solve_spd, weighted_gram};
use crate::scalar::{wdot, Scalar};
use crate::solver::{
    default_min_ratio, fit_lambdas, lambda_grid, lambda_max, HeredityFit, Mode, PenaltyFactors, Problem, Screening,
    SolverOptions,
};

/// Largest penalty factor; stands in for `1/0`.
pub const FACTOR_CAP: f64 = 1e8;

/// Relative pivot tolerance for least-squares solves on a support.
const COLLINEAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Minimum mean CV error, ties broken towards the larger λ.
    #[default]
    Min,
    /// Largest λ within one standard error of the minimum.
    OneSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct CvResult<F> {
    pub lambda_max: F,
    pub lambdas: Vec<F>,
    pub cv_mean: Vec<F>,
    pub cv_se: Vec<F>,
    pub lambda_min: F,
    pub lambda_1se: F,
    pub rule: SelectionRule,
    /// Index into `lambdas` chosen by `rule`.
    pub selected: usize,
    pub fold_assignments: Vec<usize>,
}

impl<F: Scalar> CvResult<F> {
    pub fn lambda_selected(&self) -> F {
        self.lambdas[self.selected]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Pilot<F> {
    /// Unpenalized weighted least squares; needs a full-rank design.
    Wls,
    /// Ridge with the given penalty, or the default `1e-2 · max_j |z_jᵀWy|/n`.
    Ridge { penalty: Option<F> },
    /// Ridge penalty picked from a small grid by K-fold CV.
    RidgeCv { folds: usize, seed: u64 },
    /// WLS when the design has full rank, ridge otherwise.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotKind {
    Wls,
    Ridge,
}

/// Adaptive penalty factors from a pilot fit of the saturated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct AdaptiveFactors<F> {
    pub w0: F,
    pub wj: Vec<F>,
    /// Heredity-mode factor `|β̂_parent ψ̂₀ / ψ̂_k|` per interaction.
    pub tau_j: Vec<F>,
    /// Plain-mode factor `1/|ψ̂_k|` per interaction.
    pub psi_j: Vec<F>,
    pub pilot: PilotKind,
    pub pilot_penalty: Option<F>,
}

fn capped_inverse<F: Scalar>(v: F) -> F {
    let cap = F::lit(FACTOR_CAP);
    if v == F::zero() {
        cap
    } else {
        (F::one() / v.abs()).min(cap)
    }
}

impl<F: Scalar> AdaptiveFactors<F> {
    /// Plug-in factors from pilot estimates on the solver scale.
    pub fn from_estimates(psi0: F, beta: &[F], psi: &[F], parent: &[usize], pilot: PilotKind) -> Self {
        let tau_j = psi
            .iter()
            .zip(parent)
            .map(|(&p, &j)| {
                let num = (beta[j] * psi0).abs();
                if p == F::zero() {
                    F::lit(FACTOR_CAP)
                } else {
                    (num / p.abs()).min(F::lit(FACTOR_CAP))
                }
            })
            .collect();
        Self {
            w0: capped_inverse(psi0),
            wj: beta.iter().map(|&b| capped_inverse(b)).collect(),
            tau_j,
            psi_j: psi.iter().map(|&p| capped_inverse(p)).collect(),
            pilot,
            pilot_penalty: None,
        }
    }

    pub fn penalty_factors(&self, mode: Mode, penalize_psi0: bool) -> PenaltyFactors<F> {
        let mut main = Vec::with_capacity(self.wj.len() + 1);
        main.push(if penalize_psi0 { self.w0 } else { F::zero() });
        main.extend_from_slice(&self.wj);
        let interaction = match mode {
            Mode::Heredity => self.tau_j.clone(),
            Mode::Plain => self.psi_j.clone(),
        };
        PenaltyFactors { main, interaction }
    }
}

fn saturated_columns<F: Scalar>(b: &DesignBlocks<F>) -> Vec<&[F]> {
    let mut cols: Vec<&[F]> = vec![b.treatment()];
    cols.extend(b.main().iter_cols());
    cols.extend(b.interactions().iter_cols());
    cols
}

fn ridge_default_penalty<F: Scalar>(cols: &[&[F]], y: &[F], w: &[F], n: F) -> F {
    let top = cols.iter().map(|c| wdot(w, c, y).abs()).fold(F::zero(), F::max) / n;
    let v = F::lit(1e-2) * top;
    if v > F::zero() {
        v
    } else {
        F::lit(1e-8)
    }
}

/// Minimiser of `(1/2n) Σ w r² + (κ/2)‖θ‖²` on the given columns.
fn ridge_solve<F: Scalar>(cols: &[&[F]], y: &[F], w: &[F], n: F, kappa: F) -> Result<Vec<F>> {
    let (mut g, rhs) = weighted_gram(cols, y, w);
    let k = cols.len();
    for v in g.iter_mut() {
        *v = *v / n;
    }
    for j in 0..k {
        g[j * k + j] = g[j * k + j] + kappa;
    }
    let rhs = rhs.into_iter().map(|v| v / n).collect();
    solve_spd(g, k, rhs)
}

fn ridge_cv_penalty<F: Scalar>(problem: &Problem<F>, folds: usize, seed: u64) -> Result<F> {
    let cols = saturated_columns(problem.blocks());
    let (y, w) = (problem.y(), problem.w());
    let base = ridge_default_penalty(&cols, y, w, problem.n_eff());
    let n = y.len();
    if folds < 2 || n < 2 * folds {
        return Err(Error::Config(format!("ridge CV needs 2 <= folds <= n/2 (folds={folds}, n={n})")));
    }
    let assign = assign_folds(n, folds, seed);
    let mut best = (F::infinity(), base);
    for mult in [1e-2, 1e-1, 1.0, 1e1, 1e2] {
        let kappa = base * F::lit(mult);
        let mut err = F::zero();
        for f in 0..folds {
            let mut wf = w.to_vec();
            for (i, &a) in assign.iter().enumerate() {
                if a == f {
                    wf[i] = F::zero();
                }
            }
            let nf = F::from_usize_lossy(wf.iter().filter(|&&v| v > F::zero()).count());
            let theta = ridge_solve(&cols, y, &wf, nf, kappa)?;
            for (i, &a) in assign.iter().enumerate() {
                if a == f {
                    let fit = cols.iter().zip(&theta).fold(F::zero(), |s, (c, &t)| s + c[i] * t);
                    let r = y[i] - fit;
                    err = err + w[i] * r * r;
                }
            }
        }
        if err < best.0 {
            best = (err, kappa);
        }
    }
    Ok(best.1)
}

/// Adaptive factors from a pilot fit of the saturated model (treatment, all
/// mains, all interactions) on the problem's scale.
pub fn adaptive_factors<F: Scalar>(problem: &Problem<F>, pilot: Pilot<F>) -> Result<AdaptiveFactors<F>> {
    let b = problem.blocks();
    let cols = saturated_columns(b);
    let (y, w) = (problem.y(), problem.w());
    let wls = || -> Result<Vec<F>> {
        let s = pivoted_wls(&cols, y, w, F::lit(COLLINEAR_TOL));
        if s.dropped.is_empty() {
            Ok(s.coef)
        } else {
            Err(Error::RankDeficient)
        }
    };
    let (theta, kind, penalty) = match pilot {
        Pilot::Wls => (wls()?, PilotKind::Wls, None),
        Pilot::Auto => match wls() {
            Ok(t) => (t, PilotKind::Wls, None),
            Err(_) => {
                let k = ridge_default_penalty(&cols, y, w, problem.n_eff());
                (ridge_solve(&cols, y, w, problem.n_eff(), k)?, PilotKind::Ridge, Some(k))
            }
        },
        Pilot::Ridge { penalty } => {
            let k = penalty.unwrap_or_else(|| ridge_default_penalty(&cols, y, w, problem.n_eff()));
            if !(k > F::zero()) {
                return Err(Error::Config("ridge pilot penalty must be positive".into()));
            }
            (ridge_solve(&cols, y, w, problem.n_eff(), k)?, PilotKind::Ridge, Some(k))
        }
        Pilot::RidgeCv { folds, seed } => {
            let k = ridge_cv_penalty(problem, folds, seed)?;
            (ridge_solve(&cols, y, w, problem.n_eff(), k)?, PilotKind::Ridge, Some(k))
        }
    };
    let p = b.n_main();
    let mut out =
        AdaptiveFactors::from_estimates(theta[0], &theta[1..=p], &theta[p + 1..], b.interaction_parent(), kind);
    out.pilot_penalty = penalty;
    Ok(out)
}

/// Where the penalty factors for each CV fold come from.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorSource<F> {
    Fixed(PenaltyFactors<F>),
    /// Recompute adaptive factors on every training complement. `full` is
    /// used for the full-data λ grid.
    AdaptivePerFold { full: PenaltyFactors<F>, pilot: Pilot<F>, penalize_psi0: bool },
}

impl<F: Scalar> FactorSource<F> {
    fn full(&self) -> &PenaltyFactors<F> {
        match self {
            Self::Fixed(f) => f,
            Self::AdaptivePerFold { full, .. } => full,
        }
    }

    fn for_problem(&self, p: &Problem<F>, mode: Mode) -> Result<PenaltyFactors<F>> {
        match self {
            Self::Fixed(f) => Ok(f.clone()),
            Self::AdaptivePerFold { pilot, penalize_psi0, .. } => {
                Ok(adaptive_factors(p, *pilot)?.penalty_factors(mode, *penalize_psi0))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct CvOptions<F> {
    pub folds: usize,
    pub seed: u64,
    pub n_lambda: usize,
    /// `None` picks the default from the problem size.
    pub min_ratio: Option<F>,
    pub rule: SelectionRule,
    pub standardize: bool,
    pub centering: CenteringMode,
    pub solver: SolverOptions<F>,
}

impl<F: Scalar> Default for CvOptions<F> {
    fn default() -> Self {
        Self {
            folds: 4,
            seed: 0,
            n_lambda: 100,
            min_ratio: None,
            rule: SelectionRule::Min,
            standardize: true,
            centering: CenteringMode::WeightedMean,
            solver: SolverOptions::default(),
        }
    }
}

/// Seeded shuffle of `0..n` dealt round-robin into `k` folds.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    deal(n, k, &mut rng)
}

fn deal(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = pos % k;
    }
    out
}

fn fold_ok<F: Scalar>(raw: &DesignBlocks<F>, w: &[F], folds: &[usize], k: usize) -> bool {
    (0..k).all(|f| {
        let mut seen = [false; 2];
        for (i, &a) in folds.iter().enumerate() {
            if a != f && w[i] > F::zero() {
                seen[(raw.treatment()[i] != F::zero()) as usize] = true;
            }
        }
        seen[0] && seen[1]
    })
}

/// K-fold cross-validation over a λ grid fixed from the full data.
///
/// Folds come from a seeded shuffle; if some training complement has constant
/// treatment, folds are redrawn once from the same stream before giving up.
pub fn kfold_cv<F: Scalar>(
    raw: &DesignBlocks<F>,
    y: &[F],
    w: &[F],
    alpha: F,
    factors: &FactorSource<F>,
    mode: Mode,
    opts: &CvOptions<F>,
) -> Result<CvResult<F>> {
    let n = raw.nrows();
    let k = opts.folds;
    if k < 2 || n < 2 * k {
        return Err(Error::Config(format!("cross-validation needs 2 <= folds <= n/2 (folds={k}, n={n})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut folds = deal(n, k, &mut rng);
    if !fold_ok(raw, w, &folds, k) {
        log::warn!("fold assignment left a constant-treatment training set; redrawing");
        folds = deal(n, k, &mut rng);
        if !fold_ok(raw, w, &folds, k) {
            return Err(Error::ConstantTreatment);
        }
    }
    kfold_cv_with_folds(raw, y, w, alpha, factors, mode, &folds, opts)
}

/// Cross-validation with caller-supplied fold ids (`0..k`, each non-empty).
#[allow(clippy::too_many_arguments)]
pub fn kfold_cv_with_folds<F: Scalar>(
    raw: &DesignBlocks<F>,
    y: &[F],
    w: &[F],
    alpha: F,
    factors: &FactorSource<F>,
    mode: Mode,
    folds: &[usize],
    opts: &CvOptions<F>,
) -> Result<CvResult<F>> {
    let n = raw.nrows();
    if folds.len() != n {
        return Err(Error::Shape(format!("{} fold ids for {n} rows", folds.len())));
    }
    let k = folds.iter().copied().max().map_or(0, |m| m + 1);
    if k < 2 || (0..k).any(|f| !folds.contains(&f)) {
        return Err(Error::Config("fold ids must cover 0..k with k >= 2".into()));
    }
    if !fold_ok(raw, w, folds, k) {
        return Err(Error::ConstantTreatment);
    }
    let full = Problem::prepare(raw, y, w, opts.centering, opts.standardize)?;
    let lmax = lambda_max(&full, alpha, factors.full(), mode, Screening::Weighted)?;
    let ratio = opts.min_ratio.unwrap_or_else(|| default_min_ratio(n, full.n_coefficients()));
    let lambdas = lambda_grid(lmax, opts.n_lambda, ratio)?;

    let per_fold: Vec<Vec<F>> = (0..k)
        .into_par_iter()
        .map(|f| -> Result<Vec<F>> {
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
            let pick = |v: &[F], rows: &[usize]| rows.iter().map(|&i| v[i]).collect::<Vec<F>>();
            let tr = raw.select_rows(&train);
            let problem = Problem::prepare(&tr, &pick(y, &train), &pick(w, &train), opts.centering, opts.standardize)?;
            let fac = factors.for_problem(&problem, mode)?;
            let fits = fit_lambdas(&problem, &lambdas, alpha, &fac, mode, &opts.solver)?;
            let te = raw.select_rows(&test);
            let (yt, wt) = (pick(y, &test), pick(w, &test));
            let wsum: F = wt.iter().copied().sum();
            if !(wsum > F::zero()) {
                return Err(Error::Config(format!("fold {f} has no positively weighted rows")));
            }
            Ok(fits
                .iter()
                .map(|fit| {
                    let pred = fit.original(&problem).predict(&te);
                    let sse = pred.iter().zip(&yt).zip(&wt).fold(F::zero(), |s, ((&p, &yy), &ww)| {
                        let r = yy - p;
                        s + ww * r * r
                    });
                    sse / wsum
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let kf = F::from_usize_lossy(k);
    let m = lambdas.len();
    let mut cv_mean = vec![F::zero(); m];
    let mut cv_se = vec![F::zero(); m];
    for l in 0..m {
        let mean = per_fold.iter().map(|e| e[l]).sum::<F>() / kf;
        let var = per_fold.iter().map(|e| (e[l] - mean).powi(2)).sum::<F>() / (kf - F::one());
        cv_mean[l] = mean;
        cv_se[l] = (var / kf).sqrt();
    }
    let mut imin = 0;
    for l in 1..m {
        if cv_mean[l] < cv_mean[imin] {
            imin = l;
        }
    }
    let bound = cv_mean[imin] + cv_se[imin];
    let i1se = (0..=imin).find(|&l| cv_mean[l] <= bound).unwrap_or(imin);
    let selected = match opts.rule {
        SelectionRule::Min => imin,
        SelectionRule::OneSe => i1se,
    };
    Ok(CvResult {
        lambda_max: lmax,
        lambda_min: lambdas[imin],
        lambda_1se: lambdas[i1se],
        lambdas,
        cv_mean,
        cv_se,
        rule: opts.rule,
        selected,
        fold_assignments: folds.to_vec(),
    })
}

/// Selected columns of a fit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    pub main: Vec<bool>,
    pub interaction: Vec<bool>,
}

impl Support {
    /// Columns with original-scale magnitude above `eps`.
    pub fn from_coefficients<F: Scalar>(c: &Coefficients<F>, eps: F) -> Self {
        Self {
            main: c.beta.iter().map(|b| b.abs() > eps).collect(),
            interaction: c.psi.iter().map(|p| p.abs() > eps).collect(),
        }
    }

    pub fn from_fit<F: Scalar>(fit: &HeredityFit<F>) -> Self {
        Self {
            main: fit.beta.iter().map(|&b| b != F::zero()).collect(),
            interaction: fit.psi.iter().map(|&p| p != F::zero()).collect(),
        }
    }

    pub fn all(n_main: usize, n_interactions: usize) -> Self {
        Self { main: vec![true; n_main], interaction: vec![true; n_interactions] }
    }
}

/// Unpenalized weighted least squares on the treatment plus the supported
/// columns, with an intercept. Collinear columns are dropped in column order
/// (treatment, mains, interactions) with a warning. Returns original-scale
/// coefficients, zero outside the support.
pub fn refit<F: Scalar>(raw: &DesignBlocks<F>, y: &[F], w: &[F], support: &Support) -> Result<Coefficients<F>> {
    if support.main.len() != raw.n_main() || support.interaction.len() != raw.n_interactions() {
        return Err(Error::Shape("support does not match the design".into()));
    }
    let (c, yc) = weighted_center(raw, y, w, CenteringMode::WeightedMean)?;
    let mains: Vec<usize> = (0..raw.n_main()).filter(|&j| support.main[j]).collect();
    let ints: Vec<usize> = (0..raw.n_interactions()).filter(|&k| support.interaction[k]).collect();
    let mut cols: Vec<&[F]> = vec![c.treatment()];
    cols.extend(mains.iter().map(|&j| c.main().col(j)));
    cols.extend(ints.iter().map(|&k| c.interactions().col(k)));
    let s = pivoted_wls(&cols, &yc, w, F::lit(COLLINEAR_TOL));
    for &d in &s.dropped {
        let name = match d {
            0 => "A".to_string(),
            d if d <= mains.len() => raw.main_terms()[mains[d - 1]].label().to_string(),
            d => format!("A*{}", raw.interaction_terms()[ints[d - 1 - mains.len()]].label()),
        };
        log::warn!("refit: dropping collinear column {name}");
    }
    let mut beta = vec![F::zero(); raw.n_main()];
    let mut psi = vec![F::zero(); raw.n_interactions()];
    for (i, &j) in mains.iter().enumerate() {
        beta[j] = s.coef[1 + i];
    }
    for (i, &k) in ints.iter().enumerate() {
        psi[k] = s.coef[1 + mains.len() + i];
    }
    Ok(c.to_original(s.coef[0], &beta, &psi))
}
