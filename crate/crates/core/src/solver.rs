//! Blockwise coordinate descent for the strong-heredity penalized weighted
//! least-squares objective, and its plain-LASSO degeneration.
//!
//! With `n` the number of positively weighted rows and residual
//! `r = y − ψ₀A − Σ β_j X_j − Σ ψ_k (A∘X_k)`, the objective is
//!
//! ```text
//! Q = (1/2n) Σ w_i r_i² + λ(1−α)(f₀|ψ₀| + Σ f_j|β_j|) + λα Σ g_k|θ_k|
//! ```
//!
//! where in heredity mode `θ_k = τ_k` and `ψ_k = ψ₀ τ_k β_{parent(k)}`, and in
//! plain mode `θ_k = ψ_k` directly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{standardize, validate_weights, weighted_center, CenteringMode, Coefficients, DesignBlocks};
use crate::error::{Error, Result};
use crate::scalar::{axpy, wdot, wsq, Scalar};

/// Parametrisation of the interaction coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `ψ_k = ψ₀ τ_k β_parent(k)`: strong heredity.
    Heredity,
    /// Interactions penalized directly, no hierarchy.
    Plain,
}

/// Inner product used when computing `lambda_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Screening {
    #[default]
    Weighted,
    /// Drops `W` from the screening inner products.
    Unweighted,
}

/// Per-coefficient penalty multipliers. A zero factor leaves the coefficient
/// unpenalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyFactors<F> {
    /// `ψ₀` first, then one entry per main-effect column.
    pub main: Vec<F>,
    /// One entry per interaction column (`τ_k` or `ψ_k`).
    pub interaction: Vec<F>,
}

impl<F: Scalar> PenaltyFactors<F> {
    pub fn uniform(n_main: usize, n_interactions: usize) -> Self {
        Self { main: vec![F::one(); n_main + 1], interaction: vec![F::one(); n_interactions] }
    }

    /// Uniform factors with the treatment main effect `ψ₀` unpenalized.
    pub fn unpenalized_psi0(n_main: usize, n_interactions: usize) -> Self {
        let mut f = Self::uniform(n_main, n_interactions);
        f.main[0] = F::zero();
        f
    }

    pub fn for_blocks(blocks: &DesignBlocks<F>, penalize_psi0: bool) -> Self {
        if penalize_psi0 {
            Self::uniform(blocks.n_main(), blocks.n_interactions())
        } else {
            Self::unpenalized_psi0(blocks.n_main(), blocks.n_interactions())
        }
    }

    fn validate(&self, n_main: usize, n_int: usize) -> Result<()> {
        if self.main.len() != n_main + 1 || self.interaction.len() != n_int {
            return Err(Error::Shape(format!(
                "penalty factors have {}+{} entries, design needs {}+{}",
                self.main.len(),
                self.interaction.len(),
                n_main + 1,
                n_int
            )));
        }
        if self.main.iter().chain(&self.interaction).any(|&f| !(f >= F::zero()) || !f.is_finite()) {
            return Err(Error::Config("penalty factors must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec<F> {
    pub lambda: F,
    pub alpha: F,
    pub factors: PenaltyFactors<F>,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions<F> {
    /// Convergence threshold on the largest absolute parameter change.
    pub tol: F,
    /// Outer iterations (full or active-set sweeps) before giving up.
    pub max_iter: usize,
    /// A fit only counts as converged once its KKT violation is below this.
    pub kkt_tol: F,
    /// Number of starting points; extra starts are random and seeded.
    pub n_starts: usize,
    pub seed: u64,
    /// Record the objective after every block update.
    pub trace: bool,
}

impl<F: Scalar> Default for SolverOptions<F> {
    fn default() -> Self {
        Self { tol: F::lit(1e-7), max_iter: 10_000, kkt_tol: F::lit(1e-7), n_starts: 1, seed: 0, trace: false }
    }
}

/// A fitted model on the solver's (centred, standardized) scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct HeredityFit<F> {
    pub mode: Mode,
    pub lambda: F,
    pub alpha: F,
    pub psi0: F,
    pub beta: Vec<F>,
    /// Heredity multipliers; all zero in plain mode.
    pub tau: Vec<F>,
    /// Interaction coefficients (`ψ₀ τ_k β_parent(k)` in heredity mode).
    pub psi: Vec<F>,
    pub objective: F,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_violation: F,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<F>,
}

impl<F: Scalar> HeredityFit<F> {
    /// Coefficients mapped back to the raw design scale.
    pub fn original(&self, problem: &Problem<F>) -> Coefficients<F> {
        problem.blocks.to_original(self.psi0, &self.beta, &self.psi)
    }

    /// Free interaction parameters (τ or ψ, by mode).
    fn interaction_params(&self) -> &[F] {
        match self.mode {
            Mode::Heredity => &self.tau,
            Mode::Plain => &self.psi,
        }
    }

    /// Number of nonzero interaction coefficients.
    pub fn n_selected_interactions(&self, eps: F) -> usize {
        self.psi.iter().filter(|p| p.abs() > eps).count()
    }
}

/// A centred (optionally standardized) weighted problem, with cached
/// column norms.
#[derive(Debug, Clone)]
pub struct Problem<F> {
    blocks: DesignBlocks<F>,
    y: Vec<F>,
    w: Vec<F>,
    n_eff: F,
    treat_sq: F,
    main_sq: Vec<F>,
    inter_sq: Vec<F>,
    /// `⟨X_parent(k), XA_k⟩_w`
    cross: Vec<F>,
    children: Vec<Vec<usize>>,
}

impl<F: Scalar> Problem<F> {
    /// Wrap already centred blocks.
    pub fn new(blocks: DesignBlocks<F>, y: Vec<F>, w: Vec<F>) -> Result<Self> {
        let n = blocks.nrows();
        if y.len() != n || w.len() != n {
            return Err(Error::Shape(format!("design has {n} rows, y {} and w {}", y.len(), w.len())));
        }
        validate_weights(&w)?;
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue { column: "y".into(), row: i });
        }
        let n_eff = F::from_usize_lossy(w.iter().filter(|&&v| v > F::zero()).count());
        let treat_sq = wsq(&w, blocks.treatment());
        let main_sq = (0..blocks.n_main()).map(|j| wsq(&w, blocks.main().col(j))).collect();
        let inter_sq = (0..blocks.n_interactions()).map(|k| wsq(&w, blocks.interactions().col(k))).collect();
        let cross = blocks
            .interaction_parent()
            .iter()
            .enumerate()
            .map(|(k, &j)| wdot(&w, blocks.main().col(j), blocks.interactions().col(k)))
            .collect();
        let mut children = vec![Vec::new(); blocks.n_main()];
        for (k, &j) in blocks.interaction_parent().iter().enumerate() {
            children[j].push(k);
        }
        Ok(Self { blocks, y, w, n_eff, treat_sq, main_sq, inter_sq, cross, children })
    }

    /// Centre (and optionally standardize) a raw design, then wrap it.
    pub fn prepare(
        raw: &DesignBlocks<F>,
        y: &[F],
        w: &[F],
        centering: CenteringMode,
        scale: bool,
    ) -> Result<Self> {
        let (c, yc) = weighted_center(raw, y, w, centering)?;
        let s = standardize(&c, w, scale);
        Self::new(s, yc, w.to_vec())
    }

    pub fn blocks(&self) -> &DesignBlocks<F> {
        &self.blocks
    }

    pub fn y(&self) -> &[F] {
        &self.y
    }

    pub fn w(&self) -> &[F] {
        &self.w
    }

    /// Number of rows with positive weight (the `n` of the loss).
    pub fn n_eff(&self) -> F {
        self.n_eff
    }

    pub fn n_main(&self) -> usize {
        self.blocks.n_main()
    }

    pub fn n_interactions(&self) -> usize {
        self.blocks.n_interactions()
    }

    fn parent(&self, k: usize) -> usize {
        self.blocks.interaction_parent()[k]
    }

    /// Total coefficient count (ψ₀, mains, interactions).
    pub fn n_coefficients(&self) -> usize {
        1 + self.n_main() + self.n_interactions()
    }
}

/// `sign(x) · max(|x| − u, 0)`
#[inline]
pub fn soft_threshold<F: Scalar>(x: F, u: F) -> F {
    let m = x.abs() - u;
    if m > F::zero() {
        m.copysign(x)
    } else {
        F::zero()
    }
}

const DEGENERATE: f64 = 1e-12;

/// Objective-scale penalty weights `λ·share·factor`, with unpenalized
/// coefficients at exactly zero even when λ is infinite.
#[derive(Debug, Clone)]
struct Penalties<F> {
    psi0: F,
    beta: Vec<F>,
    inter: Vec<F>,
}

impl<F: Scalar> Penalties<F> {
    fn new(spec: &PenaltySpec<F>) -> Self {
        let scale = |share: F, f: F| if f == F::zero() { F::zero() } else { spec.lambda * share * f };
        let main_share = F::one() - spec.alpha;
        Self {
            psi0: scale(main_share, spec.factors.main[0]),
            beta: spec.factors.main[1..].iter().map(|&f| scale(main_share, f)).collect(),
            inter: spec.factors.interaction.iter().map(|&f| scale(spec.alpha, f)).collect(),
        }
    }
}

/// Coordinate-descent state: parameters plus the running residual.
#[derive(Debug, Clone)]
struct State<F> {
    psi0: F,
    beta: Vec<F>,
    /// τ (heredity) or ψ (plain)
    inter: Vec<F>,
    r: Vec<F>,
}

impl<F: Scalar> State<F> {
    fn zeros(p: &Problem<F>) -> Self {
        Self { psi0: F::zero(), beta: vec![F::zero(); p.n_main()], inter: vec![F::zero(); p.n_interactions()], r: p.y.clone() }
    }

    fn from_params(p: &Problem<F>, mode: Mode, psi0: F, beta: Vec<F>, inter: Vec<F>) -> Self {
        let mut s = Self { psi0, beta, inter, r: Vec::new() };
        s.r = s.residual(p, mode);
        s
    }

    /// Coefficient on interaction column k.
    fn psi(&self, p: &Problem<F>, mode: Mode, k: usize) -> F {
        match mode {
            Mode::Heredity => self.psi0 * self.inter[k] * self.beta[p.parent(k)],
            Mode::Plain => self.inter[k],
        }
    }

    fn residual(&self, p: &Problem<F>, mode: Mode) -> Vec<F> {
        let mut r = p.y.clone();
        axpy(-self.psi0, p.blocks.treatment(), &mut r);
        for (j, &b) in self.beta.iter().enumerate() {
            if b != F::zero() {
                axpy(-b, p.blocks.main().col(j), &mut r);
            }
        }
        for k in 0..p.n_interactions() {
            let c = self.psi(p, mode, k);
            if c != F::zero() {
                axpy(-c, p.blocks.interactions().col(k), &mut r);
            }
        }
        r
    }

    fn objective(&self, p: &Problem<F>, pen: &Penalties<F>) -> F {
        let loss = wsq(&p.w, &self.r) / (F::lit(2.0) * p.n_eff);
        let term = |pw: F, v: F| if v == F::zero() { F::zero() } else { pw * v.abs() };
        let mut q = loss + term(pen.psi0, self.psi0);
        for (&pw, &b) in pen.beta.iter().zip(&self.beta) {
            q = q + term(pw, b);
        }
        for (&pw, &t) in pen.inter.iter().zip(&self.inter) {
            q = q + term(pw, t);
        }
        q
    }
}

/// Evaluate the objective at arbitrary parameters (`inter` holds τ in
/// heredity mode and ψ in plain mode).
pub fn objective<F: Scalar>(problem: &Problem<F>, spec: &PenaltySpec<F>, psi0: F, beta: &[F], inter: &[F]) -> F {
    let s = State::from_params(problem, spec.mode, psi0, beta.to_vec(), inter.to_vec());
    s.objective(problem, &Penalties::new(spec))
}

struct Sweeper<'a, F> {
    p: &'a Problem<F>,
    mode: Mode,
    pen: Penalties<F>,
    scratch: Vec<F>,
}

impl<'a, F: Scalar> Sweeper<'a, F> {
    fn thresh(&self, pw: F) -> F {
        self.p.n_eff * pw
    }

    /// Exact minimisation along one coordinate with effective covariate `z`
    /// (already in `scratch` if `explicit`), returning the new value.
    fn solve_coord(&self, num_r: F, den: F, old: F, pw: F) -> F {
        if !(den > F::lit(DEGENERATE)) {
            return F::zero();
        }
        soft_threshold(num_r + old * den, self.thresh(pw)) / den
    }

    fn update_psi0(&mut self, s: &mut State<F>) -> F {
        let p = self.p;
        let a = p.blocks.treatment();
        let old = s.psi0;
        let plain_like = self.mode == Mode::Plain
            || (0..p.n_interactions()).all(|k| s.inter[k] == F::zero() || s.beta[p.parent(k)] == F::zero());
        let new = if plain_like {
            self.solve_coord(wdot(&p.w, a, &s.r), p.treat_sq, old, self.pen.psi0)
        } else {
            self.scratch.clear();
            self.scratch.extend_from_slice(a);
            for k in 0..p.n_interactions() {
                let c = s.inter[k] * s.beta[p.parent(k)];
                if c != F::zero() {
                    axpy(c, p.blocks.interactions().col(k), &mut self.scratch);
                }
            }
            let den = wsq(&p.w, &self.scratch);
            self.solve_coord(wdot(&p.w, &self.scratch, &s.r), den, old, self.pen.psi0)
        };
        let delta = new - old;
        if delta != F::zero() {
            if plain_like {
                axpy(-delta, a, &mut s.r);
            } else {
                let z = std::mem::take(&mut self.scratch);
                axpy(-delta, &z, &mut s.r);
                self.scratch = z;
            }
            s.psi0 = new;
        }
        delta.abs()
    }

    fn update_beta(&mut self, s: &mut State<F>, j: usize) -> F {
        let p = self.p;
        let x = p.blocks.main().col(j);
        let old = s.beta[j];
        // Effective covariate X_j + ψ₀ Σ_children τ_k XA_k.
        let kids: Vec<(usize, F)> = match self.mode {
            Mode::Plain => Vec::new(),
            Mode::Heredity => p.children[j]
                .iter()
                .filter_map(|&k| {
                    let c = s.psi0 * s.inter[k];
                    (c != F::zero()).then_some((k, c))
                })
                .collect(),
        };
        let (num, den) = match kids.as_slice() {
            [] => (wdot(&p.w, x, &s.r), p.main_sq[j]),
            [(k, c)] => {
                let xa = p.blocks.interactions().col(*k);
                let num = wdot(&p.w, x, &s.r) + *c * wdot(&p.w, xa, &s.r);
                let den = p.main_sq[j] + F::lit(2.0) * *c * p.cross[*k] + *c * *c * p.inter_sq[*k];
                (num, den)
            }
            _ => {
                self.scratch.clear();
                self.scratch.extend_from_slice(x);
                for &(k, c) in &kids {
                    axpy(c, p.blocks.interactions().col(k), &mut self.scratch);
                }
                (wdot(&p.w, &self.scratch, &s.r), wsq(&p.w, &self.scratch))
            }
        };
        let new = self.solve_coord(num, den, old, self.pen.beta[j]);
        let delta = new - old;
        if delta != F::zero() {
            axpy(-delta, x, &mut s.r);
            for &(k, c) in &kids {
                axpy(-delta * c, p.blocks.interactions().col(k), &mut s.r);
            }
            s.beta[j] = new;
        }
        delta.abs()
    }

    fn update_inter(&mut self, s: &mut State<F>, k: usize) -> F {
        let p = self.p;
        let xa = p.blocks.interactions().col(k);
        let old = s.inter[k];
        let c = match self.mode {
            Mode::Plain => F::one(),
            Mode::Heredity => s.psi0 * s.beta[p.parent(k)],
        };
        if c.abs() < F::lit(DEGENERATE) {
            // τ_k is unidentifiable here; park it at zero.
            if old != F::zero() {
                axpy(c * old, xa, &mut s.r);
                s.inter[k] = F::zero();
            }
            return old.abs();
        }
        let den = c * c * p.inter_sq[k];
        let num = c * wdot(&p.w, xa, &s.r);
        let new = self.solve_coord(num, den, old, self.pen.inter[k]);
        let delta = new - old;
        if delta != F::zero() {
            axpy(-c * delta, xa, &mut s.r);
            s.inter[k] = new;
        }
        delta.abs()
    }

    /// One ψ₀ → β → interaction pass; `active_only` skips zero coefficients.
    fn sweep(&mut self, s: &mut State<F>, active_only: bool, trace: Option<&mut Vec<F>>) -> F {
        let mut change = self.update_psi0(s);
        let mut trace = trace;
        if let Some(t) = trace.as_deref_mut() {
            t.push(s.objective(self.p, &self.pen));
        }
        for j in 0..self.p.n_main() {
            if active_only && s.beta[j] == F::zero() {
                continue;
            }
            change = change.max(self.update_beta(s, j));
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(s.objective(self.p, &self.pen));
        }
        for k in 0..self.p.n_interactions() {
            if active_only && s.inter[k] == F::zero() {
                continue;
            }
            change = change.max(self.update_inter(s, k));
        }
        if let Some(t) = trace {
            t.push(s.objective(self.p, &self.pen));
        }
        change
    }
}

/// Largest violation of the subgradient optimality conditions at `s`.
fn kkt_state<F: Scalar>(p: &Problem<F>, mode: Mode, pen: &Penalties<F>, s: &State<F>) -> F {
    let n = p.n_eff;
    let viol = |theta: F, grad: F, pw: F| -> F {
        if theta != F::zero() {
            (grad + pw * theta.signum()).abs()
        } else {
            (grad.abs() - pw).max(F::zero())
        }
    };
    let a = p.blocks.treatment();
    let mut worst = F::zero();
    // ψ₀
    let mut z = a.to_vec();
    if mode == Mode::Heredity {
        for k in 0..p.n_interactions() {
            let c = s.inter[k] * s.beta[p.parent(k)];
            if c != F::zero() {
                axpy(c, p.blocks.interactions().col(k), &mut z);
            }
        }
    }
    let g = -wdot(&p.w, &z, &s.r) / n;
    worst = worst.max(viol(s.psi0, g, pen.psi0));
    for j in 0..p.n_main() {
        let x = p.blocks.main().col(j);
        let mut g = wdot(&p.w, x, &s.r);
        if mode == Mode::Heredity {
            for &k in &p.children[j] {
                let c = s.psi0 * s.inter[k];
                if c != F::zero() {
                    g = g + c * wdot(&p.w, p.blocks.interactions().col(k), &s.r);
                }
            }
        }
        worst = worst.max(viol(s.beta[j], -g / n, pen.beta[j]));
    }
    for k in 0..p.n_interactions() {
        let c = match mode {
            Mode::Plain => F::one(),
            Mode::Heredity => s.psi0 * s.beta[p.parent(k)],
        };
        if c.abs() < F::lit(DEGENERATE) {
            continue;
        }
        let g = -c * wdot(&p.w, p.blocks.interactions().col(k), &s.r) / n;
        worst = worst.max(viol(s.inter[k], g, pen.inter[k]));
    }
    worst
}

/// Maximum subgradient-condition violation of `fit` for `spec` on `problem`.
/// In heredity mode, `τ_k` with `ψ₀β_parent(k) = 0` is exempt.
pub fn kkt_check<F: Scalar>(fit: &HeredityFit<F>, problem: &Problem<F>, spec: &PenaltySpec<F>) -> F {
    let s = State::from_params(problem, spec.mode, fit.psi0, fit.beta.clone(), fit.interaction_params().to_vec());
    kkt_state(problem, spec.mode, &Penalties::new(spec), &s)
}

fn check_spec<F: Scalar>(problem: &Problem<F>, spec: &PenaltySpec<F>) -> Result<()> {
    spec.factors.validate(problem.n_main(), problem.n_interactions())?;
    if !(spec.lambda >= F::zero()) {
        return Err(Error::Config("lambda must be nonnegative".into()));
    }
    if !(spec.alpha > F::zero() && spec.alpha < F::one()) {
        return Err(Error::Config("alpha must lie in (0, 1)".into()));
    }
    Ok(())
}

fn run<F: Scalar>(
    problem: &Problem<F>,
    spec: &PenaltySpec<F>,
    mut state: State<F>,
    opts: &SolverOptions<F>,
) -> Result<HeredityFit<F>> {
    let pen = Penalties::new(spec);
    let mut sw = Sweeper { p: problem, mode: spec.mode, pen: pen.clone(), scratch: Vec::with_capacity(problem.y.len()) };
    let mut trace = Vec::new();
    if opts.trace {
        trace.push(state.objective(problem, &pen));
    }
    let mut iterations = 0;
    let mut converged = false;
    let mut kkt = F::infinity();
    while iterations < opts.max_iter {
        let change = sw.sweep(&mut state, false, opts.trace.then_some(&mut trace));
        iterations += 1;
        if !change.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        if change < opts.tol {
            kkt = kkt_state(problem, spec.mode, &pen, &state);
            if kkt <= opts.kkt_tol {
                converged = true;
                break;
            }
            continue;
        }
        while iterations < opts.max_iter {
            let c = sw.sweep(&mut state, true, opts.trace.then_some(&mut trace));
            iterations += 1;
            if !c.is_finite() {
                return Err(Error::NonFiniteObjective);
            }
            if c < opts.tol {
                break;
            }
        }
    }
    if !converged {
        kkt = kkt_state(problem, spec.mode, &pen, &state);
        log::debug!("coordinate descent hit max_iter={} (kkt {kkt})", opts.max_iter);
    }
    // Drift guard: the running residual accumulates rounding error.
    state.r = state.residual(problem, spec.mode);
    let objective = state.objective(problem, &pen);
    if !objective.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let psi = (0..problem.n_interactions()).map(|k| state.psi(problem, spec.mode, k)).collect();
    let tau = match spec.mode {
        Mode::Heredity => state.inter.clone(),
        Mode::Plain => vec![F::zero(); problem.n_interactions()],
    };
    Ok(HeredityFit {
        mode: spec.mode,
        lambda: spec.lambda,
        alpha: spec.alpha,
        psi0: state.psi0,
        beta: state.beta,
        tau,
        psi,
        objective,
        iterations,
        converged,
        kkt_violation: kkt,
        objective_trace: trace,
    })
}

/// Every penalized coordinate is zero.
fn is_null<F: Scalar>(fit: &HeredityFit<F>, spec: &PenaltySpec<F>) -> bool {
    let f = &spec.factors;
    std::iter::once(&fit.psi0)
        .chain(&fit.beta)
        .zip(&f.main)
        .chain(fit.tau.iter().zip(&f.interaction))
        .all(|(&v, &g)| v == F::zero() || g == F::zero())
}

/// `τ_k = ψ_k / (ψ₀ β_parent(k))`, zero where the denominator vanishes.
fn heredity_multipliers<F: Scalar>(problem: &Problem<F>, psi0: F, beta: &[F], psi: &[F]) -> Vec<F> {
    problem
        .blocks
        .interaction_parent()
        .iter()
        .zip(psi)
        .map(|(&j, &p)| {
            let d = psi0 * beta[j];
            if d != F::zero() {
                p / d
            } else {
                F::zero()
            }
        })
        .collect()
}

/// Fit one penalty level by blockwise coordinate descent.
///
/// Starts from `init` when given (warm start). A cold start in heredity mode
/// runs from the all-zero model; unless that ends at the null model, it also
/// runs from the plain-mode fit at the same penalty mapped to heredity form
/// and keeps the lower objective. With
/// `opts.n_starts > 1` additional seeded random starts are run and the
/// lowest objective is kept.
pub fn cd_fit<F: Scalar>(
    problem: &Problem<F>,
    spec: &PenaltySpec<F>,
    init: Option<&HeredityFit<F>>,
    opts: &SolverOptions<F>,
) -> Result<HeredityFit<F>> {
    check_spec(problem, spec)?;
    let start = match init {
        Some(f) => {
            if f.beta.len() != problem.n_main() || f.psi.len() != problem.n_interactions() {
                return Err(Error::Shape("warm start does not match the design".into()));
            }
            let inter = match (f.mode, spec.mode) {
                (Mode::Heredity, Mode::Heredity) => f.tau.clone(),
                (_, Mode::Plain) => f.psi.clone(),
                (Mode::Plain, Mode::Heredity) => heredity_multipliers(problem, f.psi0, &f.beta, &f.psi),
            };
            State::from_params(problem, spec.mode, f.psi0, f.beta.clone(), inter)
        }
        None => State::zeros(problem),
    };
    let mut best = run(problem, spec, start, opts)?;
    if init.is_none() && spec.mode == Mode::Heredity && problem.n_interactions() > 0 && !is_null(&best, spec) {
        let convex = PenaltySpec { mode: Mode::Plain, ..spec.clone() };
        let plain = run(problem, &convex, State::zeros(problem), opts)?;
        let tau = heredity_multipliers(problem, plain.psi0, &plain.beta, &plain.psi);
        let cand = run(problem, spec, State::from_params(problem, spec.mode, plain.psi0, plain.beta, tau), opts)?;
        if cand.objective < best.objective {
            best = cand;
        }
    }
    if opts.n_starts > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let ysd = (wsq(&problem.w, &problem.y) / problem.w.iter().copied().sum::<F>()).sqrt().max(F::lit(1e-3));
        for _ in 1..opts.n_starts {
            let mut draw = |s: F| -> F {
                let z: f64 = StandardNormal.sample(&mut rng);
                F::lit(z) * s
            };
            let psi0 = draw(ysd);
            let beta = (0..problem.n_main()).map(|_| draw(ysd)).collect();
            let inter = (0..problem.n_interactions()).map(|_| draw(F::one())).collect();
            let s = State::from_params(problem, spec.mode, psi0, beta, inter);
            let cand = run(problem, spec, s, opts)?;
            if cand.objective < best.objective {
                best = cand;
            }
        }
    }
    Ok(best)
}

/// Smallest λ at which every penalized coefficient is zero.
///
/// Unpenalized coefficients are fitted first (they are active at every λ);
/// each screening gradient is divided by its penalty factor, and factor-zero
/// terms are excluded from the maximum.
pub fn lambda_max<F: Scalar>(
    problem: &Problem<F>,
    alpha: F,
    factors: &PenaltyFactors<F>,
    mode: Mode,
    screening: Screening,
) -> Result<F> {
    factors.validate(problem.n_main(), problem.n_interactions())?;
    let any_main = factors.main.iter().any(|&f| f > F::zero());
    let any_inter = factors.interaction.iter().any(|&f| f > F::zero());
    if !any_main && !(mode == Mode::Plain && any_inter) {
        return Err(Error::NoPenalizedTerms);
    }
    let spec = PenaltySpec { lambda: F::infinity(), alpha, factors: factors.clone(), mode };
    check_spec(problem, &spec)?;
    let base = run(problem, &spec, State::zeros(problem), &SolverOptions { kkt_tol: F::infinity(), ..Default::default() })?;
    let s = State::from_params(problem, mode, base.psi0, base.beta.clone(), base.interaction_params().to_vec());
    let ones;
    let w: &[F] = match screening {
        Screening::Weighted => &problem.w,
        Screening::Unweighted => {
            ones = vec![F::one(); problem.y.len()];
            &ones
        }
    };
    let n = problem.n_eff;
    let main_share = F::one() - alpha;
    let mut best = F::zero();
    let mut consider = |g: F, share: F, f: F| {
        if f > F::zero() {
            best = best.max(g.abs() / (n * share * f));
        }
    };
    let a = problem.blocks.treatment();
    let mut z = a.to_vec();
    if mode == Mode::Heredity {
        for k in 0..problem.n_interactions() {
            let c = s.inter[k] * s.beta[problem.parent(k)];
            if c != F::zero() {
                axpy(c, problem.blocks.interactions().col(k), &mut z);
            }
        }
    }
    consider(wdot(w, &z, &s.r), main_share, factors.main[0]);
    for j in 0..problem.n_main() {
        let mut g = wdot(w, problem.blocks.main().col(j), &s.r);
        if mode == Mode::Heredity {
            for &k in &problem.children[j] {
                let c = s.psi0 * s.inter[k];
                if c != F::zero() {
                    g = g + c * wdot(w, problem.blocks.interactions().col(k), &s.r);
                }
            }
        }
        consider(g, main_share, factors.main[j + 1]);
    }
    for k in 0..problem.n_interactions() {
        let c = match mode {
            Mode::Plain => F::one(),
            Mode::Heredity => s.psi0 * s.beta[problem.parent(k)],
        };
        if c.abs() >= F::lit(DEGENERATE) {
            consider(c * wdot(w, problem.blocks.interactions().col(k), &s.r), alpha, factors.interaction[k]);
        }
    }
    Ok(best)
}

/// Fits along a decreasing λ sequence with warm starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct LambdaPath<F> {
    pub lambda_max: F,
    pub lambdas: Vec<F>,
    pub fits: Vec<HeredityFit<F>>,
}

/// `n_lambda` log-spaced values from `top` down to `min_ratio · top`.
pub fn lambda_grid<F: Scalar>(top: F, n_lambda: usize, min_ratio: F) -> Result<Vec<F>> {
    if n_lambda < 2 {
        return Err(Error::Config("n_lambda must be at least 2".into()));
    }
    if !(min_ratio > F::zero() && min_ratio < F::one()) {
        return Err(Error::Config("min_ratio must lie in (0, 1)".into()));
    }
    let top = top.max(F::min_positive_value().sqrt());
    let step = min_ratio.ln() / F::from_usize_lossy(n_lambda - 1);
    Ok((0..n_lambda)
        .map(|i| if i == 0 { top } else { top * (step * F::from_usize_lossy(i)).exp() })
        .collect())
}

/// Default ratio `λ_min / λ_max`: 1e-3 when rows outnumber coefficients,
/// 5e-2 otherwise.
pub fn default_min_ratio<F: Scalar>(n: usize, n_coefficients: usize) -> F {
    if n > n_coefficients {
        F::lit(1e-3)
    } else {
        F::lit(5e-2)
    }
}

/// Fit every λ in `lambdas` (in order), warm-starting each from the previous.
pub fn fit_lambdas<F: Scalar>(
    problem: &Problem<F>,
    lambdas: &[F],
    alpha: F,
    factors: &PenaltyFactors<F>,
    mode: Mode,
    opts: &SolverOptions<F>,
) -> Result<Vec<HeredityFit<F>>> {
    let mut fits: Vec<HeredityFit<F>> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let spec = PenaltySpec { lambda, alpha, factors: factors.clone(), mode };
        let fit = cd_fit(problem, &spec, fits.last(), opts)?;
        fits.push(fit);
    }
    Ok(fits)
}

/// Regularization path from `λ_max` down to `min_ratio · λ_max`.
pub fn fit_path<F: Scalar>(
    problem: &Problem<F>,
    alpha: F,
    factors: &PenaltyFactors<F>,
    mode: Mode,
    n_lambda: usize,
    min_ratio: F,
    opts: &SolverOptions<F>,
) -> Result<LambdaPath<F>> {
    let lmax = lambda_max(problem, alpha, factors, mode, Screening::Weighted)?;
    let lambdas = lambda_grid(lmax, n_lambda, min_ratio)?;
    let fits = fit_lambdas(problem, &lambdas, alpha, factors, mode, opts)?;
    Ok(LambdaPath { lambda_max: lmax, lambdas, fits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_design, ModelSpec, StageHistory};
    use crate::linalg::Columns;
    use crate::term::Term;

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0f64, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5f64, 1.0), 0.0);
        assert_eq!(soft_threshold(-2.0f64, 0.5), -1.5);
        assert_eq!(soft_threshold(1.0f64, 1.0), 0.0);
    }

    fn toy_problem() -> Problem<f64> {
        let h = StageHistory::new(
            vec![1, 0, 1, 0],
            Columns::from_columns(4, vec![vec![1.0, -1.0, 1.0, -1.0]]).unwrap(),
            vec!["x1".into()],
        )
        .unwrap();
        let spec = ModelSpec::new(vec![Term::column("x1")], vec![]);
        let raw = build_design(&h, &spec).unwrap();
        Problem::prepare(&raw, &[1.0, -1.0, 2.0, -2.0], &[1.0; 4], CenteringMode::WeightedMean, false).unwrap()
    }

    #[test]
    fn toy_lambda_max_matches_hand_computation() {
        let p = toy_problem();
        // y is centred already; A centred = ±0.5, X1 = ±1.
        // |Aᵀy| = 0.5*(1+1+2+2) = 3, |X1ᵀy| = 6; λ_max = 6 / (4 * 0.5)
        let f = PenaltyFactors::uniform(1, 0);
        let lm = lambda_max(&p, 0.5, &f, Mode::Heredity, Screening::Weighted).unwrap();
        assert!((lm - 3.0).abs() < 1e-12);
        let zero = HeredityFit {
            mode: Mode::Heredity,
            lambda: lm,
            alpha: 0.5,
            psi0: 0.0,
            beta: vec![0.0],
            tau: vec![],
            psi: vec![],
            objective: 0.0,
            iterations: 0,
            converged: true,
            kkt_violation: 0.0,
            objective_trace: vec![],
        };
        let at = PenaltySpec { lambda: lm, alpha: 0.5, factors: f.clone(), mode: Mode::Heredity };
        assert!(kkt_check(&zero, &p, &at) < 1e-12);
        let below = PenaltySpec { lambda: 0.99 * lm, ..at };
        assert!(kkt_check(&zero, &p, &below) > 1e-3);
    }

    #[test]
    fn orthogonal_response_gives_zero_lambda_max() {
        let h = StageHistory::new(
            vec![1, 1, 0, 0],
            Columns::from_columns(4, vec![vec![1.0, -1.0, 1.0, -1.0]]).unwrap(),
            vec!["x".into()],
        )
        .unwrap();
        let raw = build_design(&h, &ModelSpec::symmetric(vec![Term::column("x")])).unwrap();
        // y ⟂ A, X, A∘X after centring
        let p = Problem::prepare(&raw, &[1.0, -1.0, -1.0, 1.0], &[1.0; 4], CenteringMode::WeightedMean, false)
            .unwrap();
        let f = PenaltyFactors::<f64>::uniform(1, 1);
        let lm = lambda_max(&p, 0.5, &f, Mode::Heredity, Screening::Weighted).unwrap();
        assert!(lm.abs() < 1e-14);
    }

    #[test]
    fn all_zero_factors_is_a_configuration_error() {
        let p = toy_problem();
        let f = PenaltyFactors { main: vec![0.0, 0.0], interaction: vec![] };
        assert!(matches!(
            lambda_max(&p, 0.5, &f, Mode::Heredity, Screening::Weighted),
            Err(Error::NoPenalizedTerms)
        ));
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = lambda_grid(2.0f64, 3, 0.01).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-15);
        assert!((g[1] - 0.2).abs() < 1e-14);
        assert!((g[2] - 0.02).abs() < 1e-15);
        assert!(lambda_grid(1.0f64, 1, 0.1).is_err());
        assert!(lambda_grid(1.0f64, 5, 1.0).is_err());
    }

    #[test]
    fn bad_alpha_rejected() {
        let p = toy_problem();
        let spec = PenaltySpec { lambda: 0.1, alpha: 1.0, factors: PenaltyFactors::uniform(1, 0), mode: Mode::Heredity };
        assert!(matches!(cd_fit(&p, &spec, None, &SolverOptions::default()), Err(Error::Config(_))));
    }
}
