//! Stage-wise trial data, model specification, design construction and
//! weighted centering / standardization.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Columns;
use crate::scalar::{wdot, Scalar};
use crate::term::Term;

/// Covariates and treatment observed at one decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct StageHistory<F> {
    a: Vec<u8>,
    x: Columns<F>,
    names: Vec<String>,
}

impl<F: Scalar> StageHistory<F> {
    pub fn new(a: Vec<u8>, x: Columns<F>, names: Vec<String>) -> Result<Self> {
        if let Some(bad) = a.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidTreatment(bad.to_string()));
        }
        if x.ncols() != names.len() {
            return Err(Error::Shape(format!("{} columns but {} names", x.ncols(), names.len())));
        }
        if x.ncols() > 0 && x.nrows() != a.len() {
            return Err(Error::Shape(format!("{} covariate rows but {} treatments", x.nrows(), a.len())));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::DuplicateColumn(n.clone()));
            }
        }
        for (j, col) in x.iter_cols().enumerate() {
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::MissingValue { column: names[j].clone(), row });
            }
        }
        Ok(Self { a, x, names })
    }

    pub fn nrows(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &[u8] {
        &self.a
    }

    pub fn x(&self) -> &Columns<F> {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[F]> {
        self.names.iter().position(|n| n == name).map(|j| self.x.col(j))
    }

    pub fn treatment(&self) -> Vec<F> {
        self.a.iter().map(|&v| if v == 1 { F::one() } else { F::zero() }).collect()
    }

    pub fn is_treatment_constant(&self) -> bool {
        self.a.windows(2).all(|p| p[0] == p[1])
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            a: rows.iter().map(|&i| self.a[i]).collect(),
            x: self.x.select_rows(rows),
            names: self.names.clone(),
        }
    }

    /// Named values of one row, for term evaluation.
    pub fn row_pairs(&self, i: usize) -> Vec<(&str, F)> {
        self.names.iter().enumerate().map(|(j, n)| (n.as_str(), self.x.get(i, j))).collect()
    }

    pub fn with_outcome(&self, y: Vec<F>) -> Result<StageDataset<F>> {
        StageDataset::from_history(y, self.clone())
    }
}

/// One decision stage's response (outcome or pseudo-outcome), treatment and
/// covariate history.
#[derive(Debug, Clone, PartialEq)]
pub struct StageDataset<F> {
    y: Vec<F>,
    history: StageHistory<F>,
}

impl<F: Scalar> StageDataset<F> {
    pub fn new(y: Vec<F>, a: Vec<u8>, x: Columns<F>, names: Vec<String>) -> Result<Self> {
        Self::from_history(y, StageHistory::new(a, x, names)?)
    }

    pub fn from_history(y: Vec<F>, history: StageHistory<F>) -> Result<Self> {
        if y.len() != history.nrows() {
            return Err(Error::Shape(format!("{} outcomes but {} treatments", y.len(), history.nrows())));
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue { column: "y".into(), row });
        }
        Ok(Self { y, history })
    }

    pub fn nrows(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[F] {
        &self.y
    }

    pub fn a(&self) -> &[u8] {
        self.history.a()
    }

    pub fn x(&self) -> &Columns<F> {
        self.history.x()
    }

    pub fn names(&self) -> &[String] {
        self.history.names()
    }

    pub fn history(&self) -> &StageHistory<F> {
        &self.history
    }

    pub fn column(&self, name: &str) -> Option<&[F]> {
        self.history.column(name)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self { y: rows.iter().map(|&i| self.y[i]).collect(), history: self.history.select_rows(rows) }
    }
}

/// A K-stage trial: one history per stage and the final outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial<F> {
    stages: Vec<StageHistory<F>>,
    outcome: Vec<F>,
}

impl<F: Scalar> Trial<F> {
    pub fn new(stages: Vec<StageHistory<F>>, outcome: Vec<F>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Config("a trial needs at least one stage".into()));
        }
        for (k, s) in stages.iter().enumerate() {
            if s.nrows() != outcome.len() {
                return Err(Error::Shape(format!(
                    "stage {} has {} rows but the outcome has {}",
                    k + 1,
                    s.nrows(),
                    outcome.len()
                )));
            }
        }
        Ok(Self { stages, outcome })
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, k: usize) -> &StageHistory<F> {
        &self.stages[k]
    }

    pub fn stages(&self) -> &[StageHistory<F>] {
        &self.stages
    }

    pub fn outcome(&self) -> &[F] {
        &self.outcome
    }
}

/// Map an arbitrary two-level treatment coding onto 0/1.
///
/// Values already in {0,1} pass through. Any other two-level coding maps the
/// smaller level to 0 and the larger to 1; the mapping is returned so the
/// caller can report it.
pub fn encode_treatment(raw: &[f64]) -> Result<(Vec<u8>, Option<(f64, f64)>)> {
    let mut levels: Vec<f64> = Vec::new();
    for &v in raw {
        if !v.is_finite() {
            return Err(Error::InvalidTreatment(v.to_string()));
        }
        if !levels.contains(&v) {
            levels.push(v);
            if levels.len() > 2 {
                return Err(Error::InvalidTreatment(format!("more than two levels ({levels:?})")));
            }
        }
    }
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let is01 = levels.iter().all(|&v| v == 0.0 || v == 1.0);
    if is01 {
        return Ok((raw.iter().map(|&v| u8::from(v == 1.0)).collect(), None));
    }
    let (lo, hi) = match levels.as_slice() {
        [lo, hi] => (*lo, *hi),
        [only] => return Err(Error::InvalidTreatment(format!("single non-binary level {only}"))),
        _ => unreachable!(),
    };
    log::warn!("treatment coded as {{{lo}, {hi}}}; mapping {lo} -> 0 and {hi} -> 1");
    Ok((raw.iter().map(|&v| u8::from(v == hi)).collect(), Some((lo, hi))))
}

/// Term lists for one stage: treatment-free (main) terms, blip (tailoring)
/// terms and the propensity model's terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub treatment_free: Vec<Term>,
    pub blip: Vec<Term>,
    #[serde(default)]
    pub propensity: Vec<Term>,
    #[serde(default)]
    pub penalize_psi0: bool,
}

impl ModelSpec {
    pub fn new(treatment_free: Vec<Term>, blip: Vec<Term>) -> Self {
        Self { treatment_free, blip, propensity: Vec::new(), penalize_psi0: false }
    }

    /// Same terms for the treatment-free and blip parts.
    pub fn symmetric(terms: Vec<Term>) -> Self {
        Self::new(terms.clone(), terms)
    }

    pub fn with_propensity(mut self, terms: Vec<Term>) -> Self {
        self.propensity = terms;
        self
    }

    /// Parse textual term lists; the entry `*` expands to every column in
    /// `columns` (in column order).
    pub fn from_patterns(
        treatment_free: &[String],
        blip: &[String],
        propensity: &[String],
        columns: &[String],
    ) -> Result<Self> {
        let expand = |pats: &[String]| -> Result<Vec<Term>> {
            let mut out: Vec<Term> = Vec::new();
            for p in pats {
                if p.trim() == "*" {
                    out.extend(columns.iter().map(|c| Term::column(c)));
                } else {
                    out.push(Term::parse(p)?);
                }
            }
            Ok(out)
        };
        Ok(Self {
            treatment_free: expand(treatment_free)?,
            blip: expand(blip)?,
            propensity: expand(propensity)?,
            penalize_psi0: false,
        })
    }
}

/// How the centring location is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenteringMode {
    /// `Σ w_i v_i / Σ w_i`; removes the intercept exactly.
    #[default]
    WeightedMean,
    /// `Σ w_i v_i / n`, the literal divide-by-n variant.
    DivideByN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centering<F> {
    pub mode: CenteringMode,
    pub main: Vec<F>,
    pub treatment: F,
    pub interactions: Vec<F>,
    pub outcome: F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling<F> {
    pub main: Vec<F>,
    pub treatment: F,
    pub interactions: Vec<F>,
    pub degenerate_main: Vec<bool>,
    pub degenerate_treatment: bool,
    pub degenerate_interactions: Vec<bool>,
}

/// Main-effect, treatment and treatment-by-covariate interaction columns.
///
/// Each interaction column is `a ∘ main[parent]` formed on the raw scale.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignBlocks<F> {
    main: Columns<F>,
    main_terms: Vec<Term>,
    treatment: Vec<F>,
    interactions: Columns<F>,
    interaction_terms: Vec<Term>,
    interaction_parent: Vec<usize>,
    centering: Option<Centering<F>>,
    scaling: Option<Scaling<F>>,
}

/// Raw design for a stage. Main columns are the treatment-free terms followed
/// by any blip term not already among them (heredity needs a main effect for
/// every interaction); one interaction per blip term.
pub fn build_design<F: Scalar>(history: &StageHistory<F>, spec: &ModelSpec) -> Result<DesignBlocks<F>> {
    let n = history.nrows();
    let lookup = |c: &str| history.column(c);
    let mut main_terms: Vec<Term> = Vec::new();
    for t in spec.treatment_free.iter().chain(&spec.blip) {
        if !main_terms.iter().any(|m| m.label() == t.label()) {
            main_terms.push(t.clone());
        }
    }
    let mut blip_seen = HashSet::new();
    for t in &spec.blip {
        if !blip_seen.insert(t.label()) {
            return Err(Error::DuplicateColumn(t.label().to_string()));
        }
    }
    let mut main = Columns::zeros(n, 0);
    for t in &main_terms {
        main.push_col(t.evaluate(n, lookup)?)?;
    }
    let treatment = history.treatment();
    let mut interactions = Columns::zeros(n, 0);
    let mut parent = Vec::with_capacity(spec.blip.len());
    for t in &spec.blip {
        let j = main_terms.iter().position(|m| m.label() == t.label()).expect("blip term is a main term");
        let col: Vec<F> = treatment.iter().zip(main.col(j)).map(|(&a, &x)| a * x).collect();
        interactions.push_col(col)?;
        parent.push(j);
    }
    if main.ncols() == 0 {
        main = Columns::zeros(n, 0);
    }
    if interactions.ncols() == 0 {
        interactions = Columns::zeros(n, 0);
    }
    Ok(DesignBlocks {
        main,
        main_terms,
        treatment,
        interactions,
        interaction_terms: spec.blip.clone(),
        interaction_parent: parent,
        centering: None,
        scaling: None,
    })
}

fn location<F: Scalar>(v: &[F], w: &[F], denom: F) -> F {
    v.iter().zip(w).fold(F::zero(), |acc, (&vi, &wi)| acc + wi * vi) / denom
}

fn shift<F: Scalar>(v: &mut [F], m: F) {
    for x in v.iter_mut() {
        *x = *x - m;
    }
}

/// Centre the response and every design column at its weighted mean.
/// Re-centering composes with any existing centring record.
pub fn weighted_center<F: Scalar>(
    blocks: &DesignBlocks<F>,
    y: &[F],
    w: &[F],
    mode: CenteringMode,
) -> Result<(DesignBlocks<F>, Vec<F>)> {
    let n = blocks.nrows();
    if y.len() != n || w.len() != n {
        return Err(Error::Shape(format!("design has {n} rows, y {} and w {}", y.len(), w.len())));
    }
    validate_weights(w)?;
    let denom = match mode {
        CenteringMode::WeightedMean => w.iter().copied().sum::<F>(),
        CenteringMode::DivideByN => F::from_usize_lossy(n),
    };
    let mut out = blocks.clone();
    let mut yc = y.to_vec();
    let my = location(&yc, w, denom);
    shift(&mut yc, my);
    let mt = location(&out.treatment, w, denom);
    shift(&mut out.treatment, mt);
    let mut mm = Vec::with_capacity(out.main.ncols());
    for j in 0..out.main.ncols() {
        let m = location(out.main.col(j), w, denom);
        shift(out.main.col_mut(j), m);
        mm.push(m);
    }
    let mut mi = Vec::with_capacity(out.interactions.ncols());
    for k in 0..out.interactions.ncols() {
        let m = location(out.interactions.col(k), w, denom);
        shift(out.interactions.col_mut(k), m);
        mi.push(m);
    }
    // Locations are recorded on the raw scale.
    let unscale = |m: F, s: F| m * s;
    let (mm, mt, mi) = match &blocks.scaling {
        Some(s) => (
            mm.iter().zip(&s.main).map(|(&m, &sc)| unscale(m, sc)).collect(),
            unscale(mt, s.treatment),
            mi.iter().zip(&s.interactions).map(|(&m, &sc)| unscale(m, sc)).collect(),
        ),
        None => (mm, mt, mi),
    };
    out.centering = Some(match &blocks.centering {
        Some(c) => Centering {
            mode,
            main: c.main.iter().zip(&mm).map(|(&a, &b)| a + b).collect(),
            treatment: c.treatment + mt,
            interactions: c.interactions.iter().zip(&mi).map(|(&a, &b)| a + b).collect(),
            outcome: c.outcome + my,
        },
        None => Centering { mode, main: mm, treatment: mt, interactions: mi, outcome: my },
    });
    Ok((out, yc))
}

pub(crate) fn validate_weights<F: Scalar>(w: &[F]) -> Result<()> {
    if w.iter().any(|&v| !(v >= F::zero()) || !v.is_finite()) {
        return Err(Error::InvalidWeights);
    }
    if !(w.iter().copied().sum::<F>() > F::zero()) {
        return Err(Error::InvalidWeights);
    }
    Ok(())
}

fn unit_scale<F: Scalar>(v: &[F], w: &[F], wsum: F) -> (F, bool) {
    let m2 = wdot(w, v, v) / wsum;
    let s = m2.sqrt();
    let floor = F::lit(1e-12).max(F::epsilon() * F::lit(100.0));
    if !(s > floor) {
        (F::one(), true)
    } else {
        (s, false)
    }
}

/// Scale each (centred) column to unit weighted second moment. Zero-variance
/// columns keep scale 1 and are flagged. With `enable == false` the blocks
/// are returned unchanged.
pub fn standardize<F: Scalar>(blocks: &DesignBlocks<F>, w: &[F], enable: bool) -> DesignBlocks<F> {
    if !enable {
        return blocks.clone();
    }
    let wsum: F = w.iter().copied().sum();
    let mut out = blocks.clone();
    let (st, dt) = unit_scale(&out.treatment, w, wsum);
    out.treatment.iter_mut().for_each(|v| *v = *v / st);
    let mut sm = Vec::new();
    let mut dm = Vec::new();
    for j in 0..out.main.ncols() {
        let (s, d) = unit_scale(out.main.col(j), w, wsum);
        out.main.col_mut(j).iter_mut().for_each(|v| *v = *v / s);
        sm.push(s);
        dm.push(d);
    }
    let mut si = Vec::new();
    let mut di = Vec::new();
    for k in 0..out.interactions.ncols() {
        let (s, d) = unit_scale(out.interactions.col(k), w, wsum);
        out.interactions.col_mut(k).iter_mut().for_each(|v| *v = *v / s);
        si.push(s);
        di.push(d);
    }
    let compose = |old: Option<F>, s: F| old.map_or(s, |o| o * s);
    let prev = blocks.scaling.as_ref();
    out.scaling = Some(Scaling {
        main: sm.iter().enumerate().map(|(j, &s)| compose(prev.map(|p| p.main[j]), s)).collect(),
        treatment: compose(prev.map(|p| p.treatment), st),
        interactions: si.iter().enumerate().map(|(k, &s)| compose(prev.map(|p| p.interactions[k]), s)).collect(),
        degenerate_main: dm,
        degenerate_treatment: dt,
        degenerate_interactions: di,
    });
    out
}

/// Coefficients on the original (raw design) scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients<F> {
    pub intercept: F,
    pub psi0: F,
    pub main_terms: Vec<Term>,
    pub beta: Vec<F>,
    pub interaction_terms: Vec<Term>,
    pub psi: Vec<F>,
}

impl<F: Scalar> Coefficients<F> {
    /// Predict on a raw (uncentred, unscaled) design.
    pub fn predict(&self, raw: &DesignBlocks<F>) -> Vec<F> {
        let mut out = vec![self.intercept; raw.nrows()];
        crate::scalar::axpy(self.psi0, raw.treatment(), &mut out);
        for (j, &b) in self.beta.iter().enumerate() {
            if b != F::zero() {
                crate::scalar::axpy(b, raw.main().col(j), &mut out);
            }
        }
        for (k, &p) in self.psi.iter().enumerate() {
            if p != F::zero() {
                crate::scalar::axpy(p, raw.interactions().col(k), &mut out);
            }
        }
        out
    }

    /// Treatment-free part `intercept + Σ β_j x_j` on a raw design.
    pub fn predict_treatment_free(&self, raw: &DesignBlocks<F>) -> Vec<F> {
        let mut out = vec![self.intercept; raw.nrows()];
        for (j, &b) in self.beta.iter().enumerate() {
            if b != F::zero() {
                crate::scalar::axpy(b, raw.main().col(j), &mut out);
            }
        }
        out
    }
}

impl<F: Scalar> DesignBlocks<F> {
    pub fn nrows(&self) -> usize {
        self.treatment.len()
    }

    pub fn n_main(&self) -> usize {
        self.main.ncols()
    }

    pub fn n_interactions(&self) -> usize {
        self.interactions.ncols()
    }

    pub fn main(&self) -> &Columns<F> {
        &self.main
    }

    pub fn treatment(&self) -> &[F] {
        &self.treatment
    }

    pub fn interactions(&self) -> &Columns<F> {
        &self.interactions
    }

    pub fn main_terms(&self) -> &[Term] {
        &self.main_terms
    }

    pub fn interaction_terms(&self) -> &[Term] {
        &self.interaction_terms
    }

    /// Index of the main column each interaction is built from.
    pub fn interaction_parent(&self) -> &[usize] {
        &self.interaction_parent
    }

    pub fn centering(&self) -> Option<&Centering<F>> {
        self.centering.as_ref()
    }

    pub fn scaling(&self) -> Option<&Scaling<F>> {
        self.scaling.as_ref()
    }

    pub fn is_centered(&self) -> bool {
        self.centering.is_some()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            main: self.main.select_rows(rows),
            main_terms: self.main_terms.clone(),
            treatment: rows.iter().map(|&i| self.treatment[i]).collect(),
            interactions: self.interactions.select_rows(rows),
            interaction_terms: self.interaction_terms.clone(),
            interaction_parent: self.interaction_parent.clone(),
            centering: self.centering.clone(),
            scaling: self.scaling.clone(),
        }
    }

    /// Map coefficients fitted on these (centred, possibly scaled) blocks back
    /// to the raw design scale, recovering the intercept.
    pub fn to_original(&self, psi0: F, beta: &[F], psi: &[F]) -> Coefficients<F> {
        let (sm, st, si) = match &self.scaling {
            Some(s) => (s.main.clone(), s.treatment, s.interactions.clone()),
            None => (vec![F::one(); self.n_main()], F::one(), vec![F::one(); self.n_interactions()]),
        };
        let psi0_o = psi0 / st;
        let beta_o: Vec<F> = beta.iter().zip(&sm).map(|(&b, &s)| b / s).collect();
        let psi_o: Vec<F> = psi.iter().zip(&si).map(|(&p, &s)| p / s).collect();
        let intercept = match &self.centering {
            Some(c) => {
                let mut v = c.outcome - psi0_o * c.treatment;
                for (b, m) in beta_o.iter().zip(&c.main) {
                    v = v - *b * *m;
                }
                for (p, m) in psi_o.iter().zip(&c.interactions) {
                    v = v - *p * *m;
                }
                v
            }
            None => F::zero(),
        };
        Coefficients {
            intercept,
            psi0: psi0_o,
            main_terms: self.main_terms.clone(),
            beta: beta_o,
            interaction_terms: self.interaction_terms.clone(),
            psi: psi_o,
        }
    }
}
