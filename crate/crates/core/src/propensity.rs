//! Treatment (propensity) models fitted by logistic regression, and the
//! balancing weights built from them.

use serde::{Deserialize, Serialize};

use crate::data::StageHistory;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, Columns};
use crate::scalar::Scalar;
use crate::term::Term;

pub const PROBABILITY_CLIP: f64 = 1e-6;
const MAX_IRLS_ITER: usize = 50;
const IRLS_TOL: f64 = 1e-8;

/// Fitted logistic treatment model `P(A=1|x) = expit(b0 + Σ b_j t_j(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel<F> {
    /// Intercept followed by one coefficient per term.
    pub coefficients: Vec<F>,
    pub terms: Vec<Term>,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the data are (quasi-)perfectly separated; probabilities are
    /// still usable because of clipping.
    pub separation: bool,
    /// Log-likelihood after each accepted iterate (starting point first).
    pub log_likelihood: Vec<F>,
}

#[inline]
fn softplus<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn expit<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `expit(eta)` clipped to `[1e-6, 1 - 1e-6]`.
pub fn expit_clipped<F: Scalar>(eta: F) -> F {
    let c = F::lit(PROBABILITY_CLIP);
    expit(eta).max(c).min(F::one() - c)
}

fn linear_predictor<F: Scalar>(x: &Columns<F>, beta: &[F]) -> Vec<F> {
    let mut eta = vec![beta[0]; x.nrows()];
    for j in 0..x.ncols() {
        crate::scalar::axpy(beta[j + 1], x.col(j), &mut eta);
    }
    eta
}

fn log_likelihood<F: Scalar>(eta: &[F], a: &[u8]) -> F {
    eta.iter()
        .zip(a)
        .map(|(&e, &ai)| if ai == 1 { -softplus(-e) } else { -softplus(e) })
        .sum()
}

/// Logistic regression on an explicit covariate matrix (intercept added).
///
/// Newton-Raphson / IRLS with step halving so the log-likelihood never
/// decreases. Stops when the largest coefficient change is below 1e-8 or
/// after 50 iterations.
pub fn fit_logistic_matrix<F: Scalar>(x: &Columns<F>, a: &[u8]) -> Result<(Vec<F>, bool, usize, bool, Vec<F>)> {
    let n = a.len();
    let k = x.ncols() + 1;
    if x.ncols() > 0 && x.nrows() != n {
        return Err(Error::Shape(format!("{} covariate rows but {n} treatments", x.nrows())));
    }
    if n < k + 1 {
        return Err(Error::Config(format!("{n} rows cannot support a {k}-parameter treatment model")));
    }
    if a.windows(2).all(|p| p[0] == p[1]) {
        return Err(Error::ConstantTreatment);
    }
    let col = |j: usize| -> Option<&[F]> { if j == 0 { None } else { Some(x.col(j - 1)) } };
    let mut beta = vec![F::zero(); k];
    let mut eta = linear_predictor(x, &beta);
    let mut ll = log_likelihood(&eta, a);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_IRLS_ITER {
        iterations += 1;
        let p: Vec<F> = eta.iter().map(|&e| expit(e)).collect();
        let v: Vec<F> = p.iter().map(|&pi| pi * (F::one() - pi)).collect();
        let resid: Vec<F> = a.iter().zip(&p).map(|(&ai, &pi)| F::from_u8(ai).unwrap() - pi).collect();
        let mut h = vec![F::zero(); k * k];
        let mut g = vec![F::zero(); k];
        for i in 0..k {
            let ci = col(i);
            g[i] = match ci {
                None => resid.iter().copied().sum(),
                Some(c) => c.iter().zip(&resid).map(|(&u, &r)| u * r).sum(),
            };
            for j in 0..=i {
                let cj = col(j);
                let s: F = (0..n)
                    .map(|r| {
                        let u = ci.map_or(F::one(), |c| c[r]);
                        let t = cj.map_or(F::one(), |c| c[r]);
                        v[r] * u * t
                    })
                    .sum();
                h[i * k + j] = s;
                h[j * k + i] = s;
            }
        }
        let mut step = g.clone();
        let max_diag = (0..k).map(|i| h[i * k + i]).fold(F::zero(), F::max);
        let mut ridge = F::zero();
        loop {
            let mut hr = h.clone();
            for i in 0..k {
                hr[i * k + i] = hr[i * k + i] + ridge;
            }
            if cholesky(&mut hr, k).is_ok() {
                cholesky_solve(&hr, k, &mut step);
                break;
            }
            ridge = if ridge == F::zero() { max_diag.max(F::lit(1e-300)) * F::lit(1e-10) } else { ridge * F::lit(100.0) };
            if !ridge.is_finite() {
                return Err(Error::RankDeficient);
            }
            step.copy_from_slice(&g);
        }
        // Step halving keeps the log-likelihood monotone.
        let mut t = F::one();
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<F> = beta.iter().zip(&step).map(|(&b, &s)| b + t * s).collect();
            let cand_eta = linear_predictor(x, &cand);
            let cand_ll = log_likelihood(&cand_eta, a);
            if cand_ll >= ll - F::lit(1e-12) * (F::one() + ll.abs()) && cand_ll.is_finite() {
                let change = beta.iter().zip(&cand).map(|(&b, &c)| (b - c).abs()).fold(F::zero(), F::max);
                beta = cand;
                eta = cand_eta;
                ll = cand_ll.max(ll);
                trace.push(ll);
                accepted = true;
                if change < F::lit(IRLS_TOL) {
                    converged = true;
                }
                break;
            }
            t = t * F::lit(0.5);
        }
        if !accepted {
            // No ascent direction left: at the optimum up to rounding.
            converged = true;
        }
        if converged {
            break;
        }
    }
    let max_dev = eta
        .iter()
        .zip(a)
        .map(|(&e, &ai)| (F::from_u8(ai).unwrap() - expit(e)).abs())
        .fold(F::zero(), F::max);
    let norm = beta.iter().fold(F::zero(), |m, b| m.max(b.abs()));
    let separation = max_dev < F::lit(1e-3) || (!converged && norm > F::lit(20.0));
    if separation {
        log::warn!("treatment model: perfect separation detected; using clipped probabilities");
    }
    Ok((beta, converged, iterations, separation, trace))
}

/// Evaluate `terms` on `history` as a covariate matrix.
fn term_matrix<F: Scalar>(history: &StageHistory<F>, terms: &[Term]) -> Result<Columns<F>> {
    let n = history.nrows();
    let mut x = Columns::zeros(n, 0);
    for t in terms {
        x.push_col(t.evaluate(n, |c| history.column(c))?)?;
    }
    if x.ncols() == 0 {
        x = Columns::zeros(n, 0);
    }
    Ok(x)
}

/// Fit the treatment model `A ~ terms` on a stage history.
pub fn fit_logistic<F: Scalar>(history: &StageHistory<F>, terms: &[Term]) -> Result<PropensityModel<F>> {
    let x = term_matrix(history, terms)?;
    let (coefficients, converged, iterations, separation, log_likelihood) = fit_logistic_matrix(&x, history.a())?;
    Ok(PropensityModel { coefficients, terms: terms.to_vec(), converged, iterations, separation, log_likelihood })
}

/// Clipped fitted probabilities for the rows of `history`.
pub fn predict_propensity<F: Scalar>(model: &PropensityModel<F>, history: &StageHistory<F>) -> Result<Vec<F>> {
    let x = term_matrix(history, &model.terms)?;
    Ok(linear_predictor(&x, &model.coefficients).into_iter().map(expit_clipped).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    Estimated,
    NullModel,
    UserSupplied,
    AllOnes,
}

/// Observation weights with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector<F> {
    pub w: Vec<F>,
    pub source: WeightSource,
}

impl<F: Scalar> WeightVector<F> {
    pub fn user(w: Vec<F>) -> Result<Self> {
        crate::data::validate_weights(&w)?;
        Ok(Self { w, source: WeightSource::UserSupplied })
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self { w: rows.iter().map(|&i| self.w[i]).collect(), source: self.source }
    }
}

/// Absolute-value balancing weights `w_i = |a_i − π_i|`.
pub fn dwols_weights<F: Scalar>(a: &[u8], pi: &[F]) -> WeightVector<F> {
    let w = a.iter().zip(pi).map(|(&ai, &p)| (F::from_u8(ai).unwrap() - p).abs()).collect();
    WeightVector { w, source: WeightSource::Estimated }
}

/// All-ones weights (no treatment-model adjustment).
pub fn null_weights<F: Scalar>(n: usize) -> WeightVector<F> {
    WeightVector { w: vec![F::one(); n], source: WeightSource::AllOnes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(x: Vec<f64>, a: Vec<u8>) -> StageHistory<f64> {
        let n = a.len();
        StageHistory::new(a, Columns::from_columns(n, vec![x]).unwrap(), vec!["x".into()]).unwrap()
    }

    #[test]
    fn balanced_null_model() {
        let h = hist(vec![0.0; 6], vec![0, 1, 0, 1, 1, 0]);
        let m = fit_logistic(&h, &[]).unwrap();
        assert!(m.coefficients[0].abs() < 1e-12);
        assert!(m.converged);
        let p = predict_propensity(&m, &h).unwrap();
        assert!(p.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn separation_is_flagged_not_fatal() {
        let h = hist(vec![-1.0, -1.0, 1.0, 1.0], vec![0, 0, 1, 1]);
        let m = fit_logistic(&h, &[Term::column("x")]).unwrap();
        assert!(m.separation);
        let p = predict_propensity(&m, &h).unwrap();
        assert!(p.iter().all(|&v| (1e-6..=1.0 - 1e-6).contains(&v)));
    }

    #[test]
    fn constant_treatment_is_an_error() {
        let h = hist(vec![0.0, 1.0, 2.0], vec![1, 1, 1]);
        assert!(matches!(fit_logistic(&h, &[]), Err(Error::ConstantTreatment)));
    }

    #[test]
    fn too_few_rows_for_terms() {
        let h = hist(vec![0.0, 1.0], vec![0, 1]);
        assert!(matches!(fit_logistic(&h, &[Term::column("x")]), Err(Error::Config(_))));
    }

    #[test]
    fn clipping_and_expit() {
        assert_eq!(expit_clipped(0.0f64), 0.5);
        assert_eq!(expit_clipped(1e3f64), 1.0 - 1e-6);
        assert_eq!(expit_clipped(-1e3f64), 1e-6);
        assert!((expit_clipped(3.0f64.ln()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn absolute_value_weights() {
        let w = dwols_weights(&[1, 0], &[0.3, 0.3]);
        assert!((w.w[0] - 0.7f64).abs() < 1e-15);
        assert!((w.w[1] - 0.3).abs() < 1e-15);
        assert_eq!(w.source, WeightSource::Estimated);
        // π w(1,x) = (1-π) w(0,x)
        assert!((0.3 * w.w[0] - 0.7 * w.w[1]).abs() < 1e-15);
    }

    #[test]
    fn null_weights_are_ones() {
        let w = null_weights::<f64>(3);
        assert_eq!(w.w, vec![1.0, 1.0, 1.0]);
        assert_eq!(w.source, WeightSource::AllOnes);
        assert_eq!(null_weights::<f64>(1).w, vec![1.0]);
        assert_eq!(null_weights::<f64>(7).w.iter().sum::<f64>(), 7.0);
    }

    #[test]
    fn user_weights_are_validated() {
        assert!(WeightVector::user(vec![1.0, -0.1f64]).is_err());
        assert!(WeightVector::user(vec![0.0, 0.0f64]).is_err());
        assert!(WeightVector::user(vec![0.0, 2.0f64]).is_ok());
    }
}
