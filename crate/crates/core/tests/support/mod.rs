//! Independent reference implementations used as test oracles. Nothing
//! here calls into the solver; problems are read out as dense columns.
#![allow(dead_code)]

use pdwols::{
    build_design, CenteringMode, Columns, ModelSpec, PenaltySpec, Problem, StageHistory, Term,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct Dense {
    pub n: f64,
    pub a: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub xa: Vec<Vec<f64>>,
    pub parent: Vec<usize>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
}

impl Dense {
    pub fn from_problem(p: &Problem<f64>) -> Self {
        let b = p.blocks();
        Self {
            n: p.n_eff(),
            a: b.treatment().to_vec(),
            x: b.main().iter_cols().map(|c| c.to_vec()).collect(),
            xa: b.interactions().iter_cols().map(|c| c.to_vec()).collect(),
            parent: b.interaction_parent().to_vec(),
            y: p.y().to_vec(),
            w: p.w().to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }
}

/// Parameters in heredity form: ψ₀, β, τ.
#[derive(Clone, Debug)]
pub struct Params {
    pub psi0: f64,
    pub beta: Vec<f64>,
    pub tau: Vec<f64>,
}

pub struct Pens {
    pub psi0: f64,
    pub beta: Vec<f64>,
    pub tau: Vec<f64>,
}

pub fn pens(spec: &PenaltySpec<f64>) -> Pens {
    let f = |share: f64, v: f64| if v == 0.0 { 0.0 } else { spec.lambda * share * v };
    Pens {
        psi0: f(1.0 - spec.alpha, spec.factors.main[0]),
        beta: spec.factors.main[1..].iter().map(|&v| f(1.0 - spec.alpha, v)).collect(),
        tau: spec.factors.interaction.iter().map(|&v| f(spec.alpha, v)).collect(),
    }
}

fn residual(d: &Dense, t: &Params) -> Vec<f64> {
    (0..d.rows())
        .map(|i| {
            let mut f = t.psi0 * d.a[i];
            for (j, b) in t.beta.iter().enumerate() {
                f += b * d.x[j][i];
            }
            for (k, tau) in t.tau.iter().enumerate() {
                f += t.psi0 * tau * t.beta[d.parent[k]] * d.xa[k][i];
            }
            d.y[i] - f
        })
        .collect()
}

pub fn heredity_objective(d: &Dense, pen: &Pens, t: &Params) -> f64 {
    let r = residual(d, t);
    let loss: f64 = r.iter().zip(&d.w).map(|(r, w)| w * r * r).sum::<f64>() / (2.0 * d.n);
    let mut q = loss + pen.psi0 * t.psi0.abs();
    q += pen.beta.iter().zip(&t.beta).map(|(p, b)| p * b.abs()).sum::<f64>();
    q += pen.tau.iter().zip(&t.tau).map(|(p, b)| p * b.abs()).sum::<f64>();
    q
}

fn smooth(d: &Dense, t: &Params) -> f64 {
    let r = residual(d, t);
    r.iter().zip(&d.w).map(|(r, w)| w * r * r).sum::<f64>() / (2.0 * d.n)
}

fn gradient(d: &Dense, t: &Params) -> Params {
    let r = residual(d, t);
    let n = d.n;
    let dot = |v: &dyn Fn(usize) -> f64| -> f64 { -(0..d.rows()).map(|i| d.w[i] * r[i] * v(i)).sum::<f64>() / n };
    let g0 = dot(&|i| {
        d.a[i] + t.tau.iter().enumerate().map(|(k, tau)| tau * t.beta[d.parent[k]] * d.xa[k][i]).sum::<f64>()
    });
    let gb = (0..t.beta.len())
        .map(|j| {
            dot(&|i| {
                d.x[j][i]
                    + (0..t.tau.len())
                        .filter(|&k| d.parent[k] == j)
                        .map(|k| t.psi0 * t.tau[k] * d.xa[k][i])
                        .sum::<f64>()
            })
        })
        .collect();
    let gt = (0..t.tau.len()).map(|k| dot(&|i| t.psi0 * t.beta[d.parent[k]] * d.xa[k][i])).collect();
    Params { psi0: g0, beta: gb, tau: gt }
}

fn soft(x: f64, u: f64) -> f64 {
    x.signum() * (x.abs() - u).max(0.0)
}

fn prox_step(t: &Params, g: &Params, pen: &Pens, s: f64) -> Params {
    Params {
        psi0: soft(t.psi0 - s * g.psi0, s * pen.psi0),
        beta: t.beta.iter().zip(&g.beta).zip(&pen.beta).map(|((b, g), p)| soft(b - s * g, s * p)).collect(),
        tau: t.tau.iter().zip(&g.tau).zip(&pen.tau).map(|((b, g), p)| soft(b - s * g, s * p)).collect(),
    }
}

fn sqdist(a: &Params, b: &Params) -> f64 {
    let mut s = (a.psi0 - b.psi0).powi(2);
    s += a.beta.iter().zip(&b.beta).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    s += a.tau.iter().zip(&b.tau).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    s
}

fn inner(a: &Params, b: &Params, c: &Params) -> f64 {
    // ⟨a, b − c⟩
    let mut s = a.psi0 * (b.psi0 - c.psi0);
    s += a.beta.iter().zip(&b.beta).zip(&c.beta).map(|((a, b), c)| a * (b - c)).sum::<f64>();
    s += a.tau.iter().zip(&b.tau).zip(&c.tau).map(|((a, b), c)| a * (b - c)).sum::<f64>();
    s
}

/// Proximal gradient with backtracking from one start.
pub fn prox_grad(d: &Dense, pen: &Pens, start: Params, max_iter: usize) -> (Params, f64) {
    let mut t = start;
    let mut step = 1.0;
    for _ in 0..max_iter {
        let g = gradient(d, &t);
        let f0 = smooth(d, &t);
        let next = loop {
            let cand = prox_step(&t, &g, pen, step);
            let bound = f0 + inner(&g, &cand, &t) + sqdist(&cand, &t) / (2.0 * step);
            if smooth(d, &cand) <= bound + 1e-15 || step < 1e-14 {
                break cand;
            }
            step *= 0.5;
        };
        let moved = sqdist(&next, &t).sqrt();
        t = next;
        step *= 1.5;
        if moved < 1e-12 {
            break;
        }
    }
    let q = heredity_objective(d, pen, &t);
    (t, q)
}

/// Best objective over the zero start plus `starts − 1` random starts.
pub fn prox_grad_multistart(d: &Dense, pen: &Pens, starts: usize, seed: u64) -> (Params, f64) {
    let p = d.x.len();
    let q = d.xa.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Params, f64)> = None;
    for s in 0..starts {
        let start = if s == 0 {
            Params { psi0: 0.0, beta: vec![0.0; p], tau: vec![0.0; q] }
        } else {
            let mut z = || -> f64 { rng.sample::<f64, _>(StandardNormal) };
            Params { psi0: z(), beta: (0..p).map(|_| z()).collect(), tau: (0..q).map(|_| z()).collect() }
        };
        let (t, obj) = prox_grad(d, pen, start, 20_000);
        if best.as_ref().is_none_or(|b| obj < b.1) {
            best = Some((t, obj));
        }
    }
    best.unwrap()
}

/// Convex weighted lasso over all columns (treatment, mains, interactions)
/// by FISTA with a fixed step 1/L, L bounded by the Frobenius norm.
pub fn fista_lasso(cols: &[Vec<f64>], y: &[f64], w: &[f64], n: f64, pen: &[f64], iters: usize) -> Vec<f64> {
    let m = cols.len();
    let rows = y.len();
    let lip: f64 = cols.iter().map(|c| c.iter().zip(w).map(|(v, w)| w * v * v).sum::<f64>()).sum::<f64>() / n;
    let step = 1.0 / lip;
    let mut x = vec![0.0; m];
    let mut z = x.clone();
    let mut tk = 1.0f64;
    for _ in 0..iters {
        let r: Vec<f64> = (0..rows).map(|i| y[i] - (0..m).map(|j| cols[j][i] * z[j]).sum::<f64>()).collect();
        let g: Vec<f64> = (0..m).map(|j| -(0..rows).map(|i| w[i] * r[i] * cols[j][i]).sum::<f64>() / n).collect();
        let xn: Vec<f64> = (0..m).map(|j| soft(z[j] - step * g[j], step * pen[j])).collect();
        let tn = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
        z = (0..m).map(|j| xn[j] + (tk - 1.0) / tn * (xn[j] - x[j])).collect();
        x = xn;
        tk = tn;
    }
    x
}

/// Solve `G θ = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut g: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let k = b.len();
    for c in 0..k {
        let piv = (c..k).max_by(|&i, &j| g[i][c].abs().partial_cmp(&g[j][c].abs()).unwrap()).unwrap();
        g.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..k {
            let f = g[r][c] / g[c][c];
            for cc in c..k {
                g[r][cc] -= f * g[c][cc];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|c| g[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / g[r][r];
    }
    x
}

/// Weighted normal equations `XᵀWX θ = XᵀWy`.
pub fn weighted_normal_equations(cols: &[Vec<f64>], y: &[f64], w: &[f64]) -> Vec<f64> {
    let k = cols.len();
    let g = (0..k)
        .map(|a| (0..k).map(|b| (0..y.len()).map(|i| w[i] * cols[a][i] * cols[b][i]).sum()).collect())
        .collect();
    let rhs = (0..k).map(|a| (0..y.len()).map(|i| w[i] * cols[a][i] * y[i]).sum()).collect();
    gauss_solve(g, rhs)
}

/// Random single-stage instance: `p` standard-normal covariates, balanced
/// treatment, a sparse outcome with one true interaction, weights in
/// `[0.05, 1.05)`.
pub fn random_instance(seed: u64, n: usize, p: usize) -> (StageHistory<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols = vec![vec![0.0; n]; p];
    for c in cols.iter_mut() {
        for v in c.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }
    let mut a: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
    a[0] = 0;
    a[1] = 1;
    let scale: f64 = rng.random_range(0.2..2.0);
    let y = (0..n)
        .map(|i| {
            let e: f64 = rng.sample(StandardNormal);
            let ai = f64::from(a[i]);
            scale * (cols[0][i] + ai * (1.0 - cols[0][i])) + e
        })
        .collect();
    let w = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    let h = StageHistory::new(a, Columns::from_columns(n, cols).unwrap(), names).unwrap();
    (h, y, w)
}

pub fn symmetric_spec(p: usize) -> ModelSpec {
    ModelSpec::symmetric((1..=p).map(|j| Term::column(&format!("x{j}"))).collect())
}

/// Centred, standardized problem for a random instance.
pub fn random_problem(seed: u64, n: usize, p: usize) -> Problem<f64> {
    let (h, y, w) = random_instance(seed, n, p);
    let raw = build_design(&h, &symmetric_spec(p)).unwrap();
    Problem::prepare(&raw, &y, &w, CenteringMode::WeightedMean, true).unwrap()
}
