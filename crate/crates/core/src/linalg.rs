//! Dense column-major storage and the small amount of linear algebra the
//! estimators need (Gram matrices and Cholesky solves).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{wdot, Scalar};

/// Column-major dense matrix. Columns are contiguous, which is what
/// coordinate descent touches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Columns<F> {
    nrows: usize,
    ncols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Columns<F> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, data: vec![F::zero(); nrows * ncols] }
    }

    pub fn from_columns(nrows: usize, cols: Vec<Vec<F>>) -> Result<Self> {
        let ncols = cols.len();
        let mut data = Vec::with_capacity(nrows * ncols);
        for (j, c) in cols.into_iter().enumerate() {
            if c.len() != nrows {
                return Err(Error::Shape(format!(
                    "column {j} has {} rows, expected {nrows}",
                    c.len()
                )));
            }
            data.extend(c);
        }
        Ok(Self { nrows, ncols, data })
    }

    /// Build from row-major rows.
    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(nrows, ncols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != ncols {
                return Err(Error::Shape(format!("row {i} has {} entries, expected {ncols}", r.len())));
            }
            for (j, &v) in r.iter().enumerate() {
                m.col_mut(j)[i] = v;
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[F] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [F] {
        &mut self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[j * self.nrows + i]
    }

    pub fn iter_cols(&self) -> impl Iterator<Item = &[F]> {
        (0..self.ncols).map(move |j| self.col(j))
    }

    pub fn row(&self, i: usize) -> Vec<F> {
        (0..self.ncols).map(|j| self.get(i, j)).collect()
    }

    /// Keep the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.ncols);
        for j in 0..self.ncols {
            let c = self.col(j);
            data.extend(rows.iter().map(|&i| c[i]));
        }
        Self { nrows: rows.len(), ncols: self.ncols, data }
    }

    pub fn push_col(&mut self, col: Vec<F>) -> Result<()> {
        if self.ncols > 0 && col.len() != self.nrows {
            return Err(Error::Shape(format!("column has {} rows, expected {}", col.len(), self.nrows)));
        }
        if self.ncols == 0 {
            self.nrows = col.len();
        }
        self.data.extend(col);
        self.ncols += 1;
        Ok(())
    }
}

/// In-place Cholesky factorisation of a symmetric positive definite matrix
/// stored row-major (`k × k`). Only the lower triangle is read and written.
pub fn cholesky<F: Scalar>(a: &mut [F], k: usize) -> Result<()> {
    for j in 0..k {
        let mut d = a[j * k + j];
        for m in 0..j {
            d = d - a[j * k + m] * a[j * k + m];
        }
        if !(d > F::zero()) || !d.is_finite() {
            return Err(Error::RankDeficient);
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in (j + 1)..k {
            let mut s = a[i * k + j];
            for m in 0..j {
                s = s - a[i * k + m] * a[j * k + m];
            }
            a[i * k + j] = s / d;
        }
    }
    Ok(())
}

/// Solve `L Lᵀ x = b` given the factor produced by [`cholesky`].
pub fn cholesky_solve<F: Scalar>(l: &[F], k: usize, b: &mut [F]) {
    for i in 0..k {
        let mut s = b[i];
        for m in 0..i {
            s = s - l[i * k + m] * b[m];
        }
        b[i] = s / l[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = b[i];
        for m in (i + 1)..k {
            s = s - l[m * k + i] * b[m];
        }
        b[i] = s / l[i * k + i];
    }
}

/// Solve the symmetric positive definite system `a x = b`.
pub fn solve_spd<F: Scalar>(mut a: Vec<F>, k: usize, mut b: Vec<F>) -> Result<Vec<F>> {
    cholesky(&mut a, k)?;
    cholesky_solve(&a, k, &mut b);
    Ok(b)
}

/// Weighted Gram matrix `XᵀWX` (row-major) and `XᵀWy` for a list of columns.
pub fn weighted_gram<F: Scalar>(cols: &[&[F]], y: &[F], w: &[F]) -> (Vec<F>, Vec<F>) {
    let k = cols.len();
    let mut g = vec![F::zero(); k * k];
    let mut rhs = vec![F::zero(); k];
    for i in 0..k {
        rhs[i] = wdot(w, cols[i], y);
        for j in 0..=i {
            let v = wdot(w, cols[i], cols[j]);
            g[i * k + j] = v;
            g[j * k + i] = v;
        }
    }
    (g, rhs)
}

/// Outcome of a least-squares solve that drops collinear columns.
#[derive(Debug, Clone)]
pub struct PivotedSolve<F> {
    /// Coefficient per input column; dropped columns are zero.
    pub coef: Vec<F>,
    /// Indices of columns dropped as (numerically) collinear with earlier ones.
    pub dropped: Vec<usize>,
}

/// Weighted least squares without intercept on the given columns.
///
/// Columns are admitted in order; a column whose squared residual norm after
/// projection onto the admitted ones falls below `rel_tol` times its own
/// squared norm is dropped.
pub fn pivoted_wls<F: Scalar>(cols: &[&[F]], y: &[F], w: &[F], rel_tol: F) -> PivotedSolve<F> {
    let (g, rhs) = weighted_gram(cols, y, w);
    let k = cols.len();
    let mut kept: Vec<usize> = Vec::with_capacity(k);
    // Lower-triangular factor over kept columns, row-major in kept-index space.
    let mut l: Vec<Vec<F>> = Vec::with_capacity(k);
    let mut dropped = Vec::new();
    for j in 0..k {
        let gjj = g[j * k + j];
        if !(gjj > F::zero()) {
            dropped.push(j);
            continue;
        }
        let m = kept.len();
        let mut row = vec![F::zero(); m + 1];
        for a in 0..m {
            let mut s = g[j * k + kept[a]];
            for b in 0..a {
                s = s - row[b] * l[a][b];
            }
            row[a] = s / l[a][a];
        }
        let mut d = gjj;
        for &v in row.iter().take(m) {
            d = d - v * v;
        }
        if d <= rel_tol * gjj {
            dropped.push(j);
            continue;
        }
        row[m] = d.sqrt();
        l.push(row);
        kept.push(j);
    }
    let m = kept.len();
    let mut flat = vec![F::zero(); m * m];
    for (a, row) in l.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            flat[a * m + b] = v;
        }
    }
    let mut b: Vec<F> = kept.iter().map(|&j| rhs[j]).collect();
    cholesky_solve(&flat, m, &mut b);
    let mut coef = vec![F::zero(); k];
    for (a, &j) in kept.iter().enumerate() {
        coef[j] = b[a];
    }
    PivotedSolve { coef, dropped }
}
