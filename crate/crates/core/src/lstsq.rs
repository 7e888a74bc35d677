//! Least squares through a column-pivoted Householder QR.
//!
//! The numerical rank is the number of pivots with `|R_kk| > max(N, p) * eps * |R_00|`.
//! Columns beyond the rank get zero coefficients (a basic solution) and the
//! residual is the projection of `y` off the span of the retained columns.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::num::{dot, max_abs, sqrt};

/// A QR factorization `X P = Q R` kept in Householder form.
#[derive(Debug, Clone)]
pub struct Qr {
    rows: usize,
    cols: usize,
    /// Householder vectors, `reflectors[k]` acts on rows `k..rows`.
    reflectors: Vec<Vec<f64>>,
    betas: Vec<f64>,
    /// Upper-triangular factor, `cols x cols`, in pivoted column order.
    r: Matrix,
    perm: Vec<usize>,
    rank: usize,
}

impl Qr {
    pub fn new(x: &Matrix) -> Result<Self> {
        let (n, p) = (x.rows(), x.cols());
        if !x.is_finite() {
            return Err(Error::InvalidParameter("design matrix has non-finite entries".into()));
        }
        let mut a = x.clone();
        let mut perm: Vec<usize> = (0..p).collect();
        let steps = n.min(p);
        let mut reflectors = Vec::with_capacity(steps);
        let mut betas = Vec::with_capacity(steps);

        for k in 0..steps {
            // Pivot: remaining column with the largest trailing norm.
            let mut best = k;
            let mut best_norm = -1.0;
            for j in k..p {
                let c = &a.col(j)[k..];
                let nrm = dot(c, c);
                if nrm > best_norm {
                    best_norm = nrm;
                    best = j;
                }
            }
            if best != k {
                for i in 0..n {
                    let tmp = a[(i, k)];
                    a[(i, k)] = a[(i, best)];
                    a[(i, best)] = tmp;
                }
                perm.swap(k, best);
            }

            let x_k = &a.col(k)[k..];
            let norm = sqrt(dot(x_k, x_k));
            let mut v: Vec<f64> = x_k.to_vec();
            if norm == 0.0 {
                reflectors.push(v);
                betas.push(0.0);
                continue;
            }
            let alpha = if x_k[0] >= 0.0 { -norm } else { norm };
            v[0] -= alpha;
            let vtv = dot(&v, &v);
            let beta = if vtv > 0.0 { 2.0 / vtv } else { 0.0 };

            a[(k, k)] = alpha;
            for i in k + 1..n {
                a[(i, k)] = 0.0;
            }
            for j in k + 1..p {
                let col = &mut a.col_mut(j)[k..];
                let s = beta * dot(&v, col);
                if s != 0.0 {
                    col.iter_mut().zip(&v).for_each(|(c, vi)| *c -= s * vi);
                }
            }
            reflectors.push(v);
            betas.push(beta);
        }

        let mut r = Matrix::zeros(p, p);
        for j in 0..p {
            for i in 0..=j.min(steps.saturating_sub(1)) {
                if i < steps {
                    r[(i, j)] = a[(i, j)];
                }
            }
        }

        let r00 = if steps > 0 { r[(0, 0)].abs() } else { 0.0 };
        let tol = n.max(p) as f64 * f64::EPSILON * r00;
        let rank = if r00 == 0.0 { 0 } else { (0..steps).take_while(|&k| r[(k, k)].abs() > tol).count() };

        Ok(Qr { rows: n, cols: p, reflectors, betas, r, perm, rank })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.cols
    }

    /// Column permutation: pivoted position `k` holds original column `perm()[k]`.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Squared ratio of the largest to the smallest retained pivot, an
    /// estimate of the condition number of `XᵀX`.
    pub fn gram_condition(&self) -> f64 {
        if self.cols == 0 {
            return 1.0;
        }
        if !self.is_full_rank() {
            return f64::INFINITY;
        }
        let ratio = self.r[(0, 0)].abs() / self.r[(self.cols - 1, self.cols - 1)].abs();
        ratio * ratio
    }

    /// `|det R| / prod ||x_j||`, in `[0, 1]` by Hadamard's inequality.
    pub fn normalized_volume(&self, col_norms: &[f64]) -> f64 {
        let mut v = 1.0;
        for k in 0..self.cols {
            let s = col_norms[self.perm[k]];
            if s == 0.0 {
                return 0.0;
            }
            v *= self.r[(k, k)].abs() / s;
        }
        v
    }

    /// Apply `Qᵀ` in place.
    fn apply_qt(&self, y: &mut [f64]) {
        for (k, (v, &beta)) in self.reflectors.iter().zip(&self.betas).enumerate() {
            if beta == 0.0 {
                continue;
            }
            let seg = &mut y[k..];
            let s = beta * dot(v, seg);
            seg.iter_mut().zip(v).for_each(|(c, vi)| *c -= s * vi);
        }
    }

    /// Apply `Q` in place.
    fn apply_q(&self, y: &mut [f64]) {
        for (k, (v, &beta)) in self.reflectors.iter().zip(&self.betas).enumerate().rev() {
            if beta == 0.0 {
                continue;
            }
            let seg = &mut y[k..];
            let s = beta * dot(v, seg);
            seg.iter_mut().zip(v).for_each(|(c, vi)| *c -= s * vi);
        }
    }

    fn check_len(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.rows {
            return Err(Error::DimensionMismatch { what: "response length", expected: self.rows, found: y.len() });
        }
        Ok(())
    }

    /// Basic least-squares coefficients in the original column order.
    pub fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        let mut c = y.to_vec();
        self.apply_qt(&mut c);
        let mut z = vec![0.0; self.rank];
        for k in (0..self.rank).rev() {
            let s = (k + 1..self.rank).fold(c[k], |s, j| s - self.r[(k, j)] * z[j]);
            z[k] = s / self.r[(k, k)];
        }
        let mut coef = vec![0.0; self.cols];
        for (k, zk) in z.into_iter().enumerate() {
            coef[self.perm[k]] = zk;
        }
        Ok(coef)
    }

    /// Residual of `y` after projecting onto the retained columns.
    pub fn residualize(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        let mut c = y.to_vec();
        self.apply_qt(&mut c);
        c[..self.rank].iter_mut().for_each(|v| *v = 0.0);
        self.apply_q(&mut c);
        Ok(c)
    }

    /// Projection `X (XᵀX)⁻ Xᵀ y` onto the retained columns.
    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        let mut c = y.to_vec();
        self.apply_qt(&mut c);
        c[self.rank..].iter_mut().for_each(|v| *v = 0.0);
        self.apply_q(&mut c);
        Ok(c)
    }

    /// `(XᵀX)⁻¹` in original column order. Requires full rank.
    pub fn gram_inverse(&self) -> Result<Matrix> {
        if !self.is_full_rank() {
            return Err(Error::RankDeficient { what: "gram matrix", rank: self.rank, cols: self.cols });
        }
        let p = self.cols;
        // Invert the upper-triangular R column by column.
        let mut rinv = Matrix::zeros(p, p);
        for j in 0..p {
            rinv[(j, j)] = 1.0 / self.r[(j, j)];
            for i in (0..j).rev() {
                let mut s = 0.0;
                for k in i + 1..=j {
                    s += self.r[(i, k)] * rinv[(k, j)];
                }
                rinv[(i, j)] = -s / self.r[(i, i)];
            }
        }
        let mut out = Matrix::zeros(p, p);
        for a in 0..p {
            for b in 0..p {
                let mut s = 0.0;
                for k in a.max(b)..p {
                    s += rinv[(a, k)] * rinv[(b, k)];
                }
                out[(self.perm[a], self.perm[b])] = s;
            }
        }
        Ok(out)
    }
}

/// Outcome of an ordinary least-squares fit.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct LeastSquaresSolution {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    /// False when the numerical rank is below the column count.
    pub rank_ok: bool,
    pub rank: usize,
    pub gram_condition: f64,
}

impl LeastSquaresSolution {
    /// Turn the soft rank flag into a hard error.
    pub fn require_full_rank(self, what: &'static str) -> Result<Self> {
        if self.rank_ok {
            Ok(self)
        } else {
            Err(Error::RankDeficient { what, rank: self.rank, cols: self.coefficients.len() })
        }
    }
}

/// Least-squares regression of `y` on the columns of `x`.
pub fn ols_fit(x: &Matrix, y: &[f64]) -> Result<LeastSquaresSolution> {
    if y.len() != x.rows() {
        return Err(Error::DimensionMismatch { what: "ols response", expected: x.rows(), found: y.len() });
    }
    if x.cols() == 0 || x.rows() < x.cols() {
        return Err(Error::InvalidParameter("ols_fit needs N >= p >= 1".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("ols response has non-finite entries".into()));
    }
    let qr = Qr::new(x)?;
    let coefficients = qr.solve(y)?;
    let fitted = x.matvec(&coefficients)?;
    let residuals = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    Ok(LeastSquaresSolution {
        rank_ok: qr.is_full_rank(),
        rank: qr.rank(),
        gram_condition: qr.gram_condition(),
        coefficients,
        residuals,
    })
}

/// Default orthogonality tolerance `1e-8 * (1 + ||y||_inf)`.
pub fn tol_orth(y: &[f64]) -> f64 {
    1e-8 * (1.0 + max_abs(y))
}
