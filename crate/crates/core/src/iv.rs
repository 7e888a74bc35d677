//! Just-identified two-stage least squares with cluster-robust covariance.
//!
//! The projection `P_W` and the block-diagonal residual matrix are never
//! formed. With `V̂ = P_W V` computed through a QR of `W`,
//!
//! ```text
//! cov(β̂) = (V̂ᵀV̂)⁻¹ (Σ_g s_g s_gᵀ) (V̂ᵀV̂)⁻¹,   s_g = Σ_{i∈g} v̂_i r_i
//! ```
//!
//! which equals the textbook `(VᵀP_W V)⁻¹ VᵀP_W Ω̂ P_W V (VᵀP_W V)⁻¹`.

use alloc::vec::Vec;

use crate::cluster::ClusterIndex;
use crate::error::{Error, Result};
use crate::lstsq::Qr;
use crate::matrix::Matrix;
use crate::num::{dot, sqrt};

/// Relative tolerance below which instruments are treated as non-identifying.
pub const TOL_IDENT: f64 = 1e-10;

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct TslsFit {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub crse_cov: Matrix,
    pub n_clusters: usize,
    /// `VᵀP_W V`.
    pub instrumented_gram: Matrix,
}

impl TslsFit {
    /// Cluster-robust standard errors, the square roots of the covariance diagonal.
    pub fn crse(&self) -> Vec<f64> {
        self.crse_cov.diag().into_iter().map(|v| sqrt(v.max(0.0))).collect()
    }
}

/// Coefficient, standard error and scores of a scalar IV fit after
/// partialling out a control block.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ScalarIvFit {
    pub tau_hat: f64,
    pub se: f64,
    pub residuals: Vec<f64>,
    /// `N⁻¹ Σ Z*_{i|W} D*_{i|W}`.
    pub s_zd: f64,
    /// `N⁻¹ Σ Z*_{i|W} Y_{i|W}`.
    pub s_zy: f64,
    /// `Σ_{i∈g} Z*_{i|W} r_i`, one entry per cluster.
    pub per_cluster_scores: Vec<f64>,
    /// The instrument with the controls partialled out.
    pub z_partialled: Vec<f64>,
    /// Coefficients of the control columns in the full regression.
    pub control_coefficients: Vec<f64>,
}

fn check_rows(what: &'static str, n: usize, found: usize) -> Result<()> {
    if n != found {
        return Err(Error::DimensionMismatch { what, expected: n, found });
    }
    Ok(())
}

/// `P_W V`, column by column, plus the identification check on it.
fn instrumented(v: &Matrix, w: &Matrix) -> Result<Matrix> {
    let m = v.cols();
    if m == 0 {
        return Err(Error::InvalidParameter("2SLS needs at least one regressor".into()));
    }
    if w.cols() != m {
        return Err(Error::DimensionMismatch { what: "instrument columns", expected: m, found: w.cols() });
    }
    check_rows("instrument rows", v.rows(), w.rows())?;

    let v_qr = Qr::new(v)?;
    if !v_qr.is_full_rank() {
        return Err(Error::RankDeficient { what: "regressors", rank: v_qr.rank(), cols: m });
    }
    let w_qr = Qr::new(w)?;
    if !w_qr.is_full_rank() {
        return Err(Error::WeakIdentification { what: "instruments", ratio: 0.0 });
    }
    let mut vhat = Matrix::zeros(v.rows(), m);
    for j in 0..m {
        let p = w_qr.project(v.col(j))?;
        vhat.col_mut(j).copy_from_slice(&p);
    }
    Ok(vhat)
}

/// Factor `V̂` and reject it when `|det(Q_Wᵀ V)| / Π ||V_j||` is below [`TOL_IDENT`].
fn identified_qr(v: &Matrix, vhat: &Matrix) -> Result<Qr> {
    let qr = Qr::new(vhat)?;
    let norms: Vec<f64> = v.columns().map(|c| sqrt(dot(c, c))).collect();
    let ratio = if qr.is_full_rank() { qr.normalized_volume(&norms) } else { 0.0 };
    if !(ratio >= TOL_IDENT) {
        return Err(Error::WeakIdentification { what: "instrumented regressors", ratio });
    }
    Ok(qr)
}

/// Sandwich from the instrumented regressors and residuals.
fn sandwich(vhat: &Matrix, bread: &Matrix, residuals: &[f64], idx: &ClusterIndex) -> Result<Matrix> {
    let m = vhat.cols();
    let g = idx.n_clusters();
    // scores[g * m + j] = Σ_{i∈g} v̂_ij r_i
    let mut scores = alloc::vec![0.0; g * m];
    for j in 0..m {
        let s = idx.cross_sums(vhat.col(j), residuals)?;
        for (k, val) in s.into_iter().enumerate() {
            scores[k * m + j] = val;
        }
    }
    let mut meat = Matrix::zeros(m, m);
    for k in 0..g {
        let s = &scores[k * m..(k + 1) * m];
        for a in 0..m {
            for b in 0..m {
                meat[(a, b)] += s[a] * s[b];
            }
        }
    }
    let cov = bread.matmul(&meat)?.matmul(bread)?;
    Ok(symmetrize(cov))
}

fn symmetrize(mut a: Matrix) -> Matrix {
    for i in 0..a.rows() {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// `2sls(u ~ V | W)` with its cluster-robust covariance, no small-sample correction.
pub fn tsls_fit(u: &[f64], v: &Matrix, w: &Matrix, idx: &ClusterIndex) -> Result<TslsFit> {
    let n = idx.n_units();
    check_rows("response", n, u.len())?;
    check_rows("regressor rows", n, v.rows())?;
    let vhat = instrumented(v, w)?;
    let qr = identified_qr(v, &vhat)?;
    let coefficients = qr.solve(u)?;
    let fitted = v.matvec(&coefficients)?;
    let residuals: Vec<f64> = u.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let bread = qr.gram_inverse()?;
    let crse_cov = sandwich(&vhat, &bread, &residuals, idx)?;
    let instrumented_gram = vhat.transpose().matmul(&vhat)?;
    Ok(TslsFit { coefficients, residuals, crse_cov, n_clusters: idx.n_clusters(), instrumented_gram })
}

/// The cluster-robust sandwich for given residuals.
pub fn crse_from_parts(v: &Matrix, w: &Matrix, residuals: &[f64], idx: &ClusterIndex) -> Result<Matrix> {
    let n = idx.n_units();
    check_rows("residuals", n, residuals.len())?;
    check_rows("regressor rows", n, v.rows())?;
    let vhat = instrumented(v, w)?;
    let qr = identified_qr(v, &vhat)?;
    let bread = qr.gram_inverse()?;
    sandwich(&vhat, &bread, residuals, idx)
}

/// Scalar IV on vectors that already have the controls partialled out.
pub(crate) fn scalar_iv(u: &[f64], d: &[f64], z: Vec<f64>, idx: &ClusterIndex) -> Result<ScalarIvFit> {
    let n = idx.n_units();
    check_rows("outcome", n, u.len())?;
    check_rows("treatment", n, d.len())?;
    check_rows("instrument", n, z.len())?;
    let nf = n as f64;
    let s_zd = dot(&z, d) / nf;
    let s_zy = dot(&z, u) / nf;
    let scale = sqrt(dot(&z, &z) / nf * (dot(d, d) / nf));
    let ratio = if scale > 0.0 { s_zd.abs() / scale } else { 0.0 };
    if !(ratio >= TOL_IDENT) {
        return Err(Error::WeakIdentification { what: "instrument-treatment cross-moment", ratio });
    }
    let tau = s_zy / s_zd;
    let residuals: Vec<f64> = u.iter().zip(d).map(|(y, x)| y - x * tau).collect();
    let scores = idx.cross_sums(&z, &residuals)?;
    let se = sqrt(scores.iter().map(|s| s * s).sum::<f64>()) / (nf * s_zd.abs());
    Ok(ScalarIvFit {
        tau_hat: tau,
        se,
        residuals,
        s_zd,
        s_zy,
        per_cluster_scores: scores,
        z_partialled: z,
        control_coefficients: Vec::new(),
    })
}

/// Partial the controls out of `(u, d*, z*)` and apply the scalar IV formulas
/// `τ̂ = S_{ZY|W} / S_{ZD|W}` and `se² = N⁻² S_{ZD|W}⁻² Σ_g (Σ_{i∈g} Z*_{i|W} r_i)²`.
///
/// `controls` may have zero columns.
pub fn fwl_scalar_fit(
    u: &[f64],
    d_star: &[f64],
    z_star: &[f64],
    controls: &Matrix,
    idx: &ClusterIndex,
) -> Result<ScalarIvFit> {
    let n = idx.n_units();
    check_rows("control rows", n, controls.rows())?;
    check_rows("outcome", n, u.len())?;
    check_rows("treatment", n, d_star.len())?;
    check_rows("instrument", n, z_star.len())?;
    let qr = if controls.cols() > 0 {
        let qr = Qr::new(controls)?;
        if !qr.is_full_rank() {
            return Err(Error::RankDeficient { what: "controls", rank: qr.rank(), cols: controls.cols() });
        }
        Some(qr)
    } else {
        None
    };
    let (ut, dt, zt) = match &qr {
        Some(qr) => (qr.residualize(u)?, qr.residualize(d_star)?, qr.residualize(z_star)?),
        None => (u.to_vec(), d_star.to_vec(), z_star.to_vec()),
    };
    let mut fit = scalar_iv(&ut, &dt, zt, idx)?;
    if let Some(qr) = &qr {
        let net: Vec<f64> = u.iter().zip(d_star).map(|(y, d)| y - d * fit.tau_hat).collect();
        fit.control_coefficients = qr.solve(&net)?;
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (ClusterIndex, [f64; 4], [f64; 4], [f64; 4]) {
        // (Z, D, Y) = (0,0,1), (1,1,3) | (0,0,2), (1,1,5)
        let idx = ClusterIndex::from_sizes(&[2, 2]).unwrap();
        (idx, [0.0, 1.0, 0.0, 1.0], [0.0, 1.0, 0.0, 1.0], [1.0, 3.0, 2.0, 5.0])
    }

    #[test]
    fn toy_example_coefficient() {
        let (idx, z, d, y) = toy();
        let v = Matrix::from_columns(4, &[&[1.0; 4], &d]).unwrap();
        let w = Matrix::from_columns(4, &[&[1.0; 4], &z]).unwrap();
        let fit = tsls_fit(&y, &v, &w, &idx).unwrap();
        assert!((fit.coefficients[1] - 2.5).abs() < 1e-13);
        // S_ZY / S_ZD = 0.625 / 0.25
        let ones = Matrix::from_columns(4, &[&[1.0; 4]]).unwrap();
        let s = fwl_scalar_fit(&y, &d, &z, &ones, &idx).unwrap();
        assert!((s.s_zy - 0.625).abs() < 1e-14);
        assert!((s.s_zd - 0.25).abs() < 1e-14);
        assert!((s.tau_hat - 2.5).abs() < 1e-13);
    }

    #[test]
    fn constant_instrument_is_weak() {
        let (idx, _, d, y) = toy();
        let v = Matrix::from_columns(4, &[&[1.0; 4], &d]).unwrap();
        let w = Matrix::from_columns(4, &[&[1.0; 4], &[1.0; 4]]).unwrap();
        assert!(matches!(tsls_fit(&y, &v, &w, &idx), Err(Error::WeakIdentification { .. })));
        let ones = Matrix::from_columns(4, &[&[1.0; 4]]).unwrap();
        assert!(matches!(fwl_scalar_fit(&y, &d, &[1.0; 4], &ones, &idx), Err(Error::WeakIdentification { .. })));
    }

    #[test]
    fn zero_residuals_give_zero_covariance() {
        let (idx, z, d, _) = toy();
        let v = Matrix::from_columns(4, &[&[1.0; 4], &d]).unwrap();
        let w = Matrix::from_columns(4, &[&[1.0; 4], &z]).unwrap();
        let cov = crse_from_parts(&v, &w, &[0.0; 4], &idx).unwrap();
        assert!(cov.as_col_major().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn collinear_controls_rejected() {
        let (idx, z, d, y) = toy();
        let c = Matrix::from_columns(4, &[&[1.0; 4], &[2.0; 4]]).unwrap();
        assert!(matches!(fwl_scalar_fit(&y, &d, &z, &c, &idx), Err(Error::RankDeficient { .. })));
    }
}
