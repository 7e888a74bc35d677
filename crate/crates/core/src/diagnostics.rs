//! Design moments of the instrument and the efficiency formulas that compare
//! the canonical and fixed-effects estimators.
//!
//! Sample plug-ins: `κ̂ = S_{Z,in} / S_Z`, `φ̂_g = (Z̄_g − Z̄)² / S_Z` and
//! `ĉ = N⁻¹ Σ_g n_g² φ̂_g`. The population `φ_g` is a variance of the
//! cluster mean over assignments; `φ̂_g` is a one-draw proxy for it.

use alloc::vec::Vec;

use crate::cluster::{center_by_cluster, cluster_means};
use crate::error::{Error, Result};
use crate::estimators::Dataset;
use crate::num::dot;

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct DesignDiagnostics {
    /// `N⁻¹ Σ (Z_i − Z̄)²`.
    pub s_z: f64,
    /// `N⁻¹ Σ (Z_i − Z̄_{c(i)})²`.
    pub s_z_in: f64,
    pub kappa_hat: f64,
    pub c_hat: f64,
    /// One-realization proxy, see module docs.
    pub phi_hat: Vec<f64>,
    pub s_zd: f64,
    pub s_zd_in: f64,
    /// Clusters in which the instrument varies.
    pub n_effective_clusters: usize,
    pub n_units: usize,
    pub n_clusters: usize,
    /// `κ̂ = 0`: the instrument is constant within every cluster.
    pub fe_degenerate: bool,
}

pub fn design_diagnostics(data: &Dataset) -> Result<DesignDiagnostics> {
    let idx = data.clusters();
    let z = data.z();
    let d = data.d();
    let n = data.n_units() as f64;
    let zbar = z.iter().sum::<f64>() / n;
    let dbar = d.iter().sum::<f64>() / n;
    let zc: Vec<f64> = z.iter().map(|v| v - zbar).collect();
    let s_z = dot(&zc, &zc) / n;
    if s_z == 0.0 {
        return Err(Error::DegenerateInstrument);
    }
    let zw = center_by_cluster(z, idx)?;
    let dw = center_by_cluster(d, idx)?;
    let s_z_in = dot(&zw, &zw) / n;
    let dc: Vec<f64> = d.iter().map(|v| v - dbar).collect();
    let s_zd = dot(&zc, &dc) / n;
    let s_zd_in = dot(&zw, &dw) / n;

    let means = cluster_means(z, idx)?;
    let phi_hat: Vec<f64> = means.iter().map(|m| (m - zbar) * (m - zbar) / s_z).collect();
    let c_hat = phi_hat
        .iter()
        .enumerate()
        .map(|(g, p)| {
            let s = idx.size(g) as f64;
            s * s * p
        })
        .sum::<f64>()
        / n;
    let n_effective_clusters = idx.clusters_with_variation(z)?;

    Ok(DesignDiagnostics {
        s_z,
        s_z_in,
        kappa_hat: (s_z_in / s_z).clamp(0.0, 1.0),
        c_hat,
        phi_hat,
        s_zd,
        s_zd_in,
        n_effective_clusters,
        n_units: data.n_units(),
        n_clusters: data.n_clusters(),
        fe_degenerate: n_effective_clusters == 0,
    })
}

/// Variance-components description of the outcome used by the efficiency formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct EfficiencyModel {
    /// Variance of the cluster effects, `σ²_α ≥ 0`.
    pub sigma_alpha2: f64,
    /// Variance of the unit errors, `σ²_ε > 0`.
    pub sigma_eps2: f64,
    pub kappa: f64,
    pub c: f64,
    /// Complier share `π_c`.
    pub pi_c: f64,
    /// `σ²_Z = e(1 − e)`.
    pub sigma_z2: f64,
}

impl EfficiencyModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.sigma_alpha2 >= 0.0) {
            return bad("sigma_alpha2 must be >= 0");
        }
        if !(self.sigma_eps2 > 0.0) {
            return bad("sigma_eps2 must be > 0");
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return bad("kappa must lie in (0, 1]");
        }
        if !(self.c >= 0.0) {
            return bad("c must be >= 0");
        }
        if !(self.pi_c > 0.0 && self.pi_c <= 1.0) {
            return bad("pi_c must lie in (0, 1]");
        }
        if !(self.sigma_z2 > 0.0 && self.sigma_z2 <= 0.25) {
            return bad("sigma_z2 must lie in (0, 0.25]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct EfficiencyRatio {
    /// `v_2sls / v_2sfe = κ (1 + c σ²_α / σ²_ε)`; above 1 favours `2sfe`.
    pub ratio: f64,
    /// `(σ²_ε + σ²_α c) / (σ²_Z π_c²)`.
    pub v_ls: f64,
    /// `σ²_ε / (κ σ²_Z π_c²)`.
    pub v_2sfe: f64,
}

pub fn efficiency_ratio(model: &EfficiencyModel) -> Result<EfficiencyRatio> {
    model.validate()?;
    let m = model;
    let denom = m.sigma_z2 * m.pi_c * m.pi_c;
    Ok(EfficiencyRatio {
        ratio: m.kappa * (1.0 + m.sigma_alpha2 / m.sigma_eps2 * m.c),
        v_ls: (m.sigma_eps2 + m.sigma_alpha2 * m.c) / denom,
        v_2sfe: m.sigma_eps2 / (m.kappa * denom),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct EfficiencyCutoff {
    /// `2sfe` is more efficient iff `σ²_α / σ²_ε` exceeds this value.
    pub cutoff: f64,
    pub note: Option<&'static str>,
}

/// `((1 − κ) / κ) / c`.
pub fn efficiency_cutoff(kappa: f64, c: f64) -> Result<EfficiencyCutoff> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::InvalidParameter("kappa must lie in (0, 1]".into()));
    }
    if !(c >= 0.0) {
        return Err(Error::InvalidParameter("c must be >= 0".into()));
    }
    if kappa == 1.0 {
        let note = (c == 0.0).then_some("kappa = 1 and c = 0: the two variances coincide for every variance ratio");
        return Ok(EfficiencyCutoff { cutoff: 0.0, note });
    }
    if c == 0.0 {
        return Ok(EfficiencyCutoff { cutoff: f64::INFINITY, note: Some("c = 0: 2sfe is never more efficient") });
    }
    Ok(EfficiencyCutoff { cutoff: (1.0 - kappa) / kappa / c, note: None })
}

/// `(κ, c)` for equal cluster sizes `n̄` and average within-cluster correlation `φ̄`.
pub fn equal_size_design(n_bar: f64, phi_bar: f64) -> (f64, f64) {
    (1.0 - phi_bar, n_bar * phi_bar)
}

/// `(κ, c)` for instruments uncorrelated within clusters (`φ_g = 1 / n_g`).
pub fn uncorrelated_design(sizes: &[usize]) -> (f64, f64) {
    let phi: Vec<f64> = sizes.iter().map(|&n| 1.0 / n as f64).collect();
    kappa_c_from_phi(sizes, &phi)
}

/// `κ = 1 − N⁻¹ Σ n_g φ_g` and `c = N⁻¹ Σ n_g² φ_g`.
pub fn kappa_c_from_phi(sizes: &[usize], phi: &[f64]) -> (f64, f64) {
    let n: f64 = sizes.iter().map(|&s| s as f64).sum();
    let mut k = 0.0;
    let mut c = 0.0;
    for (&s, &p) in sizes.iter().zip(phi) {
        let s = s as f64;
        k += s * p;
        c += s * s * p;
    }
    (1.0 - k / n, c / n)
}

/// Limits of `se²_{2sls-x} / se²_{2sls}` and `se²_{2sls-x} / se²_{2sfe}` when
/// cluster-level covariates explain `var_proj` of the cluster-effect variance.
pub fn covariate_adjustment_ratios(model: &EfficiencyModel, var_proj: f64) -> Result<(f64, f64)> {
    let eff = efficiency_ratio(model)?;
    if !(var_proj >= 0.0 && var_proj <= model.sigma_alpha2) {
        return Err(Error::InvalidParameter("var_proj must lie in [0, sigma_alpha2]".into()));
    }
    let vs_ls = 1.0 - var_proj * model.c / (model.sigma_eps2 + model.sigma_alpha2 * model.c);
    Ok((vs_ls, vs_ls * eff.ratio))
}

/// Per-cluster design and effect parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ClusterParams {
    pub n: usize,
    pub phi: f64,
    /// `σ²_{Z,g} = e_g (1 − e_g)`.
    pub sigma_z2: f64,
    pub pi_c: f64,
    /// Cluster-specific LATE.
    pub tau_c: f64,
}

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct HeteroWeights {
    pub kappa_2sfe: Vec<f64>,
    /// Only defined when every cluster has the same instrument probability.
    pub kappa_2sls: Option<Vec<f64>>,
    pub tau_c: Vec<f64>,
    /// `Σ_g κ_{g,2sfe} τ_{c,g}`.
    pub plim_2sfe: f64,
    pub plim_2sls: Option<f64>,
}

fn normalize(raw: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::AllZeroWeights);
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Weights of the cluster-specific LATEs in the limits of `τ̂_2sfe`
/// (`∝ n_g (1 − φ_g) σ²_{Z,g} π_{c,g}`) and, with `equal_e`, of `τ̂_2sls`
/// (`∝ n_g π_{c,g}`).
pub fn fe_weights(clusters: &[ClusterParams], equal_e: bool) -> Result<HeteroWeights> {
    for p in clusters {
        if !(p.phi >= 0.0 && p.phi <= 1.0) || !(p.sigma_z2 >= 0.0) || !(p.pi_c >= 0.0) || !p.tau_c.is_finite() {
            return Err(Error::InvalidParameter("cluster parameters out of range".into()));
        }
    }
    if equal_e {
        if let Some(first) = clusters.first() {
            let s0 = first.sigma_z2;
            if clusters.iter().any(|p| (p.sigma_z2 - s0).abs() > 1e-12 * s0.max(1e-300)) {
                return Err(Error::InvalidParameter("equal_e requires a common instrument variance".into()));
            }
        }
    }
    let kappa_2sfe = normalize(clusters.iter().map(|p| p.n as f64 * (1.0 - p.phi) * p.sigma_z2 * p.pi_c).collect())?;
    let tau_c: Vec<f64> = clusters.iter().map(|p| p.tau_c).collect();
    let plim_2sfe = dot(&kappa_2sfe, &tau_c);
    let kappa_2sls =
        if equal_e { Some(normalize(clusters.iter().map(|p| p.n as f64 * p.pi_c).collect())?) } else { None };
    let plim_2sls = kappa_2sls.as_ref().map(|k| dot(k, &tau_c));
    Ok(HeteroWeights { kappa_2sfe, kappa_2sls, tau_c, plim_2sfe, plim_2sls })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ClusterIndex;
    use alloc::vec;

    fn data(z: Vec<f64>) -> Dataset {
        let idx = ClusterIndex::from_sizes(&[2, 2]).unwrap();
        Dataset::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 0.0, 1.0], z, idx).unwrap()
    }

    #[test]
    fn equal_cluster_proportions() {
        let dd = design_diagnostics(&data(vec![0.0, 1.0, 0.0, 1.0])).unwrap();
        assert_eq!(dd.kappa_hat, 1.0);
        assert_eq!(dd.phi_hat, [0.0, 0.0]);
        assert_eq!(dd.c_hat, 0.0);
        assert!(!dd.fe_degenerate);
    }

    #[test]
    fn cluster_constant_instrument() {
        let dd = design_diagnostics(&data(vec![0.0, 0.0, 1.0, 1.0])).unwrap();
        assert_eq!(dd.kappa_hat, 0.0);
        assert!(dd.fe_degenerate);
        assert_eq!(dd.n_effective_clusters, 0);
    }

    #[test]
    fn constant_instrument_errors() {
        assert_eq!(design_diagnostics(&data(vec![1.0; 4])).unwrap_err(), Error::DegenerateInstrument);
    }

    fn model(sa: f64, se: f64, kappa: f64, c: f64) -> EfficiencyModel {
        EfficiencyModel { sigma_alpha2: sa, sigma_eps2: se, kappa, c, pi_c: 0.5, sigma_z2: 0.25 }
    }

    #[test]
    fn ratio_special_cases() {
        assert_eq!(efficiency_ratio(&model(0.0, 1.0, 0.8, 3.0)).unwrap().ratio, 0.8);
        assert_eq!(efficiency_ratio(&model(2.0, 1.0, 1.0, 0.0)).unwrap().ratio, 1.0);
        // n̄ = 10, φ̄ = 0.1, σ²_α/σ²_ε = 0.5: (1 − 0.1)(1 + 0.5·10·0.1) = 1.35
        let (k, c) = equal_size_design(10.0, 0.1);
        let r = efficiency_ratio(&model(0.5, 1.0, k, c)).unwrap().ratio;
        assert!((r - 1.35).abs() < 1e-14);
    }

    #[test]
    fn variances_follow_the_closed_form() {
        let m = EfficiencyModel { sigma_alpha2: 0.5, sigma_eps2: 4.0, kappa: 0.9, c: 1.0, pi_c: 0.5, sigma_z2: 0.25 };
        let r = efficiency_ratio(&m).unwrap();
        assert!((r.v_ls - 4.5 / 0.0625).abs() < 1e-12);
        assert!((r.v_2sfe - 4.0 / (0.9 * 0.0625)).abs() < 1e-12);
        assert!((r.v_ls / r.v_2sfe - r.ratio).abs() < 1e-12);
    }

    #[test]
    fn cutoffs() {
        let c = efficiency_cutoff(1.0, 0.0).unwrap();
        assert_eq!(c.cutoff, 0.0);
        assert!(c.note.is_some());
        assert!(efficiency_cutoff(0.5, 0.0).unwrap().cutoff.is_infinite());
        // equal sizes: 1 / (n̄ (1 − φ̄)), n̄ = 10, φ̄ = 0.5
        let (k, cc) = equal_size_design(10.0, 0.5);
        assert!((efficiency_cutoff(k, cc).unwrap().cutoff - 0.2).abs() < 1e-15);
        // uncorrelated within clusters: 1 / (n̄ − 1), n̄ = 21
        let (k, cc) = uncorrelated_design(&[21; 7]);
        assert!((efficiency_cutoff(k, cc).unwrap().cutoff - 0.05).abs() < 1e-15);
    }

    #[test]
    fn covariate_ratios() {
        let m = EfficiencyModel { sigma_alpha2: 1.0, sigma_eps2: 4.0, kappa: 0.9, c: 1.0, pi_c: 0.5, sigma_z2: 0.25 };
        let (r1, r2) = covariate_adjustment_ratios(&m, 0.0).unwrap();
        assert_eq!(r1, 1.0);
        assert_eq!(r2, efficiency_ratio(&m).unwrap().ratio);
        let (_, r2) = covariate_adjustment_ratios(&m, 1.0).unwrap();
        assert!((r2 - 0.9).abs() < 1e-15);
        let (r1, _) = covariate_adjustment_ratios(&m, 0.5).unwrap();
        assert!((r1 - 0.9).abs() < 1e-15);
        assert!(covariate_adjustment_ratios(&m, 1.5).is_err());
    }

    #[test]
    fn identical_clusters_get_uniform_weights() {
        let p = ClusterParams { n: 12, phi: 0.1, sigma_z2: 0.21, pi_c: 0.6, tau_c: 1.5 };
        let w = fe_weights(&[p; 4], true).unwrap();
        for k in w.kappa_2sfe.iter().chain(w.kappa_2sls.as_ref().unwrap()) {
            assert!((k - 0.25).abs() < 1e-15);
        }
        assert!((w.plim_2sfe - 1.5).abs() < 1e-14);
        assert!((w.plim_2sls.unwrap() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn weights_track_instrument_variance() {
        // equal n, π_c and φ = 1/n: weights ∝ σ²_{Z,g}
        let mk = |s| ClusterParams { n: 20, phi: 0.05, sigma_z2: s, pi_c: 0.7, tau_c: 0.0 };
        let w = fe_weights(&[mk(0.25), mk(0.16)], false).unwrap();
        assert!((w.kappa_2sfe[0] - 0.25 / 0.41).abs() < 1e-15);
        assert!((w.kappa_2sfe[1] - 0.16 / 0.41).abs() < 1e-15);
        assert!(w.kappa_2sls.is_none());
        assert!(fe_weights(&[mk(0.25), mk(0.16)], true).is_err());
    }

    #[test]
    fn zero_weights() {
        let p = ClusterParams { n: 5, phi: 1.0, sigma_z2: 0.25, pi_c: 0.5, tau_c: 0.0 };
        assert_eq!(fe_weights(&[p, p], false).unwrap_err(), Error::AllZeroWeights);
    }
}
