//! Joint inference on the canonical and fixed-effects estimators.
//!
//! With normalized cluster scores
//! `a_g = Σ_{i∈g}(Z_i − Z̄) r_{i,2sls} / (N S_ZD)` and
//! `b_g = Σ_{i∈g}(Z_i − Z̄_g) r_{i,2sfe} / (N S_{ZD,in})`,
//! the joint covariance is `[[Σa², Σab], [Σab, Σb²]]` and
//! `se_diff² = Σ_g (a_g − b_g)²`, which equals `Σa² + Σb² − 2Σab`.

use alloc::vec::Vec;

use rand::Rng;

use crate::cluster::ClusterIndex;
use crate::error::{Error, Result};
use crate::estimators::{df_multiplier, fit, Dataset, FitOptions, FitResult, Strategy};
use crate::num::{mean, sqrt, two_sided_p, Z_975};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum HetMethod {
    Analytic,
    Bootstrap,
}

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct JointHetResult {
    pub tau_ls: f64,
    pub tau_fe: f64,
    /// Covariance of `(τ̂_2sls, τ̂_2sfe)`.
    pub cov2: [[f64; 2]; 2],
    /// Standard error of the difference from the single-sum form.
    pub se_diff: f64,
    /// The same quantity from `cov2`: `sqrt(c00 + c11 − 2 c01)`.
    pub se_diff_from_cov: f64,
    pub t_stat: f64,
    pub p_value: f64,
    /// `|t| > 1.96`.
    pub reject_5pct: bool,
    pub method: HetMethod,
    pub bootstrap_reps: Option<usize>,
    pub n_clusters: usize,
}

impl JointHetResult {
    pub fn correlation(&self) -> f64 {
        self.cov2[0][1] / sqrt(self.cov2[0][0] * self.cov2[1][1])
    }
}

fn check_pair(ls: &FitResult, fe: &FitResult) -> Result<()> {
    if ls.strategy != Strategy::Tsls || fe.strategy != Strategy::Tsfe {
        return Err(Error::InvalidParameter("joint covariance needs a 2sls fit and a 2sfe fit".into()));
    }
    if ls.per_cluster_scores.len() != fe.per_cluster_scores.len() {
        return Err(Error::DimensionMismatch {
            what: "cluster scores",
            expected: ls.per_cluster_scores.len(),
            found: fe.per_cluster_scores.len(),
        });
    }
    Ok(())
}

/// Analytic joint covariance and t-test from existing `2sls` and `2sfe` fits.
pub fn joint_cov_from_fits(ls: &FitResult, fe: &FitResult) -> Result<JointHetResult> {
    check_pair(ls, fe)?;
    let a = ls.normalized_scores();
    let b = fe.normalized_scores();
    let mult = df_multiplier(ls.n_clusters, ls.df_correction);
    let (mut saa, mut sbb, mut sab, mut sdd) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        saa += x * x;
        sbb += y * y;
        sab += x * y;
        sdd += (x - y) * (x - y);
    }
    let cov2 = [[mult * saa, mult * sab], [mult * sab, mult * sbb]];
    let se_diff = sqrt(mult * sdd);
    let se_diff_from_cov = sqrt((cov2[0][0] + cov2[1][1] - 2.0 * cov2[0][1]).max(0.0));
    let se_sum = sqrt(cov2[0][0]) + sqrt(cov2[1][1]);
    if !(se_diff > 1e-12 * se_sum) {
        return Err(Error::NonPositiveSeDiff);
    }
    let t_stat = (ls.tau_hat - fe.tau_hat) / se_diff;
    Ok(JointHetResult {
        tau_ls: ls.tau_hat,
        tau_fe: fe.tau_hat,
        cov2,
        se_diff,
        se_diff_from_cov,
        t_stat,
        p_value: two_sided_p(t_stat),
        reject_5pct: t_stat.abs() > Z_975,
        method: HetMethod::Analytic,
        bootstrap_reps: None,
        n_clusters: ls.n_clusters,
    })
}

/// Fit `2sls` and `2sfe` and return their joint covariance.
pub fn joint_cov(data: &Dataset, opts: &FitOptions) -> Result<JointHetResult> {
    let ls = fit(data, Strategy::Tsls, opts)?;
    let fe = fit(data, Strategy::Tsfe, opts)?;
    joint_cov_from_fits(&ls, &fe)
}

/// Cluster-heterogeneity test `t = (τ̂_2sls − τ̂_2sfe) / se_diff` against N(0, 1).
pub fn hettest(data: &Dataset, opts: &FitOptions) -> Result<JointHetResult> {
    joint_cov(data, opts)
}

/// Build the dataset made of the drawn clusters, in draw order. Repeated
/// clusters become distinct groups.
pub fn resample_clusters(data: &Dataset, draws: &[usize]) -> Result<Dataset> {
    let idx = data.clusters();
    if let Some(&bad) = draws.iter().find(|&&g| g >= idx.n_clusters()) {
        return Err(Error::InvalidParameter(alloc::format!("cluster {bad} out of range")));
    }
    let rows: Vec<usize> = draws.iter().flat_map(|&g| idx.members(g).iter().copied()).collect();
    let sizes: Vec<usize> = draws.iter().map(|&g| idx.size(g)).collect();
    let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let out = Dataset::new(pick(data.y()), pick(data.d()), pick(data.z()), ClusterIndex::from_sizes(&sizes)?)?;
    match data.x() {
        Some(x) => out.with_covariates(x.select_rows(&rows), data.x_names().to_vec()),
        None => Ok(out),
    }
}

/// Cluster draws of replicate `b`: `G` ids uniformly with replacement.
pub fn bootstrap_draws(n_clusters: usize, seed: u64, b: u64) -> Vec<usize> {
    let mut rng = substream(seed, b);
    (0..n_clusters).map(|_| rng.random_range(0..n_clusters)).collect()
}

/// `(τ̂_2sls, τ̂_2sfe)` on replicate `b`.
pub fn bootstrap_replicate(data: &Dataset, seed: u64, b: u64, opts: &FitOptions) -> Result<(f64, f64)> {
    let draws = bootstrap_draws(data.n_clusters(), seed, b);
    let sample = resample_clusters(data, &draws)?;
    let ls = fit(&sample, Strategy::Tsls, opts)?;
    let fe = fit(&sample, Strategy::Tsfe, opts)?;
    Ok((ls.tau_hat, fe.tau_hat))
}

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct BootstrapResult {
    pub reps: usize,
    pub seed: u64,
    pub n_failed: usize,
    pub tau_ls: f64,
    pub tau_fe: f64,
    /// Successful replicates, in replicate order.
    pub tau_ls_reps: Vec<f64>,
    pub tau_fe_reps: Vec<f64>,
    pub diff_reps: Vec<f64>,
    pub sd_tau_ls: f64,
    pub sd_tau_fe: f64,
    /// Bootstrap standard deviation of `τ̂_2sls − τ̂_2sfe`.
    pub se_diff: f64,
    pub joint: JointHetResult,
}

fn cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0)
}

/// Aggregate replicate outcomes (in replicate order) into a bootstrap summary.
pub fn summarize_bootstrap(
    data: &Dataset,
    replicates: &[Result<(f64, f64)>],
    seed: u64,
    opts: &FitOptions,
) -> Result<BootstrapResult> {
    let ls = fit(data, Strategy::Tsls, opts)?;
    let fe = fit(data, Strategy::Tsfe, opts)?;
    let total = replicates.len();
    let ok: Vec<(f64, f64)> = replicates.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let n_failed = total - ok.len();
    if n_failed * 5 > total || ok.len() < 2 {
        return Err(Error::TooFewValidReplicates { failed: n_failed, total });
    }
    let tau_ls_reps: Vec<f64> = ok.iter().map(|r| r.0).collect();
    let tau_fe_reps: Vec<f64> = ok.iter().map(|r| r.1).collect();
    let diff_reps: Vec<f64> = ok.iter().map(|r| r.0 - r.1).collect();
    let c00 = cov(&tau_ls_reps, &tau_ls_reps);
    let c11 = cov(&tau_fe_reps, &tau_fe_reps);
    let c01 = cov(&tau_ls_reps, &tau_fe_reps);
    let se_diff = sqrt(cov(&diff_reps, &diff_reps));
    if !(se_diff > 0.0) {
        return Err(Error::NonPositiveSeDiff);
    }
    let t_stat = (ls.tau_hat - fe.tau_hat) / se_diff;
    let joint = JointHetResult {
        tau_ls: ls.tau_hat,
        tau_fe: fe.tau_hat,
        cov2: [[c00, c01], [c01, c11]],
        se_diff,
        se_diff_from_cov: sqrt((c00 + c11 - 2.0 * c01).max(0.0)),
        t_stat,
        p_value: two_sided_p(t_stat),
        reject_5pct: t_stat.abs() > Z_975,
        method: HetMethod::Bootstrap,
        bootstrap_reps: Some(total),
        n_clusters: data.n_clusters(),
    };
    Ok(BootstrapResult {
        reps: total,
        seed,
        n_failed,
        tau_ls: ls.tau_hat,
        tau_fe: fe.tau_hat,
        sd_tau_ls: sqrt(c00),
        sd_tau_fe: sqrt(c11),
        se_diff,
        tau_ls_reps,
        tau_fe_reps,
        diff_reps,
        joint,
    })
}

/// Minimum number of bootstrap replicates accepted by [`cluster_bootstrap`].
pub const MIN_BOOTSTRAP_REPS: usize = 100;

pub fn check_bootstrap_args(data: &Dataset, reps: usize) -> Result<()> {
    if reps < MIN_BOOTSTRAP_REPS {
        return Err(Error::InvalidParameter(alloc::format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_REPS} replicates, got {reps}"
        )));
    }
    if data.n_clusters() < 2 {
        return Err(Error::TooFewClusters { found: data.n_clusters() });
    }
    Ok(())
}

/// Pairs-cluster bootstrap of `(τ̂_2sls, τ̂_2sfe, τ̂_2sls − τ̂_2sfe)`, computed serially.
pub fn cluster_bootstrap(data: &Dataset, reps: usize, seed: u64, opts: &FitOptions) -> Result<BootstrapResult> {
    check_bootstrap_args(data, reps)?;
    let replicates: Vec<Result<(f64, f64)>> =
        (0..reps as u64).map(|b| bootstrap_replicate(data, seed, b, opts)).collect();
    summarize_bootstrap(data, &replicates, seed, opts)
}
