//! Seeded data-generating processes and Monte Carlo summaries.
//!
//! Two designs are provided:
//!
//! * a *homogeneous* design with random cluster sizes, a cluster-level and a
//!   unit-level covariate, always-takers, compliers and never-takers, used to
//!   compare the four two-stage estimators ([`run_table2`]);
//! * a *heterogeneous* design with two types of clusters whose effects and
//!   instrument probabilities differ, used to study the heterogeneity t-test
//!   ([`run_hettest_mc`]) and the weighted-LATE limits ([`oracle_plim_check`]).
//!
//! Replicate `b` of a run always draws from [`substream`]`(seed, b)`; the
//! `*_replicate` functions are pure, so a caller can evaluate them in any
//! order (or in parallel) and feed the ordered results to the `summarize_*`
//! functions. The `run_*` functions here do exactly that, serially.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::cluster::ClusterIndex;
use crate::diagnostics::{design_diagnostics, fe_weights, ClusterParams};
use crate::error::{Error, Result};
use crate::estimators::{fit, Dataset, FitOptions, Strategy};
use crate::hetero::hettest;
use crate::matrix::Matrix;
use crate::num::{logistic, mean, sample_var, sqrt, Z_975};
use crate::rng::{substream, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ComplianceType {
    AlwaysTaker,
    Complier,
    NeverTaker,
}

fn invalid<T>(msg: &str) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}

fn draw_type(rng: &mut SimRng, pi_a: f64, pi_c: f64) -> ComplianceType {
    let u: f64 = rng.random();
    if u < pi_a {
        ComplianceType::AlwaysTaker
    } else if u < pi_a + pi_c {
        ComplianceType::Complier
    } else {
        ComplianceType::NeverTaker
    }
}

fn bernoulli(rng: &mut SimRng, p: f64) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

fn std_normal(rng: &mut SimRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Marginal variance of a location mixture of `N(μ_k, cond_var)` components.
pub fn mixture_variance(probs: &[f64], means: &[f64], cond_var: f64) -> f64 {
    let m: f64 = probs.iter().zip(means).map(|(p, mu)| p * mu).sum();
    let second: f64 = probs.iter().zip(means).map(|(p, mu)| p * (mu - m) * (mu - m)).sum();
    cond_var + second
}

// ---------------------------------------------------------------------------
// Homogeneous design

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct HomogeneousSimConfig {
    pub n_clusters: usize,
    /// Mean of the Poisson cluster-size distribution (zero draws are rejected).
    pub cluster_size_mean: f64,
    /// Bounds of the uniform cluster-level instrument probability.
    pub e_range: (f64, f64),
    /// `(π_a, π_c, π_n)`.
    pub compliance_probs: (f64, f64, f64),
    pub sigma_x: f64,
    pub sigma_eta: f64,
    /// Error means of always-takers, compliers and never-takers.
    pub type_means: (f64, f64, f64),
    pub tau: f64,
}

impl Default for HomogeneousSimConfig {
    fn default() -> Self {
        HomogeneousSimConfig {
            n_clusters: 200,
            cluster_size_mean: 10.0,
            e_range: (0.4, 0.6),
            compliance_probs: (0.3, 0.5, 0.2),
            sigma_x: 1.0,
            sigma_eta: 1.0,
            type_means: (2.0, 0.0, -3.0),
            tau: 1.0,
        }
    }
}

impl HomogeneousSimConfig {
    pub fn with_sigmas(sigma_x: f64, sigma_eta: f64) -> Self {
        HomogeneousSimConfig { sigma_x, sigma_eta, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, c, n) = self.compliance_probs;
        if [a, c, n].iter().any(|p| !(*p >= 0.0)) || libm::fabs(a + c + n - 1.0) > 1e-12 {
            return invalid("compliance probabilities must be non-negative and sum to 1");
        }
        if !(self.sigma_x >= 0.0 && self.sigma_eta >= 0.0) {
            return invalid("sigma_x and sigma_eta must be >= 0");
        }
        if self.n_clusters < 2 {
            return invalid("need at least 2 clusters");
        }
        if !(self.cluster_size_mean > 0.0 && self.cluster_size_mean.is_finite()) {
            return invalid("cluster_size_mean must be positive");
        }
        let (lo, hi) = self.e_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return invalid("e_range must satisfy 0 < lo <= hi < 1");
        }
        if !self.tau.is_finite() {
            return invalid("tau must be finite");
        }
        Ok(())
    }

    fn probs(&self) -> [f64; 3] {
        let (a, c, n) = self.compliance_probs;
        [a, c, n]
    }

    fn means(&self) -> [f64; 3] {
        let (a, c, n) = self.type_means;
        [a, c, n]
    }
}

/// Latent quantities behind a homogeneous draw.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct HomogeneousTruth {
    pub types: Vec<ComplianceType>,
    pub cluster_sizes: Vec<usize>,
    pub e: Vec<f64>,
    pub x_star: Vec<f64>,
    pub alpha: Vec<f64>,
    pub tau: f64,
    /// `σ²_X + σ²_η`.
    pub sigma_alpha2: f64,
    /// Variance of the error given the compliance type (1).
    pub sigma_eps2_conditional: f64,
    /// Marginal variance of the error, type mixture included.
    pub sigma_eps2_marginal: f64,
}

fn truncated_poisson(rng: &mut SimRng, dist: &Poisson<f64>) -> usize {
    loop {
        let k: f64 = dist.sample(rng);
        if k >= 1.0 {
            return k as usize;
        }
    }
}

fn gen_homogeneous_with(cfg: &HomogeneousSimConfig, rng: &mut SimRng) -> Result<(Dataset, HomogeneousTruth)> {
    cfg.validate()?;
    let g = cfg.n_clusters;
    let poisson =
        Poisson::new(cfg.cluster_size_mean).map_err(|_| Error::InvalidParameter("invalid Poisson mean".into()))?;
    let (lo, hi) = cfg.e_range;

    let mut sizes = Vec::with_capacity(g);
    let mut e = Vec::with_capacity(g);
    let mut x_star = Vec::with_capacity(g);
    let mut alpha = Vec::with_capacity(g);
    for _ in 0..g {
        sizes.push(truncated_poisson(rng, &poisson));
        e.push(if hi > lo { rng.random_range(lo..hi) } else { lo });
        let xs = cfg.sigma_x * std_normal(rng);
        x_star.push(xs);
        alpha.push(xs + cfg.sigma_eta * std_normal(rng));
    }

    let n: usize = sizes.iter().sum();
    let (pi_a, pi_c, _) = cfg.compliance_probs;
    let (mu_a, mu_c, mu_n) = cfg.type_means;
    let mut types = Vec::with_capacity(n);
    let (mut y, mut d, mut z) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut xs_col, mut xp_col) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (cl, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            let u = draw_type(rng, pi_a, pi_c);
            let zi = bernoulli(rng, e[cl]);
            let (di, mu) = match u {
                ComplianceType::AlwaysTaker => (1.0, mu_a),
                ComplianceType::Complier => (zi, mu_c),
                ComplianceType::NeverTaker => (0.0, mu_n),
            };
            let x_prime = std_normal(rng);
            let eps = mu + std_normal(rng);
            y.push(di * cfg.tau + x_star[cl] + x_prime + alpha[cl] + eps);
            d.push(di);
            z.push(zi);
            types.push(u);
            xs_col.push(x_star[cl]);
            xp_col.push(x_prime);
        }
    }

    let idx = ClusterIndex::from_sizes(&sizes)?;
    let x = Matrix::from_columns(n, &[&xs_col, &xp_col])?;
    let data = Dataset::new(y, d, z, idx)?.with_covariates(x, vec![String::from("x_star"), String::from("x_prime")])?;
    let truth = HomogeneousTruth {
        types,
        cluster_sizes: sizes,
        e,
        x_star,
        alpha,
        tau: cfg.tau,
        sigma_alpha2: cfg.sigma_x * cfg.sigma_x + cfg.sigma_eta * cfg.sigma_eta,
        sigma_eps2_conditional: 1.0,
        sigma_eps2_marginal: mixture_variance(&cfg.probs(), &cfg.means(), 1.0),
    };
    Ok((data, truth))
}

/// One draw of the homogeneous design. Covariates are `x_star` (cluster
/// level, column 0) and `x_prime` (unit level, column 1).
pub fn gen_homogeneous(cfg: &HomogeneousSimConfig, seed: u64) -> Result<(Dataset, HomogeneousTruth)> {
    gen_homogeneous_replicate(cfg, seed, 0)
}

/// Replicate `b` of a homogeneous run.
pub fn gen_homogeneous_replicate(cfg: &HomogeneousSimConfig, seed: u64, b: u64) -> Result<(Dataset, HomogeneousTruth)> {
    gen_homogeneous_with(cfg, &mut substream(seed, b))
}

/// The four instrumented strategies compared on the homogeneous design.
pub const TABLE2_STRATEGIES: [Strategy; 4] = [Strategy::Tsls, Strategy::Tsfe, Strategy::TslsX, Strategy::TsfeX];

/// Estimate and 95% interval of one strategy in one replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Estimate {
    pub tau_hat: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Fits the four strategies of [`TABLE2_STRATEGIES`] on replicate `b`.
/// `2sls-x` adjusts for both covariates, `2sfe-x` for `x_prime` only.
pub fn table2_replicate(cfg: &HomogeneousSimConfig, seed: u64, b: u64) -> Result<[Estimate; 4]> {
    let (data, _) = gen_homogeneous_replicate(cfg, seed, b)?;
    let plain = FitOptions::default();
    let fe_x = FitOptions { fe_covariates: Some(vec![1]), ..FitOptions::default() };
    let mut out = [Estimate { tau_hat: 0.0, se: 0.0, ci_low: 0.0, ci_high: 0.0 }; 4];
    for (slot, s) in out.iter_mut().zip(TABLE2_STRATEGIES) {
        let opts = if s == Strategy::TsfeX { &fe_x } else { &plain };
        let f = fit(&data, s, opts)?;
        *slot = Estimate { tau_hat: f.tau_hat, se: f.se, ci_low: f.ci_low, ci_high: f.ci_high };
    }
    Ok(out)
}

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct StrategyMetrics {
    pub strategy: Strategy,
    pub bias: f64,
    pub mse: f64,
    pub mse_mcse: f64,
    pub coverage: f64,
    /// `sqrt(p (1 − p) / R)`.
    pub coverage_mcse: f64,
    pub mean_ci_length: f64,
    pub ci_length_mcse: f64,
}

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Table2Summary {
    pub config: HomogeneousSimConfig,
    pub n_reps: usize,
    pub n_failed_reps: usize,
    pub seed: u64,
    pub strategies: Vec<StrategyMetrics>,
}

fn mcse(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    sqrt(sample_var(v) / v.len() as f64)
}

fn check_failures(failed: usize, total: usize) -> Result<()> {
    if total == 0 || failed * 5 > total {
        return Err(Error::TooFewValidReplicates { failed, total });
    }
    Ok(())
}

/// Aggregate replicate outcomes (in replicate order). A replicate in which any
/// strategy failed is dropped for all strategies; more than 20% failures is an error.
pub fn summarize_table2(
    cfg: &HomogeneousSimConfig,
    seed: u64,
    reps: &[Result<[Estimate; 4]>],
) -> Result<Table2Summary> {
    let ok: Vec<&[Estimate; 4]> = reps.iter().filter_map(|r| r.as_ref().ok()).collect();
    let n_failed = reps.len() - ok.len();
    check_failures(n_failed, reps.len())?;
    let r = ok.len() as f64;
    let strategies = TABLE2_STRATEGIES
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let err: Vec<f64> = ok.iter().map(|e| e[k].tau_hat - cfg.tau).collect();
            let sq: Vec<f64> = err.iter().map(|e| e * e).collect();
            let len: Vec<f64> = ok.iter().map(|e| e[k].ci_high - e[k].ci_low).collect();
            let covered = ok.iter().filter(|e| e[k].ci_low <= cfg.tau && cfg.tau <= e[k].ci_high).count();
            let coverage = covered as f64 / r;
            StrategyMetrics {
                strategy: s,
                bias: mean(&err),
                mse: mean(&sq),
                mse_mcse: mcse(&sq),
                coverage,
                coverage_mcse: sqrt(coverage * (1.0 - coverage) / r),
                mean_ci_length: mean(&len),
                ci_length_mcse: mcse(&len),
            }
        })
        .collect();
    Ok(Table2Summary { config: cfg.clone(), n_reps: reps.len(), n_failed_reps: n_failed, seed, strategies })
}

/// Serial Monte Carlo over the homogeneous design.
pub fn run_table2(cfg: &HomogeneousSimConfig, n_reps: usize, seed: u64) -> Result<Table2Summary> {
    cfg.validate()?;
    let reps: Vec<_> = (0..n_reps as u64).map(|b| table2_replicate(cfg, seed, b)).collect();
    summarize_table2(cfg, seed, &reps)
}

// ---------------------------------------------------------------------------
// Heterogeneous design

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct HeteroSimConfig {
    pub n_clusters: usize,
    pub cluster_size: usize,
    /// Cluster effect of the second type of clusters.
    pub delta: f64,
    /// Complier share; the rest are never-takers.
    pub pi_c: f64,
    /// Treatment effect common to all units.
    pub tau: f64,
    /// Extra treatment effect for units in second-type clusters, so that the
    /// cluster LATEs are `τ` and `τ + θ`.
    pub theta: f64,
    /// Instrument probability 0.5 in every cluster instead of `logistic(α_g / 2)`.
    pub equal_e: bool,
}

impl Default for HeteroSimConfig {
    fn default() -> Self {
        HeteroSimConfig {
            n_clusters: 100,
            cluster_size: 20,
            delta: 0.0,
            pi_c: 0.7,
            tau: 0.0,
            theta: 0.0,
            equal_e: false,
        }
    }
}

impl HeteroSimConfig {
    pub fn with_delta(delta: f64) -> Self {
        HeteroSimConfig { delta, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.tau.is_finite() && self.theta.is_finite()) {
            return invalid("delta, tau and theta must be finite");
        }
        if !(self.pi_c > 0.0 && self.pi_c <= 1.0) {
            return invalid("pi_c must lie in (0, 1]");
        }
        if self.n_clusters < 2 || self.cluster_size < 1 {
            return invalid("need at least 2 clusters of size >= 1");
        }
        Ok(())
    }

    /// Clusters `g >= G/2` (zero-based) are of the second type.
    pub fn is_second_type(&self, g: usize) -> bool {
        g >= self.n_clusters / 2
    }

    pub fn alpha(&self, g: usize) -> f64 {
        if self.is_second_type(g) {
            self.delta
        } else {
            0.0
        }
    }

    pub fn instrument_prob(&self, g: usize) -> f64 {
        if self.equal_e {
            0.5
        } else {
            logistic(0.5 * self.alpha(g))
        }
    }

    /// Cluster-specific LATE.
    pub fn cluster_late(&self, g: usize) -> f64 {
        if self.is_second_type(g) {
            self.tau + self.theta
        } else {
            self.tau
        }
    }
}

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct HeteroTruth {
    pub types: Vec<ComplianceType>,
    pub alpha: Vec<f64>,
    pub e: Vec<f64>,
    pub tau_c: Vec<f64>,
}

/// Replicate `b` of the heterogeneous design.
pub fn gen_heterogeneous_replicate(cfg: &HeteroSimConfig, seed: u64, b: u64) -> Result<(Dataset, HeteroTruth)> {
    cfg.validate()?;
    let rng = &mut substream(seed, b);
    let (g, m) = (cfg.n_clusters, cfg.cluster_size);
    let n = g * m;
    let alpha: Vec<f64> = (0..g).map(|k| cfg.alpha(k)).collect();
    let e: Vec<f64> = (0..g).map(|k| cfg.instrument_prob(k)).collect();
    let tau_c: Vec<f64> = (0..g).map(|k| cfg.cluster_late(k)).collect();
    let mut types = Vec::with_capacity(n);
    let (mut y, mut d, mut z) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..g {
        for _ in 0..m {
            let u = draw_type(rng, 0.0, cfg.pi_c);
            let zi = bernoulli(rng, e[k]);
            let di = if u == ComplianceType::Complier { zi } else { 0.0 };
            y.push(alpha[k] + tau_c[k] * di + std_normal(rng));
            d.push(di);
            z.push(zi);
            types.push(u);
        }
    }
    let idx = ClusterIndex::from_sizes(&vec![m; g])?;
    Ok((Dataset::new(y, d, z, idx)?, HeteroTruth { types, alpha, e, tau_c }))
}

pub fn gen_heterogeneous(cfg: &HeteroSimConfig, seed: u64) -> Result<(Dataset, HeteroTruth)> {
    gen_heterogeneous_replicate(cfg, seed, 0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct HettestDraw {
    pub tau_ls: f64,
    pub tau_fe: f64,
    pub t_stat: f64,
}

pub fn hettest_replicate(cfg: &HeteroSimConfig, seed: u64, b: u64) -> Result<HettestDraw> {
    let (data, _) = gen_heterogeneous_replicate(cfg, seed, b)?;
    let h = hettest(&data, &FitOptions::default())?;
    Ok(HettestDraw { tau_ls: h.tau_ls, tau_fe: h.tau_fe, t_stat: h.t_stat })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Fixed-width bins on `[floor(min), ceil(max)]`; the last bin is closed.
pub fn histogram(values: &[f64], width: f64) -> Vec<HistogramBin> {
    if values.is_empty() || !(width > 0.0) {
        return Vec::new();
    }
    let lo = libm::floor(values.iter().copied().fold(f64::INFINITY, f64::min));
    let hi = libm::ceil(values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let nbins = (libm::ceil((hi - lo) / width) as usize).max(1);
    let mut bins: Vec<HistogramBin> = (0..nbins)
        .map(|k| HistogramBin { lower: lo + k as f64 * width, upper: lo + (k + 1) as f64 * width, count: 0 })
        .collect();
    for &v in values {
        let k = (((v - lo) / width) as usize).min(nbins - 1);
        bins[k].count += 1;
    }
    bins
}

/// Width of the t-statistic histogram bins.
pub const HIST_BIN_WIDTH: f64 = 0.5;

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct HettestSummary {
    pub config: HeteroSimConfig,
    pub n_reps: usize,
    pub n_failed_reps: usize,
    pub seed: u64,
    pub mean_tau_ls: f64,
    pub mean_tau_ls_mcse: f64,
    pub mean_tau_fe: f64,
    pub mean_tau_fe_mcse: f64,
    pub mean_t: f64,
    pub sd_t: f64,
    /// Share of replicates with `|t| > 1.96`.
    pub rejection_rate: f64,
    pub rejection_mcse: f64,
    /// Kolmogorov-Smirnov distance of the t-statistics from N(0, 1).
    pub ks_stat: f64,
    pub ks_p_value: f64,
    pub t_histogram: Vec<HistogramBin>,
    /// Successful t-statistics in replicate order.
    pub t_values: Vec<f64>,
}

pub fn summarize_hettest(cfg: &HeteroSimConfig, seed: u64, reps: &[Result<HettestDraw>]) -> Result<HettestSummary> {
    let ok: Vec<HettestDraw> = reps.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let n_failed = reps.len() - ok.len();
    check_failures(n_failed, reps.len())?;
    let ls: Vec<f64> = ok.iter().map(|r| r.tau_ls).collect();
    let fe: Vec<f64> = ok.iter().map(|r| r.tau_fe).collect();
    let t: Vec<f64> = ok.iter().map(|r| r.t_stat).collect();
    let r = t.len() as f64;
    let rejection_rate = t.iter().filter(|v| v.abs() > Z_975).count() as f64 / r;
    let (ks_stat, ks_p_value) = crate::num::ks_normal(&t);
    Ok(HettestSummary {
        config: cfg.clone(),
        n_reps: reps.len(),
        n_failed_reps: n_failed,
        seed,
        mean_tau_ls: mean(&ls),
        mean_tau_ls_mcse: mcse(&ls),
        mean_tau_fe: mean(&fe),
        mean_tau_fe_mcse: mcse(&fe),
        mean_t: mean(&t),
        sd_t: if t.len() > 1 { sqrt(sample_var(&t)) } else { f64::NAN },
        rejection_rate,
        rejection_mcse: sqrt(rejection_rate * (1.0 - rejection_rate) / r),
        ks_stat,
        ks_p_value,
        t_histogram: histogram(&t, HIST_BIN_WIDTH),
        t_values: t,
    })
}

pub fn run_hettest_mc(cfg: &HeteroSimConfig, n_reps: usize, seed: u64) -> Result<HettestSummary> {
    cfg.validate()?;
    let reps: Vec<_> = (0..n_reps as u64).map(|b| hettest_replicate(cfg, seed, b)).collect();
    summarize_hettest(cfg, seed, &reps)
}

// ---------------------------------------------------------------------------
// Weighted-LATE limits

/// Point estimates of the two unadjusted strategies on replicate `b`.
pub fn plim_replicate(cfg: &HeteroSimConfig, seed: u64, b: u64) -> Result<(f64, f64)> {
    let (data, _) = gen_heterogeneous_replicate(cfg, seed, b)?;
    let opts = FitOptions::default();
    Ok((fit(&data, Strategy::Tsls, &opts)?.tau_hat, fit(&data, Strategy::Tsfe, &opts)?.tau_hat))
}

/// Comparison of a predicted limit with a Monte Carlo mean.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct LimitComparison {
    pub predicted: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    /// `(mc_mean − predicted) / mc_se`.
    pub z_score: f64,
}

impl LimitComparison {
    fn new(predicted: f64, draws: &[f64]) -> Self {
        let mc_mean = mean(draws);
        let mc_se = mcse(draws);
        LimitComparison { predicted, mc_mean, mc_se, z_score: (mc_mean - predicted) / mc_se }
    }
}

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct PlimCheck {
    pub config: HeteroSimConfig,
    pub n_reps: usize,
    pub n_failed_reps: usize,
    pub seed: u64,
    pub fe: LimitComparison,
    /// Only with a common instrument probability.
    pub ls: Option<LimitComparison>,
    pub weights_2sfe: Vec<f64>,
}

/// Known design parameters of each cluster: `π_c`, `φ_g = 1/n_g` (independent
/// assignment), `σ²_{Z,g} = e_g (1 − e_g)` and the planted LATE.
pub fn hetero_cluster_params(cfg: &HeteroSimConfig) -> Vec<ClusterParams> {
    (0..cfg.n_clusters)
        .map(|g| {
            let e = cfg.instrument_prob(g);
            ClusterParams {
                n: cfg.cluster_size,
                phi: 1.0 / cfg.cluster_size as f64,
                sigma_z2: e * (1.0 - e),
                pi_c: cfg.pi_c,
                tau_c: cfg.cluster_late(g),
            }
        })
        .collect()
}

pub fn summarize_plim(cfg: &HeteroSimConfig, seed: u64, reps: &[Result<(f64, f64)>]) -> Result<PlimCheck> {
    let ok: Vec<(f64, f64)> = reps.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let n_failed = reps.len() - ok.len();
    check_failures(n_failed, reps.len())?;
    if ok.len() < 2 {
        return Err(Error::TooFewValidReplicates { failed: n_failed, total: reps.len() });
    }
    let w = fe_weights(&hetero_cluster_params(cfg), cfg.equal_e)?;
    let ls: Vec<f64> = ok.iter().map(|r| r.0).collect();
    let fe: Vec<f64> = ok.iter().map(|r| r.1).collect();
    Ok(PlimCheck {
        config: cfg.clone(),
        n_reps: reps.len(),
        n_failed_reps: n_failed,
        seed,
        fe: LimitComparison::new(w.plim_2sfe, &fe),
        ls: w.plim_2sls.map(|p| LimitComparison::new(p, &ls)),
        weights_2sfe: w.kappa_2sfe,
    })
}

pub fn oracle_plim_check(cfg: &HeteroSimConfig, n_reps: usize, seed: u64) -> Result<PlimCheck> {
    cfg.validate()?;
    let reps: Vec<_> = (0..n_reps as u64).map(|b| plim_replicate(cfg, seed, b)).collect();
    summarize_plim(cfg, seed, &reps)
}

// ---------------------------------------------------------------------------
// Within-cluster instrument variation under independent assignment

/// `κ̂` for replicate `b` of `n_clusters` clusters of `cluster_size` units with
/// independent `Bernoulli(e)` instruments.
pub fn bernoulli_kappa_replicate(n_clusters: usize, cluster_size: usize, e: f64, seed: u64, b: u64) -> Result<f64> {
    if !(e > 0.0 && e < 1.0) || n_clusters < 1 || cluster_size < 1 {
        return invalid("need 0 < e < 1 and non-empty clusters");
    }
    let rng = &mut substream(seed, b);
    let n = n_clusters * cluster_size;
    let z: Vec<f64> = (0..n).map(|_| bernoulli(rng, e)).collect();
    let idx = ClusterIndex::from_sizes(&vec![cluster_size; n_clusters])?;
    let data = Dataset::new(z.clone(), z.clone(), z, idx)?;
    Ok(design_diagnostics(&data)?.kappa_hat)
}

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct KappaCheck {
    pub n_reps: usize,
    pub n_failed_reps: usize,
    pub mean_kappa_hat: f64,
    pub mcse: f64,
    /// `1 − 1/n̄`.
    pub predicted: f64,
}

pub fn summarize_kappa(cluster_size: usize, reps: &[Result<f64>]) -> Result<KappaCheck> {
    let ok: Vec<f64> = reps.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let n_failed = reps.len() - ok.len();
    check_failures(n_failed, reps.len())?;
    Ok(KappaCheck {
        n_reps: reps.len(),
        n_failed_reps: n_failed,
        mean_kappa_hat: mean(&ok),
        mcse: mcse(&ok),
        predicted: 1.0 - 1.0 / cluster_size as f64,
    })
}

pub fn run_kappa_mc(n_clusters: usize, cluster_size: usize, e: f64, n_reps: usize, seed: u64) -> Result<KappaCheck> {
    let reps: Vec<_> =
        (0..n_reps as u64).map(|b| bernoulli_kappa_replicate(n_clusters, cluster_size, e, seed, b)).collect();
    summarize_kappa(cluster_size, &reps)
}

/// Human-readable one-line description of a homogeneous configuration.
pub fn describe_homogeneous(cfg: &HomogeneousSimConfig) -> String {
    format!(
        "G={} size~Poisson({})>=1 sigma_x={} sigma_eta={} tau={}",
        cfg.n_clusters, cfg.cluster_size_mean, cfg.sigma_x, cfg.sigma_eta, cfg.tau
    )
}
