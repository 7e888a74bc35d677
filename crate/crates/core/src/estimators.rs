//! The eight estimation strategies: canonical and fixed-effects 2SLS, their
//! covariate-adjusted variants, and the OLS counterparts obtained by using the
//! treatment as its own instrument.
//!
//! | tag      | specification                                 |
//! |----------|-----------------------------------------------|
//! | `2sls`   | `2sls(Y ~ 1 + D | 1 + Z)`                     |
//! | `2sfe`   | `2sls(Y ~ D + C | Z + C)`                     |
//! | `2sls-x` | `2sls(Y ~ 1 + D + X | 1 + Z + X)`             |
//! | `2sfe-x` | `2sls(Y ~ D + C + X | Z + C + X)`             |
//! | `ols`, `fe`, `ols-x`, `fe-x` | the same with `Z = D`             |
//!
//! Fixed effects are never expanded into dummies: every variable is centered
//! within clusters and the centered covariates are partialled out.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::cluster::{center_by_cluster, center_matrix_by_cluster, ClusterIndex};
use crate::error::{Error, Result};
use crate::iv::{fwl_scalar_fit, ScalarIvFit};
use crate::matrix::Matrix;
use crate::num::{max_abs, sqrt, Z_975};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    Tsls,
    Tsfe,
    TslsX,
    TsfeX,
    Ols,
    Fe,
    OlsX,
    FeX,
}

impl Strategy {
    /// Output order used everywhere.
    pub const ALL: [Strategy; 8] = [
        Strategy::Tsls,
        Strategy::Tsfe,
        Strategy::TslsX,
        Strategy::TsfeX,
        Strategy::Ols,
        Strategy::Fe,
        Strategy::OlsX,
        Strategy::FeX,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Tsls => "2sls",
            Strategy::Tsfe => "2sfe",
            Strategy::TslsX => "2sls-x",
            Strategy::TsfeX => "2sfe-x",
            Strategy::Ols => "ols",
            Strategy::Fe => "fe",
            Strategy::OlsX => "ols-x",
            Strategy::FeX => "fe-x",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|s| s.tag() == tag)
    }

    pub fn fixed_effects(self) -> bool {
        matches!(self, Strategy::Tsfe | Strategy::TsfeX | Strategy::Fe | Strategy::FeX)
    }

    pub fn covariates(self) -> bool {
        matches!(self, Strategy::TslsX | Strategy::TsfeX | Strategy::OlsX | Strategy::FeX)
    }

    pub fn instrumented(self) -> bool {
        matches!(self, Strategy::Tsls | Strategy::Tsfe | Strategy::TslsX | Strategy::TsfeX)
    }
}

impl core::fmt::Display for Strategy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.tag())
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.tag())
    }
}

/// Outcome, binary treatment, binary instrument, optional covariates and
/// cluster membership for `N` units.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: Vec<f64>,
    d: Vec<f64>,
    z: Vec<f64>,
    x: Option<Matrix>,
    x_names: Vec<String>,
    idx: ClusterIndex,
}

fn check_binary(column: &'static str, v: &[f64]) -> Result<()> {
    match v.iter().position(|&x| x != 0.0 && x != 1.0) {
        Some(row) => Err(Error::NonBinary { column, row, value: v[row] }),
        None => Ok(()),
    }
}

impl Dataset {
    pub fn new(y: Vec<f64>, d: Vec<f64>, z: Vec<f64>, idx: ClusterIndex) -> Result<Self> {
        let n = idx.n_units();
        for (what, len) in [("outcome", y.len()), ("treatment", d.len()), ("instrument", z.len())] {
            if len != n {
                return Err(Error::DimensionMismatch { what, expected: n, found: len });
            }
        }
        if n < 2 {
            return Err(Error::TooFewUnits { found: n });
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { column: "outcome".into(), row });
        }
        check_binary("treatment", &d)?;
        check_binary("instrument", &z)?;
        Ok(Dataset { y, d, z, x: None, x_names: Vec::new(), idx })
    }

    /// Attach covariates. `names` labels the columns in fit output.
    pub fn with_covariates(mut self, x: Matrix, names: Vec<String>) -> Result<Self> {
        if x.rows() != self.n_units() {
            return Err(Error::DimensionMismatch { what: "covariate rows", expected: self.n_units(), found: x.rows() });
        }
        if names.len() != x.cols() {
            return Err(Error::DimensionMismatch { what: "covariate names", expected: x.cols(), found: names.len() });
        }
        for (j, c) in x.columns().enumerate() {
            if let Some(row) = c.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { column: names[j].clone(), row });
            }
        }
        self.x = Some(x);
        self.x_names = names;
        Ok(self)
    }

    /// Copy keeping only the listed covariate columns.
    pub fn select_covariates(&self, cols: &[usize]) -> Result<Dataset> {
        let x = self.x.as_ref().ok_or(Error::MissingCovariates)?;
        if let Some(&bad) = cols.iter().find(|&&c| c >= x.cols()) {
            return Err(Error::InvalidParameter(alloc::format!("covariate column {bad} out of range")));
        }
        let mut out = self.clone();
        out.x = Some(x.select_columns(cols));
        out.x_names = cols.iter().map(|&c| self.x_names[c].clone()).collect();
        Ok(out)
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn d(&self) -> &[f64] {
        &self.d
    }
    pub fn z(&self) -> &[f64] {
        &self.z
    }
    pub fn x(&self) -> Option<&Matrix> {
        self.x.as_ref()
    }
    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }
    pub fn clusters(&self) -> &ClusterIndex {
        &self.idx
    }
    pub fn n_units(&self) -> usize {
        self.idx.n_units()
    }
    pub fn n_clusters(&self) -> usize {
        self.idx.n_clusters()
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Multiply the cluster-robust variance by `G / (G - 1)`. Off by default.
    pub cluster_df_correction: bool,
    /// Covariate columns used by `2sfe-x` and `fe-x`; all columns when `None`.
    pub fe_covariates: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Coefficient {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct FitResult {
    pub strategy: Strategy,
    pub tau_hat: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub coefficients: Vec<Coefficient>,
    pub residuals: Vec<f64>,
    /// `Σ_{i∈g} Z*_i r_i` with `Z*` the partialled instrument.
    pub per_cluster_scores: Vec<f64>,
    /// Partialled instrument-treatment cross-moment, the denominator of `tau_hat`.
    pub s_zd: f64,
    pub n_units: usize,
    pub n_clusters: usize,
    /// Fixed-effects strategies: clusters where the instrument varies.
    pub n_effective_clusters: Option<usize>,
    pub df_correction: bool,
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficients.iter().find(|c| c.name == name).map(|c| c.value)
    }

    /// Scores normalized so that `se² = Σ_g a_g²` (before any df correction).
    pub fn normalized_scores(&self) -> Vec<f64> {
        let denom = self.n_units as f64 * self.s_zd;
        self.per_cluster_scores.iter().map(|s| s / denom).collect()
    }
}

/// Multiplier applied to variances when the df correction is on.
pub fn df_multiplier(n_clusters: usize, on: bool) -> f64 {
    if on && n_clusters > 1 {
        n_clusters as f64 / (n_clusters as f64 - 1.0)
    } else {
        1.0
    }
}

/// A covariate column is cluster-constant when its centered version has
/// `max |x| < 1e-10 (1 + ||x||_inf)`.
fn cluster_constant_columns(x: &Matrix, centered: &Matrix, names: &[String]) -> Vec<String> {
    (0..x.cols())
        .filter(|&j| max_abs(centered.col(j)) < 1e-10 * (1.0 + max_abs(x.col(j))))
        .map(|j| names[j].clone())
        .collect()
}

pub fn fit(data: &Dataset, strategy: Strategy, opts: &FitOptions) -> Result<FitResult> {
    let g = data.n_clusters();
    if g < 2 {
        return Err(Error::TooFewClusters { found: g });
    }
    let (inst, inst_name) = if strategy.instrumented() { (data.z(), "instrument") } else { (data.d(), "treatment") };
    let n = data.n_units();
    let idx = data.clusters();

    let covariates = if strategy.covariates() {
        let x = data.x().ok_or(Error::MissingCovariates)?;
        let cols = match (&opts.fe_covariates, strategy.fixed_effects()) {
            (Some(cols), true) => cols.clone(),
            _ => (0..x.cols()).collect(),
        };
        let sub = data.select_covariates(&cols)?;
        Some((sub.x.unwrap(), sub.x_names))
    } else {
        None
    };

    let (fit, coefficients, n_effective) = if strategy.fixed_effects() {
        let effective = idx.clusters_with_variation(inst)?;
        if effective == 0 {
            return Err(Error::DegenerateWithinVariation { variable: inst_name });
        }
        if strategy.instrumented() && idx.clusters_with_variation(data.d())? == 0 {
            return Err(Error::DegenerateWithinVariation { variable: "treatment" });
        }
        let yc = center_by_cluster(data.y(), idx)?;
        let dc = center_by_cluster(data.d(), idx)?;
        let zc = center_by_cluster(inst, idx)?;
        let (controls, names) = match covariates {
            Some((x, names)) => {
                let xc = center_matrix_by_cluster(&x, idx)?;
                let constant = cluster_constant_columns(&x, &xc, &names);
                if !constant.is_empty() {
                    return Err(Error::ClusterConstantCovariate { columns: constant });
                }
                (xc, names)
            }
            None => (Matrix::empty(n), Vec::new()),
        };
        let fit = fwl_scalar_fit(&yc, &dc, &zc, &controls, idx)?;
        let mut coefs = vec![Coefficient { name: "D".into(), value: fit.tau_hat }];
        coefs
            .extend(names.into_iter().zip(&fit.control_coefficients).map(|(name, &value)| Coefficient { name, value }));
        (fit, coefs, Some(effective))
    } else {
        if inst.iter().all(|&v| v == inst[0]) {
            return Err(if strategy.instrumented() {
                Error::DegenerateInstrument
            } else {
                Error::WeakIdentification { what: "treatment without variation", ratio: 0.0 }
            });
        }
        let ones = vec![1.0; n];
        let (controls, names) = match covariates {
            Some((x, names)) => (Matrix::from_columns(n, &[&ones])?.hcat(&x)?, names),
            None => (Matrix::from_columns(n, &[&ones])?, Vec::new()),
        };
        let fit = fwl_scalar_fit(data.y(), data.d(), inst, &controls, idx)?;
        let mut coefs = vec![
            Coefficient { name: "(Intercept)".into(), value: fit.control_coefficients[0] },
            Coefficient { name: "D".into(), value: fit.tau_hat },
        ];
        coefs.extend(
            names.into_iter().zip(&fit.control_coefficients[1..]).map(|(name, &value)| Coefficient { name, value }),
        );
        (fit, coefs, None)
    };
    Ok(finish(strategy, fit, coefficients, n, g, n_effective, opts.cluster_df_correction))
}

fn finish(
    strategy: Strategy,
    fit: ScalarIvFit,
    coefficients: Vec<Coefficient>,
    n: usize,
    g: usize,
    n_effective_clusters: Option<usize>,
    df_correction: bool,
) -> FitResult {
    let se = fit.se * sqrt(df_multiplier(g, df_correction));
    FitResult {
        strategy,
        tau_hat: fit.tau_hat,
        se,
        ci_low: fit.tau_hat - Z_975 * se,
        ci_high: fit.tau_hat + Z_975 * se,
        coefficients,
        residuals: fit.residuals,
        per_cluster_scores: fit.per_cluster_scores,
        s_zd: fit.s_zd,
        n_units: n,
        n_clusters: g,
        n_effective_clusters,
        df_correction,
    }
}

/// `2sls(Y ~ 1 + D | 1 + Z)`: `τ̂ = S_ZY / S_ZD`.
pub fn fit_canonical_2sls(data: &Dataset) -> Result<FitResult> {
    fit(data, Strategy::Tsls, &FitOptions::default())
}

/// `2sls(Y ~ D + C | Z + C)` through cluster centering: `τ̂ = S_{ZY,in} / S_{ZD,in}`.
pub fn fit_2sfe(data: &Dataset) -> Result<FitResult> {
    fit(data, Strategy::Tsfe, &FitOptions::default())
}

pub fn fit_2sls_x(data: &Dataset) -> Result<FitResult> {
    fit(data, Strategy::TslsX, &FitOptions::default())
}

/// Covariates that are constant within clusters are rejected with
/// [`Error::ClusterConstantCovariate`].
pub fn fit_2sfe_x(data: &Dataset) -> Result<FitResult> {
    fit(data, Strategy::TsfeX, &FitOptions::default())
}

/// `ols`, `fe`, `ols-x` or `fe-x`.
pub fn fit_ols_family(data: &Dataset, strategy: Strategy) -> Result<FitResult> {
    if strategy.instrumented() {
        return Err(Error::InvalidParameter(alloc::format!("{strategy} is not an OLS strategy")));
    }
    fit(data, strategy, &FitOptions::default())
}

/// Every strategy in tag order, with failures recorded per strategy.
pub fn fit_all(data: &Dataset, opts: &FitOptions) -> Vec<(Strategy, Result<FitResult>)> {
    Strategy::ALL.into_iter().map(|s| (s, fit(data, s, opts))).collect()
}

/// Parse a comma-separated list of strategy tags.
pub fn parse_strategies(list: &str) -> Result<Vec<Strategy>> {
    list.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| Strategy::from_tag(t).ok_or_else(|| Error::InvalidParameter(alloc::format!("unknown strategy {t}"))))
        .collect()
}
