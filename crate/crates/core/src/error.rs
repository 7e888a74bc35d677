use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An input had the wrong length or shape.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A regressor or control block has numerical rank below its column count.
    RankDeficient {
        what: &'static str,
        rank: usize,
        cols: usize,
    },
    /// The instruments do not identify the regressors: `|det proxy|` below tolerance.
    WeakIdentification {
        what: &'static str,
        ratio: f64,
    },
    /// The instrument takes a single value in the whole sample.
    DegenerateInstrument,
    /// A variable is constant within every cluster, so fixed effects absorb it.
    DegenerateWithinVariation {
        variable: &'static str,
    },
    /// Covariates that do not vary within any cluster, rejected under fixed effects.
    ClusterConstantCovariate {
        columns: Vec<String>,
    },
    /// A strategy needing covariates was requested on a dataset without any.
    MissingCovariates,
    NonBinary {
        column: &'static str,
        row: usize,
        value: f64,
    },
    NonFinite {
        column: String,
        row: usize,
    },
    TooFewUnits {
        found: usize,
    },
    TooFewClusters {
        found: usize,
    },
    /// `se_diff` is zero: the two estimators have identical normalized scores.
    NonPositiveSeDiff,
    AllZeroWeights,
    TooFewValidReplicates {
        failed: usize,
        total: usize,
    },
    InvalidParameter(String),
}

impl Error {
    /// Whether the error comes from the numerics rather than the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::WeakIdentification { .. }
                | Error::DegenerateInstrument
                | Error::DegenerateWithinVariation { .. }
                | Error::ClusterConstantCovariate { .. }
                | Error::NonPositiveSeDiff
                | Error::AllZeroWeights
                | Error::TooFewValidReplicates { .. }
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { what, expected, found } => {
                write!(f, "dimension mismatch in {what}: expected {expected}, found {found}")
            }
            Error::RankDeficient { what, rank, cols } => {
                write!(f, "{what} is rank deficient: numerical rank {rank} < {cols} columns")
            }
            Error::WeakIdentification { what, ratio } => write!(
                f,
                "weak identification in {what}: normalized instrument-regressor cross-moment {ratio:e} below tolerance"
            ),
            Error::DegenerateInstrument => write!(f, "instrument is constant across the sample"),
            Error::DegenerateWithinVariation { variable } => {
                write!(f, "{variable} is constant within every cluster; the fixed-effects specification is degenerate")
            }
            Error::ClusterConstantCovariate { columns } => {
                write!(f, "covariates constant within clusters are absorbed by fixed effects: {}", columns.join(", "))
            }
            Error::MissingCovariates => write!(f, "strategy requires covariates but none were supplied"),
            Error::NonBinary { column, row, value } => {
                write!(f, "{column} must be 0 or 1; row {row} has {value}")
            }
            Error::NonFinite { column, row } => write!(f, "non-finite value in {column} at row {row}"),
            Error::TooFewUnits { found } => write!(f, "need at least 2 units, found {found}"),
            Error::TooFewClusters { found } => write!(f, "need at least 2 clusters, found {found}"),
            Error::NonPositiveSeDiff => {
                write!(f, "standard error of the estimator difference is zero; the two fits have identical scores")
            }
            Error::AllZeroWeights => write!(f, "every cluster weight is zero"),
            Error::TooFewValidReplicates { failed, total } => {
                write!(f, "{failed} of {total} bootstrap replicates failed (more than 20%)")
            }
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
