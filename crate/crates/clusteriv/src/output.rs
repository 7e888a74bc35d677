//! JSON envelopes, human-readable tables and CSV exports.

use std::fmt::Write as _;

use clusteriv_core::diagnostics::DesignDiagnostics;
use clusteriv_core::estimators::FitResult;
use clusteriv_core::hetero::JointHetResult;
use clusteriv_core::sim::{HettestSummary, HistogramBin, Table2Summary};
use serde::Serialize;
use serde_json::{json, Value};

/// Bumped whenever a field is renamed or removed.
pub const SCHEMA_VERSION: u32 = 1;

/// One top-level JSON object: `{"schema_version", "command", ...body}`.
pub fn envelope(command: &str, body: impl Serialize) -> Value {
    let mut out = serde_json::Map::new();
    out.insert("schema_version".into(), json!(SCHEMA_VERSION));
    out.insert("command".into(), json!(command));
    match serde_json::to_value(body).expect("serializable output") {
        Value::Object(m) => out.extend(m),
        other => {
            out.insert("result".into(), other);
        }
    }
    Value::Object(out)
}

/// `{"kind": ..., "message": ...}` for a library error.
pub fn error_value(err: &clusteriv_core::Error) -> Value {
    let debug = format!("{err:?}");
    let kind: String = debug.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
    json!({ "kind": kind, "message": err.to_string() })
}

pub fn fit_table(fits: &[(&str, Result<&FitResult, String>)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<8} {:>12} {:>12} {:>12} {:>12}", "strategy", "tau_hat", "se", "ci_low", "ci_high");
    for (tag, r) in fits {
        match r {
            Ok(f) => {
                let _ =
                    writeln!(s, "{:<8} {:>12.6} {:>12.6} {:>12.6} {:>12.6}", tag, f.tau_hat, f.se, f.ci_low, f.ci_high);
            }
            Err(e) => {
                let _ = writeln!(s, "{tag:<8} error: {e}");
            }
        }
    }
    s
}

pub fn hettest_table(h: &JointHetResult) -> String {
    format!(
        "tau_2sls = {:.6}  tau_2sfe = {:.6}\nse_diff = {:.6}  t = {:.4}  p = {:.4}  reject at 5%: {}\n",
        h.tau_ls, h.tau_fe, h.se_diff, h.t_stat, h.p_value, h.reject_5pct
    )
}

pub fn diagnostics_table(d: &DesignDiagnostics) -> String {
    format!(
        "N = {}  G = {}  clusters with instrument variation = {}\nS_Z = {:.6}  S_Z,in = {:.6}  kappa_hat = {:.6}  c_hat = {:.6}\n",
        d.n_units, d.n_clusters, d.n_effective_clusters, d.s_z, d.s_z_in, d.kappa_hat, d.c_hat
    )
}

pub fn table2_table(t: &Table2Summary) -> String {
    let mut s = format!("reps = {} (failed {})  seed = {}\n", t.n_reps, t.n_failed_reps, t.seed);
    let _ = writeln!(s, "{:<8} {:>10} {:>10} {:>12}", "strategy", "mse", "coverage", "ci_length");
    for m in &t.strategies {
        let _ = writeln!(s, "{:<8} {:>10.4} {:>10.3} {:>12.4}", m.strategy.tag(), m.mse, m.coverage, m.mean_ci_length);
    }
    s
}

pub fn hettest_mc_table(h: &HettestSummary) -> String {
    format!(
        "reps = {} (failed {})  delta = {}\nmean tau_2sls = {:.4}  mean tau_2sfe = {:.4}  mean t = {:.3}  rejection = {:.3}  KS p = {:.3}\n",
        h.n_reps, h.n_failed_reps, h.config.delta, h.mean_tau_ls, h.mean_tau_fe, h.mean_t, h.rejection_rate, h.ks_p_value
    )
}

pub const TABLE2_CSV_HEADER: [&str; 9] =
    ["strategy", "bias", "mse", "mse_mcse", "coverage", "coverage_mcse", "mean_ci_length", "ci_length_mcse", "n_reps"];

/// Full-precision (`{:?}`-formatted, round-trippable) CSV rows.
pub fn table2_csv_rows(t: &Table2Summary) -> Vec<Vec<String>> {
    t.strategies
        .iter()
        .map(|m| {
            vec![
                m.strategy.tag().to_string(),
                format!("{:?}", m.bias),
                format!("{:?}", m.mse),
                format!("{:?}", m.mse_mcse),
                format!("{:?}", m.coverage),
                format!("{:?}", m.coverage_mcse),
                format!("{:?}", m.mean_ci_length),
                format!("{:?}", m.ci_length_mcse),
                t.n_reps.to_string(),
            ]
        })
        .collect()
}

pub const HISTOGRAM_CSV_HEADER: [&str; 3] = ["lower", "upper", "count"];

pub fn histogram_csv_rows(bins: &[HistogramBin]) -> Vec<Vec<String>> {
    bins.iter().map(|b| vec![format!("{:?}", b.lower), format!("{:?}", b.upper), b.count.to_string()]).collect()
}
