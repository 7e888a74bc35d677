//! Parallel Monte Carlo and bootstrap drivers.
//!
//! Each replicate is a pure function of `(config, seed, replicate index)`, and
//! results are collected in replicate order before aggregation, so these
//! functions return exactly what the serial versions in `clusteriv_core` do,
//! whatever the number of threads.

use rayon::prelude::*;

use clusteriv_core::hetero::{self, BootstrapResult};
use clusteriv_core::sim::{
    self, HeteroSimConfig, HettestSummary, HomogeneousSimConfig, KappaCheck, PlimCheck, Table2Summary,
};
use clusteriv_core::{Dataset, FitOptions, Result};

/// Run `f` on a pool of `threads` workers (`None` or 0: rayon's default).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads.filter(|&t| t > 0) {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

fn replicates<T: Send>(n: usize, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    (0..n as u64).into_par_iter().map(f).collect()
}

pub fn run_table2(cfg: &HomogeneousSimConfig, n_reps: usize, seed: u64) -> Result<Table2Summary> {
    cfg.validate()?;
    let reps = replicates(n_reps, |b| sim::table2_replicate(cfg, seed, b));
    sim::summarize_table2(cfg, seed, &reps)
}

pub fn run_hettest_mc(cfg: &HeteroSimConfig, n_reps: usize, seed: u64) -> Result<HettestSummary> {
    cfg.validate()?;
    let reps = replicates(n_reps, |b| sim::hettest_replicate(cfg, seed, b));
    sim::summarize_hettest(cfg, seed, &reps)
}

pub fn oracle_plim_check(cfg: &HeteroSimConfig, n_reps: usize, seed: u64) -> Result<PlimCheck> {
    cfg.validate()?;
    let reps = replicates(n_reps, |b| sim::plim_replicate(cfg, seed, b));
    sim::summarize_plim(cfg, seed, &reps)
}

pub fn run_kappa_mc(n_clusters: usize, cluster_size: usize, e: f64, n_reps: usize, seed: u64) -> Result<KappaCheck> {
    let reps = replicates(n_reps, |b| sim::bernoulli_kappa_replicate(n_clusters, cluster_size, e, seed, b));
    sim::summarize_kappa(cluster_size, &reps)
}

pub fn cluster_bootstrap(data: &Dataset, reps: usize, seed: u64, opts: &FitOptions) -> Result<BootstrapResult> {
    hetero::check_bootstrap_args(data, reps)?;
    let draws = replicates(reps, |b| hetero::bootstrap_replicate(data, seed, b, opts));
    hetero::summarize_bootstrap(data, &draws, seed, opts)
}
