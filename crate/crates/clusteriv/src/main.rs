use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use clusteriv::io::{self, InputSpec, IoError, MissingPolicy};
use clusteriv::output::{self, envelope, error_value};
use clusteriv::par;
use clusteriv_core::diagnostics::{design_diagnostics, efficiency_cutoff};
use clusteriv_core::estimators::{fit, parse_strategies, Dataset, FitOptions, Strategy};
use clusteriv_core::hetero::joint_cov_from_fits;
use clusteriv_core::sim::{HeteroSimConfig, HomogeneousSimConfig};

/// Cluster-aware instrumental-variables estimation.
#[derive(Parser)]
#[command(name = "clusteriv", version, about)]
struct Cli {
    /// Worker threads for simulations and the bootstrap (default: all cores).
    #[arg(long, global = true, env = "CLUSTERIV_THREADS")]
    threads: Option<usize>,
    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Do not print the human-readable summary on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one or more estimation strategies.
    Fit(FitArgs),
    /// Test whether the canonical and fixed-effects estimators agree.
    Hettest(HettestArgs),
    /// Cluster bootstrap of the canonical and fixed-effects estimators.
    Bootstrap(BootstrapArgs),
    /// Instrument design moments.
    Diagnose(DataArgs),
    /// Monte Carlo studies.
    #[command(subcommand)]
    Simulate(SimCommand),
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    outcome: String,
    #[arg(long, default_value = "d")]
    treatment: String,
    #[arg(long, default_value = "z")]
    instrument: String,
    #[arg(long, default_value = "cluster")]
    cluster: String,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    #[arg(long, value_enum, default_value_t = MissingPolicy::Error)]
    missing: MissingPolicy,
}

impl DataArgs {
    fn spec(&self) -> InputSpec {
        InputSpec {
            covariate_cols: self.covariates.clone(),
            missing_policy: self.missing,
            ..InputSpec::new(&self.data, &self.outcome, &self.treatment, &self.instrument, &self.cluster)
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated strategy tags. Default: every strategy the data supports.
    #[arg(long)]
    strategies: Option<String>,
    /// Covariates used by the fixed-effects strategies (default: all).
    #[arg(long, value_delimiter = ',')]
    fe_covariates: Vec<String>,
    /// Scale cluster-robust variances by G/(G-1).
    #[arg(long)]
    df_correction: bool,
}

#[derive(Args)]
struct HettestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    df_correction: bool,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long)]
    seed: u64,
}

#[derive(Subcommand)]
enum SimCommand {
    /// Four two-stage strategies on the homogeneous design.
    Table2 {
        #[arg(long, default_value_t = 1.0)]
        sigma_x: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma_eta: f64,
        #[arg(long, default_value_t = 200)]
        clusters: usize,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long)]
        seed: u64,
        /// Also write the per-strategy summary as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Distribution of the heterogeneity t-statistic.
    Hettest {
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        #[arg(long, default_value_t = 100)]
        clusters: usize,
        #[arg(long, default_value_t = 20)]
        cluster_size: usize,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long)]
        seed: u64,
        /// Also write the t-statistic histogram as CSV.
        #[arg(long)]
        hist_csv: Option<PathBuf>,
    },
    /// Monte Carlo means against the weighted-LATE limits.
    Plim {
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        /// Extra treatment effect in the second type of clusters.
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
        /// Instrument probability 0.5 in every cluster.
        #[arg(long)]
        equal_e: bool,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Average within-cluster instrument variation under independent assignment.
    Kappa {
        #[arg(long, default_value_t = 100)]
        clusters: usize,
        #[arg(long, default_value_t = 10)]
        cluster_size: usize,
        #[arg(long, default_value_t = 0.5)]
        e: f64,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long)]
        seed: u64,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<clusteriv_core::Error> for Failure {
    fn from(e: clusteriv_core::Error) -> Self {
        match e {
            clusteriv_core::Error::InvalidParameter(m) => Failure::Usage(m),
            e if e.is_numerical() => Failure::Numerical(e.to_string()),
            e => Failure::Data(e.to_string()),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Core(e) => e.into(),
            e => Failure::Data(e.to_string()),
        }
    }
}

/// JSON to print, human summary, and the failure that sets the exit code (if any).
struct Outcome {
    json: Value,
    human: String,
    failure: Option<Failure>,
}

impl Outcome {
    fn ok(json: Value, human: String) -> Self {
        Outcome { json, human, failure: None }
    }
}

fn load(args: &DataArgs) -> Result<(Dataset, Value), Failure> {
    let loaded = io::load_csv(&args.spec())?;
    let info = json!({
        "path": args.data.display().to_string(),
        "rows_read": loaded.rows_read,
        "rows_dropped": loaded.rows_dropped,
        "n_units": loaded.dataset.n_units(),
        "n_clusters": loaded.dataset.n_clusters(),
        "covariates": loaded.dataset.x_names(),
    });
    Ok((loaded.dataset, info))
}

fn cmd_fit(args: &FitArgs) -> Result<Outcome, Failure> {
    let (data, info) = load(&args.data)?;
    let strategies = match &args.strategies {
        Some(list) => parse_strategies(list)?,
        None => Strategy::ALL.into_iter().filter(|s| data.x().is_some() || !s.covariates()).collect(),
    };
    if strategies.is_empty() {
        return Err(Failure::Usage("no strategies requested".into()));
    }
    let fe_covariates = if args.fe_covariates.is_empty() {
        None
    } else {
        let idx =
            args.fe_covariates
                .iter()
                .map(|c| {
                    data.x_names().iter().position(|n| n == c).ok_or_else(|| {
                        Failure::Usage(format!("fixed-effects covariate '{c}' is not among --covariates"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
        Some(idx)
    };
    let opts = FitOptions { cluster_df_correction: args.df_correction, fe_covariates };

    // Deterministic output order regardless of the order requested.
    let mut ordered: Vec<Strategy> = Strategy::ALL.into_iter().filter(|s| strategies.contains(s)).collect();
    ordered.dedup();
    let fits: Vec<_> = ordered.iter().map(|&s| (s, fit(&data, s, &opts))).collect();

    let results: Vec<Value> = fits
        .iter()
        .map(|(s, r)| match r {
            Ok(f) => json!({ "strategy": s, "fit": f }),
            Err(e) => json!({ "strategy": s, "error": error_value(e) }),
        })
        .collect();
    let rows: Vec<_> = fits.iter().map(|(s, r)| (s.tag(), r.as_ref().map_err(|e| e.to_string()))).collect();
    let failure = fits.iter().find_map(|(_, r)| r.as_ref().err().cloned()).map(Failure::from);
    Ok(Outcome {
        json: envelope("fit", json!({ "data": info, "df_correction": args.df_correction, "results": results })),
        human: output::fit_table(&rows),
        failure,
    })
}

fn cmd_hettest(args: &HettestArgs) -> Result<Outcome, Failure> {
    let (data, info) = load(&args.data)?;
    let opts = FitOptions { cluster_df_correction: args.df_correction, ..FitOptions::default() };
    let ls = fit(&data, Strategy::Tsls, &opts)?;
    let fe = fit(&data, Strategy::Tsfe, &opts)?;
    let h = joint_cov_from_fits(&ls, &fe)?;
    let human = output::hettest_table(&h);
    Ok(Outcome::ok(
        envelope("hettest", json!({ "data": info, "df_correction": args.df_correction, "result": h })),
        human,
    ))
}

fn cmd_bootstrap(args: &BootstrapArgs, threads: Option<usize>) -> Result<Outcome, Failure> {
    let (data, info) = load(&args.data)?;
    let opts = FitOptions::default();
    let b = par::with_threads(threads, || par::cluster_bootstrap(&data, args.reps, args.seed, &opts))?;
    let human = format!(
        "reps = {} (failed {})  seed = {}\nsd tau_2sls = {:.6}  sd tau_2sfe = {:.6}  se_diff = {:.6}\n{}",
        b.reps,
        b.n_failed,
        b.seed,
        b.sd_tau_ls,
        b.sd_tau_fe,
        b.se_diff,
        output::hettest_table(&b.joint)
    );
    Ok(Outcome::ok(envelope("bootstrap", json!({ "data": info, "result": b })), human))
}

fn cmd_diagnose(args: &DataArgs) -> Result<Outcome, Failure> {
    let (data, info) = load(args)?;
    let d = design_diagnostics(&data)?;
    let mut warnings = Vec::new();
    if d.fe_degenerate {
        warnings.push("instrument is constant within every cluster: the fixed-effects strategies are not identified");
    }
    let cutoff = if d.kappa_hat > 0.0 { efficiency_cutoff(d.kappa_hat, d.c_hat).ok() } else { None };
    let mut human = output::diagnostics_table(&d);
    if let Some(c) = &cutoff {
        human.push_str(&format!("2sfe more efficient when sigma_alpha^2 / sigma_eps^2 > {:.6}\n", c.cutoff));
    }
    for w in &warnings {
        human.push_str(&format!("warning: {w}\n"));
    }
    Ok(Outcome::ok(
        envelope(
            "diagnose",
            json!({ "data": info, "diagnostics": d, "efficiency_cutoff": cutoff, "warnings": warnings }),
        ),
        human,
    ))
}

fn cmd_simulate(cmd: &SimCommand, threads: Option<usize>) -> Result<Outcome, Failure> {
    match cmd {
        SimCommand::Table2 { sigma_x, sigma_eta, clusters, reps, seed, csv } => {
            let cfg = HomogeneousSimConfig {
                n_clusters: *clusters,
                ..HomogeneousSimConfig::with_sigmas(*sigma_x, *sigma_eta)
            };
            let s = par::with_threads(threads, || par::run_table2(&cfg, *reps, *seed))?;
            if let Some(path) = csv {
                io::write_csv(path, &output::TABLE2_CSV_HEADER, &output::table2_csv_rows(&s))?;
            }
            let human = output::table2_table(&s);
            Ok(Outcome::ok(envelope("simulate table2", s), human))
        }
        SimCommand::Hettest { delta, clusters, cluster_size, reps, seed, hist_csv } => {
            let cfg = HeteroSimConfig {
                n_clusters: *clusters,
                cluster_size: *cluster_size,
                ..HeteroSimConfig::with_delta(*delta)
            };
            let s = par::with_threads(threads, || par::run_hettest_mc(&cfg, *reps, *seed))?;
            if let Some(path) = hist_csv {
                io::write_csv(path, &output::HISTOGRAM_CSV_HEADER, &output::histogram_csv_rows(&s.t_histogram))?;
            }
            let human = output::hettest_mc_table(&s);
            Ok(Outcome::ok(envelope("simulate hettest", s), human))
        }
        SimCommand::Plim { delta, theta, equal_e, reps, seed } => {
            let cfg = HeteroSimConfig { theta: *theta, equal_e: *equal_e, ..HeteroSimConfig::with_delta(*delta) };
            let p = par::with_threads(threads, || par::oracle_plim_check(&cfg, *reps, *seed))?;
            let mut human =
                format!("2sfe: predicted {:.5}  MC mean {:.5} (se {:.5})\n", p.fe.predicted, p.fe.mc_mean, p.fe.mc_se);
            if let Some(ls) = &p.ls {
                human.push_str(&format!(
                    "2sls: predicted {:.5}  MC mean {:.5} (se {:.5})\n",
                    ls.predicted, ls.mc_mean, ls.mc_se
                ));
            }
            Ok(Outcome::ok(envelope("simulate plim", p), human))
        }
        SimCommand::Kappa { clusters, cluster_size, e, reps, seed } => {
            let k = par::with_threads(threads, || par::run_kappa_mc(*clusters, *cluster_size, *e, *reps, *seed))?;
            let human =
                format!("mean kappa_hat = {:.5} (se {:.5})  1 - 1/n = {:.5}\n", k.mean_kappa_hat, k.mcse, k.predicted);
            Ok(Outcome::ok(envelope("simulate kappa", json!({ "seed": seed, "result": k })), human))
        }
    }
}

fn emit(json: &Value, out: &Option<PathBuf>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(json).expect("JSON output") + "\n";
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome, Failure> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Hettest(a) => cmd_hettest(a),
        Command::Bootstrap(a) => cmd_bootstrap(a, cli.threads),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Simulate(c) => cmd_simulate(c, cli.threads),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli).and_then(|o| {
        emit(&o.json, &cli.out)?;
        Ok(o)
    });
    match result {
        Ok(o) => {
            if !cli.quiet {
                eprint!("{}", o.human);
            }
            match o.failure {
                Some(f) => {
                    eprintln!("error: {}", f.message());
                    ExitCode::from(f.code())
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
