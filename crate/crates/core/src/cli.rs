//! Command-line front end: `estimate`, `mechanism`, and `experiment <kind>`.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 when a run
//! hits a hard assertion or a singular private covariance.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{ConfigError, ConfigFile};
use crate::dataset::ReportedDataset;
use crate::estimator::{default_config, estimate, EstimateRecord, EstimatorError};
use crate::experiments::{
    corollary_params, run_accuracy_experiment, run_budget_experiment, run_rationality_experiment,
    run_truthfulness_experiment, ExperimentError,
};
use crate::io::{agent_rows, load_instance, save_instance, version_string, write_json, write_table, IoError, Metadata};
use crate::mechanism::{apply_threshold_strategy, run_mechanism, MechanismError};
use crate::plot::{log_log_chart, PlotError, Series};
use crate::rng::{derive_seed, derived_rng};
use crate::synth::{sample_instance, Population, RegressionInstance, SynthConfig, SynthError};

#[derive(Debug, Parser)]
#[command(name = "privreg", version, about = "Private sparse linear regression and a truthful payment mechanism")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file; every key is optional.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory for tables, sidecars, and plots.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed; overrides every seed in the config.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Also render log-log SVG charts of each table.
    #[arg(long, global = true)]
    pub plot: bool,
    /// Worker threads for Monte Carlo trials.
    #[arg(long, global = true, value_name = "K")]
    pub parallel: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the private estimator once and print the result record.
    Estimate {
        /// Save the generated instance as versioned JSON.
        #[arg(long, value_name = "PATH")]
        save_instance: Option<PathBuf>,
    },
    /// Run the payment mechanism once and write the per-agent table.
    Mechanism,
    /// Run a scaling study under the polynomial parameter schedule.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    Accuracy,
    Truthfulness,
    Budget,
    Rationality,
    All,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Failure(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Failure(m) => write!(f, "run failed: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<PlotError> for CliError {
    fn from(e: PlotError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::SingularCovariance { .. } => CliError::Failure(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<MechanismError> for CliError {
    fn from(e: MechanismError) -> Self {
        match e {
            MechanismError::InvalidConfig(_) => CliError::Config(e.to_string()),
            MechanismError::Estimator { source: EstimatorError::InvalidConfig(_), .. } => CliError::Config(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidSchedule(_) | ExperimentError::Synth(_) => CliError::Config(e.to_string()),
            ExperimentError::HardAssertion(_) => CliError::Failure(e.to_string()),
            ExperimentError::Estimator(inner) => inner.into(),
            ExperimentError::Mechanism(inner) => inner.into(),
        }
    }
}

/// Parses `args` (program name first), runs the command, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match RunConfig::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("privreg: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &RunConfig) -> Result<(), CliError> {
    let mut file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    if let Some(seed) = cli.seed.or(file.seed) {
        file = file.with_master_seed(seed);
    }
    if let Some(k) = cli.parallel {
        file.parallel = Some(k);
    }
    file.validate()?;
    let body = || match &cli.command {
        Command::Estimate { save_instance } => run_estimate(&file, cli, save_instance.as_deref()),
        Command::Mechanism => run_mechanism_once(&file, cli),
        Command::Experiment { kind } => run_experiments(&file, cli, *kind),
    };
    match file.parallel {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {k} worker threads: {e}")))?
            .install(body),
        None => body(),
    }
}

fn output_dir(cli: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

fn load_or_generate(file: &ConfigFile) -> Result<(RegressionInstance, SynthConfig), CliError> {
    match &file.instance {
        Some(path) => Ok(load_instance(path)?),
        None => Ok((sample_instance(&file.synth)?, file.synth.clone())),
    }
}

fn metadata<'a, S: Serialize>(
    command: &'a str,
    tables: &[&str],
    file: &'a ConfigFile,
    summary: S,
) -> Metadata<'a, ConfigFile, S> {
    Metadata {
        version: version_string(),
        command,
        tables: tables.iter().map(|t| t.to_string()).collect(),
        master_seed: file.seed,
        config: file,
        summary,
    }
}

fn run_estimate(file: &ConfigFile, cli: &RunConfig, save_to: Option<&Path>) -> Result<(), CliError> {
    let (inst, synth) = load_or_generate(file)?;
    if let Some(path) = save_to {
        save_instance(path, &inst, &synth)?;
    }
    let cfg = default_config(inst.n(), inst.d(), synth.sigma, file.privacy.budget()?, &file.calibration);
    let est = estimate(&ReportedDataset::truthful(&inst), &cfg)?;
    let record = EstimateRecord::new(&est, &cfg, Some(&inst.theta_star));
    if cli.out.is_some() {
        write_json(&output_dir(cli)?.join("estimate.json"), &record)?;
    }
    let text = serde_json::to_string_pretty(&record).map_err(|e| CliError::Config(e.to_string()))?;
    // a closed pipe on stdout is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

#[derive(Serialize)]
struct MechanismSummary {
    n: usize,
    misreported: usize,
    a1: f64,
    a2: f64,
    tau: f64,
    total_payment: f64,
    budget_bound: f64,
    theta_bar_full: Vec<f64>,
    theta_bar_g0: Vec<f64>,
    theta_bar_g1: Vec<f64>,
    warnings: Vec<String>,
}

fn run_mechanism_once(file: &ConfigFile, cli: &RunConfig) -> Result<(), CliError> {
    let (inst, synth) = load_or_generate(file)?;
    let n = inst.n();
    let mut sched = file.schedule.clone();
    sched.base = synth.clone();
    let (_, mut cfg) = corollary_params(n, &sched)?;
    cfg.est_cfg = default_config(n, inst.d(), synth.sigma, file.privacy.budget()?, &file.calibration);
    file.mechanism.apply(&mut cfg);
    let seed = file.mechanism_seed();
    cfg.partition_seed = derive_seed(seed, &[2]);
    let population = Population::new(&synth, inst.theta_star.clone(), &inst.sigma)?;
    let reported = apply_threshold_strategy(&inst.agents, &cfg, &population, &mut derived_rng(seed, &[1]));
    let out = run_mechanism(&reported, &cfg, &inst.costs())?;

    let dir = output_dir(cli)?;
    let rows = agent_rows(&out);
    write_table(&dir.join("agents.csv"), &rows)?;
    let summary = MechanismSummary {
        n,
        misreported: reported.misreported_count(),
        a1: cfg.a1,
        a2: cfg.a2,
        tau: cfg.threshold(),
        total_payment: out.total_payment(),
        budget_bound: cfg.budget_bound(n),
        theta_bar_full: out.theta_bar_full.iter().copied().collect(),
        theta_bar_g0: out.theta_bar_g0.iter().copied().collect(),
        theta_bar_g1: out.theta_bar_g1.iter().copied().collect(),
        warnings: out.warnings.clone(),
    };
    println!(
        "mechanism: n = {n}, {} misreported, total payment {:.6e} <= bound {:.6e}",
        summary.misreported, summary.total_payment, summary.budget_bound
    );
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    write_json(&dir.join("mechanism.meta.json"), &metadata("mechanism", &["agents.csv"], file, summary))?;
    if cli.plot {
        let mut pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.c_i, r.pi_i)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        log_log_chart(&dir.join("agents.svg"), "Payment by privacy-cost coefficient", "c_i", "payment", &[Series::new(
            "payment", pts,
        )])?;
    }
    Ok(())
}

fn run_experiments(file: &ConfigFile, cli: &RunConfig, kind: ExperimentKind) -> Result<(), CliError> {
    let dir = output_dir(cli)?;
    let all = kind == ExperimentKind::All;
    if all || kind == ExperimentKind::Accuracy {
        accuracy(file, cli, &dir)?;
    }
    if all || kind == ExperimentKind::Truthfulness {
        truthfulness(file, cli, &dir)?;
    }
    if all || kind == ExperimentKind::Budget {
        budget(file, cli, &dir)?;
    }
    if all || kind == ExperimentKind::Rationality {
        rationality(file, cli, &dir)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AccuracySummary<'a> {
    points: &'a [crate::experiments::GridPoint],
    slope: Option<f64>,
    target_slope: f64,
    slope_within_tolerance: bool,
    increases: usize,
    trend_ok: bool,
}

fn accuracy(file: &ConfigFile, cli: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let rep = run_accuracy_experiment(&file.schedule)?;
    write_table(&dir.join("accuracy.csv"), &rep.rows)?;
    write_table(&dir.join("accuracy_points.csv"), &rep.points)?;
    let summary = AccuracySummary {
        points: &rep.points,
        slope: rep.slope,
        target_slope: rep.target_slope,
        slope_within_tolerance: rep.slope_within_tolerance,
        increases: rep.increases,
        trend_ok: rep.trend_ok,
    };
    write_json(
        &dir.join("accuracy.meta.json"),
        &metadata("experiment accuracy", &["accuracy.csv", "accuracy_points.csv"], file, summary),
    )?;
    println!(
        "accuracy: slope {} (target {:.3} +- {}), {} increase(s)",
        rep.slope.map_or("n/a".to_string(), |s| format!("{s:.3}")),
        rep.target_slope,
        file.schedule.slope_tolerance,
        rep.increases
    );
    if cli.plot {
        let pts = rep.points.iter().map(|p| (p.n as f64, p.mean)).collect();
        log_log_chart(&dir.join("accuracy.svg"), "Squared error of the released estimate", "n", "mean squared error", &[
            Series::new("mean error", pts),
        ])?;
    }
    Ok(())
}

fn truthfulness(file: &ConfigFile, cli: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let rep = run_truthfulness_experiment(&file.schedule)?;
    write_table(&dir.join("truthfulness.csv"), &rep.rows)?;
    write_json(
        &dir.join("truthfulness.meta.json"),
        &metadata("experiment truthfulness", &["truthfulness.csv"], file, &rep.trends),
    )?;
    for t in &rep.trends {
        println!(
            "truthfulness [{}]: strictly decreasing {}, eta/a1 at max n {:.3e}, null calibrated {}",
            t.model, t.strictly_decreasing, t.ratio_to_a1_at_max_n, t.null_calibrated
        );
    }
    if cli.plot {
        let series: Vec<Series> = rep
            .trends
            .iter()
            .map(|t| {
                let pts = rep.rows.iter().filter(|r| r.model == t.model).map(|r| (r.n as f64, r.eta_hat)).collect();
                Series::new(t.model, pts)
            })
            .collect();
        log_log_chart(&dir.join("truthfulness.svg"), "Largest expected deviation gain", "n", "eta_hat", &series)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BudgetSummary<'a> {
    points: &'a [crate::experiments::GridPoint],
    bound_exponent: f64,
    factorization_error: f64,
    empirical_slope: Option<f64>,
    runs_checked: usize,
}

fn budget(file: &ConfigFile, cli: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let rep = run_budget_experiment(&file.schedule)?;
    write_table(&dir.join("budget.csv"), &rep.rows)?;
    write_table(&dir.join("budget_points.csv"), &rep.points)?;
    let summary = BudgetSummary {
        points: &rep.points,
        bound_exponent: rep.bound_exponent,
        factorization_error: rep.factorization_error,
        empirical_slope: rep.empirical_slope,
        runs_checked: rep.runs_checked,
    };
    write_json(
        &dir.join("budget.meta.json"),
        &metadata("experiment budget", &["budget.csv", "budget_points.csv"], file, summary),
    )?;
    println!(
        "budget: {} runs within the bound, bound exponent {:.3}, empirical slope {}",
        rep.runs_checked,
        rep.bound_exponent,
        rep.empirical_slope.map_or("n/a".to_string(), |s| format!("{s:.3}"))
    );
    if cli.plot {
        let total = rep.points.iter().map(|p| (p.n as f64, p.mean)).collect();
        let bound = file
            .schedule
            .n_grid
            .iter()
            .filter_map(|&n| rep.rows.iter().find(|r| r.n == n).map(|r| (n as f64, r.bound)))
            .collect();
        log_log_chart(&dir.join("budget.svg"), "Total payment and its bound", "n", "payment", &[
            Series::new("mean total payment", total),
            Series::new("bound", bound),
        ])?;
    }
    Ok(())
}

fn rationality(file: &ConfigFile, cli: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let rep = run_rationality_experiment(&file.schedule)?;
    write_table(&dir.join("rationality.csv"), &rep.rows)?;
    let checks: Vec<(usize, bool, bool)> =
        rep.rows.iter().map(|r| (r.n, r.utility_ok(), r.participation_ok())).collect();
    write_json(
        &dir.join("rationality.meta.json"),
        &metadata("experiment rationality", &["rationality.csv"], file, &checks),
    )?;
    for r in &rep.rows {
        println!(
            "rationality: n = {}, utility ok {}, participation ok {}, min mean utility {:.3e}",
            r.n,
            r.utility_ok(),
            r.participation_ok(),
            r.min_mean_utility
        );
    }
    if cli.plot {
        let within = rep.rows.iter().map(|r| (r.n as f64, r.frac_within_3se)).collect();
        let below = rep.rows.iter().map(|r| (r.n as f64, r.frac_below_threshold)).collect();
        log_log_chart(&dir.join("rationality.svg"), "Individual rationality", "n", "fraction", &[
            Series::new("utility >= -3 se", within),
            Series::new("below threshold", below),
        ])?;
    }
    Ok(())
}
