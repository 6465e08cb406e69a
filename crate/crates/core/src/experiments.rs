//! Scaling studies under the polynomial parameter schedule
//! `eps = n^-xi`, `delta = n^-delta_exponent`, `alpha ~ n^-3xi`, `beta ~ n^-c`, `a2 ~ n^-3xi`.
//!
//! Trials run on the ambient rayon pool; results are collected in trial order
//! and reduced sequentially, so output never depends on the thread count.

use rand::Rng as _;
use rand_distr::Exp;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ReportedDataset;
use crate::estimator::{default_config, estimate, Calibration, EstimatorError, PrivacyBudget};
use crate::mechanism::{
    apply_threshold_strategy, billboard_payment, collect_completed, deviation_gain, mean_and_stderr, run_mechanism,
    tau_alpha_beta_bound, MechanismConfig, MechanismError, MechanismOutcome, MisreportModel,
};
use crate::rng::{derive_seed, derived_rng};
use crate::synth::{sample_instance, Population, RegressionInstance, SynthConfig, SynthError};

// Seed-path tags. No seed depends on `n`: trial `t` reuses the same agent prefix,
// noise stream, and report draws at every grid size, so differences between grid
// points are not swamped by independent Monte Carlo noise.
const TAG_INSTANCE: u64 = 1;
const TAG_NOISE: u64 = 2;
const TAG_REPORT: u64 = 3;
const TAG_PARTITION: u64 = 4;
const TAG_DEVIATION: u64 = 5;
const TAG_COST: u64 = 6;
const TAG_AGENT: u64 = 7;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("hard assertion failed: {0}")]
    HardAssertion(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Mechanism(MechanismError),
}

impl From<MechanismError> for ExperimentError {
    fn from(e: MechanismError) -> Self {
        match e {
            MechanismError::BudgetViolation { .. } => ExperimentError::HardAssertion(e.to_string()),
            other => ExperimentError::Mechanism(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorollarySchedule {
    pub xi: f64,
    pub c: f64,
    pub delta_exponent: f64,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub base: SynthConfig,
    pub calibration: Calibration,
    /// Constants in front of `n^-3xi` for alpha and a2, and `n^-c` for beta.
    pub alpha_scale: f64,
    pub beta_scale: f64,
    pub a2_scale: f64,
    pub prior_scale: f64,
    pub resp_noise: f64,
    pub misreport_model: MisreportModel,
    pub cost_realization: f64,
    /// Candidate misreports per randomized misreport model in the truthfulness study.
    pub deviation_draws: usize,
    /// Agents eligible for the truthfulness study are drawn from this prefix.
    pub agent_pool: usize,
    pub slope_tolerance: f64,
    pub seed: u64,
}

impl Default for CorollarySchedule {
    fn default() -> Self {
        Self {
            xi: 0.4,
            c: 1.0,
            delta_exponent: 1.5,
            n_grid: vec![1024, 2048, 4096, 8192],
            trials: 20,
            base: SynthConfig { d: 2, k: 1, ..SynthConfig::default() },
            calibration: Calibration { m_r: 0.4, m_x: 0.4, m_y: 1.0, m_lambda: 0.01, ..Calibration::default() },
            alpha_scale: 1.0,
            beta_scale: 1.0,
            a2_scale: 1.0,
            prior_scale: 1.0,
            resp_noise: 1.0,
            misreport_model: MisreportModel::Resample,
            cost_realization: 1.0,
            deviation_draws: 4,
            agent_pool: 500,
            slope_tolerance: 0.35,
            seed: 0,
        }
    }
}

impl CorollarySchedule {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: String| Err(ExperimentError::InvalidSchedule(m));
        if !(self.xi > 1.0 / 3.0 && self.xi < 0.5) {
            return fail(format!("xi must lie in (1/3, 1/2), got {}", self.xi));
        }
        if !(self.c > 0.0) {
            return fail(format!("c must be > 0, got {}", self.c));
        }
        if !(self.delta_exponent > 1.0) {
            return fail(format!("delta_exponent must be > 1, got {}", self.delta_exponent));
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("n_grid must be non-empty and strictly increasing, got {:?}", self.n_grid));
        }
        if self.trials == 0 {
            return fail("trials must be >= 1".into());
        }
        if self.deviation_draws == 0 || self.agent_pool == 0 {
            return fail("deviation_draws and agent_pool must be >= 1".into());
        }
        for (name, v) in [("alpha_scale", self.alpha_scale), ("beta_scale", self.beta_scale), ("a2_scale", self.a2_scale)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.slope_tolerance >= 0.0) {
            return fail("slope_tolerance must be >= 0".into());
        }
        let mut probe = self.base.clone();
        probe.n = self.n_grid[0];
        probe.validate()?;
        for &n in &self.n_grid {
            corollary_params(n, self)?;
        }
        Ok(())
    }

    fn synth_for(&self, n: usize, trial: usize) -> SynthConfig {
        SynthConfig { n, seed: derive_seed(self.seed, &[TAG_INSTANCE, trial as u64]), ..self.base.clone() }
    }
}

/// Privacy budget and mechanism configuration for sample size `n`.
///
/// ```text
/// eps = n^-xi     delta = n^-delta_exponent
/// alpha = s_a n^-3xi    beta = s_b n^-c    a2 = s_2 n^-3xi
/// tau = ln(1/(alpha beta)) / cost_rate
/// a1 = a2 (r tau_theta + 3 r^2 tau_theta^2) + tau 8 (1 + 3 delta) eps^3
/// ```
pub fn corollary_params(n: usize, sched: &CorollarySchedule) -> Result<(PrivacyBudget, MechanismConfig), ExperimentError> {
    let nf = n as f64;
    let eps = nf.powf(-sched.xi);
    let delta = nf.powf(-sched.delta_exponent);
    let alpha = sched.alpha_scale * nf.powf(-3.0 * sched.xi);
    let beta = sched.beta_scale * nf.powf(-sched.c);
    if !(alpha > 0.0 && alpha < 1.0) || !(beta > 0.0 && beta < 1.0) {
        return Err(ExperimentError::InvalidSchedule(format!(
            "n = {n} gives alpha = {alpha}, beta = {beta}; both must lie in (0, 1)"
        )));
    }
    let budget = PrivacyBudget::new(eps, delta)
        .map_err(|e| ExperimentError::InvalidSchedule(format!("n = {n}: {e}")))?;
    let est_cfg = default_config(n, sched.base.d, sched.base.sigma, budget, &sched.calibration);
    let a2 = sched.a2_scale * nf.powf(-3.0 * sched.xi);
    let tau = tau_alpha_beta_bound(alpha, beta, sched.base.cost_rate);
    let mut cfg = MechanismConfig {
        a1: 0.0,
        a2,
        alpha,
        beta,
        cost_rate: sched.base.cost_rate,
        tau: Some(tau),
        est_cfg,
        prior_scale: sched.prior_scale,
        resp_noise: sched.resp_noise,
        misreport_model: sched.misreport_model,
        cost_realization: sched.cost_realization,
        partition_seed: 0,
    };
    cfg.a1 = cfg.ir_bound();
    cfg.validate()?;
    Ok((budget, cfg))
}

/// Least-squares slope of `ln y` against `ln x`. `None` with fewer than two
/// points or a non-positive value.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Number of adjacent pairs where the sequence goes up.
pub fn count_increases(ys: &[f64]) -> usize {
    ys.windows(2).filter(|w| w[1] > w[0]).count()
}

fn population_of(inst: &RegressionInstance, cfg: &SynthConfig) -> Result<Population, SynthError> {
    Population::new(cfg, inst.theta_star.clone(), &inst.sigma)
}

/// Mechanism run with per-trial seeds; singular private covariances become `None`.
/// Every completed run is checked for billboard isolation.
fn checked_run(
    reported: &ReportedDataset,
    cfg: &MechanismConfig,
    costs: &[f64],
    seed: u64,
    n: usize,
    trial: usize,
) -> Result<Option<MechanismOutcome>, ExperimentError> {
    let mut run_cfg = cfg.clone();
    run_cfg.partition_seed = derive_seed(seed, &[TAG_PARTITION, trial as u64]);
    run_cfg.est_cfg.seed = derive_seed(seed, &[TAG_NOISE, trial as u64]);
    let out = match run_mechanism(reported, &run_cfg, costs) {
        Ok(out) => out,
        Err(e) if e.is_singular() => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let params = run_cfg.payment_params();
    for i in 0..out.n() {
        let peer = out.peer_estimate(out.group_assignment[i]);
        let again = billboard_payment(&reported.records[i], peer, &params).map_err(MechanismError::from)?;
        if again.payment.to_bits() != out.payments[i].to_bits() {
            return Err(ExperimentError::HardAssertion(format!(
                "payment of agent {i} at n = {n}, trial {trial} is not reproducible from its own report and the peer estimate"
            )));
        }
    }
    Ok(Some(out))
}

// ---------------------------------------------------------------- accuracy

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub n: usize,
    pub trial: usize,
    /// Empty when the private covariance was singular.
    pub squared_error: Option<f64>,
    pub censored: bool,
    pub misreported: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub used: usize,
    pub censored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub rows: Vec<AccuracyRow>,
    pub points: Vec<GridPoint>,
    pub slope: Option<f64>,
    pub target_slope: f64,
    pub slope_within_tolerance: bool,
    pub increases: usize,
    /// Mean error never goes up more than once along the grid.
    pub trend_ok: bool,
}

fn grid_points(rows: impl Iterator<Item = (usize, Option<f64>)>, grid: &[usize]) -> Vec<GridPoint> {
    let rows: Vec<(usize, Option<f64>)> = rows.collect();
    grid.iter()
        .map(|&n| {
            let vals: Vec<f64> = rows.iter().filter(|r| r.0 == n).filter_map(|r| r.1).collect();
            let censored = rows.iter().filter(|r| r.0 == n && r.1.is_none()).count();
            let (mean, stderr) = if vals.is_empty() { (f64::NAN, f64::NAN) } else { mean_and_stderr(&vals) };
            GridPoint { n, mean, stderr, used: vals.len(), censored }
        })
        .collect()
}

/// Squared error of the released estimate on threshold-strategy reports, per
/// grid size and trial, with a log-log slope fit of the mean error.
pub fn run_accuracy_experiment(sched: &CorollarySchedule) -> Result<AccuracyReport, ExperimentError> {
    sched.validate()?;
    let mut rows = Vec::new();
    for &n in &sched.n_grid {
        let (_, cfg) = corollary_params(n, sched)?;
        let chunk: Vec<AccuracyRow> = (0..sched.trials)
            .into_par_iter()
            .map(|t| -> Result<AccuracyRow, ExperimentError> {
                let scfg = sched.synth_for(n, t);
                let inst = sample_instance(&scfg)?;
                let pop = population_of(&inst, &scfg)?;
                let mut rng = derived_rng(sched.seed, &[TAG_REPORT, t as u64]);
                let reported = apply_threshold_strategy(&inst.agents, &cfg, &pop, &mut rng);
                let mut est_cfg = cfg.est_cfg.clone();
                est_cfg.seed = derive_seed(sched.seed, &[TAG_NOISE, t as u64]);
                let squared_error = match estimate(&reported, &est_cfg) {
                    Ok(e) => Some((e.theta_bar - &inst.theta_star).norm_squared()),
                    Err(EstimatorError::SingularCovariance { .. }) => None,
                    Err(e) => return Err(e.into()),
                };
                Ok(AccuracyRow {
                    n,
                    trial: t,
                    censored: squared_error.is_none(),
                    squared_error,
                    misreported: reported.misreported_count(),
                })
            })
            .collect::<Result<_, _>>()?;
        rows.extend(chunk);
    }
    let points = grid_points(rows.iter().map(|r| (r.n, r.squared_error)), &sched.n_grid);
    let usable: Vec<&GridPoint> = points.iter().filter(|p| p.used > 0).collect();
    let slope = log_log_slope(
        &usable.iter().map(|p| p.n as f64).collect::<Vec<_>>(),
        &usable.iter().map(|p| p.mean).collect::<Vec<_>>(),
    );
    let target_slope = 2.0 * sched.xi - 1.0;
    let means: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let increases = count_increases(&means);
    Ok(AccuracyReport {
        slope_within_tolerance: slope.is_some_and(|s| (s - target_slope).abs() <= sched.slope_tolerance),
        trend_ok: usable.len() == points.len() && increases <= 1,
        rows,
        points,
        slope,
        target_slope,
        increases,
    })
}

// ---------------------------------------------------------------- truthfulness

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthfulnessRow {
    pub n: usize,
    pub model: &'static str,
    pub agent: usize,
    pub eta_hat: f64,
    pub stderr: f64,
    pub null_gain: f64,
    pub null_stderr: f64,
    pub a1: f64,
    pub trials: usize,
    pub censored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelTrend {
    pub model: &'static str,
    pub strictly_decreasing: bool,
    /// `eta_hat / a1` at the largest grid size.
    pub ratio_to_a1_at_max_n: f64,
    /// Every null deviation lies within two standard errors of zero.
    pub null_calibrated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthfulnessReport {
    pub rows: Vec<TruthfulnessRow>,
    pub trends: Vec<ModelTrend>,
    pub agent: usize,
}

/// Candidate misreports for `model`. Randomized models share their underlying
/// uniform draws across grid sizes.
fn candidate_reports(
    model: MisreportModel,
    y: f64,
    tau_y: f64,
    pop: &Population,
    draws: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = derived_rng(seed, &[TAG_DEVIATION, model as u64]);
    match model {
        MisreportModel::Zero => vec![0.0],
        MisreportModel::SignFlip => vec![-y],
        MisreportModel::UniformNoise => {
            (0..draws).map(|_| y + 2.0 * tau_y * rng.gen_range(-1.0..=1.0)).collect()
        }
        MisreportModel::Resample => (0..draws).map(|_| pop.sample_response(&mut rng)).collect(),
    }
}

/// Expected gain of one below-threshold agent from misreporting, per grid size and
/// misreport model, with the others playing the threshold strategy. The agent is
/// chosen once, from the first `agent_pool` agents of the smallest instance, and is
/// the same person at every grid size.
pub fn run_truthfulness_experiment(sched: &CorollarySchedule) -> Result<TruthfulnessReport, ExperimentError> {
    sched.validate()?;
    let n0 = sched.n_grid[0];
    let (_, cfg0) = corollary_params(n0, sched)?;
    let first = sample_instance(&sched.synth_for(n0, 0))?;
    let pool: Vec<usize> = (0..sched.agent_pool.min(n0))
        .filter(|&i| first.agents[i].c <= cfg0.threshold())
        .collect();
    if pool.is_empty() {
        return Err(ExperimentError::InvalidSchedule("no below-threshold agent in the candidate pool".into()));
    }
    let agent = pool[derived_rng(sched.seed, &[TAG_AGENT]).gen_range(0..pool.len())];

    let mut rows = Vec::new();
    for &n in &sched.n_grid {
        let (_, base_cfg) = corollary_params(n, sched)?;
        let scfg = sched.synth_for(n, 0);
        let inst = sample_instance(&scfg)?;
        let pop = population_of(&inst, &scfg)?;
        let me = &inst.agents[agent];
        for (m, model) in MisreportModel::ALL.into_iter().enumerate() {
            let cfg = MechanismConfig { misreport_model: model, ..base_cfg.clone() };
            let mut deviations =
                candidate_reports(model, me.y, cfg.est_cfg.tau_y, &pop, sched.deviation_draws, sched.seed);
            deviations.retain(|v| *v != me.y);
            deviations.push(me.y);
            let dev_seed = derive_seed(sched.seed, &[TAG_DEVIATION, m as u64, 1]);
            let g = deviation_gain(&inst.agents, agent, &pop, &cfg, &deviations, sched.trials, dev_seed)?;
            let (null, real) = g.per_deviation.split_last().expect("null deviation appended");
            let best = real
                .iter()
                .copied()
                .reduce(|a, b| if b.mean_gain > a.mean_gain { b } else { a })
                .unwrap_or(*null);
            rows.push(TruthfulnessRow {
                n,
                model: model.name(),
                agent,
                eta_hat: best.mean_gain,
                stderr: best.stderr,
                null_gain: null.mean_gain,
                null_stderr: null.stderr,
                a1: cfg.a1,
                trials: g.trials,
                censored: g.censored,
            });
        }
    }
    let trends = MisreportModel::ALL
        .into_iter()
        .map(|model| {
            let series: Vec<&TruthfulnessRow> = rows.iter().filter(|r| r.model == model.name()).collect();
            let last = series.last().expect("grid is non-empty");
            ModelTrend {
                model: model.name(),
                strictly_decreasing: series.windows(2).all(|w| w[1].eta_hat < w[0].eta_hat),
                ratio_to_a1_at_max_n: last.eta_hat / last.a1,
                null_calibrated: series.iter().all(|r| r.null_gain.abs() <= 2.0 * r.null_stderr),
            }
        })
        .collect();
    Ok(TruthfulnessReport { rows, trends, agent })
}

// ---------------------------------------------------------------- budget

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetRow {
    pub n: usize,
    pub trial: usize,
    /// Empty when the run was censored.
    pub total_payment: Option<f64>,
    pub bound: f64,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    pub rows: Vec<BudgetRow>,
    pub points: Vec<GridPoint>,
    /// Power of `n` in the bound, `1 - 3 xi`.
    pub bound_exponent: f64,
    /// Largest relative gap between the bound and `n^(1 - 3 xi)` times its log factor.
    pub factorization_error: f64,
    pub empirical_slope: Option<f64>,
    pub runs_checked: usize,
}

/// Exponent of `n` in the budget bound under the schedule: `n` times payments
/// of order `n^-3xi`.
pub fn budget_bound_exponent(sched: &CorollarySchedule) -> f64 {
    1.0 - 3.0 * sched.xi
}

/// The budget bound divided by `n^(1 - 3 xi)`: a function of `ln n` alone.
pub fn budget_bound_log_factor(n: usize, sched: &CorollarySchedule) -> f64 {
    let l = (n as f64).ln();
    let cal = &sched.calibration;
    let r = cal.m_r * sched.base.sigma * l.sqrt();
    let t = cal.tau_theta;
    let tau = ((3.0 * sched.xi + sched.c) * l - (sched.alpha_scale * sched.beta_scale).ln()) / sched.base.cost_rate;
    let delta = (-sched.delta_exponent * l).exp();
    sched.a2_scale * (r * t + 3.0 * r * r * t * t)
        + tau * 8.0 * (1.0 + 3.0 * delta)
        + sched.a2_scale * (r * t + r * r * t * t)
}

/// Total payments against the analytic bound on every run; any excess aborts.
pub fn run_budget_experiment(sched: &CorollarySchedule) -> Result<BudgetReport, ExperimentError> {
    sched.validate()?;
    let mut rows = Vec::new();
    let mut factorization_error: f64 = 0.0;
    for &n in &sched.n_grid {
        let (_, cfg) = corollary_params(n, sched)?;
        let bound = cfg.budget_bound(n);
        let factored = (n as f64).powf(budget_bound_exponent(sched)) * budget_bound_log_factor(n, sched);
        factorization_error = factorization_error.max((bound - factored).abs() / bound);
        let chunk: Vec<BudgetRow> = (0..sched.trials)
            .into_par_iter()
            .map(|t| -> Result<BudgetRow, ExperimentError> {
                let scfg = sched.synth_for(n, t);
                let inst = sample_instance(&scfg)?;
                let pop = population_of(&inst, &scfg)?;
                let mut rng = derived_rng(sched.seed, &[TAG_REPORT, t as u64]);
                let reported = apply_threshold_strategy(&inst.agents, &cfg, &pop, &mut rng);
                let out = checked_run(&reported, &cfg, &inst.costs(), sched.seed, n, t)?;
                let total_payment = out.map(|o| o.total_payment());
                Ok(BudgetRow { n, trial: t, total_payment, bound, censored: total_payment.is_none() })
            })
            .collect::<Result<_, _>>()?;
        rows.extend(chunk);
    }
    let points = grid_points(rows.iter().map(|r| (r.n, r.total_payment)), &sched.n_grid);
    let usable: Vec<&GridPoint> = points.iter().filter(|p| p.used > 0).collect();
    let empirical_slope = log_log_slope(
        &usable.iter().map(|p| p.n as f64).collect::<Vec<_>>(),
        &usable.iter().map(|p| p.mean).collect::<Vec<_>>(),
    );
    let runs_checked = rows.iter().filter(|r| !r.censored).count();
    Ok(BudgetReport {
        rows,
        points,
        bound_exponent: budget_bound_exponent(sched),
        factorization_error,
        empirical_slope,
        runs_checked,
    })
}

// ---------------------------------------------------------------- rationality

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RationalityRow {
    pub n: usize,
    pub below_threshold_agents: usize,
    /// Share of below-threshold agents whose mean utility is >= 0.
    pub frac_nonneg_utility: f64,
    /// Share whose mean utility is >= -3 standard errors.
    pub frac_within_3se: f64,
    pub min_mean_utility: f64,
    /// Mean over trials of the fraction of fresh costs at or below the threshold.
    pub frac_below_threshold: f64,
    /// Share of trials in which that fraction reached `1 - alpha`.
    pub share_meeting_alpha: f64,
    pub one_minus_alpha: f64,
    pub one_minus_beta: f64,
    pub trials: usize,
    pub censored: usize,
}

impl RationalityRow {
    pub fn utility_ok(&self) -> bool {
        self.frac_within_3se == 1.0
    }

    pub fn participation_ok(&self) -> bool {
        self.share_meeting_alpha >= self.one_minus_beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RationalityReport {
    pub rows: Vec<RationalityRow>,
    pub runs_checked: usize,
}

/// Per-agent Monte Carlo utilities on a fixed population (fresh partition, noise,
/// and misreports each trial), and the below-threshold fraction over fresh cost draws.
/// Censored runs are replaced until `trials` runs complete.
pub fn run_rationality_experiment(sched: &CorollarySchedule) -> Result<RationalityReport, ExperimentError> {
    sched.validate()?;
    let mut rows = Vec::new();
    let mut runs_checked = 0;
    for &n in &sched.n_grid {
        let (_, cfg) = corollary_params(n, sched)?;
        let tau = cfg.threshold();
        let scfg = sched.synth_for(n, 0);
        let inst = sample_instance(&scfg)?;
        let pop = population_of(&inst, &scfg)?;
        let costs = inst.costs();
        let exp = Exp::new(sched.base.cost_rate).expect("validated cost rate");

        let (used, censored) = collect_completed(sched.trials, |t| -> Result<Option<Vec<f64>>, ExperimentError> {
            let mut rng = derived_rng(sched.seed, &[TAG_REPORT, t as u64]);
            let reported = apply_threshold_strategy(&inst.agents, &cfg, &pop, &mut rng);
            Ok(checked_run(&reported, &cfg, &costs, sched.seed, n, t)?.map(|o| o.utilities))
        })?;
        let fracs: Vec<f64> = (0..sched.trials)
            .into_par_iter()
            .map(|t| {
                let mut cost_rng = derived_rng(sched.seed, &[TAG_COST, t as u64]);
                (0..n).filter(|_| cost_rng.sample(exp) <= tau).count() as f64 / n as f64
            })
            .collect();
        runs_checked += used.len();
        let below_agents: Vec<usize> = (0..n).filter(|&i| costs[i] <= tau).collect();
        let mut nonneg = 0usize;
        let mut within = 0usize;
        let mut min_mean = f64::INFINITY;
        for &i in &below_agents {
            let u: Vec<f64> = used.iter().map(|v| v[i]).collect();
            if u.is_empty() {
                continue;
            }
            let (mean, se) = mean_and_stderr(&u);
            nonneg += usize::from(mean >= 0.0);
            within += usize::from(mean >= -3.0 * se);
            min_mean = min_mean.min(mean);
        }
        let m = below_agents.len().max(1) as f64;
        let one_minus_alpha = 1.0 - cfg.alpha;
        rows.push(RationalityRow {
            n,
            below_threshold_agents: below_agents.len(),
            frac_nonneg_utility: if used.is_empty() { f64::NAN } else { nonneg as f64 / m },
            frac_within_3se: if used.is_empty() { f64::NAN } else { within as f64 / m },
            min_mean_utility: min_mean,
            frac_below_threshold: fracs.iter().sum::<f64>() / fracs.len() as f64,
            share_meeting_alpha: fracs.iter().filter(|f| **f >= one_minus_alpha).count() as f64 / fracs.len() as f64,
            one_minus_alpha,
            one_minus_beta: 1.0 - cfg.beta,
            trials: used.len(),
            censored,
        });
    }
    Ok(RationalityReport { rows, runs_checked })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorollarySchedule {
        CorollarySchedule { n_grid: vec![256, 512], trials: 4, ..CorollarySchedule::default() }
    }

    #[test]
    fn corollary_examples() {
        let sched = CorollarySchedule::default();
        let (b, cfg) = corollary_params(1024, &sched).unwrap();
        assert!((b.eps - 0.0625).abs() < 1e-12);
        assert!((b.delta - 1024f64.powf(-1.5)).abs() < 1e-18);
        assert!((cfg.alpha - 1024f64.powf(-1.2)).abs() < 1e-15);
        assert!((cfg.beta - 1.0 / 1024.0).abs() < 1e-15);
        assert_eq!(cfg.a1, cfg.ir_bound());
        assert!(corollary_params(1, &sched).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(CorollarySchedule::default().validate().is_ok());
        for bad in [
            CorollarySchedule { xi: 0.5, ..small() },
            CorollarySchedule { xi: 1.0 / 3.0, ..small() },
            CorollarySchedule { c: 0.0, ..small() },
            CorollarySchedule { delta_exponent: 1.0, ..small() },
            CorollarySchedule { n_grid: vec![512, 256], ..small() },
            CorollarySchedule { n_grid: vec![], ..small() },
            CorollarySchedule { trials: 0, ..small() },
        ] {
            assert!(matches!(bad.validate(), Err(ExperimentError::InvalidSchedule(_))), "{bad:?}");
        }
    }

    #[test]
    fn slope_fit() {
        let xs = [10.0, 100.0, 1000.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.7)).collect();
        assert!((log_log_slope(&xs, &ys).unwrap() + 0.7).abs() < 1e-12);
        assert_eq!(log_log_slope(&[1.0], &[1.0]), None);
        assert_eq!(log_log_slope(&[1.0, 2.0], &[1.0, 0.0]), None);
        assert_eq!(count_increases(&[3.0, 2.0, 2.5, 1.0]), 1);
    }

    #[test]
    fn bound_factorizes_exactly() {
        let sched = CorollarySchedule::default();
        for n in [100usize, 1024, 5000, 1 << 20] {
            let (_, cfg) = corollary_params(n, &sched).unwrap();
            let f = (n as f64).powf(budget_bound_exponent(&sched)) * budget_bound_log_factor(n, &sched);
            assert!((cfg.budget_bound(n) - f).abs() <= 1e-12 * f);
        }
        assert!((budget_bound_exponent(&sched) - (1.0 - 1.2)).abs() < 1e-15);
    }

    #[test]
    fn accuracy_is_reproducible() {
        let a = run_accuracy_experiment(&small()).unwrap();
        let b = run_accuracy_experiment(&small()).unwrap();
        // censored grid points carry NaN means, so compare the printed form
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert_eq!(a.rows.len(), 8);
        for r in &a.rows {
            assert_eq!(r.censored, r.squared_error.is_none());
        }
    }

    #[test]
    fn noiseless_truthful_error_shrinks() {
        use crate::estimator::NoiseMode;
        let sched = CorollarySchedule {
            n_grid: vec![500, 50_000],
            calibration: Calibration {
                noise_mode: NoiseMode::Disabled,
                m_r: 3.0,
                m_x: 3.0,
                m_y: 3.0,
                m_lambda: 0.0,
                ..Calibration::default()
            },
            ..CorollarySchedule::default()
        };
        let mut errs = Vec::new();
        for &n in &sched.n_grid {
            let (_, mut cfg) = corollary_params(n, &sched).unwrap();
            // the hard threshold carries a privacy term even without noise
            cfg.est_cfg.thres = 0.0;
            let inst = sample_instance(&sched.synth_for(n, 0)).unwrap();
            let e = estimate(&ReportedDataset::truthful(&inst), &cfg.est_cfg).unwrap();
            errs.push((e.theta_bar - &inst.theta_star).norm_squared());
        }
        assert!(errs[1] < errs[0] && errs[1] < 1e-3, "{errs:?}");
    }

    #[test]
    fn budget_never_exceeded() {
        let rep = run_budget_experiment(&small()).unwrap();
        for r in &rep.rows {
            if let Some(t) = r.total_payment {
                assert!(t <= r.bound);
            }
        }
        assert!(rep.factorization_error < 1e-12);
    }

    #[test]
    fn zero_a2_and_tiny_threshold_pays_n_a1() {
        let sched = CorollarySchedule { a2_scale: 1e-300, ..small() };
        let rep = run_budget_experiment(&sched).unwrap();
        for r in rep.rows.iter().filter(|r| !r.censored) {
            let (_, cfg) = corollary_params(r.n, &sched).unwrap();
            let t = r.total_payment.unwrap();
            assert!((t - r.n as f64 * cfg.a1).abs() <= 1e-9 * t);
        }
    }

    #[test]
    fn rationality_rows() {
        let rep = run_rationality_experiment(&small()).unwrap();
        assert_eq!(rep.rows.len(), 2);
        for r in &rep.rows {
            if r.trials > 0 {
                assert!(r.utility_ok());
                assert!(r.min_mean_utility >= 0.0);
            }
        }
    }

    #[test]
    fn zero_cost_realization_utilities_equal_payments() {
        let sched = CorollarySchedule { cost_realization: 0.0, ..small() };
        let (_, cfg) = corollary_params(256, &sched).unwrap();
        assert_eq!(cfg.privacy_cost(5.0), 0.0);
        let rep = run_rationality_experiment(&sched).unwrap();
        assert!(rep.rows.iter().all(|r| r.trials == 0 || r.frac_nonneg_utility == 1.0));
    }

    #[test]
    fn truthfulness_null_is_zero() {
        let sched = CorollarySchedule { n_grid: vec![256, 512], trials: 6, ..CorollarySchedule::default() };
        let rep = run_truthfulness_experiment(&sched).unwrap();
        assert_eq!(rep.rows.len(), 8);
        for r in &rep.rows {
            assert_eq!(r.null_gain, 0.0);
            assert_eq!(r.agent, rep.agent);
        }
    }
}
