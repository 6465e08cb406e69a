//! Truthful payment mechanism on top of the private estimator.
//!
//! Agents report responses, the analyst splits them into two random groups,
//! fits the private estimator on everyone and on each group, and pays agent `i`
//! (in group `g`) with the rescaled Brier score
//!
//! ```text
//! B(p, q) = a1 - a2 (p - 2 p q + q^2)
//! p = <xbar_i, theta_bar(group 1 - g)>      (peer prediction)
//! q = <xbar_i, E[theta | own report]>       (own prediction)
//! ```
//!
//! The payment of agent `i` is computed from its own report and the opposite
//! group's released estimate only; [`billboard_payment`] is the single entry
//! point that enforces this.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Provenance, Report, ReportedDataset};
use crate::estimator::{estimate_with_rng, EstimatorConfig, EstimatorError};
use crate::numerics::{clip_l2, project_l2_ball, NumericsError, Vector};
use crate::rng::{derive_seed, derived_rng, rng_from_seed, Rng};
use crate::synth::{AgentRecord, Population};

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error("invalid mechanism configuration: {0}")]
    InvalidConfig(String),
    #[error("estimator failed on the {which} dataset: {source}")]
    Estimator {
        which: &'static str,
        #[source]
        source: EstimatorError,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("total payment {total:e} exceeds the budget bound {bound:e}")]
    BudgetViolation { total: f64, bound: f64 },
    #[error("too many of {trials} Monte Carlo attempts hit a singular private covariance")]
    AllTrialsCensored { trials: usize },
}

impl MechanismError {
    /// True when an estimator gave up on an ill-conditioned private covariance.
    pub fn is_singular(&self) -> bool {
        matches!(
            self,
            MechanismError::Estimator { source: EstimatorError::SingularCovariance { .. }, .. }
        )
    }
}

/// How an agent above the cost threshold picks its reported response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MisreportModel {
    /// Fresh draw from the marginal distribution of `y`.
    #[default]
    Resample,
    Zero,
    SignFlip,
    /// `y + Uniform(-2 tau_y, 2 tau_y)`.
    UniformNoise,
}

impl MisreportModel {
    pub const ALL: [MisreportModel; 4] = [
        MisreportModel::Resample,
        MisreportModel::Zero,
        MisreportModel::SignFlip,
        MisreportModel::UniformNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MisreportModel::Resample => "resample",
            MisreportModel::Zero => "zero",
            MisreportModel::SignFlip => "sign-flip",
            MisreportModel::UniformNoise => "uniform-noise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismConfig {
    pub a1: f64,
    pub a2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub cost_rate: f64,
    /// Operative cost threshold; `None` means the analytic bound `ln(1/(alpha beta)) / cost_rate`.
    #[serde(default)]
    pub tau: Option<f64>,
    pub est_cfg: EstimatorConfig,
    pub prior_scale: f64,
    pub resp_noise: f64,
    #[serde(default)]
    pub misreport_model: MisreportModel,
    /// Realized privacy cost as a fraction of its upper bound.
    #[serde(default = "one")]
    pub cost_realization: f64,
    #[serde(default)]
    pub partition_seed: u64,
}

fn one() -> f64 {
    1.0
}

impl MechanismConfig {
    pub fn validate(&self) -> Result<(), MechanismError> {
        let fail = |m: String| Err(MechanismError::InvalidConfig(m));
        if !(self.a1 >= 0.0 && self.a1.is_finite()) || !(self.a2 >= 0.0 && self.a2.is_finite()) {
            return fail(format!("a1, a2 must be finite and >= 0, got {} and {}", self.a1, self.a2));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v < 1.0) {
                return fail(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(self.cost_rate > 0.0 && self.cost_rate.is_finite()) {
            return fail(format!("cost_rate must be > 0, got {}", self.cost_rate));
        }
        if !(self.threshold() > 0.0) {
            return fail(format!("tau must be > 0, got {}", self.threshold()));
        }
        if !(self.prior_scale > 0.0) || !(self.resp_noise > 0.0) {
            return fail("prior_scale and resp_noise must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.cost_realization) {
            return fail(format!("cost_realization must lie in [0, 1], got {}", self.cost_realization));
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        self.tau
            .unwrap_or_else(|| tau_alpha_beta_bound(self.alpha, self.beta, self.cost_rate))
    }

    pub fn payment_params(&self) -> PaymentParams {
        PaymentParams {
            a1: self.a1,
            a2: self.a2,
            r: self.est_cfg.r,
            tau_theta: self.est_cfg.tau_theta,
            prior_scale: self.prior_scale,
            resp_noise: self.resp_noise,
        }
    }

    /// Smallest `a1` making truthful agents below the threshold individually rational:
    /// `a2 (r tau_theta + 3 r^2 tau_theta^2) + tau 8 (1 + 3 delta) eps^3`.
    pub fn ir_bound(&self) -> f64 {
        let (r, t) = (self.est_cfg.r, self.est_cfg.tau_theta);
        let b = self.est_cfg.budget;
        self.a2 * (r * t + 3.0 * r * r * t * t) + self.threshold() * 8.0 * (1.0 + 3.0 * b.delta) * b.eps.powi(3)
    }

    /// Analytic cap on total payments, `n (a1 + a2 (r tau_theta + r^2 tau_theta^2))`.
    pub fn budget_bound(&self, n: usize) -> f64 {
        let (r, t) = (self.est_cfg.r, self.est_cfg.tau_theta);
        n as f64 * (self.a1 + self.a2 * (r * t + r * r * t * t))
    }

    /// Privacy cost of a truthful agent with coefficient `c` under the composed
    /// `(2 eps, 3 delta)` guarantee: `rho c (1 + 3 delta) (2 eps)^3`.
    pub fn privacy_cost(&self, c: f64) -> f64 {
        let b = self.est_cfg.budget;
        self.cost_realization * c * (1.0 + 3.0 * b.delta) * (2.0 * b.eps).powi(3)
    }
}

/// `ln(1 / (alpha beta)) / cost_rate`, an upper bound on the participation threshold
/// under exponential cost tails.
pub fn tau_alpha_beta_bound(alpha: f64, beta: f64, cost_rate: f64) -> f64 {
    (1.0 / (alpha * beta)).ln() / cost_rate
}

/// Monte Carlo estimate of the smallest `tau` such that, with probability at least
/// `1 - beta`, at most `alpha n` of `n` i.i.d. `Exponential(cost_rate)` costs exceed it.
pub fn empirical_tau1(alpha: f64, beta: f64, cost_rate: f64, n: usize, trials: usize, seed: u64) -> f64 {
    let exp = rand_distr::Exp::new(cost_rate).expect("cost_rate must be > 0");
    let allowed = (alpha * n as f64).floor() as usize;
    let mut per_trial: Vec<f64> = (0..trials)
        .map(|t| {
            let mut rng = derived_rng(seed, &[t as u64]);
            let mut costs: Vec<f64> = (0..n).map(|_| rng.sample(exp)).collect();
            costs.sort_by(f64::total_cmp);
            // at most `allowed` costs may lie strictly above tau
            costs[n - 1 - allowed.min(n - 1)]
        })
        .collect();
    per_trial.sort_by(f64::total_cmp);
    let idx = (((1.0 - beta) * trials as f64).ceil() as usize).clamp(1, trials) - 1;
    per_trial[idx]
}

/// Rescaled Brier score `a1 - a2 (p - 2 p q + q^2)`.
#[inline]
pub fn brier_score(p: f64, q: f64, a1: f64, a2: f64) -> f64 {
    a1 - a2 * (p - 2.0 * p * q + q * q)
}

/// Posterior mean of `theta` after one observation `y_hat ~ N(<xbar, theta>, resp_noise^2)`
/// under the prior `theta ~ N(0, prior_scale^2 I)`, projected onto the `tau_theta` ball.
///
/// Rank-one closed form: `prior^2 y_hat / (noise^2 + prior^2 ||xbar||^2) * xbar`.
pub fn posterior_mean(
    x: &Vector,
    y_hat: f64,
    prior_scale: f64,
    resp_noise: f64,
    r: f64,
    tau_theta: f64,
) -> Result<Vector, NumericsError> {
    let xbar = clip_l2(x, r)?;
    let prior_var = prior_scale * prior_scale;
    let weight = prior_var * y_hat / (resp_noise * resp_noise + prior_var * xbar.norm_squared());
    project_l2_ball(&(xbar * weight), tau_theta)
}

/// Everything [`billboard_payment`] may see besides the agent's own report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaymentParams {
    pub a1: f64,
    pub a2: f64,
    pub r: f64,
    pub tau_theta: f64,
    pub prior_scale: f64,
    pub resp_noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaymentAudit {
    pub p: f64,
    pub q: f64,
    pub payment: f64,
}

/// Payment for one agent from its own report and the peer group's released estimate.
pub fn billboard_payment(
    report: &Report,
    peer_estimate: &Vector,
    params: &PaymentParams,
) -> Result<PaymentAudit, NumericsError> {
    let xbar = clip_l2(&report.x, params.r)?;
    let p = xbar.dot(peer_estimate);
    let own = posterior_mean(
        &report.x,
        report.y_hat,
        params.prior_scale,
        params.resp_noise,
        params.r,
        params.tau_theta,
    )?;
    let q = xbar.dot(&own);
    Ok(PaymentAudit { p, q, payment: brier_score(p, q, params.a1, params.a2) })
}

/// Truthful below the threshold, `misreport_model` above it.
pub fn apply_threshold_strategy(
    agents: &[AgentRecord],
    cfg: &MechanismConfig,
    population: &Population,
    rng: &mut Rng,
) -> ReportedDataset {
    let tau = cfg.threshold();
    let tau_y = cfg.est_cfg.tau_y;
    let mut records = Vec::with_capacity(agents.len());
    let mut provenance = Vec::with_capacity(agents.len());
    for a in agents {
        let (y_hat, flag) = if a.c <= tau {
            (a.y, Provenance::Truthful)
        } else {
            let v = match cfg.misreport_model {
                MisreportModel::Resample => population.sample_response(rng),
                MisreportModel::Zero => 0.0,
                MisreportModel::SignFlip => -a.y,
                MisreportModel::UniformNoise => a.y + rng.gen_range(-2.0 * tau_y..=2.0 * tau_y),
            };
            (v, Provenance::Misreported)
        };
        records.push(Report { x: a.x.clone(), y_hat });
        provenance.push(flag);
    }
    ReportedDataset::new(records, provenance)
}

/// Group label per agent: a seeded shuffle puts `ceil(n/2)` agents in group 0.
pub fn partition(n: usize, seed: u64) -> Vec<u8> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut groups = vec![1u8; n];
    for &i in &order[..n.div_ceil(2)] {
        groups[i] = 0;
    }
    groups
}

#[derive(Debug, Clone, PartialEq)]
pub struct MechanismOutcome {
    pub theta_bar_full: Vector,
    pub theta_bar_g0: Vector,
    pub theta_bar_g1: Vector,
    pub payments: Vec<f64>,
    pub utilities: Vec<f64>,
    pub group_assignment: Vec<u8>,
    pub audit: Vec<PaymentAudit>,
    pub provenance: Vec<Provenance>,
    pub costs: Vec<f64>,
    pub warnings: Vec<String>,
}

impl MechanismOutcome {
    pub fn n(&self) -> usize {
        self.payments.len()
    }

    /// Estimate used to pay agents of `group`: the other group's.
    pub fn peer_estimate(&self, group: u8) -> &Vector {
        if group == 0 {
            &self.theta_bar_g1
        } else {
            &self.theta_bar_g0
        }
    }

    pub fn total_payment(&self) -> f64 {
        self.payments.iter().sum()
    }
}

/// `sum(payments) <= bound`, decided up to the worst-case rounding of the two
/// floating-point computations: `(n - 1) u sum|pi|` for the sum and `8 u bound`
/// for the bound, with `u` the unit roundoff.
pub fn within_budget(payments: &[f64], bound: f64) -> bool {
    let u = f64::EPSILON / 2.0;
    let total: f64 = payments.iter().sum();
    let abs_total: f64 = payments.iter().map(|p| p.abs()).sum();
    let slack = payments.len().saturating_sub(1) as f64 * u * abs_total * (1.0 + 1e-9) + 8.0 * u * bound.abs();
    total <= bound + slack
}

/// Noise seeds of the full, group-0, and group-1 estimators.
pub fn estimator_seeds(base: u64) -> [u64; 3] {
    [derive_seed(base, &[0]), derive_seed(base, &[1]), derive_seed(base, &[2])]
}

/// Runs the mechanism once on reported data. `true_costs` are used only to
/// compute utilities; payments never see them. A total payment above
/// [`MechanismConfig::budget_bound`] is reported as an error.
pub fn run_mechanism(
    reported: &ReportedDataset,
    cfg: &MechanismConfig,
    true_costs: &[f64],
) -> Result<MechanismOutcome, MechanismError> {
    cfg.validate()?;
    let n = reported.len();
    if n < 2 {
        return Err(MechanismError::InvalidConfig(format!("need at least 2 agents, got {n}")));
    }
    if true_costs.len() != n {
        return Err(MechanismError::InvalidConfig(format!(
            "{} costs for {n} agents",
            true_costs.len()
        )));
    }
    let mut warnings = Vec::new();
    let ir = cfg.ir_bound();
    if cfg.a1 < ir {
        warnings.push(format!(
            "a1 = {:e} is below the individual-rationality bound {:e}; truthful agents may see negative utility",
            cfg.a1, ir
        ));
    }

    let groups = partition(n, cfg.partition_seed);
    let members = |g: u8| -> Vec<usize> { (0..n).filter(|&i| groups[i] == g).collect() };
    let (idx0, idx1) = (members(0), members(1));
    let seeds = estimator_seeds(cfg.est_cfg.seed);
    let run = |data: &ReportedDataset, seed: u64, which: &'static str| {
        estimate_with_rng(data, &cfg.est_cfg, &mut rng_from_seed(seed))
            .map(|e| e.theta_bar)
            .map_err(|source| MechanismError::Estimator { which, source })
    };
    let theta_bar_full = run(reported, seeds[0], "full")?;
    let theta_bar_g0 = run(&reported.subset(&idx0), seeds[1], "group-0")?;
    let theta_bar_g1 = run(&reported.subset(&idx1), seeds[2], "group-1")?;

    let params = cfg.payment_params();
    let mut audit = Vec::with_capacity(n);
    let mut payments = Vec::with_capacity(n);
    let mut utilities = Vec::with_capacity(n);
    for i in 0..n {
        let peer = if groups[i] == 0 { &theta_bar_g1 } else { &theta_bar_g0 };
        let a = billboard_payment(&reported.records[i], peer, &params)?;
        let cost = match reported.provenance[i] {
            Provenance::Truthful => cfg.privacy_cost(true_costs[i]),
            Provenance::Misreported => 0.0,
        };
        payments.push(a.payment);
        utilities.push(a.payment - cost);
        audit.push(a);
    }

    let total: f64 = payments.iter().sum();
    let bound = cfg.budget_bound(n);
    if !within_budget(&payments, bound) {
        return Err(MechanismError::BudgetViolation { total, bound });
    }

    Ok(MechanismOutcome {
        theta_bar_full,
        theta_bar_g0,
        theta_bar_g1,
        payments,
        utilities,
        group_assignment: groups,
        audit,
        provenance: reported.provenance.clone(),
        costs: true_costs.to_vec(),
        warnings,
    })
}

/// Mean utility difference (deviation minus truthful) for one candidate report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationStat {
    pub report: f64,
    pub mean_gain: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationGain {
    /// Largest mean gain over the supplied deviations.
    pub gain: f64,
    pub stderr: f64,
    pub per_deviation: Vec<DeviationStat>,
    /// Completed trials.
    pub trials: usize,
    /// Attempts dropped because a private covariance was singular.
    pub censored: usize,
    /// Mean utility of the agent when reporting truthfully.
    pub truthful_utility: f64,
    pub truthful_stderr: f64,
}

/// Sample mean and its standard error; the error is 0 for fewer than two samples.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-trial outcome for a fixed agent: truthful payment, utility, and the payments
/// it would have received under each deviation.
struct TrialPayoff {
    truthful_utility: f64,
    deviation_gains: Vec<f64>,
}

/// Most attempts allowed per requested completed trial.
pub const MAX_ATTEMPTS_PER_TRIAL: usize = 20;

/// Evaluates `trial(0), trial(1), ...` in parallel batches until `target` of them
/// return `Some`, keeping the first `target` in index order. `None` marks a
/// censored attempt. Gives up with [`MechanismError::AllTrialsCensored`] after
/// `MAX_ATTEMPTS_PER_TRIAL * target` attempts.
pub fn collect_completed<T, E, F>(target: usize, trial: F) -> Result<(Vec<T>, usize), E>
where
    T: Send,
    E: Send + From<MechanismError>,
    F: Fn(usize) -> Result<Option<T>, E> + Sync,
{
    let cap = target.saturating_mul(MAX_ATTEMPTS_PER_TRIAL);
    let mut done: Vec<T> = Vec::with_capacity(target);
    let mut censored = 0;
    let mut next = 0;
    while done.len() < target && next < cap {
        let batch = (target - done.len()).max(8).min(cap - next);
        let results: Vec<Option<T>> = (next..next + batch).into_par_iter().map(&trial).collect::<Result<_, _>>()?;
        next += batch;
        for r in results {
            match r {
                Some(v) if done.len() < target => done.push(v),
                Some(_) => {}
                None => censored += 1,
            }
        }
    }
    if done.len() < target {
        return Err(MechanismError::AllTrialsCensored { trials: next }.into());
    }
    Ok((done, censored))
}

/// Draws the other agents afresh, applies the threshold strategy to them, and runs
/// the mechanism with agent `agent` reporting truthfully.
pub fn simulate_round(
    agents: &[AgentRecord],
    agent: usize,
    population: &Population,
    cfg: &MechanismConfig,
    seed: u64,
) -> Result<(ReportedDataset, MechanismOutcome), MechanismError> {
    let mut rng = derived_rng(seed, &[0]);
    let mut round: Vec<AgentRecord> = Vec::with_capacity(agents.len());
    for (j, a) in agents.iter().enumerate() {
        if j == agent {
            round.push(a.clone());
        } else {
            round.push(population.sample_agent(&mut rng));
        }
    }
    let mut reported = apply_threshold_strategy(&round, cfg, population, &mut derived_rng(seed, &[1]));
    // the focal agent reports truthfully regardless of its cost
    reported.records[agent].y_hat = round[agent].y;
    reported.provenance[agent] = Provenance::Truthful;
    let costs: Vec<f64> = round.iter().map(|a| a.c).collect();
    let mut trial_cfg = cfg.clone();
    trial_cfg.partition_seed = derive_seed(seed, &[2]);
    trial_cfg.est_cfg.seed = derive_seed(seed, &[3]);
    let outcome = run_mechanism(&reported, &trial_cfg, &costs)?;
    Ok((reported, outcome))
}

/// Monte Carlo estimate of agent `agent`'s expected utility gain from reporting one of
/// `deviations` instead of its true response, while every other agent is redrawn from
/// `population` each trial and follows the threshold strategy.
///
/// Truthful and deviating payoffs share every random draw. A deviating agent's
/// response is not used, so it bears no privacy cost; a deviation equal to the true
/// response is the truthful report. Attempts where an estimator meets a singular
/// private covariance are dropped, counted in `censored`, and replaced until
/// `trials` attempts have completed.
pub fn deviation_gain(
    agents: &[AgentRecord],
    agent: usize,
    population: &Population,
    cfg: &MechanismConfig,
    deviations: &[f64],
    trials: usize,
    seed: u64,
) -> Result<DeviationGain, MechanismError> {
    if agent >= agents.len() {
        return Err(MechanismError::InvalidConfig(format!(
            "agent index {agent} out of range for {} agents",
            agents.len()
        )));
    }
    if trials == 0 || deviations.is_empty() {
        return Err(MechanismError::InvalidConfig("need at least one trial and one deviation".into()));
    }
    let me = &agents[agent];
    let params = cfg.payment_params();
    let own_cost = cfg.privacy_cost(me.c);

    let (payoffs, censored) = collect_completed(trials, |t| -> Result<Option<TrialPayoff>, MechanismError> {
        let (reported, outcome) = match simulate_round(agents, agent, population, cfg, derive_seed(seed, &[t as u64])) {
            Ok(ok) => ok,
            Err(e) if e.is_singular() => return Ok(None),
            Err(e) => return Err(e),
        };
        let truthful_payment = outcome.payments[agent];
        let peer = outcome.peer_estimate(outcome.group_assignment[agent]);
        let mut deviation_gains = Vec::with_capacity(deviations.len());
        for &v in deviations {
            let gain = if v == me.y {
                0.0
            } else {
                let report = Report { x: reported.records[agent].x.clone(), y_hat: v };
                let dev = billboard_payment(&report, peer, &params)?;
                dev.payment - (truthful_payment - own_cost)
            };
            deviation_gains.push(gain);
        }
        Ok(Some(TrialPayoff { truthful_utility: outcome.utilities[agent], deviation_gains }))
    })?;

    let per_deviation: Vec<DeviationStat> = deviations
        .iter()
        .enumerate()
        .map(|(k, &report)| {
            let gains: Vec<f64> = payoffs.iter().map(|p| p.deviation_gains[k]).collect();
            let (mean_gain, stderr) = mean_and_stderr(&gains);
            DeviationStat { report, mean_gain, stderr }
        })
        .collect();
    let best = per_deviation
        .iter()
        .copied()
        .fold(None::<DeviationStat>, |acc, s| match acc {
            Some(a) if a.mean_gain >= s.mean_gain => Some(a),
            _ => Some(s),
        })
        .expect("at least one deviation");
    let utils: Vec<f64> = payoffs.iter().map(|p| p.truthful_utility).collect();
    let (truthful_utility, truthful_stderr) = mean_and_stderr(&utils);
    Ok(DeviationGain {
        gain: best.mean_gain,
        stderr: best.stderr,
        per_deviation,
        trials: payoffs.len(),
        censored,
        truthful_utility,
        truthful_stderr,
    })
}
