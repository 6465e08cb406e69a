//! Synthetic ground truth: sparse regression vectors, approximately sparse
//! covariance matrices, and agent populations with exponential privacy costs.
//!
//! Covariates are `x = (sigma / sqrt(d)) * Sigma^{1/2} z` with `z` standard
//! normal, responses are `y = <theta*, x> + zeta`, and cost coefficients are
//! `Exponential(cost_rate)`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{NumericsError, SymMatrix, Vector};
use crate::rng::{rng_from_seed, Rng};

/// Default bound on the standardized fourth moment of each covariate coordinate.
pub const DEFAULT_FOURTH_MOMENT_BOUND: f64 = 9.0;

/// Largest correlation the geometric family will pick on its own.
const GEOMETRIC_RHO_CAP: f64 = 0.9;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error("row budget s = {s} admits no covariance with unit diagonal for q = {q} ({detail})")]
    Infeasible { s: f64, q: f64, detail: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CovFamily {
    /// `Sigma_ij = max(0, 1 - |i-j| / B)`; `B` is the widest band fitting the budget unless pinned.
    Banded {
        #[serde(default)]
        bandwidth: Option<usize>,
    },
    /// `Sigma_ij = rho^|i-j|`; `rho` is the largest value fitting the budget unless pinned.
    GeometricDecay {
        #[serde(default)]
        rho: Option<f64>,
    },
}

impl Default for CovFamily {
    fn default() -> Self {
        CovFamily::Banded { bandwidth: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub q: f64,
    pub s: f64,
    pub sigma: f64,
    pub sigma_zeta: f64,
    pub cost_rate: f64,
    pub seed: u64,
    pub theta_norm: f64,
    pub cov_family: CovFamily,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            d: 50,
            k: 5,
            q: 0.0,
            s: 3.0,
            sigma: 1.0,
            sigma_zeta: 0.1,
            cost_rate: 1.0,
            seed: 0,
            theta_norm: 1.0,
            cov_family: CovFamily::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n < 2 {
            return fail(format!("n must be >= 2, got {}", self.n));
        }
        if self.d == 0 {
            return fail("d must be >= 1".into());
        }
        if self.k > self.d {
            return fail(format!("k = {} exceeds d = {}", self.k, self.d));
        }
        if !(0.0..1.0).contains(&self.q) {
            return fail(format!("q must lie in [0, 1), got {}", self.q));
        }
        if !(self.s > 0.0) || !self.s.is_finite() {
            return fail(format!("s must be > 0, got {}", self.s));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return fail(format!("sigma must be > 0, got {}", self.sigma));
        }
        if !(self.sigma_zeta >= 0.0) || !self.sigma_zeta.is_finite() {
            return fail(format!("sigma_zeta must be >= 0, got {}", self.sigma_zeta));
        }
        if !(self.cost_rate > 0.0) || !self.cost_rate.is_finite() {
            return fail(format!("cost_rate must be > 0, got {}", self.cost_rate));
        }
        if !(self.theta_norm > 0.0 && self.theta_norm <= 1.0) {
            return fail(format!("theta_norm must lie in (0, 1], got {}", self.theta_norm));
        }
        Ok(())
    }
}

/// `|v|^q` with the `q = 0` convention `0^0 = 0`, so the sum counts nonzeros.
fn lq_term(v: f64, q: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.abs().powf(q)
    }
}

/// Largest row sum of `|Sigma_ij|^q` for a Toeplitz matrix with the given lag profile.
/// The middle row sees the most lags, so it attains the maximum.
fn toeplitz_row_budget(d: usize, q: f64, lag: impl Fn(usize) -> f64) -> f64 {
    let i = (d - 1) / 2;
    (0..d).map(|j| lq_term(lag(i.abs_diff(j)), q)).sum()
}

/// Largest row sum of `|m_ij|^q`.
pub fn row_lq_budget(m: &SymMatrix, q: f64) -> f64 {
    m.as_matrix()
        .row_iter()
        .map(|r| r.iter().map(|v| lq_term(*v, q)).sum::<f64>())
        .fold(0.0, f64::max)
}

fn banded_lag(bandwidth: usize) -> impl Fn(usize) -> f64 {
    move |m| (1.0 - m as f64 / bandwidth as f64).max(0.0)
}

fn geometric_lag(rho: f64) -> impl Fn(usize) -> f64 {
    move |m| if m == 0 { 1.0 } else { rho.powi(m as i32) }
}

fn toeplitz(d: usize, lag: impl Fn(usize) -> f64) -> SymMatrix {
    SymMatrix::from_upper_fn(d, |i, j| lag(j - i))
}

/// Builds the ground-truth covariance `Sigma` (unit diagonal) from the configured family.
pub fn make_covariance(cfg: &SynthConfig) -> Result<SymMatrix, SynthError> {
    cfg.validate()?;
    let (d, q, s) = (cfg.d, cfg.q, cfg.s);
    if s < 1.0 {
        return Err(SynthError::Infeasible {
            s,
            q,
            detail: "the unit diagonal alone uses a budget of 1".into(),
        });
    }
    let over = |budget: f64| budget > s * (1.0 + 1e-12);
    let sigma = match cfg.cov_family {
        CovFamily::Banded { bandwidth: Some(b) } => {
            if b == 0 {
                return Err(SynthError::InvalidConfig("bandwidth must be >= 1".into()));
            }
            let budget = toeplitz_row_budget(d, q, banded_lag(b));
            if over(budget) {
                return Err(SynthError::Infeasible {
                    s,
                    q,
                    detail: format!("bandwidth {b} needs row budget {budget:.4}"),
                });
            }
            toeplitz(d, banded_lag(b))
        }
        CovFamily::Banded { bandwidth: None } => {
            let mut b = 1;
            while b < d && !over(toeplitz_row_budget(d, q, banded_lag(b + 1))) {
                b += 1;
            }
            toeplitz(d, banded_lag(b))
        }
        CovFamily::GeometricDecay { rho: Some(rho) } => {
            if !(0.0..1.0).contains(&rho) {
                return Err(SynthError::InvalidConfig(format!("rho must lie in [0, 1), got {rho}")));
            }
            let budget = toeplitz_row_budget(d, q, geometric_lag(rho));
            if over(budget) {
                return Err(SynthError::Infeasible {
                    s,
                    q,
                    detail: format!("rho {rho} needs row budget {budget:.4}"),
                });
            }
            toeplitz(d, geometric_lag(rho))
        }
        CovFamily::GeometricDecay { rho: None } => {
            // strict margin so the chosen rho survives re-summation in another order
            let fits = |rho: f64| toeplitz_row_budget(d, q, geometric_lag(rho)) <= s * (1.0 - 1e-12);
            let rho = if fits(GEOMETRIC_RHO_CAP) {
                GEOMETRIC_RHO_CAP
            } else if q == 0.0 {
                // every off-diagonal entry is nonzero once rho > 0
                0.0
            } else {
                let (mut lo, mut hi) = (0.0, GEOMETRIC_RHO_CAP);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if fits(mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            };
            toeplitz(d, geometric_lag(rho))
        }
    };
    let min_ev = sigma.min_eigenvalue();
    if !(min_ev > 0.0) {
        return Err(SynthError::Infeasible {
            s,
            q,
            detail: format!("constructed matrix is not positive definite (min eigenvalue {min_ev:e})"),
        });
    }
    Ok(sigma)
}

/// One agent's private data and privacy-cost coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRecord {
    pub x: Vector,
    pub y: f64,
    pub c: f64,
}

/// Generative model for agents: knows `theta*`, `Sigma^{1/2}`, and the noise and cost scales.
#[derive(Debug, Clone)]
pub struct Population {
    theta_star: Vector,
    sqrt_sigma: DMatrix<f64>,
    covariate_scale: f64,
    sigma_zeta: f64,
    cost: Exp<f64>,
}

impl Population {
    pub fn new(cfg: &SynthConfig, theta_star: Vector, sigma: &SymMatrix) -> Result<Self, SynthError> {
        cfg.validate()?;
        if theta_star.len() != cfg.d || sigma.dim() != cfg.d {
            return Err(SynthError::Numerics(NumericsError::DimensionMismatch {
                expected: cfg.d,
                found: if theta_star.len() != cfg.d { theta_star.len() } else { sigma.dim() },
            }));
        }
        let eig = SymmetricEigen::new(sigma.as_matrix().clone());
        let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let sqrt_sigma = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
        let cost = Exp::new(cfg.cost_rate)
            .map_err(|e| SynthError::InvalidConfig(format!("cost_rate: {e}")))?;
        Ok(Self {
            theta_star,
            sqrt_sigma,
            covariate_scale: cfg.sigma / (cfg.d as f64).sqrt(),
            sigma_zeta: cfg.sigma_zeta,
            cost,
        })
    }

    pub fn theta_star(&self) -> &Vector {
        &self.theta_star
    }

    pub fn sample_covariate(&self, rng: &mut Rng) -> Vector {
        let d = self.theta_star.len();
        let z = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.sqrt_sigma * z) * self.covariate_scale
    }

    /// Draws `(x, y, c)` in that order from `rng`.
    pub fn sample_agent(&self, rng: &mut Rng) -> AgentRecord {
        let x = self.sample_covariate(rng);
        let noise: f64 = rng.sample(StandardNormal);
        let y = self.theta_star.dot(&x) + self.sigma_zeta * noise;
        let c = self.cost.sample(rng);
        AgentRecord { x, y, c }
    }

    /// Marginal draw of a response: a fresh agent's `y`.
    pub fn sample_response(&self, rng: &mut Rng) -> f64 {
        self.sample_agent(rng).y
    }

    pub fn sample_cost(&self, rng: &mut Rng) -> f64 {
        self.cost.sample(rng)
    }
}

#[derive(Debug, Clone)]
pub struct RegressionInstance {
    pub theta_star: Vector,
    pub sigma: SymMatrix,
    /// Smallest `||Sigma w||_inf / ||w||_inf` over canonical test vectors.
    pub kappa_inf: f64,
    pub agents: Vec<AgentRecord>,
}

impl RegressionInstance {
    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn d(&self) -> usize {
        self.theta_star.len()
    }

    /// Covariance of a single covariate vector, `(sigma^2 / d) * Sigma`.
    pub fn covariate_covariance(&self, cfg: &SynthConfig) -> SymMatrix {
        self.sigma.scale(cfg.sigma * cfg.sigma / cfg.d as f64)
    }

    pub fn costs(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.c).collect()
    }
}

/// `min ||Sigma w||_inf / ||w||_inf` over basis vectors, the all-ones vector, and
/// the alternating-sign vector.
pub fn kappa_inf_estimate(sigma: &SymMatrix) -> f64 {
    let d = sigma.dim();
    let ratio = |w: &Vector| sigma.mul_vec(w).amax() / w.amax();
    let mut best = f64::INFINITY;
    for j in 0..d {
        best = best.min(sigma.as_matrix().column(j).amax());
    }
    best = best.min(ratio(&Vector::from_element(d, 1.0)));
    best.min(ratio(&Vector::from_fn(d, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 })))
}

fn sample_theta(cfg: &SynthConfig, rng: &mut Rng) -> Vector {
    let mut theta = Vector::zeros(cfg.d);
    if cfg.k == 0 {
        return theta;
    }
    let magnitude = cfg.theta_norm / (cfg.k as f64).sqrt();
    let mut support = rand::seq::index::sample(rng, cfg.d, cfg.k).into_vec();
    support.sort_unstable();
    for j in support {
        theta[j] = if rng.gen_bool(0.5) { magnitude } else { -magnitude };
    }
    theta
}

/// Draws `theta*` and `n` agents. The stream order is `theta*` first, then agents
/// one at a time, so agent `i` is identical across instances that share a seed
/// and differ only in `n`.
pub fn sample_instance(cfg: &SynthConfig) -> Result<RegressionInstance, SynthError> {
    let sigma = make_covariance(cfg)?;
    let mut rng = rng_from_seed(cfg.seed);
    let theta_star = sample_theta(cfg, &mut rng);
    let population = Population::new(cfg, theta_star.clone(), &sigma)?;
    let agents = (0..cfg.n).map(|_| population.sample_agent(&mut rng)).collect();
    Ok(RegressionInstance {
        theta_star,
        kappa_inf: kappa_inf_estimate(&sigma),
        sigma,
        agents,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub theta_sparse: bool,
    pub theta_norm_ok: bool,
    pub covariance_budget_ok: bool,
    pub covariance_pd: bool,
    pub sub_gaussian_proxy_ok: bool,
    pub support_size: usize,
    pub row_budget: f64,
    pub min_eigenvalue: f64,
    pub max_standardized_fourth_moment: f64,
    pub kappa_inf: f64,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.theta_sparse
            && self.theta_norm_ok
            && self.covariance_budget_ok
            && self.covariance_pd
            && self.sub_gaussian_proxy_ok
    }
}

pub fn check_assumptions(inst: &RegressionInstance, cfg: &SynthConfig) -> AssumptionReport {
    check_assumptions_with(inst, cfg, DEFAULT_FOURTH_MOMENT_BOUND)
}

/// Post-hoc check of sparsity, norm, covariance budget, positive definiteness, and a
/// fourth-moment proxy for sub-Gaussian tails.
pub fn check_assumptions_with(
    inst: &RegressionInstance,
    cfg: &SynthConfig,
    fourth_moment_bound: f64,
) -> AssumptionReport {
    let support_size = inst.theta_star.iter().filter(|v| **v != 0.0).count();
    let row_budget = row_lq_budget(&inst.sigma, cfg.q);
    let min_eigenvalue = inst.sigma.min_eigenvalue();

    let d = inst.d();
    let mut max_kurtosis: f64 = 0.0;
    if !inst.agents.is_empty() {
        let n = inst.agents.len() as f64;
        for j in 0..d {
            let (m2, m4) = inst.agents.iter().fold((0.0, 0.0), |(m2, m4), a| {
                let v = a.x[j] * a.x[j];
                (m2 + v, m4 + v * v)
            });
            let (m2, m4) = (m2 / n, m4 / n);
            if m2 > 0.0 {
                max_kurtosis = max_kurtosis.max(m4 / (m2 * m2));
            }
        }
    }

    AssumptionReport {
        theta_sparse: support_size <= cfg.k,
        theta_norm_ok: inst.theta_star.norm() <= cfg.theta_norm * (1.0 + 1e-12),
        covariance_budget_ok: row_budget <= cfg.s * (1.0 + 1e-12),
        covariance_pd: min_eigenvalue > 0.0,
        sub_gaussian_proxy_ok: max_kurtosis <= fourth_moment_bound,
        support_size,
        row_budget,
        min_eigenvalue,
        max_standardized_fourth_moment: max_kurtosis,
        kappa_inf: inst.kappa_inf,
    }
}
