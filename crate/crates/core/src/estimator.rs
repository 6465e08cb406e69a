//! Closed-form private estimator for sparse linear regression.
//!
//! Pipeline, for reported pairs `(x_i, y_i)`:
//!
//! ```text
//! xbar_i  = clip_l2(x_i, r)                       xt_i = clip(x_i, tau_x),  yt_i = clip(y_i, tau_y)
//! S_xx    = (1/n) sum xbar_i xbar_i^T + N1       S_xy = (1/n) sum xt_i yt_i + N2
//! S_xx'   = hard_threshold(S_xx, thres)
//! theta   = soft_threshold(S_xx'^{-1} S_xy, lambda_n)
//! theta_b = project(theta, tau_theta)
//! ```
//!
//! `N1` is symmetric with i.i.d. Gaussian upper triangle (diagonal included),
//! `N2` is i.i.d. Gaussian. Each statistic spends half of `(eps, delta)`.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ReportedDataset;
use crate::numerics::{
    clip_l2, clip_scalar, hard_threshold_matrix, project_l2_ball, soft_threshold,
    solve_symmetric_with_condition, NumericsError, SymMatrix, Vector,
};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error("reported dataset is empty")]
    EmptyData,
    #[error(
        "thresholded covariance is singular or ill-conditioned (condition estimate {condition:e}, n = {n}, d = {d}); \
         increase n: invertibility needs n on the order of s^2 r^4 log(d) log(1/delta) / (eps^2 kappa_inf)"
    )]
    SingularCovariance { condition: f64, n: usize, d: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// `(eps, delta)` privacy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyBudget {
    pub eps: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(eps: f64, delta: f64) -> Result<Self, EstimatorError> {
        let b = Self { eps, delta };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(EstimatorError::InvalidConfig(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(EstimatorError::InvalidConfig(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Cross-term noise scaled by `tau_x * tau_y` exactly as in the published algorithm.
    PaperExact,
    /// Cross-term noise scaled by the worst-case l2 sensitivity `tau_y * min(r, tau_x sqrt(d))`.
    #[default]
    StrictPrivacy,
    /// No noise. Test hook only.
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub r: f64,
    pub tau_x: f64,
    pub tau_y: f64,
    pub lambda_n: f64,
    pub gamma: f64,
    pub thres: f64,
    pub tau_theta: f64,
    pub budget: PrivacyBudget,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    #[serde(default)]
    pub seed: u64,
}

impl EstimatorConfig {
    pub fn validate(&self, d: usize) -> Result<(), EstimatorError> {
        self.budget.validate()?;
        for (name, v) in [
            ("r", self.r),
            ("tau_x", self.tau_x),
            ("tau_y", self.tau_y),
            ("gamma", self.gamma),
            ("tau_theta", self.tau_theta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EstimatorError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("lambda_n", self.lambda_n), ("thres", self.thres)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(EstimatorError::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.noise_mode == NoiseMode::StrictPrivacy
            && self.tau_x * (d as f64).sqrt() > self.r * (1.0 + 1e-12)
        {
            return Err(EstimatorError::InvalidConfig(format!(
                "tau_x * sqrt(d) = {} exceeds r = {}; the clipped cross term would leave the r-ball",
                self.tau_x * (d as f64).sqrt(),
                self.r
            )));
        }
        Ok(())
    }

    /// l2 sensitivity of the clipped covariance average, `2 r^2 / n`.
    pub fn cov_sensitivity(&self, n: usize) -> f64 {
        2.0 * self.r * self.r / n as f64
    }

    /// l2 sensitivity of the clipped cross-term average, `2 tau_y min(r, tau_x sqrt(d)) / n`.
    pub fn xy_sensitivity(&self, n: usize, d: usize) -> f64 {
        2.0 * self.tau_y * self.r.min(self.tau_x * (d as f64).sqrt()) / n as f64
    }

    /// Per-entry standard deviation of `N1`: `sqrt(32 r^4 ln(2.5/delta)) / (n eps)`.
    pub fn cov_noise_std(&self, n: usize) -> f64 {
        match self.noise_mode {
            NoiseMode::Disabled => 0.0,
            _ => {
                (32.0 * self.r.powi(4) * (2.5 / self.budget.delta).ln()).sqrt()
                    / (n as f64 * self.budget.eps)
            }
        }
    }

    /// Per-coordinate standard deviation of `N2` under the configured mode.
    pub fn xy_noise_std(&self, n: usize, d: usize) -> f64 {
        let log_term = (2.5 / self.budget.delta).ln();
        let n_eps = n as f64 * self.budget.eps;
        let printed = (32.0 * self.tau_x.powi(2) * self.tau_y.powi(2) * log_term).sqrt() / n_eps;
        match self.noise_mode {
            NoiseMode::Disabled => 0.0,
            NoiseMode::PaperExact => printed,
            NoiseMode::StrictPrivacy => {
                let sens = self.tau_y * self.r.min(self.tau_x * (d as f64).sqrt());
                let gaussian = 2.0 * (2.0 * log_term).sqrt() * sens * 2.0 / n_eps;
                printed.max(gaussian)
            }
        }
    }
}

/// Multipliers on the default parameter rates. `gamma` overrides the hard-threshold
/// constant; when absent it defaults to `0.5 * sigma^2 / d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    pub m_r: f64,
    pub m_x: f64,
    pub m_y: f64,
    pub m_lambda: f64,
    pub gamma: Option<f64>,
    pub tau_theta: f64,
    pub noise_mode: NoiseMode,
    pub seed: u64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            m_r: 1.0,
            m_x: 1.0,
            m_y: 1.0,
            m_lambda: 1.0,
            gamma: None,
            tau_theta: 1.0,
            noise_mode: NoiseMode::default(),
            seed: 0,
        }
    }
}

/// Default parameter schedule for sample size `n`, dimension `d`, and covariate scale `sigma`.
///
/// ```text
/// r        = m_r sigma sqrt(ln n)
/// tau_x    = m_x sigma sqrt(ln n) / sqrt(d)
/// tau_y    = m_y sigma sqrt(ln n)
/// lambda_n = m_lambda r^2 sqrt(ln d ln(1/delta)) / (sqrt(n) eps)
/// thres    = gamma sqrt(ln d / n) + 4 r^2 sqrt(2 ln(1.25/delta)) sqrt(ln d) / (n eps)
/// ```
pub fn default_config(
    n: usize,
    d: usize,
    sigma: f64,
    budget: PrivacyBudget,
    cal: &Calibration,
) -> EstimatorConfig {
    calibrate(n as f64, d as f64, sigma, budget, cal)
}

// Real-valued sizes so the schedule can be evaluated at non-integer points in tests.
fn calibrate(nf: f64, df: f64, sigma: f64, budget: PrivacyBudget, cal: &Calibration) -> EstimatorConfig {
    let (ln_n, ln_d) = (nf.ln(), df.ln());
    let r = cal.m_r * sigma * ln_n.sqrt();
    let tau_x = cal.m_x * sigma * ln_n.sqrt() / df.sqrt();
    let tau_y = cal.m_y * sigma * ln_n.sqrt();
    let (eps, delta) = (budget.eps, budget.delta);
    let lambda_n = cal.m_lambda * r * r * (ln_d * (1.0 / delta).ln()).sqrt() / (nf.sqrt() * eps);
    let gamma = cal.gamma.unwrap_or(0.5 * sigma * sigma / df);
    let thres = gamma * (ln_d / nf).sqrt()
        + 4.0 * r * r * (2.0 * (1.25 / delta).ln()).sqrt() * ln_d.sqrt() / (nf * eps);
    EstimatorConfig {
        r,
        tau_x,
        tau_y,
        lambda_n,
        gamma,
        thres,
        tau_theta: cal.tau_theta,
        budget,
        noise_mode: cal.noise_mode,
        seed: cal.seed,
    }
}

/// `gamma sqrt(ln d / n) + 4 r^2 sqrt(2 ln(1.25/delta)) sqrt(ln d) / (n eps)`.
pub fn hard_threshold_level(n: usize, d: usize, r: f64, gamma: f64, budget: PrivacyBudget) -> f64 {
    let (nf, ln_d) = (n as f64, (d as f64).ln());
    gamma * (ln_d / nf).sqrt()
        + 4.0 * r * r * (2.0 * (1.25 / budget.delta).ln()).sqrt() * ln_d.sqrt() / (nf * budget.eps)
}

/// Noise-free clipped sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub cov: SymMatrix,
    pub xy: Vector,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivateSufficientStats {
    pub cov_noisy: SymMatrix,
    pub cov_thresholded: SymMatrix,
    pub xy_noisy: Vector,
    pub noise_std_cov: f64,
    pub noise_std_xy: f64,
}

/// Averages `clip_l2(x, r) clip_l2(x, r)^T` and `clip(x, tau_x) clip(y, tau_y)` over the records.
pub fn aggregate_stats(
    data: &ReportedDataset,
    cfg: &EstimatorConfig,
) -> Result<SufficientStats, EstimatorError> {
    let d = data.dim().ok_or(EstimatorError::EmptyData)?;
    let n = data.len();
    let mut xbar = DMatrix::<f64>::zeros(n, d);
    let mut xy = Vector::zeros(d);
    for (i, rec) in data.records.iter().enumerate() {
        if rec.x.len() != d {
            return Err(NumericsError::DimensionMismatch { expected: d, found: rec.x.len() }.into());
        }
        if !rec.y_hat.is_finite() {
            return Err(NumericsError::NonFinite { what: "reported response" }.into());
        }
        let clipped = clip_l2(&rec.x, cfg.r)?;
        xbar.row_mut(i).copy_from(&clipped.transpose());
        let y = clip_scalar(rec.y_hat, cfg.tau_y);
        for (acc, v) in xy.iter_mut().zip(rec.x.iter()) {
            *acc += clip_scalar(*v, cfg.tau_x) * y;
        }
    }
    let gram = xbar.tr_mul(&xbar);
    let nf = n as f64;
    let cov = SymMatrix::from_upper_fn(d, |i, j| gram[(i, j)] / nf);
    Ok(SufficientStats { cov, xy: xy / nf, n })
}

/// Adds the Gaussian perturbations and applies the hard threshold.
///
/// Draw order from `rng`: the upper triangle of `N1` column by column, then `N2`.
pub fn perturb_stats(
    stats: &SufficientStats,
    cfg: &EstimatorConfig,
    rng: &mut Rng,
) -> Result<PrivateSufficientStats, EstimatorError> {
    let d = stats.xy.len();
    let std_cov = cfg.cov_noise_std(stats.n);
    let std_xy = cfg.xy_noise_std(stats.n, d);
    let (cov_noisy, xy_noisy) = if cfg.noise_mode == NoiseMode::Disabled {
        (stats.cov.clone(), stats.xy.clone())
    } else {
        let n1 = Normal::new(0.0, std_cov).map_err(|e| EstimatorError::InvalidConfig(e.to_string()))?;
        let n2 = Normal::new(0.0, std_xy).map_err(|e| EstimatorError::InvalidConfig(e.to_string()))?;
        let noise = SymMatrix::from_upper_fn(d, |_, _| n1.sample(rng));
        let xy_noise = Vector::from_fn(d, |_, _| n2.sample(rng));
        (stats.cov.add(&noise), &stats.xy + xy_noise)
    };
    let cov_thresholded = hard_threshold_matrix(&cov_noisy, cfg.thres)?;
    Ok(PrivateSufficientStats {
        cov_noisy,
        cov_thresholded,
        xy_noisy,
        noise_std_cov: std_cov,
        noise_std_xy: std_xy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n: usize,
    pub d: usize,
    pub condition: f64,
    /// Entries of the noisy covariance that the hard threshold set to zero.
    pub thresholded_entries: usize,
    pub support_size: usize,
    pub noise_std_cov: f64,
    pub noise_std_xy: f64,
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub theta_hat: Vector,
    pub theta_bar: Vector,
    pub stats: PrivateSufficientStats,
    pub diagnostics: Diagnostics,
}

/// Runs the estimator with noise drawn from `cfg.seed`.
pub fn estimate(data: &ReportedDataset, cfg: &EstimatorConfig) -> Result<Estimate, EstimatorError> {
    estimate_with_rng(data, cfg, &mut rng_from_seed(cfg.seed))
}

pub fn estimate_with_rng(
    data: &ReportedDataset,
    cfg: &EstimatorConfig,
    rng: &mut Rng,
) -> Result<Estimate, EstimatorError> {
    let d = data.dim().ok_or(EstimatorError::EmptyData)?;
    cfg.validate(d)?;
    let stats = aggregate_stats(data, cfg)?;
    let private = perturb_stats(&stats, cfg, rng)?;
    finish(private, stats.n, cfg)
}

/// Solve, soft-threshold, and project, starting from already privatized statistics.
pub fn finish(
    private: PrivateSufficientStats,
    n: usize,
    cfg: &EstimatorConfig,
) -> Result<Estimate, EstimatorError> {
    let d = private.xy_noisy.len();
    let (raw, condition) =
        match solve_symmetric_with_condition(&private.cov_thresholded, &private.xy_noisy) {
            Ok(ok) => ok,
            Err(NumericsError::IllConditioned { condition }) => {
                return Err(EstimatorError::SingularCovariance { condition, n, d })
            }
            Err(e) => return Err(e.into()),
        };
    let theta_hat = soft_threshold(&raw, cfg.lambda_n)?;
    let theta_bar = project_l2_ball(&theta_hat, cfg.tau_theta)?;
    let thresholded_entries = private
        .cov_noisy
        .as_matrix()
        .iter()
        .zip(private.cov_thresholded.as_matrix().iter())
        .filter(|(a, b)| **a != 0.0 && **b == 0.0)
        .count();
    let diagnostics = Diagnostics {
        n,
        d,
        condition,
        thresholded_entries,
        support_size: theta_hat.iter().filter(|v| **v != 0.0).count(),
        noise_std_cov: private.noise_std_cov,
        noise_std_xy: private.noise_std_xy,
    };
    Ok(Estimate { theta_hat, theta_bar, stats: private, diagnostics })
}

/// Exportable summary of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub theta_bar: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub diagnostics: Diagnostics,
    pub config: EstimatorConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub squared_error: Option<f64>,
}

impl EstimateRecord {
    pub fn new(est: &Estimate, cfg: &EstimatorConfig, truth: Option<&Vector>) -> Self {
        Self {
            theta_bar: est.theta_bar.iter().copied().collect(),
            theta_hat: est.theta_hat.iter().copied().collect(),
            diagnostics: est.diagnostics.clone(),
            config: cfg.clone(),
            squared_error: truth.map(|t| (&est.theta_bar - t).norm_squared()),
        }
    }
}
