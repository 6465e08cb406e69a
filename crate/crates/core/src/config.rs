//! Run configuration: one TOML file with a section per component.
//!
//! ```toml
//! seed = 7                 # master seed; overrides the per-section seeds
//! parallel = 4             # worker threads for Monte Carlo trials
//! instance = "inst.json"   # optional saved instance instead of [synth]
//!
//! [synth]
//! n = 2000
//! d = 50
//!
//! [privacy]
//! eps = 1.0
//! delta = 1e-3
//!
//! [calibration]
//! m_lambda = 0.5
//!
//! [mechanism]
//! a2 = 0.1
//!
//! [schedule]
//! n_grid = [1024, 2048, 4096]
//! trials = 20
//! ```
//!
//! Every key is optional and unknown keys are rejected. A missing section takes
//! the file defaults below (a small well-conditioned problem); missing keys inside
//! a present section take that component's own defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{Calibration, PrivacyBudget};
use crate::experiments::CorollarySchedule;
use crate::mechanism::{MechanismConfig, MisreportModel};
use crate::rng::derive_seed;
use crate::synth::SynthConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path} does not match the schema: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacySection {
    pub eps: f64,
    pub delta: f64,
}

impl Default for PrivacySection {
    fn default() -> Self {
        Self { eps: 5.0, delta: 1e-4 }
    }
}

impl PrivacySection {
    pub fn budget(&self) -> Result<PrivacyBudget, ConfigError> {
        PrivacyBudget::new(self.eps, self.delta).map_err(|e| ConfigError::Invalid(format!("[privacy] {e}")))
    }
}

/// Values that replace the schedule-derived mechanism parameters for a single run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismOverrides {
    /// Defaults to the individual-rationality bound.
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub tau: Option<f64>,
    pub prior_scale: Option<f64>,
    pub resp_noise: Option<f64>,
    pub misreport_model: Option<MisreportModel>,
    pub cost_realization: Option<f64>,
}

impl MechanismOverrides {
    /// Applies the overrides. `a1` is recomputed from the final parameters unless pinned.
    pub fn apply(&self, cfg: &mut MechanismConfig) {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut cfg.a2, self.a2);
        set(&mut cfg.alpha, self.alpha);
        set(&mut cfg.beta, self.beta);
        set(&mut cfg.prior_scale, self.prior_scale);
        set(&mut cfg.resp_noise, self.resp_noise);
        set(&mut cfg.cost_realization, self.cost_realization);
        if self.tau.is_some() {
            cfg.tau = self.tau;
        } else if self.alpha.is_some() || self.beta.is_some() {
            cfg.tau = None;
        }
        if let Some(m) = self.misreport_model {
            cfg.misreport_model = m;
        }
        cfg.a1 = self.a1.unwrap_or_else(|| cfg.ir_bound());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    /// Execution detail only; left out of metadata so outputs match across thread counts.
    #[serde(skip_serializing)]
    pub parallel: Option<usize>,
    pub instance: Option<PathBuf>,
    pub synth: SynthConfig,
    pub privacy: PrivacySection,
    pub calibration: Calibration,
    pub mechanism: MechanismOverrides,
    pub schedule: CorollarySchedule,
}

// Defaults sit where a single run has a well-conditioned private covariance.
impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            seed: None,
            parallel: None,
            instance: None,
            synth: SynthConfig { n: 1000, d: 10, k: 3, ..SynthConfig::default() },
            privacy: PrivacySection::default(),
            calibration: Calibration { m_r: 0.5, m_x: 0.5, ..Calibration::default() },
            mechanism: MechanismOverrides::default(),
            schedule: CorollarySchedule::default(),
        }
    }
}

// Tags for deriving section seeds from the master seed.
const SEED_SYNTH: u64 = 1;
const SEED_NOISE: u64 = 2;
const SEED_MECHANISM: u64 = 3;

impl ConfigFile {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Schema {
            path: origin.to_path_buf(),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml_str(&text, path)?;
        if let Some(inst) = &cfg.instance {
            if inst.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.instance = Some(dir.join(inst));
                }
            }
        }
        Ok(cfg)
    }

    /// Replaces the section seeds with ones derived from `master`.
    pub fn with_master_seed(mut self, master: u64) -> Self {
        self.seed = Some(master);
        self.synth.seed = derive_seed(master, &[SEED_SYNTH]);
        self.calibration.seed = derive_seed(master, &[SEED_NOISE]);
        self.schedule.seed = master;
        self
    }

    /// Seed for the report draws and partition of a single mechanism run.
    pub fn mechanism_seed(&self) -> u64 {
        derive_seed(self.seed.unwrap_or(self.synth.seed), &[SEED_MECHANISM])
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.parallel == Some(0) {
            return Err(ConfigError::Invalid("parallel must be >= 1".into()));
        }
        if self.instance.is_none() {
            self.synth.validate().map_err(|e| ConfigError::Invalid(format!("[synth] {e}")))?;
        }
        self.privacy.budget()?;
        self.schedule.validate().map_err(|e| ConfigError::Invalid(format!("[schedule] {e}")))?;
        Ok(())
    }
}
