//! File output: CSV tables, JSON sidecars, and saved instances.
//!
//! Tables are UTF-8 with LF line endings and a header row; floats use the
//! shortest round-tripping decimal form and empty fields mark missing values.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Provenance;
use crate::mechanism::MechanismOutcome;
use crate::numerics::{SymMatrix, Vector};
use crate::synth::{kappa_inf_estimate, AgentRecord, RegressionInstance, SynthConfig};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write table {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub const INSTANCE_FORMAT_VERSION: u32 = 1;

/// Version string written into every metadata sidecar.
pub fn version_string() -> String {
    format!("privreg {}", env!("CARGO_PKG_VERSION"))
}

pub fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| IoError::Write { path: path.to_path_buf(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let write_err = |source| IoError::Write { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(write_err)?);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| IoError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    w.write_all(b"\n").map_err(write_err)?;
    w.flush().map_err(write_err)
}

/// Sidecar describing how a table was produced.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata<'a, C: Serialize, S: Serialize> {
    pub version: String,
    pub command: &'a str,
    pub tables: Vec<String>,
    pub master_seed: Option<u64>,
    pub config: &'a C,
    pub summary: S,
}

/// One row of the per-agent mechanism table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentRow {
    pub agent_id: usize,
    pub group: u8,
    pub c_i: f64,
    pub truthful: bool,
    pub p_i: f64,
    pub q_i: f64,
    pub pi_i: f64,
    pub u_i: f64,
}

pub fn agent_rows(out: &MechanismOutcome) -> Vec<AgentRow> {
    (0..out.n())
        .map(|i| AgentRow {
            agent_id: i,
            group: out.group_assignment[i],
            c_i: out.costs[i],
            truthful: out.provenance[i] == Provenance::Truthful,
            p_i: out.audit[i].p,
            q_i: out.audit[i].q,
            pi_i: out.payments[i],
            u_i: out.utilities[i],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentEntry {
    x: Vec<f64>,
    y: f64,
    c: f64,
}

/// Versioned on-disk form of a generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub format_version: u32,
    /// Generator settings; `d`, `sigma`, `sigma_zeta`, and `cost_rate` describe the population.
    pub synth: SynthConfig,
    theta_star: Vec<f64>,
    /// Row-major `d x d` correlation matrix.
    sigma: Vec<Vec<f64>>,
    agents: Vec<AgentEntry>,
}

impl InstanceFile {
    pub fn new(inst: &RegressionInstance, synth: &SynthConfig) -> Self {
        let m = inst.sigma.as_matrix();
        Self {
            format_version: INSTANCE_FORMAT_VERSION,
            synth: synth.clone(),
            theta_star: inst.theta_star.iter().copied().collect(),
            sigma: (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect(),
            agents: inst
                .agents
                .iter()
                .map(|a| AgentEntry { x: a.x.iter().copied().collect(), y: a.y, c: a.c })
                .collect(),
        }
    }

    pub fn into_instance(self, path: &Path) -> Result<(RegressionInstance, SynthConfig), IoError> {
        let fail = |message: String| Err(IoError::Format { path: path.to_path_buf(), message });
        if self.format_version != INSTANCE_FORMAT_VERSION {
            return fail(format!(
                "instance format version {} is not supported (expected {INSTANCE_FORMAT_VERSION})",
                self.format_version
            ));
        }
        let d = self.theta_star.len();
        if d != self.synth.d || self.sigma.len() != d || self.sigma.iter().any(|r| r.len() != d) {
            return fail(format!("theta_star, sigma, and synth.d disagree on the dimension (theta_star has {d})"));
        }
        if let Some(i) = self.agents.iter().position(|a| a.x.len() != d) {
            return fail(format!("agent {i} has a covariate of length {}, expected {d}", self.agents[i].x.len()));
        }
        let flat = nalgebra::DMatrix::from_fn(d, d, |i, j| self.sigma[i][j]);
        let sigma = match SymMatrix::new(flat) {
            Ok(s) => s,
            Err(e) => return fail(format!("sigma: {e}")),
        };
        let agents: Vec<AgentRecord> = self
            .agents
            .into_iter()
            .map(|a| AgentRecord { x: Vector::from_vec(a.x), y: a.y, c: a.c })
            .collect();
        let mut synth = self.synth;
        synth.n = agents.len();
        let inst = RegressionInstance {
            theta_star: Vector::from_vec(self.theta_star),
            kappa_inf: kappa_inf_estimate(&sigma),
            sigma,
            agents,
        };
        Ok((inst, synth))
    }
}

pub fn save_instance(path: &Path, inst: &RegressionInstance, synth: &SynthConfig) -> Result<(), IoError> {
    write_json(path, &InstanceFile::new(inst, synth))
}

pub fn load_instance(path: &Path) -> Result<(RegressionInstance, SynthConfig), IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read { path: path.to_path_buf(), source })?;
    let file: InstanceFile = serde_json::from_str(&text)
        .map_err(|e| IoError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    file.into_instance(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::sample_instance;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("privreg-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[derive(Serialize)]
    struct Row {
        n: usize,
        value: Option<f64>,
        label: &'static str,
    }

    #[test]
    fn table_has_header_lf_and_empty_missing_values() {
        let path = tmp("table.csv");
        write_table(&path, &[Row { n: 1, value: Some(0.5), label: "a" }, Row { n: 2, value: None, label: "b" }])
            .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "n,value,label\n1,0.5,a\n2,,b\n");
    }

    #[test]
    fn instance_round_trips() {
        let synth = SynthConfig { n: 30, d: 4, k: 2, seed: 9, ..SynthConfig::default() };
        let inst = sample_instance(&synth).unwrap();
        let path = tmp("inst.json");
        save_instance(&path, &inst, &synth).unwrap();
        let (back, back_synth) = load_instance(&path).unwrap();
        assert_eq!(back_synth, synth);
        assert_eq!(back.theta_star, inst.theta_star);
        assert_eq!(back.agents, inst.agents);
        assert_eq!(back.sigma, inst.sigma);
        assert_eq!(back.kappa_inf, inst.kappa_inf);
    }

    #[test]
    fn instance_version_and_shape_are_checked() {
        let synth = SynthConfig { n: 5, d: 3, k: 1, ..SynthConfig::default() };
        let inst = sample_instance(&synth).unwrap();
        let mut file = InstanceFile::new(&inst, &synth);
        file.format_version = 99;
        assert!(file.clone().into_instance(Path::new("x")).unwrap_err().to_string().contains("version"));
        file.format_version = INSTANCE_FORMAT_VERSION;
        file.agents[2].x.pop();
        assert!(file.into_instance(Path::new("x")).unwrap_err().to_string().contains("agent 2"));
    }
}
