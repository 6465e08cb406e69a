//! Reported datasets: covariates as observed, responses as reported by agents.

use serde::{Deserialize, Serialize};

use crate::numerics::Vector;
use crate::synth::RegressionInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Truthful,
    Misreported,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub x: Vector,
    pub y_hat: f64,
}

/// Covariates are never manipulated; only `y_hat` may differ from the true response.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportedDataset {
    pub records: Vec<Report>,
    pub provenance: Vec<Provenance>,
}

impl ReportedDataset {
    pub fn new(records: Vec<Report>, provenance: Vec<Provenance>) -> Self {
        assert_eq!(records.len(), provenance.len(), "provenance length must match records");
        Self { records, provenance }
    }

    /// Every agent reports its true response.
    pub fn truthful(inst: &RegressionInstance) -> Self {
        let records: Vec<Report> = inst
            .agents
            .iter()
            .map(|a| Report { x: a.x.clone(), y_hat: a.y })
            .collect();
        let provenance = vec![Provenance::Truthful; records.len()];
        Self { records, provenance }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Vector, f64)>) -> Self {
        let records: Vec<Report> = pairs.into_iter().map(|(x, y_hat)| Report { x, y_hat }).collect();
        let provenance = vec![Provenance::Truthful; records.len()];
        Self { records, provenance }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Covariate dimension, or `None` for an empty dataset.
    pub fn dim(&self) -> Option<usize> {
        self.records.first().map(|r| r.x.len())
    }

    /// Sub-dataset with the listed records, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            provenance: indices.iter().map(|&i| self.provenance[i]).collect(),
        }
    }

    pub fn misreported_count(&self) -> usize {
        self.provenance.iter().filter(|p| **p == Provenance::Misreported).count()
    }
}
