use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::BanditDataset;
use crate::graph::{CausalGraph, NodeKind};
use crate::semfit::Frame;

use super::SemcpError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    UniformRandom,
    /// Deterministic choice per distinct context; unseen contexts get `default`.
    TabularArgmax {
        table: BTreeMap<String, usize>,
        default: usize,
    },
    /// `argmax_a (bias[a] + weights[a] · x)`.
    LinearArgmax {
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
    /// `softmax_a (bias[a] + weights[a] · x)`.
    SoftmaxLinear {
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
}

/// A policy over `num_actions` actions reading the named context features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub kind: PolicyKind,
    pub num_actions: usize,
    pub features: Vec<String>,
}

/// Context variables a policy may read: everything the action cannot influence.
pub fn policy_features(g: &CausalGraph) -> Vec<String> {
    let desc = g.action_descendants();
    (0..g.len())
        .filter(|&i| !matches!(g.kind(i), NodeKind::Action | NodeKind::Outcome) && !desc.contains(&i))
        .map(|i| g.name(i).to_string())
        .collect()
}

/// Key for tabular policies.
pub fn context_key(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn linear_scores(weights: &[Vec<f64>], bias: &[f64], x: &[f64]) -> Vec<f64> {
    weights.iter().zip(bias).map(|(w, b)| b + w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()).collect()
}

impl Policy {
    pub fn uniform(num_actions: usize, features: Vec<String>) -> Self {
        Self { kind: PolicyKind::UniformRandom, num_actions, features }
    }

    /// Action probabilities at context `x` (ordered as `features`).
    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let d = self.num_actions;
        let one_hot = |a: usize| {
            let mut p = vec![0.0; d];
            p[a] = 1.0;
            p
        };
        match &self.kind {
            PolicyKind::UniformRandom => vec![1.0 / d as f64; d],
            PolicyKind::TabularArgmax { table, default } => one_hot(*table.get(&context_key(x)).unwrap_or(default)),
            PolicyKind::LinearArgmax { weights, bias } => one_hot(argmax(&linear_scores(weights, bias, x))),
            PolicyKind::SoftmaxLinear { weights, bias } => softmax(&linear_scores(weights, bias, x)),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.kind, PolicyKind::TabularArgmax { .. } | PolicyKind::LinearArgmax { .. }) || self.num_actions == 1
    }

    fn rows(&self, frame: &Frame) -> Result<Vec<Vec<f64>>, SemcpError> {
        for f in &self.features {
            if frame.get(f).is_none() {
                return Err(SemcpError::MissingFeature(f.clone()));
            }
        }
        Ok((0..frame.n).map(|i| frame.row(&self.features, i)).collect())
    }

    /// Probabilities for every row of `frame`.
    pub fn probs_frame(&self, frame: &Frame) -> Result<Vec<Vec<f64>>, SemcpError> {
        Ok(self.rows(frame)?.iter().map(|x| self.probs(x)).collect())
    }

    /// Probabilities for every row of a dataset.
    pub fn probs_dataset(&self, ds: &BanditDataset) -> Result<Vec<Vec<f64>>, SemcpError> {
        self.probs_frame(&Frame::from_dataset(ds))
    }

    pub fn save(&self, path: &Path) -> Result<(), SemcpError> {
        let s = serde_json::to_string_pretty(self).map_err(|e| SemcpError::Io(e.to_string()))?;
        std::fs::write(path, s).map_err(|e| SemcpError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SemcpError> {
        let s = std::fs::read_to_string(path).map_err(|e| SemcpError::Io(e.to_string()))?;
        serde_json::from_str(&s).map_err(|e| SemcpError::Io(e.to_string()))
    }
}
