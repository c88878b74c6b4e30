//! Offline bandit datasets: synthetic environments, the voting-data loader,
//! min-max normalization, and CSV persistence.

mod normalize;
pub mod synthetic;
pub mod voting;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normalize::{normalize_all, ColumnScale, Normalization};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unknown city label `{0}`")]
    UnknownCity(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Continuous,
    Binary,
    /// Integer codes `0..k`.
    Categorical(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self { name: name.into(), kind }
    }
}

/// Logged bandit rows `(x, a, y)` from one environment, stored column-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditDataset {
    /// Environment label.
    pub env: String,
    /// Covariate schema; the reward is kept separately.
    pub columns: Vec<Column>,
    /// One value vector per covariate column.
    pub values: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Name under which the reward appears in causal graphs.
    pub reward_name: String,
    pub num_actions: usize,
    /// Context-free logging policy probabilities, one per action.
    pub logging_policy: Vec<f64>,
    /// Set when the covariates and reward have been min-max scaled.
    pub normalization: Option<Normalization>,
}

impl BanditDataset {
    pub fn new(
        env: impl Into<String>,
        columns: Vec<Column>,
        reward_name: impl Into<String>,
        num_actions: usize,
        logging_policy: Vec<f64>,
    ) -> Self {
        let values = vec![Vec::new(); columns.len()];
        Self {
            env: env.into(),
            columns,
            values,
            actions: Vec::new(),
            rewards: Vec::new(),
            reward_name: reward_name.into(),
            num_actions,
            logging_policy,
            normalization: None,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn push_row(&mut self, x: &[f64], action: usize, reward: f64) {
        assert_eq!(x.len(), self.columns.len(), "row width must match the schema");
        assert!(action < self.num_actions, "action index out of range");
        for (col, &v) in self.values.iter_mut().zip(x) {
            col.push(v);
        }
        self.actions.push(action);
        self.rewards.push(reward);
    }

    /// Covariate row `i` in schema order.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|c| c[i]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Values of a covariate or of the reward, looked up by graph node name.
    pub fn variable(&self, name: &str) -> Option<&[f64]> {
        if name == self.reward_name {
            return Some(&self.rewards);
        }
        self.column_index(name).map(|i| self.values[i].as_slice())
    }

    /// Kind of a covariate or of the reward (always continuous).
    pub fn variable_kind(&self, name: &str) -> Option<ColumnKind> {
        if name == self.reward_name {
            return Some(ColumnKind::Continuous);
        }
        self.column_index(name).map(|i| self.columns[i].kind)
    }

    /// Rows selected by `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut out = self.clone();
        out.values = self.values.iter().map(|c| idx.iter().map(|&i| c[i]).collect()).collect();
        out.actions = idx.iter().map(|&i| self.actions[i]).collect();
        out.rewards = idx.iter().map(|&i| self.rewards[i]).collect();
        out
    }

    pub fn same_schema(&self, other: &Self) -> bool {
        self.columns == other.columns && self.reward_name == other.reward_name && self.num_actions == other.num_actions
    }

    /// Concatenates datasets with a common schema under a new label.
    pub fn pool(parts: &[&Self], env: &str) -> Result<Self, DataError> {
        let first = parts.first().ok_or_else(|| DataError::Invalid("nothing to pool".into()))?;
        let mut out = (*first).clone();
        out.env = env.to_string();
        for p in &parts[1..] {
            if !first.same_schema(p) {
                return Err(DataError::SchemaMismatch(format!("{} vs {}", first.env, p.env)));
            }
            for (c, pc) in out.values.iter_mut().zip(&p.values) {
                c.extend_from_slice(pc);
            }
            out.actions.extend_from_slice(&p.actions);
            out.rewards.extend_from_slice(&p.rewards);
        }
        Ok(out)
    }

    /// Writes `<stem>.csv` with the rows and `<stem>.json` with schema and metadata.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), DataError> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        let mut header: Vec<String> = self.columns.iter().map(|c| c.name.clone()).collect();
        header.push("action".into());
        header.push(self.reward_name.clone());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.values.iter().map(|c| format!("{:?}", c[i])).collect();
            rec.push(self.actions[i].to_string());
            rec.push(format!("{:?}", self.rewards[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        let meta = Sidecar {
            env: self.env.clone(),
            columns: self.columns.clone(),
            reward_name: self.reward_name.clone(),
            num_actions: self.num_actions,
            logging_policy: self.logging_policy.clone(),
            normalization: self.normalization.clone(),
        };
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, DataError> {
        let meta: Sidecar = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let mut ds = Self::new(meta.env, meta.columns, meta.reward_name, meta.num_actions, meta.logging_policy);
        ds.normalization = meta.normalization;
        let mut r = csv::Reader::from_path(dir.join(format!("{stem}.csv")))?;
        let width = ds.columns.len();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != width + 2 {
                return Err(DataError::Invalid(format!("row has {} fields, expected {}", rec.len(), width + 2)));
            }
            let parse = |s: &str| s.parse::<f64>().map_err(|e| DataError::Invalid(format!("{s}: {e}")));
            let x: Vec<f64> = (0..width).map(|j| parse(&rec[j])).collect::<Result<_, _>>()?;
            let a: usize = rec[width].parse().map_err(|e| DataError::Invalid(format!("action: {e}")))?;
            if a >= ds.num_actions {
                return Err(DataError::Invalid(format!("action {a} out of range")));
            }
            ds.push_row(&x, a, parse(&rec[width + 1])?);
        }
        Ok(ds)
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    env: String,
    columns: Vec<Column>,
    reward_name: String,
    num_actions: usize,
    logging_policy: Vec<f64>,
    normalization: Option<Normalization>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BanditDataset {
        let cols = vec![Column::new("X0", ColumnKind::Continuous), Column::new("B", ColumnKind::Binary)];
        let mut ds = BanditDataset::new("e0", cols, "Y", 2, vec![0.5, 0.5]);
        ds.push_row(&[0.1, 1.0], 0, 2.5);
        ds.push_row(&[-3.25, 0.0], 1, 1.0 / 3.0);
        ds
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        ds.save(dir.path(), "env0").unwrap();
        assert_eq!(BanditDataset::load(dir.path(), "env0").unwrap(), ds);
    }

    #[test]
    fn pooling_checks_schema() {
        let a = tiny();
        let mut b = tiny();
        let p = BanditDataset::pool(&[&a, &b], "pooled").unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.variable("Y").unwrap()[2], 2.5);
        b.columns[1].kind = ColumnKind::Continuous;
        assert!(BanditDataset::pool(&[&a, &b], "pooled").is_err());
    }

    #[test]
    fn subset_keeps_alignment() {
        let ds = tiny().subset(&[1]);
        assert_eq!(ds.row(0), vec![-3.25, 0.0]);
        assert_eq!(ds.actions, vec![1]);
    }
}
