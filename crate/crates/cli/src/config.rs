//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error so typos do not silently fall back to defaults.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use semrobust::baselines::KLConfig;
use semrobust::semcp::ProgramConfig;
use semrobust::shiftdetect::ShiftConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    Semcp,
    Dro,
    Fdro,
    Nonrobust,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Semcp, Method::Dro, Method::Fdro, Method::Nonrobust];

    pub fn name(self) -> &'static str {
        match self {
            Method::Semcp => "semcp",
            Method::Dro => "dro",
            Method::Fdro => "fdro",
            Method::Nonrobust => "nonrobust",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("expected one of semcp, dro, fdro, nonrobust, got `{s}`"))
    }
}

/// Parses a comma-separated method list, keeping the first occurrence of each.
pub fn parse_methods(s: &str) -> Result<Vec<Method>, String> {
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let m: Method = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err("no methods given".into());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSpec {
    /// Generated synthetic environments.
    Synthetic,
    /// Voting-schema CSV file.
    Csv(PathBuf),
}

/// Policy evaluated by the evaluation task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicySpec {
    Uniform,
    /// JSON policy file over normalized context features.
    File(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Rows per synthetic environment.
    pub rows: usize,
    /// Bundled graph name or graph file path; `None` picks the dataset's well-specified graph.
    pub graph: Option<String>,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub plot: bool,
    pub policy: PolicySpec,
    /// Fixed shifted-node set; `None` runs shift detection every trial.
    pub shifted: Option<BTreeSet<String>>,
    pub shift: ShiftConfig,
    pub semcp: ProgramConfig,
    pub kl: KLConfig,
    /// Estimate the KL radii from the training environments of every trial.
    pub kl_auto: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Synthetic,
            rows: 3000,
            graph: None,
            methods: Method::ALL.to_vec(),
            trials: 10,
            seed: 0,
            out: PathBuf::from("results"),
            plot: false,
            policy: PolicySpec::Uniform,
            shifted: None,
            shift: ShiftConfig::default(),
            semcp: ProgramConfig::default(),
            kl: KLConfig::default(),
            kl_auto: true,
        }
    }
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| ConfigError::Value { key: key.into(), value: v.into(), reason: e.to_string() })
}

impl ExperimentConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let v = v.trim();
        match key {
            "dataset" => {
                self.dataset = if v.eq_ignore_ascii_case("synthetic") {
                    DatasetSpec::Synthetic
                } else {
                    DatasetSpec::Csv(PathBuf::from(v.strip_prefix("csv:").unwrap_or(v)))
                }
            }
            "rows" => self.rows = value(key, v)?,
            "graph" => self.graph = Some(v.to_string()),
            "methods" => {
                self.methods = parse_methods(v).map_err(|reason| ConfigError::Value {
                    key: key.into(),
                    value: v.into(),
                    reason,
                })?
            }
            "trials" => self.trials = value(key, v)?,
            "seed" => self.seed = value(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "plot" => self.plot = value(key, v)?,
            "policy" => {
                self.policy = if v.eq_ignore_ascii_case("uniform") {
                    PolicySpec::Uniform
                } else {
                    PolicySpec::File(PathBuf::from(v))
                }
            }
            "shifted" => {
                self.shifted = if v.eq_ignore_ascii_case("detect") {
                    None
                } else {
                    Some(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
                }
            }
            "shift.alpha" => self.shift.alpha_level = value(key, v)?,
            "shift.permutations" => self.shift.permutations = value(key, v)?,
            "shift.max_rows" => self.shift.max_rows = value(key, v)?,
            "semcp.contexts" => self.semcp.contexts = value(key, v)?,
            "semcp.antithetic" => self.semcp.antithetic = value(key, v)?,
            "semcp.tie_break" => self.semcp.tie_break = value(key, v)?,
            "kl.delta" | "kl.delta_cov" | "kl.delta_rew" if v.eq_ignore_ascii_case("auto") => self.kl_auto = true,
            "kl.delta" => {
                self.kl.delta = value(key, v)?;
                self.kl_auto = false;
            }
            "kl.delta_cov" => {
                self.kl.delta_cov = value(key, v)?;
                self.kl_auto = false;
            }
            "kl.delta_rew" => {
                self.kl.delta_rew = value(key, v)?;
                self.kl_auto = false;
            }
            "kl.alpha_min" => self.kl.alpha_min = value(key, v)?,
            "kl.alpha_max" => self.kl.alpha_max = value(key, v)?,
            "kl.restart_limit" => self.kl.restart_limit = value(key, v)?,
            "kl.epochs" => self.kl.epochs = value(key, v)?,
            "kl.max_iters" => self.kl.max_iters = value(key, v)?,
            "kl.learning_rate" => self.kl.learning_rate = value(key, v)?,
            "kl.warm_start_epochs" => self.kl.warm_start_epochs = value(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies every setting in `text` on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: t.to_string() })?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::parse(&text)
    }

    /// Checks the invariants that do not need the filesystem.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.trials < 1 {
            return Err(ConfigError::Invalid("trials must be at least 1".into()));
        }
        if self.rows < 10 {
            return Err(ConfigError::Invalid("rows must be at least 10".into()));
        }
        if self.methods.is_empty() {
            return Err(ConfigError::Invalid("no methods selected".into()));
        }
        self.kl.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let DatasetSpec::Csv(p) = &self.dataset {
            if !p.exists() {
                return Err(ConfigError::Invalid(format!("dataset file {} does not exist", p.display())));
            }
        }
        if let PolicySpec::File(p) = &self.policy {
            if !p.exists() {
                return Err(ConfigError::Invalid(format!("policy file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Graph name or path after applying the dataset default.
    pub fn graph_source(&self) -> String {
        self.graph.clone().unwrap_or_else(|| match self.dataset {
            DatasetSpec::Synthetic => "synthetic_well".into(),
            DatasetSpec::Csv(_) => "voting_well".into(),
        })
    }
}
