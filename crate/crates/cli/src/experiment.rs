//! Trial runner for the robust evaluation and learning comparisons.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use semrobust::baselines::{
    dro_evaluate, dro_learn, fdro_evaluate, fdro_learn, ipw_learn, kl_radius, logging_policy, snips, BaselineError,
    CellCache, KLConfig,
};
use semrobust::data::synthetic::{environments, generate_synthetic, test_potential_outcomes, PotentialOutcomes, Split};
use semrobust::data::voting::{load_voting, VotingConfig};
use semrobust::data::{normalize_all, BanditDataset, ColumnScale, DataError, Normalization};
use semrobust::fixtures::bundled_graph;
use semrobust::graph::{CausalGraph, GraphError};
use semrobust::semcp::{policy_features, Policy, Semcp, SemcpError};
use semrobust::shiftdetect::{detect_shifts, ShiftError};
use thiserror::Error;

use crate::config::{ConfigError, DatasetSpec, ExperimentConfig, Method, PolicySpec};
use crate::report::{ResultTable, Task, TrialRow, REFERENCE};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Shift(#[from] ShiftError),
    #[error(transparent)]
    Semcp(#[from] SemcpError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("{0}")]
    Other(String),
}

/// Resolves a bundled graph name or reads a graph file.
pub fn load_graph(source: &str) -> Result<CausalGraph, ExperimentError> {
    if let Some(g) = bundled_graph(source) {
        return Ok(g?);
    }
    let text = std::fs::read_to_string(source)
        .map_err(|e| ConfigError::Invalid(format!("graph `{source}` is neither bundled nor readable: {e}")))?;
    Ok(CausalGraph::parse(&text)?)
}

/// How test-environment returns are obtained.
enum TestSet {
    /// Potential outcomes per synthetic test environment, raw scale.
    Simulated(Vec<(String, PotentialOutcomes)>),
    /// Held-out logged data per test environment, normalized.
    Logged(Vec<BanditDataset>),
}

/// Normalized training data and test environments of one trial.
pub struct TrialData {
    pub train: Vec<BanditDataset>,
    pub norm: Normalization,
    test: TestSet,
}

impl TrialData {
    pub fn test_envs(&self) -> Vec<String> {
        match &self.test {
            TestSet::Simulated(v) => v.iter().map(|(n, _)| n.clone()).collect(),
            TestSet::Logged(v) => v.iter().map(|d| d.env.clone()).collect(),
        }
    }

    pub fn reward_scale(&self) -> Result<&ColumnScale, ExperimentError> {
        let name = &self.train[0].reward_name;
        self.norm.get(name).ok_or_else(|| ExperimentError::Other(format!("no scale for `{name}`")))
    }

    pub fn pooled(&self) -> Result<BanditDataset, ExperimentError> {
        let refs: Vec<&BanditDataset> = self.train.iter().collect();
        Ok(BanditDataset::pool(&refs, "pooled")?)
    }

    /// Normalized return of `policy` on every test environment.
    pub fn test_returns(&self, policy: &Policy) -> Result<Vec<f64>, ExperimentError> {
        let scale = self.reward_scale()?.clone();
        match &self.test {
            TestSet::Simulated(envs) => {
                let sx0 = self.norm.get("X0").cloned();
                let sx1 = self.norm.get("X1").cloned();
                let (Some(sx0), Some(sx1)) = (sx0, sx1) else {
                    return Err(ExperimentError::Other("synthetic normalization lacks X0/X1".into()));
                };
                let pick: Vec<usize> = policy
                    .features
                    .iter()
                    .map(|f| match f.as_str() {
                        "X0" => Ok(0),
                        "X1" => Ok(1),
                        other => Err(ExperimentError::Other(format!("policy feature `{other}` is not a context"))),
                    })
                    .collect::<Result<_, _>>()?;
                Ok(envs
                    .iter()
                    .map(|(_, po)| {
                        let raw = po.policy_value(|x| {
                            let z = [sx0.apply(x[0]), sx1.apply(x[1])];
                            let feats: Vec<f64> = pick.iter().map(|&k| z[k]).collect();
                            policy.probs(&feats)
                        });
                        scale.apply(raw)
                    })
                    .collect())
            }
            TestSet::Logged(envs) => envs
                .iter()
                .map(|ds| {
                    let pi0 = logging_policy(ds, policy.features.clone());
                    Ok(snips(ds, policy, &pi0)?)
                })
                .collect(),
        }
    }
}

fn bootstrap(ds: &BanditDataset, n: usize, rng: &mut ChaCha8Rng) -> BanditDataset {
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..ds.len())).collect();
    ds.subset(&idx)
}

/// Builds the data of one trial from its seed.
pub fn trial_data(cfg: &ExperimentConfig, seed: u64) -> Result<TrialData, ExperimentError> {
    match &cfg.dataset {
        DatasetSpec::Synthetic => {
            let raw = generate_synthetic(cfg.rows, Split::Train, seed);
            let (train, _, norm) = normalize_all(&raw, &[])?;
            let pos = test_potential_outcomes(cfg.rows, seed);
            let names = environments(Split::Test).into_iter().map(|e| e.label);
            Ok(TrialData { train, norm, test: TestSet::Simulated(names.zip(pos).collect()) })
        }
        DatasetSpec::Csv(path) => {
            let data = load_voting(path, &VotingConfig::default())?;
            if data.train.len() < 2 || data.test.is_empty() {
                return Err(ExperimentError::Other(format!(
                    "{} has {} training and {} test environments",
                    path.display(),
                    data.train.len(),
                    data.test.len()
                )));
            }
            // Trials differ by a bootstrap resample of each training environment.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let train: Vec<BanditDataset> =
                data.train.iter().map(|d| bootstrap(d, d.len().min(cfg.rows), &mut rng)).collect();
            let (train, test, norm) = normalize_all(&train, &data.test)?;
            Ok(TrialData { train, norm, test: TestSet::Logged(test) })
        }
    }
}

/// Radii for one trial: configured values, or estimates from the training environments.
pub fn kl_config(
    cfg: &ExperimentConfig,
    data: &TrialData,
    features: &[String],
    seed: u64,
) -> Result<KLConfig, ExperimentError> {
    let mut kl = KLConfig { seed, ..cfg.kl.clone() };
    if cfg.kl_auto {
        let reward = data.train[0].reward_name.clone();
        let mut joint = features.to_vec();
        joint.push(reward.clone());
        kl.delta = kl_radius(&data.train, &joint)?.delta;
        kl.delta_cov = kl_radius(&data.train, features)?.delta;
        kl.delta_rew = kl_radius(&data.train, &[reward])?.delta;
    }
    Ok(kl)
}

fn shifted_set(
    cfg: &ExperimentConfig,
    data: &TrialData,
    g: &CausalGraph,
    seed: u64,
) -> Result<BTreeSet<String>, ExperimentError> {
    if let Some(s) = &cfg.shifted {
        return Ok(s.clone());
    }
    let shift = semrobust::shiftdetect::ShiftConfig { seed, ..cfg.shift.clone() };
    Ok(detect_shifts(&data.train, g, &shift)?.shifted)
}

fn semcp_model(cfg: &ExperimentConfig, data: &TrialData, g: &CausalGraph, seed: u64) -> Result<Semcp, ExperimentError> {
    let shifted = shifted_set(cfg, data, g, seed)?;
    let program = semrobust::semcp::ProgramConfig { seed, ..cfg.semcp.clone() };
    Ok(Semcp::new(&data.train, g, &shifted, program)?)
}

fn evaluate_method(
    method: Method,
    cfg: &ExperimentConfig,
    data: &TrialData,
    g: &CausalGraph,
    policy: &Policy,
    seed: u64,
) -> Result<f64, ExperimentError> {
    let features = policy_features(g);
    match method {
        Method::Semcp => {
            let s = semcp_model(cfg, data, g, seed)?;
            let res =
                if matches!(cfg.policy, PolicySpec::Uniform) { s.worst_case()?.clone() } else { s.evaluate(policy)? };
            Ok(res.objective)
        }
        Method::Dro | Method::Fdro | Method::Nonrobust => {
            let pooled = data.pooled()?;
            let pi0 = logging_policy(&pooled, features.clone());
            let kl = kl_config(cfg, data, &features, seed)?;
            Ok(match method {
                Method::Dro => dro_evaluate(&pooled, policy, &pi0, kl.delta, &kl)?.value,
                Method::Fdro => {
                    fdro_evaluate(&pooled, policy, &pi0, kl.delta_cov, kl.delta_rew, &kl, &CellCache::new())?.dual.value
                }
                _ => snips(&pooled, policy, &pi0)?,
            })
        }
    }
}

fn evaluated_policy(cfg: &ExperimentConfig, g: &CausalGraph, num_actions: usize) -> Result<Policy, ExperimentError> {
    match &cfg.policy {
        PolicySpec::Uniform => Ok(Policy::uniform(num_actions, policy_features(g))),
        PolicySpec::File(p) => Ok(Policy::load(p)?),
    }
}

fn trial_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    cfg.seed.wrapping_add(trial as u64)
}

fn evaluation_trial(cfg: &ExperimentConfig, g: &CausalGraph, trial: usize) -> Vec<TrialRow> {
    let seed = trial_seed(cfg, trial);
    let fail_all = |e: &dyn std::fmt::Display| {
        let mut rows: Vec<TrialRow> =
            cfg.methods.iter().map(|m| TrialRow::failed(m.name(), trial, seed, e, 0)).collect();
        rows.push(TrialRow::failed(REFERENCE, trial, seed, e, 0));
        rows
    };
    let data = match trial_data(cfg, seed) {
        Ok(d) => d,
        Err(e) => return fail_all(&e),
    };
    let scale = match data.reward_scale() {
        Ok(s) => s.clone(),
        Err(e) => return fail_all(&e),
    };
    let policy = match evaluated_policy(cfg, g, data.train[0].num_actions) {
        Ok(p) => p,
        Err(e) => return fail_all(&e),
    };
    let mut rows: Vec<TrialRow> = cfg
        .methods
        .iter()
        .map(|&m| match evaluate_method(m, cfg, &data, g, &policy, seed) {
            Ok(v) => TrialRow::ok(m.name(), trial, seed, v, scale.invert(v)),
            Err(e) => {
                log::warn!("trial {trial}: {m} failed: {e}");
                TrialRow::failed(m.name(), trial, seed, e, 0)
            }
        })
        .collect();
    rows.push(match data.test_returns(&policy) {
        Ok(v) => {
            let worst = v.iter().copied().fold(f64::INFINITY, f64::min);
            TrialRow::ok(REFERENCE, trial, seed, worst, scale.invert(worst))
        }
        Err(e) => TrialRow::failed(REFERENCE, trial, seed, e, 0),
    });
    rows
}

/// Learns a policy with `method` on the trial's training data.
pub fn learn_method(
    method: Method,
    cfg: &ExperimentConfig,
    data: &TrialData,
    g: &CausalGraph,
    seed: u64,
) -> Result<Policy, ExperimentError> {
    let features = policy_features(g);
    match method {
        Method::Semcp => Ok(semcp_model(cfg, data, g, seed)?.learn()?),
        _ => {
            let pooled = data.pooled()?;
            let pi0 = logging_policy(&pooled, features.clone());
            let kl = kl_config(cfg, data, &features, seed)?;
            let learned = match method {
                Method::Dro => dro_learn(&pooled, &pi0, &features, &kl)?,
                Method::Fdro => fdro_learn(&pooled, &pi0, &features, &kl, &CellCache::new())?,
                _ => ipw_learn(&pooled, &pi0, &features, &kl)?,
            };
            if learned.degraded {
                log::warn!("{method}: every restart ended with an invalid dual variable; using the best incumbent");
            }
            Ok(learned.policy)
        }
    }
}

fn learning_row(name: &str, trial: usize, seed: u64, returns: Vec<f64>, scale: &ColumnScale) -> TrialRow {
    let worst = returns.iter().copied().fold(f64::INFINITY, f64::min);
    let mut row = TrialRow::ok(name, trial, seed, worst, scale.invert(worst));
    row.env_values = returns.into_iter().map(Some).collect();
    row
}

fn learning_trial(cfg: &ExperimentConfig, g: &CausalGraph, trial: usize, envs: usize) -> Vec<TrialRow> {
    let seed = trial_seed(cfg, trial);
    let fail_all = |e: &dyn std::fmt::Display| {
        let mut rows: Vec<TrialRow> =
            cfg.methods.iter().map(|m| TrialRow::failed(m.name(), trial, seed, e, envs)).collect();
        rows.push(TrialRow::failed(REFERENCE, trial, seed, e, envs));
        rows
    };
    let data = match trial_data(cfg, seed) {
        Ok(d) => d,
        Err(e) => return fail_all(&e),
    };
    let scale = match data.reward_scale() {
        Ok(s) => s.clone(),
        Err(e) => return fail_all(&e),
    };
    let mut rows: Vec<TrialRow> = cfg
        .methods
        .iter()
        .map(|&m| match learn_method(m, cfg, &data, g, seed).and_then(|p| data.test_returns(&p)) {
            Ok(r) => learning_row(m.name(), trial, seed, r, &scale),
            Err(e) => {
                log::warn!("trial {trial}: {m} failed: {e}");
                TrialRow::failed(m.name(), trial, seed, e, envs)
            }
        })
        .collect();
    rows.push(match reference_returns(&data, g) {
        Ok(r) => learning_row(REFERENCE, trial, seed, r, &scale),
        Err(e) => TrialRow::failed(REFERENCE, trial, seed, e, envs),
    });
    rows
}

/// Per test environment, the best return among constant-action policies.
fn reference_returns(data: &TrialData, g: &CausalGraph) -> Result<Vec<f64>, ExperimentError> {
    let d = data.train[0].num_actions;
    let features = policy_features(g);
    let mut best = vec![f64::NEG_INFINITY; data.test_envs().len()];
    for a in 0..d {
        let mut bias = vec![0.0; d];
        bias[a] = 1.0;
        let constant = Policy {
            kind: semrobust::semcp::PolicyKind::LinearArgmax { weights: vec![vec![0.0; features.len()]; d], bias },
            num_actions: d,
            features: features.clone(),
        };
        for (b, v) in best.iter_mut().zip(data.test_returns(&constant)?) {
            *b = b.max(v);
        }
    }
    Ok(best)
}

fn prepare(cfg: &ExperimentConfig) -> Result<CausalGraph, ExperimentError> {
    cfg.validate()?;
    load_graph(&cfg.graph_source())
}

/// Robust estimates of the configured policy for every method and trial,
/// plus the empirical worst test-environment return as reference rows.
pub fn run_evaluation(cfg: &ExperimentConfig) -> Result<ResultTable, ExperimentError> {
    let g = prepare(cfg)?;
    let rows = (0..cfg.trials).into_par_iter().map(|t| evaluation_trial(cfg, &g, t)).collect::<Vec<_>>();
    Ok(ResultTable { task: Task::Evaluate, envs: Vec::new(), rows: rows.into_iter().flatten().collect() })
}

/// Learned-policy returns on every test environment for every method and trial.
///
/// The reference rows hold, per environment, the best constant-action return.
pub fn run_learning(cfg: &ExperimentConfig) -> Result<ResultTable, ExperimentError> {
    let g = prepare(cfg)?;
    let envs = match &cfg.dataset {
        DatasetSpec::Synthetic => environments(Split::Test).into_iter().map(|e| e.label).collect(),
        DatasetSpec::Csv(_) => trial_data(cfg, cfg.seed)?.test_envs(),
    };
    let rows = (0..cfg.trials).into_par_iter().map(|t| learning_trial(cfg, &g, t, envs.len())).collect::<Vec<_>>();
    Ok(ResultTable { task: Task::Learn, envs, rows: rows.into_iter().flatten().collect() })
}

/// Whether any row failed.
pub fn has_failures(table: &ResultTable) -> bool {
    table.rows.iter().any(|r| r.error.is_some())
}

/// Writes a JSON value to `dir/name`.
pub fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::Other(format!("{}: {e}", dir.display())))?;
    let text = serde_json::to_string_pretty(value).map_err(|e| ExperimentError::Other(e.to_string()))?;
    std::fs::write(dir.join(name), text).map_err(|e| ExperimentError::Other(format!("{name}: {e}")))
}

/// Training data and graph for the single-shot subcommands.
pub fn training_data(cfg: &ExperimentConfig) -> Result<(TrialData, CausalGraph), ExperimentError> {
    let g = prepare(cfg)?;
    Ok((trial_data(cfg, cfg.seed)?, g))
}

/// Shift detection on the training data of the configured seed.
pub fn shifts_for(
    cfg: &ExperimentConfig,
    data: &TrialData,
    g: &CausalGraph,
) -> Result<BTreeSet<String>, ExperimentError> {
    shifted_set(cfg, data, g, cfg.seed)
}
