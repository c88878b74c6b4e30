//! Detection of mechanisms that change across environments.
//!
//! For every graph variable `S` the test asks whether an environment
//! indicator `B` is independent of `S` given the parents of `S`. Target and
//! indicator are regressed on the conditioners plus their random Fourier
//! features (a ridge approximation of kernel regression). The target residual
//! is lifted into Gaussian-kernel features, and its cross-covariance with the
//! indicator residual is compared with its distribution under permutations of
//! the indicator residual.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, warn};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BanditDataset, ColumnKind, DataError};
use crate::graph::{CausalGraph, GraphError, NodeKind};

#[derive(Debug, Error)]
pub enum ShiftError {
    #[error("need at least {min} rows, got {n}")]
    InsufficientSamples { n: usize, min: usize },
    #[error("input lengths differ: {0}")]
    LengthMismatch(String),
    #[error("environment `{0}` has no rows")]
    EmptyEnvironment(String),
    #[error("need at least two environments, got {0}")]
    TooFewEnvironments(usize),
    #[error("variable `{0}` is missing from the data")]
    MissingVariable(String),
    #[error("ridge system is not positive definite")]
    Numerical,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftConfig {
    pub alpha_level: f64,
    pub permutations: usize,
    /// Rows kept per environment before pooling.
    pub max_rows: usize,
    pub seed: u64,
    pub min_samples: usize,
    /// Ridge penalty per row; the total penalty is `ridge * n`.
    pub ridge: f64,
    /// Random Fourier features for the target.
    pub target_features: usize,
    /// Random Fourier features for the conditioners.
    pub conditioner_features: usize,
    /// Leave binary and categorical roots untested and unshifted.
    pub skip_discrete_roots: bool,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            alpha_level: 0.05,
            permutations: 500,
            max_rows: 2000,
            seed: 0,
            min_samples: 10,
            ridge: 1e-3,
            target_features: 64,
            conditioner_features: 128,
            skip_discrete_roots: true,
        }
    }
}

/// Outcome of testing every variable on one pair of environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub pair: (String, String),
    pub alpha_level: f64,
    pub p_values: BTreeMap<String, f64>,
    pub shifted: BTreeMap<String, bool>,
}

/// Pairwise reports and their union.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub reports: Vec<ShiftReport>,
    /// Variables rejected by at least one pairwise comparison.
    pub shifted: BTreeSet<String>,
    /// Variables left out of testing.
    pub untested: Vec<String>,
}

impl ShiftSummary {
    /// Union set recomputed at another level from the stored p-values.
    pub fn shifted_at(&self, alpha: f64) -> BTreeSet<String> {
        self.reports
            .iter()
            .flat_map(|r| r.p_values.iter().filter(|(_, &p)| p < alpha).map(|(n, _)| n.clone()))
            .collect()
    }

    /// Smallest p-value seen for `name` across pairs.
    pub fn min_p_value(&self, name: &str) -> Option<f64> {
        self.reports.iter().filter_map(|r| r.p_values.get(name).copied()).reduce(f64::min)
    }
}

/// Pools two environments and labels rows `+1` (from `d0`) or `-1` (from `d1`).
pub fn build_indicator(d0: &BanditDataset, d1: &BanditDataset) -> Result<(BanditDataset, Vec<f64>), ShiftError> {
    for d in [d0, d1] {
        if d.is_empty() {
            return Err(ShiftError::EmptyEnvironment(d.env.clone()));
        }
    }
    let pooled = BanditDataset::pool(&[d0, d1], &format!("{}+{}", d0.env, d1.env))?;
    let mut b = vec![1.0; d0.len()];
    b.resize(d0.len() + d1.len(), -1.0);
    Ok((pooled, b))
}

fn standardize(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    (sd > 1e-12 * (1.0 + m.abs())).then(|| v.iter().map(|x| (x - m) / sd).collect())
}

/// Median pairwise distance over a deterministic subsample of rows.
fn median_distance(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let step = n.div_ceil(300).max(1);
    let sub: Vec<&Vec<f64>> = rows.iter().step_by(step).collect();
    let mut d = Vec::with_capacity(sub.len() * sub.len() / 2);
    for i in 0..sub.len() {
        for j in 0..i {
            let s: f64 = sub[i].iter().zip(sub[j]).map(|(a, b)| (a - b).powi(2)).sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let med = d[d.len() / 2];
    if med > 1e-12 {
        med
    } else {
        1.0
    }
}

/// Gaussian-kernel random Fourier features of `rows` with bandwidth `h`,
/// each with variance about one half.
fn fourier_features(rows: &[Vec<f64>], count: usize, h: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let dim = rows.first().map_or(0, Vec::len);
    let phase = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range");
    let scale = 1.0;
    (0..count)
        .map(|_| {
            let w: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).map(|g: f64| g / h).collect();
            let b = phase.sample(rng);
            rows.iter().map(|r| scale * (r.iter().zip(&w).map(|(x, wi)| x * wi).sum::<f64>() + b).cos()).collect()
        })
        .collect()
}

/// Residuals of each response after ridge regression on `[1, design]`; the
/// intercept and the first `unpenalized` design columns carry no penalty.
fn ridge_residuals(
    design: &[Vec<f64>],
    unpenalized: usize,
    responses: &[Vec<f64>],
    lambda: f64,
) -> Result<Vec<Vec<f64>>, ShiftError> {
    let n = responses[0].len();
    let p = design.len() + 1;
    let phi = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { design[j - 1][i] });
    let y = DMatrix::from_fn(n, responses.len(), |i, j| responses[j][i]);
    let mut gram = phi.transpose() * &phi;
    for j in 1 + unpenalized..p {
        gram[(j, j)] += lambda;
    }
    let chol = gram.cholesky().ok_or(ShiftError::Numerical)?;
    let beta = chol.solve(&(phi.transpose() * &y));
    let r = y - phi * beta;
    Ok((0..responses.len()).map(|j| r.column(j).iter().copied().collect()).collect())
}

/// Permutation p-value for `indicator ⊥ target | conditioners`.
///
/// `conditioners` holds one value vector per conditioning column; pass an
/// empty slice for a marginal test. A constant target yields `p = 1`.
pub fn ci_test(
    target: &[f64],
    indicator: &[f64],
    conditioners: &[Vec<f64>],
    cfg: &ShiftConfig,
    seed: u64,
) -> Result<f64, ShiftError> {
    let n = target.len();
    if indicator.len() != n || conditioners.iter().any(|c| c.len() != n) {
        return Err(ShiftError::LengthMismatch(format!("target has {n} rows")));
    }
    if n < cfg.min_samples {
        return Err(ShiftError::InsufficientSamples { n, min: cfg.min_samples });
    }
    let Some(y) = standardize(target) else {
        return Ok(1.0);
    };
    let Some(b) = standardize(indicator) else {
        return Ok(1.0);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let zcols: Vec<Vec<f64>> = conditioners.iter().filter_map(|c| standardize(c)).collect();
    let linear = zcols.len();
    let mut design = zcols.clone();
    if !zcols.is_empty() {
        let zrows: Vec<Vec<f64>> = (0..n).map(|i| zcols.iter().map(|c| c[i]).collect()).collect();
        let h = median_distance(&zrows);
        design.extend(fourier_features(&zrows, cfg.conditioner_features, h, &mut rng));
    }
    let mut resid = ridge_residuals(&design, linear, &[y, b], cfg.ridge * n as f64)?;
    let rb = resid.pop().expect("indicator residual");
    let ry = resid.pop().expect("target residual");
    let Some(ry) = standardize(&ry) else {
        return Ok(1.0);
    };
    let erows: Vec<Vec<f64>> = ry.iter().map(|&v| vec![v]).collect();
    let he = median_distance(&erows);
    let lifted = fourier_features(&erows, cfg.target_features, he, &mut rng);
    let ry: Vec<Vec<f64>> = lifted
        .into_iter()
        .map(|f| {
            let m = f.iter().sum::<f64>() / n as f64;
            f.into_iter().map(|v| v - m).collect()
        })
        .collect();
    let stat = |perm: Option<&[usize]>| -> f64 {
        ry.iter()
            .map(|col| {
                let c: f64 = match perm {
                    None => col.iter().zip(&rb).map(|(a, b)| a * b).sum(),
                    Some(p) => col.iter().zip(p).map(|(a, &k)| a * rb[k]).sum(),
                };
                c * c
            })
            .sum::<f64>()
            / (n * n) as f64
    };
    let observed = stat(None);
    let exceed: usize = (0..cfg.permutations)
        .into_par_iter()
        .map(|k| {
            let mut prng = ChaCha8Rng::seed_from_u64(seed);
            prng.set_stream(k as u64 + 1);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut prng);
            usize::from(stat(Some(&idx)) >= observed * (1.0 - 1e-12))
        })
        .sum();
    Ok((1 + exceed) as f64 / (1 + cfg.permutations) as f64)
}

fn subsample(ds: &BanditDataset, max_rows: usize, seed: u64) -> BanditDataset {
    if ds.len() <= max_rows {
        return ds.clone();
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(max_rows);
    idx.sort_unstable();
    ds.subset(&idx)
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^ (x >> 29)
}

/// Conditioning columns for `node`: its graph parents plus, when an action
/// intervenes on it, one-hot action columns (first level dropped).
fn conditioning_columns(ds: &BanditDataset, g: &CausalGraph, node: usize) -> Result<Vec<Vec<f64>>, ShiftError> {
    let mut cols = Vec::new();
    for &p in g.parent_indices(node) {
        let name = g.name(p);
        let v = ds.variable(name).ok_or_else(|| ShiftError::MissingVariable(name.into()))?;
        match ds.variable_kind(name) {
            Some(ColumnKind::Categorical(k)) => {
                for level in 1..k {
                    cols.push(v.iter().map(|&x| f64::from(x.round() as usize == level)).collect());
                }
            }
            _ => cols.push(v.to_vec()),
        }
    }
    if g.is_intervened(node) {
        for a in 1..ds.num_actions {
            cols.push(ds.actions.iter().map(|&x| f64::from(x == a)).collect());
        }
    }
    Ok(cols)
}

/// Variables to test and those skipped, in topological order.
fn testable(g: &CausalGraph, cfg: &ShiftConfig) -> (Vec<usize>, Vec<String>) {
    let mut tested = Vec::new();
    let mut skipped = Vec::new();
    for i in g.topological_indices() {
        let discrete_root = matches!(g.kind(i), NodeKind::Binary | NodeKind::Categorical(_))
            && g.parent_indices(i).is_empty()
            && !g.is_intervened(i);
        match g.kind(i) {
            NodeKind::Action => {}
            _ if discrete_root && cfg.skip_discrete_roots => skipped.push(g.name(i).to_string()),
            _ => tested.push(i),
        }
    }
    (tested, skipped)
}

/// Tests every variable on every pair of environments and unions the rejections.
pub fn detect_shifts(envs: &[BanditDataset], g: &CausalGraph, cfg: &ShiftConfig) -> Result<ShiftSummary, ShiftError> {
    if envs.len() < 2 {
        return Err(ShiftError::TooFewEnvironments(envs.len()));
    }
    let (tested, untested) = testable(g, cfg);
    for &i in &tested {
        if envs[0].variable(g.name(i)).is_none() {
            return Err(ShiftError::MissingVariable(g.name(i).into()));
        }
    }
    let capped: Vec<BanditDataset> =
        envs.iter().enumerate().map(|(k, d)| subsample(d, cfg.max_rows, mix(cfg.seed, 0xD47A, k as u64))).collect();
    let pairs: Vec<(usize, usize)> = (0..envs.len()).flat_map(|i| (i + 1..envs.len()).map(move |j| (i, j))).collect();

    let reports = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<ShiftReport, ShiftError> {
            let (pooled, b) = build_indicator(&capped[i], &capped[j])?;
            let mut p_values = BTreeMap::new();
            for &v in &tested {
                let name = g.name(v);
                let target = pooled.variable(name).expect("checked above");
                let z = conditioning_columns(&pooled, g, v)?;
                let seed = mix(cfg.seed, (i * envs.len() + j) as u64, v as u64);
                let p = ci_test(target, &b, &z, cfg, seed)?;
                debug!("{} vs {}: {name} p = {p:.4}", envs[i].env, envs[j].env);
                p_values.insert(name.to_string(), p);
            }
            let shifted = p_values.iter().map(|(n, &p)| (n.clone(), p < cfg.alpha_level)).collect();
            Ok(ShiftReport {
                pair: (envs[i].env.clone(), envs[j].env.clone()),
                alpha_level: cfg.alpha_level,
                p_values,
                shifted,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    if !untested.is_empty() {
        warn!("treating discrete roots {untested:?} as unshifted");
    }
    let shifted = reports.iter().flat_map(|r| r.shifted.iter().filter(|(_, &s)| s).map(|(n, _)| n.clone())).collect();
    Ok(ShiftSummary { reports, shifted, untested })
}
