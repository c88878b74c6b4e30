//! KL-ball distributionally robust baselines.
//!
//! `dro_*` robustify the importance-weighted return over a KL ball around the
//! logged joint distribution. `fdro_*` factor the ball: each
//! (action, rounded context) cell gets its own reward-shift ball, and the
//! resulting cell values are robustified again over a covariate-shift ball.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::RwLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::BanditDataset;
use crate::semcp::{Policy, PolicyKind, SemcpError};
use crate::semfit::Frame;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("environment `{0}` has no rows")]
    EmptyEnvironment(String),
    #[error("need at least two environments, got {0}")]
    TooFewEnvironments(usize),
    #[error("column `{0}` is missing")]
    MissingColumn(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("logging policy gives probability {prob} to the action logged at row {row}")]
    Positivity { row: usize, prob: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Policy(#[from] SemcpError),
}

/// Radii and optimizer settings for the KL baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KLConfig {
    /// Joint radius used by DRO.
    pub delta: f64,
    /// Covariate-shift radius used by fDRO.
    pub delta_cov: f64,
    /// Per-cell reward-shift radius used by fDRO.
    pub delta_rew: f64,
    /// Initial dual-variable bracket, relative to the reward range.
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Bracket widenings in the α search, and restarts in learning.
    pub restart_limit: usize,
    /// Gradient steps per policy update.
    pub epochs: usize,
    pub max_iters: usize,
    /// Adam step size.
    pub learning_rate: f64,
    /// Steps of the non-robust warm start.
    pub warm_start_epochs: usize,
    pub seed: u64,
}

impl Default for KLConfig {
    fn default() -> Self {
        Self {
            delta: 0.0,
            delta_cov: 0.0,
            delta_rew: 0.0,
            alpha_min: 1e-4,
            alpha_max: 1e4,
            restart_limit: 20,
            epochs: 50,
            max_iters: 500,
            learning_rate: 0.05,
            warm_start_epochs: 300,
            seed: 0,
        }
    }
}

impl KLConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        for (name, d) in [("delta", self.delta), ("delta_cov", self.delta_cov), ("delta_rew", self.delta_rew)] {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(BaselineError::Config(format!("{name} must be a finite value >= 0, got {d}")));
            }
        }
        if !(self.alpha_min > 0.0 && self.alpha_max > self.alpha_min) {
            return Err(BaselineError::Config("alpha bounds must satisfy 0 < alpha_min < alpha_max".into()));
        }
        if self.restart_limit < 1 {
            return Err(BaselineError::Config("restart_limit must be at least 1".into()));
        }
        Ok(())
    }
}

const KL_BINS: usize = 20;
const KL_SMOOTHING: f64 = 1.0;

/// Smoothed histogram KL(p ‖ q) with `bins` equal-width bins spanning both samples.
pub fn histogram_kl(p: &[f64], q: &[f64], bins: usize, smoothing: f64) -> f64 {
    let lo = p.iter().chain(q).copied().fold(f64::INFINITY, f64::min);
    let hi = p.iter().chain(q).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo).max(f64::MIN_POSITIVE);
    // Pseudo-counts are relative to the smaller sample, so equal empirical
    // distributions get equal smoothed histograms.
    let pseudo = smoothing / p.len().min(q.len()).max(1) as f64;
    let hist = |xs: &[f64]| {
        let mut h = vec![0.0; bins];
        for &x in xs {
            let b = (((x - lo) / width) * bins as f64) as usize;
            h[b.min(bins - 1)] += 1.0;
        }
        let h: Vec<f64> = h.into_iter().map(|c| c / xs.len().max(1) as f64 + pseudo).collect();
        let total: f64 = h.iter().sum();
        h.into_iter().map(|c| c / total).collect::<Vec<_>>()
    };
    let (hp, hq) = (hist(p), hist(q));
    hp.iter().zip(&hq).map(|(a, b)| if *a > 0.0 { a * (a / b).ln() } else { 0.0 }).sum()
}

/// Per-environment divergences and their maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlRadius {
    pub delta: f64,
    pub per_env: Vec<(String, f64)>,
}

/// Largest KL divergence from the pooled data to any single environment.
///
/// The joint over `columns` (covariate or reward names) is approximated by
/// the product of its marginals, so the divergence is the sum of
/// per-column histogram divergences.
pub fn kl_radius(envs: &[BanditDataset], columns: &[String]) -> Result<KlRadius, BaselineError> {
    if envs.len() < 2 {
        return Err(BaselineError::TooFewEnvironments(envs.len()));
    }
    if let Some(e) = envs.iter().find(|e| e.is_empty()) {
        return Err(BaselineError::EmptyEnvironment(e.env.clone()));
    }
    let mut per_env = vec![0.0; envs.len()];
    for c in columns {
        let cols = envs
            .iter()
            .map(|e| e.variable(c).ok_or_else(|| BaselineError::MissingColumn(c.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let pooled: Vec<f64> = cols.iter().flat_map(|v| v.iter().copied()).collect();
        for (k, v) in cols.iter().enumerate() {
            per_env[k] += histogram_kl(&pooled, v, KL_BINS, KL_SMOOTHING);
        }
    }
    let delta = per_env.iter().copied().fold(0.0, f64::max);
    Ok(KlRadius { delta, per_env: envs.iter().map(|e| e.env.clone()).zip(per_env).collect() })
}

/// Outcome of the one-dimensional dual search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub value: f64,
    /// Optimal dual variable; infinite when the radius is zero, zero when
    /// the worst point is attained.
    pub alpha: f64,
    /// Bracket widenings performed.
    pub restarts: usize,
    /// Optimum still pinned at a bracket end after the last widening.
    pub at_boundary: bool,
}

/// `-α log(Σ w e^{-y/α} / Σ w) - α δ`, computed stably.
fn dual_objective(y: &[f64], w: &[f64], y_min: f64, alpha: f64, delta: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&yi, &wi) in y.iter().zip(w) {
        num += wi * (-(yi - y_min) / alpha).exp();
        den += wi;
    }
    y_min - alpha * (num / den).ln() - alpha * delta
}

const GOLDEN_TOL: f64 = 1e-6;

/// `sup_{α>0} -α log E_w[e^{-y/α}] - α δ` by golden-section search on `ln α`.
///
/// The bracket starts at `[alpha_min, alpha_max]` times the reward range and
/// is widened by three decades on the side where the optimum sticks.
pub fn kl_dual(y: &[f64], w: &[f64], delta: f64, cfg: &KLConfig) -> DualSolution {
    let total: f64 = w.iter().sum();
    let y_min = y.iter().zip(w).filter(|(_, &wi)| wi > 0.0).map(|(&v, _)| v).fold(f64::INFINITY, f64::min);
    let y_max = y.iter().zip(w).filter(|(_, &wi)| wi > 0.0).map(|(&v, _)| v).fold(f64::NEG_INFINITY, f64::max);
    let mean = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
    if delta == 0.0 {
        return DualSolution { value: mean, alpha: f64::INFINITY, restarts: 0, at_boundary: false };
    }
    let range = y_max - y_min;
    if range <= 1e-12 * (1.0 + y_max.abs()) {
        return DualSolution { value: y_min, alpha: 0.0, restarts: 0, at_boundary: false };
    }
    let f = |t: f64| dual_objective(y, w, y_min, t.exp(), delta);
    let (mut lo, mut hi) = ((cfg.alpha_min * range).ln(), (cfg.alpha_max * range).ln());
    let widen = 3.0 * std::f64::consts::LN_10;
    let mut restarts = 0;
    loop {
        let (t, v) = golden_max(&f, lo, hi, GOLDEN_TOL);
        let at_lo = t - lo < 10.0 * GOLDEN_TOL;
        let at_hi = hi - t < 10.0 * GOLDEN_TOL;
        if !(at_lo || at_hi) || restarts >= cfg.restart_limit {
            // The α → 0 limit (the worst observed reward) belongs to the supremum.
            let (value, alpha) = if y_min >= v { (y_min, 0.0) } else { (v, t.exp()) };
            let at_boundary = (at_lo || at_hi) && alpha > 0.0;
            return DualSolution { value, alpha, restarts, at_boundary };
        }
        restarts += 1;
        if at_lo {
            lo -= widen;
        } else {
            hi += widen;
        }
    }
}

/// Maximizer of a unimodal function on `[a, b]`.
fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let (fa, fb) = (f(a), f(b));
    [(a, fa), (b, fb), (c, fc), (d, fd)]
        .into_iter()
        .filter(|(_, v)| v.is_finite())
        .fold((a, f64::NEG_INFINITY), |best, p| if p.1 > best.1 { p } else { best })
}

/// Context-free logging policy as a softmax over per-action log-probabilities.
pub fn logging_policy(ds: &BanditDataset, features: Vec<String>) -> Policy {
    let bias = ds.logging_policy.iter().map(|p| p.ln()).collect();
    let weights = vec![vec![0.0; features.len()]; ds.num_actions];
    Policy { kind: PolicyKind::SoftmaxLinear { weights, bias }, num_actions: ds.num_actions, features }
}

/// Importance weights `π(a_i|x_i) / π₀(a_i|x_i)` over the logged rows.
pub fn importance_weights(ds: &BanditDataset, policy: &Policy, pi0: &Policy) -> Result<Vec<f64>, BaselineError> {
    let frame = Frame::from_dataset(ds);
    let p = policy.probs_frame(&frame)?;
    let q = pi0.probs_frame(&frame)?;
    ds.actions
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let prob = q[i][a];
            if prob > 0.0 {
                Ok(p[i][a] / prob)
            } else {
                Err(BaselineError::Positivity { row: i, prob })
            }
        })
        .collect()
}

/// Self-normalized importance-weighted return.
pub fn snips(ds: &BanditDataset, policy: &Policy, pi0: &Policy) -> Result<f64, BaselineError> {
    let w = importance_weights(ds, policy, pi0)?;
    Ok(w.iter().zip(&ds.rewards).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>())
}

/// Worst-case return over a KL ball of radius `delta` around the logged distribution.
pub fn dro_evaluate(
    ds: &BanditDataset,
    policy: &Policy,
    pi0: &Policy,
    delta: f64,
    cfg: &KLConfig,
) -> Result<DualSolution, BaselineError> {
    KLConfig { delta, ..cfg.clone() }.validate()?;
    let w = importance_weights(ds, policy, pi0)?;
    Ok(kl_dual(&ds.rewards, &w, delta, cfg))
}

/// Key of an fDRO cell: logged action plus context rounded to three decimals.
pub fn cell_key(action: usize, x: &[f64]) -> String {
    let mut k = action.to_string();
    for v in x {
        // Adding 0.0 folds -0.000 into 0.000.
        k.push_str(&format!("|{:.3}", v + 0.0));
    }
    k
}

/// Robust per-cell reward values, shared across evaluations with the same reward radius.
#[derive(Debug, Default)]
pub struct CellCache {
    delta_rew: RwLock<Option<f64>>,
    values: RwLock<HashMap<String, f64>>,
    hits: std::sync::atomic::AtomicUsize,
    misses: std::sync::atomic::AtomicUsize,
}

/// Lookup statistics of a [`CellCache`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
    pub entries: usize,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        let n = self.hits + self.misses;
        if n == 0 {
            0.0
        } else {
            self.hits as f64 / n as f64
        }
    }
}

impl CellCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> CacheStats {
        use std::sync::atomic::Ordering::Relaxed;
        CacheStats {
            hits: self.hits.load(Relaxed),
            misses: self.misses.load(Relaxed),
            entries: self.values.read().expect("cache lock").len(),
        }
    }

    pub fn reset_stats(&self) {
        use std::sync::atomic::Ordering::Relaxed;
        self.hits.store(0, Relaxed);
        self.misses.store(0, Relaxed);
    }

    /// Drops all entries when the reward radius changes.
    fn bind(&self, delta_rew: f64) {
        let mut d = self.delta_rew.write().expect("cache lock");
        if *d != Some(delta_rew) {
            self.values.write().expect("cache lock").clear();
            *d = Some(delta_rew);
        }
    }

    /// Persists entries as `delta_rew`, count, then (key length, key bytes, value) records, little endian.
    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        let values = self.values.read().expect("cache lock");
        let mut buf = Vec::new();
        buf.extend_from_slice(&self.delta_rew.read().expect("cache lock").unwrap_or(f64::NAN).to_le_bytes());
        buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
        let mut keys: Vec<_> = values.keys().collect();
        keys.sort();
        for k in keys {
            buf.extend_from_slice(&(k.len() as u64).to_le_bytes());
            buf.extend_from_slice(k.as_bytes());
            buf.extend_from_slice(&values[k].to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let bad = || BaselineError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, "truncated cache file"));
        let mut pos = 0;
        let mut take = |n: usize| -> Result<&[u8], BaselineError> {
            let s = buf.get(pos..pos + n).ok_or_else(bad)?;
            pos += n;
            Ok(s)
        };
        let word = |s: &[u8]| <[u8; 8]>::try_from(s).expect("eight bytes");
        let delta = f64::from_le_bytes(word(take(8)?));
        let n = u64::from_le_bytes(word(take(8)?)) as usize;
        let mut values = HashMap::with_capacity(n);
        for _ in 0..n {
            let len = u64::from_le_bytes(word(take(8)?)) as usize;
            let key = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad())?;
            values.insert(key, f64::from_le_bytes(word(take(8)?)));
        }
        Ok(Self {
            delta_rew: RwLock::new((!delta.is_nan()).then_some(delta)),
            values: RwLock::new(values),
            ..Self::default()
        })
    }
}

/// Rows grouped into fDRO cells, in first-appearance order.
struct Cells {
    keys: Vec<String>,
    members: Vec<Vec<usize>>,
    /// Cell index of every row.
    of_row: Vec<usize>,
}

fn cells(ds: &BanditDataset, features: &[String]) -> Result<Cells, BaselineError> {
    let frame = Frame::from_dataset(ds);
    for f in features {
        if frame.get(f).is_none() {
            return Err(BaselineError::MissingColumn(f.clone()));
        }
    }
    let mut index = HashMap::new();
    let mut out = Cells { keys: Vec::new(), members: Vec::new(), of_row: Vec::with_capacity(ds.len()) };
    for (i, &a) in ds.actions.iter().enumerate() {
        let key = cell_key(a, &frame.row(features, i));
        let c = *index.entry(key.clone()).or_insert_with(|| {
            out.keys.push(key);
            out.members.push(Vec::new());
            out.keys.len() - 1
        });
        out.members[c].push(i);
        out.of_row.push(c);
    }
    Ok(out)
}

/// Reward-robust value of every cell with positive weight; the rest are skipped.
fn cell_values(
    ds: &BanditDataset,
    cells: &Cells,
    active: &[bool],
    delta_rew: f64,
    cfg: &KLConfig,
    cache: &CellCache,
) -> Vec<Option<f64>> {
    use std::sync::atomic::Ordering::Relaxed;
    cache.bind(delta_rew);
    let out: Vec<Option<f64>> = (0..cells.keys.len())
        .into_par_iter()
        .map(|c| {
            if !active[c] {
                return None;
            }
            if let Some(v) = cache.values.read().expect("cache lock").get(&cells.keys[c]) {
                cache.hits.fetch_add(1, Relaxed);
                return Some(*v);
            }
            cache.misses.fetch_add(1, Relaxed);
            let y: Vec<f64> = cells.members[c].iter().map(|&i| ds.rewards[i]).collect();
            Some(kl_dual(&y, &vec![1.0; y.len()], delta_rew, cfg).value)
        })
        .collect();
    let mut values = cache.values.write().expect("cache lock");
    for (c, v) in out.iter().enumerate() {
        if let Some(v) = v {
            values.entry(cells.keys[c].clone()).or_insert(*v);
        }
    }
    out
}

/// fDRO estimate with bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdroEstimate {
    pub dual: DualSolution,
    pub cells: usize,
    /// Cells with zero weight under the evaluated policy.
    pub skipped: usize,
}

/// Worst-case return under separate covariate- and reward-shift KL balls.
pub fn fdro_evaluate(
    ds: &BanditDataset,
    policy: &Policy,
    pi0: &Policy,
    delta_cov: f64,
    delta_rew: f64,
    cfg: &KLConfig,
    cache: &CellCache,
) -> Result<FdroEstimate, BaselineError> {
    KLConfig { delta_cov, delta_rew, ..cfg.clone() }.validate()?;
    let w = importance_weights(ds, policy, pi0)?;
    let cells = cells(ds, &policy.features)?;
    let mut active = vec![false; cells.keys.len()];
    for (i, &c) in cells.of_row.iter().enumerate() {
        active[c] |= w[i] > 0.0;
    }
    let v = cell_values(ds, &cells, &active, delta_rew, cfg, cache);
    let y: Vec<f64> = cells.of_row.iter().map(|&c| v[c].unwrap_or(0.0)).collect();
    Ok(FdroEstimate {
        dual: kl_dual(&y, &w, delta_cov, cfg),
        cells: cells.keys.len(),
        skipped: active.iter().filter(|a| !**a).count(),
    })
}

/// A learned policy and how its optimization went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedPolicy {
    pub policy: Policy,
    /// Robust objective of the returned policy on the training data.
    pub objective: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub restarts: usize,
    /// Every attempt ended with an invalid α; the best incumbent is returned.
    pub degraded: bool,
}

/// Logged rows prepared for gradient-based learning.
struct Problem {
    x: Vec<Vec<f64>>,
    a: Vec<usize>,
    y: Vec<f64>,
    /// `1 / π₀(a_i|x_i)`.
    inv_p0: Vec<f64>,
    d: usize,
}

impl Problem {
    fn new(ds: &BanditDataset, y: Vec<f64>, pi0: &Policy, features: &[String]) -> Result<Self, BaselineError> {
        let frame = Frame::from_dataset(ds);
        for f in features {
            if frame.get(f).is_none() {
                return Err(BaselineError::MissingColumn(f.clone()));
            }
        }
        let q = pi0.probs_frame(&frame)?;
        let inv_p0 = ds
            .actions
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let prob = q[i][a];
                if prob > 0.0 {
                    Ok(1.0 / prob)
                } else {
                    Err(BaselineError::Positivity { row: i, prob })
                }
            })
            .collect::<Result<_, _>>()?;
        let x = (0..ds.len()).map(|i| frame.row(features, i)).collect();
        Ok(Self { x, a: ds.actions.clone(), y, inv_p0, d: ds.num_actions })
    }

    /// Policy probabilities of the logged actions and their softmax probability vectors.
    fn probs(&self, theta: &Theta) -> Vec<Vec<f64>> {
        self.x.iter().map(|x| theta.probs(x)).collect()
    }

    fn weights(&self, probs: &[Vec<f64>]) -> Vec<f64> {
        probs.iter().zip(&self.a).zip(&self.inv_p0).map(|((p, &a), q)| p[a] * q).collect()
    }

    /// Robust objective at fixed α (α = ∞ gives the self-normalized mean) and its gradient.
    fn objective_grad(&self, theta: &Theta, alpha: f64) -> (f64, Theta) {
        let probs = self.probs(theta);
        let w = self.weights(&probs);
        let total: f64 = w.iter().sum();
        let y_min = self.y.iter().copied().fold(f64::INFINITY, f64::min);
        let e: Vec<f64> = if alpha.is_infinite() {
            self.y.clone()
        } else {
            self.y.iter().map(|y| (-(y - y_min) / alpha).exp()).collect()
        };
        let z = w.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / total;
        // d obj / d w_i.
        let (value, scale) = if alpha.is_infinite() { (z, 1.0) } else { (y_min - alpha * z.ln(), -alpha / z) };
        let mut g = theta.zeros();
        for i in 0..self.x.len() {
            let coef = scale * w[i] * (e[i] - z) / total;
            if coef == 0.0 {
                continue;
            }
            for b in 0..self.d {
                let s = coef * ((self.a[i] == b) as u8 as f64 - probs[i][b]);
                g.bias[b] += s;
                for (gw, xj) in g.weights[b].iter_mut().zip(&self.x[i]) {
                    *gw += s * xj;
                }
            }
        }
        (value, g)
    }
}

/// Softmax-linear parameters.
#[derive(Debug, Clone, PartialEq)]
struct Theta {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl Theta {
    fn new(d: usize, k: usize) -> Self {
        Self { weights: vec![vec![0.0; k]; d], bias: vec![0.0; d] }
    }

    fn zeros(&self) -> Self {
        Self::new(self.bias.len(), self.weights.first().map_or(0, Vec::len))
    }

    fn probs(&self, x: &[f64]) -> Vec<f64> {
        let s: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
            .collect();
        crate::semcp::softmax(&s)
    }

    fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().flatten().chain(self.bias.iter_mut())
    }

    fn into_policy(self, features: &[String]) -> Policy {
        let d = self.bias.len();
        Policy {
            kind: PolicyKind::SoftmaxLinear { weights: self.weights, bias: self.bias },
            num_actions: d,
            features: features.to_vec(),
        }
    }
}

/// Adam ascent state.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, theta: &mut Theta, mut grad: Theta) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let (c1, c2) = (1.0 - B1.powi(self.t), 1.0 - B2.powi(self.t));
        for (((p, g), m), v) in theta.flat_mut().zip(grad.flat_mut()).zip(&mut self.m).zip(&mut self.v) {
            *m = B1 * *m + (1.0 - B1) * *g;
            *v = B2 * *v + (1.0 - B2) * *g * *g;
            *p += self.lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
        }
    }
}

fn ascend(prob: &Problem, theta: &mut Theta, adam: &mut Adam, alpha: f64, epochs: usize) {
    for _ in 0..epochs {
        let (_, g) = prob.objective_grad(theta, alpha);
        adam.step(theta, g);
    }
}

/// Non-robust softmax-linear policy maximizing the self-normalized return.
pub fn ipw_learn(
    ds: &BanditDataset,
    pi0: &Policy,
    features: &[String],
    cfg: &KLConfig,
) -> Result<LearnedPolicy, BaselineError> {
    let prob = Problem::new(ds, ds.rewards.clone(), pi0, features)?;
    let mut theta = Theta::new(prob.d, features.len());
    let mut adam = Adam::new(prob.d * (features.len() + 1), cfg.learning_rate);
    ascend(&prob, &mut theta, &mut adam, f64::INFINITY, cfg.warm_start_epochs);
    let (objective, _) = prob.objective_grad(&theta, f64::INFINITY);
    Ok(LearnedPolicy {
        policy: theta.into_policy(features),
        objective,
        alpha: f64::INFINITY,
        iterations: cfg.warm_start_epochs,
        restarts: 0,
        degraded: false,
    })
}

fn robust_learn(
    prob: &Problem,
    delta: f64,
    features: &[String],
    cfg: &KLConfig,
) -> Result<LearnedPolicy, BaselineError> {
    cfg.validate()?;
    let k = features.len();
    let n_params = prob.d * (k + 1);
    let mut warm = Theta::new(prob.d, k);
    let mut adam = Adam::new(n_params, cfg.learning_rate);
    ascend(prob, &mut warm, &mut adam, f64::INFINITY, cfg.warm_start_epochs);
    let dual_at = |theta: &Theta| kl_dual(&prob.y, &prob.weights(&prob.probs(theta)), delta, cfg);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(f64, Theta, f64, usize)> = None;
    let mut valid_found = false;
    let mut attempts = 0;
    while attempts < cfg.restart_limit {
        let mut theta = warm.clone();
        if attempts > 0 {
            for p in theta.flat_mut() {
                *p += rng.random_range(-0.5..0.5);
            }
        }
        attempts += 1;
        let mut adam = Adam::new(n_params, cfg.learning_rate);
        let mut sol = dual_at(&theta);
        let mut iters = 0;
        let mut valid = true;
        while iters < cfg.max_iters {
            if !sol.value.is_finite() || sol.at_boundary {
                valid = false;
                break;
            }
            iters += 1;
            ascend(prob, &mut theta, &mut adam, sol.alpha, cfg.epochs);
            let next = dual_at(&theta);
            let converged = next.alpha == sol.alpha
                || (sol.alpha.is_finite() && ((next.alpha - sol.alpha) / sol.alpha).abs() < 1e-4);
            sol = next;
            if converged {
                break;
            }
        }
        valid &= sol.value.is_finite() && !sol.at_boundary;
        if valid || !valid_found {
            let better = best.as_ref().is_none_or(|b| sol.value > b.0 || (valid && !valid_found));
            if better {
                best = Some((sol.value, theta, sol.alpha, iters));
            }
        }
        if valid {
            valid_found = true;
            break;
        }
    }
    let (objective, theta, alpha, iterations) = best.expect("at least one attempt");
    Ok(LearnedPolicy {
        policy: theta.into_policy(features),
        objective,
        alpha,
        iterations,
        restarts: attempts - 1,
        degraded: !valid_found,
    })
}

/// Softmax-linear policy maximizing the KL-robust return, warm-started from [`ipw_learn`].
pub fn dro_learn(
    ds: &BanditDataset,
    pi0: &Policy,
    features: &[String],
    cfg: &KLConfig,
) -> Result<LearnedPolicy, BaselineError> {
    let prob = Problem::new(ds, ds.rewards.clone(), pi0, features)?;
    robust_learn(&prob, cfg.delta, features, cfg)
}

/// Softmax-linear policy maximizing the factored robust return.
///
/// Cell values do not depend on the policy, so they are computed once
/// through `cache` and the covariate-shift dual is learned as in [`dro_learn`].
pub fn fdro_learn(
    ds: &BanditDataset,
    pi0: &Policy,
    features: &[String],
    cfg: &KLConfig,
    cache: &CellCache,
) -> Result<LearnedPolicy, BaselineError> {
    let cells = cells(ds, features)?;
    let v = cell_values(ds, &cells, &vec![true; cells.keys.len()], cfg.delta_rew, cfg, cache);
    let y = cells.of_row.iter().map(|&c| v[c].expect("every cell is active")).collect();
    let prob = Problem::new(ds, y, pi0, features)?;
    robust_learn(&prob, cfg.delta_cov, features, cfg)
}
