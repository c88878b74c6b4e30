//! Worst-case evaluation and learning over a structural-model uncertainty set.
//!
//! The uncertainty set is encoded as a linear (or, with binary nodes, mixed
//! integer) program over fixed context rows and residual draws. Its optimum
//! gives the worst-case parameterization, which is turned back into a
//! structural model for direct-method policy learning.

mod policy;
mod program;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BanditDataset, ColumnScale, DataError};
use crate::graph::{CausalGraph, GraphError};
use crate::mathprog::MathProgError;
use crate::semfit::{
    aggregate_bounds, fit_environment_model, modeled_nodes, simulate, EquationForm, Frame, NoiseMode, SemError,
    StructuralModel, UncertaintySpec,
};

pub use policy::{argmax, context_key, policy_features, softmax, Policy, PolicyKind};
pub use program::{
    build_evaluation_program, solve_program, Batch, EqKey, EquationParams, Program, ProgramConfig, SolveDiagnostics,
    WorstCaseResult,
};

#[derive(Debug, Error)]
pub enum SemcpError {
    #[error("program infeasible; node bounds involved: {bounds:?}")]
    Infeasible { bounds: Vec<String> },
    #[error("program unbounded")]
    Unbounded,
    #[error("node `{node}` has negative lower bound {lower}")]
    NegativeBound { node: String, lower: f64 },
    #[error("graph has no modeled outcome")]
    NoOutcome,
    #[error("feature `{0}` is missing")]
    MissingFeature(String),
    #[error("training data `{0}` is not normalized")]
    NotNormalized(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Sem(#[from] SemError),
    #[error(transparent)]
    Solver(#[from] MathProgError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Concatenates the rows of several datasets into one frame.
pub fn pooled_frame(data: &[BanditDataset]) -> Frame {
    let mut out = Frame::default();
    for ds in data {
        let f = Frame::from_dataset(ds);
        for (k, v) in f.columns {
            out.columns.entry(k).or_default().extend(v);
        }
        out.n += f.n;
    }
    out
}

fn reward_scale(data: &[BanditDataset]) -> Result<ColumnScale, SemcpError> {
    let ds = data.first().ok_or_else(|| SemcpError::NotNormalized("no training data".into()))?;
    let norm = ds.normalization.as_ref().ok_or_else(|| SemcpError::NotNormalized(ds.env.clone()))?;
    norm.get(&ds.reward_name).cloned().ok_or_else(|| SemcpError::MissingFeature(ds.reward_name.clone()))
}

/// Per-environment fits, the aggregated uncertainty set, and the nominal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyFit {
    pub modeled: BTreeSet<String>,
    pub models: Vec<StructuralModel>,
    pub spec: UncertaintySpec,
    pub nominal: StructuralModel,
}

/// Fits one model per training environment and aggregates them into intervals.
pub fn fit_uncertainty(
    train: &[BanditDataset],
    g: &CausalGraph,
    shifted: &BTreeSet<String>,
) -> Result<UncertaintyFit, SemcpError> {
    let modeled = modeled_nodes(g, shifted)?;
    let models = train.iter().map(|d| fit_environment_model(d, g, &modeled, shifted)).collect::<Result<Vec<_>, _>>()?;
    let spec = aggregate_bounds(&models, train)?;
    let nominal = spec.midpoint_model("nominal");
    Ok(UncertaintyFit { modeled, models, spec, nominal })
}

/// Solves the worst-case program for `policy` over contexts drawn from `pool`.
pub fn solve_worst_case(
    spec: &UncertaintySpec,
    pool: &Frame,
    policy: &Policy,
    cfg: &ProgramConfig,
    reward: Option<&ColumnScale>,
) -> Result<WorstCaseResult, SemcpError> {
    let batch = Batch::sample(pool, spec, cfg);
    let program = build_evaluation_program(&batch, spec, policy, cfg)?;
    let mut res = solve_program(&program, spec, &batch, cfg)?;
    res.objective_original = reward.map(|s| s.invert(res.objective));
    Ok(res)
}

/// Fits the uncertainty set on normalized training environments and returns
/// the worst-case mean return of `policy`.
pub fn worst_case_evaluate(
    train: &[BanditDataset],
    g: &CausalGraph,
    shifted: &BTreeSet<String>,
    policy: &Policy,
    cfg: &ProgramConfig,
) -> Result<WorstCaseResult, SemcpError> {
    let scale = reward_scale(train)?;
    let fit = fit_uncertainty(train, g, shifted)?;
    solve_worst_case(&fit.spec, &pooled_frame(train), policy, cfg, Some(&scale))
}

/// The nominal model with its parameters replaced by the worst-case assignment.
pub fn extract_worst_case_model(res: &WorstCaseResult, nominal: &StructuralModel) -> StructuralModel {
    let mut out = nominal.clone();
    for eq in &mut out.equations {
        let Some(p) = res.params(&eq.node, eq.branch) else { continue };
        eq.intercept = p.intercept;
        for (reg, b) in &mut eq.coefficients {
            if let Some((_, v)) = p.coefficients.iter().find(|(r, _)| r == reg) {
                *b = *v;
            }
        }
        if eq.form == EquationForm::Linear {
            let n = eq.residuals.len().max(1) as f64;
            let m = eq.residuals.iter().sum::<f64>() / n;
            let sd = (eq.residuals.iter().map(|e| (e - m).powi(2)).sum::<f64>() / n).sqrt();
            eq.noise_shift = p.mu;
            eq.noise_scale = p.sigma;
            eq.noise_std = sd * p.sigma;
        }
    }
    out.env = "worst_case".into();
    out.worst_case = true;
    out
}

/// Number of actions implied by the branches of `model`, at least one.
fn action_count(model: &StructuralModel) -> usize {
    model.equations.iter().filter_map(|e| e.branch).max().map_or(1, |a| a + 1)
}

/// Expected outcome under each action for every row of `contexts`.
pub fn action_values(
    model: &StructuralModel,
    contexts: &Frame,
    num_actions: usize,
) -> Result<Vec<Vec<f64>>, SemcpError> {
    let g = &model.graph;
    let y = g.outcome().map(|i| g.name(i).to_string()).ok_or(SemcpError::NoOutcome)?;
    let desc: BTreeSet<String> = g.action_descendants().into_iter().map(|i| g.name(i).to_string()).collect();
    // Nodes the action cannot reach add the same amount to every action.
    let local = model.restricted(&desc);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut values = vec![vec![0.0; num_actions]; contexts.n];
    if !desc.contains(&y) {
        return Ok(values);
    }
    for a in 0..num_actions {
        let out = simulate(&local, contexts, &vec![a; contexts.n], NoiseMode::Mean, &mut rng)?;
        let col = out.get(&y).ok_or_else(|| SemcpError::MissingFeature(y.clone()))?;
        for (r, v) in values.iter_mut().enumerate() {
            v[a] = col[r];
        }
    }
    Ok(values)
}

/// Deterministic policy choosing, per context, the action with the largest
/// expected outcome under `wc`.
///
/// Linear models over untransformed features give a linear argmax policy
/// that generalizes to unseen contexts; otherwise a table over the distinct
/// contexts in `contexts` is returned, defaulting to the most frequent choice.
pub fn learn_policy(wc: &StructuralModel, contexts: &Frame) -> Result<Policy, SemcpError> {
    let d = action_count(wc);
    let features = policy_features(&wc.graph);
    for f in &features {
        if contexts.get(f).is_none() {
            return Err(SemcpError::MissingFeature(f.clone()));
        }
    }
    let affine = wc
        .equations
        .iter()
        .all(|e| e.form == EquationForm::Linear && e.coefficients.iter().all(|(r, _)| r.level.is_none()));
    if affine {
        // Probe at the origin and at each unit vector.
        let k = features.len();
        let mut probe = Frame { n: k + 1, columns: BTreeMap::new() };
        for (j, f) in features.iter().enumerate() {
            probe.insert(f, (0..=k).map(|r| if r == j + 1 { 1.0 } else { 0.0 }).collect());
        }
        let vals = action_values(wc, &probe, d)?;
        let bias = vals[0].clone();
        let weights = (0..d).map(|a| (0..k).map(|j| vals[j + 1][a] - bias[a]).collect()).collect();
        return Ok(Policy { kind: PolicyKind::LinearArgmax { weights, bias }, num_actions: d, features });
    }
    let mut table = BTreeMap::new();
    let mut counts = vec![0usize; d];
    for (r, v) in action_values(wc, contexts, d)?.iter().enumerate() {
        let a = argmax(v);
        counts[a] += 1;
        table.insert(context_key(&contexts.row(&features, r)), a);
    }
    let default = argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
    Ok(Policy { kind: PolicyKind::TabularArgmax { table, default }, num_actions: d, features })
}

/// A fitted uncertainty set with its worst case solved once and reused.
#[derive(Debug)]
pub struct Semcp {
    pub fit: UncertaintyFit,
    pub pool: Frame,
    pub reward: ColumnScale,
    pub num_actions: usize,
    pub cfg: ProgramConfig,
    worst: OnceLock<WorstCaseResult>,
}

impl Semcp {
    pub fn new(
        train: &[BanditDataset],
        g: &CausalGraph,
        shifted: &BTreeSet<String>,
        cfg: ProgramConfig,
    ) -> Result<Self, SemcpError> {
        let reward = reward_scale(train)?;
        let fit = fit_uncertainty(train, g, shifted)?;
        let num_actions = train.first().map_or(1, |d| d.num_actions);
        Ok(Self { fit, pool: pooled_frame(train), reward, num_actions, cfg, worst: OnceLock::new() })
    }

    /// Worst-case program solved under the uniform policy.
    pub fn worst_case(&self) -> Result<&WorstCaseResult, SemcpError> {
        if let Some(w) = self.worst.get() {
            return Ok(w);
        }
        let uniform = Policy::uniform(self.num_actions, policy_features(&self.fit.spec.graph));
        let res = solve_worst_case(&self.fit.spec, &self.pool, &uniform, &self.cfg, Some(&self.reward))?;
        Ok(self.worst.get_or_init(|| res))
    }

    pub fn evaluate(&self, policy: &Policy) -> Result<WorstCaseResult, SemcpError> {
        solve_worst_case(&self.fit.spec, &self.pool, policy, &self.cfg, Some(&self.reward))
    }

    pub fn worst_case_model(&self) -> Result<StructuralModel, SemcpError> {
        Ok(extract_worst_case_model(self.worst_case()?, &self.fit.nominal))
    }

    /// Learns against the cached worst case.
    pub fn learn(&self) -> Result<Policy, SemcpError> {
        let wc = self.worst_case_model()?;
        let mut p = learn_policy(&wc, &self.pool)?;
        p.num_actions = p.num_actions.max(self.num_actions);
        if let PolicyKind::LinearArgmax { weights, bias } = &mut p.kind {
            // Without action branches every action ties; padded actions score just below the first.
            while bias.len() < p.num_actions {
                bias.push(bias[0] - 1.0);
                weights.push(weights[0].clone());
            }
        }
        Ok(p)
    }
}
