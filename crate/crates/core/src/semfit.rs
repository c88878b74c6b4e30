//! Linear-additive structural equations and the interval uncertainty set.
//!
//! Each modeled node gets `f_W = β_W + Σ_z β_{Wz} z + ε_W` (or a logistic
//! link without noise for binary nodes), fitted per environment and per
//! action branch for nodes the action intervenes on. Aggregating the
//! per-environment fits yields coefficient, intercept, noise-shift, and
//! node-value intervals.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BanditDataset, ColumnKind, DataError};
use crate::graph::{CausalGraph, GraphError, NodeKind};

const COLLINEAR_TOL: f64 = 1e-9;
const LOGIT_MAX_ITER: usize = 100;
const LOGIT_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SemError {
    #[error("node {node}: {n} rows, need at least {need}")]
    TooFewRows { node: String, n: usize, need: usize },
    #[error("node {node}: collinear design columns {collinear:?}")]
    RankDeficient { node: String, collinear: Vec<String> },
    #[error("node {node}: logistic fit did not converge in {iterations} iterations")]
    NoConvergence { node: String, iterations: usize },
    #[error("variable `{0}` is missing")]
    MissingVariable(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("dataset `{0}` is not normalized")]
    NotNormalized(String),
    #[error("node `{node}` has negative values (minimum {min})")]
    NegativeValues { node: String, min: f64 },
    #[error("models disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquationForm {
    Linear,
    /// Logistic link on the linear predictor; the value is a probability.
    Logit,
}

/// A design column derived from a parent: the parent itself or one level of a categorical parent.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Regressor {
    pub parent: String,
    /// Indicator of this level for categorical parents (level 0 is the reference).
    pub level: Option<usize>,
}

impl Regressor {
    pub fn label(&self) -> String {
        match self.level {
            Some(l) => format!("{}={l}", self.parent),
            None => self.parent.clone(),
        }
    }

    pub fn transform(&self, v: f64) -> f64 {
        match self.level {
            Some(l) => f64::from(v.round() as i64 == l as i64),
            None => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEquation {
    pub node: String,
    /// Action index for per-action equations of intervened nodes.
    pub branch: Option<usize>,
    pub form: EquationForm,
    pub intercept: f64,
    pub coefficients: Vec<(Regressor, f64)>,
    pub noise_std: f64,
    /// Residual sample defining the noise distribution; empty for logit equations.
    pub residuals: Vec<f64>,
    /// Additive shift `μ` applied to residuals before scaling.
    pub noise_shift: f64,
    /// Scale `σ`; noise draws are `(ε + μ) σ`.
    pub noise_scale: f64,
}

impl NodeEquation {
    /// Linear predictor at `parents`, one value per regressor.
    pub fn predictor(&self, parents: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(parents).map(|((_, b), x)| b * x).sum::<f64>()
    }

    pub fn coefficient(&self, label: &str) -> Option<f64> {
        self.coefficients.iter().find(|(r, _)| r.label() == label).map(|&(_, b)| b)
    }

    pub fn noise_mean(&self) -> f64 {
        if self.residuals.is_empty() {
            return 0.0;
        }
        let m = self.residuals.iter().sum::<f64>() / self.residuals.len() as f64;
        (m + self.noise_shift) * self.noise_scale
    }
}

/// Equations for the modeled nodes of one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralModel {
    pub env: String,
    pub graph: CausalGraph,
    pub equations: Vec<NodeEquation>,
    /// Nodes whose mechanism was found to shift.
    pub shifted: BTreeSet<String>,
    pub worst_case: bool,
}

impl StructuralModel {
    pub fn equation(&self, node: &str, branch: Option<usize>) -> Option<&NodeEquation> {
        self.equations.iter().find(|e| e.node == node && e.branch == branch)
    }

    pub fn equation_mut(&mut self, node: &str, branch: Option<usize>) -> Option<&mut NodeEquation> {
        self.equations.iter_mut().find(|e| e.node == node && e.branch == branch)
    }

    pub fn modeled(&self) -> BTreeSet<String> {
        self.equations.iter().map(|e| e.node.clone()).collect()
    }

    /// The equation used for `node` under `action`.
    pub fn select(&self, node: &str, action: usize) -> Option<&NodeEquation> {
        self.equation(node, Some(action)).or_else(|| self.equation(node, None))
    }

    /// Copy keeping only the equations of `nodes`.
    pub fn restricted(&self, nodes: &BTreeSet<String>) -> Self {
        let mut out = self.clone();
        out.equations.retain(|e| nodes.contains(&e.node));
        out
    }

    pub fn to_json(&self) -> Result<String, SemError> {
        serde_json::to_string_pretty(self).map_err(|e| SemError::Data(e.into()))
    }

    pub fn from_json(s: &str) -> Result<Self, SemError> {
        serde_json::from_str(s).map_err(|e| SemError::Data(e.into()))
    }
}

/// Closed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn hull(values: impl IntoIterator<Item = f64>) -> Self {
        values.into_iter().fold(Self::new(f64::INFINITY, f64::NEG_INFINITY), |i, v| Self::new(i.lo.min(v), i.hi.max(v)))
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        self.lo - tol <= v && v <= self.hi + tol
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Same midpoint, width multiplied by `factor`.
    pub fn widened(&self, factor: f64) -> Self {
        let mid = 0.5 * (self.lo + self.hi);
        let half = 0.5 * self.width() * factor;
        Self::new(mid - half, mid + half)
    }
}

/// Bounds for one equation (node and optional action branch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeBounds {
    pub node: String,
    pub branch: Option<usize>,
    pub form: EquationForm,
    pub shifted: bool,
    pub intercept: Interval,
    pub coefficients: Vec<(Regressor, Interval)>,
    pub mu: Interval,
    pub sigma: Interval,
    /// Range allowed for the node's value.
    pub value: Interval,
    /// Nominal residual sample `ε⁰`.
    pub residuals: Vec<f64>,
}

impl NodeBounds {
    pub fn coefficient(&self, label: &str) -> Option<Interval> {
        self.coefficients.iter().find(|(r, _)| r.label() == label).map(|&(_, i)| i)
    }

    pub fn coefficient_mut(&mut self, label: &str) -> Option<&mut Interval> {
        self.coefficients.iter_mut().find(|(r, _)| r.label() == label).map(|(_, i)| i)
    }

    /// All parameter intervals flattened: intercept, coefficients, μ, σ.
    pub fn intervals(&self) -> Vec<Interval> {
        let mut v = vec![self.intercept];
        v.extend(self.coefficients.iter().map(|&(_, i)| i));
        v.push(self.mu);
        v.push(self.sigma);
        v
    }
}

/// The interval uncertainty set over all modeled equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySpec {
    pub graph: CausalGraph,
    pub nodes: Vec<NodeBounds>,
}

impl UncertaintySpec {
    pub fn get(&self, node: &str, branch: Option<usize>) -> Option<&NodeBounds> {
        self.nodes.iter().find(|b| b.node == node && b.branch == branch)
    }

    pub fn get_mut(&mut self, node: &str, branch: Option<usize>) -> Option<&mut NodeBounds> {
        self.nodes.iter_mut().find(|b| b.node == node && b.branch == branch)
    }

    /// Bounds used for `node` under `action`.
    pub fn select(&self, node: &str, action: usize) -> Option<&NodeBounds> {
        self.get(node, Some(action)).or_else(|| self.get(node, None))
    }

    pub fn modeled(&self) -> BTreeSet<String> {
        self.nodes.iter().map(|b| b.node.clone()).collect()
    }

    /// Model at the interval midpoints, carrying the nominal residuals.
    pub fn midpoint_model(&self, env: &str) -> StructuralModel {
        let mid = |i: Interval| 0.5 * (i.lo + i.hi);
        let equations = self
            .nodes
            .iter()
            .map(|b| NodeEquation {
                node: b.node.clone(),
                branch: b.branch,
                form: b.form,
                intercept: mid(b.intercept),
                coefficients: b.coefficients.iter().map(|(r, i)| (r.clone(), mid(*i))).collect(),
                noise_std: std_dev(&b.residuals) * mid(b.sigma),
                residuals: b.residuals.clone(),
                noise_shift: mid(b.mu),
                noise_scale: mid(b.sigma),
            })
            .collect();
        StructuralModel {
            env: env.into(),
            graph: self.graph.clone(),
            equations,
            shifted: self.nodes.iter().filter(|b| b.shifted).map(|b| b.node.clone()).collect(),
            worst_case: false,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn std_dev(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Design columns for `parents` in `ds`; categorical parents expand to one indicator per non-reference level.
pub fn regressors(ds: &BanditDataset, parents: &[&str]) -> Result<Vec<Regressor>, SemError> {
    let mut out = Vec::new();
    for &p in parents {
        match ds.variable_kind(p).ok_or_else(|| SemError::MissingVariable(p.into()))? {
            ColumnKind::Categorical(k) => {
                out.extend((1..k).map(|l| Regressor { parent: p.into(), level: Some(l) }));
            }
            _ => out.push(Regressor { parent: p.into(), level: None }),
        }
    }
    Ok(out)
}

/// Design columns not in the span of the intercept and earlier columns.
fn collinear_columns(x: &DMatrix<f64>, labels: &[String]) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        let mut r = col.clone();
        for q in &basis {
            let c = q.dot(&r);
            r -= q * c;
        }
        if norm == 0.0 || r.norm() <= COLLINEAR_TOL * norm.max(1.0) {
            bad.push(labels[j].clone());
        } else {
            let rn = r.norm();
            basis.push(r / rn);
        }
    }
    bad
}

/// Fits the equation of `node` on `ds`, restricted to rows with action `branch` when given.
pub fn fit_node_equation(
    ds: &BanditDataset,
    node: &str,
    parents: &[&str],
    branch: Option<usize>,
    form: EquationForm,
) -> Result<NodeEquation, SemError> {
    let target = ds.variable(node).ok_or_else(|| SemError::MissingVariable(node.into()))?;
    let regs = regressors(ds, parents)?;
    let rows: Vec<usize> = match branch {
        Some(a) => (0..ds.len()).filter(|&i| ds.actions[i] == a).collect(),
        None => (0..ds.len()).collect(),
    };
    let need = parents.len() + 2;
    if rows.len() < need {
        return Err(SemError::TooFewRows { node: node.into(), n: rows.len(), need });
    }
    let cols: Vec<&[f64]> = regs
        .iter()
        .map(|r| ds.variable(&r.parent).ok_or_else(|| SemError::MissingVariable(r.parent.clone())))
        .collect::<Result<_, _>>()?;
    let n = rows.len();
    let p = regs.len() + 1;
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { regs[j - 1].transform(cols[j - 1][rows[i]]) });
    let y = DVector::from_iterator(n, rows.iter().map(|&i| target[i]));
    let mut labels = vec!["intercept".to_string()];
    labels.extend(regs.iter().map(Regressor::label));
    let bad = collinear_columns(&x, &labels);
    if !bad.is_empty() {
        return Err(SemError::RankDeficient { node: node.into(), collinear: bad });
    }

    let beta = match form {
        EquationForm::Linear => {
            let svd = x.clone().svd(true, true);
            svd.solve(&y, 1e-14).map_err(|e| SemError::Unsupported(e.into()))?
        }
        EquationForm::Logit => fit_logit(&x, &y, node)?,
    };
    let (residuals, noise_std) = match form {
        EquationForm::Linear => {
            let r: Vec<f64> = (&y - &x * &beta).iter().copied().collect();
            let s = std_dev(&r);
            (r, s)
        }
        EquationForm::Logit => (Vec::new(), 0.0),
    };
    Ok(NodeEquation {
        node: node.into(),
        branch,
        form,
        intercept: beta[0],
        coefficients: regs.into_iter().zip(beta.iter().skip(1).copied()).collect(),
        noise_std,
        residuals,
        noise_shift: 0.0,
        noise_scale: 1.0,
    })
}

/// Iteratively reweighted least squares for a logistic model.
fn fit_logit(x: &DMatrix<f64>, y: &DVector<f64>, node: &str) -> Result<DVector<f64>, SemError> {
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    for _ in 0..LOGIT_MAX_ITER {
        let eta = x * &beta;
        let mu = eta.map(sigmoid);
        let w = mu.map(|m| (m * (1.0 - m)).max(1e-12));
        let xtw = DMatrix::from_fn(p, x.nrows(), |j, i| x[(i, j)] * w[i]);
        let hess = &xtw * x;
        let grad = x.transpose() * (y - &mu);
        let step = hess
            .cholesky()
            .map(|c| c.solve(&grad))
            .ok_or_else(|| SemError::NoConvergence { node: node.into(), iterations: 0 })?;
        beta += &step;
        if !beta.iter().all(|b| b.is_finite()) {
            break;
        }
        if step.amax() < LOGIT_TOL {
            return Ok(beta);
        }
    }
    Err(SemError::NoConvergence { node: node.into(), iterations: LOGIT_MAX_ITER })
}

fn form_of(g: &CausalGraph, node: usize) -> Result<EquationForm, SemError> {
    match g.kind(node) {
        NodeKind::Continuous | NodeKind::Outcome => Ok(EquationForm::Linear),
        NodeKind::Binary => Ok(EquationForm::Logit),
        k => Err(SemError::Unsupported(format!("modeling node {} of kind {k}", g.name(node)))),
    }
}

/// Nodes needing equations: the shifted set, nodes the action intervenes on,
/// everything downstream of either, and the outcome.
pub fn modeled_nodes(g: &CausalGraph, shifted: &BTreeSet<String>) -> Result<BTreeSet<String>, SemError> {
    let mut idx = BTreeSet::new();
    for s in shifted {
        idx.insert(g.index_of(s)?);
    }
    idx.extend(g.action_descendants());
    if let Some(y) = g.outcome() {
        idx.insert(y);
    }
    for i in idx.clone() {
        idx.extend(g.descendants(i));
    }
    idx.retain(|&i| g.kind(i) != NodeKind::Action);
    Ok(idx.into_iter().map(|i| g.name(i).to_string()).collect())
}

/// Fits every node in `modeled` on one environment, with per-action branches for intervened nodes.
///
/// A branch with too few rows or a singular design falls back to the
/// action-agnostic fit.
pub fn fit_environment_model(
    ds: &BanditDataset,
    g: &CausalGraph,
    modeled: &BTreeSet<String>,
    shifted: &BTreeSet<String>,
) -> Result<StructuralModel, SemError> {
    let mut equations = Vec::new();
    for i in g.topological_indices() {
        let name = g.name(i);
        if !modeled.contains(name) {
            continue;
        }
        let form = form_of(g, i)?;
        let parents = g.parents(name)?;
        if g.is_intervened(i) {
            for a in 0..ds.num_actions {
                let eq = match fit_node_equation(ds, name, &parents, Some(a), form) {
                    Ok(eq) => eq,
                    Err(e @ (SemError::TooFewRows { .. } | SemError::RankDeficient { .. })) => {
                        warn!("{}: branch {a} of {name} falls back to the pooled fit ({e})", ds.env);
                        NodeEquation { branch: Some(a), ..fit_node_equation(ds, name, &parents, None, form)? }
                    }
                    Err(e) => return Err(e),
                };
                equations.push(eq);
            }
        } else {
            equations.push(fit_node_equation(ds, name, &parents, None, form)?);
        }
    }
    Ok(StructuralModel {
        env: ds.env.clone(),
        graph: g.clone(),
        equations,
        shifted: shifted.iter().filter(|s| modeled.contains(*s)).cloned().collect(),
        worst_case: false,
    })
}

/// Turns per-environment fits into intervals.
///
/// Shifted equations take the min/max across environments; modeled but
/// unshifted equations are refitted on the pooled data and get point
/// intervals. `μ` compares each environment's residual mean with the pooled
/// residual mean and `σ` is the ratio of residual standard deviations.
pub fn aggregate_bounds(models: &[StructuralModel], data: &[BanditDataset]) -> Result<UncertaintySpec, SemError> {
    let first = models.first().ok_or_else(|| SemError::Mismatch("no models".into()))?;
    if models.len() != data.len() {
        return Err(SemError::Mismatch(format!("{} models for {} datasets", models.len(), data.len())));
    }
    if models.len() == 1 {
        warn!("a single environment gives point intervals");
    }
    for d in data {
        if d.normalization.is_none() {
            return Err(SemError::NotNormalized(d.env.clone()));
        }
    }
    let g = &first.graph;
    let refs: Vec<&BanditDataset> = data.iter().collect();
    let pooled = BanditDataset::pool(&refs, "pooled")?;
    let mut nodes = Vec::new();
    for eq0 in &first.equations {
        let per_env: Vec<&NodeEquation> = models
            .iter()
            .map(|m| {
                m.equation(&eq0.node, eq0.branch)
                    .ok_or_else(|| SemError::Mismatch(format!("{} lacks {}", m.env, eq0.node)))
            })
            .collect::<Result<_, _>>()?;
        let values = pooled.variable(&eq0.node).ok_or_else(|| SemError::MissingVariable(eq0.node.clone()))?;
        let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
        if vmin < -1e-9 {
            return Err(SemError::NegativeValues { node: eq0.node.clone(), min: vmin });
        }
        let vmax = values.iter().copied().fold(0.0, f64::max);
        let shifted = first.shifted.contains(&eq0.node);

        let b = if shifted {
            let residuals: Vec<f64> = per_env.iter().flat_map(|e| e.residuals.iter().copied()).collect();
            let (m0, s0) = (mean(&residuals), std_dev(&residuals));
            let sigma = if eq0.form == EquationForm::Logit || s0 == 0.0 {
                Interval::point(1.0)
            } else {
                let s = Interval::hull(per_env.iter().map(|e| std_dev(&e.residuals) / s0));
                Interval::new(s.lo.max(0.0), s.hi)
            };
            let mu = if eq0.form == EquationForm::Logit {
                Interval::point(0.0)
            } else {
                Interval::hull(per_env.iter().map(|e| mean(&e.residuals) - m0))
            };
            NodeBounds {
                node: eq0.node.clone(),
                branch: eq0.branch,
                form: eq0.form,
                shifted,
                intercept: Interval::hull(per_env.iter().map(|e| e.intercept)),
                coefficients: eq0
                    .coefficients
                    .iter()
                    .enumerate()
                    .map(|(k, (r, _))| (r.clone(), Interval::hull(per_env.iter().map(|e| e.coefficients[k].1))))
                    .collect(),
                mu,
                sigma,
                value: Interval::new(0.0, vmax),
                residuals,
            }
        } else {
            let parents = g.parents(&eq0.node)?;
            let eq = match fit_node_equation(&pooled, &eq0.node, &parents, eq0.branch, eq0.form) {
                Ok(eq) => eq,
                Err(SemError::TooFewRows { .. } | SemError::RankDeficient { .. }) if eq0.branch.is_some() => {
                    fit_node_equation(&pooled, &eq0.node, &parents, None, eq0.form)?
                }
                Err(e) => return Err(e),
            };
            NodeBounds {
                node: eq0.node.clone(),
                branch: eq0.branch,
                form: eq0.form,
                shifted,
                intercept: Interval::point(eq.intercept),
                coefficients: eq.coefficients.iter().map(|(r, b)| (r.clone(), Interval::point(*b))).collect(),
                mu: Interval::point(0.0),
                sigma: Interval::point(1.0),
                value: Interval::new(0.0, vmax),
                residuals: eq.residuals,
            }
        };
        nodes.push(b);
    }
    Ok(UncertaintySpec { graph: g.clone(), nodes })
}

/// Named value columns of equal length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frame {
    pub n: usize,
    pub columns: BTreeMap<String, Vec<f64>>,
}

impl Frame {
    pub fn from_dataset(ds: &BanditDataset) -> Self {
        let mut columns: BTreeMap<String, Vec<f64>> =
            ds.columns.iter().zip(&ds.values).map(|(c, v)| (c.name.clone(), v.clone())).collect();
        columns.insert(ds.reward_name.clone(), ds.rewards.clone());
        Self { n: ds.len(), columns }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn insert(&mut self, name: &str, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.n);
        self.columns.insert(name.to_string(), values);
    }

    pub fn row(&self, names: &[String], i: usize) -> Vec<f64> {
        names.iter().map(|n| self.columns[n][i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseMode {
    Zero,
    /// Each node gets its expected noise `(mean ε + μ) σ`.
    Mean,
    /// Residuals are resampled with replacement.
    Resample,
}

/// Evaluates the modeled nodes in topological order.
///
/// Unmodeled variables come from `contexts`; modeled ones are overwritten.
/// Intervened nodes use the branch of each row's action.
pub fn simulate<R: Rng + ?Sized>(
    model: &StructuralModel,
    contexts: &Frame,
    actions: &[usize],
    mode: NoiseMode,
    rng: &mut R,
) -> Result<Frame, SemError> {
    let g = &model.graph;
    let n = contexts.n;
    if actions.len() != n {
        return Err(SemError::Mismatch(format!("{} actions for {n} rows", actions.len())));
    }
    let modeled = model.modeled();
    let mut out = contexts.clone();
    for i in g.topological_indices() {
        let name = g.name(i);
        if !modeled.contains(name) {
            continue;
        }
        let mut vals = vec![0.0; n];
        for (r, v) in vals.iter_mut().enumerate() {
            let eq =
                model.select(name, actions[r]).ok_or_else(|| SemError::Mismatch(format!("no equation for {name}")))?;
            let mut x = Vec::with_capacity(eq.coefficients.len());
            for (reg, _) in &eq.coefficients {
                let col = out.get(&reg.parent).ok_or_else(|| SemError::MissingVariable(reg.parent.clone()))?;
                x.push(reg.transform(col[r]));
            }
            let lin = eq.predictor(&x);
            *v = match eq.form {
                EquationForm::Logit => sigmoid(lin),
                EquationForm::Linear => {
                    let noise = match mode {
                        NoiseMode::Zero => 0.0,
                        NoiseMode::Mean => eq.noise_mean(),
                        NoiseMode::Resample if eq.residuals.is_empty() => 0.0,
                        NoiseMode::Resample => {
                            let e = eq.residuals[rng.random_range(0..eq.residuals.len())];
                            (e + eq.noise_shift) * eq.noise_scale
                        }
                    };
                    lin + noise
                }
            };
        }
        out.insert(name, vals);
    }
    Ok(out)
}
