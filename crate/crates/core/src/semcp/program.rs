use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::CausalGraph;
use crate::mathprog::{encode_sigmoid, solve, Model, Relation, Sense, SolverOptions, Status, VarId};
use crate::semfit::{EquationForm, Frame, Interval, NodeBounds, Regressor, UncertaintySpec};

use super::{Policy, SemcpError};

/// Node and optional action branch identifying one equation.
pub type EqKey = (String, Option<usize>);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProgramConfig {
    /// Context rows drawn from the pooled training data.
    pub contexts: usize,
    /// Pair every residual draw with its negation.
    pub antithetic: bool,
    pub seed: u64,
    pub sigmoid_lower: f64,
    pub sigmoid_upper: f64,
    /// Re-solve among optimal points, preferring parameters near their lower bounds.
    pub tie_break: bool,
    /// Relative slack on the optimum allowed in the tie-break solve.
    pub tie_tolerance: f64,
    pub solver: SolverOptions,
}

impl Default for ProgramConfig {
    fn default() -> Self {
        Self {
            contexts: 500,
            antithetic: true,
            seed: 0,
            sigmoid_lower: -30.0,
            sigmoid_upper: 30.0,
            tie_break: true,
            tie_tolerance: 1e-9,
            solver: SolverOptions::default(),
        }
    }
}

/// Context rows and the residual draws fixed for one program.
#[derive(Debug, Clone)]
pub struct Batch {
    pub contexts: Frame,
    /// Context index of each draw row.
    pub source: Vec<usize>,
    /// Residual per equation and draw row.
    pub draws: BTreeMap<EqKey, Vec<f64>>,
}

/// Redraws allowed per residual before accepting the least violating one.
const MAX_REDRAWS: usize = 50;

impl Batch {
    /// Samples contexts without replacement from `pool` and one residual per context and equation.
    ///
    /// A residual is redrawn when it would push the node outside its value
    /// bounds at the interval midpoints, for either sign and any action.
    pub fn sample(pool: &Frame, spec: &UncertaintySpec, cfg: &ProgramConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = cfg.contexts.min(pool.n);
        let mut idx = sample(&mut rng, pool.n, n).into_vec();
        idx.sort_unstable();
        let contexts = Frame {
            n,
            columns: pool.columns.iter().map(|(k, v)| (k.clone(), idx.iter().map(|&i| v[i]).collect())).collect(),
        };
        let signs: &[f64] = if cfg.antithetic { &[1.0, -1.0] } else { &[1.0] };
        let actions = spec.nodes.iter().filter_map(|b| b.branch).max().map_or(1, |a| a + 1);
        let topo: HashMap<&str, usize> =
            spec.graph.topological_order().into_iter().enumerate().map(|(i, n)| (n, i)).collect();
        let mut order: Vec<&NodeBounds> = spec.nodes.iter().collect();
        order.sort_by_key(|b| (topo.get(b.node.as_str()).copied().unwrap_or(usize::MAX), b.branch));
        let mid = |i: Interval| 0.5 * (i.lo + i.hi);

        let mut per_context: BTreeMap<EqKey, Vec<f64>> =
            spec.nodes.iter().map(|b| ((b.node.clone(), b.branch), vec![0.0; n])).collect();
        for c in 0..n {
            let mut vals: Vec<Vec<HashMap<&str, f64>>> = vec![vec![HashMap::new(); actions]; signs.len()];
            for b in &order {
                let acts: Vec<usize> = match b.branch {
                    Some(a) => vec![a],
                    None => (0..actions).collect(),
                };
                let mut preds = Vec::new();
                for (si, _) in signs.iter().enumerate() {
                    for &a in &acts {
                        let mut p = mid(b.intercept);
                        for (reg, iv) in &b.coefficients {
                            let x = match vals[si][a].get(reg.parent.as_str()) {
                                Some(&v) => v,
                                None => contexts.get(&reg.parent).map_or(0.0, |col| col[c]),
                            };
                            p += mid(*iv) * reg.transform(x);
                        }
                        preds.push((si, a, p));
                    }
                }
                let value = |p: f64, s: f64, e: f64| match b.form {
                    EquationForm::Linear => p + (s * e + mid(b.mu)) * mid(b.sigma),
                    EquationForm::Logit => 1.0 / (1.0 + (-p).exp()),
                };
                let mut best = (f64::INFINITY, 0.0);
                for _ in 0..MAX_REDRAWS {
                    let e =
                        if b.residuals.is_empty() { 0.0 } else { b.residuals[rng.random_range(0..b.residuals.len())] };
                    let viol: f64 = preds
                        .iter()
                        .map(|&(si, _, p)| {
                            let v = value(p, signs[si], e);
                            (b.value.lo - v).max(0.0) + (v - b.value.hi).max(0.0)
                        })
                        .sum();
                    if viol < best.0 {
                        best = (viol, e);
                    }
                    if viol == 0.0 || b.residuals.len() <= 1 {
                        break;
                    }
                }
                per_context.get_mut(&(b.node.clone(), b.branch)).expect("key present")[c] = best.1;
                for &(si, a, p) in &preds {
                    vals[si][a].insert(b.node.as_str(), value(p, signs[si], best.1));
                }
            }
        }
        let source: Vec<usize> = (0..n).flat_map(|c| std::iter::repeat_n(c, signs.len())).collect();
        let draws = per_context
            .into_iter()
            .map(|(k, e)| {
                let col = (0..source.len()).map(|r| signs[r % signs.len()] * e[source[r]]).collect();
                (k, col)
            })
            .collect();
        Self { contexts, source, draws }
    }

    pub fn rows(&self) -> usize {
        self.source.len()
    }
}

/// One regressor's contribution: a shared coefficient on a context constant,
/// or per-row product variables on a modeled parent.
#[derive(Debug, Clone)]
enum TermVars {
    Shared(VarId),
    /// `(product, parent value)` per use.
    Products(Vec<(VarId, VarId)>),
}

#[derive(Debug, Clone)]
struct EqVars {
    intercept: VarId,
    sigma: VarId,
    /// Product `μ σ`.
    musigma: VarId,
    terms: Vec<TermVars>,
}

/// Built program with handles for reading the solution back.
#[derive(Debug, Clone)]
pub struct Program {
    pub model: Model,
    eqs: BTreeMap<EqKey, EqVars>,
    /// Outcome variable and objective weight per slot.
    pub outcome: Vec<(VarId, f64)>,
    /// Node value variables per node over all slots.
    pub node_vars: BTreeMap<String, Vec<VarId>>,
}

/// Worst-case values for one equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationParams {
    pub node: String,
    pub branch: Option<usize>,
    pub intercept: f64,
    pub coefficients: Vec<(Regressor, f64)>,
    pub mu: f64,
    pub sigma: f64,
}

impl EquationParams {
    /// Flat parameter vector: intercept, coefficients, μ, σ.
    pub fn vector(&self) -> Vec<f64> {
        let mut v = vec![self.intercept];
        v.extend(self.coefficients.iter().map(|&(_, b)| b));
        v.push(self.mu);
        v.push(self.sigma);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub variables: usize,
    pub constraints: usize,
    pub binaries: usize,
    pub draw_rows: usize,
    pub pivots: usize,
    pub nodes: usize,
    pub gap: f64,
    /// Objective increase accepted by the tie-break solve.
    pub tie_break_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseResult {
    /// Worst-case mean outcome on the normalized scale.
    pub objective: f64,
    /// The same in original reward units, when a normalization record was available.
    pub objective_original: Option<f64>,
    pub parameters: Vec<EquationParams>,
    /// Outcome value and weight per slot.
    pub outcome_values: Vec<(f64, f64)>,
    pub node_values: BTreeMap<String, Vec<f64>>,
    pub diagnostics: SolveDiagnostics,
}

impl WorstCaseResult {
    pub fn params(&self, node: &str, branch: Option<usize>) -> Option<&EquationParams> {
        self.parameters.iter().find(|p| p.node == node && p.branch == branch)
    }
}

fn product_bounds(iv: Interval, parent: Interval) -> (f64, f64) {
    let c = [iv.lo * parent.lo, iv.lo * parent.hi, iv.hi * parent.lo, iv.hi * parent.hi];
    (c.iter().copied().fold(f64::INFINITY, f64::min), c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

struct Builder<'a> {
    spec: &'a UncertaintySpec,
    cfg: &'a ProgramConfig,
    model: Model,
    eqs: BTreeMap<EqKey, EqVars>,
    node_vars: BTreeMap<String, Vec<VarId>>,
    counter: usize,
}

impl Builder<'_> {
    fn eq_vars(&mut self, b: &NodeBounds) -> Result<EqVars, SemcpError> {
        let key = (b.node.clone(), b.branch);
        if let Some(v) = self.eqs.get(&key) {
            return Ok(v.clone());
        }
        let tag = match b.branch {
            Some(a) => format!("{}_a{a}", b.node),
            None => b.node.clone(),
        };
        let m = &mut self.model;
        let intercept = m.add_var(format!("b0_{tag}"), b.intercept.lo, b.intercept.hi)?;
        let sigma = m.add_var(format!("sigma_{tag}"), b.sigma.lo, b.sigma.hi)?;
        let (ml, mh) = product_bounds(b.mu, b.sigma);
        let musigma = m.add_var(format!("musigma_{tag}"), ml, mh)?;
        m.add_constraint(format!("musigma_lo_{tag}"), &[(musigma, 1.0), (sigma, -b.mu.lo)], Relation::Ge, 0.0)?;
        m.add_constraint(format!("musigma_hi_{tag}"), &[(musigma, 1.0), (sigma, -b.mu.hi)], Relation::Le, 0.0)?;
        let mut terms = Vec::new();
        for (reg, iv) in &b.coefficients {
            if self.spec.nodes.iter().any(|n| n.node == reg.parent) {
                terms.push(TermVars::Products(Vec::new()));
            } else {
                terms.push(TermVars::Shared(m.add_var(format!("b_{tag}_{}", reg.label()), iv.lo, iv.hi)?));
            }
        }
        let v = EqVars { intercept, sigma, musigma, terms };
        self.eqs.insert(key, v.clone());
        Ok(v)
    }

    /// Adds the value variable of `b`'s node for one slot.
    fn node(
        &mut self,
        b: &NodeBounds,
        eps: f64,
        slot: &HashMap<String, VarId>,
        ctx: &Frame,
        c: usize,
    ) -> Result<VarId, SemcpError> {
        let ev = self.eq_vars(b)?;
        self.counter += 1;
        let id = self.counter;
        let v = self.model.add_var(format!("v_{}_{id}", b.node), b.value.lo, b.value.hi)?;
        let mut row = vec![(ev.intercept, -1.0)];
        if b.form == EquationForm::Linear {
            row.push((ev.musigma, -1.0));
            if eps != 0.0 {
                row.push((ev.sigma, -eps));
            }
        }
        for (k, (reg, iv)) in b.coefficients.iter().enumerate() {
            match &ev.terms[k] {
                TermVars::Shared(beta) => {
                    let col = ctx.get(&reg.parent).ok_or_else(|| SemcpError::MissingFeature(reg.parent.clone()))?;
                    let x = reg.transform(col[c]);
                    if x != 0.0 {
                        row.push((*beta, -x));
                    }
                }
                TermVars::Products(_) => {
                    let z = *slot.get(&reg.parent).ok_or_else(|| SemcpError::MissingFeature(reg.parent.clone()))?;
                    let zb = self.model.var(z);
                    let (lo, hi) = product_bounds(*iv, Interval::new(zb.lower, zb.upper));
                    let u = self.model.add_var(format!("p_{}_{}_{id}", b.node, reg.label()), lo, hi)?;
                    let lower = if iv.lo == iv.hi {
                        self.model.add_constraint(
                            format!("pe_{id}_{k}"),
                            &[(u, 1.0), (z, -iv.lo)],
                            Relation::Eq,
                            0.0,
                        )?
                    } else {
                        let c = self.model.add_constraint(
                            format!("pl_{id}_{k}"),
                            &[(u, 1.0), (z, -iv.lo)],
                            Relation::Ge,
                            0.0,
                        )?;
                        self.model.add_constraint(
                            format!("ph_{id}_{k}"),
                            &[(u, 1.0), (z, -iv.hi)],
                            Relation::Le,
                            0.0,
                        )?;
                        c
                    };
                    self.model.hint_basic(u, lower)?;
                    if let Some(EqVars { terms, .. }) = self.eqs.get_mut(&(b.node.clone(), b.branch)) {
                        if let TermVars::Products(list) = &mut terms[k] {
                            list.push((u, z));
                        }
                    }
                    row.push((u, -1.0));
                }
            }
        }
        match b.form {
            EquationForm::Linear => {
                row.push((v, 1.0));
                let def = self.model.add_constraint(format!("def_{}_{id}", b.node), &row, Relation::Eq, 0.0)?;
                self.model.hint_basic(v, def)?;
            }
            EquationForm::Logit => {
                let (fl, fu) = (self.cfg.sigmoid_lower, self.cfg.sigmoid_upper);
                let f = self.model.add_var(format!("f_{}_{id}", b.node), fl, fu)?;
                row.push((f, 1.0));
                let def = self.model.add_constraint(format!("def_{}_{id}", b.node), &row, Relation::Eq, 0.0)?;
                self.model.hint_basic(f, def)?;
                encode_sigmoid(&mut self.model, &format!("sig_{}_{id}", b.node), f, v, fl, fu)?;
            }
        }
        self.node_vars.entry(b.node.clone()).or_default().push(v);
        Ok(v)
    }
}

/// Builds the linearized worst-case program for `policy` over `batch`.
///
/// Every draw row is expanded into one slot per action, weighted in the
/// objective by the policy's probability of that action. Slots of actions the
/// policy never takes still constrain the parameters, so the feasible set is
/// the same for every policy. Nodes the action cannot reach share one value
/// per draw row across slots.
pub fn build_evaluation_program(
    batch: &Batch,
    spec: &UncertaintySpec,
    policy: &Policy,
    cfg: &ProgramConfig,
) -> Result<Program, SemcpError> {
    for b in &spec.nodes {
        if b.value.lo < 0.0 {
            return Err(SemcpError::NegativeBound { node: b.node.clone(), lower: b.value.lo });
        }
    }
    let g: &CausalGraph = &spec.graph;
    let outcome = g.outcome().map(|i| g.name(i).to_string()).ok_or(SemcpError::NoOutcome)?;
    let modeled = spec.modeled();
    if !modeled.contains(&outcome) {
        return Err(SemcpError::NoOutcome);
    }
    let desc: BTreeSet<String> = g.action_descendants().into_iter().map(|i| g.name(i).to_string()).collect();
    let order: Vec<String> =
        g.topological_order().into_iter().filter(|n| modeled.contains(*n)).map(String::from).collect();
    let probs = policy.probs_frame(&batch.contexts)?;

    let mut bld = Builder {
        spec,
        cfg,
        model: Model::new(Sense::Minimize),
        eqs: BTreeMap::new(),
        node_vars: BTreeMap::new(),
        counter: 0,
    };
    let rows = batch.rows();
    let mut outcome_vars = Vec::new();
    for r in 0..rows {
        let c = batch.source[r];
        let mut base: HashMap<String, VarId> = HashMap::new();
        for name in order.iter().filter(|n| !desc.contains(*n)) {
            let b = spec.get(name, None).ok_or_else(|| SemcpError::MissingFeature(name.clone()))?;
            let eps = batch.draws[&(name.clone(), None)][r];
            let v = bld.node(b, eps, &base, &batch.contexts, c)?;
            base.insert(name.clone(), v);
        }
        // Every action gets a slot so the feasible set does not depend on the policy.
        for (a, &w) in probs[c].iter().enumerate() {
            let mut slot = base.clone();
            for name in order.iter().filter(|n| desc.contains(*n)) {
                let b = spec.select(name, a).ok_or_else(|| SemcpError::MissingFeature(name.clone()))?;
                let eps = batch.draws[&(name.clone(), b.branch)][r];
                let v = bld.node(b, eps, &slot, &batch.contexts, c)?;
                slot.insert(name.clone(), v);
            }
            outcome_vars.push((slot[&outcome], w / rows as f64));
        }
    }
    bld.model.set_objective(Sense::Minimize, &outcome_vars, 0.0)?;
    Ok(Program { model: bld.model, eqs: bld.eqs, outcome: outcome_vars, node_vars: bld.node_vars })
}

impl Program {
    /// Objective preferring each parameter near the lower end of its interval.
    fn tie_break_objective(&self, spec: &UncertaintySpec) -> Vec<(VarId, f64)> {
        let mut terms = Vec::new();
        for ((node, branch), ev) in &self.eqs {
            let b = spec.get(node, *branch).expect("equation present in spec");
            let push = |terms: &mut Vec<(VarId, f64)>, v: VarId, iv: Interval| {
                if iv.width() > 0.0 {
                    terms.push((v, 1.0 / iv.width()));
                }
            };
            push(&mut terms, ev.intercept, b.intercept);
            push(&mut terms, ev.sigma, b.sigma);
            if b.mu.width() > 0.0 {
                let k = b.mu.width() * b.sigma.hi.max(1e-9);
                terms.push((ev.musigma, 1.0 / k));
                terms.push((ev.sigma, -b.mu.lo / k));
            }
            for (t, (_, iv)) in ev.terms.iter().zip(&b.coefficients) {
                match t {
                    TermVars::Shared(v) => push(&mut terms, *v, *iv),
                    TermVars::Products(list) if iv.width() > 0.0 && !list.is_empty() => {
                        let k = iv.width() * list.len() as f64;
                        for &(u, z) in list {
                            terms.push((u, 1.0 / k));
                            terms.push((z, -iv.lo / k));
                        }
                    }
                    TermVars::Products(_) => {}
                }
            }
        }
        terms
    }

    fn extract(&self, spec: &UncertaintySpec, values: &[f64]) -> Vec<EquationParams> {
        let clamp = |x: f64, iv: Interval| if iv.width() == 0.0 { iv.lo } else { x.clamp(iv.lo, iv.hi) };
        self.eqs
            .iter()
            .map(|((node, branch), ev)| {
                let b = spec.get(node, *branch).expect("equation present in spec");
                let sigma = clamp(values[ev.sigma.index()], b.sigma);
                let mu = if sigma > 1e-12 { values[ev.musigma.index()] / sigma } else { b.mu.lo };
                let coefficients = ev
                    .terms
                    .iter()
                    .zip(&b.coefficients)
                    .map(|(t, (reg, iv))| {
                        let raw = match t {
                            TermVars::Shared(v) => values[v.index()],
                            TermVars::Products(list) => {
                                let su: f64 = list.iter().map(|(u, _)| values[u.index()]).sum();
                                let sz: f64 = list.iter().map(|(_, z)| values[z.index()]).sum();
                                if sz > 1e-12 {
                                    su / sz
                                } else {
                                    iv.lo
                                }
                            }
                        };
                        (reg.clone(), clamp(raw, *iv))
                    })
                    .collect();
                EquationParams {
                    node: node.clone(),
                    branch: *branch,
                    intercept: clamp(values[ev.intercept.index()], b.intercept),
                    coefficients,
                    mu: clamp(mu, b.mu),
                    sigma,
                }
            })
            .collect()
    }
}

/// Solves a built program, then optionally re-solves for the lexicographic tie-break.
pub fn solve_program(
    program: &Program,
    spec: &UncertaintySpec,
    batch: &Batch,
    cfg: &ProgramConfig,
) -> Result<WorstCaseResult, SemcpError> {
    let model = &program.model;
    let first = solve(model, &cfg.solver)?;
    match first.status {
        Status::Optimal => {}
        Status::Infeasible => return Err(SemcpError::Infeasible { bounds: violated_bounds(spec, batch) }),
        Status::Unbounded => return Err(SemcpError::Unbounded),
    }
    let mut sol = first.clone();
    let mut shift = 0.0;
    if cfg.tie_break {
        let tb = program.tie_break_objective(spec);
        if !tb.is_empty() {
            let mut m2 = model.clone();
            let cap = first.objective + cfg.tie_tolerance * (1.0 + first.objective.abs());
            m2.add_constraint("optimality", &program.outcome, Relation::Le, cap)?;
            m2.set_objective(Sense::Minimize, &tb, 0.0)?;
            let second = solve(&m2, &cfg.solver)?;
            if second.status == Status::Optimal {
                let obj = model.objective_value(&second.values);
                shift = obj - first.objective;
                sol = second;
                sol.objective = obj;
            }
        }
    }
    let bin = model.vars().iter().filter(|v| v.kind == crate::mathprog::VarKind::Binary).count();
    Ok(WorstCaseResult {
        objective: sol.objective,
        objective_original: None,
        parameters: program.extract(spec, &sol.values),
        outcome_values: program.outcome.iter().map(|&(v, w)| (sol.value(v), w * batch.rows() as f64)).collect(),
        node_values: program
            .node_vars
            .iter()
            .map(|(k, vs)| (k.clone(), vs.iter().map(|&v| sol.value(v)).collect()))
            .collect(),
        diagnostics: SolveDiagnostics {
            variables: model.num_vars(),
            constraints: model.constraints().len(),
            binaries: bin,
            draw_rows: batch.rows(),
            pivots: first.pivots + if cfg.tie_break { sol.pivots } else { 0 },
            nodes: first.nodes,
            gap: first.gap,
            tie_break_shift: shift,
        },
    })
}

/// Bounds of nodes whose values at the interval midpoints leave their allowed range on some draw row.
fn violated_bounds(spec: &UncertaintySpec, batch: &Batch) -> Vec<String> {
    let mid = |i: Interval| 0.5 * (i.lo + i.hi);
    let mut out = Vec::new();
    for b in &spec.nodes {
        let draws = &batch.draws[&(b.node.clone(), b.branch)];
        let mut bad = 0;
        for (r, &e) in draws.iter().enumerate() {
            let c = batch.source[r];
            let mut v = mid(b.intercept) + (e + mid(b.mu)) * mid(b.sigma);
            let mut known = true;
            for (reg, iv) in &b.coefficients {
                match batch.contexts.get(&reg.parent) {
                    Some(col) => v += mid(*iv) * reg.transform(col[c]),
                    None => known = false,
                }
            }
            if known && !b.value.contains(v, 1e-9) {
                bad += 1;
            }
        }
        if bad > 0 {
            out.push(format!(
                "{}{} in [{}, {}] ({bad} rows outside at midpoint parameters)",
                b.node,
                b.branch.map(|a| format!("[a{a}]")).unwrap_or_default(),
                b.value.lo,
                b.value.hi
            ));
        }
    }
    if out.is_empty() {
        out = spec.nodes.iter().map(|b| format!("{} in [{}, {}]", b.node, b.value.lo, b.value.hi)).collect();
    }
    out
}
