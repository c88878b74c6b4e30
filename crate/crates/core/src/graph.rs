//! Causal DAGs over covariates, an action, and an outcome.
//!
//! Graphs are read from a small line-oriented text format:
//!
//! ```text
//! # comment
//! node X0 cont
//! node A action
//! node Y outcome
//! edge X0 -> Y
//! intervene A => X0
//! ```
//!
//! The action never appears as an ordinary parent; it reaches the graph only
//! through `intervene` lines.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: undeclared node `{name}`")]
    UndeclaredNode { line: usize, name: String },
    #[error("line {line}: node `{name}` declared twice")]
    DuplicateNode { line: usize, name: String },
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("cycle through {0:?}")]
    Cycle(Vec<String>),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("action node `{0}` must not have parents or ordinary children")]
    ActionEdge(String),
    #[error("invalid intervention {0} => {1}")]
    InvalidIntervention(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Continuous,
    Binary,
    /// Categorical with the given number of levels.
    Categorical(usize),
    Action,
    Outcome,
}

impl NodeKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "cont" => Some(Self::Continuous),
            "bin" => Some(Self::Binary),
            "action" => Some(Self::Action),
            "outcome" => Some(Self::Outcome),
            _ => {
                let k: usize = s.strip_prefix("cat:")?.parse().ok()?;
                (k >= 2).then_some(Self::Categorical(k))
            }
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Continuous => f.write_str("cont"),
            Self::Binary => f.write_str("bin"),
            Self::Categorical(k) => write!(f, "cat:{k}"),
            Self::Action => f.write_str("action"),
            Self::Outcome => f.write_str("outcome"),
        }
    }
}

/// A validated DAG. Node order is declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    names: Vec<String>,
    kinds: Vec<NodeKind>,
    edges: Vec<(usize, usize)>,
    /// `(action, target)` pairs.
    interventions: Vec<(usize, usize)>,
    parents: Vec<Vec<usize>>,
}

impl CausalGraph {
    /// Builds and validates a graph from named parts.
    pub fn new(
        nodes: &[(&str, NodeKind)],
        edges: &[(&str, &str)],
        interventions: &[(&str, &str)],
    ) -> Result<Self, GraphError> {
        let mut text = String::new();
        for (n, k) in nodes {
            text.push_str(&format!("node {n} {k}\n"));
        }
        for (p, c) in edges {
            text.push_str(&format!("edge {p} -> {c}\n"));
        }
        for (a, t) in interventions {
            text.push_str(&format!("intervene {a} => {t}\n"));
        }
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut names = Vec::new();
        let mut kinds = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut interventions = Vec::new();
        let mut pending: Vec<(usize, Vec<&str>)> = Vec::new();

        for (ln, raw) in text.lines().enumerate() {
            let line = ln + 1;
            let body = raw.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = body.split_whitespace().collect();
            match toks[0] {
                "node" => {
                    if toks.len() != 3 {
                        return Err(syntax(line, "expected `node <name> <kind>`"));
                    }
                    let kind = NodeKind::parse(toks[2])
                        .ok_or_else(|| syntax(line, &format!("unknown node kind `{}`", toks[2])))?;
                    if index.contains_key(toks[1]) {
                        return Err(GraphError::DuplicateNode { line, name: toks[1].into() });
                    }
                    index.insert(toks[1].to_string(), names.len());
                    names.push(toks[1].to_string());
                    kinds.push(kind);
                }
                "edge" | "intervene" => pending.push((line, toks)),
                other => return Err(syntax(line, &format!("unknown directive `{other}`"))),
            }
        }

        // Edges may precede the node lines they mention.
        for (line, toks) in pending {
            let arrow = if toks[0] == "edge" { "->" } else { "=>" };
            if toks.len() != 4 || toks[2] != arrow {
                return Err(syntax(line, &format!("expected `{} <from> {arrow} <to>`", toks[0])));
            }
            let lookup = |name: &str| {
                index.get(name).copied().ok_or_else(|| GraphError::UndeclaredNode { line, name: name.into() })
            };
            let (from, to) = (lookup(toks[1])?, lookup(toks[3])?);
            if toks[0] == "edge" {
                if kinds[from] == NodeKind::Action || kinds[to] == NodeKind::Action {
                    let a = if kinds[from] == NodeKind::Action { from } else { to };
                    return Err(GraphError::ActionEdge(names[a].clone()));
                }
                if edges.contains(&(from, to)) {
                    return Err(GraphError::DuplicateEdge(names[from].clone(), names[to].clone()));
                }
                edges.push((from, to));
            } else {
                if kinds[from] != NodeKind::Action || kinds[to] == NodeKind::Action || from == to {
                    return Err(GraphError::InvalidIntervention(names[from].clone(), names[to].clone()));
                }
                if interventions.contains(&(from, to)) {
                    return Err(GraphError::DuplicateEdge(names[from].clone(), names[to].clone()));
                }
                interventions.push((from, to));
            }
        }

        let mut parents = vec![Vec::new(); names.len()];
        for &(p, c) in &edges {
            parents[c].push(p);
        }
        for ps in &mut parents {
            ps.sort_unstable();
        }
        let g = Self { names, kinds, edges, interventions, parents };
        g.check_acyclic()?;
        Ok(g)
    }

    fn check_acyclic(&self) -> Result<(), GraphError> {
        if self.try_order().len() == self.names.len() {
            return Ok(());
        }
        // Report one cycle by walking parents among the unordered nodes.
        let ordered: HashSet<usize> = self.try_order().into_iter().collect();
        let mut cur = (0..self.names.len()).find(|i| !ordered.contains(i)).expect("unordered node exists");
        let mut seen = Vec::new();
        while !seen.contains(&cur) {
            seen.push(cur);
            cur = *self.parents[cur]
                .iter()
                .find(|p| !ordered.contains(p))
                .expect("unordered node has an unordered parent");
        }
        let start = seen.iter().position(|&x| x == cur).expect("cycle start is on the path");
        let mut cycle: Vec<String> = seen[start..].iter().rev().map(|&i| self.names[i].clone()).collect();
        cycle.push(self.names[cur].clone());
        Err(GraphError::Cycle(cycle))
    }

    /// Kahn's algorithm with a lexicographic ready set; shorter than `n` iff cyclic.
    fn try_order(&self) -> Vec<usize> {
        let n = self.names.len();
        let mut indeg = vec![0usize; n];
        let mut children = vec![Vec::new(); n];
        for &(p, c) in self.edges.iter().chain(&self.interventions) {
            indeg[c] += 1;
            children[p].push(c);
        }
        let mut ready: BTreeSet<(&str, usize)> =
            (0..n).filter(|&i| indeg[i] == 0).map(|i| (self.names[i].as_str(), i)).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(first) = ready.pop_first() {
            order.push(first.1);
            for &c in &children[first.1] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert((self.names[c].as_str(), c));
                }
            }
        }
        order
    }

    /// Node names with every parent (and every acting action) before its children.
    pub fn topological_order(&self) -> Vec<&str> {
        self.try_order().into_iter().map(|i| self.names[i].as_str()).collect()
    }

    /// Node indices in topological order.
    pub fn topological_indices(&self) -> Vec<usize> {
        self.try_order()
    }

    pub fn parents(&self, node: &str) -> Result<Vec<&str>, GraphError> {
        let i = self.index_of(node)?;
        Ok(self.parents[i].iter().map(|&p| self.names[p].as_str()).collect())
    }

    pub fn parent_indices(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    pub fn index_of(&self, node: &str) -> Result<usize, GraphError> {
        self.names.iter().position(|n| n == node).ok_or_else(|| GraphError::UnknownNode(node.into()))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn kind(&self, i: usize) -> NodeKind {
        self.kinds[i]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges.iter().map(|&(p, c)| (self.names[p].as_str(), self.names[c].as_str()))
    }

    pub fn interventions(&self) -> impl Iterator<Item = (&str, &str)> {
        self.interventions.iter().map(|&(a, t)| (self.names[a].as_str(), self.names[t].as_str()))
    }

    pub fn action(&self) -> Option<usize> {
        self.kinds.iter().position(|&k| k == NodeKind::Action)
    }

    pub fn outcome(&self) -> Option<usize> {
        self.kinds.iter().position(|&k| k == NodeKind::Outcome)
    }

    /// True when some action intervenes directly on `node`.
    pub fn is_intervened(&self, node: usize) -> bool {
        self.interventions.iter().any(|&(_, t)| t == node)
    }

    pub fn children(&self, node: usize) -> Vec<usize> {
        self.edges.iter().filter(|&&(p, _)| p == node).map(|&(_, c)| c).collect()
    }

    /// Nodes reachable from `node` through ordinary edges, excluding `node`.
    pub fn descendants(&self, node: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            for c in self.children(v) {
                if out.insert(c) {
                    stack.push(c);
                }
            }
        }
        out
    }

    /// Intervened nodes and everything downstream of them.
    pub fn action_descendants(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &(_, t) in &self.interventions {
            out.insert(t);
            out.extend(self.descendants(t));
        }
        out
    }

    /// Splits non-action nodes into intervened, downstream-of-intervened, and the rest.
    pub fn partition(&self) -> NodePartition {
        let desc = self.action_descendants();
        let mut p = NodePartition::default();
        for i in 0..self.len() {
            if self.kinds[i] == NodeKind::Action {
                continue;
            }
            if self.is_intervened(i) {
                p.intervened.push(i);
            } else if desc.contains(&i) {
                p.downstream.push(i);
            } else {
                p.other.push(i);
            }
        }
        p
    }

    /// Renders the graph in the text format accepted by [`CausalGraph::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (n, k) in self.names.iter().zip(&self.kinds) {
            s.push_str(&format!("node {n} {k}\n"));
        }
        for (p, c) in self.edges() {
            s.push_str(&format!("edge {p} -> {c}\n"));
        }
        for (a, t) in self.interventions() {
            s.push_str(&format!("intervene {a} => {t}\n"));
        }
        s
    }
}

/// Node indices grouped by their relation to the action.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodePartition {
    pub intervened: Vec<usize>,
    pub downstream: Vec<usize>,
    pub other: Vec<usize>,
}

fn syntax(line: usize, message: &str) -> GraphError {
    GraphError::Syntax { line, message: message.into() }
}
