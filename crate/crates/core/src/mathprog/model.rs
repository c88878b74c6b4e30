//! Model container for linear and mixed-integer programs.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::MathProgError;

/// Handle to a decision variable inside a [`Model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to a linear constraint inside a [`Model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConstraintId(pub(crate) usize);

impl ConstraintId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    /// Coefficients with duplicate variables already merged.
    pub terms: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    /// Evaluates the left-hand side at `values`.
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violate this constraint (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.activity(values);
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// A linear objective over model variables plus a constant offset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Objective {
    pub sense: Sense,
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

/// Decision variables, linear constraints, SOS2 groups and an objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    vars: Vec<Variable>,
    constraints: Vec<Constraint>,
    sos2: Vec<Vec<VarId>>,
    objective: Objective,
    /// Starting basis suggestions: variable made basic in place of the row's logical.
    #[serde(default)]
    basis_hints: Vec<(VarId, ConstraintId)>,
}

impl Default for Model {
    fn default() -> Self {
        Self::new(Sense::Minimize)
    }
}

impl Model {
    pub fn new(sense: Sense) -> Self {
        Self {
            vars: Vec::new(),
            constraints: Vec::new(),
            sos2: Vec::new(),
            basis_hints: Vec::new(),
            objective: Objective { sense, terms: Vec::new(), constant: 0.0 },
        }
    }

    /// Adds a continuous variable. Infinite bounds are allowed.
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> Result<VarId, MathProgError> {
        self.push_var(name.into(), lower, upper, VarKind::Continuous)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.push_var(name.into(), 0.0, 1.0, VarKind::Binary).expect("binary bounds are always valid")
    }

    fn push_var(&mut self, name: String, lower: f64, upper: f64, kind: VarKind) -> Result<VarId, MathProgError> {
        if lower.is_nan() || upper.is_nan() || lower > upper || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
            return Err(MathProgError::InvalidBounds { name, lower, upper });
        }
        if kind == VarKind::Binary && (lower < 0.0 || upper > 1.0) {
            return Err(MathProgError::InvalidBounds { name, lower, upper });
        }
        self.vars.push(Variable { name, lower, upper, kind });
        Ok(VarId(self.vars.len() - 1))
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: &[(VarId, f64)],
        relation: Relation,
        rhs: f64,
    ) -> Result<ConstraintId, MathProgError> {
        let name = name.into();
        if !rhs.is_finite() {
            return Err(MathProgError::NonFinite(format!("rhs of constraint {name}")));
        }
        let terms = self.merge_terms(terms, &name)?;
        self.constraints.push(Constraint { name, terms, relation, rhs });
        Ok(ConstraintId(self.constraints.len() - 1))
    }

    /// Declares an ordered group in which at most two adjacent members may be non-zero.
    pub fn add_sos2(&mut self, group: &[VarId]) -> Result<(), MathProgError> {
        if group.len() < 2 {
            return Err(MathProgError::InvalidSos2("group needs at least two members".into()));
        }
        for v in group {
            self.check_var(*v)?;
            if self.vars[v.0].lower < 0.0 {
                return Err(MathProgError::InvalidSos2(format!("member {} must be non-negative", self.vars[v.0].name)));
            }
        }
        self.sos2.push(group.to_vec());
        Ok(())
    }

    pub fn set_objective(&mut self, sense: Sense, terms: &[(VarId, f64)], constant: f64) -> Result<(), MathProgError> {
        let terms = self.merge_terms(terms, "objective")?;
        self.objective = Objective { sense, terms, constant };
        Ok(())
    }

    /// Tightens or relaxes the bounds of an existing variable.
    pub fn set_bounds(&mut self, var: VarId, lower: f64, upper: f64) -> Result<(), MathProgError> {
        self.check_var(var)?;
        let v = &mut self.vars[var.0];
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(MathProgError::InvalidBounds { name: v.name.clone(), lower, upper });
        }
        v.lower = lower;
        v.upper = upper;
        Ok(())
    }

    fn check_var(&self, var: VarId) -> Result<(), MathProgError> {
        if var.0 >= self.vars.len() {
            Err(MathProgError::UnknownVariable(var.0))
        } else {
            Ok(())
        }
    }

    fn merge_terms(&self, terms: &[(VarId, f64)], owner: &str) -> Result<Vec<(VarId, f64)>, MathProgError> {
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
        for &(v, c) in terms {
            self.check_var(v)?;
            if !c.is_finite() {
                return Err(MathProgError::NonFinite(format!("coefficient in {owner}")));
            }
            match merged.iter_mut().find(|(w, _)| *w == v) {
                Some(slot) => slot.1 += c,
                None => merged.push((v, c)),
            }
        }
        merged.retain(|&(_, c)| c != 0.0);
        Ok(merged)
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn var(&self, id: VarId) -> &Variable {
        &self.vars[id.0]
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Suggests starting the simplex with `var` basic in `row`.
    ///
    /// Hints only shape the starting basis; dependent hints are dropped when
    /// the basis is factorized.
    pub fn hint_basic(&mut self, var: VarId, row: ConstraintId) -> Result<(), MathProgError> {
        self.check_var(var)?;
        if row.0 >= self.constraints.len() {
            return Err(MathProgError::Precondition(format!("unknown constraint index {}", row.0)));
        }
        self.basis_hints.push((var, row));
        Ok(())
    }

    pub fn basis_hints(&self) -> &[(VarId, ConstraintId)] {
        &self.basis_hints
    }

    pub fn sos2_groups(&self) -> &[Vec<VarId>] {
        &self.sos2
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn has_integrality(&self) -> bool {
        !self.sos2.is_empty() || self.vars.iter().any(|v| v.kind == VarKind::Binary)
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(VarId)
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.constant + self.objective.terms.iter().map(|&(v, c)| c * values[v.0]).sum::<f64>()
    }

    /// Largest bound or constraint violation of `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let bounds =
            self.vars.iter().zip(values).map(|(v, &x)| (v.lower - x).max(x - v.upper).max(0.0)).fold(0.0, f64::max);
        self.constraints.iter().map(|c| c.violation(values)).fold(bounds, f64::max)
    }

    /// True when every SOS2 group has its non-zeros (above `tol`) confined to one adjacent pair.
    pub fn sos2_satisfied(&self, values: &[f64], tol: f64) -> bool {
        self.sos2.iter().all(|g| sos2_group_satisfied(g, values, tol))
    }
}

pub(crate) fn sos2_group_satisfied(group: &[VarId], values: &[f64], tol: f64) -> bool {
    let nz: Vec<usize> = group.iter().enumerate().filter(|(_, v)| values[v.0].abs() > tol).map(|(i, _)| i).collect();
    match nz.as_slice() {
        [] | [_] => true,
        [a, b] => b - a == 1,
        _ => false,
    }
}
