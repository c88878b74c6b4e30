//! Linear and mixed-integer programming.
//!
//! [`solve_lp`] runs a bounded revised simplex; [`solve_mip`] wraps it in a
//! depth-first branch-and-bound that branches on SOS2 groups and binaries.
//! [`encode`] adds piecewise-linear sigmoid and one-hot categorical gadgets.

pub mod encode;
pub mod lpformat;
mod lu;
mod mip;
pub mod model;
mod simplex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encode::{encode_categorical, encode_piecewise, encode_sigmoid, sigmoid_breakpoints, PiecewiseVars};
pub use model::{Constraint, ConstraintId, Model, Objective, Relation, Sense, VarId, VarKind, Variable};

use simplex::{LpProblem, LpStatus};

#[derive(Debug, Error)]
pub enum MathProgError {
    #[error("variable {name}: invalid bounds [{lower}, {upper}]")]
    InvalidBounds { name: String, lower: f64, upper: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid SOS2 group: {0}")]
    InvalidSos2(String),
    #[error("unknown variable index {0}")]
    UnknownVariable(usize),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("node budget of {nodes} exhausted (incumbent {incumbent:?}, gap {gap})")]
    NodeLimit {
        nodes: usize,
        incumbent: Option<f64>,
        /// Incumbent assignment, if one was found.
        values: Option<Vec<f64>>,
        gap: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of a solve. `values` and `duals` are empty unless the status is optimal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub status: Status,
    /// Objective in the model's own sense, including the constant.
    pub objective: f64,
    pub values: Vec<f64>,
    /// Row duals (LP only): change of the objective per unit increase of each rhs.
    pub duals: Vec<f64>,
    /// Objective of the dual certificate (LP only).
    pub dual_objective: Option<f64>,
    pub pivots: usize,
    pub nodes: usize,
    /// Relative gap between incumbent and best bound at termination.
    pub gap: f64,
}

impl Solution {
    fn without_point(status: Status, objective: f64, pivots: usize, nodes: usize) -> Self {
        Self {
            status,
            objective,
            values: Vec::new(),
            duals: Vec::new(),
            dual_objective: None,
            pivots,
            nodes,
            gap: f64::NAN,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn value(&self, var: VarId) -> f64 {
        self.values[var.index()]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Bound violation tolerated by the simplex internally.
    pub primal_tol: f64,
    /// Reduced-cost threshold for pricing.
    pub dual_tol: f64,
    /// Constraint violation accepted in a returned assignment.
    pub feasibility_tol: f64,
    pub integrality_tol: f64,
    pub mip_gap: f64,
    pub node_limit: usize,
    /// Pivot budget per LP; scales with problem size when absent.
    pub max_pivots: Option<usize>,
    pub refactor_interval: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            primal_tol: 1e-9,
            dual_tol: 1e-9,
            feasibility_tol: 1e-7,
            integrality_tol: 1e-6,
            mip_gap: 1e-6,
            node_limit: 100_000,
            max_pivots: None,
            refactor_interval: 50,
            bland_after: 100,
        }
    }
}

/// Solves a model without integrality restrictions.
pub fn solve_lp(model: &Model, opts: &SolverOptions) -> Result<Solution, MathProgError> {
    if model.has_integrality() {
        return Err(MathProgError::Precondition("solve_lp called on a model with binaries or SOS2 groups".into()));
    }
    let lp = LpProblem::from_model(model);
    let res = simplex::solve(&lp, &lp.lo[..lp.n], &lp.hi[..lp.n], opts)?;
    Ok(lp_solution(model, &lp, res))
}

/// Solves the LP relaxation of any model, ignoring binaries and SOS2 groups.
pub fn solve_relaxation(model: &Model, opts: &SolverOptions) -> Result<Solution, MathProgError> {
    let lp = LpProblem::from_model(model);
    let res = simplex::solve(&lp, &lp.lo[..lp.n], &lp.hi[..lp.n], opts)?;
    Ok(lp_solution(model, &lp, res))
}

/// Solves a model with binaries and SOS2 groups to optimality.
pub fn solve_mip(model: &Model, opts: &SolverOptions) -> Result<Solution, MathProgError> {
    if !model.has_integrality() {
        return solve_lp(model, opts);
    }
    mip::branch_and_bound(model, opts)
}

/// Dispatches to [`solve_lp`] or [`solve_mip`] depending on the model.
pub fn solve(model: &Model, opts: &SolverOptions) -> Result<Solution, MathProgError> {
    solve_mip(model, opts)
}

fn lp_solution(model: &Model, lp: &LpProblem, res: simplex::LpResult) -> Solution {
    match res.status {
        LpStatus::Infeasible => Solution::without_point(Status::Infeasible, f64::NAN, res.pivots, 0),
        LpStatus::Unbounded => Solution::without_point(Status::Unbounded, -lp.sign * f64::INFINITY, res.pivots, 0),
        LpStatus::Optimal => {
            let values = res.x[..lp.n].to_vec();
            let objective = model.objective_value(&values);
            let dual_min = dual_certificate(lp, &res);
            let duals = res.y.iter().map(|&y| lp.sign * y).collect();
            Solution {
                status: Status::Optimal,
                objective,
                values,
                duals,
                dual_objective: Some(lp.sign * dual_min + lp.constant),
                pivots: res.pivots,
                nodes: 0,
                gap: 0.0,
            }
        }
    }
}

/// Lagrangian dual value `sum_k d_k * bound_k` of the minimization form.
fn dual_certificate(lp: &LpProblem, res: &simplex::LpResult) -> f64 {
    let n = lp.n;
    let mut total = 0.0;
    for k in 0..n + lp.m {
        let d =
            if k < n { lp.cost[k] - lp.cols[k].iter().map(|&(r, a)| a * res.y[r]).sum::<f64>() } else { res.y[k - n] };
        let bound = if d > 0.0 { lp.lo[k] } else { lp.hi[k] };
        total += if bound.is_finite() { d * bound } else { d * res.x[k] };
    }
    total
}
