//! Depth-first branch-and-bound over binaries and SOS2 groups.

use log::debug;

use super::model::{sos2_group_satisfied, Model, VarKind};
use super::simplex::{self, LpProblem, LpStatus};
use super::{MathProgError, Solution, SolverOptions, Status};

struct Node {
    /// Bound tightenings `(var, lower, upper)` accumulated from the root.
    changes: Vec<(usize, f64, f64)>,
    /// LP bound of the parent, in minimization form.
    bound: f64,
}

enum Branch {
    Sos2 { group: usize, split: usize, left_first: bool },
    Binary { var: usize, up_first: bool },
}

pub(crate) fn branch_and_bound(model: &Model, opts: &SolverOptions) -> Result<Solution, MathProgError> {
    let lp = LpProblem::from_model(model);
    let n = lp.n;
    let binaries: Vec<usize> =
        model.vars().iter().enumerate().filter(|(_, v)| v.kind == VarKind::Binary).map(|(i, _)| i).collect();
    let groups: Vec<Vec<usize>> = model.sos2_groups().iter().map(|g| g.iter().map(|v| v.index()).collect()).collect();

    let mut stack = vec![Node { changes: Vec::new(), bound: f64::NEG_INFINITY }];
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut nodes = 0usize;
    let mut pivots = 0usize;
    let mut pruned_bound = f64::INFINITY;
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];

    while let Some(node) = stack.pop() {
        let cutoff = incumbent.as_ref().map_or(f64::INFINITY, |(v, _)| cutoff(*v, opts.mip_gap));
        if node.bound >= cutoff {
            pruned_bound = pruned_bound.min(node.bound);
            continue;
        }
        if nodes >= opts.node_limit {
            let open = stack.iter().map(|nd| nd.bound).fold(node.bound, f64::min);
            let (inc, values) = match incumbent {
                Some((v, x)) => (Some(lp.sign * v + lp.constant), Some(x)),
                None => (None, None),
            };
            let gap = inc.map_or(f64::INFINITY, |v| relative_gap(lp.sign * (v - lp.constant), open));
            return Err(MathProgError::NodeLimit { nodes, incumbent: inc, values, gap });
        }
        nodes += 1;

        lo.copy_from_slice(&lp.lo[..n]);
        hi.copy_from_slice(&lp.hi[..n]);
        for &(j, l, h) in &node.changes {
            lo[j] = lo[j].max(l);
            hi[j] = hi[j].min(h);
        }
        let res = simplex::solve(&lp, &lo, &hi, opts)?;
        pivots += res.pivots;
        match res.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                let mut s = Solution::without_point(Status::Unbounded, -lp.sign * f64::INFINITY, pivots, nodes);
                s.gap = f64::NAN;
                return Ok(s);
            }
            LpStatus::Optimal => {}
        }
        let obj = res.min_objective;
        if obj >= cutoff {
            pruned_bound = pruned_bound.min(obj);
            continue;
        }
        let x = &res.x[..n];
        match choose_branch(x, &binaries, &groups, opts) {
            None => {
                debug!("incumbent {obj} at node {nodes}");
                incumbent = Some((obj, x.to_vec()));
            }
            Some(Branch::Binary { var, up_first }) => {
                let down = child(&node.changes, &[(var, 0.0, 0.0)], obj);
                let up = child(&node.changes, &[(var, 1.0, 1.0)], obj);
                if up_first {
                    stack.push(down);
                    stack.push(up);
                } else {
                    stack.push(up);
                    stack.push(down);
                }
            }
            Some(Branch::Sos2 { group, split, left_first }) => {
                let g = &groups[group];
                let zero_right: Vec<_> = g[split + 1..].iter().map(|&j| (j, 0.0, 0.0)).collect();
                let zero_left: Vec<_> = g[..split].iter().map(|&j| (j, 0.0, 0.0)).collect();
                let left = child(&node.changes, &zero_right, obj);
                let right = child(&node.changes, &zero_left, obj);
                if left_first {
                    stack.push(right);
                    stack.push(left);
                } else {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
    }

    match incumbent {
        None => Ok(Solution::without_point(Status::Infeasible, f64::NAN, pivots, nodes)),
        Some((obj, values)) => {
            let objective = model.objective_value(&values);
            Ok(Solution {
                status: Status::Optimal,
                objective,
                values,
                duals: Vec::new(),
                dual_objective: None,
                pivots,
                nodes,
                gap: relative_gap(obj, pruned_bound),
            })
        }
    }
}

fn cutoff(incumbent: f64, gap: f64) -> f64 {
    incumbent - gap * incumbent.abs().max(1.0)
}

fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    if bound >= incumbent {
        0.0
    } else {
        (incumbent - bound) / incumbent.abs().max(1.0)
    }
}

fn child(base: &[(usize, f64, f64)], extra: &[(usize, f64, f64)], bound: f64) -> Node {
    let mut changes = Vec::with_capacity(base.len() + extra.len());
    changes.extend_from_slice(base);
    changes.extend_from_slice(extra);
    Node { changes, bound }
}

/// Picks the first violated SOS2 group, otherwise the most fractional binary.
fn choose_branch(x: &[f64], binaries: &[usize], groups: &[Vec<usize>], opts: &SolverOptions) -> Option<Branch> {
    let tol = opts.feasibility_tol;
    for (gi, g) in groups.iter().enumerate() {
        let ids: Vec<_> = g.iter().map(|&j| super::VarId(j)).collect();
        if sos2_group_satisfied(&ids, x, tol) {
            continue;
        }
        let nz: Vec<usize> = (0..g.len()).filter(|&i| x[g[i]].abs() > tol).collect();
        let first = nz[0];
        let last = *nz.last().expect("violated group has non-zeros");
        let weight: f64 = nz.iter().map(|&i| x[g[i]]).sum();
        let mean = nz.iter().map(|&i| i as f64 * x[g[i]]).sum::<f64>() / weight;
        let split = (mean.round() as usize).clamp(first + 1, last - 1);
        let left_mass: f64 = (0..=split).map(|i| x[g[i]]).sum();
        let right_mass: f64 = (split..g.len()).map(|i| x[g[i]]).sum();
        return Some(Branch::Sos2 { group: gi, split, left_first: left_mass >= right_mass });
    }
    let mut best: Option<(usize, f64)> = None;
    for &j in binaries {
        let frac = x[j] - x[j].floor();
        let dist = frac.min(1.0 - frac);
        if dist > opts.integrality_tol && best.is_none_or(|(_, d)| dist > d) {
            best = Some((j, dist));
        }
    }
    best.map(|(var, _)| Branch::Binary { var, up_first: x[var] >= 0.5 })
}
