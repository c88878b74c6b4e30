//! Dense vertex enumeration and exhaustive integer enumeration.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semrobust::mathprog::{Model, Relation, Sense, VarId, VarKind};

/// A hyperplane `a . x = b` that may be active at a vertex.
struct Plane {
    a: Vec<f64>,
    b: f64,
    mandatory: bool,
}

/// Optimal objective over a model with finite bounds, ignoring integrality, or `None` if infeasible.
///
/// `fixed_zero` lists extra variables pinned to zero.
pub fn vertex_enumeration(model: &Model, fixed_zero: &[usize], fixed: &[(usize, f64)]) -> Option<f64> {
    let n = model.num_vars();
    let mut lo: Vec<f64> = model.vars().iter().map(|v| v.lower).collect();
    let mut hi: Vec<f64> = model.vars().iter().map(|v| v.upper).collect();
    for &j in fixed_zero {
        lo[j] = lo[j].max(0.0);
        hi[j] = hi[j].min(0.0);
    }
    for &(j, v) in fixed {
        lo[j] = lo[j].max(v);
        hi[j] = hi[j].min(v);
    }
    if (0..n).any(|j| lo[j] > hi[j] + 1e-12) {
        return None;
    }
    let mut planes = Vec::new();
    for c in model.constraints() {
        let mut a = vec![0.0; n];
        for &(v, coef) in &c.terms {
            a[v.index()] = coef;
        }
        // Empty rows constrain nothing geometrically; feasibility is checked per point.
        if a.iter().any(|&v| v != 0.0) {
            planes.push(Plane { a, b: c.rhs, mandatory: c.relation == Relation::Eq });
        }
    }
    for j in 0..n {
        assert!(lo[j].is_finite() && hi[j].is_finite(), "oracle needs finite bounds");
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push(Plane { a: e.clone(), b: lo[j], mandatory: lo[j] == hi[j] });
        if lo[j] != hi[j] {
            planes.push(Plane { a: e, b: hi[j], mandatory: false });
        }
    }
    let mandatory: Vec<usize> = (0..planes.len()).filter(|&i| planes[i].mandatory).collect();
    let optional: Vec<usize> = (0..planes.len()).filter(|&i| !planes[i].mandatory).collect();
    let sign = if model.objective().sense == Sense::Minimize { 1.0 } else { -1.0 };
    let mut best: Option<f64> = None;

    let feasible = |x: &[f64]| {
        let tol = 1e-9;
        (0..n).all(|j| x[j] >= lo[j] - tol && x[j] <= hi[j] + tol)
            && model.constraints().iter().all(|c| c.violation(x) <= tol * (1.0 + c.rhs.abs()))
    };

    let need = n.saturating_sub(mandatory.len().min(n));
    let mut pick = Vec::new();
    let mut visit = |chosen: &[usize]| {
        let rows: Vec<usize> = mandatory.iter().copied().chain(chosen.iter().copied()).collect();
        let a = DMatrix::from_fn(rows.len(), n, |r, c| planes[rows[r]].a[c]);
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|&r| planes[r].b));
        let x = if rows.len() == n {
            let lu = a.clone().full_piv_lu();
            if lu.u().diagonal().amin() < 1e-10 {
                return;
            }
            match lu.solve(&b) {
                Some(x) => x,
                None => return,
            }
        } else {
            // Redundant mandatory rows: least squares, then check consistency below.
            let svd = a.clone().svd(true, true);
            if svd.rank(1e-9) < n {
                return;
            }
            match svd.solve(&b, 1e-12) {
                Ok(x) => x,
                Err(_) => return,
            }
        };
        let x: Vec<f64> = x.iter().copied().collect();
        if (&a * DVector::from_vec(x.clone()) - &b).amax() > 1e-8 {
            return;
        }
        if feasible(&x) {
            let val = sign * model.objective_value(&x);
            if best.is_none_or(|b| val < b) {
                best = Some(val);
            }
        }
    };
    if mandatory.len() >= n {
        visit(&[]);
    } else {
        combinations(&optional, need, 0, &mut pick, &mut visit);
    }
    best.map(|b| sign * b)
}

fn combinations(items: &[usize], k: usize, start: usize, pick: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if pick.len() == k {
        f(pick);
        return;
    }
    for i in start..items.len() {
        if items.len() - i < k - pick.len() {
            break;
        }
        pick.push(items[i]);
        combinations(items, k, i + 1, pick, f);
        pick.pop();
    }
}

/// Random bounded LP that is feasible by construction: rows are built around an interior point.
pub fn random_lp(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let m = rng.random_range(0..=8);
    let sense = if rng.random_bool(0.5) { Sense::Minimize } else { Sense::Maximize };
    let mut model = Model::new(sense);
    let mut x0 = Vec::new();
    let vars: Vec<VarId> = (0..n)
        .map(|j| {
            let lo = rng.random_range(-5.0..2.0f64).round();
            let hi = lo + rng.random_range(0.5..6.0f64);
            x0.push(rng.random_range(lo..=hi));
            model.add_var(format!("x{j}"), lo, hi).unwrap()
        })
        .collect();
    for r in 0..m {
        let mut terms: Vec<(VarId, f64)> = Vec::new();
        for &v in &vars {
            if rng.random_bool(0.7) {
                terms.push((v, rng.random_range(-3.0..3.0f64)));
            }
        }
        let act: f64 = terms.iter().map(|&(v, c)| c * x0[v.index()]).sum();
        let (rel, rhs) = match rng.random_range(0..10) {
            0 => (Relation::Eq, act),
            1..=5 => (Relation::Le, act + rng.random_range(0.0..2.0)),
            _ => (Relation::Ge, act - rng.random_range(0.0..2.0)),
        };
        model.add_constraint(format!("r{r}"), &terms, rel, rhs).unwrap();
    }
    let obj: Vec<(VarId, f64)> = vars.iter().map(|&v| (v, rng.random_range(-2.0..2.0f64))).collect();
    model.set_objective(sense, &obj, rng.random_range(-1.0..1.0)).unwrap();
    model
}

/// Random model with up to four binaries and an optional four-member SOS2 group.
/// Not necessarily feasible.
pub fn random_mip(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sense = if rng.random_bool(0.5) { Sense::Minimize } else { Sense::Maximize };
    let mut model = Model::new(sense);
    let mut vars = Vec::new();
    let nb = rng.random_range(1..=4);
    for j in 0..nb {
        vars.push(model.add_binary(format!("b{j}")));
    }
    let nc = rng.random_range(1..=3);
    for j in 0..nc {
        let lo = rng.random_range(-2.0..1.0f64).round();
        vars.push(model.add_var(format!("x{j}"), lo, lo + rng.random_range(1.0..4.0)).unwrap());
    }
    if rng.random_bool(0.8) {
        let lambdas: Vec<VarId> = (0..4).map(|i| model.add_var(format!("l{i}"), 0.0, 1.0).unwrap()).collect();
        let ones: Vec<_> = lambdas.iter().map(|&l| (l, 1.0)).collect();
        model.add_constraint("convex", &ones, Relation::Eq, 1.0).unwrap();
        // Tie the group to a continuous variable like a piecewise-linear input.
        let xs = [-2.0, -0.5, 0.5, 2.0];
        let mut link: Vec<_> = lambdas.iter().zip(xs).map(|(&l, x)| (l, x)).collect();
        link.push((vars[nb], -1.0));
        model.add_constraint("link", &link, Relation::Le, rng.random_range(0.0..1.5)).unwrap();
        model.add_sos2(&lambdas).unwrap();
        vars.extend(lambdas);
    }
    let m = rng.random_range(1..=4);
    for r in 0..m {
        let mut terms: Vec<(VarId, f64)> = Vec::new();
        for &v in &vars {
            if rng.random_bool(0.6) {
                terms.push((v, rng.random_range(-3.0..3.0f64)));
            }
        }
        let rel = if rng.random_bool(0.5) { Relation::Le } else { Relation::Ge };
        model.add_constraint(format!("r{r}"), &terms, rel, rng.random_range(-2.0..2.0)).unwrap();
    }
    let obj: Vec<(VarId, f64)> = vars.iter().map(|&v| (v, rng.random_range(-2.0..2.0f64))).collect();
    model.set_objective(sense, &obj, 0.0).unwrap();
    model
}

/// Exhaustive optimum over binary patterns and SOS2 adjacent pairs, with vertex enumeration per case.
pub fn mip_enumeration(model: &Model) -> Option<f64> {
    let bins: Vec<usize> = (0..model.num_vars()).filter(|&j| model.vars()[j].kind == VarKind::Binary).collect();
    let groups: Vec<Vec<usize>> = model.sos2_groups().iter().map(|g| g.iter().map(|v| v.index()).collect()).collect();
    assert!(groups.len() <= 1, "oracle handles at most one SOS2 group");
    let pairs: Vec<Vec<usize>> = match groups.first() {
        None => vec![Vec::new()],
        Some(g) => (0..g.len() - 1)
            .map(|k| g.iter().enumerate().filter(|&(i, _)| i != k && i != k + 1).map(|(_, &j)| j).collect())
            .collect(),
    };
    let maximize = model.objective().sense == Sense::Maximize;
    let mut best: Option<f64> = None;
    for pattern in 0..(1usize << bins.len()) {
        let fixed: Vec<(usize, f64)> =
            bins.iter().enumerate().map(|(i, &j)| (j, ((pattern >> i) & 1) as f64)).collect();
        for zeros in &pairs {
            if let Some(v) = vertex_enumeration(model, zeros, &fixed) {
                let better = match best {
                    None => true,
                    Some(b) => (maximize && v > b) || (!maximize && v < b),
                };
                if better {
                    best = Some(v);
                }
            }
        }
    }
    best
}
