//! Random interval SEMs and an exhaustive corner search over their parameters.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semrobust::graph::{CausalGraph, NodeKind};
use semrobust::semcp::Batch;
use semrobust::semfit::{EquationForm, Frame, Interval, NodeBounds, Regressor, UncertaintySpec};

/// A random instance: up to three modeled nodes ending in the outcome `Y`,
/// each with up to two parents among the contexts `C0`, `C1` and earlier
/// modeled nodes. Bounds keep every node value positive for all parameters.
pub fn random_instance(seed: u64, rows: usize) -> (UncertaintySpec, Frame) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=3usize);
    let mut modeled: Vec<String> = (0..k - 1).map(|i| format!("M{i}")).collect();
    modeled.push("Y".into());
    let mut nodes: Vec<(&str, NodeKind)> = vec![("C0", NodeKind::Continuous), ("C1", NodeKind::Continuous)];
    for m in &modeled {
        nodes.push((m.as_str(), if m == "Y" { NodeKind::Outcome } else { NodeKind::Continuous }));
    }
    let mut edges = Vec::new();
    let mut parents_of = Vec::new();
    for (i, m) in modeled.iter().enumerate() {
        let mut pool: Vec<String> = vec!["C0".into(), "C1".into()];
        pool.extend(modeled[..i].iter().cloned());
        let np = rng.random_range(0..=2usize.min(pool.len()));
        let mut chosen = Vec::new();
        while chosen.len() < np {
            let p = pool[rng.random_range(0..pool.len())].clone();
            if !chosen.contains(&p) {
                chosen.push(p);
            }
        }
        for p in &chosen {
            edges.push((p.clone(), m.clone()));
        }
        parents_of.push(chosen);
    }
    let edge_refs: Vec<(&str, &str)> = edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let graph = CausalGraph::new(&nodes, &edge_refs, &[]).expect("valid random graph");

    let sub = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| {
        let a = rng.random_range(lo..hi);
        let b = rng.random_range(lo..hi);
        if rng.random_bool(0.15) {
            Interval::point(a)
        } else {
            Interval::new(a.min(b), a.max(b))
        }
    };
    let mut bounds = Vec::new();
    for (m, ps) in modeled.iter().zip(&parents_of) {
        bounds.push(NodeBounds {
            node: m.clone(),
            branch: None,
            form: EquationForm::Linear,
            shifted: true,
            intercept: sub(4.0, 5.0, &mut rng),
            coefficients: ps
                .iter()
                .map(|p| (Regressor { parent: p.clone(), level: None }, sub(-0.1, 0.5, &mut rng)))
                .collect(),
            mu: sub(-0.2, 0.2, &mut rng),
            sigma: sub(0.5, 1.5, &mut rng),
            value: Interval::new(0.0, 1e3),
            residuals: (0..30).map(|_| rng.random_range(-0.5..0.5)).collect(),
        });
    }
    let mut columns = BTreeMap::new();
    for c in ["C0", "C1"] {
        columns.insert(c.to_string(), (0..rows).map(|_| rng.random::<f64>()).collect());
    }
    (UncertaintySpec { graph, nodes: bounds }, Frame { n: rows, columns })
}

/// Parameter vector layout per node: intercept, coefficients, μ, σ.
fn evaluate(spec: &UncertaintySpec, batch: &Batch, params: &[Vec<f64>]) -> Option<f64> {
    let rows = batch.rows();
    let mut total = 0.0;
    for r in 0..rows {
        let c = batch.source[r];
        let mut vals: BTreeMap<&str, f64> = BTreeMap::new();
        for (b, p) in spec.nodes.iter().zip(params) {
            let k = b.coefficients.len();
            let mut v = p[0];
            for (j, (reg, _)) in b.coefficients.iter().enumerate() {
                let x = match vals.get(reg.parent.as_str()) {
                    Some(&x) => x,
                    None => batch.contexts.get(&reg.parent).expect("context column")[c],
                };
                v += p[1 + j] * x;
            }
            let eps = batch.draws[&(b.node.clone(), b.branch)][r];
            v += (eps + p[k + 1]) * p[k + 2];
            if v < b.value.lo - 1e-12 || v > b.value.hi + 1e-12 {
                return None;
            }
            vals.insert(b.node.as_str(), v);
        }
        total += vals["Y"];
    }
    Some(total / rows as f64)
}

/// Minimum over all interval corners, and over `interior` uniform interior points.
pub fn brute_force(spec: &UncertaintySpec, batch: &Batch, interior: usize, seed: u64) -> (f64, f64) {
    let ivs: Vec<Vec<Interval>> = spec.nodes.iter().map(|b| b.intervals()).collect();
    let flat: Vec<(usize, usize)> =
        ivs.iter().enumerate().flat_map(|(i, v)| (0..v.len()).map(move |j| (i, j))).collect();
    let mut params: Vec<Vec<f64>> = ivs.iter().map(|v| v.iter().map(|i| i.lo).collect()).collect();
    let mut corner = f64::INFINITY;
    for mask in 0u64..(1u64 << flat.len()) {
        for (bit, &(i, j)) in flat.iter().enumerate() {
            let iv = ivs[i][j];
            params[i][j] = if mask >> bit & 1 == 1 { iv.hi } else { iv.lo };
        }
        if let Some(v) = evaluate(spec, batch, &params) {
            corner = corner.min(v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inner = f64::INFINITY;
    for _ in 0..interior {
        for &(i, j) in &flat {
            let iv = ivs[i][j];
            params[i][j] = iv.lo + rng.random::<f64>() * iv.width();
        }
        if let Some(v) = evaluate(spec, batch, &params) {
            inner = inner.min(v);
        }
    }
    (corner, inner)
}
