mod support;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semrobust::data::normalize_all;
use semrobust::data::synthetic::{generate_synthetic, test_potential_outcomes, Split};
use semrobust::fixtures::bundled_graph;
use semrobust::graph::CausalGraph;
use semrobust::semcp::{
    build_evaluation_program, extract_worst_case_model, learn_policy, policy_features, pooled_frame, solve_program,
    solve_worst_case, Batch, Policy, PolicyKind, ProgramConfig, Semcp,
};
use semrobust::semfit::{simulate, EquationForm, Frame, Interval, NodeBounds, NoiseMode, Regressor, UncertaintySpec};
use support::avm::{brute_force, random_instance};

fn well() -> CausalGraph {
    bundled_graph("synthetic_well").unwrap().unwrap()
}

fn shifted() -> BTreeSet<String> {
    ["X0", "X2", "Y"].iter().map(|s| s.to_string()).collect()
}

fn synthetic_semcp(seed: u64, rows: usize) -> (Semcp, Vec<semrobust::data::BanditDataset>) {
    let raw = generate_synthetic(rows, Split::Train, seed);
    let (train, _, _) = normalize_all(&raw, &[]).unwrap();
    let s = Semcp::new(&train, &well(), &shifted(), ProgramConfig { seed, ..Default::default() }).unwrap();
    (s, train)
}

#[test]
fn linearized_program_matches_corner_search() {
    for seed in 0..20 {
        let (spec, pool) = random_instance(seed, 20);
        let cfg = ProgramConfig { contexts: 10, seed, ..Default::default() };
        let batch = Batch::sample(&pool, &spec, &cfg);
        let policy = Policy::uniform(1, vec![]);
        let program = build_evaluation_program(&batch, &spec, &policy, &cfg).unwrap();
        let res = solve_program(&program, &spec, &batch, &cfg).unwrap();
        let (corner, interior) = brute_force(&spec, &batch, 300, seed);
        assert!((res.objective - corner).abs() <= 1e-5, "seed {seed}: {} vs {corner}", res.objective);
        assert!(interior >= corner - 1e-9, "seed {seed}: interior point below every corner");
    }
}

#[test]
fn worst_case_lands_near_the_worst_test_environment() {
    let (s, _) = synthetic_semcp(0, 3000);
    let wc = s.worst_case().unwrap();
    for p in &wc.parameters {
        let b = s.fit.spec.get(&p.node, p.branch).unwrap();
        for (v, iv) in p.vector().iter().zip(b.intervals()) {
            assert!(iv.contains(*v, 1e-9), "{} {:?}: {v} outside {iv:?}", p.node, p.branch);
        }
    }
    let y = s.fit.spec.get("Y", None).unwrap();
    for &(v, _) in &wc.outcome_values {
        assert!(v >= -1e-9 && v <= y.value.hi + 1e-9);
    }
    let est = wc.objective_original.unwrap();
    let worst = test_potential_outcomes(20000, 0)
        .iter()
        .map(|po| po.policy_value(|_| vec![1.0 / 3.0; 3]))
        .fold(f64::INFINITY, f64::min);
    let nominal_train = s.reward.invert(s.pool.get("Y").unwrap().iter().sum::<f64>() / s.pool.n as f64);
    assert!(est <= nominal_train, "{est} above the training mean {nominal_train}");
    assert!(((est - worst) / worst).abs() < 0.1, "{est} vs worst test return {worst}");
}

#[test]
fn widening_an_interval_never_raises_the_worst_case() {
    let (s, _) = synthetic_semcp(1, 1000);
    let uniform = Policy::uniform(3, policy_features(&s.fit.spec.graph));
    let cfg = ProgramConfig { contexts: 200, seed: 1, ..Default::default() };
    let base = solve_worst_case(&s.fit.spec, &s.pool, &uniform, &cfg, None).unwrap();
    let mut wide = s.fit.spec.clone();
    let iv = wide.get_mut("Y", None).unwrap().coefficient_mut("X2").unwrap();
    *iv = iv.widened(10.0);
    let widened = solve_worst_case(&wide, &s.pool, &uniform, &cfg, None).unwrap();
    assert!(widened.objective <= base.objective + 1e-9, "{} > {}", widened.objective, base.objective);
}

#[test]
fn degenerate_spec_reproduces_nominal_simulation() {
    let (s, _) = synthetic_semcp(2, 1000);
    let mut spec = s.fit.spec.clone();
    for b in &mut spec.nodes {
        let mid = |i: Interval| Interval::point(0.5 * (i.lo + i.hi));
        b.intercept = mid(b.intercept);
        for (_, c) in &mut b.coefficients {
            *c = mid(*c);
        }
        b.mu = mid(b.mu);
        b.sigma = mid(b.sigma);
    }
    let uniform = Policy::uniform(3, policy_features(&spec.graph));
    let cfg = ProgramConfig { seed: 2, ..Default::default() };
    let res = solve_worst_case(&spec, &s.pool, &uniform, &cfg, None).unwrap();
    let rows = res.diagnostics.draw_rows as f64;
    let per_row: Vec<f64> = res.outcome_values.chunks(3).map(|c| c.iter().map(|(v, w)| v * w).sum()).collect();
    let prog_se = std_err(&per_row);
    assert!((per_row.iter().sum::<f64>() / rows - res.objective).abs() < 1e-9);

    let nominal = spec.midpoint_model("nominal");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let reps = 20;
    let mut sims = Vec::new();
    for a in 0..3 {
        for _ in 0..reps {
            let out = simulate(&nominal, &s.pool, &vec![a; s.pool.n], NoiseMode::Resample, &mut rng).unwrap();
            sims.extend_from_slice(out.get("Y").unwrap());
        }
    }
    let sim_mean = sims.iter().sum::<f64>() / sims.len() as f64;
    let sim_se = std_err(&sims);
    let tol = 3.0 * (prog_se * prog_se + sim_se * sim_se).sqrt();
    assert!((res.objective - sim_mean).abs() <= tol, "{} vs {sim_mean} (tol {tol})", res.objective);
}

fn std_err(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
}

/// Two-branch spec whose node values stay far from their bounds.
fn slack_branch_spec() -> (UncertaintySpec, Frame) {
    let g = CausalGraph::parse(
        "node X0 cont\nnode X1 cont\nnode X2 cont\nnode A action\nnode Y outcome\n\
         edge X0 -> X2\nedge X1 -> X2\nedge X2 -> Y\nedge X0 -> Y\nintervene A => X2\n",
    )
    .unwrap();
    let reg = |p: &str| Regressor { parent: p.into(), level: None };
    let node = |name: &str, branch, intercept, coefs: Vec<(&str, Interval)>| NodeBounds {
        node: name.into(),
        branch,
        form: EquationForm::Linear,
        shifted: true,
        intercept,
        coefficients: coefs.into_iter().map(|(p, i)| (reg(p), i)).collect(),
        mu: Interval::new(-0.05, 0.05),
        sigma: Interval::new(0.8, 1.2),
        value: Interval::new(0.0, 100.0),
        residuals: vec![-0.3, -0.1, 0.0, 0.2, 0.2],
    };
    let spec = UncertaintySpec {
        graph: g,
        nodes: vec![
            node(
                "X2",
                Some(0),
                Interval::new(2.0, 2.5),
                vec![("X0", Interval::new(0.5, 1.5)), ("X1", Interval::new(-0.2, 0.4))],
            ),
            node(
                "X2",
                Some(1),
                Interval::new(1.5, 3.0),
                vec![("X0", Interval::new(-0.5, 0.2)), ("X1", Interval::new(1.0, 2.0))],
            ),
            node(
                "Y",
                None,
                Interval::new(1.0, 1.2),
                vec![("X2", Interval::new(0.8, 1.1)), ("X0", Interval::new(-0.3, 0.3))],
            ),
        ],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut columns = std::collections::BTreeMap::new();
    for c in ["X0", "X1"] {
        columns.insert(c.to_string(), (0..300).map(|_| rand::Rng::random::<f64>(&mut rng)).collect());
    }
    (spec, Frame { n: 300, columns })
}

#[test]
fn worst_case_does_not_depend_on_the_evaluated_policy() {
    let (spec, pool) = slack_branch_spec();
    let cfg = ProgramConfig { contexts: 150, seed: 3, ..Default::default() };
    let features = policy_features(&spec.graph);
    let uniform = Policy::uniform(2, features.clone());
    let base = solve_worst_case(&spec, &pool, &uniform, &cfg, None).unwrap();
    let learned = learn_policy(&extract_worst_case_model(&base, &spec.midpoint_model("n")), &pool).unwrap();
    let soft = Policy {
        kind: PolicyKind::SoftmaxLinear { weights: vec![vec![2.0, -1.0], vec![-1.0, 3.0]], bias: vec![0.0, 0.5] },
        num_actions: 2,
        features,
    };
    for other in [&learned, &soft] {
        let res = solve_worst_case(&spec, &pool, other, &cfg, None).unwrap();
        for p in &res.parameters {
            let q = base.params(&p.node, p.branch).unwrap();
            for (x, y) in p.vector().iter().zip(q.vector()) {
                assert!((x - y).abs() <= 1e-5, "{} {:?}: {p:?} vs {q:?}", p.node, p.branch);
            }
        }
    }
}

#[test]
fn learned_policy_is_the_worst_case_argmax() {
    let (s, _) = synthetic_semcp(4, 1000);
    let policy = s.learn().unwrap();
    let wc = s.worst_case_model().unwrap();
    let values = semrobust::semcp::action_values(&wc, &s.pool, 3).unwrap();
    for (r, v) in values.iter().enumerate().take(1000) {
        let x = s.pool.row(&policy.features, r);
        assert_eq!(semrobust::semcp::argmax(&policy.probs(&x)), semrobust::semcp::argmax(v), "row {r}");
    }
    let again = s.learn().unwrap();
    assert_eq!(again, policy);
}

#[test]
fn pooled_frame_concatenates_environments() {
    let raw = generate_synthetic(50, Split::Train, 0);
    let f = pooled_frame(&raw);
    assert_eq!(f.n, 150);
    assert_eq!(f.get("X0").unwrap()[50], raw[1].values[0][0]);
    assert_eq!(f.get("Y").unwrap().len(), 150);
}
