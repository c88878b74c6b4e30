//! End-to-end acceptance checks, one test per criterion.
//!
//! Every test writes a `criterion N: PASS|FAIL ...` line straight to stderr,
//! so the verdicts stay visible when the harness captures test output.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semrobust::baselines::kl_radius;
use semrobust::data::normalize_all;
use semrobust::data::synthetic::{environments, generate_synthetic, Split};
use semrobust::data::voting::{parse_voting, VotingConfig};
use semrobust::fixtures::{bundled_graph, VOTING_FIXTURE};
use semrobust::mathprog::{encode_sigmoid, solve_lp, solve_mip, Model, Sense, SolverOptions, Status};
use semrobust::semcp::{argmax, build_evaluation_program, solve_program, Batch, Policy, ProgramConfig, Semcp};
use semrobust::semfit::{EquationForm, StructuralModel};
use semrobust::shiftdetect::{build_indicator, ci_test, detect_shifts, ShiftConfig};
use semrobust_cli::config::{ExperimentConfig, Method};
use semrobust_cli::report::REFERENCE;
use semrobust_cli::{run_evaluation, run_learning, ResultTable};
use support::avm::{brute_force, random_instance};
use support::lp::{mip_enumeration, random_lp, random_mip, vertex_enumeration};

const AVM_INSTANCES: u64 = 100;
const AVM_ROWS: usize = 20;
const AVM_TOL: f64 = 1e-5;
const AVM_BUDGET: Duration = Duration::from_secs(120);

const SIGMOID_TOL: f64 = 1e-12;
const SIGMOID_BUDGET: Duration = Duration::from_secs(1);

const LP_INSTANCES: u64 = 100;
const LP_TOL: f64 = 1e-6;
const MIP_INSTANCES: u64 = 50;
const MIP_TOL: f64 = 1e-9;
const SOLVER_BUDGET: Duration = Duration::from_secs(300);

const SHIFT_SEEDS: u64 = 10;
const SHIFT_ROWS: usize = 1000;
const SHIFT_INCLUDE_MIN: usize = 9;
const SHIFT_EXCLUDE_MIN: usize = 8;
const NULL_REPS: u64 = 200;
const NULL_LEVEL: f64 = 0.05;
const NULL_BAND: f64 = 0.03;
const SHIFT_BUDGET: Duration = Duration::from_secs(600);

const EVAL_ROWS: usize = 3000;
const EVAL_TRIALS: usize = 10;
const EVAL_REL_ERR: f64 = 0.10;
const EVAL_BUDGET: Duration = Duration::from_secs(900);

const INVARIANCE_TOL: f64 = 1e-5;

const ARGMAX_CONTEXTS: usize = 1000;
const LEARN_TRIALS: usize = 10;

const KL_LO: f64 = 1.7;
const KL_HI: f64 = 2.8;
const KL_SEEDS: u64 = 10;

const VOTING_ROWS: usize = 20;

fn verdict(criterion: u32, pass: bool, detail: &str) {
    let line = format!("criterion {criterion}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn criterion_1_linearized_program_is_exact() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut below_interior = 0;
    for seed in 0..AVM_INSTANCES {
        let (spec, pool) = random_instance(seed, AVM_ROWS);
        let cfg = ProgramConfig { contexts: AVM_ROWS / 2, seed, ..Default::default() };
        let batch = Batch::sample(&pool, &spec, &cfg);
        let program = build_evaluation_program(&batch, &spec, &Policy::uniform(1, vec![]), &cfg).unwrap();
        let res = solve_program(&program, &spec, &batch, &cfg).unwrap();
        let (corner, interior) = brute_force(&spec, &batch, 300, seed);
        worst = worst.max((res.objective - corner).abs());
        if interior < corner - 1e-9 {
            below_interior += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        worst <= AVM_TOL && below_interior == 0 && elapsed < AVM_BUDGET,
        &format!("max |program - grid| = {worst:.2e} over {AVM_INSTANCES} instances, {below_interior} interior points below the corners, {elapsed:.1?}"),
    );
}

#[test]
fn criterion_2_sigmoid_breakpoints() {
    let start = Instant::now();
    let opts = SolverOptions::default();
    let mut worst = 0.0f64;
    for (x, expected) in [(-2.0, 0.2), (3.0, 0.95), (-3.0, 0.05)] {
        for sense in [Sense::Minimize, Sense::Maximize] {
            let mut m = Model::new(sense);
            let inp = m.add_var("in", x, x).unwrap();
            let out = m.add_var("out", -1.0, 2.0).unwrap();
            encode_sigmoid(&mut m, "sig", inp, out, -30.0, 30.0).unwrap();
            m.set_objective(sense, &[(out, 1.0)], 0.0).unwrap();
            let s = solve_mip(&m, &opts).unwrap();
            worst = worst.max((s.value(out) - expected).abs());
        }
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        worst <= SIGMOID_TOL && elapsed < SIGMOID_BUDGET,
        &format!("max deviation {worst:.1e} at inputs -2, 3, -3, {elapsed:.1?}"),
    );
}

#[test]
fn criterion_3_solver_matches_enumeration() {
    let start = Instant::now();
    let opts = SolverOptions::default();
    let mut lp_worst = 0.0f64;
    let mut lp_bad = 0;
    for seed in 0..LP_INSTANCES {
        let model = random_lp(seed);
        let expected = vertex_enumeration(&model, &[], &[]).expect("feasible by construction");
        let sol = solve_lp(&model, &opts).unwrap();
        if sol.status != Status::Optimal {
            lp_bad += 1;
            continue;
        }
        lp_worst = lp_worst.max((sol.objective - expected).abs());
    }
    let mut mip_worst = 0.0f64;
    let mut mip_bad = 0;
    for seed in 0..MIP_INSTANCES {
        let model = random_mip(1000 + seed);
        let sol = solve_mip(&model, &opts).unwrap();
        match mip_enumeration(&model) {
            None if sol.status == Status::Infeasible => {}
            Some(v) if sol.status == Status::Optimal => mip_worst = mip_worst.max((sol.objective - v).abs()),
            _ => mip_bad += 1,
        }
    }
    let elapsed = start.elapsed();
    verdict(
        3,
        lp_bad == 0 && lp_worst <= LP_TOL && mip_bad == 0 && mip_worst <= MIP_TOL && elapsed < SOLVER_BUDGET,
        &format!(
            "LP max error {lp_worst:.1e} ({lp_bad} status mismatches), MIP max error {mip_worst:.1e} ({mip_bad} status mismatches), {elapsed:.1?}"
        ),
    );
}

#[test]
fn criterion_4_shift_detection_and_null_calibration() {
    let start = Instant::now();
    let g = bundled_graph("synthetic_well").unwrap().unwrap();
    let must: BTreeSet<String> = names(&["X0", "X2", "Y"]).into_iter().collect();
    let (mut included, mut excluded) = (0, 0);
    for seed in 0..SHIFT_SEEDS {
        let raw = generate_synthetic(SHIFT_ROWS, Split::Train, seed);
        let (train, _, _) = normalize_all(&raw, &[]).unwrap();
        let summary = detect_shifts(&train, &g, &ShiftConfig { seed, ..Default::default() }).unwrap();
        included += usize::from(must.is_subset(&summary.shifted));
        excluded += usize::from(!summary.shifted.contains("X1"));
    }

    // Two samples of the same environment: Y given its parents is never shifted.
    let env = &environments(Split::Train)[0];
    let cfg = ShiftConfig::default();
    let mut rejections = 0;
    for rep in 0..NULL_REPS {
        let mut rng = ChaCha8Rng::seed_from_u64(50_000 + rep);
        let d0 = env.sample(SHIFT_ROWS, &mut rng);
        let d1 = env.sample(SHIFT_ROWS, &mut rng);
        let (pooled, b) = build_indicator(&d0, &d1).unwrap();
        let col = |n: &str| pooled.variable(n).unwrap().to_vec();
        let p = ci_test(&col("Y"), &b, &[col("X0"), col("X1"), col("X2")], &cfg, rep).unwrap();
        rejections += usize::from(p < NULL_LEVEL);
    }
    let rate = rejections as f64 / NULL_REPS as f64;
    let elapsed = start.elapsed();
    verdict(
        4,
        included >= SHIFT_INCLUDE_MIN
            && excluded >= SHIFT_EXCLUDE_MIN
            && (rate - NULL_LEVEL).abs() <= NULL_BAND
            && elapsed < SHIFT_BUDGET,
        &format!(
            "{{X0,X2,Y}} found in {included}/{SHIFT_SEEDS} seeds, X1 excluded in {excluded}/{SHIFT_SEEDS}, null rejection rate {rate:.3} over {NULL_REPS}, {elapsed:.1?}"
        ),
    );
}

struct MethodMeans {
    normalized: BTreeMap<String, f64>,
    original: BTreeMap<String, f64>,
}

fn means(table: &ResultTable) -> MethodMeans {
    let mut normalized = BTreeMap::new();
    let mut original = BTreeMap::new();
    let methods: BTreeSet<&str> = table.rows.iter().map(|r| r.method.as_str()).collect();
    for m in methods {
        let rows: Vec<_> = table.rows.iter().filter(|r| r.method == m).collect();
        assert!(rows.iter().all(|r| r.error.is_none()), "{m} failed: {:?}", rows[0].error);
        normalized.insert(m.to_string(), mean(&rows.iter().map(|r| r.value.unwrap()).collect::<Vec<_>>()));
        original.insert(m.to_string(), mean(&rows.iter().map(|r| r.value_original.unwrap()).collect::<Vec<_>>()));
    }
    MethodMeans { normalized, original }
}

fn evaluation_config() -> ExperimentConfig {
    ExperimentConfig { rows: EVAL_ROWS, trials: EVAL_TRIALS, ..Default::default() }
}

/// Well-specified synthetic evaluation shared by the accuracy and mis-specification checks.
fn well_specified() -> &'static (MethodMeans, Duration) {
    static RUN: OnceLock<(MethodMeans, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let table = run_evaluation(&evaluation_config()).unwrap();
        (means(&table), start.elapsed())
    })
}

#[test]
fn criterion_5_evaluation_accuracy_and_ordering() {
    let (m, elapsed) = well_specified();
    let (o, n) = (&m.original, &m.normalized);
    let rel_original = ((o["semcp"] - o[REFERENCE]) / o[REFERENCE]).abs();
    let rel_normalized = ((n["semcp"] - n[REFERENCE]) / n[REFERENCE]).abs();
    let dro_negative = n["dro"] < 0.0;
    let ordered = n["dro"] < n["fdro"] && n["fdro"] < n["semcp"];
    verdict(
        5,
        rel_original < EVAL_REL_ERR && dro_negative && ordered && *elapsed < EVAL_BUDGET,
        &format!(
            "semcp {:.2} vs worst test env {:.2} (relative error {:.1}% original scale, {:.1}% normalized); \
             normalized dro {:.4} fdro {:.4} semcp {:.4} (dro negative: {dro_negative}, dro < fdro < semcp: {ordered}), {elapsed:.1?}",
            o["semcp"],
            o[REFERENCE],
            100.0 * rel_original,
            100.0 * rel_normalized,
            n["dro"],
            n["fdro"],
            n["semcp"],
        ),
    );
}

fn synthetic_semcp(seed: u64) -> Semcp {
    let raw = generate_synthetic(EVAL_ROWS, Split::Train, seed);
    let (train, _, _) = normalize_all(&raw, &[]).unwrap();
    let g = bundled_graph("synthetic_well").unwrap().unwrap();
    let shifted: BTreeSet<String> = names(&["X0", "X2", "Y"]).into_iter().collect();
    Semcp::new(&train, &g, &shifted, ProgramConfig { seed, ..Default::default() }).unwrap()
}

#[test]
fn criterion_6_worst_case_ignores_the_policy() {
    let s = synthetic_semcp(0);
    let base = s.worst_case().unwrap().clone();
    let learned = s.learn().unwrap();
    let res = s.evaluate(&learned).unwrap();
    let mut worst = 0.0f64;
    let mut at = String::new();
    for p in &res.parameters {
        let q = base.params(&p.node, p.branch).unwrap();
        for (x, y) in p.vector().iter().zip(q.vector()) {
            if (x - y).abs() > worst {
                worst = (x - y).abs();
                at = format!("{} branch {:?}", p.node, p.branch);
            }
        }
    }
    verdict(
        6,
        worst <= INVARIANCE_TOL,
        &format!("max parameter difference {worst:.2e} (at {at}) between uniform and learned policies"),
    );
}

/// Expected value of `node` under action `a` by direct recursion through the
/// equations; observed context values take precedence over their equations.
fn expected(model: &StructuralModel, node: &str, a: usize, ctx: &BTreeMap<String, f64>) -> f64 {
    if let Some(&v) = ctx.get(node) {
        return v;
    }
    let eq = model.select(node, a).expect("unobserved nodes are modeled");
    let lin = eq.intercept
        + eq.coefficients.iter().map(|(r, c)| c * r.transform(expected(model, &r.parent, a, ctx))).sum::<f64>();
    match eq.form {
        EquationForm::Linear => lin + eq.noise_mean(),
        EquationForm::Logit => 1.0 / (1.0 + (-lin).exp()),
    }
}

#[test]
fn criterion_7_learning_optimality_and_variance() {
    let s = synthetic_semcp(4);
    let policy = s.learn().unwrap();
    let wc = s.worst_case_model().unwrap();
    let mut matched = 0;
    for r in 0..ARGMAX_CONTEXTS {
        let ctx: BTreeMap<String, f64> =
            ["X0", "X1"].iter().map(|c| (c.to_string(), s.pool.get(c).unwrap()[r])).collect();
        let values: Vec<f64> = (0..s.num_actions).map(|a| expected(&wc, "Y", a, &ctx)).collect();
        matched += usize::from(argmax(&policy.probs(&s.pool.row(&policy.features, r))) == argmax(&values));
    }

    let cfg = ExperimentConfig {
        rows: EVAL_ROWS,
        trials: LEARN_TRIALS,
        methods: vec![Method::Semcp, Method::Fdro],
        ..Default::default()
    };
    let table = run_learning(&cfg).unwrap();
    let worst = |m: &str| -> Vec<f64> { table.rows.iter().filter(|r| r.method == m).filter_map(|r| r.value).collect() };
    let (semcp, fdro) = (worst("semcp"), worst("fdro"));
    let complete = semcp.len() == LEARN_TRIALS && fdro.len() == LEARN_TRIALS;
    let (vs, vf) = (variance(&semcp), variance(&fdro));
    verdict(
        7,
        matched == ARGMAX_CONTEXTS && complete && vs < vf,
        &format!(
            "argmax agreement {matched}/{ARGMAX_CONTEXTS}; worst-env return variance semcp {vs:.3e} vs fdro {vf:.3e} over {LEARN_TRIALS} trials"
        ),
    );
}

#[test]
fn criterion_8_kl_radius() {
    let columns = names(&["X0", "X1", "Y"]);
    let deltas: Vec<f64> = (0..KL_SEEDS)
        .map(|seed| {
            let raw = generate_synthetic(EVAL_ROWS, Split::Train, seed);
            let (train, _, _) = normalize_all(&raw, &[]).unwrap();
            kl_radius(&train, &columns).unwrap().delta
        })
        .collect();
    let lo = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    verdict(
        8,
        lo >= KL_LO && hi <= KL_HI,
        &format!("radius in [{lo:.3}, {hi:.3}] over {KL_SEEDS} seeds, mean {:.3}", mean(&deltas)),
    );
}

/// Hand-derived encoding of the first fixture rows:
/// (city, yob bin, sex, capped household, p2000, p2002, p2004, g2000, g2002, action, reward).
type Encoded = (u32, f64, f64, f64, [f64; 5], usize, f64);

fn hand_checked() -> [Encoded; VOTING_ROWS] {
    [
        (1, 2.0, 1.0, 4.0, [1.0, 0.0, 0.0, 0.0, 0.0], 1, 0.0 - 0.01),
        (2, 0.0, 0.0, 1.0, [1.0, 1.0, 0.0, 1.0, 0.0], 1, 1.0 - 0.02),
        (3, 0.0, 0.0, 4.0, [1.0, 1.0, 1.0, 0.0, 0.0], 0, 1.0),
        (4, 2.0, 0.0, 1.0, [1.0, 0.0, 1.0, 0.0, 0.0], 2, 1.0 - 0.01 - 0.04),
        (14, 2.0, 1.0, 3.0, [0.0, 0.0, 0.0, 0.0, 0.0], 0, 1.0),
        (5, 4.0, 0.0, 2.0, [0.0, 0.0, 0.0, 1.0, 1.0], 4, 1.0 - 0.03 - 0.06),
        (6, 0.0, 0.0, 4.0, [1.0, 0.0, 1.0, 1.0, 1.0], 0, 0.0),
        (13, 0.0, 0.0, 2.0, [1.0, 1.0, 0.0, 0.0, 0.0], 0, 0.0),
        (15, 3.0, 0.0, 2.0, [1.0, 0.0, 0.0, 0.0, 1.0], 4, 1.0 - 0.03 - 0.09),
        (8, 0.0, 0.0, 3.0, [0.0, 1.0, 1.0, 1.0, 0.0], 1, 1.0 - 0.10),
        (1, 4.0, 1.0, 3.0, [0.0, 0.0, 1.0, 0.0, 0.0], 0, 0.0),
        (2, 4.0, 0.0, 3.0, [0.0, 1.0, 0.0, 0.0, 0.0], 2, 1.0 - 0.01 - 0.02),
        (3, 1.0, 0.0, 1.0, [0.0, 1.0, 1.0, 0.0, 1.0], 0, 0.0),
        (4, 1.0, 1.0, 3.0, [1.0, 1.0, 0.0, 1.0, 0.0], 4, 0.0 - 0.03 - 0.04),
        (14, 0.0, 0.0, 2.0, [0.0, 1.0, 0.0, 1.0, 1.0], 4, 1.0 - 0.03 - 0.05),
        (5, 0.0, 1.0, 4.0, [0.0, 0.0, 1.0, 1.0, 1.0], 0, 1.0),
        (6, 4.0, 1.0, 2.0, [0.0, 0.0, 1.0, 0.0, 1.0], 3, 0.0 - 0.02 - 0.07),
        (13, 3.0, 1.0, 4.0, [0.0, 1.0, 1.0, 1.0, 1.0], 0, 1.0),
        (15, 3.0, 1.0, 4.0, [0.0, 0.0, 0.0, 1.0, 1.0], 0, 0.0),
        (8, 3.0, 0.0, 4.0, [1.0, 0.0, 0.0, 1.0, 0.0], 2, 1.0 - 0.01 - 0.10),
    ]
}

#[test]
fn criterion_9_voting_fixture_rows() {
    let data = parse_voting(VOTING_FIXTURE.as_bytes(), &VotingConfig::default()).unwrap();
    let all: Vec<_> = data.train.iter().chain(&data.test).collect();
    let mut next: BTreeMap<u32, usize> = BTreeMap::new();
    let mut mismatches = Vec::new();
    for (i, (city, yob, sex, hh, votes, action, reward)) in hand_checked().into_iter().enumerate() {
        let ds = all.iter().find(|d| d.env == format!("city{city}")).expect("city present");
        let k = next.entry(city).or_default();
        let mut want = vec![yob, sex, hh];
        want.extend(votes);
        let got = (ds.row(*k), ds.actions[*k], ds.rewards[*k]);
        if got != (want.clone(), action, reward) {
            mismatches.push(format!("row {i}: got {got:?}, want {:?}", (want, action, reward)));
        }
        *k += 1;
    }
    verdict(
        9,
        mismatches.is_empty() && data.malformed == 0,
        &format!("{}/{VOTING_ROWS} hand-checked rows match exactly {mismatches:?}", VOTING_ROWS - mismatches.len()),
    );
}

#[test]
fn criterion_10_misspecified_graph_degrades_gracefully() {
    let (well, _) = well_specified();
    let cfg =
        ExperimentConfig { graph: Some("synthetic_mis".into()), methods: vec![Method::Semcp], ..evaluation_config() };
    let mis = means(&run_evaluation(&cfg).unwrap());
    let truth = well.original[REFERENCE];
    assert_eq!(mis.original[REFERENCE], truth, "both runs share their trial data");
    let err = |v: f64| (v - truth).abs();
    let (e_well, e_mis, e_dro) = (err(well.original["semcp"]), err(mis.original["semcp"]), err(well.original["dro"]));
    verdict(
        10,
        e_well < e_mis && e_mis < e_dro,
        &format!(
            "absolute error vs worst test env: semcp well {e_well:.2}, semcp mis-specified {e_mis:.2}, dro {e_dro:.2}"
        ),
    );
}
