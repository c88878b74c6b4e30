use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semrobust::semcp::{extract_worst_case_model, policy_features};
use semrobust::shiftdetect::{detect_shifts, ShiftConfig};
use semrobust_cli::config::{parse_methods, ConfigError, ExperimentConfig};
use semrobust_cli::experiment::{has_failures, learn_method, shifts_for, training_data, write_json, ExperimentError};
use semrobust_cli::report::{emit_outputs, ResultTable, Summary};
use semrobust_cli::{run_evaluation, run_learning};

#[derive(Parser)]
#[command(name = "semrobust", version, about = "Robust offline bandit evaluation and learning under structural shifts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test which variables shift across the training environments.
    DetectShifts(Common),
    /// Fit per-environment structural equations and their uncertainty set.
    FitSem(Common),
    /// Robustly evaluate a policy with every method over several trials.
    Evaluate(Common),
    /// Learn policies with every method and score them on the test environments.
    Learn(Common),
    /// Run both the evaluation and the learning comparison.
    Experiment(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of semcp, dro, fdro, nonrobust.
    #[arg(long)]
    methods: Option<String>,
    /// Bundled graph name or graph file.
    #[arg(long)]
    graph: Option<String>,
    /// Also write an SVG plot.
    #[arg(long)]
    plot: bool,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(m) = &self.methods {
            cfg.methods = parse_methods(m).map_err(|reason| ConfigError::Value {
                key: "methods".into(),
                value: m.clone(),
                reason,
            })?;
        }
        if let Some(g) = &self.graph {
            cfg.graph = Some(g.clone());
        }
        cfg.plot |= self.plot;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_summary(title: &str, summaries: &[Summary]) {
    println!("{title}");
    println!("  {:<12} {:>4} {:>12} {:>12} {:>14}", "method", "n", "mean", "ci95", "mean_original");
    for s in summaries {
        let n = s.normalized.map_or(0, |st| st.n);
        let mean = s.normalized.map_or("-".into(), |st| format!("{:.4}", st.mean));
        let ci = s.normalized.and_then(|st| st.ci).map_or("-".into(), |c| format!("{c:.4}"));
        let orig = s.original.map_or("-".into(), |st| format!("{:.4}", st.mean));
        println!("  {:<12} {:>4} {:>12} {:>12} {:>14}", s.method, n, mean, ci, orig);
        if s.failures > 0 {
            println!("  {:<12} {} failed trial(s)", "", s.failures);
        }
    }
}

fn report(table: &ResultTable, cfg: &ExperimentConfig, title: &str) -> Result<bool, ExperimentError> {
    let summaries =
        emit_outputs(table, &cfg.out, cfg.plot, title).map_err(|e| ExperimentError::Other(e.to_string()))?;
    print_summary(title, &summaries);
    Ok(has_failures(table))
}

/// Runs a subcommand; `Ok(true)` when some trial failed.
fn run(cmd: Command) -> Result<bool, ExperimentError> {
    match cmd {
        Command::DetectShifts(c) => {
            let cfg = c.resolve()?;
            let (data, g) = training_data(&cfg)?;
            let shift = ShiftConfig { seed: cfg.seed, ..cfg.shift.clone() };
            let summary = detect_shifts(&data.train, &g, &shift)?;
            println!("shifted: {}", summary.shifted.iter().cloned().collect::<Vec<_>>().join(", "));
            if !summary.untested.is_empty() {
                println!("untested: {}", summary.untested.join(", "));
            }
            write_json(&cfg.out, "shifts.json", &summary)?;
            Ok(false)
        }
        Command::FitSem(c) => {
            let cfg = c.resolve()?;
            let (data, g) = training_data(&cfg)?;
            let shifted = shifts_for(&cfg, &data, &g)?;
            let program = semrobust::semcp::ProgramConfig { seed: cfg.seed, ..cfg.semcp.clone() };
            let s = semrobust::semcp::Semcp::new(&data.train, &g, &shifted, program)?;
            write_json(&cfg.out, "uncertainty.json", &s.fit.spec)?;
            write_json(&cfg.out, "nominal_model.json", &s.fit.nominal)?;
            for m in &s.fit.models {
                write_json(&cfg.out, &format!("model_{}.json", m.env), m)?;
            }
            let wc = s.worst_case()?;
            write_json(&cfg.out, "worst_case_model.json", &extract_worst_case_model(wc, &s.fit.nominal))?;
            println!("shifted: {}", shifted.iter().cloned().collect::<Vec<_>>().join(", "));
            println!(
                "worst-case mean return (uniform policy): {:.6} normalized, {:.6} original",
                wc.objective,
                wc.objective_original.unwrap_or(f64::NAN)
            );
            let learned = learn_method(semrobust_cli::Method::Semcp, &cfg, &data, &g, cfg.seed)?;
            write_json(&cfg.out, "semcp_policy.json", &learned)?;
            println!("policy features: {}", policy_features(&g).join(", "));
            Ok(false)
        }
        Command::Evaluate(c) => {
            let cfg = c.resolve()?;
            report(&run_evaluation(&cfg)?, &cfg, "Robust evaluation")
        }
        Command::Learn(c) => {
            let cfg = c.resolve()?;
            report(&run_learning(&cfg)?, &cfg, "Robust learning (worst test environment)")
        }
        Command::Experiment(c) => {
            let cfg = c.resolve()?;
            let a = report(&run_evaluation(&cfg)?, &cfg, "Robust evaluation")?;
            let b = report(&run_learning(&cfg)?, &cfg, "Robust learning (worst test environment)")?;
            Ok(a || b)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(ExperimentError::Config(e)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
