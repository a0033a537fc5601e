use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use contingency_mpc::ablation::{run_ablation, Ablation};
use contingency_mpc::report;
use contingency_mpc::scenario::{self, ScenarioConfig};
use contingency_mpc::sim::{run_oracle_suite, run_scenario};
use contingency_mpc::solver::SolverOptions;

/// Decentralized contingency MPC simulator.
#[derive(Parser)]
#[command(name = "cmpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or bundled preset and write logs to --out.
    Run {
        /// Path to a scenario JSON file, or a preset name
        /// (density-5, density-10, density-20, bottleneck, pnp).
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Seed for random scenarios; overrides the file.
        #[arg(long)]
        seed: Option<u64>,
        /// Stop with a nonzero exit status on the first invariant violation.
        #[arg(long)]
        strict: bool,
        /// Worker threads for the per-agent solves (1 disables parallelism).
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Run a counterexample with one safeguard disabled, next to the full scheme.
    Ablate {
        /// Scenario file or preset; defaults to the counterexample for --which.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, value_parser = ["tail", "fos", "lyap"])]
        which: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the solver with brute-force enumeration on random 1-D problems.
    Oracle {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, out, seed, strict, parallel } => run(&scenario, &out, seed, strict, parallel),
        Command::Ablate { scenario, which, out } => ablate(scenario.as_deref(), &which, &out),
        Command::Oracle { out, instances, seed } => oracle(&out, instances, seed),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type CliResult = Result<bool, Box<dyn std::error::Error>>;

fn run(name: &str, out: &Path, seed: Option<u64>, strict: bool, threads: usize) -> CliResult {
    let cfg = scenario::resolve(name, seed)?;
    let mut sim = cfg.sim_config();
    sim.strict = strict;
    sim.parallel = threads > 1;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
    let output = pool.install(|| run_scenario(cfg.world(), &cfg.events(), &sim))?;
    report::write_run(out, &label(&cfg, name), cfg.seed, &output.metrics, &output.log)?;
    let m = &output.metrics;
    println!(
        "{}: {} steps, collision_free={}, min_pair_dist={:.4}, fallbacks={}, freezes={}, invariant_violations={}",
        label(&cfg, name),
        m.steps,
        m.collision_free,
        m.min_pair_dist,
        m.fallback_count,
        m.freeze_events,
        m.invariant_violations
    );
    Ok(!strict || m.invariant_violations == 0)
}

fn label(cfg: &ScenarioConfig, name: &str) -> String {
    if cfg.name.is_empty() {
        name.to_string()
    } else {
        cfg.name.clone()
    }
}

fn ablate(name: Option<&str>, which: &str, out: &Path) -> CliResult {
    let which: Ablation = which.parse()?;
    let cfg = match name {
        Some(n) => scenario::resolve(n, None)?,
        None => which.counterexample()?,
    };
    let rep = run_ablation(&cfg, which, false)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&rep)?)?;
    println!(
        "ablate {}: {} events with the safeguard off: {}, with the full scheme: {}",
        rep.which, rep.event, rep.ablated_events, rep.full_events
    );
    Ok(true)
}

fn oracle(out: &Path, instances: usize, seed: u64) -> CliResult {
    let rep = run_oracle_suite(instances, seed, &SolverOptions::default())?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("oracle.json"), serde_json::to_string_pretty(&rep)?)?;
    println!(
        "oracle: {} instances, {} oracle-feasible, {} verdict mismatches, {} cost failures, max excess {:.3e}",
        rep.instances, rep.oracle_feasible, rep.verdict_mismatches, rep.cost_failures, rep.max_cost_excess
    );
    Ok(rep.passed())
}
