use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use issf_wbc::safety::FilterMode;
use issf_wbc::scenario::Scenario;
use issf_wbc_harness::{output, run, run_sweep, RunRequest};

#[derive(Parser)]
#[command(name = "issf-wbc", version, about = "Safety-filtered whole-body control scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario in one mode.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "issf-cbf")]
        mode: FilterMode,
        /// Collision-row class-K slope.
        #[arg(long)]
        alpha: Option<f64>,
        /// Collision-row robustness parameter.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Also write every filter row to constraints.csv.
        #[arg(long)]
        trace_constraints: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Output root (otherwise $ISSF_WBC_OUT or ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep (α, ε) over the given modes.
    Sweep {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,30")]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "10,20,30")]
        epsilons: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "without-cbf,cbf,issf-cbf")]
        modes: Vec<FilterMode>,
        /// Parallel workers.
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a scenario without running it.
    Check { scenario: PathBuf },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> issf_wbc_harness::Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            mode,
            alpha,
            epsilon,
            trace_constraints,
            seed,
            out,
        } => {
            let scenario = Scenario::load(&scenario)?;
            let request = RunRequest {
                mode,
                alpha,
                epsilon,
                seed,
                trace_constraints,
            };
            let outcome = run(&scenario, &request)?;
            let dir = output::persist_run(&output::output_root(out.as_deref()), &outcome, trace_constraints)?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
            println!("wrote {}", dir.display());
        }
        Command::Sweep {
            scenario,
            alphas,
            epsilons,
            modes,
            jobs,
            out,
        } => {
            let scenario = Scenario::load(&scenario)?;
            let root = output::output_root(out.as_deref());
            let result = run_sweep(&scenario, &alphas, &epsilons, &modes, jobs, Some(&root))?;
            println!("reference collision events: {}", result.reference_events);
            println!("{:<12} {:>6} {:>6} {:>8} {:>12}", "mode", "alpha", "eps", "ratio", "min_h");
            for p in &result.points {
                let ratio = p.remaining_collision_ratio.map_or("failed".into(), |r| format!("{r:.3}"));
                let min_h = p
                    .summary
                    .as_ref()
                    .and_then(|s| s.min_collision_h)
                    .map_or("-".into(), |h| format!("{h:.5}"));
                println!("{:<12} {:>6} {:>6} {:>8} {:>12}", p.mode, p.alpha, p.epsilon, ratio, min_h);
            }
            println!("wrote {}", root.join(&result.scenario).join("sweep.csv").display());
        }
        Command::Check { scenario } => {
            let s = Scenario::load(&scenario)?;
            println!(
                "{}: ok ({} dof, {} tasks, {} obstacles, {} barrier pairs, {:.3} s)",
                s.name,
                s.robot.n_dof(),
                s.tasks.len(),
                s.obstacles.len(),
                s.catalog.self_pairs.len(),
                s.sim.duration
            );
        }
    }
    Ok(())
}
