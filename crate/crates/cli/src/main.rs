use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use cmdp_solver::bench::{prepare, run_seed, thin_log, ExperimentConfig, ExperimentSummary, SeedOutput};
use cmdp_solver::io::to_json_string;
use cmdp_solver::{figure1_cmdp, random_cmdp, solve_lp, Cmdp, Error, LpOutcome};

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "cmdp", version, about = "Constrained MDP solvers and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve the occupancy LP of an instance and print the oracle quantities.
    Oracle {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Print a random instance as JSON.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long, default_value_t = 0.5)]
        b_quantile: f64,
    },
    /// Print the five-state non-convexity example as JSON.
    Figure1 {
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long, default_value_t = 0.8)]
        b: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve { config } => solve(&config),
        Command::Oracle { instance } => oracle(&instance),
        Command::Gen { seed, states, actions, gamma, b_quantile } => {
            print_instance(random_cmdp(seed, states, actions, gamma, b_quantile))
        }
        Command::Figure1 { gamma, b } => print_instance(figure1_cmdp(gamma, b)),
    }
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_CONFIG)
}

fn print_instance(cmdp: cmdp_solver::Result<Cmdp>) -> ExitCode {
    match cmdp.and_then(|m| to_json_string(&m)) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => config_error(e),
    }
}

fn oracle(path: &Path) -> ExitCode {
    let cmdp: Cmdp = match fs::read_to_string(path).map_err(Error::from).and_then(|t| Ok(serde_json::from_str(&t)?)) {
        Ok(m) => m,
        Err(e) => return config_error(e),
    };
    let violations = cmdp.validate();
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("invalid instance: {v}");
        }
        return ExitCode::from(EXIT_CONFIG);
    }
    let sol = match solve_lp(&cmdp) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAIL);
        }
    };
    let policy = sol.optimal_policy().map(|p| p.as_slice().to_vec());
    let doc = serde_json::json!({
        "status": if sol.status == LpOutcome::Optimal { "optimal" } else { "infeasible" },
        "v_r_star": finite_or_null(sol.v_r_star),
        "lambda_star": finite_or_null(sol.lambda_star),
        "slater_slack": sol.slater_slack,
        "slater_reward": sol.slater_reward,
        "policy": policy,
    });
    println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
    if sol.status == LpOutcome::Optimal {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    }
}

fn finite_or_null(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn thread_pool() -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("CMDP_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        builder = builder.num_threads(n);
    }
    builder.build().expect("thread pool")
}

fn solve(path: &Path) -> ExitCode {
    let config = match fs::read_to_string(path).map_err(Error::from).and_then(|t| ExperimentConfig::from_json(&t)) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    if let Err(e) = fs::create_dir_all(&config.output) {
        return config_error(format!("cannot create {}: {e}", config.output.display()));
    }
    let prep = match prepare(&config) {
        Ok(p) => Some(p),
        Err(e @ (Error::InvalidConfig(_) | Error::Io(_) | Error::Json(_) | Error::Shape(_) | Error::InvalidArgument(_))) => {
            return config_error(e)
        }
        Err(e) => {
            let mut summary = ExperimentSummary::new(&config, None);
            summary.errors.push(e.to_string());
            summary.finish();
            return write_summary(&config, &summary);
        }
    };
    let prep = prep.expect("set above");

    let results: Vec<(u64, cmdp_solver::Result<SeedOutput>)> = thread_pool().install(|| {
        config.seeds.par_iter().map(|&seed| (seed, run_seed(&prep, &config, seed))).collect()
    });

    let mut summary = ExperimentSummary::new(&config, Some(&prep));
    for (seed, res) in results {
        match res {
            Ok(out) => {
                let csv = thin_log(&out.log, config.eval_every).to_csv_string();
                let file = config.output.join(format!("seed_{seed}.csv"));
                if let Err(e) = fs::write(&file, csv) {
                    summary.errors.push(format!("seed {seed}: cannot write {}: {e}", file.display()));
                }
                summary.seeds.push(out.summary);
            }
            Err(e) => summary.errors.push(format!("seed {seed}: {e}")),
        }
    }
    summary.finish();
    write_summary(&config, &summary)
}

fn write_summary(config: &ExperimentConfig, summary: &ExperimentSummary) -> ExitCode {
    let text = serde_json::to_string_pretty(summary).expect("serializable");
    if let Err(e) = fs::write(config.output.join("summary.json"), &text) {
        eprintln!("error: cannot write summary: {e}");
        return ExitCode::from(EXIT_FAIL);
    }
    for err in &summary.errors {
        eprintln!("error: {err}");
    }
    println!("{}", if summary.pass { "pass" } else { "fail" });
    if summary.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    }
}
