use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use trajsqp::bench::{emit_report, load_config, run_benchmark, verify_suite};
use trajsqp::{EqMode, SolverSettings, PROBLEMS};

#[derive(Parser)]
#[command(version, about = "Benchmark runner for the trajectory SQP solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides every suite's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Instances solved concurrently.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Report directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    eq_mode: Option<ModeArg>,
    /// Absolute KKT tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the suites of a config file.
    Run { config: PathBuf },
    /// Lists the built-in problems.
    ListProblems,
    /// Runs the oracle-equivalence suite.
    Verify,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Projection,
    Ipm,
}

impl From<ModeArg> for EqMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Projection => EqMode::Projection,
            ModeArg::Ipm => EqMode::Ipm,
        }
    }
}

fn run(cli: &Cli, config: &Path) -> anyhow::Result<bool> {
    let mut suites =
        load_config(config).with_context(|| format!("loading {}", config.display()))?;
    let mut all_passed = true;
    for cfg in &mut suites {
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        if let Some(t) = cli.threads {
            cfg.threads = Some(t);
        }
        if let Some(m) = cli.eq_mode {
            cfg.eq_mode = Some(m.into());
        }
        if let Some(tol) = cli.tol {
            cfg.settings.abs_tol = tol;
        }
        let result = run_benchmark(cfg).with_context(|| format!("suite {}", cfg.name))?;
        let s = &result.summary;
        let median = s.iterations.as_ref().map_or(f64::NAN, |q| q.median);
        println!(
            "{:<28} {:>4}/{:<4} (need {:>3})  median iters {:>5.1}  {:.3} ms/QP  {:.1} s  {}",
            s.suite,
            s.solved,
            s.instances,
            s.required,
            median,
            s.mean_per_qp_ms,
            s.total_wall_s,
            if s.passed { "PASS" } else { "FAIL" }
        );
        let dir = cli
            .out
            .clone()
            .or_else(|| cfg.output.clone())
            .unwrap_or_else(|| PathBuf::from("results"));
        emit_report(&result, &dir)?;
        all_passed &= s.passed;
    }
    Ok(all_passed)
}

fn verify(cli: &Cli) -> anyhow::Result<bool> {
    let outcome = verify_suite(cli.seed.unwrap_or(0), SolverSettings::default().rho);
    for r in [&outcome.equality, &outcome.ipm] {
        println!(
            "{:<9} {:>4} instances  max rel diff {:.2e}  max dense residual {:.2e}  failures {}  {:.2} s  {}",
            r.suite,
            r.instances,
            r.max_rel_diff,
            r.max_dense_residual,
            r.failures,
            r.elapsed_s,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("verify.json"),
            serde_json::to_string_pretty(&outcome)? + "\n",
        )?;
    }
    Ok(outcome.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::ListProblems => {
            for (name, desc) in PROBLEMS {
                println!("{name:<20} {desc}");
            }
            Ok(true)
        }
        Command::Run { config } => run(&cli, config),
        Command::Verify => verify(&cli),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
