use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kale_cli::commands::{self, DivergenceArgs};
use kale_cli::config::{Beta, Gamma, RunConfig};
use kale_cli::{CliError, CliResult};
use kale_core::{Scenario, SolverMethod};

#[derive(Parser)]
#[command(name = "kale", version, about = "KALE divergence, particle flows and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate KALE and MMD² between two point-cloud CSV files.
    Divergence {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        lambda: f64,
        /// newton | cd | gd
        #[arg(long, default_value = "newton")]
        solver: String,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Run a particle flow described by a TOML config.
    Flow {
        config: PathBuf,
        #[command(flatten)]
        overrides: FlowOverrides,
    },
    /// Per-snapshot W2 between two runs (config files or run directories).
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Write the `step,w2` table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated scenario's source.csv and target.csv.
    Scenario {
        name: String,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        mean_gap: f64,
        #[arg(long)]
        output_dir: PathBuf,
    },
}

/// Command-line values that replace the config file's.
#[derive(Args)]
struct FlowOverrides {
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// `auto` or a step size.
    #[arg(long)]
    gamma: Option<Gamma>,
    #[arg(long)]
    steps: Option<usize>,
    /// Constant noise level.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    snapshot_every: Option<usize>,
}

impl FlowOverrides {
    fn apply(self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        set!(output_dir, seed, sigma, lambda, gamma, steps, solver, tol);
        if let Some(b) = self.beta {
            cfg.beta = Beta::Constant(b);
        }
        if self.snapshot_every.is_some() {
            cfg.snapshot_every = self.snapshot_every;
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Divergence { source, target, sigma, lambda, solver, tol, max_iter } => {
            let solver: SolverMethod = solver.parse()?;
            let report = commands::divergence(&DivergenceArgs {
                source,
                target,
                sigma,
                lambda,
                solver,
                tol,
                max_iter,
            })?;
            print!("{}", report.render());
            if !report.converged {
                return Err(CliError::NonConvergence(format!(
                    "stopped after {} iterations above tol {tol:e}",
                    report.solver_iters
                )));
            }
        }
        Command::Flow { config, overrides } => {
            let mut cfg = RunConfig::load(&config)?;
            overrides.apply(&mut cfg);
            let summary = commands::flow(&cfg)?;
            if let Some(first) = summary.unconverged_steps.first() {
                eprintln!(
                    "warning: dual solve did not converge at {} step(s), first at step {first}",
                    summary.unconverged_steps.len()
                );
            }
            println!("wrote {}", summary.output_dir.display());
        }
        Command::Compare { a, b, out } => {
            let rows = commands::compare(&a, &b)?;
            match out {
                Some(path) => {
                    let mut f = std::fs::File::create(&path)
                        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                    commands::write_comparison(&mut f, &rows)
                        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                }
                None => {
                    let mut stdout = std::io::stdout().lock();
                    commands::write_comparison(&mut stdout, &rows)
                        .and_then(|_| stdout.flush())
                        .map_err(|e| CliError::Io(format!("stdout: {e}")))?;
                }
            }
        }
        Command::Scenario { name, n, seed, mean_gap, output_dir } => {
            let spec = Scenario { name: commands::parse_scenario(&name)?, n, seed, mean_gap };
            commands::scenario(&spec, &output_dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kale: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
