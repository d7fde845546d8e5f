use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use kale_core::scenarios::{GaussianMixture, Scenario, ScenarioName};
use kale_core::{
    kale_value, mmd_squared, run_kale_flow, run_mmd_flow, run_ula, snapshot_steps, solve_dual,
    trace_path, wasserstein2_exact, witness_from_solution, DualProblem, FlowTrace, KernelSpec,
    ParticleCloud, PathVelocity, SolverMethod, SolverOptions,
};

use crate::config::{Method, Reference, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{fmt_f64, read_cloud, write_cloud, write_trace};

pub const TRACE_FILE: &str = "trace.csv";
pub const TARGET_FILE: &str = "target.csv";
pub const ECHO_FILE: &str = "config_echo.toml";

pub fn snapshot_file(step: usize) -> String {
    format!("particles_{step}.csv")
}

#[derive(Debug, Clone)]
pub struct DivergenceArgs {
    pub source: PathBuf,
    pub target: PathBuf,
    pub sigma: f64,
    pub lambda: f64,
    pub solver: SolverMethod,
    pub tol: f64,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub kale: f64,
    pub mmd2: f64,
    pub witness_norm: f64,
    pub solver_iters: usize,
    pub converged: bool,
}

impl DivergenceReport {
    /// One `key=value` line per metric.
    pub fn render(&self) -> String {
        format!(
            "kale={}\nmmd2={}\nwitness_norm={}\nsolver_iters={}\n",
            fmt_f64(self.kale),
            fmt_f64(self.mmd2),
            fmt_f64(self.witness_norm),
            self.solver_iters
        )
    }
}

pub fn divergence(args: &DivergenceArgs) -> CliResult<DivergenceReport> {
    let source = read_cloud(&args.source)?;
    let target = read_cloud(&args.target)?;
    let kernel = KernelSpec::new(args.sigma)?;
    let mut opts = SolverOptions::new(args.solver).with_tol(args.tol);
    if let Some(m) = args.max_iter {
        opts = opts.with_max_iter(m);
    }
    let prob = DualProblem::new(kernel, &target, &source, args.lambda)?;
    let sol = solve_dual(&prob, &opts, None)?;
    let witness = witness_from_solution(&prob, &sol);
    Ok(DivergenceReport {
        kale: kale_value(&prob, &sol),
        mmd2: mmd_squared(&source, &target, &kernel)?,
        witness_norm: witness.norm2().sqrt(),
        solver_iters: sol.iterations,
        converged: sol.converged(),
    })
}

#[derive(Debug, Clone)]
pub struct FlowSummary {
    pub output_dir: PathBuf,
    pub snapshots: Vec<usize>,
    /// Steps whose dual solve did not converge.
    pub unconverged_steps: Vec<usize>,
}

fn load_inputs(cfg: &RunConfig) -> CliResult<(ParticleCloud, ParticleCloud)> {
    match cfg.scenario_spec()? {
        Some(s) => Ok(s.generate()?),
        None => {
            let source = read_cloud(cfg.source.as_deref().expect("validated"))?;
            let target = read_cloud(cfg.target.as_deref().expect("validated"))?;
            Ok((source, target))
        }
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Runs the configured flow and writes `trace.csv`, the snapshots,
/// `target.csv` and the echoed config into `output_dir`.
pub fn flow(cfg: &RunConfig) -> CliResult<FlowSummary> {
    cfg.validate()?;
    let flow_cfg = cfg.flow_config()?;
    let kernel = KernelSpec::new(cfg.sigma)?;
    let (source, target) = load_inputs(cfg)?;
    let mixture = GaussianMixture::four_corners();
    let grad = |x: &[f64]| mixture.grad_log_density(x);

    let reference = match cfg.reference {
        Reference::None => None,
        Reference::Ula => Some(run_ula(&source, &grad, cfg.reference_gamma, cfg.steps, cfg.seed)?),
        Reference::Mmd => Some(run_mmd_flow(&source, &target, kernel, cfg.reference_gamma, cfg.steps)?),
    };
    let reference = reference.as_deref();

    let (trace, snapshots): (FlowTrace, Vec<(usize, ParticleCloud)>) = match cfg.method {
        Method::Kale => {
            let run = run_kale_flow(&source, &target, kernel, &flow_cfg, reference)?;
            (run.trace, run.snapshots)
        }
        Method::Mmd | Method::Ula => {
            let path = if cfg.method == Method::Mmd {
                run_mmd_flow(&source, &target, kernel, flow_cfg.gamma, cfg.steps)?
            } else {
                run_ula(&source, &grad, flow_cfg.gamma, cfg.steps, cfg.seed)?
            };
            let velocity = if cfg.method == Method::Mmd {
                PathVelocity::Mmd
            } else {
                PathVelocity::Langevin(&grad)
            };
            let trace = trace_path(&path, &target, kernel, cfg.lambda, &flow_cfg.solver, velocity, reference)?;
            let snaps = snapshot_steps(cfg.steps, flow_cfg.snapshot_every)
                .into_iter()
                .map(|s| (s, path[s].clone()))
                .collect();
            (trace, snaps)
        }
    };

    let dir = &cfg.output_dir;
    create_dir(dir)?;
    write_trace(&dir.join(TRACE_FILE), &trace)?;
    for (step, cloud) in &snapshots {
        write_cloud(&dir.join(snapshot_file(*step)), cloud)?;
    }
    write_cloud(&dir.join(TARGET_FILE), &target)?;
    let echo = dir.join(ECHO_FILE);
    fs::write(&echo, cfg.to_toml()).map_err(|e| CliError::io(&echo, e))?;

    Ok(FlowSummary {
        output_dir: dir.clone(),
        snapshots: snapshots.iter().map(|s| s.0).collect(),
        unconverged_steps: trace
            .records
            .iter()
            .filter(|r| !r.solver_converged)
            .map(|r| r.step)
            .collect(),
    })
}

/// A run directory, or a config file whose `output_dir` is one.
pub fn resolve_run_dir(path: &Path) -> CliResult<PathBuf> {
    if path.is_dir() {
        Ok(path.to_path_buf())
    } else {
        Ok(RunConfig::load(path)?.output_dir)
    }
}

fn snapshot_index(dir: &Path) -> CliResult<Vec<usize>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut steps = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(step) = name
            .strip_prefix("particles_")
            .and_then(|r| r.strip_suffix(".csv"))
            .and_then(|r| r.parse::<usize>().ok())
        {
            steps.push(step);
        }
    }
    steps.sort_unstable();
    if steps.is_empty() {
        return Err(CliError::io(dir, "no particles_{step}.csv snapshots"));
    }
    Ok(steps)
}

/// W2 between the two runs' particles at every snapshot step.
pub fn compare(a: &Path, b: &Path) -> CliResult<Vec<(usize, f64)>> {
    let (da, db) = (resolve_run_dir(a)?, resolve_run_dir(b)?);
    let (sa, sb) = (snapshot_index(&da)?, snapshot_index(&db)?);
    if sa != sb {
        return Err(CliError::Config(format!(
            "snapshot schedules differ: {} has steps {sa:?}, {} has steps {sb:?}",
            da.display(),
            db.display()
        )));
    }
    let mut rows = Vec::with_capacity(sa.len());
    for step in sa {
        let pa = read_cloud(&da.join(snapshot_file(step)))?;
        let pb = read_cloud(&db.join(snapshot_file(step)))?;
        if pa.len() != pb.len() {
            return Err(CliError::Config(format!(
                "step {step}: particle counts differ ({} vs {})",
                pa.len(),
                pb.len()
            )));
        }
        rows.push((step, wasserstein2_exact(&pa, &pb)?));
    }
    Ok(rows)
}

pub fn write_comparison(out: &mut dyn Write, rows: &[(usize, f64)]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "w2"])?;
    for (step, w2) in rows {
        w.write_record([step.to_string(), fmt_f64(*w2)])?;
    }
    w.flush()
}

/// Writes `source.csv` and `target.csv` for a generated scenario.
pub fn scenario(spec: &Scenario, dir: &Path) -> CliResult<()> {
    let (source, target) = spec.generate()?;
    create_dir(dir)?;
    write_cloud(&dir.join("source.csv"), &source)?;
    write_cloud(&dir.join("target.csv"), &target)
}

pub fn parse_scenario(name: &str) -> CliResult<ScenarioName> {
    Ok(name.parse()?)
}
