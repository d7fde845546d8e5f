//! Forward-Euler particle flows.
//!
//! * KALE particle descent: `Y ← Y - γ (1 + λ) ∇h*_n(Y + β_n U)`, with a fresh
//!   dual solve per step (warm-started from the previous step).
//! * MMD descent: `Y ← Y - γ ∇f_{P,Q}(Y)` with `f_{P,Q} = μ_P - μ_Q`.
//! * ULA: `Y ← Y + γ ∇log π(Y) + √(2γ) ξ`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cloud::ParticleCloud;
use crate::error::{invalid, Result};
use crate::kernel::{KernelBounds, KernelSpec};
use crate::metrics::wasserstein2_exact;
use crate::solver::{
    kale_value, solve_dual, witness_from_solution, DualProblem, DualSolution, SolverOptions,
    WitnessFunction,
};

/// Step size rule `γ = min(0.1, λ/10)`.
pub fn default_gamma(lambda: f64) -> f64 {
    (lambda / 10.0).min(0.1)
}

/// Noise levels `β_n`.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSchedule {
    Constant(f64),
    /// Explicit per-step levels; steps past the end reuse the last entry.
    List(Vec<f64>),
}

impl NoiseSchedule {
    pub fn beta(&self, step: usize) -> f64 {
        match self {
            NoiseSchedule::Constant(b) => *b,
            NoiseSchedule::List(v) => v.get(step).or(v.last()).copied().unwrap_or(0.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |b: &f64| b.is_finite() && *b >= 0.0;
        let valid = match self {
            NoiseSchedule::Constant(b) => ok(b),
            NoiseSchedule::List(v) => v.iter().all(ok),
        };
        if !valid {
            return Err(invalid("beta", "noise levels must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub steps: usize,
    pub noise: NoiseSchedule,
    pub solver: SolverOptions,
    pub seed: u64,
    pub snapshot_every: usize,
}

impl FlowConfig {
    /// Defaults: `γ = min(0.1, λ/10)`, no noise, Newton with `tol = 1e-9`.
    pub fn new(lambda: f64, steps: usize) -> Self {
        Self {
            lambda,
            gamma: default_gamma(lambda),
            steps,
            noise: NoiseSchedule::Constant(0.0),
            solver: SolverOptions::default(),
            seed: 0,
            snapshot_every: steps.max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(invalid("lambda", format!("must be positive, got {}", self.lambda)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(invalid("gamma", format!("must be positive, got {}", self.gamma)));
        }
        if self.snapshot_every == 0 {
            return Err(invalid("snapshot_every", "must be at least 1"));
        }
        if !(self.solver.tol > 0.0) {
            return Err(invalid("tol", "must be positive"));
        }
        self.noise.validate()
    }
}

/// Deterministic Gaussian draws keyed by `(seed, tag, step, index)`, so the
/// draw for one particle does not depend on how many particles exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    seed: u64,
    tag: u64,
}

impl NoiseStream {
    pub const KALE: u64 = 1;
    pub const ULA: u64 = 2;

    pub fn new(seed: u64, tag: u64) -> Self {
        Self { seed, tag }
    }

    pub fn rng(&self, step: usize, index: usize) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.tag.to_le_bytes());
        key[16..24].copy_from_slice(&(step as u64).to_le_bytes());
        key[24..].copy_from_slice(&(index as u64).to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }

    /// Standard normal vector in `R^d`.
    pub fn normal(&self, step: usize, index: usize, d: usize) -> Vec<f64> {
        let mut rng = self.rng(step, index);
        (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

/// Result of one KALE descent step from the state held by a [`DualProblem`].
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Particles after the update.
    pub source: ParticleCloud,
    /// Dual solution at the pre-step state.
    pub solution: DualSolution,
    pub witness: WitnessFunction,
    pub kale: f64,
    pub beta: f64,
    /// Mean of `‖(1 + λ) ∇h*(Y_i + β U_i)‖²` over particles.
    pub mean_sq_velocity: f64,
}

/// Velocity `(1 + λ) ∇h(Y_i + β U_i)` for every particle, as a `d × N` matrix.
fn kale_velocity(
    witness: &WitnessFunction,
    particles: &ParticleCloud,
    beta: f64,
    noise: &NoiseStream,
    step: usize,
) -> Result<DMatrix<f64>> {
    let d = particles.dim();
    let scale = 1.0 + witness.lambda();
    let mut v = DMatrix::zeros(d, particles.len());
    let mut z = vec![0.0; d];
    let mut g = vec![0.0; d];
    for i in 0..particles.len() {
        z.copy_from_slice(particles.point(i));
        // β = 0 draws nothing.
        if beta > 0.0 {
            for (zc, u) in z.iter_mut().zip(noise.normal(step, i, d)) {
                *zc += beta * u;
            }
        }
        witness.grad_into(&z, &mut g)?;
        for c in 0..d {
            v[(c, i)] = scale * g[c];
        }
    }
    Ok(v)
}

fn mean_sq_columns(v: &DMatrix<f64>) -> f64 {
    v.column_iter().map(|c| c.norm_squared()).sum::<f64>() / v.ncols() as f64
}

/// One step of KALE particle descent from `problem.source()`.
///
/// The step is taken even when the dual solve does not converge; callers
/// inspect `solution.status`.
pub fn kale_descent_step(
    problem: &DualProblem,
    cfg: &FlowConfig,
    warm_start: Option<&DVector<f64>>,
    step: usize,
    noise: &NoiseStream,
) -> Result<StepOutcome> {
    let solution = solve_dual(problem, &cfg.solver, warm_start)?;
    let witness = witness_from_solution(problem, &solution);
    let kale = kale_value(problem, &solution);
    let beta = cfg.noise.beta(step);
    let source = problem.source();
    let v = kale_velocity(&witness, source, beta, noise, step)?;
    let moved = source.points() - &v * cfg.gamma;
    Ok(StepOutcome {
        source: source.with_points(moved)?,
        solution,
        witness,
        kale,
        beta,
        mean_sq_velocity: mean_sq_columns(&v),
    })
}

/// One row of a flow trace.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub kale: f64,
    pub mmd2: f64,
    pub witness_norm2: f64,
    pub mean_sq_velocity: f64,
    pub solver_iters: usize,
    pub beta: f64,
    pub w2_to_reference: Option<f64>,
    pub solver_converged: bool,
}

/// Per-step records, `steps + 1` of them (step 0 included).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowTrace {
    pub records: Vec<StepRecord>,
}

impl FlowTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    /// Mean of the defined `w2_to_reference` values.
    pub fn mean_w2(&self) -> Option<f64> {
        let vals: Vec<f64> = self.records.iter().filter_map(|r| r.w2_to_reference).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn solver_failures(&self) -> usize {
        self.records.iter().filter(|r| !r.solver_converged).count()
    }
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub trace: FlowTrace,
    /// `(step, particles)` at step 0, every `snapshot_every` steps and the
    /// final step.
    pub snapshots: Vec<(usize, ParticleCloud)>,
    pub final_particles: ParticleCloud,
}

fn is_snapshot(step: usize, every: usize, last: usize) -> bool {
    step == 0 || step.is_multiple_of(every.max(1)) || step == last
}

/// Steps at which a run of `steps` steps keeps snapshots: 0, every multiple
/// of `every`, and the final step.
pub fn snapshot_steps(steps: usize, every: usize) -> Vec<usize> {
    (0..=steps).filter(|&s| is_snapshot(s, every, steps)).collect()
}

fn w2_to(reference: Option<&[ParticleCloud]>, step: usize, current: &ParticleCloud) -> Option<f64> {
    let r = reference?.get(step)?;
    if r.len() != current.len() || r.dim() != current.dim() {
        return None;
    }
    wasserstein2_exact(current, r).ok()
}

/// KALE particle descent for `cfg.steps` steps.
///
/// `reference`, when given, holds one cloud per step (e.g. a ULA or MMD run
/// from the same start) and fills `w2_to_reference`.
pub fn run_kale_flow(
    init: &ParticleCloud,
    target: &ParticleCloud,
    kernel: KernelSpec,
    cfg: &FlowConfig,
    reference: Option<&[ParticleCloud]>,
) -> Result<FlowRun> {
    cfg.validate()?;
    let mut problem = DualProblem::new(kernel, target, init, cfg.lambda)?;
    let noise = NoiseStream::new(cfg.seed, NoiseStream::KALE);
    let mut warm: Option<DVector<f64>> = None;
    let mut trace = FlowTrace::default();
    let mut snapshots = Vec::new();
    for step in 0..=cfg.steps {
        let current = problem.source().clone();
        if is_snapshot(step, cfg.snapshot_every, cfg.steps) {
            snapshots.push((step, current.clone()));
        }
        let w2 = w2_to(reference, step, &current);
        let mmd2 = problem.mmd_squared();
        if step < cfg.steps {
            let out = kale_descent_step(&problem, cfg, warm.as_ref(), step, &noise)?;
            trace.records.push(StepRecord {
                step,
                kale: out.kale,
                mmd2,
                witness_norm2: out.witness.norm2(),
                mean_sq_velocity: out.mean_sq_velocity,
                solver_iters: out.solution.iterations,
                beta: out.beta,
                w2_to_reference: w2,
                solver_converged: out.solution.converged(),
            });
            warm = Some(out.solution.f);
            problem.update_source(out.source)?;
        } else {
            let sol = solve_dual(&problem, &cfg.solver, warm.as_ref())?;
            let witness = witness_from_solution(&problem, &sol);
            let v = kale_velocity(&witness, &current, 0.0, &noise, step)?;
            trace.records.push(StepRecord {
                step,
                kale: kale_value(&problem, &sol),
                mmd2,
                witness_norm2: witness.norm2(),
                mean_sq_velocity: mean_sq_columns(&v),
                solver_iters: sol.iterations,
                beta: cfg.noise.beta(step),
                w2_to_reference: w2,
                solver_converged: sol.converged(),
            });
        }
    }
    Ok(FlowRun {
        trace,
        snapshots,
        final_particles: problem.source().clone(),
    })
}

/// `∇f_{P,Q}` at every source particle (`d × N`).
fn mmd_velocity(source: &ParticleCloud, target: &ParticleCloud, kernel: KernelSpec) -> Result<DMatrix<f64>> {
    let witness = WitnessFunction::mmd(kernel, source, target)?;
    let d = source.dim();
    let mut v = DMatrix::zeros(d, source.len());
    let mut g = vec![0.0; d];
    for i in 0..source.len() {
        witness.grad_into(source.point(i), &mut g)?;
        v.column_mut(i).copy_from_slice(&g);
    }
    Ok(v)
}

/// `Y ← Y - γ ∇f_{P,Q}(Y)`.
pub fn mmd_descent_step(
    source: &ParticleCloud,
    target: &ParticleCloud,
    kernel: KernelSpec,
    gamma: f64,
) -> Result<ParticleCloud> {
    source.check_same_dim(target)?;
    let v = mmd_velocity(source, target, kernel)?;
    source.with_points(source.points() - v * gamma)
}

/// MMD descent path: `steps + 1` clouds starting at `init`.
pub fn run_mmd_flow(
    init: &ParticleCloud,
    target: &ParticleCloud,
    kernel: KernelSpec,
    gamma: f64,
    steps: usize,
) -> Result<Vec<ParticleCloud>> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(invalid("gamma", "must be positive"));
    }
    let mut path = Vec::with_capacity(steps + 1);
    path.push(init.clone());
    for _ in 0..steps {
        let next = mmd_descent_step(path.last().expect("non-empty"), target, kernel, gamma)?;
        path.push(next);
    }
    Ok(path)
}

/// `Y ← Y + γ ∇log π(Y) + √(2γ) ξ`.
pub fn ula_step<G>(
    particles: &ParticleCloud,
    grad_log_target: &G,
    gamma: f64,
    noise: &NoiseStream,
    step: usize,
) -> Result<ParticleCloud>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    let d = particles.dim();
    let mut next = particles.points().clone();
    if gamma == 0.0 {
        return particles.with_points(next);
    }
    let amp = (2.0 * gamma).sqrt();
    for i in 0..particles.len() {
        let g = grad_log_target(particles.point(i));
        if g.len() != d {
            return Err(crate::Error::DimensionMismatch { expected: d, found: g.len() });
        }
        let xi = noise.normal(step, i, d);
        for c in 0..d {
            next[(c, i)] += gamma * g[c] + amp * xi[c];
        }
    }
    particles.with_points(next)
}

/// ULA path: `steps + 1` clouds starting at `init`.
pub fn run_ula<G>(
    init: &ParticleCloud,
    grad_log_target: &G,
    gamma: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<ParticleCloud>>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(invalid("gamma", "must be nonnegative"));
    }
    let noise = NoiseStream::new(seed, NoiseStream::ULA);
    let mut path = Vec::with_capacity(steps + 1);
    path.push(init.clone());
    for step in 0..steps {
        let next = ula_step(path.last().expect("non-empty"), grad_log_target, gamma, &noise, step)?;
        path.push(next);
    }
    Ok(path)
}

/// Which velocity a [`trace_path`] record reports.
#[derive(Debug, Clone, Copy)]
pub enum PathVelocity<'a, G> {
    Mmd,
    Langevin(&'a G),
}

/// KALE diagnostics along an externally generated path (MMD or ULA), so those
/// runs produce the same trace columns as a KALE flow.
pub fn trace_path<G>(
    path: &[ParticleCloud],
    target: &ParticleCloud,
    kernel: KernelSpec,
    lambda: f64,
    solver: &SolverOptions,
    velocity: PathVelocity<'_, G>,
    reference: Option<&[ParticleCloud]>,
) -> Result<FlowTrace>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    let mut trace = FlowTrace::default();
    let Some(first) = path.first() else {
        return Ok(trace);
    };
    let mut problem = DualProblem::new(kernel, target, first, lambda)?;
    let mut warm: Option<DVector<f64>> = None;
    for (step, cloud) in path.iter().enumerate() {
        if step > 0 {
            problem.update_source(cloud.clone())?;
        }
        let sol = solve_dual(&problem, solver, warm.as_ref())?;
        let witness = witness_from_solution(&problem, &sol);
        let msv = match velocity {
            PathVelocity::Mmd => mean_sq_columns(&mmd_velocity(cloud, target, kernel)?),
            PathVelocity::Langevin(g) => {
                (0..cloud.len())
                    .map(|i| g(cloud.point(i)).iter().map(|v| v * v).sum::<f64>())
                    .sum::<f64>()
                    / cloud.len() as f64
            }
        };
        trace.records.push(StepRecord {
            step,
            kale: kale_value(&problem, &sol),
            mmd2: problem.mmd_squared(),
            witness_norm2: witness.norm2(),
            mean_sq_velocity: msv,
            solver_iters: sol.iterations,
            beta: 0.0,
            w2_to_reference: w2_to(reference, step, cloud),
            solver_converged: sol.converged(),
        });
        warm = Some(sol.f);
    }
    Ok(trace)
}

/// Outcome of the noise-schedule check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCondition {
    /// `8 K2d β² / λ² · KALE`
    pub lhs: f64,
    /// Monte-Carlo estimate of `E ‖∇h*(y + β u)‖²`.
    pub rhs: f64,
    /// Standard error of `rhs`.
    pub rhs_std_err: f64,
    pub satisfied: bool,
}

/// Checks `8 K2d β²/λ² · KALE(P_n‖Q) ≤ E_{y∼P_n, u∼N(0,I)} ‖∇h*(y + βu)‖²` with
/// `mc_samples` draws per source particle. Diagnostic only.
pub fn noise_condition_diagnostic<R: Rng>(
    problem: &DualProblem,
    sol: &DualSolution,
    beta: f64,
    bounds: &KernelBounds,
    mc_samples: usize,
    rng: &mut R,
) -> Result<NoiseCondition> {
    if mc_samples == 0 {
        return Err(invalid("mc_samples", "must be at least 1"));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(invalid("beta", "must be nonnegative"));
    }
    let witness = witness_from_solution(problem, sol);
    let kale = kale_value(problem, sol);
    let lambda = problem.lambda();
    let source = problem.source();
    let d = source.dim();
    let mut z = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for i in 0..source.len() {
        for _ in 0..mc_samples {
            for (zc, y) in z.iter_mut().zip(source.point(i)) {
                let u: f64 = StandardNormal.sample(rng);
                *zc = y + beta * u;
            }
            witness.grad_into(&z, &mut g)?;
            let v: f64 = g.iter().map(|x| x * x).sum();
            sum += v;
            sum_sq += v * v;
            count += 1;
        }
    }
    let mean = sum / count as f64;
    let var = if count > 1 {
        ((sum_sq - count as f64 * mean * mean) / (count as f64 - 1.0)).max(0.0)
    } else {
        0.0
    };
    let lhs = 8.0 * bounds.k2d * beta * beta / (lambda * lambda) * kale;
    Ok(NoiseCondition {
        lhs,
        rhs: mean,
        rhs_std_err: (var / count as f64).sqrt(),
        satisfied: lhs <= mean,
    })
}

/// Bound `A / (B √N) · (e^{γ B n_max} - 1)` on the expected W2 gap between
/// the sample-based particle descent and its exact counterpart, with
///
/// ```text
/// A = √(2 K K1d (1 + e^{8K/λ})) / (4 √(K K1d) + K2d)
/// B = (1 + λ)(4 √(K K1d) + √K2d) / λ
/// ```
pub fn consistency_bound(
    n_max: usize,
    gamma: f64,
    lambda: f64,
    n: usize,
    bounds: &KernelBounds,
) -> Result<f64> {
    if !(gamma > 0.0 && lambda > 0.0) || n == 0 {
        return Err(invalid("consistency_bound", "gamma, lambda and N must be positive"));
    }
    let KernelBounds { k, k1d, k2d } = *bounds;
    let root = (k * k1d).sqrt();
    let a = (2.0 * k * k1d * (1.0 + (8.0 * k / lambda).exp())).sqrt() / (4.0 * root + k2d);
    let b = (1.0 + lambda) * (4.0 * root + k2d.sqrt()) / lambda;
    Ok(a / (b * (n as f64).sqrt()) * (gamma * b * n_max as f64).exp_m1())
}
