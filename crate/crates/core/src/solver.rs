//! The empirical KALE dual problem.
//!
//! With target atoms `X` (weights `q`, `N` atoms) and source atoms `Y`
//! (weights `p`, `M` atoms) the inner problem is
//!
//! ```text
//! J(f) = Σ_i q_i (f_i log f_i - f_i + 1)
//!      + 1/(2λ) ‖Σ_i q_i f_i k(X_i, ·) - Σ_j p_j k(Y_j, ·)‖²_H,   f > 0,
//! ```
//!
//! which is strictly convex whenever every `q_i > 0`. At the optimum the
//! witness function is
//!
//! ```text
//! h*(z) = (1/λ) [Σ_j p_j k(Y_j, z) - Σ_i q_i f*_i k(X_i, z)]
//! ```
//!
//! and `log f*_i = h*(X_i)`. The divergence is `KALE = (1 + λ) J(f*)`.
//!
//! Solvers work in `u = log f`, so positivity is structural.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::cloud::ParticleCloud;
use crate::error::{invalid, Error, Result};
use crate::kernel::{gram, gram_symmetric, GramBundle, KernelSpec};

/// Armijo sufficient-decrease constant.
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverMethod {
    Newton,
    CoordinateDescent,
    GradientDescent,
}

impl SolverMethod {
    /// Iteration cap used when none is configured: Newton iterations,
    /// coordinate-descent sweeps, or gradient steps.
    pub fn default_max_iter(self) -> usize {
        match self {
            SolverMethod::Newton => 100,
            SolverMethod::CoordinateDescent => 500,
            SolverMethod::GradientDescent => 20_000,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SolverMethod::Newton => "newton",
            SolverMethod::CoordinateDescent => "cd",
            SolverMethod::GradientDescent => "gd",
        }
    }
}

impl std::str::FromStr for SolverMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newton" => Ok(SolverMethod::Newton),
            "cd" | "coordinate_descent" => Ok(SolverMethod::CoordinateDescent),
            "gd" | "gradient_descent" => Ok(SolverMethod::GradientDescent),
            other => Err(invalid("solver", format!("unknown solver `{other}` (newton|cd|gd)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub method: SolverMethod,
    /// Tolerance on the Euclidean norm of [`dual_gradient`].
    pub tol: f64,
    pub max_iter: usize,
}

impl SolverOptions {
    pub fn new(method: SolverMethod) -> Self {
        Self {
            method,
            tol: 1e-9,
            max_iter: method.default_max_iter(),
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self::new(SolverMethod::Newton)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Converged,
    /// Iteration budget exhausted; the solution holds the best iterate.
    MaxIterations,
    /// No step satisfied the sufficient-decrease condition (typically the
    /// tolerance is below what floating point can resolve).
    LineSearchFailed,
}

/// Optimal density-ratio values `f*(X_i)` with solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub f: DVector<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub solver: SolverMethod,
    pub status: SolverStatus,
}

impl DualSolution {
    pub fn converged(&self) -> bool {
        self.status == SolverStatus::Converged
    }
}

/// Empirical dual problem for a target cloud `X` and source cloud `Y`.
#[derive(Debug, Clone)]
pub struct DualProblem {
    kernel: KernelSpec,
    target: ParticleCloud,
    source: ParticleCloud,
    grams: GramBundle,
    lambda: f64,
    /// `K_XY p`
    kxy_p: DVector<f64>,
    /// `pᵀ K_YY p`
    p_kyy_p: f64,
}

impl DualProblem {
    pub fn new(
        kernel: KernelSpec,
        target: &ParticleCloud,
        source: &ParticleCloud,
        lambda: f64,
    ) -> Result<Self> {
        target.check_same_dim(source)?;
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(invalid("lambda", format!("must be positive and finite, got {lambda}")));
        }
        let grams = GramBundle::new(&kernel, target, source)?;
        let mut prob = Self {
            kernel,
            target: target.clone(),
            source: source.clone(),
            grams,
            lambda,
            kxy_p: DVector::zeros(0),
            p_kyy_p: 0.0,
        };
        prob.refresh_source_terms();
        Ok(prob)
    }

    /// Replace the source cloud, recomputing only the source-dependent Gram
    /// matrices (`K_XX` is kept).
    pub fn update_source(&mut self, source: ParticleCloud) -> Result<()> {
        self.target.check_same_dim(&source)?;
        self.grams.xy = gram(&self.kernel, self.target.points(), source.points())?;
        self.grams.yy = gram_symmetric(&self.kernel, source.points());
        self.source = source;
        self.refresh_source_terms();
        Ok(())
    }

    fn refresh_source_terms(&mut self) {
        let p = self.source.weights();
        self.kxy_p = &self.grams.xy * p;
        self.p_kyy_p = p.dot(&(&self.grams.yy * p));
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn target(&self) -> &ParticleCloud {
        &self.target
    }

    pub fn source(&self) -> &ParticleCloud {
        &self.source
    }

    pub fn grams(&self) -> &GramBundle {
        &self.grams
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Number of dual variables (target atoms).
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Squared MMD between source and target from the cached Gram matrices.
    pub fn mmd_squared(&self) -> f64 {
        let q = self.q();
        (q.dot(&(&self.grams.xx * q)) - 2.0 * q.dot(&self.kxy_p) + self.p_kyy_p).max(0.0)
    }

    fn q(&self) -> &DVector<f64> {
        self.target.weights()
    }

    fn check_f(&self, f: &DVector<f64>) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: f.len(),
            });
        }
        if let Some((i, v)) = f.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("f[{i}] = {v} must be strictly positive")));
        }
        Ok(())
    }

    /// Objective and `K_XX (q ⊙ f)` at `f`, with `ln f` supplied by the caller.
    fn eval(&self, f: &DVector<f64>, log_f: &DVector<f64>) -> (f64, DVector<f64>) {
        let q = self.q();
        let a = q.component_mul(f);
        let kxx_a = &self.grams.xx * &a;
        let mut entropy = 0.0;
        for i in 0..f.len() {
            entropy += q[i] * (f[i] * log_f[i] - f[i] + 1.0);
        }
        let quad = (a.dot(&kxx_a) - 2.0 * a.dot(&self.kxy_p) + self.p_kyy_p).max(0.0);
        (entropy + quad / (2.0 * self.lambda), kxx_a)
    }

    fn gradient_from(&self, log_f: &DVector<f64>, kxx_a: &DVector<f64>) -> DVector<f64> {
        let q = self.q();
        DVector::from_fn(log_f.len(), |i, _| {
            q[i] * (log_f[i] + (kxx_a[i] - self.kxy_p[i]) / self.lambda)
        })
    }
}

/// `J(f)`; the RKHS norm is expanded through the Gram matrices.
pub fn dual_objective(prob: &DualProblem, f: &DVector<f64>) -> Result<f64> {
    prob.check_f(f)?;
    Ok(prob.eval(f, &f.map(f64::ln)).0)
}

/// `∂J/∂f_i = q_i log f_i + (q_i/λ) [(K_XX diag(q) f)_i - (K_XY p)_i]`.
pub fn dual_gradient(prob: &DualProblem, f: &DVector<f64>) -> Result<DVector<f64>> {
    prob.check_f(f)?;
    let log_f = f.map(f64::ln);
    let (_, kxx_a) = prob.eval(f, &log_f);
    Ok(prob.gradient_from(&log_f, &kxx_a))
}

/// `∇²J(f) = diag(q / f) + (1/λ) diag(q) K_XX diag(q)`.
pub fn dual_hessian(prob: &DualProblem, f: &DVector<f64>) -> Result<DMatrix<f64>> {
    prob.check_f(f)?;
    let q = prob.q();
    let n = prob.len();
    let mut h = DMatrix::from_fn(n, n, |i, j| q[i] * prob.grams.xx[(i, j)] * q[j] / prob.lambda);
    for i in 0..n {
        h[(i, i)] += q[i] / f[i];
    }
    Ok(h)
}

/// State of an iterate in log coordinates.
struct Iterate {
    u: DVector<f64>,
    f: DVector<f64>,
    objective: f64,
    /// Sum of the magnitudes of the terms of `objective`; sets its round-off.
    magnitude: f64,
    kxx_a: DVector<f64>,
    grad: DVector<f64>,
}

impl Iterate {
    fn at(prob: &DualProblem, u: DVector<f64>) -> Self {
        let f = u.map(f64::exp);
        let (objective, kxx_a) = prob.eval(&f, &u);
        let grad = prob.gradient_from(&u, &kxx_a);
        let q = prob.q();
        let a = q.component_mul(&f);
        let entropy: f64 = (0..f.len()).map(|i| q[i] * (f[i] * u[i].abs() + f[i] + 1.0)).sum();
        let quad = a.dot(&kxx_a).abs() + 2.0 * a.dot(&prob.kxy_p).abs() + prob.p_kyy_p;
        let magnitude = entropy + quad / (2.0 * prob.lambda);
        Self { u, f, objective, magnitude, kxx_a, grad }
    }

    fn grad_norm(&self) -> f64 {
        self.grad.norm()
    }

    /// Gradient with respect to `u`: `∂J/∂u_i = f_i ∂J/∂f_i`.
    fn grad_u(&self) -> DVector<f64> {
        self.grad.component_mul(&self.f)
    }

    fn finish(self, solver: SolverMethod, iterations: usize, status: SolverStatus) -> DualSolution {
        let grad_norm = self.grad_norm();
        DualSolution {
            f: self.f,
            objective: self.objective,
            grad_norm,
            iterations,
            solver,
            status,
        }
    }
}

/// Solve the dual problem.
///
/// Non-convergence is not an error: the returned solution carries the best
/// iterate and a non-converged [`SolverStatus`].
pub fn solve_dual(
    prob: &DualProblem,
    opts: &SolverOptions,
    warm_start: Option<&DVector<f64>>,
) -> Result<DualSolution> {
    if !(opts.tol > 0.0) {
        return Err(invalid("tol", format!("must be positive, got {}", opts.tol)));
    }
    let u0 = match warm_start {
        Some(f0) => {
            prob.check_f(f0)?;
            f0.map(f64::ln)
        }
        None => DVector::zeros(prob.len()),
    };
    let start = Iterate::at(prob, u0);
    Ok(match opts.method {
        SolverMethod::Newton => newton(prob, start, opts),
        SolverMethod::CoordinateDescent => coordinate_descent(prob, start, opts),
        SolverMethod::GradientDescent => gradient_descent(prob, start, opts),
    })
}

/// Hessian of `J` in log coordinates:
/// `diag(f) ∇²J diag(f) + diag(f ⊙ ∇J)`.
fn hessian_u(prob: &DualProblem, it: &Iterate, clamp_curvature: bool) -> DMatrix<f64> {
    let q = prob.q();
    let n = prob.len();
    let a = q.component_mul(&it.f);
    let mut h = DMatrix::from_fn(n, n, |i, j| a[i] * prob.grams.xx[(i, j)] * a[j] / prob.lambda);
    for i in 0..n {
        let first_order = it.f[i] * it.grad[i];
        h[(i, i)] += a[i] + if clamp_curvature { first_order.max(0.0) } else { first_order };
    }
    h
}

fn newton_direction(prob: &DualProblem, it: &Iterate) -> DVector<f64> {
    let g = it.grad_u();
    // Away from the optimum the log reparameterization can lose convexity;
    // fall back to the curvature-clamped matrix, then to a ridge.
    let full = hessian_u(prob, it, false);
    if let Some(c) = Cholesky::new(full) {
        return -c.solve(&g);
    }
    let mut h = hessian_u(prob, it, true);
    if let Some(c) = Cholesky::new(h.clone()) {
        return -c.solve(&g);
    }
    let scale = h.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut ridge = 1e-12 * scale;
    loop {
        for i in 0..h.nrows() {
            h[(i, i)] += ridge;
        }
        if let Some(c) = Cholesky::new(h.clone()) {
            return -c.solve(&g);
        }
        ridge *= 10.0;
    }
}

/// Backtracking line search along `dir` in log coordinates. Returns the
/// accepted iterate, or `None` when no step gives sufficient decrease.
fn armijo(
    prob: &DualProblem,
    it: &Iterate,
    dir: &DVector<f64>,
    mut step: f64,
) -> Option<(Iterate, f64)> {
    let slope = it.grad_u().dot(dir);
    if !(slope < 0.0) {
        return None;
    }
    let noise_floor = 64.0 * f64::EPSILON * it.magnitude;
    for _ in 0..MAX_BACKTRACK {
        let u = &it.u + dir * step;
        if u.iter().all(|v| v.is_finite() && *v < 700.0) {
            let cand = Iterate::at(prob, u);
            // Once the predicted decrease is below the round-off in J the
            // sufficient-decrease test is meaningless; ask for a smaller
            // gradient instead.
            let accept = if -step * slope > noise_floor {
                cand.objective <= it.objective + ARMIJO_C * step * slope
            } else {
                cand.objective <= it.objective + noise_floor && cand.grad_norm() < it.grad_norm()
            };
            if cand.objective.is_finite() && accept {
                return Some((cand, step));
            }
        }
        step *= 0.5;
    }
    None
}

fn newton(prob: &DualProblem, mut it: Iterate, opts: &SolverOptions) -> DualSolution {
    for k in 0..opts.max_iter {
        if it.grad_norm() <= opts.tol {
            return it.finish(SolverMethod::Newton, k, SolverStatus::Converged);
        }
        let dir = newton_direction(prob, &it);
        match armijo(prob, &it, &dir, 1.0) {
            Some((next, _)) => it = next,
            None => return it.finish(SolverMethod::Newton, k, SolverStatus::LineSearchFailed),
        }
    }
    let status = if it.grad_norm() <= opts.tol {
        SolverStatus::Converged
    } else {
        SolverStatus::MaxIterations
    };
    it.finish(SolverMethod::Newton, opts.max_iter, status)
}

fn gradient_descent(prob: &DualProblem, mut it: Iterate, opts: &SolverOptions) -> DualSolution {
    let mut step = 1.0;
    for k in 0..opts.max_iter {
        if it.grad_norm() <= opts.tol {
            return it.finish(SolverMethod::GradientDescent, k, SolverStatus::Converged);
        }
        let dir = -it.grad_u();
        match armijo(prob, &it, &dir, step) {
            Some((next, accepted)) => {
                it = next;
                step = accepted * 2.0;
            }
            None => {
                return it.finish(SolverMethod::GradientDescent, k, SolverStatus::LineSearchFailed)
            }
        }
    }
    let status = if it.grad_norm() <= opts.tol {
        SolverStatus::Converged
    } else {
        SolverStatus::MaxIterations
    };
    it.finish(SolverMethod::GradientDescent, opts.max_iter, status)
}

/// Root of `s + α e^s + β = 0` (strictly increasing, convex), by safeguarded
/// Newton from `s0`.
fn solve_coordinate(alpha: f64, beta: f64, s0: f64) -> f64 {
    let mut s = s0;
    for _ in 0..200 {
        let e = alpha * s.exp();
        let psi = s + e + beta;
        let step = (psi / (1.0 + e)).clamp(-30.0, 30.0);
        s -= step;
        if step.abs() <= 1e-15 * (1.0 + s.abs()) {
            break;
        }
    }
    s
}

/// Cyclic coordinate descent with an exact one-dimensional minimization per
/// coordinate. One iteration is one full sweep.
fn coordinate_descent(prob: &DualProblem, it: Iterate, opts: &SolverOptions) -> DualSolution {
    let q = prob.q().clone();
    let n = prob.len();
    let kxx = &prob.grams.xx;
    let Iterate { mut u, mut kxx_a, .. } = it;
    let mut a = q.component_mul(&u.map(f64::exp));
    let mut current = Iterate::at(prob, u.clone());
    for sweep in 0..opts.max_iter {
        if current.grad_norm() <= opts.tol {
            return current.finish(SolverMethod::CoordinateDescent, sweep, SolverStatus::Converged);
        }
        for i in 0..n {
            if q[i] <= 0.0 {
                continue;
            }
            let kii = kxx[(i, i)];
            let rest = kxx_a[i] - kii * a[i] - prob.kxy_p[i];
            let alpha = q[i] * kii / prob.lambda;
            let beta = rest / prob.lambda;
            let s = solve_coordinate(alpha, beta, u[i]);
            let a_new = q[i] * s.exp();
            let delta = a_new - a[i];
            if delta != 0.0 {
                kxx_a.axpy(delta, &kxx.column(i), 1.0);
            }
            a[i] = a_new;
            u[i] = s;
        }
        // Recompute from scratch so round-off in the incremental update
        // does not accumulate across sweeps.
        current = Iterate::at(prob, u.clone());
        kxx_a = current.kxx_a.clone();
    }
    let status = if current.grad_norm() <= opts.tol {
        SolverStatus::Converged
    } else {
        SolverStatus::MaxIterations
    };
    current.finish(SolverMethod::CoordinateDescent, opts.max_iter, status)
}

/// `KALE = (1 + λ) J(f*)`.
pub fn kale_value(prob: &DualProblem, sol: &DualSolution) -> f64 {
    (1.0 + prob.lambda) * sol.objective
}

/// Kernel expansion
/// `h(z) = (1/λ) [Σ_j b_j k(Y_j, z) - Σ_i a_i k(X_i, z)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WitnessFunction {
    kernel: KernelSpec,
    lambda: f64,
    x_atoms: DMatrix<f64>,
    x_coef: DVector<f64>,
    y_atoms: DMatrix<f64>,
    y_coef: DVector<f64>,
    norm2: f64,
}

impl WitnessFunction {
    /// Explicit expansion; `‖h‖²_H` is computed from the atoms' Gram matrices.
    pub fn new(
        kernel: KernelSpec,
        lambda: f64,
        x_atoms: DMatrix<f64>,
        x_coef: DVector<f64>,
        y_atoms: DMatrix<f64>,
        y_coef: DVector<f64>,
    ) -> Result<Self> {
        if x_atoms.nrows() != y_atoms.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x_atoms.nrows(),
                found: y_atoms.nrows(),
            });
        }
        if x_coef.len() != x_atoms.ncols() || y_coef.len() != y_atoms.ncols() {
            return Err(invalid("coefficients", "one coefficient per atom is required"));
        }
        let kxx = gram_symmetric(&kernel, &x_atoms);
        let kyy = gram_symmetric(&kernel, &y_atoms);
        let kxy = gram(&kernel, &x_atoms, &y_atoms)?;
        let norm2 = witness_norm2(&kxx, &kxy, &kyy, &x_coef, &y_coef, lambda);
        Ok(Self { kernel, lambda, x_atoms, x_coef, y_atoms, y_coef, norm2 })
    }

    /// The MMD witness `μ_P - μ_Q` for source `P` and target `Q`.
    pub fn mmd(kernel: KernelSpec, source: &ParticleCloud, target: &ParticleCloud) -> Result<Self> {
        Self::new(
            kernel,
            1.0,
            target.points().clone(),
            target.weights().clone(),
            source.points().clone(),
            source.weights().clone(),
        )
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.x_atoms.nrows()
    }

    /// `‖h‖²_H`.
    pub fn norm2(&self) -> f64 {
        self.norm2
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: z.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        self.check_dim(z)?;
        let mut s = 0.0;
        for (j, y) in self.y_atoms.column_iter().enumerate() {
            s += self.y_coef[j] * self.kernel.eval(y.as_slice(), z);
        }
        for (i, x) in self.x_atoms.column_iter().enumerate() {
            s -= self.x_coef[i] * self.kernel.eval(x.as_slice(), z);
        }
        Ok(s / self.lambda)
    }

    pub fn grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; z.len()];
        self.grad_into(z, &mut out)?;
        Ok(out)
    }

    pub(crate) fn grad_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dim(z)?;
        out.iter_mut().for_each(|o| *o = 0.0);
        let inv = 1.0 / self.lambda;
        for (j, y) in self.y_atoms.column_iter().enumerate() {
            self.kernel.accumulate_grad(y.as_slice(), z, inv * self.y_coef[j], out);
        }
        for (i, x) in self.x_atoms.column_iter().enumerate() {
            self.kernel.accumulate_grad(x.as_slice(), z, -inv * self.x_coef[i], out);
        }
        Ok(())
    }
}

fn witness_norm2(
    kxx: &DMatrix<f64>,
    kxy: &DMatrix<f64>,
    kyy: &DMatrix<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let v = a.dot(&(kxx * a)) - 2.0 * a.dot(&(kxy * b)) + b.dot(&(kyy * b));
    v.max(0.0) / (lambda * lambda)
}

/// `h*` from a dual solution: coefficients `q_i f*_i` on target atoms and
/// `p_j` on source atoms.
pub fn witness_from_solution(prob: &DualProblem, sol: &DualSolution) -> WitnessFunction {
    let a = prob.q().component_mul(&sol.f);
    let b = prob.source.weights().clone();
    let norm2 = witness_norm2(&prob.grams.xx, &prob.grams.xy, &prob.grams.yy, &a, &b, prob.lambda);
    WitnessFunction {
        kernel: prob.kernel,
        lambda: prob.lambda,
        x_atoms: prob.target.points().clone(),
        x_coef: a,
        y_atoms: prob.source.points().clone(),
        y_coef: b,
        norm2,
    }
}
