//! # kale-core
//!
//! The KALE divergence between weighted point clouds, and the particle
//! gradient flow it induces.
//!
//! KALE restricts the Fenchel dual of the KL divergence to a Gaussian RKHS and
//! penalizes the RKHS norm of the test function with weight `λ`. For empirical
//! measures the inner problem is a strongly convex problem in `N` variables
//! (one density-ratio value per target atom), solved here by Newton's method,
//! cyclic coordinate descent or gradient descent.
//!
//! Small `λ` recovers the KL divergence, large `λ` recovers half the squared
//! MMD. The optimal witness function `h*` drives the particle flow: every
//! source particle moves along `-(1 + λ) ∇h*`.
//!
//! ## Modules
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`kernel`] | Gaussian kernel, Gram matrices, kernel gradients and norm bounds |
//! | [`solver`] | The empirical dual problem, its solvers, the witness function |
//! | [`flows`] | KALE particle descent, noise injection, MMD descent, ULA |
//! | [`metrics`] | Squared MMD, exact Wasserstein-2, discrete KL |
//! | [`scenarios`] | Seeded generators for the planar experiments |
//!
//! ## Quick start
//!
//! ```
//! use kale_core::{DualProblem, KernelSpec, ParticleCloud, SolverOptions, solve_dual, kale_value};
//!
//! let target = ParticleCloud::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
//! let source = ParticleCloud::from_rows(&[vec![0.0, 0.5], vec![1.0, 0.5]]).unwrap();
//! let kernel = KernelSpec::new(0.5).unwrap();
//! let problem = DualProblem::new(kernel, &target, &source, 0.1).unwrap();
//! let sol = solve_dual(&problem, &SolverOptions::default(), None).unwrap();
//! assert!(sol.converged());
//! assert!(kale_value(&problem, &sol) > 0.0);
//! ```

pub mod cloud;
pub mod error;
pub mod flows;
pub mod kernel;
pub mod metrics;
pub mod scenarios;
pub mod solver;

pub use cloud::ParticleCloud;
pub use error::{Error, Result};
pub use flows::{
    consistency_bound, default_gamma, kale_descent_step, mmd_descent_step,
    noise_condition_diagnostic, run_kale_flow, run_mmd_flow, run_ula, snapshot_steps, trace_path, ula_step,
    FlowConfig, FlowRun, FlowTrace, NoiseCondition, NoiseSchedule, NoiseStream, PathVelocity, StepOutcome,
    StepRecord,
};
pub use kernel::{gram, kernel_bounds, kernel_grad, GramBundle, KernelBounds, KernelSpec};
pub use metrics::{discrete_kl, mmd_squared, wasserstein2_exact};
pub use scenarios::{GaussianMixture, Scenario, ScenarioName};
pub use solver::{
    dual_gradient, dual_hessian, dual_objective, kale_value, solve_dual, witness_from_solution,
    DualProblem, DualSolution, SolverMethod, SolverOptions, SolverStatus, WitnessFunction,
};

pub use nalgebra::{DMatrix, DVector};
