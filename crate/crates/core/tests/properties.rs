use kale_core::scenarios::gaussian_pair;
use kale_core::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(seed: u64, n: usize, d: usize, shift: f64) -> ParticleCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ParticleCloud::new(DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0) + shift)).unwrap()
}

fn kale(kernel: KernelSpec, target: &ParticleCloud, source: &ParticleCloud, lambda: f64) -> f64 {
    let prob = DualProblem::new(kernel, target, source, lambda).unwrap();
    let sol = solve_dual(&prob, &SolverOptions::default(), None).unwrap();
    assert!(sol.converged());
    kale_value(&prob, &sol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kale_is_bounded_by_scaled_mmd(
        seed in 0u64..10_000,
        n in 1usize..25,
        m in 1usize..25,
        shift in 0.0f64..2.0,
        log_lambda in -2.0f64..3.0,
    ) {
        let lambda = 10f64.powf(log_lambda);
        let kernel = KernelSpec::new(0.8).unwrap();
        let t = cloud(seed, n, 2, 0.0);
        let s = cloud(seed + 1, m, 2, shift);
        let k = kale(kernel, &t, &s, lambda);
        let mmd2 = mmd_squared(&s, &t, &kernel).unwrap();
        prop_assert!(k >= 0.0);
        prop_assert!(k <= (1.0 + lambda) / (2.0 * lambda) * mmd2 * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn kale_is_translation_invariant(seed in 0u64..10_000, n in 2usize..20, tx in -5.0f64..5.0, ty in -5.0f64..5.0) {
        let kernel = KernelSpec::new(0.7).unwrap();
        let t = cloud(seed, n, 2, 0.0);
        let s = cloud(seed + 7, n, 2, 0.5);
        let a = kale(kernel, &t, &s, 0.3);
        let b = kale(kernel, &t.translated(&[tx, ty]).unwrap(), &s.translated(&[tx, ty]).unwrap(), 0.3);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
    }

    #[test]
    fn kale_ignores_atom_order(seed in 0u64..10_000, n in 2usize..15) {
        let kernel = KernelSpec::new(0.7).unwrap();
        let t = cloud(seed, n, 2, 0.0);
        let s = cloud(seed + 3, n, 2, 0.4);
        let mut rev = t.points().clone();
        for i in 0..n {
            rev.set_column(i, &t.points().column(n - 1 - i));
        }
        let a = kale(kernel, &t, &s, 1.0);
        let b = kale(kernel, &ParticleCloud::new(rev).unwrap(), &s, 1.0);
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1e-12));
    }

    #[test]
    fn flow_trace_has_one_row_per_step(seed in 0u64..1000, steps in 0usize..6) {
        let t = cloud(seed, 6, 2, 0.0);
        let s = cloud(seed + 1, 6, 2, 1.0);
        let mut cfg = FlowConfig::new(0.5, steps);
        cfg.noise = NoiseSchedule::Constant(0.1);
        cfg.seed = seed;
        let run = run_kale_flow(&s, &t, KernelSpec::new(0.8).unwrap(), &cfg, None).unwrap();
        prop_assert_eq!(run.trace.len(), steps + 1);
        for (i, r) in run.trace.records.iter().enumerate() {
            prop_assert_eq!(r.step, i);
            prop_assert!(r.w2_to_reference.is_none());
        }
        prop_assert_eq!(run.snapshots.first().map(|s| s.0), Some(0));
        prop_assert_eq!(run.snapshots.last().map(|s| s.0), Some(steps));
    }
}

#[test]
fn identical_gaussians_have_small_mmd() {
    let (s, t) = gaussian_pair(2000, 0.0, 5).unwrap();
    let mmd2 = mmd_squared(&s, &t, &KernelSpec::new(1.0).unwrap()).unwrap();
    assert!(mmd2 < 5e-3, "mmd2 {mmd2}");
}

/// KALE estimated from independent samples of size n, 4n and 16n: the gap
/// between successive sizes should roughly halve.
#[test]
fn kale_sample_gap_shrinks_like_inverse_root_n() {
    let kernel = KernelSpec::new(1.0).unwrap();
    let estimate = |n: usize, seed: u64| {
        let (s, t) = gaussian_pair(n, 1.0, seed).unwrap();
        kale(kernel, &t, &s, 1.0)
    };
    let (mut small, mut large) = (0.0, 0.0);
    for seed in 0..10 {
        let (k1, k4, k16) = (estimate(25, seed), estimate(100, seed + 100), estimate(400, seed + 200));
        small += (k1 - k4).abs();
        large += (k4 - k16).abs();
    }
    let ratio = small / large;
    assert!((1.2..=3.5).contains(&ratio), "gap ratio {ratio}");
}

#[test]
fn reference_of_different_size_leaves_w2_undefined() {
    let t = cloud(1, 8, 2, 0.0);
    let s = cloud(2, 8, 2, 1.0);
    let other = vec![cloud(3, 5, 2, 0.0); 4];
    let cfg = FlowConfig::new(0.5, 3);
    let run = run_kale_flow(&s, &t, KernelSpec::new(0.8).unwrap(), &cfg, Some(&other)).unwrap();
    assert!(run.trace.records.iter().all(|r| r.w2_to_reference.is_none()));

    // A reference shorter than the run covers only its own steps.
    let short = run_mmd_flow(&s, &t, KernelSpec::new(0.8).unwrap(), 1e-3, 1).unwrap();
    let run = run_kale_flow(&s, &t, KernelSpec::new(0.8).unwrap(), &cfg, Some(&short)).unwrap();
    let defined: Vec<bool> = run.trace.records.iter().map(|r| r.w2_to_reference.is_some()).collect();
    assert_eq!(defined, vec![true, true, false, false]);
    assert_eq!(run.trace.records[0].w2_to_reference, Some(0.0));
}
