//! Evaluation metrics between point clouds.

use crate::cloud::ParticleCloud;
use crate::error::{Error, Result};
use crate::kernel::{gram, gram_symmetric, KernelSpec};

/// Squared MMD `wᴬᵀK_AA wᴬ - 2 wᴬᵀK_AB wᴮ + wᴮᵀK_BB wᴮ`, clamped at zero.
pub fn mmd_squared(a: &ParticleCloud, b: &ParticleCloud, kernel: &KernelSpec) -> Result<f64> {
    a.check_same_dim(b)?;
    let wa = a.weights();
    let wb = b.weights();
    let kaa = gram_symmetric(kernel, a.points());
    let kbb = gram_symmetric(kernel, b.points());
    let kab = gram(kernel, a.points(), b.points())?;
    let v = wa.dot(&(&kaa * wa)) - 2.0 * wa.dot(&(&kab * wb)) + wb.dot(&(&kbb * wb));
    Ok(v.max(0.0))
}

/// Exact Wasserstein-2 distance between two uniformly weighted clouds of the
/// same size, via an optimal assignment on squared Euclidean costs.
pub fn wasserstein2_exact(a: &ParticleCloud, b: &ParticleCloud) -> Result<f64> {
    a.check_same_dim(b)?;
    if a.len() != b.len() {
        return Err(Error::Unsupported(format!(
            "exact W2 needs equal cloud sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !a.is_uniform() || !b.is_uniform() {
        return Err(Error::Unsupported("exact W2 needs uniform weights".into()));
    }
    let n = a.len();
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| {
            (0..n).map(move |j| {
                a.point(i).iter().zip(b.point(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
            })
        })
        .collect();
    let assignment = min_cost_assignment(n, &cost);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Hungarian algorithm (shortest augmenting paths with potentials) on a dense
/// row-major `n × n` cost matrix. Returns the column assigned to each row.
pub fn min_cost_assignment(n: usize, cost: &[f64]) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n × n");
    // 1-based internally; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    assignment
}

/// `Σ_{p_i > 0} p_i log(p_i / q_i)`; `+∞` when `p` puts mass where `q` has none.
pub fn discrete_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> ParticleCloud {
        ParticleCloud::new(DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn brute_w2(a: &ParticleCloud, b: &ParticleCloud) -> f64 {
        let n = a.len();
        (0..n)
            .permutations(n)
            .map(|perm| {
                perm.iter()
                    .enumerate()
                    .map(|(i, &j)| {
                        a.point(i).iter().zip(b.point(j)).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
                    })
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
            / n as f64
    }

    #[test]
    fn mmd_basic_cases() {
        let k = KernelSpec::new(0.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = cloud(&mut rng, 7, 2);
        assert_eq!(mmd_squared(&a, &a, &k).unwrap(), 0.0);

        let r: f64 = 0.9;
        let x = ParticleCloud::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let y = ParticleCloud::from_rows(&[vec![r, 0.0]]).unwrap();
        let expect = 2.0 - 2.0 * (-r * r / (2.0 * 0.36)).exp();
        assert!((mmd_squared(&x, &y, &k).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn mmd_matches_double_loop() {
        let k = KernelSpec::new(0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = cloud(&mut rng, 10, 2);
        let w: Vec<f64> = (0..10).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        let b = ParticleCloud::with_weights(
            cloud(&mut rng, 10, 2).points().clone(),
            DVector::from_iterator(10, w.iter().map(|v| v / s)),
        )
        .unwrap();
        let mut o = 0.0;
        for (c1, c2, sign) in [(&a, &a, 1.0), (&a, &b, -2.0), (&b, &b, 1.0)] {
            for i in 0..c1.len() {
                for j in 0..c2.len() {
                    o += sign * c1.weights()[i] * c2.weights()[j] * k.eval(c1.point(i), c2.point(j));
                }
            }
        }
        let v = mmd_squared(&a, &b, &k).unwrap();
        assert!((v - o).abs() <= 1e-12);
        assert!((mmd_squared(&b, &a, &k).unwrap() - v).abs() <= 1e-15);
    }

    #[test]
    fn w2_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = cloud(&mut rng, 9, 3);
        assert!(wasserstein2_exact(&a, &a).unwrap() < 1e-15);
        let x = ParticleCloud::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let y = ParticleCloud::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert!((wasserstein2_exact(&x, &y).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn w2_rejects_unsupported_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = cloud(&mut rng, 3, 2);
        let b = cloud(&mut rng, 4, 2);
        assert!(matches!(wasserstein2_exact(&a, &b), Err(Error::Unsupported(_))));
        let w = ParticleCloud::with_weights(
            a.points().clone(),
            DVector::from_vec(vec![0.5, 0.25, 0.25]),
        )
        .unwrap();
        assert!(matches!(wasserstein2_exact(&a, &w), Err(Error::Unsupported(_))));
    }

    #[test]
    fn w2_matches_permutation_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let n = rng.random_range(1..=6);
            let a = cloud(&mut rng, n, 2);
            let b = cloud(&mut rng, n, 2);
            let exact = wasserstein2_exact(&a, &b).unwrap();
            let brute = brute_w2(&a, &b).sqrt();
            assert!((exact - brute).abs() <= 1e-12, "n={n}: {exact} vs {brute}");
        }
    }

    #[test]
    fn w2_translation_of_both_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = cloud(&mut rng, 12, 2);
        let b = cloud(&mut rng, 12, 2);
        let w = wasserstein2_exact(&a, &b).unwrap();
        let ws = wasserstein2_exact(
            &a.translated(&[1.5, -0.5]).unwrap(),
            &b.translated(&[1.5, -0.5]).unwrap(),
        )
        .unwrap();
        assert!((w - ws).abs() <= 1e-12);
    }

    #[test]
    fn kl_cases() {
        assert_eq!(discrete_kl(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = discrete_kl(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert_eq!(discrete_kl(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), f64::INFINITY);
        assert!(discrete_kl(&[1.0], &[0.5, 0.5]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn kl_is_nonnegative(raw in proptest::collection::vec((0.0f64..1.0, 0.01f64..1.0), 1..12)) {
            let sp: f64 = raw.iter().map(|r| r.0).sum::<f64>().max(1e-12);
            let sq: f64 = raw.iter().map(|r| r.1).sum();
            let p: Vec<f64> = raw.iter().map(|r| r.0 / sp).collect();
            let q: Vec<f64> = raw.iter().map(|r| r.1 / sq).collect();
            proptest::prop_assert!(discrete_kl(&p, &q).unwrap() >= -1e-15);
        }

        #[test]
        fn w2_metric_axioms(seed in 0u64..1000, n in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = cloud(&mut rng, n, 2);
            let b = cloud(&mut rng, n, 2);
            let c = cloud(&mut rng, n, 2);
            let ab = wasserstein2_exact(&a, &b).unwrap();
            let ba = wasserstein2_exact(&b, &a).unwrap();
            let bc = wasserstein2_exact(&b, &c).unwrap();
            let ac = wasserstein2_exact(&a, &c).unwrap();
            proptest::prop_assert!((ab - ba).abs() <= 1e-10);
            proptest::prop_assert!(ac <= ab + bc + 1e-10);
            proptest::prop_assert!(ab >= 0.0);
        }
    }
}
