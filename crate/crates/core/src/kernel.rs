//! Gaussian kernel `k(x, y) = exp(-‖x - y‖² / (2σ²))`.
//!
//! Point sets are `d × N` column matrices, matching [`ParticleCloud::points`].
//!
//! [`ParticleCloud::points`]: crate::ParticleCloud::points

use nalgebra::{DMatrix, DVector};

use crate::cloud::ParticleCloud;
use crate::error::{invalid, Error, Result};

/// Bandwidth of the Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    sigma: f64,
}

impl KernelSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid("sigma", format!("must be a positive finite number, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `1 / (2σ²)`, the factor in front of the squared distance.
    #[inline]
    fn inv_two_var(&self) -> f64 {
        0.5 / (self.sigma * self.sigma)
    }

    /// Scalar kernel evaluation.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 * self.inv_two_var()).exp()
    }

    /// Accumulates `scale * ∇_z k(x, z)` into `out` and returns `k(x, z)`.
    #[inline]
    pub(crate) fn accumulate_grad(&self, x: &[f64], z: &[f64], scale: f64, out: &mut [f64]) -> f64 {
        let k = self.eval(x, z);
        let c = scale * k / (self.sigma * self.sigma);
        for ((o, a), b) in out.iter_mut().zip(x).zip(z) {
            *o += c * (a - b);
        }
        k
    }
}

/// Theoretical RKHS bounds of the kernel:
/// `k(x,x) ≤ K`, `Σ_i ‖∂_i k_x‖² ≤ K1d`, `Σ_{i,j} ‖∂_i∂_j k_x‖² ≤ K2d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelBounds {
    pub k: f64,
    pub k1d: f64,
    pub k2d: f64,
}

/// The three Gram matrices of a target/source pair.
///
/// `xx` is `N × N` over target atoms, `xy` is `N × M` (target by source) and
/// `yy` is `M × M` over source atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct GramBundle {
    pub xx: DMatrix<f64>,
    pub xy: DMatrix<f64>,
    pub yy: DMatrix<f64>,
}

impl GramBundle {
    pub fn new(spec: &KernelSpec, target: &ParticleCloud, source: &ParticleCloud) -> Result<Self> {
        target.check_same_dim(source)?;
        Ok(Self {
            xx: gram_symmetric(spec, target.points()),
            xy: gram(spec, target.points(), source.points())?,
            yy: gram_symmetric(spec, source.points()),
        })
    }
}

fn column_sq_norms(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.norm_squared()))
}

/// Gram matrix `G[i, j] = k(a_i, b_j)` between the columns of `a` (`d × N`)
/// and `b` (`d × M`).
///
/// Squared distances use `‖a‖² + ‖b‖² - 2 a·b`, clamped at zero. Passing the
/// same matrix twice takes the symmetric path, so the result is exactly
/// symmetric with a unit diagonal.
pub fn gram(spec: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: b.nrows(),
        });
    }
    if a.nrows() == 0 {
        return Err(invalid("points", "dimension must be at least 1"));
    }
    if std::ptr::eq(a, b) {
        return Ok(gram_symmetric(spec, a));
    }
    let na = column_sq_norms(a);
    let nb = column_sq_norms(b);
    let mut g = a.tr_mul(b);
    let c = spec.inv_two_var();
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let d2 = (na[i] + nb[j] - 2.0 * g[(i, j)]).max(0.0);
            g[(i, j)] = (-d2 * c).exp();
        }
    }
    Ok(g)
}

/// Symmetric Gram matrix of one point set.
pub fn gram_symmetric(spec: &KernelSpec, a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    let na = column_sq_norms(a);
    let mut g = a.tr_mul(a);
    let c = spec.inv_two_var();
    for j in 0..n {
        g[(j, j)] = 1.0;
        for i in 0..j {
            let d2 = (na[i] + na[j] - 2.0 * g[(i, j)]).max(0.0);
            let v = (-d2 * c).exp();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// `∇_z k(x, z) = (x - z) / σ² · k(x, z)`.
pub fn kernel_grad(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    if x.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: z.len(),
        });
    }
    let mut out = vec![0.0; z.len()];
    spec.accumulate_grad(x, z, 1.0, &mut out);
    Ok(out)
}

/// RKHS bounds of the Gaussian kernel in dimension `d`.
///
/// With `r = x - y` the kernel is a product of `φ(r_l) = exp(-r_l²/(2σ²))`,
/// and `φ''(0) = -1/σ²`, `φ''''(0) = 3/σ⁴`. Hence `‖∂_i k_x‖² = 1/σ²` per
/// coordinate, and `‖∂_i∂_j k_x‖² = ∂_{r_i}²∂_{r_j}² k(0)` equals `3/σ⁴` when
/// `i = j` and `1/σ⁴` otherwise, giving `K2d = d(d + 2)/σ⁴`.
pub fn kernel_bounds(spec: &KernelSpec, d: usize) -> Result<KernelBounds> {
    if d == 0 {
        return Err(invalid("d", "dimension must be at least 1"));
    }
    let s2 = spec.sigma * spec.sigma;
    let d = d as f64;
    Ok(KernelBounds {
        k: 1.0,
        k1d: d / s2,
        k2d: d * (d + 2.0) / (s2 * s2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, d: usize, n: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(d, n, |_, _| rng.random_range(-scale..scale))
    }

    fn direct_kernel(x: &[f64], y: &[f64], sigma: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..x.len() {
            s += (x[i] - y[i]).powi(2);
        }
        (-s / (2.0 * sigma * sigma)).exp()
    }

    #[test]
    fn unit_diagonal_and_known_value() {
        let spec = KernelSpec::new(1.0).unwrap();
        let a = DMatrix::from_column_slice(2, 1, &[0.0, 0.0]);
        assert_eq!(gram(&spec, &a, &a).unwrap()[(0, 0)], 1.0);

        let sigma = 0.7;
        let spec = KernelSpec::new(sigma).unwrap();
        let a = DMatrix::from_column_slice(1, 1, &[0.0]);
        let b = DMatrix::from_column_slice(1, 1, &[sigma * 2f64.sqrt()]);
        let g = gram(&spec, &a, &b).unwrap();
        assert!((g[(0, 0)] - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = KernelSpec::new(0.8).unwrap();
        let a = random_points(&mut rng, 2, 3, 1.0);
        let b = random_points(&mut rng, 2, 4, 1.0);
        let g = gram(&spec, &a, &b).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let o = direct_kernel(a.column(i).as_slice(), b.column(j).as_slice(), 0.8);
                assert!((g[(i, j)] - o).abs() <= 1e-14, "{} vs {}", g[(i, j)], o);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let spec = KernelSpec::new(1.0).unwrap();
        let a = DMatrix::zeros(2, 3);
        let b = DMatrix::zeros(3, 3);
        assert!(matches!(gram(&spec, &a, &b), Err(Error::DimensionMismatch { .. })));
        assert!(kernel_grad(&spec, &[0.0], &[0.0, 1.0]).is_err());
        assert!(KernelSpec::new(0.0).is_err());
        assert!(KernelSpec::new(f64::NAN).is_err());
    }

    #[test]
    fn self_gram_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [5usize, 20, 50] {
            let a = random_points(&mut rng, 3, n, 1.5);
            let spec = KernelSpec::new(rng.random_range(0.2..2.0)).unwrap();
            let g = gram(&spec, &a, &a).unwrap();
            assert_eq!(g, g.transpose());
            assert!(g.iter().all(|v| *v > 0.0 && *v <= 1.0));
            let min = SymmetricEigen::new(g).eigenvalues.min();
            assert!(min >= -1e-10 * n as f64, "min eigenvalue {min}");
        }
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = KernelSpec::new(0.5).unwrap();
        let a = random_points(&mut rng, 2, 6, 1.0);
        let b = random_points(&mut rng, 2, 7, 1.0);
        let shift = [3.25, -1.5];
        let shifted = |m: &DMatrix<f64>| {
            let mut m = m.clone();
            for mut c in m.column_iter_mut() {
                c[0] += shift[0];
                c[1] += shift[1];
            }
            m
        };
        let g0 = gram(&spec, &a, &b).unwrap();
        let g1 = gram(&spec, &shifted(&a), &shifted(&b)).unwrap();
        assert!((g0 - g1).amax() <= 1e-12);
    }

    #[test]
    fn gradient_closed_form() {
        let spec = KernelSpec::new(1.0).unwrap();
        assert_eq!(kernel_grad(&spec, &[0.3, 0.2], &[0.3, 0.2]).unwrap(), vec![0.0, 0.0]);
        let g = kernel_grad(&spec, &[1.0], &[0.0]).unwrap();
        assert!((g[0] - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let spec = KernelSpec::new(rng.random_range(0.5..2.0)).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = kernel_grad(&spec, &x, &z).unwrap();
            let h = 1e-6;
            let xm = DMatrix::from_column_slice(3, 1, &x);
            for l in 0..3 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[l] += h;
                zm[l] -= h;
                let kp = gram(&spec, &xm, &DMatrix::from_column_slice(3, 1, &zp)).unwrap()[(0, 0)];
                let km = gram(&spec, &xm, &DMatrix::from_column_slice(3, 1, &zm)).unwrap()[(0, 0)];
                let fd = (kp - km) / (2.0 * h);
                let rel = (fd - g[l]).abs() / g.iter().map(|v| v.abs()).fold(1e-12, f64::max);
                assert!(rel <= 1e-6, "coordinate {l}: fd {fd}, analytic {}", g[l]);
            }
        }
    }

    #[test]
    fn bounds_values() {
        let b = kernel_bounds(&KernelSpec::new(1.0).unwrap(), 1).unwrap();
        assert_eq!(b.k, 1.0);
        let b = kernel_bounds(&KernelSpec::new(0.5).unwrap(), 2).unwrap();
        assert!((b.k1d - 8.0).abs() < 1e-12);
        assert!(kernel_bounds(&KernelSpec::new(1.0).unwrap(), 0).is_err());
    }

    /// `Σ_{i,j} ∂_{x_i}∂_{x_j}∂_{y_i}∂_{y_j} k(x, y)` at `x = y` by nested
    /// central differences of the scalar kernel.
    fn fd_k2d(sigma: f64, d: usize) -> f64 {
        let h = 1e-2;
        let base = vec![0.1; d];
        let mut total = 0.0;
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for s in 0..16u32 {
                    let signs = [(s & 1) != 0, (s & 2) != 0, (s & 4) != 0, (s & 8) != 0];
                    let mut x = base.clone();
                    let mut y = base.clone();
                    x[i] += if signs[0] { h } else { -h };
                    x[j] += if signs[1] { h } else { -h };
                    y[i] += if signs[2] { h } else { -h };
                    y[j] += if signs[3] { h } else { -h };
                    let sign: f64 = signs.iter().map(|b| if *b { 1.0 } else { -1.0 }).product();
                    acc += sign * direct_kernel(&x, &y, sigma);
                }
                total += acc / (2.0 * h).powi(4);
            }
        }
        total
    }

    #[test]
    fn k2d_matches_fourth_derivative_oracle() {
        for (sigma, d) in [(1.0, 1usize), (1.0, 2), (0.8, 3), (1.3, 2)] {
            let b = kernel_bounds(&KernelSpec::new(sigma).unwrap(), d).unwrap();
            let fd = fd_k2d(sigma, d);
            assert!((fd - b.k2d).abs() / b.k2d < 1e-3, "sigma={sigma} d={d}: {fd} vs {}", b.k2d);
        }
        // σ = 1, d = 2
        assert!((kernel_bounds(&KernelSpec::new(1.0).unwrap(), 2).unwrap().k2d - 8.0).abs() < 1e-12);
    }
}
