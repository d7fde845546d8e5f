//! Seeded generators for the planar experiment settings.
//!
//! Geometry constants are stand-ins for shapes that are only shown
//! graphically; they can be overridden by loading clouds from CSV.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

use crate::cloud::ParticleCloud;
use crate::error::{invalid, Result};

pub const RING_RADIUS: f64 = 1.0;
pub const RING_CENTERS: [[f64; 2]; 3] = [[0.0, 0.0], [2.5, 0.0], [5.0, 0.0]];
/// Source centred on the middle ring so every ring is within kernel reach.
pub const RING_SOURCE_MEAN: [f64; 2] = [2.5, 0.0];
pub const RING_SOURCE_STD: f64 = 0.5;

/// Heart `(x² + y² - 1)³ - x² y³ ≤ 0`, translated by this offset.
pub const HEART_OFFSET: [f64; 2] = [-4.5, 0.0];
/// Spiral `r = SPIRAL_A + SPIRAL_B θ` for `θ ∈ [0, SPIRAL_TURNS_RAD]`.
pub const SPIRAL_A: f64 = 0.1;
pub const SPIRAL_B: f64 = 0.15;
pub const SPIRAL_TURNS_RAD: f64 = 6.0 * PI;
pub const SPIRAL_HALF_WIDTH: f64 = 0.05;

pub const MOG_MEANS: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
pub const MOG_STD: f64 = 0.25;
pub const MOG_SOURCE_MEAN: [f64; 2] = [0.5, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioName {
    ThreeRings,
    ShapeTransfer,
    Mog4Corners,
    GaussianPair,
}

impl ScenarioName {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::ThreeRings => "three_rings",
            ScenarioName::ShapeTransfer => "shape_transfer",
            ScenarioName::Mog4Corners => "mog_4corners",
            ScenarioName::GaussianPair => "gaussian_pair",
        }
    }
}

impl std::str::FromStr for ScenarioName {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "three_rings" => ScenarioName::ThreeRings,
            "shape_transfer" => ScenarioName::ShapeTransfer,
            "mog_4corners" => ScenarioName::Mog4Corners,
            "gaussian_pair" => ScenarioName::GaussianPair,
            other => {
                return Err(invalid(
                    "scenario",
                    format!(
                        "unknown scenario `{other}` \
                         (three_rings|shape_transfer|mog_4corners|gaussian_pair)"
                    ),
                ))
            }
        })
    }
}

/// A named generator with its size and seed. `mean_gap` is only used by the
/// Gaussian pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub name: ScenarioName,
    pub n: usize,
    pub seed: u64,
    pub mean_gap: f64,
}

impl Scenario {
    /// `(source, target)` clouds.
    pub fn generate(&self) -> Result<(ParticleCloud, ParticleCloud)> {
        match self.name {
            ScenarioName::ThreeRings => three_rings(self.n, self.seed),
            ScenarioName::ShapeTransfer => shape_transfer(self.n, self.seed),
            ScenarioName::Mog4Corners => mog_4corners(self.n, self.seed).map(|(s, t, _)| (s, t)),
            ScenarioName::GaussianPair => gaussian_pair(self.n, self.mean_gap, self.seed),
        }
    }

    /// Target log-density, when the scenario has one.
    pub fn target_density(&self) -> Option<GaussianMixture> {
        match self.name {
            ScenarioName::Mog4Corners => Some(GaussianMixture::four_corners()),
            _ => None,
        }
    }
}

/// Isotropic Gaussian mixture in the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub means: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub std: f64,
}

impl GaussianMixture {
    pub fn four_corners() -> Self {
        Self {
            means: MOG_MEANS.to_vec(),
            weights: vec![0.25; 4],
            std: MOG_STD,
        }
    }

    fn log_components(&self, x: &[f64]) -> Vec<f64> {
        let v = self.std * self.std;
        self.means
            .iter()
            .zip(&self.weights)
            .map(|(m, w)| {
                let d2 = (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
                w.ln() - d2 / (2.0 * v) - (2.0 * PI * v).ln()
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let lc = self.log_components(x);
        let mx = lc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + lc.iter().map(|l| (l - mx).exp()).sum::<f64>().ln()
    }

    /// `∇ log π(x) = Σ_k r_k(x) (μ_k - x) / s²` with responsibilities `r_k`.
    pub fn grad_log_density(&self, x: &[f64]) -> Vec<f64> {
        let lc = self.log_components(x);
        let mx = lc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let r: Vec<f64> = lc.iter().map(|l| (l - mx).exp()).collect();
        let total: f64 = r.iter().sum();
        let v = self.std * self.std;
        let mut g = vec![0.0; 2];
        for (m, rk) in self.means.iter().zip(&r) {
            g[0] += rk / total * (m[0] - x[0]) / v;
            g[1] += rk / total * (m[1] - x[1]) / v;
        }
        g
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(2, n);
        for j in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = self.means.len() - 1;
            for (idx, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = idx;
                    break;
                }
            }
            for c in 0..2 {
                let z: f64 = StandardNormal.sample(rng);
                m[(c, j)] = self.means[k][c] + self.std * z;
            }
        }
        m
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    Ok(())
}

fn gaussian(n: usize, mean: [f64; 2], std: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(2, n, |c, _| {
        let z: f64 = StandardNormal.sample(rng);
        mean[c] + std * z
    })
}

/// Independent streams for the source and target of one scenario.
fn streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut s = ChaCha8Rng::seed_from_u64(seed);
    s.set_stream(1);
    let mut t = ChaCha8Rng::seed_from_u64(seed);
    t.set_stream(2);
    (s, t)
}

/// Target uniform on three circles of equal radius; source Gaussian nearby.
pub fn three_rings(n: usize, seed: u64) -> Result<(ParticleCloud, ParticleCloud)> {
    three_rings_with_source(n, seed, RING_SOURCE_MEAN, RING_SOURCE_STD)
}

/// [`three_rings`] with an explicit source Gaussian.
pub fn three_rings_with_source(
    n: usize,
    seed: u64,
    mean: [f64; 2],
    std: f64,
) -> Result<(ParticleCloud, ParticleCloud)> {
    check_n(n)?;
    if !(std.is_finite() && std > 0.0) {
        return Err(invalid("std", "must be positive"));
    }
    let (mut rs, mut rt) = streams(seed);
    let mut target = DMatrix::zeros(2, n);
    for j in 0..n {
        // Equal radii: every ring carries the same arc length.
        let ring = rt.random_range(0..RING_CENTERS.len());
        let theta = rt.random_range(0.0..2.0 * PI);
        target[(0, j)] = RING_CENTERS[ring][0] + RING_RADIUS * theta.cos();
        target[(1, j)] = RING_CENTERS[ring][1] + RING_RADIUS * theta.sin();
    }
    let source = gaussian(n, mean, std, &mut rs);
    Ok((ParticleCloud::new(source)?, ParticleCloud::new(target)?))
}

/// Distance from `p` to the nearest ring circle.
pub fn distance_to_rings(p: &[f64]) -> f64 {
    RING_CENTERS
        .iter()
        .map(|c| (((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt() - RING_RADIUS).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Implicit heart inequality, in untranslated coordinates.
pub fn inside_heart(x: f64, y: f64) -> bool {
    (x * x + y * y - 1.0).powi(3) - x * x * y.powi(3) <= 0.0
}

fn spiral_point(theta: f64) -> ([f64; 2], [f64; 2]) {
    let r = SPIRAL_A + SPIRAL_B * theta;
    let (s, c) = theta.sin_cos();
    let tx = SPIRAL_B * c - r * s;
    let ty = SPIRAL_B * s + r * c;
    let norm = (tx * tx + ty * ty).sqrt();
    ([r * c, r * s], [-ty / norm, tx / norm])
}

/// Cumulative arc length table of the spiral on a uniform `θ` grid.
fn spiral_arc_table(samples: usize) -> Vec<f64> {
    let speed = |t: f64| ((SPIRAL_A + SPIRAL_B * t).powi(2) + SPIRAL_B * SPIRAL_B).sqrt();
    let dt = SPIRAL_TURNS_RAD / samples as f64;
    let mut table = Vec::with_capacity(samples + 1);
    table.push(0.0);
    let mut acc = 0.0;
    for k in 0..samples {
        let t0 = k as f64 * dt;
        // Simpson on each cell
        acc += dt / 6.0 * (speed(t0) + 4.0 * speed(t0 + 0.5 * dt) + speed(t0 + dt));
        table.push(acc);
    }
    table
}

fn theta_at_arc(table: &[f64], s: f64) -> f64 {
    let samples = table.len() - 1;
    let dt = SPIRAL_TURNS_RAD / samples as f64;
    let k = table.partition_point(|v| *v <= s).clamp(1, samples) - 1;
    let frac = (s - table[k]) / (table[k + 1] - table[k]);
    (k as f64 + frac) * dt
}

/// Source uniform inside a heart, target uniform on a thickened spiral band
/// (uniform in arc length and in normal offset).
pub fn shape_transfer(n: usize, seed: u64) -> Result<(ParticleCloud, ParticleCloud)> {
    check_n(n)?;
    let (mut rs, mut rt) = streams(seed);
    let mut source = DMatrix::zeros(2, n);
    let mut j = 0;
    while j < n {
        let x = rs.random_range(-1.25..1.25);
        let y = rs.random_range(-1.25..1.35);
        if inside_heart(x, y) {
            source[(0, j)] = x + HEART_OFFSET[0];
            source[(1, j)] = y + HEART_OFFSET[1];
            j += 1;
        }
    }
    let table = spiral_arc_table(8192);
    let length = *table.last().expect("non-empty table");
    let mut target = DMatrix::zeros(2, n);
    for j in 0..n {
        let theta = theta_at_arc(&table, rt.random_range(0.0..length));
        let offset = rt.random_range(-SPIRAL_HALF_WIDTH..SPIRAL_HALF_WIDTH);
        let (c, nrm) = spiral_point(theta);
        target[(0, j)] = c[0] + offset * nrm[0];
        target[(1, j)] = c[1] + offset * nrm[1];
    }
    Ok((ParticleCloud::new(source)?, ParticleCloud::new(target)?))
}

/// Target from the four-corner mixture, source `N((0.5, 0.5), I)`.
pub fn mog_4corners(n: usize, seed: u64) -> Result<(ParticleCloud, ParticleCloud, GaussianMixture)> {
    check_n(n)?;
    let (mut rs, mut rt) = streams(seed);
    let mix = GaussianMixture::four_corners();
    let target = mix.sample(n, &mut rt);
    let source = gaussian(n, MOG_SOURCE_MEAN, 1.0, &mut rs);
    Ok((ParticleCloud::new(source)?, ParticleCloud::new(target)?, mix))
}

/// Source `N(0, I)`, target `N((mean_gap, 0), I)`.
pub fn gaussian_pair(n: usize, mean_gap: f64, seed: u64) -> Result<(ParticleCloud, ParticleCloud)> {
    check_n(n)?;
    if !mean_gap.is_finite() {
        return Err(invalid("mean_gap", "must be finite"));
    }
    let (mut rs, mut rt) = streams(seed);
    let source = gaussian(n, [0.0, 0.0], 1.0, &mut rs);
    let target = gaussian(n, [mean_gap, 0.0], 1.0, &mut rt);
    Ok((ParticleCloud::new(source)?, ParticleCloud::new(target)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rings_lie_on_circles_and_are_deterministic() {
        let (s, t) = three_rings(300, 7).unwrap();
        assert_eq!((s.len(), t.len()), (300, 300));
        assert_eq!((s.dim(), t.dim()), (2, 2));
        for i in 0..t.len() {
            assert!(distance_to_rings(t.point(i)) <= 1e-12);
        }
        assert_eq!(three_rings(300, 7).unwrap(), (s, t));
        assert_ne!(three_rings(300, 8).unwrap().1, three_rings(300, 7).unwrap().1);
    }

    #[test]
    fn ring_arc_density_is_uniform_per_octant() {
        let n = 200_000;
        let (_, t) = three_rings(n, 3).unwrap();
        let mut bins = [[0usize; 8]; 3];
        for i in 0..n {
            let p = t.point(i);
            let (ring, c) = RING_CENTERS
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let da = ((p[0] - a.1[0]).powi(2) + (p[1] - a.1[1]).powi(2)).sqrt();
                    let db = ((p[0] - b.1[0]).powi(2) + (p[1] - b.1[1]).powi(2)).sqrt();
                    (da - 1.0).abs().partial_cmp(&(db - 1.0).abs()).unwrap()
                })
                .unwrap();
            let angle = (p[1] - c[1]).atan2(p[0] - c[0]) + PI;
            let b = ((angle / (2.0 * PI) * 8.0) as usize).min(7);
            bins[ring][b] += 1;
        }
        let expect = n as f64 / 24.0;
        for ring in bins {
            for b in ring {
                assert!((b as f64 - expect).abs() / expect < 0.05, "{b} vs {expect}");
            }
        }
    }

    #[test]
    fn shapes_respect_their_constraints() {
        let (s, t) = shape_transfer(2000, 5).unwrap();
        assert_eq!((s.len(), t.len()), (2000, 2000));
        for i in 0..s.len() {
            let p = s.point(i);
            assert!(inside_heart(p[0] - HEART_OFFSET[0], p[1] - HEART_OFFSET[1]));
        }
        // Distance to a dense polyline of the spiral.
        let curve: Vec<[f64; 2]> = (0..=40_000)
            .map(|k| spiral_point(SPIRAL_TURNS_RAD * k as f64 / 40_000.0).0)
            .collect();
        for i in (0..t.len()).step_by(7) {
            let p = t.point(i);
            let d = curve
                .iter()
                .map(|c| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(d <= SPIRAL_HALF_WIDTH + 1e-3, "distance {d}");
        }
        assert_eq!(shape_transfer(2000, 5).unwrap(), (s, t));
    }

    #[test]
    fn spiral_arc_density_is_uniform_per_octant() {
        let n = 100_000;
        let (_, t) = shape_transfer(n, 9).unwrap();
        let table = spiral_arc_table(8192);
        let length = *table.last().unwrap();
        // Recover arc length from the polar angle of the band center.
        let mut bins = [0usize; 8];
        for i in 0..n {
            let p = t.point(i);
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let mut theta = (r - SPIRAL_A) / SPIRAL_B;
            // unwrap to the branch matching the polar angle
            let phi = p[1].atan2(p[0]).rem_euclid(2.0 * PI);
            let turns = ((theta - phi) / (2.0 * PI)).round();
            theta = (phi + 2.0 * PI * turns).clamp(0.0, SPIRAL_TURNS_RAD);
            let k = ((theta / SPIRAL_TURNS_RAD) * 8192.0) as usize;
            let s = table[k.min(8192)];
            bins[((s / length * 8.0) as usize).min(7)] += 1;
        }
        let expect = n as f64 / 8.0;
        for b in bins {
            assert!((b as f64 - expect).abs() / expect < 0.05, "{b} vs {expect}");
        }
    }

    #[test]
    fn mixture_moments_and_gradient() {
        let (s, t, mix) = mog_4corners(10_000, 2).unwrap();
        assert_eq!((s.len(), t.len()), (10_000, 10_000));
        let mean = t.points().column_mean();
        // per-coordinate std of the mixture: sqrt(0.25 + 0.25²)
        let se = (0.25 + 0.0625f64).sqrt() / (10_000f64).sqrt();
        assert!((mean[0] - 0.5).abs() < 3.0 * se && (mean[1] - 0.5).abs() < 3.0 * se);

        let h = 1e-6;
        for x in [[0.3, 0.7], [1.4, -0.2], [0.5, 0.5], [-2.0, 3.0]] {
            let g = mix.grad_log_density(&x);
            for c in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[c] += h;
                xm[c] -= h;
                let fd = (mix.log_density(&xp) - mix.log_density(&xm)) / (2.0 * h);
                assert!((fd - g[c]).abs() <= 1e-6 * (1.0 + g[c].abs()), "{fd} vs {}", g[c]);
            }
        }
        let (s240, t240, _) = mog_4corners(240, 1).unwrap();
        assert_eq!((s240.len(), t240.len()), (240, 240));
    }

    #[test]
    fn gaussian_pair_determinism() {
        assert_eq!(gaussian_pair(50, 1.0, 4).unwrap(), gaussian_pair(50, 1.0, 4).unwrap());
        let (s, t) = gaussian_pair(2000, 0.0, 4).unwrap();
        let k = crate::KernelSpec::new(1.0).unwrap();
        assert!(crate::mmd_squared(&s, &t, &k).unwrap() < 5e-3);
        assert!(gaussian_pair(0, 1.0, 1).is_err());
    }

    #[test]
    fn scenario_names_parse() {
        for name in ["three_rings", "shape_transfer", "mog_4corners", "gaussian_pair"] {
            let parsed: ScenarioName = name.parse().unwrap();
            assert_eq!(parsed.as_str(), name);
        }
        assert!("rings".parse::<ScenarioName>().is_err());
    }
}
