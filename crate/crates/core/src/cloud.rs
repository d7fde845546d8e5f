//! Weighted point clouds (empirical measures).

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Tolerance on `Σ w_i = 1` for explicit weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// `N` points in `R^d` with nonnegative weights summing to one.
///
/// Points are stored column-wise: `points()` is a `d × N` matrix whose
/// column `i` is the `i`-th point, so each point is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    points: DMatrix<f64>,
    weights: DVector<f64>,
    uniform: bool,
}

impl ParticleCloud {
    /// Uniformly weighted cloud from a `d × N` column matrix.
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        let n = points.ncols();
        if n == 0 {
            return Err(invalid("points", "cloud must contain at least one point"));
        }
        if points.nrows() == 0 {
            return Err(invalid("points", "dimension must be at least 1"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("point coordinates must be finite".into()));
        }
        Ok(Self {
            points,
            weights: DVector::from_element(n, 1.0 / n as f64),
            uniform: true,
        })
    }

    /// Cloud with explicit weights. Weights must be nonnegative and sum to one
    /// within [`WEIGHT_SUM_TOL`].
    pub fn with_weights(points: DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        let mut cloud = Self::new(points)?;
        if weights.len() != cloud.len() {
            return Err(Error::DimensionMismatch {
                expected: cloud.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("weights", "weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(invalid("weights", format!("weights sum to {total}, expected 1")));
        }
        cloud.weights = weights;
        cloud.uniform = false;
        Ok(cloud)
    }

    /// Uniform cloud from one vector per point.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.len(),
            });
        }
        let mut m = DMatrix::zeros(d, rows.len());
        for (j, r) in rows.iter().enumerate() {
            m.column_mut(j).copy_from_slice(r);
        }
        Self::new(m)
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    /// `d × N` matrix of points (one column per point).
    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points.as_slice()[i * d..(i + 1) * d]
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// True when every weight equals `1/N` within [`WEIGHT_SUM_TOL`].
    pub fn is_uniform(&self) -> bool {
        if self.uniform {
            return true;
        }
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - u).abs() <= WEIGHT_SUM_TOL)
    }

    /// Whether weights were supplied explicitly (affects CSV output).
    pub fn has_explicit_weights(&self) -> bool {
        !self.uniform
    }

    /// Replace the point positions, keeping the weights.
    pub fn with_points(&self, points: DMatrix<f64>) -> Result<Self> {
        if points.shape() != self.points.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: points.ncols(),
            });
        }
        Ok(Self {
            points,
            weights: self.weights.clone(),
            uniform: self.uniform,
        })
    }

    /// Translate every point by `shift`.
    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: shift.len(),
            });
        }
        let mut points = self.points.clone();
        for mut col in points.column_iter_mut() {
            for (c, s) in col.iter_mut().zip(shift) {
                *c += s;
            }
        }
        self.with_points(points)
    }

    pub(crate) fn check_same_dim(&self, other: &ParticleCloud) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_weights() {
        let pts = DMatrix::from_column_slice(1, 2, &[0.0, 1.0]);
        assert!(ParticleCloud::with_weights(pts.clone(), DVector::from_vec(vec![0.7, 0.7])).is_err());
        assert!(ParticleCloud::with_weights(pts.clone(), DVector::from_vec(vec![1.5, -0.5])).is_err());
        assert!(ParticleCloud::with_weights(pts, DVector::from_vec(vec![0.25, 0.75])).is_ok());
    }

    #[test]
    fn rows_must_agree_in_dimension() {
        let err = ParticleCloud::from_rows(&[vec![0.0, 1.0], vec![2.0]]).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 2, found: 1 });
        assert!(ParticleCloud::from_rows(&[]).is_err());
    }

    #[test]
    fn point_slices_are_columns() {
        let c = ParticleCloud::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(c.point(1), &[3.0, 4.0]);
        assert_eq!(c.dim(), 2);
        assert!(c.is_uniform());
    }
}
