//! Functional frames whose images under `Q_inf` are orthonormal in the
//! Cameron-Martin inner product `<Q_inf x, y>`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{LabError, Result};

/// What happened to one seed during orthogonalization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GramStep {
    pub seed_index: usize,
    /// H_inf-norm of the seed after removing earlier directions, relative to
    /// the seed's own H_inf-norm.
    pub relative_residual: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct ThetaBasis {
    /// `N x n`; column `j` holds the coordinates of `f*_j`.
    pub frame: DMatrix<f64>,
    /// `Q_inf F`: column `j` represents `e_j`.
    pub images: DMatrix<f64>,
    pub gram_log: Vec<GramStep>,
}

/// Seeds with relative residual below this are linear combinations of the
/// directions already produced and are skipped.
pub const SKIP_TOL: f64 = 1e-12;

impl ThetaBasis {
    pub fn width(&self) -> usize {
        self.frame.ncols()
    }

    /// Wraps an arbitrary frame without orthonormalizing it. Hypothesis checks
    /// are congruence invariant, so raw frames are admissible there.
    pub fn from_frame(q_inf: &DMatrix<f64>, frame: DMatrix<f64>) -> Result<Self> {
        if frame.nrows() != q_inf.nrows() {
            return Err(LabError::DimensionMismatch(format!(
                "frame has {} rows, Q_inf is {}x{}",
                frame.nrows(),
                q_inf.nrows(),
                q_inf.ncols()
            )));
        }
        Ok(ThetaBasis {
            images: q_inf * &frame,
            frame,
            gram_log: Vec::new(),
        })
    }

    /// The first `n` columns as a basis of its own.
    pub fn truncate(&self, n: usize) -> ThetaBasis {
        ThetaBasis {
            frame: self.frame.columns(0, n).into_owned(),
            images: self.images.columns(0, n).into_owned(),
            gram_log: self.gram_log.clone(),
        }
    }
}

/// Canonical coordinate vectors `e_1, ..., e_N` as seeds.
pub fn canonical_seeds(dim: usize) -> Vec<DVector<f64>> {
    (0..dim)
        .map(|i| {
            let mut v = DVector::zeros(dim);
            v[i] = 1.0;
            v
        })
        .collect()
}

/// Modified Gram-Schmidt in the inner product `<Q_inf x, y>`, stopping once
/// `n` directions are accepted.
pub fn gram_schmidt_theta(q_inf: &DMatrix<f64>, seeds: &[DVector<f64>], n: usize) -> Result<ThetaBasis> {
    let dim = q_inf.nrows();
    let inner = |x: &DVector<f64>, y: &DVector<f64>| (q_inf * x).dot(y);
    let mut frame: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut log = Vec::new();
    for (idx, seed) in seeds.iter().enumerate() {
        if frame.len() == n {
            break;
        }
        if seed.len() != dim {
            return Err(LabError::DimensionMismatch(format!(
                "seed {idx} has length {}, expected {dim}",
                seed.len()
            )));
        }
        let seed_norm = inner(seed, seed).max(0.0).sqrt();
        let mut v = seed.clone();
        for f in &frame {
            let c = inner(&v, f);
            v.axpy(-c, f, 1.0);
        }
        // one reorthogonalization pass keeps ill-conditioned Q_inf honest
        for f in &frame {
            let c = inner(&v, f);
            v.axpy(-c, f, 1.0);
        }
        let norm = inner(&v, &v).max(0.0).sqrt();
        let relative = if seed_norm > 0.0 { norm / seed_norm } else { 0.0 };
        let accepted = relative >= SKIP_TOL;
        log.push(GramStep {
            seed_index: idx,
            relative_residual: relative,
            accepted,
        });
        if accepted {
            frame.push(v / norm);
        }
    }
    if frame.len() < n {
        return Err(LabError::InsufficientSeedSpan {
            requested: n,
            found: frame.len(),
        });
    }
    let frame = DMatrix::from_columns(&frame);
    Ok(ThetaBasis {
        images: q_inf * &frame,
        frame,
        gram_log: log,
    })
}

/// Theta-coordinates `(<x, f*_1>, ..., <x, f*_n>)` of `P_n x`.
pub fn project_pn(basis: &ThetaBasis, x: &DVector<f64>) -> DVector<f64> {
    basis.frame.tr_mul(x)
}

/// `F^T Q_inf F`: covariance of the coordinate image of the invariant measure.
pub fn pushforward_covariance(basis: &ThetaBasis, q_inf: &DMatrix<f64>) -> DMatrix<f64> {
    basis.frame.transpose() * q_inf * &basis.frame
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_normalization() {
        let q = DMatrix::from_element(1, 1, 0.5);
        let b = gram_schmidt_theta(&q, &canonical_seeds(1), 1).unwrap();
        assert_relative_eq!(b.frame[(0, 0)], 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(b.images[(0, 0)], 2f64.sqrt() / 2.0, epsilon = 1e-15);
        assert_relative_eq!(pushforward_covariance(&b, &q)[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn diagonal_covariance_gives_diagonal_frame() {
        let d = [0.5, 0.25, 2.0, 4.0];
        let q = DMatrix::from_diagonal(&DVector::from_row_slice(&d));
        let b = gram_schmidt_theta(&q, &canonical_seeds(4), 3).unwrap();
        for j in 0..3 {
            for i in 0..4 {
                let expect = if i == j { 1.0 / d[i].sqrt() } else { 0.0 };
                assert_relative_eq!(b.frame[(i, j)], expect, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn dependent_seeds_are_skipped() {
        let q = DMatrix::identity(2, 2);
        let seeds = vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![2.0, 0.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        ];
        let b = gram_schmidt_theta(&q, &seeds, 2).unwrap();
        assert_eq!(b.gram_log.iter().filter(|s| !s.accepted).count(), 1);
        assert!(!b.gram_log[1].accepted);
        assert_relative_eq!(b.frame[(1, 1)], 1.0, epsilon = 1e-15);
        let err = gram_schmidt_theta(&q, &seeds[..2], 2).unwrap_err();
        assert!(err.to_string().contains("insufficient seed span"));
    }

    #[test]
    fn projection_of_images() {
        let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 0.5]);
        let b = gram_schmidt_theta(&q, &canonical_seeds(3), 3).unwrap();
        let e1 = b.images.column(0).into_owned();
        let p = project_pn(&b, &e1);
        assert_relative_eq!(p[0], 1.0, epsilon = 1e-13);
        assert!(p[1].abs() < 1e-13 && p[2].abs() < 1e-13);
        assert_eq!(project_pn(&b, &DVector::zeros(3)), DVector::zeros(3));
    }

    #[test]
    fn unnormalized_frame_is_detected() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.125]));
        let raw = ThetaBasis::from_frame(&q, DMatrix::identity(2, 2)).unwrap();
        let cov = pushforward_covariance(&raw, &q);
        assert_eq!(cov, q);
    }
}
