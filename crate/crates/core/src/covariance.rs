//! Finite-time covariances `Q_t` and the stationary covariance `Q_inf`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::linalg;
use crate::model::SpectralModel;
use crate::quadrature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMethod {
    Sylvester,
    Quadrature,
}

#[derive(Debug, Clone)]
pub struct CovariancePack {
    pub q_inf: DMatrix<f64>,
    pub lyap_residual: f64,
    pub method: CovarianceMethod,
}

const GL_POINTS: usize = 16;
const HURWITZ_TOL: f64 = 1e-12;

/// Composite Gauss-Legendre approximation of `int_0^t e^{sA} Q e^{sA^T} ds`.
///
/// Panels are integrated independently and summed in panel order, so the
/// result does not depend on the thread count.
pub fn covariance_finite(model: &SpectralModel, t: f64, panels: usize) -> DMatrix<f64> {
    assert!(t > 0.0 && panels >= 1, "covariance_finite needs t > 0 and panels >= 1");
    let h = t / panels as f64;
    let a = &model.drift;
    let q = &model.diffusion;
    let nodes = quadrature::legendre_unit(GL_POINTS);

    let panel_sums: Vec<DMatrix<f64>> = (0..panels)
        .into_par_iter()
        .map(|p| {
            let left = p as f64 * h;
            let mut acc = DMatrix::zeros(model.dim, model.dim);
            for &(x, w) in &nodes {
                let s = left + h * x;
                let e = linalg::expm(&(a * s));
                acc += (&e * q * e.transpose()) * (h * w);
            }
            acc
        })
        .collect();
    let mut total = DMatrix::zeros(model.dim, model.dim);
    for s in &panel_sums {
        total += s;
    }
    linalg::symmetrize(&total)
}

/// Stationary covariance from the Lyapunov equation `A X + X A^T = -Q`.
pub fn covariance_infinity(model: &SpectralModel) -> Result<CovariancePack> {
    let abscissa = linalg::spectral_abscissa(&model.drift);
    if abscissa >= -HURWITZ_TOL {
        return Err(LabError::NotHurwitz(abscissa));
    }
    let q_inf = linalg::solve_lyapunov(&model.drift, &model.diffusion)?;
    let lyap_residual = lyapunov_residual(model, &q_inf);
    Ok(CovariancePack {
        q_inf,
        lyap_residual,
        method: CovarianceMethod::Sylvester,
    })
}

/// `||Q_inf A^T + A Q_inf + Q||_F`.
pub fn lyapunov_residual(model: &SpectralModel, q_inf: &DMatrix<f64>) -> f64 {
    let a = &model.drift;
    (q_inf * a.transpose() + a * q_inf + &model.diffusion).norm()
}
