//! Dirichlet-Laplacian preset: drift `diag(-(pi i)^2)`, diffusion with a
//! coupled 2x2 leading block and identity tail, plus its closed forms.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::model::{Block2, DiffusionSpec, DriftSpec, ModelConfig, SpectralModel, Tail};

/// Which tail values the closed forms use.
///
/// `Consistent` solves the Lyapunov equation: `Q_inf` tail `1/(2 i^2 pi^2)`
/// and `B` tail `-1/2`. `Printed` reproduces the published table: `Q_inf`
/// tail `1/(i^2 pi^2)` and `B` tail `-1`. Only the closed-form matrices
/// differ; the model itself is the same.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TailConvention {
    #[default]
    Consistent,
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Admissibility {
    pub admissible: bool,
    /// `(9/25) q2^2 (q1 q3 + q2^2) / (q1 q3 - q2^2)^2`, admissible when `< 1`.
    pub lhs: f64,
    pub margin: f64,
    /// `3 q2^2 <= q1 q3`.
    pub sufficient: bool,
}

#[derive(Debug, Clone)]
pub struct ExamplePreset {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub dim: usize,
    pub tail: TailConvention,
    pub model: SpectralModel,
    pub q_inf_closed: DMatrix<f64>,
    /// `Q_inf A^T` in coordinates; equals the drift pairing on the canonical frame.
    pub b_closed: DMatrix<f64>,
    pub admissibility: Admissibility,
    pub nu_formula: Option<f64>,
}

fn check_params(q1: f64, q2: f64, q3: f64) -> Result<()> {
    if !(q1 > 0.0 && q3 > 0.0 && q2.is_finite() && q1.is_finite() && q3.is_finite()) {
        return Err(LabError::InvalidArgument(format!(
            "need q1 > 0 and q3 > 0, got ({q1}, {q2}, {q3})"
        )));
    }
    if q1 * q3 - q2 * q2 <= 0.0 {
        return Err(LabError::InvalidArgument(format!(
            "need q1 q3 - q2^2 > 0, got {}",
            q1 * q3 - q2 * q2
        )));
    }
    Ok(())
}

pub fn example_config(q1: f64, q2: f64, q3: f64, dim: usize, tail: Tail) -> ModelConfig {
    ModelConfig {
        dim,
        drift: DriftSpec::Diag((1..=dim).map(|i| -(PI * i as f64).powi(2)).collect()),
        diffusion: DiffusionSpec::Block2(Block2 { q1, q2, q3, tail }),
        label: format!("dirichlet-laplacian q=({q1},{q2},{q3}) N={dim}"),
    }
}

pub fn build_example(q1: f64, q2: f64, q3: f64, dim: usize) -> Result<ExamplePreset> {
    build_example_with(q1, q2, q3, dim, TailConvention::Consistent)
}

pub fn build_example_with(q1: f64, q2: f64, q3: f64, dim: usize, tail: TailConvention) -> Result<ExamplePreset> {
    check_params(q1, q2, q3)?;
    if dim < 2 {
        return Err(LabError::DimensionMismatch("the preset needs N >= 2".into()));
    }
    let model = SpectralModel::from_config(example_config(q1, q2, q3, dim, Tail::Identity))?;
    let pi2 = PI * PI;
    let tail_factor = match tail {
        TailConvention::Consistent => 0.5,
        TailConvention::Printed => 1.0,
    };
    let mut q_inf = DMatrix::from_diagonal(&DVector::from_fn(dim, |i, _| {
        tail_factor / (((i + 1) * (i + 1)) as f64 * pi2)
    }));
    q_inf[(0, 0)] = q1 / (2.0 * pi2);
    q_inf[(0, 1)] = q2 / (5.0 * pi2);
    q_inf[(1, 0)] = q2 / (5.0 * pi2);
    q_inf[(1, 1)] = q3 / (8.0 * pi2);
    let mut b = DMatrix::from_diagonal_element(dim, dim, -tail_factor);
    b[(0, 0)] = -q1 / 2.0;
    b[(0, 1)] = -4.0 * q2 / 5.0;
    b[(1, 0)] = -q2 / 5.0;
    b[(1, 1)] = -q3 / 2.0;
    let adm = admissibility(q1, q2, q3)?;
    Ok(ExamplePreset {
        q1,
        q2,
        q3,
        dim,
        tail,
        model,
        q_inf_closed: q_inf,
        b_closed: b,
        admissibility: adm,
        nu_formula: if adm.admissible { Some(nu_formula(q1, q2, q3)?) } else { None },
    })
}

/// Same drift, diffusion with the leading block only (zero tail). The
/// invariant measure then lives on the first two coordinates.
pub fn degenerate_example(q1: f64, q2: f64, q3: f64, dim: usize) -> Result<SpectralModel> {
    check_params(q1, q2, q3)?;
    SpectralModel::from_config(example_config(q1, q2, q3, dim, Tail::Zero))
}

pub fn admissibility(q1: f64, q2: f64, q3: f64) -> Result<Admissibility> {
    check_params(q1, q2, q3)?;
    let d = q1 * q3 - q2 * q2;
    let lhs = 9.0 / 25.0 * q2 * q2 * (q1 * q3 + q2 * q2) / (d * d);
    Ok(Admissibility {
        admissible: lhs < 1.0,
        lhs,
        margin: 1.0 - lhs,
        sufficient: 3.0 * q2 * q2 <= q1 * q3,
    })
}

/// `(9/25) (r + 1) / (r - 1)^2` with `r = q1 q3 / q2^2`; `0` when `q2 = 0`.
pub fn nu_formula(q1: f64, q2: f64, q3: f64) -> Result<f64> {
    let adm = admissibility(q1, q2, q3)?;
    if !adm.admissible {
        return Err(LabError::InvalidArgument(format!(
            "parameters not admissible: (9/25) q2^2 (q1 q3 + q2^2)/(q1 q3 - q2^2)^2 = {}",
            adm.lhs
        )));
    }
    if q2 == 0.0 {
        return Ok(0.0);
    }
    // (r + 1)/(r - 1)^2 = q2^2 (q1 q3 + q2^2) / (q1 q3 - q2^2)^2 without dividing by q2
    Ok(adm.lhs)
}
