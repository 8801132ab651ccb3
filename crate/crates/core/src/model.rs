//! The truncated operator pair `(A, Q)` and its JSON configuration.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg;

/// Drift coefficients. The diagonal form stores eigenvalues only and is
/// expanded once at load; everything downstream sees the dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftSpec {
    Diag(Vec<f64>),
    Dense(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Identity,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block2 {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub tail: Tail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffusionSpec {
    Dense(Vec<Vec<f64>>),
    Block2(Block2),
}

/// On-disk model description. Field order is the canonical serialization
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    #[serde(default)]
    pub label: String,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LabError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model config serializes")
    }

    pub fn dense(label: &str, drift: &DMatrix<f64>, diffusion: &DMatrix<f64>) -> Self {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().copied().collect()).collect()
        };
        ModelConfig {
            dim: drift.nrows(),
            drift: DriftSpec::Dense(rows(drift)),
            diffusion: DiffusionSpec::Dense(rows(diffusion)),
            label: label.to_string(),
        }
    }
}

/// Rank of the diffusion and whether it is injective on the truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DegeneracyFlag {
    pub nondegenerate: bool,
    pub rank: usize,
}

/// A validated truncation: dimension `N`, drift `A` and symmetric PSD
/// diffusion `Q`. Immutable after construction.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    pub dim: usize,
    pub drift: DMatrix<f64>,
    pub diffusion: DMatrix<f64>,
    pub label: String,
    pub warnings: Vec<String>,
    config: ModelConfig,
}

const SYM_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-12;
const CONTRACTION_TOL: f64 = 1e-12;

fn dense_from_rows(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(LabError::DimensionMismatch(format!(
            "{what} must be {dim}x{dim}, got {} rows with lengths {:?}",
            rows.len(),
            rows.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

impl SpectralModel {
    pub fn from_config(config: ModelConfig) -> Result<Self> {
        let dim = config.dim;
        if dim == 0 {
            return Err(LabError::DimensionMismatch("dim must be positive".into()));
        }
        let drift = match &config.drift {
            DriftSpec::Diag(d) => {
                if d.len() != dim {
                    return Err(LabError::DimensionMismatch(format!(
                        "diagonal drift has {} entries for dim {dim}",
                        d.len()
                    )));
                }
                DMatrix::from_diagonal(&DVector::from_column_slice(d))
            }
            DriftSpec::Dense(rows) => dense_from_rows(rows, dim, "drift")?,
        };
        let diffusion = match &config.diffusion {
            DiffusionSpec::Dense(rows) => dense_from_rows(rows, dim, "diffusion")?,
            DiffusionSpec::Block2(b) => {
                if dim < 2 {
                    return Err(LabError::DimensionMismatch("block2 diffusion needs dim >= 2".into()));
                }
                let tail = match b.tail {
                    Tail::Identity => 1.0,
                    Tail::Zero => 0.0,
                };
                let mut q = DMatrix::from_diagonal_element(dim, dim, tail);
                q[(0, 0)] = b.q1;
                q[(0, 1)] = b.q2;
                q[(1, 0)] = b.q2;
                q[(1, 1)] = b.q3;
                q
            }
        };
        if drift.iter().chain(diffusion.iter()).any(|x| !x.is_finite()) {
            return Err(LabError::Parse("non-finite matrix entry".into()));
        }

        let q_scale = diffusion.norm().max(1.0);
        let asym = linalg::max_asymmetry(&diffusion);
        if asym > SYM_TOL * q_scale {
            return Err(LabError::NotSymmetric(asym));
        }
        let diffusion = linalg::symmetrize(&diffusion);
        let q_min = linalg::min_sym_eigenvalue(&diffusion);
        if q_min < -PSD_TOL * q_scale {
            return Err(LabError::NotPsd(q_min));
        }

        let mut warnings = Vec::new();
        let sym_max = linalg::max_sym_eigenvalue(&linalg::symmetrize(&drift));
        if sym_max > CONTRACTION_TOL * drift.norm().max(1.0) {
            let abscissa = linalg::spectral_abscissa(&drift);
            if abscissa < 0.0 {
                warnings.push(format!(
                    "drift is not dissipative in the Euclidean norm (max eig of symmetric part {sym_max:e}) \
                     but is Hurwitz (abscissa {abscissa:e}); accepted"
                ));
            } else {
                return Err(LabError::NotContraction { sym_max, abscissa });
            }
        }

        Ok(SpectralModel {
            dim,
            drift,
            diffusion,
            label: config.label.clone(),
            warnings,
            config,
        })
    }

    pub fn from_matrices(label: &str, drift: DMatrix<f64>, diffusion: DMatrix<f64>) -> Result<Self> {
        if drift.nrows() != drift.ncols() || diffusion.shape() != drift.shape() {
            return Err(LabError::DimensionMismatch(format!(
                "drift {:?} vs diffusion {:?}",
                drift.shape(),
                diffusion.shape()
            )));
        }
        Self::from_config(ModelConfig::dense(label, &drift, &diffusion))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn to_json(&self) -> String {
        self.config.to_json()
    }

    pub fn degeneracy(&self, tol: f64) -> DegeneracyFlag {
        degeneracy(self, tol)
    }
}

pub fn load_model(path: &Path) -> Result<SpectralModel> {
    let text = std::fs::read_to_string(path).map_err(|source| LabError::Io {
        path: path.display().to_string(),
        source,
    })?;
    SpectralModel::from_config(ModelConfig::from_json(&text)?)
}

pub fn degeneracy(model: &SpectralModel, tol: f64) -> DegeneracyFlag {
    let rank = linalg::sym_eigenvalues(&model.diffusion)
        .iter()
        .filter(|&&e| e > tol)
        .count();
    DegeneracyFlag {
        nondegenerate: rank == model.dim,
        rank,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SpectralModel> {
        SpectralModel::from_config(ModelConfig::from_json(text)?)
    }

    #[test]
    fn scalar_model_loads() {
        let m = parse(r#"{"dim":1,"drift":{"dense":[[-1]]},"diffusion":{"dense":[[1]]},"label":"scalar"}"#).unwrap();
        assert_eq!(m.drift[(0, 0)], -1.0);
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn expanding_drift_fails_contraction() {
        let err = parse(r#"{"dim":1,"drift":{"dense":[[1]]},"diffusion":{"dense":[[1]]},"label":""}"#).unwrap_err();
        assert!(err.to_string().contains("contraction check failed"), "{err}");
    }

    #[test]
    fn diag_shorthand_expands() {
        let m = parse(r#"{"dim":3,"drift":{"diag":[-1,-2,-3]},"diffusion":{"block2":{"q1":1,"q2":0.5,"q3":1,"tail":"identity"}},"label":"x"}"#).unwrap();
        assert_eq!(m.drift[(1, 1)], -2.0);
        assert_eq!(m.drift[(0, 1)], 0.0);
        assert_eq!(m.diffusion[(0, 1)], 0.5);
        assert_eq!(m.diffusion[(2, 2)], 1.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = parse(r#"{"dim":2,"drift":{"diag":[-1]},"diffusion":{"dense":[[1,0],[0,1]]},"label":""}"#).unwrap_err();
        assert!(matches!(err, LabError::DimensionMismatch(_)));
        let err = parse(r#"{"dim":2,"drift":{"diag":[-1,-1]},"diffusion":{"dense":[[1,0]]},"label":""}"#).unwrap_err();
        assert!(matches!(err, LabError::DimensionMismatch(_)));
    }

    #[test]
    fn asymmetric_and_indefinite_diffusion_rejected() {
        let err = parse(r#"{"dim":2,"drift":{"diag":[-1,-1]},"diffusion":{"dense":[[1,0.5],[0,1]]},"label":""}"#).unwrap_err();
        assert!(matches!(err, LabError::NotSymmetric(x) if (x - 0.5).abs() < 1e-15));
        let err = parse(r#"{"dim":2,"drift":{"diag":[-1,-1]},"diffusion":{"dense":[[1,0],[0,-1]]},"label":""}"#).unwrap_err();
        assert!(matches!(err, LabError::NotPsd(x) if (x + 1.0).abs() < 1e-12));
    }

    #[test]
    fn hurwitz_but_not_dissipative_is_accepted_with_warning() {
        // strongly non-normal: symmetric part has a positive eigenvalue
        let m = parse(r#"{"dim":2,"drift":{"dense":[[-1,10],[0,-1]]},"diffusion":{"dense":[[1,0],[0,1]]},"label":""}"#).unwrap();
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(parse("{\"dim\": 1"), Err(LabError::Parse(_))));
        assert!(matches!(
            parse(r#"{"dim":1,"drift":{"sparse":[]},"diffusion":{"dense":[[1]]}}"#),
            Err(LabError::Parse(_))
        ));
    }

    #[test]
    fn degeneracy_examples() {
        let eye = SpectralModel::from_matrices("", -DMatrix::identity(3, 3), DMatrix::identity(3, 3)).unwrap();
        assert_eq!(eye.degeneracy(1e-12), DegeneracyFlag { nondegenerate: true, rank: 3 });
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0]));
        let deg = SpectralModel::from_matrices("", -DMatrix::identity(3, 3), q).unwrap();
        assert_eq!(deg.degeneracy(1e-12), DegeneracyFlag { nondegenerate: false, rank: 2 });
    }

    #[test]
    fn reserialization_is_idempotent() {
        let text = r#"{"dim":2,"drift":{"diag":[-1.0000000000000002,-4e-300]},"diffusion":{"block2":{"q1":1,"q2":0.1,"q3":3.3333333333333335,"tail":"zero"}},"label":"rt"}"#;
        let once = parse(text).unwrap().to_json();
        let twice = parse(&once).unwrap().to_json();
        assert_eq!(once, twice);
        let cfg = ModelConfig::from_json(&once).unwrap();
        match cfg.drift {
            DriftSpec::Diag(d) => assert_eq!(d[0], -1.0000000000000002),
            _ => panic!("shorthand lost"),
        }
    }
}
