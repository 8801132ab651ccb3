use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("diffusion is not symmetric: max |Q - Q^T| = {0:e}")]
    NotSymmetric(f64),

    #[error("diffusion is not positive semidefinite: min eigenvalue = {0:e}")]
    NotPsd(f64),

    #[error("contraction check failed: max eigenvalue of (A + A^T)/2 = {sym_max:e}, spectral abscissa = {abscissa:e}")]
    NotContraction { sym_max: f64, abscissa: f64 },

    #[error("drift not Hurwitz: max real part of eigenvalues = {0:e}")]
    NotHurwitz(f64),

    #[error("singular Sylvester system: eigenvalues of the two coefficients overlap")]
    SingularSylvester,

    #[error("insufficient seed span: requested {requested} directions, found {found}")]
    InsufficientSeedSpan { requested: usize, found: usize },

    #[error("Q not positive definite on the frame (min eigenvalue {0:e}); regularize first")]
    NotPositiveDefinite(f64),

    #[error("image escapes H: component of Q_inf A^T outside range(Q) = {0:e}")]
    ImageEscapesH(f64),

    #[error("invalid quadrature spec: {0}")]
    InvalidQuadrature(String),

    #[error("direction not of admissible form: {0}")]
    InadmissibleDirection(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("regularization required: diffusion is degenerate on the frame and no epsilon > 0 was supplied")]
    RegularizationRequired,
}

pub type Result<T> = std::result::Result<T, LabError>;
