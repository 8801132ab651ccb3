//! The Galerkin pair `(Q_n, B_n)` of the truncated operator and the checks of
//! the structural hypotheses on it.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::basis::ThetaBasis;
use crate::error::{LabError, Result};
use crate::linalg;
use crate::model::SpectralModel;

/// Diffusion and drift Gram matrices on a frame.
///
/// Entries: `q_mat[k][j] = <Q_eps f_j, f_k>` and
/// `b_mat[k][j] = <Q_inf A_eps^T f_j, f_k>` with `Q_eps = Q + eps Q_inf` and
/// `A_eps = A - (eps/2) I`. The shifted drift keeps `Q_inf` stationary for the
/// regularized diffusion, so `B + B^T = -Q` holds for every `eps`.
#[derive(Debug, Clone)]
pub struct GalerkinPair {
    pub n: usize,
    pub q_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub epsilon: f64,
}

pub fn build_pair(
    model: &SpectralModel,
    q_inf: &DMatrix<f64>,
    basis: &ThetaBasis,
    n: usize,
    epsilon: f64,
) -> Result<GalerkinPair> {
    if n == 0 || n > basis.width() {
        return Err(LabError::DimensionMismatch(format!(
            "pair size {n} exceeds frame width {}",
            basis.width()
        )));
    }
    if basis.frame.nrows() != model.dim || q_inf.shape() != (model.dim, model.dim) {
        return Err(LabError::DimensionMismatch(format!(
            "frame has {} rows and Q_inf is {:?} for a model of dimension {}",
            basis.frame.nrows(),
            q_inf.shape(),
            model.dim
        )));
    }
    if !(epsilon >= 0.0) {
        return Err(LabError::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let f = basis.frame.columns(0, n);
    let gram_inf = f.transpose() * q_inf * f;
    let q_mat = linalg::symmetrize(&(f.transpose() * &model.diffusion * f + &gram_inf * epsilon));
    let b_mat = f.transpose() * q_inf * model.drift.transpose() * f - &gram_inf * (0.5 * epsilon);
    Ok(GalerkinPair { n, q_mat, b_mat, epsilon })
}

/// `||B + B^T + Q||_F`.
pub fn check_dissipation(pair: &GalerkinPair) -> f64 {
    (&pair.b_mat + pair.b_mat.transpose() + &pair.q_mat).norm()
}

/// `||B + B^T + 2 Q||_F`, the residual under the alternative factor-2
/// normalization; kept as a diagnostic only.
pub fn check_dissipation_factor2(pair: &GalerkinPair) -> f64 {
    (&pair.b_mat + pair.b_mat.transpose() + &pair.q_mat * 2.0).norm()
}

/// Orthonormal basis of symmetric `n x n` matrices: `E_ii` and
/// `(e_i e_j^T + e_j e_i^T)/sqrt 2`.
pub fn symmetric_basis(n: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..n {
        for j in i..n {
            let mut e = DMatrix::zeros(n, n);
            if i == j {
                e[(i, i)] = 1.0;
            } else {
                e[(i, j)] = s;
                e[(j, i)] = s;
            }
            out.push(e);
        }
    }
    out
}

/// Gram matrix of the quadratic form `C -> Tr[X C X C]` on the symmetric basis.
pub fn trace_form_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let basis = symmetric_basis(x.nrows());
    let images: Vec<DMatrix<f64>> = basis.iter().map(|e| x * e).collect();
    let m = basis.len();
    let mut g = DMatrix::zeros(m, m);
    for p in 0..m {
        for q in p..m {
            let v = (&images[p] * &images[q]).trace();
            g[(p, q)] = v;
            g[(q, p)] = v;
        }
    }
    g
}

/// `Tr[X C X C]`.
pub fn trace_form(x: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let xc = x * c;
    (&xc * &xc).trace()
}

/// Smallest `nu >= 0` with `Tr[K C K C] >= -nu Tr[Q C Q C]` for all symmetric
/// `C`, where `K = B - B^T`.
pub fn nu_min(pair: &GalerkinPair) -> Result<f64> {
    let k = &pair.b_mat - pair.b_mat.transpose();
    let g = trace_form_matrix(&pair.q_mat);
    let kk = trace_form_matrix(&k);
    let top = linalg::max_generalized_eigenvalue(&(-kk), &g)?;
    Ok(top.max(0.0))
}

/// Smallest `c` with `|Q_inf A^T x|_H <= c |Q x|_H`, where `|Q y|_H^2 = <Q y, y>`
/// and `|z|_H^2 = <Q^+ z, z>` on the range of `Q`.
pub fn rkhs_constant(model: &SpectralModel, q_inf: &DMatrix<f64>) -> Result<f64> {
    let q = &model.diffusion;
    let t = q_inf * model.drift.transpose();
    let eig = q.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale * model.dim as f64;
    let range: Vec<usize> = (0..model.dim).filter(|&i| eig.eigenvalues[i] > tol).collect();
    if range.is_empty() {
        return Err(LabError::NotPositiveDefinite(eig.eigenvalues.max()));
    }
    let u = DMatrix::from_columns(&range.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    let kernel: Vec<usize> = (0..model.dim).filter(|&i| eig.eigenvalues[i] <= tol).collect();

    // x only matters modulo ker Q; restrict to range(Q) in the domain too. The
    // image must still stay inside range(Q).
    let t_range = &t * &u;
    if !kernel.is_empty() {
        let w = DMatrix::from_columns(&kernel.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
        // T x must vanish on ker Q as well, otherwise no finite c exists
        let escape = (w.transpose() * &t).norm().max((&t * &w).norm()) / t.norm().max(f64::MIN_POSITIVE);
        if escape > 1e-10 {
            return Err(LabError::ImageEscapesH(escape));
        }
    }
    let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        range.len(),
        range.iter().map(|&i| eig.eigenvalues[i]),
    ));
    let lam_inv = lam.map(|v| if v != 0.0 { 1.0 / v } else { 0.0 });
    // pencil ((T U)^T U Lam^-1 U^T (T U), Lam) on range(Q)
    let proj = u.transpose() * &t_range;
    let lhs = proj.transpose() * &lam_inv * &proj;
    let top = linalg::max_generalized_eigenvalue(&linalg::symmetrize(&lhs), &lam)?;
    Ok(top.max(0.0).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisDetails {
    pub q_min_eigenvalue: f64,
    pub b_sym_max_eigenvalue: f64,
    pub dissipation_residual: f64,
    pub dissipation_residual_factor2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub n: usize,
    pub epsilon: f64,
    pub c_rkhs: Option<f64>,
    /// `None` when `Q_n` is singular on the frame.
    pub nu_min: Option<f64>,
    pub nu_holds: bool,
    pub nu_formula: Option<f64>,
    pub details: HypothesisDetails,
}

pub fn hypothesis_report(pair: &GalerkinPair, c_rkhs: Option<f64>, nu_formula: Option<f64>) -> HypothesisReport {
    let nu = nu_min(pair).ok();
    HypothesisReport {
        n: pair.n,
        epsilon: pair.epsilon,
        c_rkhs,
        nu_min: nu,
        nu_holds: nu.is_some_and(|v| v < 1.0),
        nu_formula,
        details: HypothesisDetails {
            q_min_eigenvalue: linalg::min_sym_eigenvalue(&pair.q_mat),
            b_sym_max_eigenvalue: linalg::max_sym_eigenvalue(&linalg::symmetrize(&pair.b_mat)),
            dissipation_residual: check_dissipation(pair),
            dissipation_residual_factor2: check_dissipation_factor2(pair),
        },
    }
}
