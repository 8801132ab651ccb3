//! The Gaussian (Mehler) representation of the semigroup generated by
//! `L psi = 1/2 Tr[Q D^2 psi] + <xi, B D psi>` and its resolvent.
//!
//! The SDE behind `L` has drift matrix `M = B^T`, so
//! `T(t) phi(xi) = E[phi(e^{tM} xi + Z)]` with `Z ~ N(0, Sigma_t)` and
//! `Sigma_t = int_0^t e^{sM} Q e^{sM^T} ds`.

use nalgebra::{DMatrix, DVector};

use crate::error::{LabError, Result};
use crate::galerkin::GalerkinPair;
use crate::linalg;
use crate::profile::{CylinderFunction, Field, Jet};
use crate::quadrature::{self, QuadratureSpec};

#[derive(Debug, Clone)]
pub struct MehlerKernel {
    pub pair: GalerkinPair,
    /// `M = B^T`.
    pub drift_matrix: DMatrix<f64>,
}

impl MehlerKernel {
    pub fn new(pair: GalerkinPair) -> Self {
        let drift_matrix = pair.b_mat.transpose();
        MehlerKernel { pair, drift_matrix }
    }

    pub fn n(&self) -> usize {
        self.pair.n
    }

    /// `(Sigma_t, e^{tM})`.
    pub fn sigma(&self, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        linalg::gramian(&self.drift_matrix, &self.pair.q_mat, t)
    }

    /// `Sigma_inf`, the solution of `M S + S M^T = -Q`.
    pub fn sigma_infinity(&self) -> Result<DMatrix<f64>> {
        linalg::solve_lyapunov(&self.drift_matrix, &self.pair.q_mat)
    }

    /// `L psi` at `xi` from the jet of `psi`.
    pub fn generator(&self, xi: &[f64], jet: &Jet) -> f64 {
        let q = &self.pair.q_mat;
        let n = self.n();
        let mut trace = 0.0;
        for i in 0..n {
            for j in 0..n {
                trace += q[(i, j)] * jet.hess[(j, i)];
            }
        }
        let b_grad = &self.pair.b_mat * &jet.grad;
        let drift: f64 = xi.iter().zip(b_grad.iter()).map(|(x, g)| x * g).sum();
        0.5 * trace + drift
    }
}

/// Laplace-transform rule `int_0^inf e^{-lambda t} f(t) dt ~ sum w_k f(t_k)`.
///
/// With `u = e^{-lambda t}` the integral becomes `(1/lambda) int_0^1 f(-ln u / lambda) du`,
/// integrated by Gauss-Legendre on `[0, 1]`. No truncation of the time axis is
/// needed and `f = 1` is integrated exactly.
#[derive(Debug, Clone)]
pub struct LaplaceRule {
    pub lambda: f64,
    pub nodes: Vec<(f64, f64)>,
}

impl LaplaceRule {
    pub fn new(lambda: f64, order: usize) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(LabError::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        if order == 0 {
            return Err(LabError::InvalidQuadrature("laplace_nodes must be positive".into()));
        }
        let nodes = quadrature::legendre_unit(order)
            .into_iter()
            .map(|(u, w)| (-u.ln() / lambda, w / lambda))
            .collect();
        Ok(LaplaceRule { lambda, nodes })
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().map(|&(t, w)| w * f(t)).sum()
    }
}

/// One Gaussian-smoothed profile term, written as a closed-form function of
/// `xi`.
#[derive(Debug, Clone)]
enum LiftedTerm {
    /// `coef * cos(freq . xi + phase)`.
    Cosine { coef: f64, freq: DVector<f64>, phase: f64 },
    /// `coef * exp(-1/2 r^T S^{-1} r)` with `r = G xi - center`.
    Bump {
        coef: f64,
        g: DMatrix<f64>,
        center: DVector<f64>,
        s_inv: DMatrix<f64>,
        /// `G^T S^{-1} G`, the constant part of the Hessian.
        curvature: DMatrix<f64>,
    },
}

impl LiftedTerm {
    fn scaled(self, c: f64) -> Self {
        match self {
            LiftedTerm::Cosine { coef, freq, phase } => LiftedTerm::Cosine {
                coef: coef * c,
                freq,
                phase,
            },
            LiftedTerm::Bump {
                coef,
                g,
                center,
                s_inv,
                curvature,
            } => LiftedTerm::Bump {
                coef: coef * c,
                g,
                center,
                s_inv,
                curvature,
            },
        }
    }

    fn accumulate(&self, xi: &DVector<f64>, out: &mut Jet) {
        match self {
            LiftedTerm::Cosine { coef, freq, phase } => {
                let (s, c) = (freq.dot(xi) + phase).sin_cos();
                out.value += coef * c;
                out.grad.axpy(-coef * s, freq, 1.0);
                out.hess.ger(-coef * c, freq, freq, 1.0);
            }
            LiftedTerm::Bump {
                coef,
                g,
                center,
                s_inv,
                curvature,
            } => {
                let r = g * xi - center;
                let z = s_inv * &r;
                let v = coef * (-0.5 * r.dot(&z)).exp();
                let gz = g.tr_mul(&z);
                out.value += v;
                out.grad.axpy(-v, &gz, 1.0);
                out.hess.ger(v, &gz, &gz, 1.0);
                out.hess -= curvature * v;
            }
        }
    }

    fn value(&self, xi: &DVector<f64>) -> f64 {
        match self {
            LiftedTerm::Cosine { coef, freq, phase } => coef * (freq.dot(xi) + phase).cos(),
            LiftedTerm::Bump { coef, g, center, s_inv, .. } => {
                let r = g * xi - center;
                coef * (-0.5 * r.dot(&(s_inv * &r))).exp()
            }
        }
    }
}

/// `T(t) phi` in closed form for profiles whose Gaussian smoothing is explicit
/// (constants, cosines, Gaussian bumps). `None` for other profiles.
fn lift(
    phi: &CylinderFunction,
    n: usize,
    sigma: &DMatrix<f64>,
    expm: &DMatrix<f64>,
) -> Option<LiftedTerm> {
    match phi {
        CylinderFunction::Constant { value } => Some(LiftedTerm::Cosine {
            coef: *value,
            freq: DVector::zeros(n),
            phase: 0.0,
        }),
        CylinderFunction::Cosine { a, b } => {
            let mut full = DVector::zeros(n);
            full.rows_mut(0, a.len()).copy_from_slice(a);
            let damp = (-0.5 * full.dot(&(sigma * &full))).exp();
            Some(LiftedTerm::Cosine {
                coef: damp,
                freq: expm.tr_mul(&full),
                phase: *b,
            })
        }
        CylinderFunction::Gaussian { center, width } => {
            let k = center.len();
            let w2 = width * width;
            let s = sigma.view((0, 0), (k, k)) + DMatrix::identity(k, k) * w2;
            let chol = s.clone().cholesky()?;
            let det = chol.determinant();
            let s_inv = chol.inverse();
            let g = expm.rows(0, k).into_owned();
            let curvature = g.transpose() * &s_inv * &g;
            Some(LiftedTerm::Bump {
                coef: width.powi(k as i32) / det.sqrt(),
                g,
                center: DVector::from_column_slice(center),
                s_inv,
                curvature,
            })
        }
        CylinderFunction::Polybump { .. } => None,
    }
}

pub fn has_closed_form(phi: &CylinderFunction) -> bool {
    !matches!(phi, CylinderFunction::Polybump { .. })
}

/// A finite sum of lifted terms; used for `T(t) phi` and for `R(lambda) phi`.
#[derive(Debug, Clone)]
pub struct SmoothedField {
    n: usize,
    terms: Vec<LiftedTerm>,
}

impl Field for SmoothedField {
    fn dim(&self) -> usize {
        self.n
    }

    fn jet(&self, xi: &[f64]) -> Jet {
        let x = DVector::from_column_slice(xi);
        let mut out = Jet::zero(self.n);
        for term in &self.terms {
            term.accumulate(&x, &mut out);
        }
        out
    }

    fn value(&self, xi: &[f64]) -> f64 {
        let x = DVector::from_column_slice(xi);
        self.terms.iter().map(|t| t.value(&x)).sum()
    }
}

fn check_profile(kernel: &MehlerKernel, phi: &CylinderFunction) -> Result<()> {
    phi.validate()?;
    if phi.arity() > kernel.n() {
        return Err(LabError::DimensionMismatch(format!(
            "profile depends on {} coordinates but the pair has size {}",
            phi.arity(),
            kernel.n()
        )));
    }
    Ok(())
}

fn no_closed_form(phi: &CylinderFunction) -> LabError {
    LabError::InvalidArgument(format!(
        "profile {phi:?} has no closed-form Gaussian smoothing; use the quadrature route"
    ))
}

/// `T(t) phi` as an explicit field.
pub fn semigroup_field(kernel: &MehlerKernel, t: f64, phi: &CylinderFunction) -> Result<SmoothedField> {
    check_profile(kernel, phi)?;
    let n = kernel.n();
    let (sigma, expm) = kernel.sigma(t);
    let term = lift(phi, n, &sigma, &expm).ok_or_else(|| no_closed_form(phi))?;
    Ok(SmoothedField { n, terms: vec![term] })
}

/// `E[h(e^{tM} xi + Z)]` for a vector of outputs of the profile jet.
fn smoothed_jet_numeric(
    kernel: &MehlerKernel,
    t: f64,
    phi: &CylinderFunction,
    xi: &[f64],
    quad: &QuadratureSpec,
) -> Jet {
    let n = kernel.n();
    let (sigma, expm) = kernel.sigma(t);
    let mean = &expm * DVector::from_column_slice(xi);
    let root = linalg::psd_sqrt(&sigma);
    let flat = quadrature::gaussian_shift_expect(mean.as_slice(), &root, quad, 1 + n + n * n, |y| {
        let j = phi.jet_at(y);
        let mut v = Vec::with_capacity(1 + n + n * n);
        v.push(j.value);
        v.extend(j.grad.iter());
        v.extend(j.hess.iter());
        v
    });
    let grad_y = DVector::from_column_slice(&flat[1..1 + n]);
    let hess_y = DMatrix::from_column_slice(n, n, &flat[1 + n..]);
    Jet {
        value: flat[0],
        grad: expm.tr_mul(&grad_y),
        hess: expm.transpose() * hess_y * &expm,
    }
}

/// `T(t) phi(xi) = E[phi(e^{tM} xi + Z)]`, `Z ~ N(0, Sigma_t)`, by
/// Gauss-Hermite tensor quadrature (`n <= 4`) or scrambled Sobol points.
pub fn semigroup_apply(
    kernel: &MehlerKernel,
    t: f64,
    phi: &CylinderFunction,
    xi: &[f64],
    quad: &QuadratureSpec,
) -> Result<f64> {
    quad.validate()?;
    check_profile(kernel, phi)?;
    if !(t >= 0.0) {
        return Err(LabError::InvalidArgument(format!("t must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(phi.value_at(xi));
    }
    let (sigma, expm) = kernel.sigma(t);
    let mean = &expm * DVector::from_column_slice(xi);
    let root = linalg::psd_sqrt(&sigma);
    Ok(quadrature::gaussian_shift_expect(mean.as_slice(), &root, quad, 1, |y| vec![phi.value_at(y)])[0])
}

/// `R(lambda) phi = int_0^inf e^{-lambda t} T(t) phi dt` as an explicit field:
/// a sum of lifted profile terms, one per Laplace node.
#[derive(Debug, Clone)]
pub struct Resolvent {
    pub lambda: f64,
    field: SmoothedField,
}

impl Resolvent {
    pub fn new(kernel: &MehlerKernel, lambda: f64, phi: &CylinderFunction, laplace_nodes: usize) -> Result<Self> {
        check_profile(kernel, phi)?;
        let rule = LaplaceRule::new(lambda, laplace_nodes)?;
        let n = kernel.n();
        let mut terms = Vec::with_capacity(rule.nodes.len());
        for &(t, w) in &rule.nodes {
            let (sigma, expm) = kernel.sigma(t);
            let term = lift(phi, n, &sigma, &expm).ok_or_else(|| no_closed_form(phi))?;
            terms.push(term.scaled(w));
        }
        Ok(Resolvent {
            lambda,
            field: SmoothedField { n, terms },
        })
    }
}

impl Field for Resolvent {
    fn dim(&self) -> usize {
        self.field.n
    }

    fn jet(&self, xi: &[f64]) -> Jet {
        self.field.jet(xi)
    }

    fn value(&self, xi: &[f64]) -> f64 {
        self.field.value(xi)
    }
}

fn resolvent_jet(
    kernel: &MehlerKernel,
    lambda: f64,
    phi: &CylinderFunction,
    xi: &[f64],
    quad: &QuadratureSpec,
) -> Result<Jet> {
    quad.validate()?;
    check_profile(kernel, phi)?;
    if xi.len() != kernel.n() {
        return Err(LabError::DimensionMismatch(format!(
            "point has {} coordinates, pair has size {}",
            xi.len(),
            kernel.n()
        )));
    }
    if has_closed_form(phi) {
        return Ok(Resolvent::new(kernel, lambda, phi, quad.laplace_nodes)?.jet(xi));
    }
    let rule = LaplaceRule::new(lambda, quad.laplace_nodes)?;
    let n = kernel.n();
    let mut out = Jet::zero(n);
    for &(t, w) in &rule.nodes {
        let j = smoothed_jet_numeric(kernel, t, phi, xi, quad);
        out.value += w * j.value;
        out.grad.axpy(w, &j.grad, 1.0);
        out.hess += &j.hess * w;
    }
    Ok(out)
}

/// `R(lambda) phi(xi)`.
pub fn resolvent_apply(
    kernel: &MehlerKernel,
    lambda: f64,
    phi: &CylinderFunction,
    xi: &[f64],
    quad: &QuadratureSpec,
) -> Result<f64> {
    Ok(resolvent_jet(kernel, lambda, phi, xi, quad)?.value)
}

/// `D R(lambda) phi(xi) = int e^{-lambda t} e^{tM^T} E[D phi(e^{tM} xi + Z)] dt`.
pub fn resolvent_gradient(
    kernel: &MehlerKernel,
    lambda: f64,
    phi: &CylinderFunction,
    xi: &[f64],
    quad: &QuadratureSpec,
) -> Result<DVector<f64>> {
    Ok(resolvent_jet(kernel, lambda, phi, xi, quad)?.grad)
}

/// `D^2 R(lambda) phi(xi) = int e^{-lambda t} e^{tM^T} E[D^2 phi(.)] e^{tM} dt`.
pub fn resolvent_hessian(
    kernel: &MehlerKernel,
    lambda: f64,
    phi: &CylinderFunction,
    xi: &[f64],
    quad: &QuadratureSpec,
) -> Result<DMatrix<f64>> {
    Ok(resolvent_jet(kernel, lambda, phi, xi, quad)?.hess)
}

/// Same as [`resolvent_apply`] but always through the numeric inner
/// expectation, for cross-checking the closed forms.
pub fn resolvent_apply_numeric(
    kernel: &MehlerKernel,
    lambda: f64,
    phi: &CylinderFunction,
    xi: &[f64],
    quad: &QuadratureSpec,
) -> Result<f64> {
    quad.validate()?;
    check_profile(kernel, phi)?;
    let rule = LaplaceRule::new(lambda, quad.laplace_nodes)?;
    let mut total = 0.0;
    for &(t, w) in &rule.nodes {
        total += w * semigroup_apply(kernel, t, phi, xi, quad)?;
    }
    Ok(total)
}

/// `max_k |lambda v - L v - phi|` over solved samples `(xi_k, jet of v at xi_k)`.
pub fn pde_residual(kernel: &MehlerKernel, lambda: f64, phi: &CylinderFunction, samples: &[(Vec<f64>, Jet)]) -> f64 {
    samples
        .iter()
        .map(|(xi, jet)| (lambda * jet.value - kernel.generator(xi, jet) - phi.value_at(xi)).abs())
        .fold(0.0, f64::max)
}
