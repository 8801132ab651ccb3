//! Solve `lambda V - L_n V = phi` on a ladder of frames and check the a-priori
//! bounds, the energy identity, the weak formulation and maximal regularity.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{canonical_seeds, gram_schmidt_theta, ThetaBasis};
use crate::covariance::covariance_infinity;
use crate::error::{LabError, Result};
use crate::galerkin::{build_pair, nu_min, GalerkinPair};
use crate::linalg;
use crate::mehler::{MehlerKernel, Resolvent};
use crate::model::SpectralModel;
use crate::profile::{CylinderFunction, EmbeddedProfile, Field, Jet};
use crate::quadrature::{self, Estimate, QuadratureSpec};
use crate::sobolev::hs_sq;

pub const SCHEMA: &str = "ou-report/1";
/// Number of cosine test functions in the weak-form battery.
pub const WEAK_TESTS: usize = 5;
/// Allowed relative drift of `K` across the ladder.
pub const K_STABILITY: f64 = 0.2;
const DEGENERACY_TOL: f64 = 1e-12;
/// Error bars below this fraction of the scale count as rounding.
const EXACT_REL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Skipped,
    Inconclusive,
    Fail,
}

impl Status {
    fn worst(self, other: Status) -> Status {
        // Skipped never masks a verdict
        match (self, other) {
            (Status::Skipped, s) | (s, Status::Skipped) => s,
            (a, b) => a.max(b),
        }
    }
}

/// Verdict for `lhs <= rhs` given `margin = rhs - lhs` with error bar `err`.
pub fn bound_status(margin: f64, err: f64, scale: f64) -> Status {
    if margin >= 2.0 * err {
        Status::Pass
    } else if margin <= -2.0 * err {
        Status::Fail
    } else if 2.0 * err <= EXACT_REL * scale.abs().max(f64::MIN_POSITIVE) {
        Status::Pass
    } else {
        Status::Inconclusive
    }
}

/// Verdict for `residual = 0`.
pub fn identity_status(residual: f64, err: f64, scale: f64) -> Status {
    if residual.abs() <= 2.0 * err + EXACT_REL * scale.abs() {
        Status::Pass
    } else {
        Status::Fail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l2: f64,
    pub dh: f64,
    pub dh2_hs: f64,
    pub pn_dainf: f64,
}

/// `lhs <= rhs` with `margin = rhs - lhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: Estimate,
    /// `margin / rhs`; `None` when `rhs = 0`.
    pub relative_margin: Option<f64>,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub residual: Estimate,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub n: usize,
    pub epsilon: f64,
    /// `nu` of the unregularized pair, used in (d); `None` when its `Q_n` is singular.
    pub nu_used: Option<f64>,
    pub nu_regularized: Option<f64>,
    pub phi_l2: f64,
    /// Norms of `V` with the unregularized pair.
    pub norms: Norms,
    /// Norms of `V` with the regularized pair (equal to `norms` when `epsilon = 0`).
    pub norms_regularized: Norms,
    pub a_l2: BoundCheck,
    pub a_dh: BoundCheck,
    pub b_energy: IdentityCheck,
    pub c_weak_form: Vec<IdentityCheck>,
    pub d_max_regularity: Option<BoundCheck>,
    pub k_constant: Option<f64>,
}

impl CellReport {
    pub fn status(&self, criterion: Criterion) -> Status {
        match criterion {
            Criterion::A => self.a_l2.status.worst(self.a_dh.status),
            Criterion::B => self.b_energy.status,
            Criterion::C => self
                .c_weak_form
                .iter()
                .fold(Status::Skipped, |s, c| s.worst(c.status)),
            Criterion::D => self.d_max_regularity.map_or(Status::Skipped, |d| d.status),
            Criterion::E => {
                if self.k_constant.is_some_and(f64::is_finite) {
                    Status::Pass
                } else {
                    Status::Fail
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    A,
    B,
    C,
    D,
    E,
}

pub const CRITERIA: [Criterion; 5] = [Criterion::A, Criterion::B, Criterion::C, Criterion::D, Criterion::E];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionSummary {
    pub criterion: Criterion,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema: String,
    pub model: String,
    pub dim: usize,
    pub degenerate: bool,
    pub lambda: f64,
    pub n_ladder: Vec<usize>,
    pub epsilon_grid: Vec<f64>,
    pub quad: QuadratureSpec,
    pub phi: CylinderFunction,
    pub cells: Vec<CellReport>,
    /// Largest `|K_n / K_{n_0} - 1|` over the ladder, per epsilon.
    pub k_drift: Vec<Option<f64>>,
    pub criteria: Vec<CriterionSummary>,
    pub overall: Status,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LabError::Parse(e.to_string()))
    }

    /// 0 when everything passes, 2 on any failure, 3 on any inconclusive check.
    pub fn exit_code(&self) -> i32 {
        match self.overall {
            Status::Pass | Status::Skipped => 0,
            Status::Fail => 2,
            Status::Inconclusive => 3,
        }
    }

    pub fn status(&self, criterion: Criterion) -> Status {
        self.criteria
            .iter()
            .find(|c| c.criterion == criterion)
            .map_or(Status::Skipped, |c| c.status)
    }

    pub fn cell(&self, n: usize, epsilon: f64) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.n == n && c.epsilon == epsilon)
    }

    /// Largest relative spread `(max - min) / max|.|` of the bound margins and
    /// of `K` across the positive epsilons, taken per frame size.
    pub fn epsilon_spread(&self) -> Option<f64> {
        let mut worst: Option<f64> = None;
        for &n in &self.n_ladder {
            let cells: Vec<&CellReport> = self.cells.iter().filter(|c| c.n == n && c.epsilon > 0.0).collect();
            if cells.len() < 2 {
                continue;
            }
            let series: [Vec<Option<f64>>; 4] = [
                cells.iter().map(|c| c.a_l2.relative_margin).collect(),
                cells.iter().map(|c| c.a_dh.relative_margin).collect(),
                cells
                    .iter()
                    .map(|c| c.d_max_regularity.and_then(|d| d.relative_margin))
                    .collect(),
                cells.iter().map(|c| c.k_constant).collect(),
            ];
            for s in series {
                let Some(vals) = s.into_iter().collect::<Option<Vec<f64>>>() else {
                    continue;
                };
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let size = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
                if size > 0.0 {
                    let spread = (hi - lo) / size;
                    worst = Some(worst.map_or(spread, |w: f64| w.max(spread)));
                }
            }
        }
        worst
    }
}

/// The fixed weak-form battery on `R^n`: `cos(a_k . xi + b_k)`.
pub fn weak_form_battery(n: usize) -> Vec<CylinderFunction> {
    (0..WEAK_TESTS)
        .map(|k| {
            let a = (0..n)
                .map(|j| 0.8 * (1.3 * (k + 1) as f64 * (j + 1) as f64).cos())
                .collect();
            CylinderFunction::Cosine { a, b: 0.4 * k as f64 }
        })
        .collect()
}

struct Setup<'a> {
    model: &'a SpectralModel,
    q_inf: DMatrix<f64>,
    basis: ThetaBasis,
}

fn prepare(model: &SpectralModel, max_n: usize) -> Result<Setup<'_>> {
    let q_inf = covariance_infinity(model)?.q_inf;
    let basis = gram_schmidt_theta(&q_inf, &canonical_seeds(model.dim), max_n)?;
    Ok(Setup { model, q_inf, basis })
}

// Integrand layout of one cell.
const I_V2: usize = 0;
const I_PHI2: usize = 1;
const I_A_L2: usize = 2;
const I_A_DH: usize = 3;
const I_ENERGY: usize = 4;
const I_DMAX: usize = 5;
const I_DH: usize = 6;
const I_HS: usize = 7;
const I_PN: usize = 8;
const I_DH_R: usize = 9;
const I_HS_R: usize = 10;
const I_PN_R: usize = 11;
const I_WEAK: usize = 12;
const OUTPUTS: usize = I_WEAK + WEAK_TESTS;

struct CellForms<'a> {
    lambda: f64,
    nu: f64,
    orig: &'a GalerkinPair,
    reg: &'a GalerkinPair,
    root: DMatrix<f64>,
    root_reg: DMatrix<f64>,
    phi: EmbeddedProfile,
    tests: Vec<EmbeddedProfile>,
}

impl CellForms<'_> {
    fn integrands(&self, xi: &[f64], v: &Jet) -> Vec<f64> {
        let lambda = self.lambda;
        let phi = self.phi.value(xi);
        let g = &v.grad;
        let dh = g.dot(&(&self.orig.q_mat * g));
        let hs = hs_sq(&self.root, &v.hess);
        let pn = (&self.orig.b_mat * g).norm_squared();
        let dh_r = g.dot(&(&self.reg.q_mat * g));
        let b_reg_g = &self.reg.b_mat * g;
        let mut out = vec![0.0; OUTPUTS];
        out[I_V2] = v.value * v.value;
        out[I_PHI2] = phi * phi;
        out[I_A_L2] = phi * phi - lambda * lambda * v.value * v.value;
        out[I_A_DH] = 2.0 * phi * phi - lambda * dh;
        out[I_ENERGY] = lambda * v.value * v.value + 0.5 * dh_r - phi * v.value;
        out[I_DMAX] = 2.0 * phi * phi - 0.25 * (1.0 - self.nu) * hs - pn;
        out[I_DH] = dh;
        out[I_HS] = hs;
        out[I_PN] = pn;
        out[I_DH_R] = dh_r;
        out[I_HS_R] = hs_sq(&self.root_reg, &v.hess);
        out[I_PN_R] = b_reg_g.norm_squared();
        for (k, t) in self.tests.iter().enumerate() {
            let tj = t.jet(xi);
            out[I_WEAK + k] = -tj.grad.dot(&b_reg_g) - (phi - lambda * v.value) * tj.value;
        }
        out
    }
}

fn sqrt0(x: f64) -> f64 {
    x.max(0.0).sqrt()
}

fn bound(est: Estimate, rhs: f64, scale: f64) -> BoundCheck {
    BoundCheck {
        lhs: rhs - est.mean,
        rhs,
        margin: est,
        relative_margin: if rhs > 0.0 { Some(est.mean / rhs) } else { None },
        status: bound_status(est.mean, est.err, scale),
    }
}

fn solve_cell(
    setup: &Setup,
    lambda: f64,
    phi: &CylinderFunction,
    n: usize,
    epsilon: f64,
    quad: &QuadratureSpec,
) -> Result<CellReport> {
    let orig = build_pair(setup.model, &setup.q_inf, &setup.basis, n, 0.0)?;
    let reg = build_pair(setup.model, &setup.q_inf, &setup.basis, n, epsilon)?;
    let nu_used = nu_min(&orig).ok();
    let nu_regularized = nu_min(&reg).ok();
    let kernel = MehlerKernel::new(reg.clone());
    let fine = Resolvent::new(&kernel, lambda, phi, quad.laplace_nodes)?;
    let coarse = Resolvent::new(&kernel, lambda, phi, (quad.laplace_nodes / 2).max(2))?;
    let forms = CellForms {
        lambda,
        nu: nu_used.unwrap_or(0.0),
        orig: &orig,
        reg: &reg,
        root: linalg::psd_sqrt(&orig.q_mat),
        root_reg: linalg::psd_sqrt(&reg.q_mat),
        phi: phi.embed(n)?,
        tests: weak_form_battery(n)
            .iter()
            .map(|t| t.embed(n))
            .collect::<Result<_>>()?,
    };
    let est = quadrature::expect(n, quad, 2 * OUTPUTS, |xi| {
        let mut v = forms.integrands(xi, &fine.jet(xi));
        v.extend(forms.integrands(xi, &coarse.jet(xi)));
        v
    });
    // Laplace resolution enters the error bar through the coarse rule
    let e: Vec<Estimate> = (0..OUTPUTS)
        .map(|k| Estimate {
            mean: est[k].mean,
            err: est[k].err + (est[k].mean - est[OUTPUTS + k].mean).abs(),
        })
        .collect();

    let phi_sq = e[I_PHI2].mean.max(0.0);
    let scale = phi_sq.max(e[I_V2].mean.abs());
    let norms = Norms {
        l2: sqrt0(e[I_V2].mean),
        dh: sqrt0(e[I_DH].mean),
        dh2_hs: sqrt0(e[I_HS].mean),
        pn_dainf: sqrt0(e[I_PN].mean),
    };
    let norms_regularized = Norms {
        l2: norms.l2,
        dh: sqrt0(e[I_DH_R].mean),
        dh2_hs: sqrt0(e[I_HS_R].mean),
        pn_dainf: sqrt0(e[I_PN_R].mean),
    };
    let phi_l2 = phi_sq.sqrt();
    let w12 = sqrt0(e[I_V2].mean + e[I_DH].mean + e[I_HS].mean);
    Ok(CellReport {
        n,
        epsilon,
        nu_used,
        nu_regularized,
        phi_l2,
        norms,
        norms_regularized,
        a_l2: bound(e[I_A_L2], phi_sq, scale),
        a_dh: bound(e[I_A_DH], 2.0 * phi_sq, scale),
        b_energy: IdentityCheck {
            residual: e[I_ENERGY],
            status: identity_status(e[I_ENERGY].mean, e[I_ENERGY].err, scale),
        },
        c_weak_form: (0..WEAK_TESTS)
            .map(|k| {
                let r = e[I_WEAK + k];
                IdentityCheck {
                    residual: r,
                    status: identity_status(r.mean, r.err, scale),
                }
            })
            .collect(),
        d_max_regularity: nu_used.map(|_| bound(e[I_DMAX], 2.0 * phi_sq, scale)),
        k_constant: if phi_l2 > 0.0 {
            Some((w12 + norms.pn_dainf) / phi_l2)
        } else {
            None
        },
    })
}

fn check_inputs(
    model: &SpectralModel,
    lambda: f64,
    phi: &CylinderFunction,
    n_ladder: &[usize],
    epsilon_grid: &[f64],
    quad: &QuadratureSpec,
) -> Result<()> {
    quad.validate()?;
    phi.validate()?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(LabError::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if n_ladder.is_empty() || epsilon_grid.is_empty() {
        return Err(LabError::InvalidArgument("ladder and epsilon grid must be nonempty".into()));
    }
    if let Some(&n) = n_ladder.iter().find(|&&n| n < phi.arity().max(1) || n > model.dim) {
        return Err(LabError::DimensionMismatch(format!(
            "frame size {n} outside [{}, {}]",
            phi.arity().max(1),
            model.dim
        )));
    }
    if let Some(e) = epsilon_grid.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
        return Err(LabError::InvalidArgument(format!("epsilon must be finite and >= 0, got {e}")));
    }
    if !model.degeneracy(DEGENERACY_TOL).nondegenerate && !epsilon_grid.iter().any(|&e| e > 0.0) {
        return Err(LabError::RegularizationRequired);
    }
    Ok(())
}

pub fn solve_and_verify(
    model: &SpectralModel,
    lambda: f64,
    phi: &CylinderFunction,
    n_ladder: &[usize],
    epsilon_grid: &[f64],
    quad: &QuadratureSpec,
) -> Result<VerificationReport> {
    check_inputs(model, lambda, phi, n_ladder, epsilon_grid, quad)?;
    let max_n = *n_ladder.iter().max().expect("nonempty ladder");
    let setup = prepare(model, max_n)?;
    let jobs: Vec<(usize, f64)> = epsilon_grid
        .iter()
        .flat_map(|&e| n_ladder.iter().map(move |&n| (n, e)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(n, e)| solve_cell(&setup, lambda, phi, n, e, quad))
        .collect::<Result<Vec<_>>>()?;

    let k_drift: Vec<Option<f64>> = epsilon_grid
        .iter()
        .map(|&e| {
            let ks: Option<Vec<f64>> = cells.iter().filter(|c| c.epsilon == e).map(|c| c.k_constant).collect();
            let ks = ks?;
            let k0 = *ks.first()?;
            Some(ks.iter().map(|k| (k / k0 - 1.0).abs()).fold(0.0, f64::max))
        })
        .collect();

    let criteria: Vec<CriterionSummary> = CRITERIA
        .iter()
        .map(|&criterion| {
            let mut status = cells.iter().fold(Status::Skipped, |s, c| s.worst(c.status(criterion)));
            if criterion == Criterion::E && k_drift.iter().any(|d| d.is_none_or(|d| d > K_STABILITY)) {
                status = Status::Fail;
            }
            CriterionSummary { criterion, status }
        })
        .collect();
    let overall = criteria.iter().fold(Status::Skipped, |s, c| s.worst(c.status));
    Ok(VerificationReport {
        schema: SCHEMA.into(),
        model: model.label.clone(),
        dim: model.dim,
        degenerate: !model.degeneracy(DEGENERACY_TOL).nondegenerate,
        lambda,
        n_ladder: n_ladder.to_vec(),
        epsilon_grid: epsilon_grid.to_vec(),
        quad: *quad,
        phi: phi.clone(),
        cells,
        k_drift,
        criteria,
        overall,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveCell {
    pub n: usize,
    pub epsilon: f64,
    /// Squared norms of `V` with the pair used to solve.
    pub l2_sq: Estimate,
    pub dh_sq: Estimate,
    pub dh2_hs_sq: Estimate,
    pub pn_dainf_sq: Estimate,
    /// `max |lambda V - L V - phi|` over 64 Sobol points.
    pub pde_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub schema: String,
    pub model: String,
    pub lambda: f64,
    pub phi: CylinderFunction,
    pub quad: QuadratureSpec,
    pub cells: Vec<SolveCell>,
}

/// Solves on every `(n, epsilon)` cell and reports the norms of the solution
/// without judging any bound.
pub fn solve_report(
    model: &SpectralModel,
    lambda: f64,
    phi: &CylinderFunction,
    n_ladder: &[usize],
    epsilon_grid: &[f64],
    quad: &QuadratureSpec,
) -> Result<SolveReport> {
    check_inputs(model, lambda, phi, n_ladder, epsilon_grid, quad)?;
    let setup = prepare(model, *n_ladder.iter().max().expect("nonempty ladder"))?;
    let jobs: Vec<(usize, f64)> = epsilon_grid
        .iter()
        .flat_map(|&e| n_ladder.iter().map(move |&n| (n, e)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(n, epsilon)| {
            let pair = build_pair(setup.model, &setup.q_inf, &setup.basis, n, epsilon)?;
            let kernel = MehlerKernel::new(pair.clone());
            let v = Resolvent::new(&kernel, lambda, phi, quad.laplace_nodes)?;
            let m = crate::sobolev::sobolev_moments(&v, &pair, quad);
            let points = quadrature::PointSet::sobol_normal(n, 64, quad.seed);
            let samples: Vec<(Vec<f64>, Jet)> = (0..points.len())
                .map(|i| {
                    let x = points.point(i).to_vec();
                    let j = v.jet(&x);
                    (x, j)
                })
                .collect();
            Ok(SolveCell {
                n,
                epsilon,
                l2_sq: m.l2_sq,
                dh_sq: m.dh_sq,
                dh2_hs_sq: m.dh2_hs_sq,
                pn_dainf_sq: m.pn_da_sq,
                pde_residual: crate::mehler::pde_residual(&kernel, lambda, phi, &samples),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SolveReport {
        schema: SCHEMA.into(),
        model: model.label.clone(),
        lambda,
        phi: phi.clone(),
        quad: *quad,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n_from: usize,
    pub n_to: usize,
    /// `||V_to - V_from||^2` in `W^{1,2}_H`.
    pub diff_sq: Estimate,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub lambda: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n_from,n_to,diff,diff_sq,diff_sq_err\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:e},{:e},{:e}\n",
                r.n_from, r.n_to, r.diff, r.diff_sq.mean, r.diff_sq.err
            ));
        }
        out
    }
}

/// Successive `W^{1,2}_H` differences along the ladder, sampled jointly on the
/// larger frame of each consecutive pair (frames are nested).
pub fn convergence_study(
    model: &SpectralModel,
    lambda: f64,
    phi: &CylinderFunction,
    n_ladder: &[usize],
    quad: &QuadratureSpec,
) -> Result<ConvergenceTable> {
    check_inputs(model, lambda, phi, n_ladder, &[0.0, 1.0], quad)?;
    if n_ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LabError::InvalidArgument("ladder must be strictly increasing".into()));
    }
    let setup = prepare(model, *n_ladder.last().expect("nonempty ladder"))?;
    let solved = n_ladder
        .par_iter()
        .map(|&n| {
            let pair = build_pair(setup.model, &setup.q_inf, &setup.basis, n, 0.0)?;
            let v = Resolvent::new(&MehlerKernel::new(pair.clone()), lambda, phi, quad.laplace_nodes)?;
            Ok((pair, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = solved
        .windows(2)
        .map(|w| {
            let (small_pair, small) = (&w[0].0, &w[0].1);
            let (big_pair, big) = (&w[1].0, &w[1].1);
            let (m, n) = (small_pair.n, big_pair.n);
            let est = quadrature::expect_scalar(n, quad, |xi| {
                let jb = big.jet(xi);
                let js = small.jet(&xi[..m]);
                let mut dg = jb.grad.clone();
                for i in 0..m {
                    dg[i] -= js.grad[i];
                }
                (jb.value - js.value).powi(2) + dg.dot(&(&big_pair.q_mat * &dg))
            });
            ConvergenceRow {
                n_from: m,
                n_to: n,
                diff_sq: est,
                diff: sqrt0(est.mean),
            }
        })
        .collect();
    Ok(ConvergenceTable { lambda, rows })
}

/// Largest scaled residual of `4 Tr[HCHC] = Tr[MCMC] + Tr[(H-H^T)C(H-H^T)C]`
/// over random `H = -M/2 + S` (`S` skew) and symmetric `C`.
pub fn matrix_identity_check(trials: usize, dim: usize, seed: u64) -> Result<f64> {
    if dim == 0 {
        return Err(LabError::InvalidArgument("dim must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let mut draw = || DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let m = linalg::symmetrize(&draw());
        let x = draw();
        let s = (&x - x.transpose()) * 0.5;
        let c = linalg::symmetrize(&draw());
        let h = &m * -0.5 + &s;
        let scale = 4.0 * (h.norm() * c.norm()).powi(2) + (m.norm() * c.norm()).powi(2) + 1.0;
        worst = worst.max(crate::sobolev::trace_identity_residual(&h, &m, &c).abs() / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example7::{build_example, degenerate_example};

    fn quick() -> QuadratureSpec {
        QuadratureSpec {
            gh_order: 16,
            qmc_points: 4096,
            seed: 7,
            laplace_nodes: 48,
        }
    }

    fn scalar() -> SpectralModel {
        SpectralModel::from_matrices("scalar", -DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap()
    }

    #[test]
    fn constant_profile_passes_exactly() {
        let phi = CylinderFunction::Constant { value: 1.0 };
        let r = solve_and_verify(&scalar(), 2.0, &phi, &[1], &[0.0], &quick()).unwrap();
        let c = &r.cells[0];
        assert!((c.norms.l2 - 0.5).abs() < 1e-12);
        assert!(c.norms.dh < 1e-12 && c.norms.dh2_hs < 1e-12);
        assert_eq!(r.overall, Status::Pass, "{}", r.to_json());
        assert_eq!(r.exit_code(), 0);
    }

    #[test]
    fn scalar_cosine_matches_closed_form_norm() {
        // Hermite expansion: cos(xi) = e^{-1/2} sum_j (-1)^j He_{2j} / (2j)!
        let m = SpectralModel::from_matrices("std", -DMatrix::identity(1, 1) * 0.5, DMatrix::identity(1, 1)).unwrap();
        let phi = CylinderFunction::Cosine { a: vec![1.0], b: 0.0 };
        let r = solve_and_verify(&m, 1.0, &phi, &[1], &[0.0], &quick()).unwrap();
        // the pair has Q = 1, B = -1/2, so L He_k = -(k/2) He_k
        let mut l2_sq = 0.0;
        let mut fact = 1.0;
        for j in 0..30 {
            let k = 2 * j;
            if k > 0 {
                fact *= ((k - 1) * k) as f64;
            }
            let c = (-0.5f64).exp() / fact;
            // E[He_k^2] = k!
            l2_sq += (c / (1.0 + 0.5 * k as f64)).powi(2) * fact;
        }
        let c = &r.cells[0];
        assert!((c.norms.l2 - l2_sq.sqrt()).abs() < 1e-8, "{} vs {}", c.norms.l2, l2_sq.sqrt());
        assert_eq!(r.overall, Status::Pass, "{}", r.to_json());
        assert_eq!(c.nu_used, Some(0.0));
    }

    #[test]
    fn degenerate_without_epsilon_is_refused() {
        let m = degenerate_example(1.0, 0.5, 1.0, 4).unwrap();
        let phi = CylinderFunction::Cosine { a: vec![1.0, 0.5], b: 0.0 };
        let err = solve_and_verify(&m, 1.0, &phi, &[2], &[0.0], &quick()).unwrap_err();
        assert!(matches!(err, LabError::RegularizationRequired));
        assert!(solve_and_verify(&m, 1.0, &phi, &[2], &[0.0, 0.1], &quick()).is_ok());
    }

    #[test]
    fn report_round_trips() {
        let p = build_example(1.0, 0.5, 1.0, 4).unwrap();
        let phi = CylinderFunction::Cosine { a: vec![0.7, -0.4], b: 0.2 };
        let r = solve_and_verify(&p.model, 1.0, &phi, &[2, 3], &[0.0], &quick()).unwrap();
        let text = r.to_json();
        let back = VerificationReport::from_json(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json(), text);
        assert!(text.contains("\"schema\": \"ou-report/1\""));
    }

    #[test]
    fn doubling_lambda_halves_the_bound() {
        let p = build_example(1.0, 0.5, 1.0, 4).unwrap();
        let phi = CylinderFunction::Cosine { a: vec![1.0, 0.3], b: 0.1 };
        let r1 = solve_and_verify(&p.model, 1.0, &phi, &[2], &[0.0], &quick()).unwrap();
        let r2 = solve_and_verify(&p.model, 2.0, &phi, &[2], &[0.0], &quick()).unwrap();
        let (c1, c2) = (&r1.cells[0], &r2.cells[0]);
        assert!(c2.norms.l2 <= c1.phi_l2 / 2.0);
        assert!(c2.norms.l2 < c1.norms.l2);
        // eigenfunctions with eigenvalue -mu scale by (l + mu)/(2l + mu) > 1/2
        assert!(c2.norms.l2 > 0.5 * c1.norms.l2);
    }

    #[test]
    fn decoupled_extra_coordinates_do_not_change_v() {
        let mut a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -2.0, -3.0]));
        a[(0, 1)] = 0.5;
        let q = DMatrix::identity(3, 3);
        let m = SpectralModel::from_matrices("block", a, q).unwrap();
        let phi = CylinderFunction::Cosine { a: vec![1.0, -0.5], b: 0.0 };
        let t = convergence_study(&m, 1.0, &phi, &[2, 3], &quick()).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.rows[0].diff < 1e-6, "{:?}", t.rows);
        let single = convergence_study(&scalar(), 1.0, &CylinderFunction::Constant { value: 1.0 }, &[1], &quick()).unwrap();
        assert!(single.rows.is_empty());
        assert!(convergence_study(&m, 1.0, &phi, &[3, 2], &quick()).is_err());
    }

    #[test]
    fn matrix_identity_examples() {
        assert!(matrix_identity_check(100, 8, 3).unwrap() < 1e-10);
        assert!(matrix_identity_check(10, 1, 3).unwrap() < 1e-14);
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let h = &m * -0.5;
        let c = DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 0.5]);
        assert!(crate::sobolev::trace_identity_residual(&h, &m, &c).abs() < 1e-14);
    }

    #[test]
    fn solve_report_cells() {
        let p = build_example(1.0, 0.5, 1.0, 4).unwrap();
        let phi = CylinderFunction::Cosine { a: vec![0.7, -0.4], b: 0.2 };
        let r = solve_report(&p.model, 1.0, &phi, &[2, 3], &[0.0, 0.1], &quick()).unwrap();
        assert_eq!(r.cells.len(), 4);
        assert!(r.cells.iter().all(|c| c.pde_residual < 1e-4 && c.l2_sq.mean > 0.0));
    }

    #[test]
    fn status_rules() {
        assert_eq!(bound_status(1.0, 0.1, 1.0), Status::Pass);
        assert_eq!(bound_status(-1.0, 0.1, 1.0), Status::Fail);
        assert_eq!(bound_status(0.05, 0.1, 1.0), Status::Inconclusive);
        assert_eq!(bound_status(0.0, 1e-14, 1.0), Status::Pass);
        assert_eq!(identity_status(0.1, 0.01, 1.0), Status::Fail);
        assert_eq!(Status::Skipped.worst(Status::Pass), Status::Pass);
        assert_eq!(Status::Inconclusive.worst(Status::Fail), Status::Fail);
    }
}
