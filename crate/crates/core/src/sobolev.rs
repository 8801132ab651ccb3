//! Gaussian Sobolev quantities in Theta-coordinates. All expectations are over
//! `xi ~ N(0, I_n)`, the image of the invariant measure under an orthonormal
//! frame.
//!
//! For `u(x) = v(<x, f_1>, ..., <x, f_n>)` with gradient `g` and Hessian `C`
//! of `v`: `|D_H u|^2 = g^T Q g`, `|D^2_H u|_HS^2 = Tr[Q C Q C]` and the
//! coordinates of `P_n D_{A_inf} u` are `B g`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::galerkin::{trace_form, GalerkinPair};
use crate::linalg;
use crate::profile::Field;
use crate::quadrature::{self, Estimate, QuadratureSpec};

/// Squared norms of one function, estimated jointly.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SobolevMoments {
    pub l2_sq: Estimate,
    pub dh_sq: Estimate,
    pub dh2_hs_sq: Estimate,
    pub pn_da_sq: Estimate,
}

/// `Tr[Q C Q C]` through the symmetric square root, so the result is
/// nonnegative even for singular `Q`.
pub fn hs_sq(q_root: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    (q_root * c * q_root).norm_squared()
}

pub fn sobolev_moments(u: &dyn Field, pair: &GalerkinPair, quad: &QuadratureSpec) -> SobolevMoments {
    let root = linalg::psd_sqrt(&pair.q_mat);
    let est = quadrature::expect(u.dim(), quad, 4, |xi| {
        let j = u.jet(xi);
        let bg = &pair.b_mat * &j.grad;
        vec![
            j.value * j.value,
            j.grad.dot(&(&pair.q_mat * &j.grad)),
            hs_sq(&root, &j.hess),
            bg.norm_squared(),
        ]
    });
    SobolevMoments {
        l2_sq: est[0],
        dh_sq: est[1],
        dh2_hs_sq: est[2],
        pn_da_sq: est[3],
    }
}

pub fn norm_l2(u: &dyn Field, quad: &QuadratureSpec) -> f64 {
    quadrature::expect_scalar(u.dim(), quad, |xi| u.value(xi).powi(2)).mean.max(0.0).sqrt()
}

pub fn norm_dh(u: &dyn Field, pair: &GalerkinPair, quad: &QuadratureSpec) -> f64 {
    sobolev_moments(u, pair, quad).dh_sq.mean.max(0.0).sqrt()
}

pub fn norm_dh2_hs(u: &dyn Field, pair: &GalerkinPair, quad: &QuadratureSpec) -> f64 {
    sobolev_moments(u, pair, quad).dh2_hs_sq.mean.max(0.0).sqrt()
}

pub fn norm_pn_dainf(u: &dyn Field, pair: &GalerkinPair, quad: &QuadratureSpec) -> f64 {
    sobolev_moments(u, pair, quad).pn_da_sq.mean.max(0.0).sqrt()
}

/// `E(u, w) = -E[Dw^T B Du]`.
pub fn energy_form(u: &dyn Field, w: &dyn Field, pair: &GalerkinPair, quad: &QuadratureSpec) -> Estimate {
    quadrature::expect_scalar(u.dim(), quad, |xi| {
        let gu = u.jet(xi).grad;
        let gw = w.jet(xi).grad;
        -gw.dot(&(&pair.b_mat * gu))
    })
}

/// Whitening factor `R` with `R^T R = Q` (upper Cholesky factor).
fn whitening(pair: &GalerkinPair) -> Result<DMatrix<f64>> {
    let chol = pair
        .q_mat
        .clone()
        .cholesky()
        .ok_or_else(|| LabError::NotPositiveDefinite(linalg::min_sym_eigenvalue(&pair.q_mat)))?;
    Ok(chol.l().transpose())
}

/// `H = R^{-T} B R^{-1}`: the drift pairing in whitened coordinates.
pub fn whitened_drift(pair: &GalerkinPair) -> Result<DMatrix<f64>> {
    let r = whitening(pair)?;
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or(LabError::NotPositiveDefinite(0.0))?;
    Ok(r_inv.transpose() * &pair.b_mat * r_inv)
}

/// Smallest constant with `|E(u, w)| <= c |D_H u| |D_H w|` pointwise in the
/// gradients: the spectral norm of the whitened drift.
pub fn sector_constant(pair: &GalerkinPair) -> Result<f64> {
    Ok(linalg::norm2(&whitened_drift(pair)?))
}

/// A direction `h_j` of the admissible family, identified by its frame index
/// or by its coordinates (a column of `B`).
#[derive(Debug, Clone)]
pub enum Direction {
    Index(usize),
    Coordinates(DVector<f64>),
}

fn resolve(direction: &Direction, pair: &GalerkinPair) -> Result<usize> {
    match direction {
        Direction::Index(j) if *j < pair.n => Ok(*j),
        Direction::Index(j) => Err(LabError::InadmissibleDirection(format!(
            "index {j} outside a frame of size {}",
            pair.n
        ))),
        Direction::Coordinates(v) => {
            if v.len() != pair.n {
                return Err(LabError::InadmissibleDirection(format!(
                    "direction has {} coordinates, frame has {}",
                    v.len(),
                    pair.n
                )));
            }
            let tol = 1e-10 * pair.b_mat.norm().max(1.0);
            (0..pair.n)
                .find(|&j| (pair.b_mat.column(j) - v).norm() <= tol)
                .ok_or_else(|| LabError::InadmissibleDirection("not a column of the drift pairing".into()))
        }
    }
}

/// `div_H` of `sum_i psi_i h_{j(i)}` at `xi`:
/// `-sum_i (l_j . D psi_i - psi_i l_j . xi)` with `l_j = B(:, j)`.
pub fn divergence_h(field: &[(&dyn Field, Direction)], pair: &GalerkinPair, xi: &[f64]) -> Result<f64> {
    let x = DVector::from_column_slice(xi);
    let mut total = 0.0;
    for (psi, dir) in field {
        let j = resolve(dir, pair)?;
        let l = pair.b_mat.column(j);
        let jet = psi.jet(xi);
        total -= l.dot(&jet.grad) - jet.value * l.dot(&x);
    }
    Ok(total)
}

/// `E[l_j . D f] - E[f l_j . xi]`; zero by Gaussian integration by parts.
pub fn integration_by_parts_residual(f: &dyn Field, j: usize, pair: &GalerkinPair, quad: &QuadratureSpec) -> Result<Estimate> {
    let j = resolve(&Direction::Index(j), pair)?;
    let l = pair.b_mat.column(j).into_owned();
    Ok(quadrature::expect_scalar(f.dim(), quad, |xi| {
        let jet = f.jet(xi);
        let lx: f64 = l.iter().zip(xi).map(|(a, b)| a * b).sum();
        l.dot(&jet.grad) - jet.value * lx
    }))
}

/// Both sides of `E[(div Psi)^2] = E[|sum psi_i l_i|^2] + E[sum (l_j . D psi_i)(l_i . D psi_j)]`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DivergenceNormCheck {
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// Expectation of the pointwise difference, with its own error bar.
    pub residual: Estimate,
}

pub fn divergence_norm_identity(
    field: &[(&dyn Field, Direction)],
    pair: &GalerkinPair,
    quad: &QuadratureSpec,
) -> Result<DivergenceNormCheck> {
    let dirs: Vec<DVector<f64>> = field
        .iter()
        .map(|(_, d)| resolve(d, pair).map(|j| pair.b_mat.column(j).into_owned()))
        .collect::<Result<_>>()?;
    let est = quadrature::expect(pair.n, quad, 3, |xi| {
        let x = DVector::from_column_slice(xi);
        let jets: Vec<_> = field.iter().map(|(psi, _)| psi.jet(xi)).collect();
        let mut div = 0.0;
        let mut u = DVector::zeros(pair.n);
        for (jet, l) in jets.iter().zip(&dirs) {
            div -= l.dot(&jet.grad) - jet.value * l.dot(&x);
            u.axpy(jet.value, l, 1.0);
        }
        let mut cross = 0.0;
        for (i, ji) in jets.iter().enumerate() {
            for (k, jk) in jets.iter().enumerate() {
                cross += dirs[k].dot(&ji.grad) * dirs[i].dot(&jk.grad);
            }
        }
        let lhs = div * div;
        let rhs = u.norm_squared() + cross;
        vec![lhs, rhs, lhs - rhs]
    });
    Ok(DivergenceNormCheck {
        lhs: est[0],
        rhs: est[1],
        residual: est[2],
    })
}

/// Whitened comparison of `|H C~|_F` with `|C~|_F / 2`, `C~ = R C R^T`.
///
/// Whitening gives `H = -I/2 + S` with `S` skew, hence `H^T H = I/4 + S^T S`
/// and `|H C~|^2 = |C~|^2/4 + |S C~|^2`: the two sides agree only when `S`
/// annihilates `C~`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WhiteningExperiment {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub skew_term: f64,
}

pub fn whitening_experiment(pair: &GalerkinPair, c: &DMatrix<f64>) -> Result<WhiteningExperiment> {
    let r = whitening(pair)?;
    let h = whitened_drift(pair)?;
    let ct = &r * c * r.transpose();
    let lhs = (&h * &ct).norm();
    let rhs = 0.5 * ct.norm();
    let skew = (&h - h.transpose()) * 0.5;
    Ok(WhiteningExperiment {
        lhs,
        rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { f64::NAN },
        skew_term: (skew * &ct).norm(),
    })
}

/// `4 Tr[HCHC] - Tr[MCMC] - Tr[(H - H^T) C (H - H^T) C]`, which vanishes when
/// `H + H^T = -M` and `C` is symmetric.
pub fn trace_identity_residual(h: &DMatrix<f64>, m: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let k = h - h.transpose();
    4.0 * trace_form(h, c) - trace_form(m, c) - trace_form(&k, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{canonical_seeds, gram_schmidt_theta};
    use crate::covariance::covariance_infinity;
    use crate::galerkin::build_pair;
    use crate::model::SpectralModel;
    use crate::profile::CylinderFunction;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn standard_pair() -> GalerkinPair {
        let m = SpectralModel::from_matrices("s", -DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let q_inf = covariance_infinity(&m).unwrap().q_inf;
        let basis = gram_schmidt_theta(&q_inf, &canonical_seeds(1), 1).unwrap();
        build_pair(&m, &q_inf, &basis, 1, 0.0).unwrap()
    }

    fn random_pair(n: usize, seed: u64) -> GalerkinPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = n + 1;
        let x = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let a = -DMatrix::identity(dim, dim) * 1.5 + (&x - x.transpose()) * 0.8 + DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-0.2..0.2));
        let y = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let q = &y * y.transpose() + DMatrix::identity(dim, dim) * 0.1;
        let m = SpectralModel::from_matrices("r", a, q).unwrap();
        let q_inf = covariance_infinity(&m).unwrap().q_inf;
        let basis = gram_schmidt_theta(&q_inf, &canonical_seeds(dim), n).unwrap();
        build_pair(&m, &q_inf, &basis, n, 0.0).unwrap()
    }

    fn random_cosine(rng: &mut ChaCha8Rng, n: usize) -> CylinderFunction {
        CylinderFunction::Cosine {
            a: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            b: rng.random_range(-1.0..1.0),
        }
    }

    #[test]
    fn constant_has_only_l2_mass() {
        let pair = standard_pair();
        let one = CylinderFunction::Constant { value: 1.0 }.embed(1).unwrap();
        let m = sobolev_moments(&one, &pair, &QuadratureSpec::default());
        assert!((m.l2_sq.mean - 1.0).abs() < 1e-14);
        assert_eq!(m.dh_sq.mean, 0.0);
        assert_eq!(m.dh2_hs_sq.mean, 0.0);
        assert_eq!(m.pn_da_sq.mean, 0.0);
    }

    #[test]
    fn one_dimensional_cosine_norms() {
        let pair = standard_pair();
        let u = CylinderFunction::Cosine { a: vec![1.0], b: 0.0 }.embed(1).unwrap();
        let quad = QuadratureSpec::default();
        let e2 = (-2.0f64).exp();
        assert!((norm_l2(&u, &quad).powi(2) - 0.5 * (1.0 + e2)).abs() < 1e-12);
        assert!((norm_dh(&u, &pair, &quad).powi(2) - (1.0 - e2)).abs() < 1e-12);
    }

    #[test]
    fn dh_norm_against_monte_carlo() {
        let pair = random_pair(3, 1);
        let a = vec![0.7, -0.5, 0.9];
        let u = CylinderFunction::Cosine { a: a.clone(), b: 0.3 }.embed(3).unwrap();
        let quad = QuadratureSpec::default();
        let exact_sq = norm_dh(&u, &pair, &quad).powi(2);
        let av = DVector::from_vec(a.clone());
        let aqa = av.dot(&(&pair.q_mat * &av));
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let samples = 1_000_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..samples {
            let s: f64 = a.iter().map(|ai| ai * rng.sample::<f64, _>(rand_distr::StandardNormal)).sum();
            let v = aqa * (s + 0.3).sin().powi(2);
            acc += v;
            acc2 += v * v;
        }
        let mean = acc / samples as f64;
        let sd = ((acc2 / samples as f64 - mean * mean) / samples as f64).sqrt();
        assert!((mean - exact_sq).abs() < 5.0 * sd, "{mean} {exact_sq} {sd}");
    }

    #[test]
    fn energy_form_properties() {
        let pair = random_pair(2, 3);
        let quad = QuadratureSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sector = sector_constant(&pair).unwrap();
        let one = CylinderFunction::Constant { value: 2.0 }.embed(2).unwrap();
        for _ in 0..10 {
            let u = random_cosine(&mut rng, 2).embed(2).unwrap();
            let w = random_cosine(&mut rng, 2).embed(2).unwrap();
            let euu = energy_form(&u, &u, &pair, &quad);
            let dh = norm_dh(&u, &pair, &quad);
            assert!(euu.mean >= 0.0);
            assert!((euu.mean - 0.5 * dh * dh).abs() < 1e-12);
            let euw = energy_form(&u, &w, &pair, &quad).mean;
            let ewu = energy_form(&w, &u, &pair, &quad).mean;
            let mixed = quadrature::expect_scalar(2, &quad, |xi| {
                u.jet(xi).grad.dot(&(&pair.q_mat * w.jet(xi).grad))
            })
            .mean;
            assert!((0.5 * (euw + ewu) - 0.5 * mixed).abs() <= 1e-6 * mixed.abs().max(1e-3));
            assert!(euw.abs() <= sector * dh * norm_dh(&w, &pair, &quad) + 1e-12);
            assert_eq!(energy_form(&u, &one, &pair, &quad).mean, 0.0);
        }
    }

    #[test]
    fn divergence_of_constant_field() {
        let pair = random_pair(3, 9);
        let c = CylinderFunction::Constant { value: 1.0 }.embed(3).unwrap();
        let xi = [0.3, -1.2, 0.5];
        let d = divergence_h(&[(&c, Direction::Index(1))], &pair, &xi).unwrap();
        let expect: f64 = (0..3).map(|k| pair.b_mat[(k, 1)] * xi[k]).sum();
        assert!((d - expect).abs() < 1e-14);
        let by_coords = Direction::Coordinates(pair.b_mat.column(1).into_owned());
        assert_eq!(divergence_h(&[(&c, by_coords)], &pair, &xi).unwrap(), d);
        let bad = Direction::Coordinates(DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert!(matches!(
            divergence_h(&[(&c, bad)], &pair, &xi),
            Err(LabError::InadmissibleDirection(_))
        ));
        assert!(divergence_h(&[(&c, Direction::Index(3))], &pair, &xi).is_err());
    }

    #[test]
    fn integration_by_parts_and_divergence_norm() {
        let pair = random_pair(3, 4);
        let quad = QuadratureSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for j in 0..3 {
            let f = random_cosine(&mut rng, 3).embed(3).unwrap();
            let r = integration_by_parts_residual(&f, j, &pair, &quad).unwrap();
            assert!(r.mean.abs() <= 2.0 * r.err + 1e-13, "{r:?}");
        }
        let f0 = random_cosine(&mut rng, 3).embed(3).unwrap();
        let f1 = random_cosine(&mut rng, 3).embed(3).unwrap();
        let check = divergence_norm_identity(&[(&f0, Direction::Index(0)), (&f1, Direction::Index(2))], &pair, &quad).unwrap();
        assert!(check.residual.mean.abs() <= 2.0 * check.residual.err + 1e-12, "{check:?}");
        assert!(check.lhs.mean > 0.0);
    }

    #[test]
    fn whitening_experiment_decomposition() {
        let pair = random_pair(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let c = linalg::symmetrize(&x);
        let e = whitening_experiment(&pair, &c).unwrap();
        assert!((e.lhs.powi(2) - e.rhs.powi(2) - e.skew_term.powi(2)).abs() < 1e-10 * e.lhs.powi(2));
        assert!(e.ratio >= 1.0 - 1e-12);
    }

    #[test]
    fn trace_identity_examples() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let c = DMatrix::from_row_slice(2, 2, &[0.5, -0.2, -0.2, 1.5]);
        let h = -&m * 0.5;
        assert!(trace_identity_residual(&h, &m, &c).abs() < 1e-14);
        let (mm, cc) = (DMatrix::from_element(1, 1, 3.0), DMatrix::from_element(1, 1, -0.7));
        assert!(trace_identity_residual(&(-&mm * 0.5), &mm, &cc).abs() < 1e-15);
        let pair = random_pair(4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let c = linalg::symmetrize(&x);
            let r = trace_identity_residual(&pair.b_mat, &pair.q_mat, &c);
            let scale = trace_form(&pair.q_mat, &c).abs() + 4.0 * trace_form(&pair.b_mat, &c).abs();
            assert!(r.abs() <= 1e-10 * scale.max(1.0));
        }
    }
}
