//! Dense kernels shared by the rest of the crate: the Padé-13 matrix
//! exponential, a Bartels-Stewart Sylvester/Lyapunov solver on real Schur
//! forms, and a few symmetric eigenvalue helpers.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{LabError, Result};

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which the [13/13] Padé approximant is accurate to
/// double precision without scaling (Higham 2005).
const THETA13: f64 = 5.371920351148152;

pub fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with the degree-13 Padé
/// approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = norm1(a);
    if norm == 0.0 {
        return DMatrix::identity(n, n);
    }
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-s);

    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular for scaled arguments");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(a)).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

pub fn min_sym_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).first().copied().unwrap_or(0.0)
}

pub fn max_sym_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).last().copied().unwrap_or(0.0)
}

/// Largest real part among the eigenvalues of a general square matrix.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Symmetric PSD square root `S` with `S * S = a`; negative eigenvalues from
/// rounding are clamped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Spectral norm of a general matrix.
pub fn norm2(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// Largest generalized eigenvalue of the symmetric pencil `(k, g)` with `g`
/// positive definite, i.e. `max_x x^T k x / x^T g x`.
pub fn max_generalized_eigenvalue(k: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64> {
    let n = g.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let chol = nalgebra::Cholesky::new(symmetrize(g))
        .ok_or_else(|| LabError::NotPositiveDefinite(min_sym_eigenvalue(g)))?;
    let l = chol.l();
    // W = L^{-1} K L^{-T}
    let linv_k = l
        .solve_lower_triangular(&symmetrize(k))
        .expect("Cholesky factor is invertible");
    let w = l
        .solve_lower_triangular(&linv_k.transpose())
        .expect("Cholesky factor is invertible");
    Ok(max_sym_eigenvalue(&w))
}

fn schur_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let scale = t.norm().max(f64::MIN_POSITIVE);
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > 1e-14 * scale {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Solves `a X + X b = c` by Bartels-Stewart: both coefficients are reduced
/// to real quasi-triangular Schur form and the transformed system is solved
/// block by block.
pub fn solve_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, n) = (a.nrows(), b.nrows());
    if a.ncols() != m || b.ncols() != n || c.nrows() != m || c.ncols() != n {
        return Err(LabError::DimensionMismatch(format!(
            "sylvester: a {}x{}, b {}x{}, c {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            c.nrows(),
            c.ncols()
        )));
    }
    if m == 0 || n == 0 {
        return Ok(DMatrix::zeros(m, n));
    }
    let (ua, s) = Schur::new(a.clone()).unpack();
    let (ub, r) = Schur::new(b.clone()).unpack();
    let d = ua.transpose() * c * &ub;

    let rows = schur_blocks(&s);
    let cols = schur_blocks(&r);
    let mut y = DMatrix::<f64>::zeros(m, n);
    let scale = s.norm() + r.norm();

    for &(j0, q) in &cols {
        for &(i0, p) in rows.iter().rev() {
            let mut rhs = d.view((i0, j0), (p, q)).clone_owned();
            if i0 + p < m {
                let s_ik = s.view((i0, i0 + p), (p, m - i0 - p));
                let y_kj = y.view((i0 + p, j0), (m - i0 - p, q));
                rhs -= s_ik * y_kj;
            }
            if j0 > 0 {
                let y_il = y.view((i0, 0), (p, j0));
                let r_lj = r.view((0, j0), (j0, q));
                rhs -= y_il * r_lj;
            }
            // (I_q ⊗ S_ii + R_jj^T ⊗ I_p) vec(Y_ij) = vec(rhs)
            let dim = p * q;
            let mut sys = DMatrix::<f64>::zeros(dim, dim);
            for col in 0..q {
                for row in 0..p {
                    let eq = col * p + row;
                    for kk in 0..p {
                        sys[(eq, col * p + kk)] += s[(i0 + row, i0 + kk)];
                    }
                    for ll in 0..q {
                        sys[(eq, ll * p + row)] += r[(j0 + ll, j0 + col)];
                    }
                }
            }
            let lu = sys.lu();
            let pivot_floor = 1e-14 * scale;
            if lu.u().diagonal().iter().any(|x| x.abs() <= pivot_floor) {
                return Err(LabError::SingularSylvester);
            }
            let v = DVector::from_iterator(dim, (0..q).flat_map(|cc| (0..p).map(move |rr| (rr, cc))).map(|(rr, cc)| rhs[(rr, cc)]));
            let sol = lu.solve(&v).ok_or(LabError::SingularSylvester)?;
            for cc in 0..q {
                for rr in 0..p {
                    y[(i0 + rr, j0 + cc)] = sol[cc * p + rr];
                }
            }
        }
    }
    Ok(ua * y * ub.transpose())
}

/// Solves the continuous Lyapunov equation `a X + X a^T + q = 0` and returns
/// the symmetrized solution.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let x = solve_sylvester(a, &a.transpose(), &(-q))?;
    Ok(symmetrize(&x))
}

/// `∫_0^t e^{sM} Q e^{sM^T} ds` by Van Loan's block exponential. Accurate
/// only while `t·‖M‖` is moderate; see [`gramian`] for arbitrary `t`.
fn van_loan_gramian(m: &DMatrix<f64>, q: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let mut block = DMatrix::<f64>::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(-m * t));
    block.view_mut((0, n), (n, n)).copy_from(&(q * t));
    block.view_mut((n, n), (n, n)).copy_from(&(m.transpose() * t));
    let e = expm(&block);
    let f12 = e.view((0, n), (n, n)).clone_owned();
    let f22 = e.view((n, n), (n, n)).clone_owned();
    symmetrize(&(f22.transpose() * f12))
}

/// Controllability-type Gramian `Σ_t = ∫_0^t e^{sM} Q e^{sM^T} ds` together
/// with `e^{tM}`. A short step `h = t / 2^k` is integrated exactly by Van
/// Loan's method and then doubled `k` times through
/// `Σ_{2h} = Σ_h + e^{hM} Σ_h e^{hM^T}`, which only adds PSD terms.
pub fn gramian(m: &DMatrix<f64>, q: &DMatrix<f64>, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if t == 0.0 {
        return (DMatrix::zeros(n, n), DMatrix::identity(n, n));
    }
    let scale = t * norm1(m);
    let k = if scale > 0.5 { (scale / 0.5).log2().ceil() as i32 } else { 0 };
    let h = t * 2f64.powi(-k);
    let mut sigma = van_loan_gramian(m, q, h);
    let mut prop = expm(&(m * h));
    for _ in 0..k {
        sigma = symmetrize(&(&sigma + &prop * &sigma * prop.transpose()));
        prop = &prop * &prop;
    }
    (sigma, prop)
}
