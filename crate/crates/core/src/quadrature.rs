//! Expectations over the standard Gaussian `N(0, I_n)` and the Laplace-transform
//! rule on `[0, 1]`.
//!
//! Small dimensions use tensor Gauss-Hermite grids; larger ones use scrambled
//! Sobol points split into independently scrambled batches. Every reduction
//! sums fixed-size chunks in index order, so results are reproducible across
//! thread counts.

use std::num::NonZeroUsize;

use gauss_quad::{GaussHermite, GaussLegendre};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{LabError, Result};

/// Largest dimension integrated with a tensor Gauss-Hermite grid.
pub const TENSOR_MAX_DIM: usize = 4;
/// Number of independently scrambled batches in the low-discrepancy route.
pub const QMC_BATCHES: usize = 16;
/// Order gap between a tensor rule and its error companion.
const COMPANION_GAP: usize = 4;
const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    pub gh_order: usize,
    pub qmc_points: usize,
    pub seed: u64,
    pub laplace_nodes: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            gh_order: 20,
            qmc_points: 1 << 16,
            seed: 0,
            laplace_nodes: 64,
        }
    }
}

impl QuadratureSpec {
    pub fn with_seed(seed: u64) -> Self {
        QuadratureSpec {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gh_order == 0 || self.gh_order > 96 {
            return Err(LabError::InvalidQuadrature(format!(
                "gh_order must be in 1..=96, got {}",
                self.gh_order
            )));
        }
        if self.qmc_points < QMC_BATCHES || !self.qmc_points.is_multiple_of(QMC_BATCHES) {
            return Err(LabError::InvalidQuadrature(format!(
                "qmc_points must be a positive multiple of {QMC_BATCHES}, got {}",
                self.qmc_points
            )));
        }
        if self.qmc_points / QMC_BATCHES > u32::MAX as usize {
            return Err(LabError::InvalidQuadrature("qmc_points too large".into()));
        }
        if self.laplace_nodes < 2 {
            return Err(LabError::InvalidQuadrature(format!(
                "laplace_nodes must be at least 2, got {}",
                self.laplace_nodes
            )));
        }
        Ok(())
    }
}

/// Gauss-Legendre nodes and weights mapped to `[0, 1]`, nodes ascending.
pub fn legendre_unit(order: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(order).expect("positive order"));
    rule.as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect()
}

/// Gauss-Hermite rule for the standard normal density (probabilists' scaling).
pub fn hermite_normal(order: usize) -> Vec<(f64, f64)> {
    let rule = GaussHermite::new(NonZeroUsize::new(order).expect("positive order"));
    let s = std::f64::consts::PI.sqrt();
    rule.as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (x * std::f64::consts::SQRT_2, w / s))
        .collect()
}

/// Inverse standard normal CDF.
pub fn normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// A weighted point set in `R^n`, grouped into batches for error estimation.
#[derive(Debug, Clone)]
pub struct PointSet {
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    batch_len: usize,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn tensor_hermite(dim: usize, order: usize) -> Self {
        let rule = hermite_normal(order);
        let total = order.pow(dim as u32);
        let mut points = Vec::with_capacity(total * dim);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let mut w = 1.0;
            for &k in &idx {
                points.push(rule[k].0);
                w *= rule[k].1;
            }
            weights.push(w);
            for d in (0..dim).rev() {
                idx[d] += 1;
                if idx[d] < order {
                    break;
                }
                idx[d] = 0;
            }
        }
        PointSet {
            dim,
            points,
            weights,
            batch_len: total,
        }
    }

    /// Scrambled Sobol points pushed through the normal quantile. Batch `b`
    /// uses its own Owen scramble derived from `seed`.
    pub fn sobol_normal(dim: usize, points: usize, seed: u64) -> Self {
        assert!(dim <= 256, "the Sobol tables cover 256 dimensions");
        let per = points / QMC_BATCHES;
        let w = 1.0 / (per * QMC_BATCHES) as f64;
        let mut pts = Vec::with_capacity(per * QMC_BATCHES * dim);
        for b in 0..QMC_BATCHES {
            let scramble = batch_seed(seed, b as u64);
            for i in 0..per {
                for d in 0..dim {
                    let u = sobol_burley::sample(i as u32, d as u32, scramble) as f64;
                    // f32 samples can round to 0; keep the quantile finite
                    let u = u.clamp(1e-9, 1.0 - 1e-9);
                    pts.push(normal_quantile(u));
                }
            }
        }
        PointSet {
            dim,
            points: pts,
            weights: vec![w; per * QMC_BATCHES],
            batch_len: per,
        }
    }

    fn batches(&self) -> usize {
        self.len() / self.batch_len
    }
}

fn batch_seed(seed: u64, batch: u64) -> u32 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(batch + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z ^ (z >> 32)) as u32
}

/// Weighted sums of each output over each batch: `sums[b][k]` and the
/// matching sums of absolute values.
fn batch_sums<F>(set: &PointSet, outputs: usize, f: &F) -> (Vec<Vec<f64>>, Vec<f64>)
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let n = set.len();
    let chunks: Vec<(usize, usize)> = (0..n.div_ceil(CHUNK))
        .map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(n)))
        .collect();
    let partial: Vec<(usize, Vec<f64>, Vec<f64>)> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            // a chunk may straddle a batch boundary; split it
            let mut out = Vec::new();
            let mut start = lo;
            while start < hi {
                let b = start / set.batch_len;
                let end = hi.min((b + 1) * set.batch_len);
                let mut s = vec![0.0; outputs];
                let mut a = vec![0.0; outputs];
                for i in start..end {
                    let vals = f(set.point(i));
                    debug_assert_eq!(vals.len(), outputs);
                    let w = set.weights[i];
                    for k in 0..outputs {
                        s[k] += w * vals[k];
                        a[k] += w * vals[k].abs();
                    }
                }
                out.push((b, s, a));
                start = end;
            }
            out
        })
        .flatten_iter()
        .collect();
    let mut sums = vec![vec![0.0; outputs]; set.batches()];
    let mut abs = vec![0.0; outputs];
    for (b, s, a) in partial {
        for k in 0..outputs {
            sums[b][k] += s[k];
            abs[k] += a[k];
        }
    }
    (sums, abs)
}

/// A quadrature mean with an error bar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub err: f64,
}

impl Estimate {
    pub fn exact(mean: f64) -> Self {
        Estimate { mean, err: 0.0 }
    }

    pub fn plus(self, other: Estimate) -> Estimate {
        Estimate {
            mean: self.mean + other.mean,
            err: self.err + other.err,
        }
    }

    pub fn scale(self, c: f64) -> Estimate {
        Estimate {
            mean: c * self.mean,
            err: c.abs() * self.err,
        }
    }
}

/// Jointly estimates `E[f_k(xi)]`, `xi ~ N(0, I_dim)`, for every output `k`.
///
/// Tensor route: the error bar is the difference to the rule of order
/// `gh_order - 4` plus a rounding floor. Sobol route: standard error of the
/// batch means.
pub fn expect<F>(dim: usize, spec: &QuadratureSpec, outputs: usize, f: F) -> Vec<Estimate>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    if dim == 0 {
        return f(&[]).into_iter().map(Estimate::exact).collect();
    }
    if dim <= TENSOR_MAX_DIM {
        let fine = PointSet::tensor_hermite(dim, spec.gh_order);
        let (s_fine, abs) = batch_sums(&fine, outputs, &f);
        let coarse_order = if spec.gh_order > COMPANION_GAP {
            spec.gh_order - COMPANION_GAP
        } else {
            spec.gh_order + COMPANION_GAP
        };
        let coarse = PointSet::tensor_hermite(dim, coarse_order);
        let (s_coarse, _) = batch_sums(&coarse, outputs, &f);
        let floor = 256.0 * f64::EPSILON;
        (0..outputs)
            .map(|k| Estimate {
                mean: s_fine[0][k],
                err: (s_fine[0][k] - s_coarse[0][k]).abs() + floor * abs[k].max(f64::MIN_POSITIVE),
            })
            .collect()
    } else {
        let set = PointSet::sobol_normal(dim, spec.qmc_points, spec.seed);
        let (sums, _) = batch_sums(&set, outputs, &f);
        let nb = sums.len() as f64;
        (0..outputs)
            .map(|k| {
                // each batch sum carries weight 1/nb of the total
                let means: Vec<f64> = sums.iter().map(|s| s[k] * nb).collect();
                let mean = means.iter().sum::<f64>() / nb;
                let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (nb - 1.0);
                Estimate {
                    mean,
                    err: (var / nb).sqrt(),
                }
            })
            .collect()
    }
}

/// Single-output convenience wrapper around [`expect`].
pub fn expect_scalar<F>(dim: usize, spec: &QuadratureSpec, f: F) -> Estimate
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    expect(dim, spec, 1, |x| vec![f(x)])[0]
}

/// Expectation of `f(mean + S z)`, `z ~ N(0, I)`, for a fixed square root `S`
/// of a covariance. Used for inner smoothing integrals.
pub fn gaussian_shift_expect<F>(
    mean: &[f64],
    sqrt_cov: &nalgebra::DMatrix<f64>,
    spec: &QuadratureSpec,
    outputs: usize,
    f: F,
) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let dim = mean.len();
    if dim == 0 {
        return f(&[]);
    }
    let set = if dim <= TENSOR_MAX_DIM {
        PointSet::tensor_hermite(dim, spec.gh_order)
    } else {
        PointSet::sobol_normal(dim, spec.qmc_points, spec.seed)
    };
    let eval = |z: &[f64]| {
        let mut y = mean.to_vec();
        for (j, zj) in z.iter().enumerate() {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi += sqrt_cov[(i, j)] * zj;
            }
        }
        f(&y)
    };
    let (sums, _) = batch_sums(&set, outputs, &eval);
    (0..outputs).map(|k| sums.iter().map(|s| s[k]).sum()).collect()
}
