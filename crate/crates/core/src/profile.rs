//! Smooth test profiles on `R^k` with analytic derivatives, and the `Field`
//! abstraction shared by profiles and solved resolvents.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Value, gradient and Hessian at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Jet {
    pub fn zero(n: usize) -> Self {
        Jet {
            value: 0.0,
            grad: DVector::zeros(n),
            hess: DMatrix::zeros(n, n),
        }
    }
}

/// A smooth function of the Theta-coordinates `xi in R^n`.
pub trait Field: Sync {
    fn dim(&self) -> usize;
    fn jet(&self, xi: &[f64]) -> Jet;
    fn value(&self, xi: &[f64]) -> f64 {
        self.jet(xi).value
    }
}

/// Profile of a cylinder function. The profile reads the first `arity`
/// coordinates of its argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CylinderFunction {
    /// `value`, everywhere.
    Constant { value: f64 },
    /// `cos(a . x + b)`.
    Cosine { a: Vec<f64>, b: f64 },
    /// `exp(-|x - center|^2 / (2 width^2))`.
    Gaussian { center: Vec<f64>, width: f64 },
    /// `prod_i p_i(x_i) * exp(-|x|^2 / (2 width^2))`, where `coeffs[i]` lists
    /// the coefficients of `p_i` in ascending degree.
    Polybump { coeffs: Vec<Vec<f64>>, width: f64 },
}

fn poly(c: &[f64], x: f64) -> (f64, f64, f64) {
    // Horner for p, p', p''
    let (mut p, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for &ci in c.iter().rev() {
        d2 = d2 * x + 2.0 * d1;
        d1 = d1 * x + p;
        p = p * x + ci;
    }
    (p, d1, d2)
}

impl CylinderFunction {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: CylinderFunction = serde_json::from_str(text).map_err(|e| LabError::Parse(e.to_string()))?;
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            CylinderFunction::Constant { value } => value.is_finite(),
            CylinderFunction::Cosine { a, b } => b.is_finite() && a.iter().all(|v| v.is_finite()),
            CylinderFunction::Gaussian { center, width } => {
                *width > 0.0 && width.is_finite() && center.iter().all(|v| v.is_finite())
            }
            CylinderFunction::Polybump { coeffs, width } => {
                *width > 0.0 && width.is_finite() && coeffs.iter().flatten().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(LabError::InvalidArgument(format!("malformed profile {self:?}")))
        }
    }

    /// Number of coordinates the profile depends on.
    pub fn arity(&self) -> usize {
        match self {
            CylinderFunction::Constant { .. } => 0,
            CylinderFunction::Cosine { a, .. } => a.len(),
            CylinderFunction::Gaussian { center, .. } => center.len(),
            CylinderFunction::Polybump { coeffs, .. } => coeffs.len(),
        }
    }

    /// Supremum of `|phi|`, or an upper bound for it.
    pub fn sup_bound(&self) -> f64 {
        match self {
            CylinderFunction::Constant { value } => value.abs(),
            CylinderFunction::Cosine { .. } | CylinderFunction::Gaussian { .. } => 1.0,
            CylinderFunction::Polybump { coeffs, width } => coeffs
                .iter()
                .map(|c| {
                    // |p(x)| e^{-x^2/2w^2} <= sum |c_j| |x|^j e^{-x^2/2w^2} <= sum |c_j| (j w^2/e)^{j/2}
                    c.iter()
                        .enumerate()
                        .map(|(j, cj)| {
                            let j = j as f64;
                            cj.abs() * if j == 0.0 { 1.0 } else { (j * width * width / std::f64::consts::E).powf(0.5 * j) }
                        })
                        .sum::<f64>()
                })
                .product(),
        }
    }

    /// Jet of the profile at `x`, which must have at least `arity` entries;
    /// derivatives are returned in `x.len()` dimensions.
    pub fn jet_at(&self, x: &[f64]) -> Jet {
        let n = x.len();
        assert!(n >= self.arity(), "profile of arity {} evaluated in {n} dimensions", self.arity());
        let mut jet = Jet::zero(n);
        match self {
            CylinderFunction::Constant { value } => jet.value = *value,
            CylinderFunction::Cosine { a, b } => {
                let arg = a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + b;
                let (s, c) = arg.sin_cos();
                jet.value = c;
                for i in 0..a.len() {
                    jet.grad[i] = -s * a[i];
                    for j in 0..a.len() {
                        jet.hess[(i, j)] = -c * a[i] * a[j];
                    }
                }
            }
            CylinderFunction::Gaussian { center, width } => {
                let k = center.len();
                let w2 = width * width;
                let r: Vec<f64> = (0..k).map(|i| x[i] - center[i]).collect();
                let v = (-0.5 * r.iter().map(|r| r * r).sum::<f64>() / w2).exp();
                jet.value = v;
                for i in 0..k {
                    jet.grad[i] = -v * r[i] / w2;
                    for j in 0..k {
                        let delta = if i == j { 1.0 / w2 } else { 0.0 };
                        jet.hess[(i, j)] = v * (r[i] * r[j] / (w2 * w2) - delta);
                    }
                }
            }
            CylinderFunction::Polybump { coeffs, width } => {
                let k = coeffs.len();
                let w2 = width * width;
                // each factor h_i(x) = p_i(x) e^{-x^2/2w^2}
                let factors: Vec<(f64, f64, f64)> = (0..k)
                    .map(|i| {
                        let (p, p1, p2) = poly(&coeffs[i], x[i]);
                        let g = (-0.5 * x[i] * x[i] / w2).exp();
                        let g1 = -x[i] / w2 * g;
                        let g2 = (x[i] * x[i] / (w2 * w2) - 1.0 / w2) * g;
                        (p * g, p1 * g + p * g1, p2 * g + 2.0 * p1 * g1 + p * g2)
                    })
                    .collect();
                let prod_except = |skip: &[usize]| -> f64 {
                    (0..k).filter(|i| !skip.contains(i)).map(|i| factors[i].0).product()
                };
                jet.value = prod_except(&[]);
                for i in 0..k {
                    jet.grad[i] = factors[i].1 * prod_except(&[i]);
                    for j in 0..k {
                        jet.hess[(i, j)] = if i == j {
                            factors[i].2 * prod_except(&[i])
                        } else {
                            factors[i].1 * factors[j].1 * prod_except(&[i, j])
                        };
                    }
                }
            }
        }
        jet
    }

    pub fn value_at(&self, x: &[f64]) -> f64 {
        match self {
            CylinderFunction::Constant { value } => *value,
            CylinderFunction::Cosine { a, b } => (a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + b).cos(),
            _ => self.jet_at(x).value,
        }
    }

    /// The profile as a field on `R^n`.
    pub fn embed(&self, n: usize) -> Result<EmbeddedProfile> {
        self.validate()?;
        if self.arity() > n {
            return Err(LabError::DimensionMismatch(format!(
                "profile depends on {} coordinates but the frame has {n}",
                self.arity()
            )));
        }
        Ok(EmbeddedProfile {
            profile: self.clone(),
            n,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddedProfile {
    pub profile: CylinderFunction,
    pub n: usize,
}

impl Field for EmbeddedProfile {
    fn dim(&self) -> usize {
        self.n
    }

    fn jet(&self, xi: &[f64]) -> Jet {
        self.profile.jet_at(&xi[..self.n])
    }

    fn value(&self, xi: &[f64]) -> f64 {
        self.profile.value_at(&xi[..self.n])
    }
}

/// Checks analytic derivatives of `field` against central differences at
/// `points`; returns the largest relative mismatch of gradient and Hessian.
pub fn finite_difference_mismatch(field: &dyn Field, points: &[Vec<f64>], h: f64) -> (f64, f64) {
    let n = field.dim();
    let mut grad_err: f64 = 0.0;
    let mut hess_err: f64 = 0.0;
    for x in points {
        let jet = field.jet(x);
        let scale_g = jet.grad.amax().max(1.0);
        let scale_h = jet.hess.amax().max(1.0);
        for i in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (field.value(&xp) - field.value(&xm)) / (2.0 * h);
            grad_err = grad_err.max((fd - jet.grad[i]).abs() / scale_g);
            let gp = field.jet(&xp).grad;
            let gm = field.jet(&xm).grad;
            for j in 0..n {
                let fd2 = (gp[j] - gm[j]) / (2.0 * h);
                hess_err = hess_err.max((fd2 - jet.hess[(i, j)]).abs() / scale_h);
            }
        }
    }
    (grad_err, hess_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    #[test]
    fn json_forms() {
        let f = CylinderFunction::from_json(r#"{"cosine":{"a":[1.0,-0.5],"b":0.25}}"#).unwrap();
        assert_eq!(f.arity(), 2);
        let g = CylinderFunction::from_json(r#"{"gaussian":{"center":[0.0],"width":1.5}}"#).unwrap();
        assert_eq!(g.arity(), 1);
        assert!(CylinderFunction::from_json(r#"{"gaussian":{"center":[0.0],"width":-1}}"#).is_err());
        assert!(CylinderFunction::from_json(r#"{"exec":"rm"}"#).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let profiles = [
            CylinderFunction::Cosine {
                a: vec![0.8, -1.1, 0.3],
                b: 0.4,
            },
            CylinderFunction::Gaussian {
                center: vec![0.3, -0.2, 0.1],
                width: 1.3,
            },
            CylinderFunction::Polybump {
                coeffs: vec![vec![1.0, 0.5, -0.2], vec![0.3, 1.0], vec![1.0, 0.0, 0.0, 0.1]],
                width: 1.7,
            },
        ];
        let pts = random_points(3, 100, 5);
        for p in &profiles {
            let field = p.embed(3).unwrap();
            let (g, h) = finite_difference_mismatch(&field, &pts, 1e-5);
            assert!(g < 1e-6 && h < 1e-6, "{p:?}: {g} {h}");
        }
    }

    #[test]
    fn embedding_pads_derivatives() {
        let f = CylinderFunction::Cosine { a: vec![1.0], b: 0.0 }.embed(3).unwrap();
        let jet = f.jet(&[0.5, 9.0, -9.0]);
        assert_eq!(jet.grad[1], 0.0);
        assert_eq!(jet.hess[(2, 2)], 0.0);
        assert!((jet.value - 0.5f64.cos()).abs() < 1e-16);
        assert!(CylinderFunction::Cosine { a: vec![1.0; 4], b: 0.0 }.embed(3).is_err());
    }

    #[test]
    fn sup_bounds_hold() {
        let p = CylinderFunction::Polybump {
            coeffs: vec![vec![0.5, 1.0, -0.3], vec![1.0, 0.2]],
            width: 1.2,
        };
        let bound = p.sup_bound();
        for x in random_points(2, 2000, 9) {
            assert!(p.value_at(&x).abs() <= bound);
        }
    }
}
