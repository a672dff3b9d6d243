//! Optimal two-view correction: minimizes the squared image distance of a correspondence to a
//! pair of matching epipolar lines through the real roots of a degree-6 polynomial.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Polynomial with ascending coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn eval(&self, t: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn derivative(&self) -> Self {
        Polynomial(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c)
                .collect(),
        )
    }

    /// `sum |c_k| |t|^k`, the natural scale for judging `|p(t)|`.
    pub fn magnitude(&self, t: f64) -> f64 {
        self.0
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * t.abs() + c.abs())
    }

    fn mul(&self, other: &Self) -> Self {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial(out)
    }

    fn add(&self, other: &Self) -> Self {
        let n = self.0.len().max(other.0.len());
        Polynomial(
            (0..n)
                .map(|k| {
                    self.0.get(k).copied().unwrap_or(0.0) + other.0.get(k).copied().unwrap_or(0.0)
                })
                .collect(),
        )
    }

    fn scale(&self, s: f64) -> Self {
        Polynomial(self.0.iter().map(|c| c * s).collect())
    }

    /// Real parts of all complex roots, via the eigenvalues of the companion matrix.
    pub fn root_candidates(&self) -> Vec<f64> {
        let max = self.0.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        if max == 0.0 {
            return Vec::new();
        }
        let mut coeffs = self.0.clone();
        while coeffs.len() > 1 && coeffs.last().unwrap().abs() <= 1e-14 * max {
            coeffs.pop();
        }
        let degree = coeffs.len() - 1;
        if degree == 0 {
            return Vec::new();
        }
        let lead = coeffs[degree];
        let mut companion = DMatrix::<f64>::zeros(degree, degree);
        for k in 0..degree {
            companion[(0, k)] = -coeffs[degree - 1 - k] / lead;
        }
        for k in 1..degree {
            companion[(k, k - 1)] = 1.0;
        }
        companion
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .collect()
    }

    /// Newton refinement, keeping the iterate with the smallest `|p|`.
    pub fn polish(&self, t0: f64) -> f64 {
        let dp = self.derivative();
        let mut best = (self.eval(t0).abs(), t0);
        let mut t = t0;
        for _ in 0..50 {
            let d = dp.eval(t);
            if d == 0.0 {
                break;
            }
            let next = t - self.eval(t) / d;
            if !next.is_finite() {
                break;
            }
            let v = self.eval(next).abs();
            if v < best.0 {
                best = (v, next);
            }
            if (next - t).abs() <= 1e-15 * (1.0 + t.abs()) {
                break;
            }
            t = next;
        }
        best.1
    }
}

/// Outcome of the optimal correction for one correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalCorrection {
    /// The degree-6 polynomial whose roots are the stationary points of the cost.
    pub polynomial: Polynomial,
    /// Minimizing line parameter; `None` when the minimum is attained at infinity.
    pub root: Option<f64>,
    pub x1: Vector2<f64>,
    pub x2: Vector2<f64>,
    /// Sum of squared distances from the measured points to the chosen epipolar lines.
    pub cost: f64,
}

/// Inverse of the translation taking `p` to the origin.
fn translation_inverse(p: &Vector2<f64>) -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, p.x, 0.0, 1.0, p.y, 0.0, 0.0, 1.0)
}

fn epipole_rotation(e: &Vector3<f64>) -> Result<(Matrix3<f64>, f64)> {
    let n = (e.x * e.x + e.y * e.y).sqrt();
    if !(n > 1e-300) {
        return Err(Error::NumericalFailure(
            "epipole coincides with the measured point".into(),
        ));
    }
    let e = e / n;
    Ok((
        Matrix3::new(e.x, e.y, 0.0, -e.y, e.x, 0.0, 0.0, 0.0, 1.0),
        e.z,
    ))
}

/// Closest point to the origin on the line `l`.
fn foot_of_origin(l: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-l.x * l.z, -l.y * l.z, l.x * l.x + l.y * l.y)
}

/// Corrects `(x1, x2)` to the nearest pair satisfying `x2^T F x1 = 0` exactly.
pub fn optimal_correction(
    x1: &Vector2<f64>,
    x2: &Vector2<f64>,
    f: &Matrix3<f64>,
) -> Result<OptimalCorrection> {
    let t1_inv = translation_inverse(x1);
    let t2_inv = translation_inverse(x2);
    let f1 = t2_inv.transpose() * f * t1_inv;

    let svd = f1.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let smallest = svd.singular_values.imin();
    let e1: Vector3<f64> = v_t.row(smallest).transpose();
    let e2: Vector3<f64> = u.column(smallest).into();
    let (r1, ef1) = epipole_rotation(&e1)?;
    let (r2, ef2) = epipole_rotation(&e2)?;
    let g = r2 * f1 * r1.transpose();
    let (a, b, c, d) = (g[(1, 1)], g[(1, 2)], g[(2, 1)], g[(2, 2)]);

    let at_b = Polynomial(vec![b, a]);
    let ct_d = Polynomial(vec![d, c]);
    let q = at_b.mul(&at_b).add(&ct_d.mul(&ct_d).scale(ef2 * ef2));
    let term1 = Polynomial(vec![0.0, 1.0]).mul(&q.mul(&q));
    let r = Polynomial(vec![1.0, 0.0, ef1 * ef1]);
    let term2 = r.mul(&r).mul(&at_b).mul(&ct_d).scale(a * d - b * c);
    let poly = term1.add(&term2.scale(-1.0));

    let cost_at = |t: f64| -> f64 {
        let denom = (a * t + b).powi(2) + ef2 * ef2 * (c * t + d).powi(2);
        t * t / (1.0 + ef1 * ef1 * t * t) + (c * t + d).powi(2) / denom
    };
    let cost_inf = if ef1 == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (ef1 * ef1) + c * c / (a * a + ef2 * ef2 * c * c)
    };

    let mut best: (f64, Option<f64>) = (cost_inf, None);
    for t in poly.root_candidates() {
        for cand in [t, poly.polish(t)] {
            let s = cost_at(cand);
            if s.is_finite() && s < best.0 {
                best = (s, Some(cand));
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::NumericalFailure(
            "no finite minimum of the epipolar distance".into(),
        ));
    }

    let (l1, l2) = match best.1 {
        Some(t) => (
            Vector3::new(t * ef1, 1.0, -t),
            g * Vector3::new(0.0, t, 1.0),
        ),
        None => (
            Vector3::new(ef1, 0.0, -1.0),
            g * Vector3::new(0.0, 1.0, 0.0),
        ),
    };
    let back = |t_inv: &Matrix3<f64>, r: &Matrix3<f64>, l: &Vector3<f64>| -> Result<Vector2<f64>> {
        let p = t_inv * r.transpose() * foot_of_origin(l);
        if p.z.abs() < 1e-300 {
            return Err(Error::NumericalFailure(
                "corrected point at infinity".into(),
            ));
        }
        Ok(Vector2::new(p.x / p.z, p.y / p.z))
    };
    Ok(OptimalCorrection {
        polynomial: poly,
        root: best.1,
        x1: back(&t1_inv, &r1, &l1)?,
        x2: back(&t2_inv, &r2, &l2)?,
        cost: best.0,
    })
}
