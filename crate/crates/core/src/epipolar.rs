//! Two-view epipolar geometry: normalized eight-point estimation of the fundamental matrix,
//! confidence-weighted RANSAC, the essential matrix, and its decomposition into a relative pose
//! resolved by cheirality.
//!
//! Convention: `x2^T F x1 = 0` for a correspondence `(x1, x2)` seen in views 1 and 2, and the
//! relative pose maps view-1 camera coordinates to view 2 as `X2 = R X1 + t`.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{Camera, Intrinsics};
use crate::linalg::skew;
use crate::triangulation::triangulate_linear;

/// A point seen in view 1 (`x1`) and view 2 (`x2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub x1: Vector2<f64>,
    pub x2: Vector2<f64>,
}

impl Correspondence {
    pub fn new(x1: Vector2<f64>, x2: Vector2<f64>) -> Self {
        Self { x1, x2 }
    }

    /// Both points mapped through the inverse intrinsics.
    pub fn normalized(&self, k1: &Intrinsics, k2: &Intrinsics) -> Self {
        Self {
            x1: k1.normalize(&self.x1),
            x2: k2.normalize(&self.x2),
        }
    }
}

/// Rank-2 fundamental matrix, stored with unit Frobenius norm and its last non-negligible entry
/// (row-major) positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FundamentalMatrix(#[serde(with = "crate::serde_helpers::mat3")] Matrix3<f64>);

impl FundamentalMatrix {
    /// Projects `m` onto rank 2 and fixes scale and sign.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        let svd = m.svd(true, true);
        let mut s = svd.singular_values;
        if !(s[0] > 0.0) || !s[0].is_finite() {
            return Err(Error::DegenerateConfiguration(
                "fundamental matrix is zero".into(),
            ));
        }
        s[2] = 0.0;
        let f = svd.u.unwrap() * Matrix3::from_diagonal(&s) * svd.v_t.unwrap();
        Ok(Self(normalize_scale_and_sign(&f)))
    }

    /// Scale and sign only, for matrices that are rank 2 by construction. Skips the SVD, which
    /// in pixel units would perturb the tiny leading entries.
    fn from_rank_two(m: &Matrix3<f64>) -> Result<Self> {
        let n = m.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::DegenerateConfiguration(
                "fundamental matrix is zero".into(),
            ));
        }
        Ok(Self(normalize_scale_and_sign(m)))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Algebraic residual `x2^T F x1`.
    pub fn residual(&self, c: &Correspondence) -> f64 {
        (c.x2.push(1.0).transpose() * self.0 * c.x1.push(1.0))[0]
    }

    /// First-order geometric distance (square root of the Sampson error), in the units of the
    /// correspondence coordinates.
    pub fn sampson_distance(&self, c: &Correspondence) -> f64 {
        sampson_distance(&self.0, c)
    }

    /// `F = K2^-T [t]x R K1^-1`.
    pub fn from_pose(pose: &RelativePose, k1: &Intrinsics, k2: &Intrinsics) -> Result<Self> {
        let k1_inv = k1.matrix().try_inverse().ok_or(Error::SingularIntrinsics)?;
        let k2_inv = k2.matrix().try_inverse().ok_or(Error::SingularIntrinsics)?;
        Self::from_rank_two(&(k2_inv.transpose() * skew(&pose.t) * pose.r * k1_inv))
    }

    /// Distance between two fundamental matrices up to scale and sign.
    pub fn distance(&self, other: &Self) -> f64 {
        (self.0 - other.0).norm().min((self.0 + other.0).norm())
    }
}

fn normalize_scale_and_sign(m: &Matrix3<f64>) -> Matrix3<f64> {
    let mut f = m / m.norm();
    let last = (0..9)
        .rev()
        .map(|k| f[(k / 3, k % 3)])
        .find(|v| v.abs() > 1e-12)
        .unwrap_or(1.0);
    if last < 0.0 {
        f = -f;
    }
    f
}

pub(crate) fn sampson_distance(f: &Matrix3<f64>, c: &Correspondence) -> f64 {
    let x1 = c.x1.push(1.0);
    let x2 = c.x2.push(1.0);
    let fx1 = f * x1;
    let ftx2 = f.transpose() * x2;
    let num = x2.dot(&fx1);
    let den = fx1.x * fx1.x + fx1.y * fx1.y + ftx2.x * ftx2.x + ftx2.y * ftx2.y;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    num.abs() / den.sqrt()
}

/// Similarity moving the centroid to the origin with mean distance `sqrt(2)`.
fn hartley_normalization(
    points: impl Iterator<Item = Vector2<f64>> + Clone,
) -> Result<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let centroid = points.clone().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = points.map(|p| (p - centroid).norm()).sum::<f64>() / n;
    if !(mean_dist > 1e-12) {
        return Err(Error::DegenerateConfiguration("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(
        s,
        0.0,
        -s * centroid.x,
        0.0,
        s,
        -s * centroid.y,
        0.0,
        0.0,
        1.0,
    ))
}

/// Normalized eight-point algorithm on all correspondences.
pub fn estimate_fundamental_8pt(correspondences: &[Correspondence]) -> Result<FundamentalMatrix> {
    estimate_fundamental_weighted(correspondences, None)
}

/// Eight-point fit where each row of the design matrix is scaled by its weight.
pub fn estimate_fundamental_weighted(
    correspondences: &[Correspondence],
    weights: Option<&[f64]>,
) -> Result<FundamentalMatrix> {
    let n = correspondences.len();
    if n < 8 {
        return Err(Error::DegenerateConfiguration(format!(
            "eight-point estimation needs at least 8 correspondences, got {n}"
        )));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::shape(format!(
                "{} weights for {n} correspondences",
                w.len()
            )));
        }
    }
    let t1 = hartley_normalization(correspondences.iter().map(|c| c.x1))?;
    let t2 = hartley_normalization(correspondences.iter().map(|c| c.x2))?;

    let rows = n.max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, c) in correspondences.iter().enumerate() {
        let p1 = t1 * c.x1.push(1.0);
        let p2 = t2 * c.x2.push(1.0);
        let w = weights.map_or(1.0, |w| w[i]);
        for r in 0..3 {
            for col in 0..3 {
                a[(i, 3 * r + col)] = w * p2[r] * p1[col];
            }
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    // nalgebra does not sort singular values of a thin SVD of a tall matrix in every code path
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |k: usize| svd.singular_values[order[k]];
    if !(sv(7) > 1e-10 * sv(0)) {
        return Err(Error::DegenerateConfiguration(
            "design matrix has a null space of dimension greater than one".into(),
        ));
    }
    let null = v_t.row(order[8]);
    let f_norm = Matrix3::from_fn(|r, c| null[3 * r + c]);
    let rank2 = FundamentalMatrix::from_matrix(&f_norm)?;
    FundamentalMatrix::from_rank_two(&(t2.transpose() * rank2.0 * t1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier threshold on the Sampson distance in intrinsics-normalized coordinates.
    pub threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl RansacConfig {
    /// Threshold `3 / (f1 + f2)`, confidence 0.999.
    pub fn for_focals(f1: f64, f2: f64) -> Self {
        Self {
            threshold: 3.0 / (f1 + f2),
            confidence: 0.999,
            max_iterations: 10_000,
            seed: 0,
        }
    }

    pub fn for_intrinsics(k1: &Intrinsics, k2: &Intrinsics) -> Self {
        Self::for_focals(k1.mean_focal(), k2.mean_focal())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidConfig(
                "RANSAC threshold must be positive".into(),
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidConfig(
                "RANSAC confidence must be in (0, 1)".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "RANSAC needs at least one iteration".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub fundamental: FundamentalMatrix,
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

const SAMPLE_SIZE: usize = 8;

fn required_iterations(inlier_ratio: f64, confidence: f64) -> f64 {
    let p_good = inlier_ratio.powi(SAMPLE_SIZE as i32);
    if p_good >= 1.0 {
        return 1.0;
    }
    let miss = (-p_good).ln_1p();
    if !(miss < 0.0) {
        return f64::INFINITY;
    }
    ((1.0 - confidence).ln() / miss).ceil()
}

/// RANSAC over eight-point hypotheses. Samples are drawn with probability proportional to the
/// correspondence confidence, and the final fit weights rows by confidence.
pub fn ransac_fundamental(
    correspondences: &[Correspondence],
    confidences: &[f64],
    k1: &Intrinsics,
    k2: &Intrinsics,
    config: &RansacConfig,
) -> Result<RansacResult> {
    config.validate()?;
    let n = correspondences.len();
    if n < SAMPLE_SIZE {
        return Err(Error::DegenerateConfiguration(format!(
            "RANSAC needs at least {SAMPLE_SIZE} correspondences, got {n}"
        )));
    }
    if confidences.len() != n {
        return Err(Error::shape(format!(
            "{} confidences for {n} correspondences",
            confidences.len()
        )));
    }
    let k1m = k1.matrix();
    let k2m = k2.matrix();
    if k1m.determinant().abs() < 1e-12 || k2m.determinant().abs() < 1e-12 {
        return Err(Error::SingularIntrinsics);
    }
    let normalized: Vec<Correspondence> = correspondences
        .iter()
        .map(|c| c.normalized(k1, k2))
        .collect();
    let score = |f: &FundamentalMatrix| -> Vec<bool> {
        let fn_ = k2m.transpose() * f.0 * k1m;
        normalized
            .iter()
            .map(|c| sampson_distance(&fn_, c) < config.threshold)
            .collect()
    };

    let uniform =
        confidences.iter().all(|&c| c == confidences[0]) || confidences.iter().all(|&c| c <= 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(FundamentalMatrix, Vec<bool>, usize)> = None;
    let mut needed = config.max_iterations as f64;
    let mut iterations = 0;
    let mut sample = Vec::with_capacity(SAMPLE_SIZE);
    while iterations < config.max_iterations && (iterations as f64) < needed {
        iterations += 1;
        let picked = if uniform {
            index::sample(&mut rng, n, SAMPLE_SIZE)
        } else {
            index::sample_weighted(&mut rng, n, |i| confidences[i].max(1e-9), SAMPLE_SIZE)
                .map_err(|e| Error::NumericalFailure(format!("weighted sampling failed: {e}")))?
        };
        sample.clear();
        sample.extend(picked.iter().map(|i| correspondences[i]));
        let Ok(f) = estimate_fundamental_8pt(&sample) else {
            continue;
        };
        let mask = score(&f);
        let count = mask.iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|(_, _, c)| count > *c) {
            needed = required_iterations(count as f64 / n as f64, config.confidence);
            best = Some((f, mask, count));
        }
    }

    let (mut f, mut mask, mut count) = best.ok_or(Error::NoConsensus {
        min: SAMPLE_SIZE,
        best: 0,
    })?;
    if count < SAMPLE_SIZE {
        return Err(Error::NoConsensus {
            min: SAMPLE_SIZE,
            best: count,
        });
    }
    // Refit on the consensus set until it stops changing.
    for _ in 0..5 {
        let (subset, weights): (Vec<_>, Vec<_>) = correspondences
            .iter()
            .zip(confidences)
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|((c, &w), _)| (*c, if uniform { 1.0 } else { w }))
            .unzip();
        let refit = estimate_fundamental_weighted(&subset, Some(&weights))?;
        let refit_mask = score(&refit);
        let refit_count = refit_mask.iter().filter(|&&b| b).count();
        if refit_count < count {
            break;
        }
        f = refit;
        let stable = refit_mask == mask;
        mask = refit_mask;
        count = refit_count;
        if stable {
            break;
        }
    }
    Ok(RansacResult {
        fundamental: f,
        inliers: mask,
        iterations,
    })
}

/// Weighted eight-point fit in intrinsics-normalized coordinates, projected to the essential
/// manifold. Avoids the precision lost when a pixel-space `F` is mapped through `K2^T F K1`.
pub fn estimate_essential(
    correspondences: &[Correspondence],
    weights: Option<&[f64]>,
    k1: &Intrinsics,
    k2: &Intrinsics,
) -> Result<Matrix3<f64>> {
    let normalized: Vec<Correspondence> = correspondences
        .iter()
        .map(|c| c.normalized(k1, k2))
        .collect();
    let e = estimate_fundamental_weighted(&normalized, weights)?;
    Ok(project_to_essential(e.matrix()))
}

/// `E = K2^T F K1`, projected to the essential manifold (singular values `(s, s, 0)`).
pub fn essential_from_fundamental(
    f: &FundamentalMatrix,
    k1: &Intrinsics,
    k2: &Intrinsics,
) -> Result<Matrix3<f64>> {
    let k1m = k1.matrix();
    let k2m = k2.matrix();
    if k1m.determinant().abs() < 1e-12 || k2m.determinant().abs() < 1e-12 {
        return Err(Error::SingularIntrinsics);
    }
    Ok(project_to_essential(&(k2m.transpose() * f.0 * k1m)))
}

pub fn project_to_essential(e: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = e.svd(true, true);
    let s = (svd.singular_values[0] + svd.singular_values[1]) / 2.0;
    svd.u.unwrap() * Matrix3::from_diagonal(&Vector3::new(s, s, 0.0)) * svd.v_t.unwrap()
}

/// Rotation and unit translation direction of view 2 relative to view 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativePose {
    #[serde(with = "crate::serde_helpers::mat3")]
    pub r: Matrix3<f64>,
    #[serde(with = "crate::serde_helpers::vec3")]
    pub t: Vector3<f64>,
}

impl RelativePose {
    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Self {
        Self {
            r,
            t: t.normalize(),
        }
    }

    pub fn identity_rotation_with(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Ground-truth pose between two simulated cameras.
    pub fn from_cameras(a: &Camera, b: &Camera) -> Self {
        let (r, t) = crate::kinematics::relative_extrinsics(a, b);
        Self::new(r, t)
    }

    pub fn essential(&self) -> Matrix3<f64> {
        skew(&self.t) * self.r
    }

    /// The pose of view 1 relative to view 2.
    pub fn inverse(&self) -> Self {
        Self::new(self.r.transpose(), -(self.r.transpose() * self.t))
    }
}

/// Signed first-order geometric residuals of `E = [t]x R` on intrinsics-normalized points.
fn sampson_residuals(
    pose: &RelativePose,
    normalized: &[Correspondence],
    weights: &[f64],
    out: &mut [f64],
) {
    let e = pose.essential();
    for ((c, w), r) in normalized.iter().zip(weights).zip(out.iter_mut()) {
        let x1 = c.x1.push(1.0);
        let x2 = c.x2.push(1.0);
        let ex1 = e * x1;
        let etx2 = e.transpose() * x2;
        let den = ex1.x * ex1.x + ex1.y * ex1.y + etx2.x * etx2.x + etx2.y * etx2.y;
        *r = if den > 0.0 {
            w.sqrt() * x2.dot(&ex1) / den.sqrt()
        } else {
            0.0
        };
    }
}

fn perturb_pose(pose: &RelativePose, basis: &[Vector3<f64>; 2], delta: &[f64]) -> RelativePose {
    let omega = Vector3::new(delta[0], delta[1], delta[2]);
    let t = pose.t + basis[0] * delta[3] + basis[1] * delta[4];
    RelativePose::new(crate::linalg::axis_angle(&omega) * pose.r, t)
}

/// Levenberg-Marquardt over rotation and translation direction, minimizing the weighted
/// squared Sampson distance of `correspondences` (pixels) to the epipolar geometry of `pose`.
pub fn refine_pose(
    pose: &RelativePose,
    correspondences: &[Correspondence],
    weights: Option<&[f64]>,
    k1: &Intrinsics,
    k2: &Intrinsics,
) -> Result<RelativePose> {
    const PARAMS: usize = 5;
    const STEP: f64 = 1e-7;
    let n = correspondences.len();
    if n < PARAMS {
        return Err(Error::DegenerateConfiguration(format!(
            "pose refinement needs at least {PARAMS} correspondences, got {n}"
        )));
    }
    let weights = match weights {
        Some(w) if w.len() != n => {
            return Err(Error::shape(format!(
                "{} weights for {n} correspondences",
                w.len()
            )))
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; n],
    };
    let normalized: Vec<Correspondence> = correspondences
        .iter()
        .map(|c| c.normalized(k1, k2))
        .collect();
    let mut current = *pose;
    let mut residuals = vec![0.0; n];
    sampson_residuals(&current, &normalized, &weights, &mut residuals);
    let mut cost: f64 = residuals.iter().map(|r| r * r).sum();
    let mut lambda = 1e-3;
    let mut jacobian = DMatrix::<f64>::zeros(n, PARAMS);
    let (mut plus, mut minus) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..100 {
        let b1 = current
            .t
            .cross(&Vector3::x())
            .try_normalize(1e-6)
            .unwrap_or_else(|| current.t.cross(&Vector3::y()).normalize());
        let basis = [b1, current.t.cross(&b1)];
        for k in 0..PARAMS {
            let mut d = [0.0; PARAMS];
            d[k] = STEP;
            sampson_residuals(
                &perturb_pose(&current, &basis, &d),
                &normalized,
                &weights,
                &mut plus,
            );
            d[k] = -STEP;
            sampson_residuals(
                &perturb_pose(&current, &basis, &d),
                &normalized,
                &weights,
                &mut minus,
            );
            for i in 0..n {
                jacobian[(i, k)] = (plus[i] - minus[i]) / (2.0 * STEP);
            }
        }
        let jtj = jacobian.transpose() * &jacobian;
        let jtr = jacobian.transpose() * nalgebra::DVector::from_column_slice(&residuals);
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = jtj.clone();
            for k in 0..PARAMS {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-30);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-&jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = perturb_pose(&current, &basis, step.as_slice());
            sampson_residuals(&candidate, &normalized, &weights, &mut plus);
            let candidate_cost: f64 = plus.iter().map(|r| r * r).sum();
            if candidate_cost < cost {
                let gain = (cost - candidate_cost) / cost.max(f64::MIN_POSITIVE);
                current = candidate;
                cost = candidate_cost;
                std::mem::swap(&mut residuals, &mut plus);
                lambda = (lambda / 10.0).max(1e-12);
                improved = gain > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !cost.is_finite() {
        return Err(Error::NumericalFailure("pose refinement diverged".into()));
    }
    Ok(current)
}

/// Per-candidate positive-depth counts from a cheirality test, in the order
/// `(U W V^T, u3), (U W V^T, -u3), (U W^T V^T, u3), (U W^T V^T, -u3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheiralityReport {
    pub candidates: [RelativePose; 4],
    pub positive_counts: [usize; 4],
}

pub fn essential_candidates(e: &Matrix3<f64>) -> [RelativePose; 4] {
    let svd = e.svd(true, true);
    let mut u = svd.u.unwrap();
    let mut v_t = svd.v_t.unwrap();
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into();
    [
        RelativePose::new(r1, t),
        RelativePose::new(r1, -t),
        RelativePose::new(r2, t),
        RelativePose::new(r2, -t),
    ]
}

/// Counts, for every essential decomposition, how many correspondences triangulate in front of
/// both cameras. Correspondences are in pixels.
pub fn cheirality_counts(
    e: &Matrix3<f64>,
    correspondences: &[Correspondence],
    k1: &Intrinsics,
    k2: &Intrinsics,
) -> CheiralityReport {
    let candidates = essential_candidates(e);
    let normalized: Vec<Correspondence> = correspondences
        .iter()
        .map(|c| c.normalized(k1, k2))
        .collect();
    let p1 = nalgebra::Matrix3x4::identity();
    let positive_counts = candidates.map(|cand| {
        let mut p2 = nalgebra::Matrix3x4::zeros();
        p2.fixed_view_mut::<3, 3>(0, 0).copy_from(&cand.r);
        p2.set_column(3, &cand.t);
        normalized
            .iter()
            .filter(|c| match triangulate_linear(&c.x1, &c.x2, &p1, &p2) {
                Ok(x) => x.z > 0.0 && (cand.r * x + cand.t).z > 0.0,
                Err(_) => false,
            })
            .count()
    });
    CheiralityReport {
        candidates,
        positive_counts,
    }
}

/// Selects the essential decomposition with the most points in front of both cameras.
pub fn decompose_essential(
    e: &Matrix3<f64>,
    correspondences: &[Correspondence],
    k1: &Intrinsics,
    k2: &Intrinsics,
) -> Result<RelativePose> {
    if correspondences.is_empty() {
        return Err(Error::DegenerateConfiguration(
            "cheirality test needs at least one correspondence".into(),
        ));
    }
    let report = cheirality_counts(e, correspondences, k1, k2);
    let best = (0..4)
        .max_by_key(|&i| (report.positive_counts[i], std::cmp::Reverse(i)))
        .unwrap();
    let count = report.positive_counts[best];
    let ties = report
        .positive_counts
        .iter()
        .filter(|&&c| c == count)
        .count();
    if ties > 1 {
        return Err(Error::CheiralityAmbiguous { count });
    }
    Ok(report.candidates[best])
}
