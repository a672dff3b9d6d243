//! Confidence-gated two-view triangulation of pseudo ground-truth poses.
//!
//! Points are triangulated by the optimal polynomial method in the camera frame of the first
//! view, rescaled so the mean bone length matches the skeleton template, and root-centered.

mod polynomial;
mod pseudo_gt;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::epipolar::RelativePose;
use crate::error::{Error, Result};
use crate::kinematics::{Intrinsics, Skeleton};
use crate::linalg::skew;
pub use crate::pose::Pose3D;

pub use polynomial::{optimal_correction, OptimalCorrection, Polynomial};
pub use pseudo_gt::{triangulate_sequence, PseudoGtCache, PseudoGtEntry, PseudoGtStats};

/// View gating thresholds: a view is used iff its mean joint confidence is at least
/// `mean_threshold` and every joint reaches `joint_threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub mean_threshold: f64,
    pub joint_threshold: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            mean_threshold: 0.8,
            joint_threshold: 0.7,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mean_threshold)
            || !(0.0..=1.0).contains(&self.joint_threshold)
        {
            return Err(Error::InvalidConfig(
                "gate thresholds must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn accepts(&self, confidences: &[f64]) -> bool {
        if confidences.is_empty() {
            return false;
        }
        let mean = confidences.iter().sum::<f64>() / confidences.len() as f64;
        let min = confidences.iter().copied().fold(f64::INFINITY, f64::min);
        mean >= self.mean_threshold && min >= self.joint_threshold
    }
}

/// Indices of the views whose confidences pass the gate. May be empty.
pub fn gate_views<C: AsRef<[f64]>>(per_view: &[C], config: &GateConfig) -> Vec<usize> {
    per_view
        .iter()
        .enumerate()
        .filter(|(_, c)| config.accepts(c.as_ref()))
        .map(|(i, _)| i)
        .collect()
}

/// Among accepted views, the pair with the highest summed mean confidence (lower indices win
/// ties). Returned as `(smaller, larger)`.
pub fn select_view_pair<C: AsRef<[f64]>>(
    per_view: &[C],
    config: &GateConfig,
) -> Option<(usize, usize)> {
    let accepted = gate_views(per_view, config);
    let mean = |v: usize| {
        let c = per_view[v].as_ref();
        c.iter().sum::<f64>() / c.len() as f64
    };
    let mut best: Option<((usize, usize), f64)> = None;
    for (i, &a) in accepted.iter().enumerate() {
        for &b in &accepted[i + 1..] {
            let score = mean(a) + mean(b);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some(((a, b), score));
            }
        }
    }
    best.map(|(pair, _)| pair)
}

/// Homogeneous linear triangulation (DLT). Each row of the 4x4 system is scaled to unit norm.
pub fn triangulate_linear(
    x1: &Vector2<f64>,
    x2: &Vector2<f64>,
    p1: &Matrix3x4<f64>,
    p2: &Matrix3x4<f64>,
) -> Result<Vector3<f64>> {
    let mut a = Matrix4::zeros();
    let rows = [
        x1.x * p1.row(2) - p1.row(0),
        x1.y * p1.row(2) - p1.row(1),
        x2.x * p2.row(2) - p2.row(0),
        x2.y * p2.row(2) - p2.row(1),
    ];
    for (i, r) in rows.iter().enumerate() {
        let n = r.norm();
        if !(n > 0.0) {
            return Err(Error::DegenerateConfiguration(
                "projection matrix row vanishes".into(),
            ));
        }
        a.set_row(i, &(r / n));
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    let s = &svd.singular_values;
    let min = s.imin();
    let mut sorted: Vec<f64> = s.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    if sorted[1] < 1e-12 * sorted[3] {
        // two-dimensional null space: the rays coincide
        return Err(Error::PointAtInfinity(0.0));
    }
    let x: Vector4<f64> = v_t.row(min).transpose();
    let x = x / x.norm();
    if x.w.abs() < 1e-12 {
        return Err(Error::PointAtInfinity(x.w.abs()));
    }
    Ok(x.xyz() / x.w)
}

/// Projection matrices `K1 [I | 0]` and `K2 [R | t]`.
pub fn camera_matrices(
    pose: &RelativePose,
    k1: &Intrinsics,
    k2: &Intrinsics,
) -> (Matrix3x4<f64>, Matrix3x4<f64>) {
    let p1 = k1.matrix() * Matrix3x4::identity();
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&pose.r);
    rt.set_column(3, &pose.t);
    (p1, k2.matrix() * rt)
}

/// Fundamental matrix consistent with `camera_matrices`, unnormalized.
pub fn fundamental_for_cameras(
    pose: &RelativePose,
    k1: &Intrinsics,
    k2: &Intrinsics,
) -> Result<Matrix3<f64>> {
    let k1_inv = k1.matrix().try_inverse().ok_or(Error::SingularIntrinsics)?;
    let k2_inv = k2.matrix().try_inverse().ok_or(Error::SingularIntrinsics)?;
    Ok(k2_inv.transpose() * skew(&pose.t) * pose.r * k1_inv)
}

pub fn project(p: &Matrix3x4<f64>, x: &Vector3<f64>) -> Vector2<f64> {
    let h = p * x.push(1.0);
    Vector2::new(h.x / h.z, h.y / h.z)
}

/// Sum of squared reprojection distances of `x` in both views.
pub fn reprojection_cost(
    x: &Vector3<f64>,
    x1: &Vector2<f64>,
    x2: &Vector2<f64>,
    p1: &Matrix3x4<f64>,
    p2: &Matrix3x4<f64>,
) -> f64 {
    (project(p1, x) - x1).norm_squared() + (project(p2, x) - x2).norm_squared()
}

/// Optimal (polynomial) triangulation: correct the measurements to exact epipolar
/// correspondence, then triangulate the corrected pair linearly.
pub fn triangulate_polynomial(
    x1: &Vector2<f64>,
    x2: &Vector2<f64>,
    f: &Matrix3<f64>,
    p1: &Matrix3x4<f64>,
    p2: &Matrix3x4<f64>,
) -> Result<Vector3<f64>> {
    let corrected = optimal_correction(x1, x2, f)?;
    triangulate_linear(&corrected.x1, &corrected.x2, p1, p2)
}

/// Triangulates every joint of one frame in the camera frame of the first view, in units of
/// the (unit-length) baseline. No scaling or centering.
pub fn triangulate_raw(
    x1: &[Vector2<f64>],
    x2: &[Vector2<f64>],
    pose: &RelativePose,
    k1: &Intrinsics,
    k2: &Intrinsics,
) -> Result<Pose3D> {
    if x1.len() != x2.len() {
        return Err(Error::shape(format!(
            "{} joints in view 1, {} in view 2",
            x1.len(),
            x2.len()
        )));
    }
    let (p1, p2) = camera_matrices(pose, k1, k2);
    let f = fundamental_for_cameras(pose, k1, k2)?;
    let joints = x1
        .iter()
        .zip(x2)
        .map(|(a, b)| triangulate_polynomial(a, b, &f, &p1, &p2))
        .collect::<Result<Vec<_>>>()?;
    Ok(Pose3D::new(joints))
}

/// Triangulated, template-scaled and root-centered pose in the first view's camera frame.
pub fn triangulate_pose(
    x1: &[Vector2<f64>],
    x2: &[Vector2<f64>],
    pose: &RelativePose,
    k1: &Intrinsics,
    k2: &Intrinsics,
    skeleton: &Skeleton,
) -> Result<Pose3D> {
    if x1.len() != skeleton.joint_count() {
        return Err(Error::shape(format!(
            "{} joints for a {}-joint skeleton",
            x1.len(),
            skeleton.joint_count()
        )));
    }
    let raw = triangulate_raw(x1, x2, pose, k1, k2)?;
    Ok(scale_to_skeleton(&raw, skeleton)?.root_centered())
}

/// Expresses a view-1 pose in view 2's frame (rotation only; root-relative poses drop `t`).
pub fn transfer_to_second_view(pose: &Pose3D, relative: &RelativePose) -> Pose3D {
    pose.transformed(&relative.r)
}

/// Scale factor `mean template bone / mean measured bone`.
pub fn skeleton_scale(raw: &Pose3D, skeleton: &Skeleton) -> Result<f64> {
    if raw.joint_count() != skeleton.joint_count() {
        return Err(Error::shape(format!(
            "{} joints for a {}-joint skeleton",
            raw.joint_count(),
            skeleton.joint_count()
        )));
    }
    let measured = skeleton.measure_bones(raw);
    let mean = measured.iter().sum::<f64>() / measured.len() as f64;
    if !(mean >= 1e-12) {
        return Err(Error::ZeroExtent(
            "mean bone length of the raw pose is zero",
        ));
    }
    Ok(skeleton.mean_bone_length() / mean)
}

pub fn scale_to_skeleton(raw: &Pose3D, skeleton: &Skeleton) -> Result<Pose3D> {
    if !raw.is_finite() {
        return Err(Error::InvalidData("pose has non-finite coordinates".into()));
    }
    let s = skeleton_scale(raw, skeleton)?;
    Ok(raw.scaled(s))
}

/// Mean per-joint Euclidean distance between prediction and pseudo ground truth.
pub fn triangulation_loss(predicted: &Pose3D, target: &Pose3D) -> f64 {
    assert_eq!(
        predicted.joint_count(),
        target.joint_count(),
        "joint count mismatch"
    );
    let n = predicted.joint_count() as f64;
    predicted
        .joints
        .iter()
        .zip(&target.joints)
        .map(|(y, t)| (t - y).norm())
        .sum::<f64>()
        / n
}

/// Gradient of [`triangulation_loss`] with respect to the prediction; zero at coincident joints.
pub fn triangulation_loss_gradient(predicted: &Pose3D, target: &Pose3D) -> Vec<Vector3<f64>> {
    let n = predicted.joint_count() as f64;
    predicted
        .joints
        .iter()
        .zip(&target.joints)
        .map(|(y, t)| {
            let d = y - t;
            let norm = d.norm();
            if norm == 0.0 {
                Vector3::zeros()
            } else {
                d / (norm * n)
            }
        })
        .collect()
}
