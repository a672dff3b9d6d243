//! Weak-perspective view switching and the multi-view re-projection loss, both as plain
//! functions and as graph builders for training.

use nalgebra::{Matrix2x3, Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralcore::{Graph, Tensor, Var};
use crate::pose::Pose3D;

/// Root-centred 2D pose with unit Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPose2D(Vec<Vector2<f64>>);

impl NormalizedPose2D {
    pub fn points(&self) -> &[Vector2<f64>] {
        &self.0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|p| [p.x, p.y]).collect()
    }
}

/// Subtracts the root (joint 0) and divides by the Frobenius norm of the centred pose.
pub fn normalize_2d(points: &[Vector2<f64>]) -> Result<NormalizedPose2D> {
    let root = *points.first().ok_or(Error::ZeroExtent("empty 2D pose"))?;
    let centred: Vec<Vector2<f64>> = points.iter().map(|p| p - root).collect();
    let norm = centred.iter().map(|p| p.norm_squared()).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::ZeroExtent("2D pose collapses onto its root"));
    }
    Ok(NormalizedPose2D(
        centred.into_iter().map(|p| p / norm).collect(),
    ))
}

/// `[[1,0,0],[0,1,0]] R X` for every joint.
pub fn weak_perspective_project(pose: &Pose3D, r: &Matrix3<f64>) -> Vec<Vector2<f64>> {
    pose.joints
        .iter()
        .map(|x| {
            let y = r * x;
            Vector2::new(y.x, y.y)
        })
        .collect()
}

/// Derivative of one projected joint with respect to that joint.
pub fn weak_perspective_jacobian(r: &Matrix3<f64>) -> Matrix2x3<f64> {
    r.fixed_rows::<2>(0).into_owned()
}

/// Derivative of one projected joint with respect to the row-major entries of `R`: row `k` of
/// the result holds `d u_k / d R` (only the first two rows of `R` contribute).
pub fn weak_perspective_rotation_jacobian(
    x: &nalgebra::Vector3<f64>,
) -> nalgebra::SMatrix<f64, 2, 9> {
    let mut j = nalgebra::SMatrix::<f64, 2, 9>::zeros();
    for k in 0..2 {
        for l in 0..3 {
            j[(k, 3 * k + l)] = x[l];
        }
    }
    j
}

/// Relative rotations `R_ij` taking view-`i` camera coordinates to view `j`, with `R_ii = I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationTable {
    pub views: usize,
    #[serde(with = "crate::serde_helpers::mat3_list")]
    rotations: Vec<Matrix3<f64>>,
}

impl RotationTable {
    pub fn identity(views: usize) -> Self {
        Self {
            views,
            rotations: vec![Matrix3::identity(); views * views],
        }
    }

    /// Builds the table from `R_{0j}`, the rotations from view 0 to every view.
    pub fn from_reference(from_first: &[Matrix3<f64>]) -> Self {
        let n = from_first.len();
        let mut rotations = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                rotations.push(if i == j {
                    Matrix3::identity()
                } else {
                    from_first[j] * from_first[i].transpose()
                });
            }
        }
        Self {
            views: n,
            rotations,
        }
    }

    /// Builds the table from a lookup that may fail for uncalibrated pairs.
    pub fn from_fn(views: usize, f: impl Fn(usize, usize) -> Option<Matrix3<f64>>) -> Result<Self> {
        let mut rotations = Vec::with_capacity(views * views);
        for i in 0..views {
            for j in 0..views {
                let r = if i == j {
                    Some(Matrix3::identity())
                } else {
                    f(i, j)
                };
                rotations.push(r.ok_or_else(|| {
                    Error::InsufficientViews(format!("no rotation between views {i} and {j}"))
                })?);
            }
        }
        Ok(Self { views, rotations })
    }

    pub fn get(&self, i: usize, j: usize) -> &Matrix3<f64> {
        &self.rotations[i * self.views + j]
    }

    pub fn set(&mut self, i: usize, j: usize, r: Matrix3<f64>) {
        self.rotations[i * self.views + j] = r;
    }
}

/// Residual Frobenius norm between one normalized observation and one normalized projection,
/// with masked joints contributing nothing.
fn term(obs: &NormalizedPose2D, proj: &NormalizedPose2D, mask: Option<&[bool]>) -> f64 {
    obs.0
        .iter()
        .zip(&proj.0)
        .enumerate()
        .filter(|(k, _)| mask.is_none_or(|m| m[*k]))
        .map(|(_, (a, b))| (a - b).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// Every term of the double sum: entry `[i][j]` compares view `i`'s prediction, rotated into
/// view `j`, with view `j`'s observation.
pub fn reprojection_terms(
    predictions: &[Pose3D],
    observations: &[Vec<Vector2<f64>>],
    rotations: &RotationTable,
    masks: Option<&[Vec<bool>]>,
) -> Result<Vec<Vec<f64>>> {
    let n = predictions.len();
    if n == 0
        || observations.len() != n
        || rotations.views != n
        || masks.is_some_and(|m| m.len() != n)
    {
        return Err(Error::shape(format!(
            "{n} predictions, {} observations, {} rotation views",
            observations.len(),
            rotations.views
        )));
    }
    let obs: Vec<NormalizedPose2D> = observations
        .iter()
        .map(|o| normalize_2d(o))
        .collect::<Result<_>>()?;
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if predictions[i].joint_count() != obs[j].0.len() {
                return Err(Error::shape(
                    "prediction and observation joint counts differ",
                ));
            }
            let proj = normalize_2d(&weak_perspective_project(
                &predictions[i],
                rotations.get(i, j),
            ))?;
            out[i][j] = term(&obs[j], &proj, masks.map(|m| m[j].as_slice()));
        }
    }
    Ok(out)
}

/// Sum over all ordered view pairs (same-view terms included).
pub fn reprojection_loss(
    predictions: &[Pose3D],
    observations: &[Vec<Vector2<f64>>],
    rotations: &RotationTable,
    masks: Option<&[Vec<bool>]>,
) -> Result<f64> {
    Ok(
        reprojection_terms(predictions, observations, rotations, masks)?
            .iter()
            .flatten()
            .sum(),
    )
}

/// Normalized observations `[B, 2J]` for a batch of 2D poses.
pub fn normalized_batch(poses: &[&[Vector2<f64>]]) -> Result<Tensor> {
    let cols = poses.first().map_or(0, |p| 2 * p.len());
    let mut data = Vec::with_capacity(poses.len() * cols);
    for p in poses {
        data.extend(normalize_2d(p)?.to_flat());
    }
    Ok(Tensor::matrix(poses.len(), cols, data))
}

/// Graph form of one term batch: `predictions: [B, 3J]` in view `i`, `rotation: [B, 9]` or
/// `[1, 9]` (`R_ij`), `observation: [B, 2J]` already normalized, optional `mask: [B, 2J]` of
/// zeros and ones. Returns `[B, 1]` residual norms.
pub fn term_node(
    g: &mut Graph,
    prediction: Var,
    rotation: Var,
    observation: Var,
    mask: Option<Var>,
) -> Result<Var> {
    let rotated = g.rotate_joints(prediction, rotation)?;
    let projected = g.drop_last(rotated, 3)?;
    let centred = g.center_root(projected, 2)?;
    let normalized = g.row_normalize(centred)?;
    let mut residual = g.sub(observation, normalized)?;
    if let Some(m) = mask {
        residual = g.mul(residual, m)?;
    }
    let cols = g.value(residual).cols();
    g.group_norm(residual, cols)
}

/// Batch mean of the double sum. `rotations[i][j]` is the `R_ij` node.
pub fn loss_node(
    g: &mut Graph,
    predictions: &[Var],
    observations: &[Var],
    rotations: &[Vec<Var>],
    masks: Option<&[Var]>,
) -> Result<Var> {
    let n = predictions.len();
    if n == 0
        || observations.len() != n
        || rotations.len() != n
        || masks.is_some_and(|m| m.len() != n)
    {
        return Err(Error::shape(
            "re-projection loss inputs disagree on the number of views",
        ));
    }
    let batch = g.value(predictions[0]).rows();
    let mut terms = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            terms.push(term_node(
                g,
                predictions[i],
                rotations[i][j],
                observations[j],
                masks.map(|m| m[j]),
            )?);
        }
    }
    let all = g.concat_cols(&terms)?;
    let total = g.sum(all);
    Ok(g.scale(total, 1.0 / batch as f64))
}

/// Joint confidences to a `[B, 2J]` residual mask.
pub fn confidence_mask(confidences: &[&[f64]], threshold: f64) -> Tensor {
    let cols = confidences.first().map_or(0, |c| 2 * c.len());
    let data = confidences
        .iter()
        .flat_map(|c| {
            c.iter().flat_map(|&v| {
                if v >= threshold {
                    [1.0, 1.0]
                } else {
                    [0.0, 0.0]
                }
            })
        })
        .collect();
    Tensor::matrix(confidences.len(), cols, data)
}

pub fn rotation_row(r: &Matrix3<f64>) -> Vec<f64> {
    (0..9).map(|k| r[(k / 3, k % 3)]).collect()
}
