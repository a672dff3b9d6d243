use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of 3D joint positions in millimetres.
///
/// Root-relative poses keep the pelvis (joint 0) at the origin; world-frame motion uses the
/// same container without that constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose3D {
    #[serde(with = "crate::serde_helpers::vec3_list")]
    pub joints: Vec<Vector3<f64>>,
}

impl Pose3D {
    pub fn new(joints: Vec<Vector3<f64>>) -> Self {
        Self { joints }
    }

    pub fn zeros(joint_count: usize) -> Self {
        Self {
            joints: vec![Vector3::zeros(); joint_count],
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    /// Subtracts the root joint from every joint. The root row becomes exactly zero.
    pub fn root_centered(&self) -> Self {
        let root = self.joints[0];
        let mut joints: Vec<_> = self.joints.iter().map(|p| p - root).collect();
        joints[0] = Vector3::zeros();
        Self { joints }
    }

    pub fn transformed(&self, rotation: &Matrix3<f64>) -> Self {
        Self {
            joints: self.joints.iter().map(|p| rotation * p).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            joints: self.joints.iter().map(|p| p * s).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Row-major flattening `[x0, y0, z0, x1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() % 3 != 0 {
            return Err(Error::shape(format!(
                "{} values is not a multiple of 3",
                values.len()
            )));
        }
        Ok(Self {
            joints: values
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect(),
        })
    }
}
