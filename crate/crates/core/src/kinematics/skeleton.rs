use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose3D;

/// Kinematic tree with a rest pose.
///
/// Joints are stored in topological order: every parent index is smaller than its child's, and
/// joint 0 (the pelvis) is the only root. World frame is x to the subject's left, y forward and
/// z up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub id: String,
    pub names: Vec<String>,
    /// `None` for the root.
    pub parents: Vec<Option<usize>>,
    /// Rest-pose offset of each joint from its parent, in mm. Zero for the root.
    #[serde(with = "crate::serde_helpers::vec3_list")]
    pub offsets: Vec<Vector3<f64>>,
}

/// Standard 17-joint layout: pelvis, right leg, left leg, spine, thorax, neck, head, left arm,
/// right arm.
pub const H36M_PARENTS: [i64; 17] = [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15];

const H36M_NAMES: [&str; 17] = [
    "pelvis",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
];

impl Skeleton {
    /// Template body of roughly 1.7 m in millimetres.
    pub fn h36m17() -> Self {
        let offsets = [
            [0.0, 0.0, 0.0],
            [-132.0, 0.0, 0.0],
            [0.0, 0.0, -442.0],
            [0.0, 0.0, -454.0],
            [132.0, 0.0, 0.0],
            [0.0, 0.0, -442.0],
            [0.0, 0.0, -454.0],
            [0.0, 10.0, 233.0],
            [0.0, 0.0, 257.0],
            [0.0, 45.0, 105.0],
            [0.0, -10.0, 115.0],
            [151.0, 0.0, -5.0],
            [0.0, 0.0, -279.0],
            [0.0, 0.0, -249.0],
            [-151.0, 0.0, -5.0],
            [0.0, 0.0, -279.0],
            [0.0, 0.0, -249.0],
        ];
        Self {
            id: "h36m17".to_owned(),
            names: H36M_NAMES.iter().map(|s| (*s).to_owned()).collect(),
            parents: H36M_PARENTS
                .iter()
                .map(|&p| usize::try_from(p).ok())
                .collect(),
            offsets: offsets
                .iter()
                .map(|o| Vector3::new(o[0], o[1], o[2]))
                .collect(),
        }
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.joint_count();
        if j < 3 {
            return Err(Error::InvalidConfig(format!(
                "skeleton needs at least 3 joints, got {j}"
            )));
        }
        if self.offsets.len() != j || self.names.len() != j {
            return Err(Error::InvalidConfig(
                "skeleton field lengths disagree".into(),
            ));
        }
        if self.parents[0].is_some() {
            return Err(Error::InvalidConfig("joint 0 must be the root".into()));
        }
        for (child, parent) in self.parents.iter().enumerate().skip(1) {
            match parent {
                Some(p) if *p < child => {}
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "joint {child} must have a parent with a smaller index"
                    )))
                }
            }
            if !(self.offsets[child].norm() > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "bone ending at joint {child} has zero length"
                )));
            }
        }
        Ok(())
    }

    /// `(child, parent)` pairs, one per bone.
    pub fn bones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|p| (c, p)))
    }

    pub fn bone_lengths(&self) -> Vec<f64> {
        self.bones().map(|(c, _)| self.offsets[c].norm()).collect()
    }

    pub fn mean_bone_length(&self) -> f64 {
        let lengths = self.bone_lengths();
        lengths.iter().sum::<f64>() / lengths.len() as f64
    }

    /// Bone lengths measured on an arbitrary pose, in `bones()` order.
    pub fn measure_bones(&self, pose: &Pose3D) -> Vec<f64> {
        self.bones()
            .map(|(c, p)| (pose.joints[c] - pose.joints[p]).norm())
            .collect()
    }

    /// Forward kinematics. `local[j]` rotates the subtree below joint `j`; the root is placed at
    /// `root_position` with orientation `local[0]`.
    pub fn forward_kinematics(
        &self,
        root_position: &Vector3<f64>,
        local: &[Matrix3<f64>],
    ) -> Pose3D {
        let j = self.joint_count();
        let mut global = vec![Matrix3::identity(); j];
        let mut joints = vec![Vector3::zeros(); j];
        joints[0] = *root_position;
        global[0] = local[0];
        for c in 1..j {
            let p = self.parents[c].expect("validated tree");
            joints[c] = joints[p] + global[p] * self.offsets[c];
            global[c] = global[p] * local[c];
        }
        Pose3D::new(joints)
    }

    pub fn rest_pose(&self) -> Pose3D {
        let local = vec![Matrix3::identity(); self.joint_count()];
        self.forward_kinematics(&Vector3::zeros(), &local)
    }

    /// Vertical extent of the rest pose (ankle to head for the template), in mm.
    pub fn height(&self) -> f64 {
        let rest = self.rest_pose();
        let (lo, hi) = rest
            .joints
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.z), hi.max(p.z))
            });
        hi - lo
    }

    /// Height of the pelvis above the lowest rest-pose joint.
    pub fn pelvis_height(&self) -> f64 {
        let rest = self.rest_pose();
        -rest
            .joints
            .iter()
            .map(|p| p.z)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let skeleton: Skeleton = serde_json::from_slice(&std::fs::read(path)?)?;
        skeleton.validate()?;
        Ok(skeleton)
    }
}
