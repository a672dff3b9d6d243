//! On-disk formats shared by the command-line tools: multi-view keypoint files and pose arrays.

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{Intrinsics, KeypointSequence2D, Skeleton};
use crate::pose::Pose3D;

pub const KEYPOINT_SCHEMA_VERSION: u32 = 1;

/// `frames[t][j] = [u, v, confidence]`, pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointView {
    pub view_id: usize,
    pub width: f64,
    pub height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
    pub frames: Vec<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointFile {
    pub schema_version: u32,
    pub skeleton_id: String,
    pub views: Vec<KeypointView>,
}

impl KeypointFile {
    pub fn from_sequences(skeleton_id: &str, sequences: &[KeypointSequence2D]) -> Self {
        let views = sequences
            .iter()
            .map(|s| KeypointView {
                view_id: s.view_id,
                width: s.width,
                height: s.height,
                intrinsics: s.intrinsics,
                frames: s
                    .frames
                    .iter()
                    .zip(&s.confidences)
                    .map(|(f, c)| f.iter().zip(c).map(|(p, &c)| [p.x, p.y, c]).collect())
                    .collect(),
            })
            .collect();
        Self {
            schema_version: KEYPOINT_SCHEMA_VERSION,
            skeleton_id: skeleton_id.into(),
            views,
        }
    }

    /// Checks the version and that every view shares the frame and joint counts.
    pub fn to_sequences(&self) -> Result<Vec<KeypointSequence2D>> {
        if self.schema_version != KEYPOINT_SCHEMA_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported keypoint schema version {}",
                self.schema_version
            )));
        }
        let first = self
            .views
            .first()
            .ok_or_else(|| Error::InvalidData("keypoint file has no views".into()))?;
        let frames = first.frames.len();
        let joints = first.frames.first().map_or(0, Vec::len);
        if joints == 0 {
            return Err(Error::InvalidData("keypoint file has no joints".into()));
        }
        self.views
            .iter()
            .map(|v| {
                if v.frames.len() != frames {
                    return Err(Error::InvalidData(format!(
                        "view {} has {} frames, view {} has {frames}",
                        v.view_id,
                        v.frames.len(),
                        first.view_id
                    )));
                }
                let seq = KeypointSequence2D {
                    view_id: v.view_id,
                    width: v.width,
                    height: v.height,
                    intrinsics: v.intrinsics,
                    frames: v
                        .frames
                        .iter()
                        .map(|f| f.iter().map(|p| Vector2::new(p[0], p[1])).collect())
                        .collect(),
                    confidences: v
                        .frames
                        .iter()
                        .map(|f| f.iter().map(|p| p[2]).collect())
                        .collect(),
                };
                seq.validate(joints)?;
                Ok(seq)
            })
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// A pose sequence stored as a JSON array of joint arrays, mm.
pub fn read_poses(path: &Path) -> Result<Vec<Pose3D>> {
    let poses: Vec<Pose3D> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if let Some(first) = poses.first() {
        if poses
            .iter()
            .any(|p| p.joint_count() != first.joint_count() || !p.is_finite())
        {
            return Err(Error::InvalidData(
                "pose array mixes joint counts or has non-finite values".into(),
            ));
        }
    }
    Ok(poses)
}

pub fn write_poses(path: &Path, poses: &[Pose3D]) -> Result<()> {
    std::fs::write(path, serde_json::to_string(poses)?)?;
    Ok(())
}

/// Built-in skeletons by id.
pub fn skeleton_by_id(id: &str) -> Result<Skeleton> {
    match id {
        "h36m17" => Ok(Skeleton::h36m17()),
        other => Err(Error::InvalidData(format!(
            "unknown skeleton id {other:?}; pass a skeleton file"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{render_keypoints, NoiseConfig, SceneConfig, SyntheticScene};

    #[test]
    fn keypoint_file_round_trip() {
        let scene = SyntheticScene::generate(
            &Skeleton::h36m17(),
            &SceneConfig {
                frames: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let seqs = render_keypoints(&scene, &NoiseConfig::gaussian(1.0), 1).unwrap();
        let file = KeypointFile::from_sequences("h36m17", &seqs);
        let back = KeypointFile::from_json(&file.to_json().unwrap()).unwrap();
        assert_eq!(back.to_sequences().unwrap(), seqs);
    }

    #[test]
    fn rejects_inconsistent_files() {
        let good = r#"{"schema_version":1,"skeleton_id":"x","views":[
            {"view_id":0,"width":10,"height":10,"frames":[[[1,2,0.9],[3,4,1.0]]]},
            {"view_id":1,"width":10,"height":10,"frames":[[[1,2,0.9],[3,4,1.0]]]}]}"#;
        assert_eq!(
            KeypointFile::from_json(good)
                .unwrap()
                .to_sequences()
                .unwrap()
                .len(),
            2
        );
        let missing_version = good.replace(r#""schema_version":1,"#, "");
        assert!(KeypointFile::from_json(&missing_version).is_err());
        let short = good.replace(r#"[[[1,2,0.9],[3,4,1.0]]]}]"#, r#"[]}]"#);
        assert!(KeypointFile::from_json(&short)
            .unwrap()
            .to_sequences()
            .is_err());
        let bad_conf = good.replacen("0.9", "1.5", 1);
        assert!(KeypointFile::from_json(&bad_conf)
            .unwrap()
            .to_sequences()
            .is_err());
    }
}
