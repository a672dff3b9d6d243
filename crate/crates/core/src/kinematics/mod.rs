//! Canonical skeleton, synthetic motion and a simulated multi-camera rig. Every geometric and
//! learning module is checked against scenes generated here.

mod motion;
mod scene;
mod skeleton;

pub use motion::{generate_motion, MotionConfig};
pub use scene::{
    relative_extrinsics, render_keypoints, Camera, Intrinsics, KeypointSequence2D, NoiseConfig,
    ProjectionMode, SceneConfig, SyntheticScene,
};
pub use skeleton::{Skeleton, H36M_PARENTS};
