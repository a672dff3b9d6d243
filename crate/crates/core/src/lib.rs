//! Self-calibrating two-view triangulation and weakly-supervised temporal 2D-to-3D human pose
//! lifting.
//!
//! The pipeline: estimate the relative rotation between two uncalibrated views from their 2D
//! keypoints ([`epipolar`]), triangulate confidence-gated pseudo ground-truth poses
//! ([`triangulation`]), then train a recurrent lifting network with the triangulation loss and a
//! multi-view weak-perspective re-projection loss ([`reprojection`], [`lifting`]). Inference only
//! needs a single view.

pub mod adversarial;
pub mod calibration;
pub mod epipolar;
pub mod error;
pub mod io;
pub mod kinematics;
pub mod lifting;
pub mod linalg;
pub mod metrics;
pub mod neuralcore;
pub mod pose;
pub mod reprojection;
mod serde_helpers;
pub mod triangulation;

pub use error::{Error, Result};
pub use pose::Pose3D;
