use std::collections::BTreeMap;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::calibration::Calibration;
use crate::error::{Error, Result};
use crate::kinematics::{KeypointSequence2D, Skeleton};
use crate::pose::Pose3D;

use super::{select_view_pair, triangulate_pose, GateConfig};

pub const PSEUDO_GT_SCHEMA_VERSION: u32 = 1;

/// Provenance of one calibrated pair as used for triangulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairProvenance {
    pub views: (usize, usize),
    #[serde(with = "crate::serde_helpers::mat3")]
    pub rotation: Matrix3<f64>,
    pub inliers: usize,
    pub correspondences: usize,
    pub mean_sampson_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoGtEntry {
    /// `(reference, other)`; the pose is in the reference view's camera frame.
    pub views: (usize, usize),
    pub pose: Pose3D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PseudoGtStats {
    pub frames: usize,
    pub triangulated: usize,
    pub gated_out: usize,
    pub failed: usize,
    pub failed_frames: Vec<usize>,
}

/// Pseudo ground truth, computed once before training and read-only afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoGtCache {
    pub schema_version: u32,
    pub skeleton_id: String,
    pub view_count: usize,
    pub pairs: Vec<PairProvenance>,
    /// Frame id to root-relative pose in mm.
    pub entries: BTreeMap<usize, PseudoGtEntry>,
    pub stats: PseudoGtStats,
}

impl PseudoGtCache {
    /// Rotation from view `from` to view `to`, as frozen at triangulation time.
    pub fn rotation(&self, from: usize, to: usize) -> Option<Matrix3<f64>> {
        if from == to {
            return Some(Matrix3::identity());
        }
        self.pairs.iter().find_map(|p| {
            if p.views == (from, to) {
                Some(p.rotation)
            } else if p.views == (to, from) {
                Some(p.rotation.transpose())
            } else {
                None
            }
        })
    }

    /// Target pose for `view` at `frame`, transferred from the reference view.
    pub fn target(&self, frame: usize, view: usize) -> Option<Pose3D> {
        let entry = self.entries.get(&frame)?;
        let r = self.rotation(entry.views.0, view)?;
        Some(entry.pose.transformed(&r))
    }

    /// Views a frame's target applies to: the two views that were triangulated.
    pub fn views_for(&self, frame: usize) -> Option<(usize, usize)> {
        self.entries.get(&frame).map(|e| e.views)
    }

    /// The cache seen through a subset of views, renumbered by position in `views`. Entries
    /// whose triangulated pair leaves the subset are dropped.
    pub fn restrict(&self, views: &[usize]) -> Result<Self> {
        let index = |v: usize| views.iter().position(|&w| w == v);
        if views.iter().any(|&v| v >= self.view_count) {
            return Err(Error::InvalidData(format!(
                "view subset {views:?} exceeds {} views",
                self.view_count
            )));
        }
        let pairs = self
            .pairs
            .iter()
            .filter_map(|p| {
                let (a, b) = (index(p.views.0)?, index(p.views.1)?);
                let rotation = if a < b {
                    p.rotation
                } else {
                    p.rotation.transpose()
                };
                Some(PairProvenance {
                    views: (a.min(b), a.max(b)),
                    rotation,
                    ..p.clone()
                })
            })
            .collect();
        let entries = self
            .entries
            .iter()
            .filter_map(|(f, e)| {
                let views = (index(e.views.0)?, index(e.views.1)?);
                Some((
                    *f,
                    PseudoGtEntry {
                        views,
                        pose: e.pose.clone(),
                    },
                ))
            })
            .collect();
        Ok(Self {
            view_count: views.len(),
            pairs,
            entries,
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cache: Self = serde_json::from_str(text)?;
        if cache.schema_version != PSEUDO_GT_SCHEMA_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported pseudo-GT schema version {}",
                cache.schema_version
            )));
        }
        Ok(cache)
    }
}

/// Triangulates every frame whose best gated view pair has a calibration. Frames with fewer
/// than two accepted views, or with any joint failing to triangulate, are left out and counted.
pub fn triangulate_sequence(
    views: &[KeypointSequence2D],
    calibration: &Calibration,
    gate: &GateConfig,
    skeleton: &Skeleton,
) -> Result<PseudoGtCache> {
    gate.validate()?;
    let frames = views
        .iter()
        .map(KeypointSequence2D::frame_count)
        .min()
        .unwrap_or(0);
    let mut entries = BTreeMap::new();
    let mut stats = PseudoGtStats {
        frames,
        ..Default::default()
    };
    for f in 0..frames {
        let confidences: Vec<&[f64]> = views.iter().map(|v| v.confidences[f].as_slice()).collect();
        let Some((a, b)) = select_view_pair(&confidences, gate) else {
            stats.gated_out += 1;
            continue;
        };
        let Some(pose) = calibration.relative_pose(a, b) else {
            stats.gated_out += 1;
            continue;
        };
        let k1 = views[a].intrinsics_or_default();
        let k2 = views[b].intrinsics_or_default();
        match triangulate_pose(
            &views[a].frames[f],
            &views[b].frames[f],
            &pose,
            &k1,
            &k2,
            skeleton,
        ) {
            Ok(p) => {
                entries.insert(
                    f,
                    PseudoGtEntry {
                        views: (a, b),
                        pose: p,
                    },
                );
                stats.triangulated += 1;
            }
            Err(_) => {
                stats.failed += 1;
                stats.failed_frames.push(f);
            }
        }
    }
    let pairs = calibration
        .pairs
        .iter()
        .map(|p| PairProvenance {
            views: p.views,
            rotation: p.pose.r,
            inliers: p.stats.inliers,
            correspondences: p.stats.correspondences,
            mean_sampson_px: p.stats.mean_sampson_px,
        })
        .collect();
    Ok(PseudoGtCache {
        schema_version: PSEUDO_GT_SCHEMA_VERSION,
        skeleton_id: skeleton.id.clone(),
        view_count: views.len(),
        pairs,
        entries,
        stats,
    })
}
