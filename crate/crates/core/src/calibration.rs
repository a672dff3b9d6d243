//! Relative-rotation self-calibration over whole keypoint sequences: every gated frame
//! contributes all of its joints as correspondences for each view pair.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::epipolar::{
    decompose_essential, estimate_essential, ransac_fundamental, refine_pose, Correspondence,
    FundamentalMatrix, RansacConfig, RelativePose,
};
use crate::error::{Error, Result};
use crate::kinematics::{Intrinsics, KeypointSequence2D};
use crate::triangulation::GateConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub correspondences: usize,
    pub inliers: usize,
    /// Sampson distance over inliers, in pixels (normalized distance times mean focal).
    pub mean_sampson_px: f64,
    pub max_sampson_px: f64,
    /// RMS of `x2^T F x1` over inliers with `F` at unit Frobenius norm.
    pub rms_algebraic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCalibration {
    pub views: (usize, usize),
    pub intrinsics: (Intrinsics, Intrinsics),
    pub fundamental: FundamentalMatrix,
    #[serde(with = "crate::serde_helpers::mat3")]
    pub essential: Matrix3<f64>,
    pub pose: RelativePose,
    /// Frames whose joints formed the correspondence set, in order.
    pub frames: Vec<usize>,
    /// One flag per correspondence (frame-major, then joint).
    pub inliers: Vec<bool>,
    pub ransac_iterations: usize,
    pub stats: ResidualStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Calibration {
    pub view_count: usize,
    pub pairs: Vec<PairCalibration>,
}

impl Calibration {
    pub fn pair(&self, a: usize, b: usize) -> Option<&PairCalibration> {
        self.pairs.iter().find(|p| p.views == (a, b))
    }

    /// Rotation taking view-`from` camera coordinates to view-`to` coordinates.
    pub fn rotation(&self, from: usize, to: usize) -> Option<Matrix3<f64>> {
        if from == to {
            return Some(Matrix3::identity());
        }
        if let Some(p) = self.pair(from, to) {
            return Some(p.pose.r);
        }
        self.pair(to, from).map(|p| p.pose.r.transpose())
    }

    /// Relative pose of `to` with respect to `from`.
    pub fn relative_pose(&self, from: usize, to: usize) -> Option<RelativePose> {
        if let Some(p) = self.pair(from, to) {
            return Some(p.pose);
        }
        self.pair(to, from).map(|p| p.pose.inverse())
    }
}

/// Frames where both views pass the gate.
pub fn gated_frames(
    a: &KeypointSequence2D,
    b: &KeypointSequence2D,
    gate: &GateConfig,
) -> Vec<usize> {
    (0..a.frame_count().min(b.frame_count()))
        .filter(|&f| gate.accepts(&a.confidences[f]) && gate.accepts(&b.confidences[f]))
        .collect()
}

pub fn pair_correspondences(
    a: &KeypointSequence2D,
    b: &KeypointSequence2D,
    frames: &[usize],
) -> (Vec<Correspondence>, Vec<f64>) {
    frames
        .iter()
        .flat_map(|&f| {
            a.frames[f]
                .iter()
                .zip(&b.frames[f])
                .zip(a.confidences[f].iter().zip(&b.confidences[f]))
                .map(|((x1, x2), (c1, c2))| (Correspondence::new(*x1, *x2), c1.min(*c2)))
        })
        .unzip()
}

/// Calibrates one view pair from the given correspondences.
pub fn calibrate_pair(
    views: (usize, usize),
    correspondences: &[Correspondence],
    confidences: &[f64],
    k1: &Intrinsics,
    k2: &Intrinsics,
    seed: u64,
) -> Result<(PairCalibration, Vec<Correspondence>)> {
    let config = RansacConfig::for_intrinsics(k1, k2).with_seed(seed);
    let ransac = ransac_fundamental(correspondences, confidences, k1, k2, &config)?;
    let select = |mask: &[bool]| -> (Vec<Correspondence>, Vec<f64>) {
        correspondences
            .iter()
            .zip(confidences)
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((c, &w), _)| (*c, w))
            .unzip()
    };
    let (mut inlier_corr, mut inlier_conf) = select(&ransac.inliers);
    let uniform =
        inlier_conf.iter().all(|&w| w == inlier_conf[0]) || inlier_conf.iter().all(|&w| w <= 0.0);
    let weights = |conf: &[f64]| (!uniform).then(|| conf.to_vec());
    let linear = estimate_essential(&inlier_corr, weights(&inlier_conf).as_deref(), k1, k2)?;
    let mut pose = decompose_essential(&linear, &inlier_corr, k1, k2)?;
    let mut inliers = ransac.inliers.clone();
    let mut fundamental = ransac.fundamental;
    // Refine on the consensus set, then let the refined geometry redraw it.
    for _ in 0..5 {
        pose = refine_pose(
            &pose,
            &inlier_corr,
            weights(&inlier_conf).as_deref(),
            k1,
            k2,
        )?;
        fundamental = FundamentalMatrix::from_pose(&pose, k1, k2)?;
        let normalized_e = FundamentalMatrix::from_matrix(&pose.essential())?;
        let mask: Vec<bool> = correspondences
            .iter()
            .map(|c| normalized_e.sampson_distance(&c.normalized(k1, k2)) < config.threshold)
            .collect();
        let count = mask.iter().filter(|&&m| m).count();
        if mask == inliers || count < 8 {
            break;
        }
        inliers = mask;
        (inlier_corr, inlier_conf) = select(&inliers);
    }
    let essential = pose.essential();

    let focal = (k1.mean_focal() + k2.mean_focal()) / 2.0;
    let fn_ = k2.matrix().transpose() * fundamental.matrix() * k1.matrix();
    let sampson: Vec<f64> = inlier_corr
        .iter()
        .map(|c| {
            let n = Correspondence::new(k1.normalize(&c.x1), k2.normalize(&c.x2));
            crate::epipolar::sampson_distance(&fn_, &n) * focal
        })
        .collect();
    let algebraic: f64 = inlier_corr
        .iter()
        .map(|c| fundamental.residual(c).powi(2))
        .sum();
    let n_in = inlier_corr.len().max(1) as f64;
    let stats = ResidualStats {
        correspondences: correspondences.len(),
        inliers: inlier_corr.len(),
        mean_sampson_px: sampson.iter().sum::<f64>() / n_in,
        max_sampson_px: sampson.iter().copied().fold(0.0, f64::max),
        rms_algebraic: (algebraic / n_in).sqrt(),
    };
    let calibration = PairCalibration {
        views,
        intrinsics: (*k1, *k2),
        fundamental,
        essential,
        pose,
        frames: Vec::new(),
        inliers,
        ransac_iterations: ransac.iterations,
        stats,
    };
    Ok((calibration, inlier_corr))
}

/// Calibrates every view pair `(a, b)`, `a < b`, that shares enough gated frames. Fails with
/// [`Error::InsufficientViews`] when no pair can be calibrated.
pub fn calibrate_views(
    views: &[KeypointSequence2D],
    gate: &GateConfig,
    seed: u64,
) -> Result<Calibration> {
    gate.validate()?;
    if views.len() < 2 {
        return Err(Error::InsufficientViews(format!(
            "{} view(s) supplied, need 2",
            views.len()
        )));
    }
    let mut pairs = Vec::new();
    let mut last_err = None;
    for a in 0..views.len() {
        for b in a + 1..views.len() {
            let frames = gated_frames(&views[a], &views[b], gate);
            if frames.is_empty() {
                continue;
            }
            let (corr, conf) = pair_correspondences(&views[a], &views[b], &frames);
            let k1 = views[a].intrinsics_or_default();
            let k2 = views[b].intrinsics_or_default();
            match calibrate_pair((a, b), &corr, &conf, &k1, &k2, seed) {
                Ok((mut pc, _)) => {
                    pc.frames = frames;
                    pairs.push(pc);
                }
                Err(e) => last_err = Some(e),
            }
        }
    }
    if pairs.is_empty() {
        return Err(match last_err {
            Some(e) => e,
            None => Error::InsufficientViews("no frame has two views passing the gate".into()),
        });
    }
    Ok(Calibration {
        view_count: views.len(),
        pairs,
    })
}
