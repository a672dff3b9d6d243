use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::axis_angle;
use crate::pose::Pose3D;

use super::Skeleton;

/// Band-limited random joint-angle trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    pub fps: f64,
    pub min_frequency_hz: f64,
    pub max_frequency_hz: f64,
    /// Sinusoids summed per angle.
    pub harmonics: usize,
    /// Scales every joint's angle range.
    pub amplitude_scale: f64,
    pub root_wander_mm: f64,
    /// Peak-to-peak yaw sweep of the whole body, radians.
    pub yaw_sweep: f64,
    /// Upper bound on any joint's displacement between consecutive frames, mm.
    pub velocity_cap_mm: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            fps: 50.0,
            min_frequency_hz: 0.15,
            max_frequency_hz: 0.8,
            harmonics: 2,
            amplitude_scale: 1.0,
            root_wander_mm: 300.0,
            yaw_sweep: PI,
            velocity_cap_mm: 40.0,
        }
    }
}

/// Per-joint angle range: `base + sum_k amp_k sin(...)` per local axis.
#[derive(Debug, Clone, Copy)]
struct AngleRange {
    base: [f64; 3],
    amp: [f64; 3],
}

const fn range(base: [f64; 3], amp: [f64; 3]) -> AngleRange {
    AngleRange { base, amp }
}

/// Ranges tuned for the 17-joint template; other skeletons get a generic moderate range.
fn angle_ranges(skeleton: &Skeleton) -> Vec<AngleRange> {
    if skeleton.joint_count() == 17 {
        vec![
            range([0.0; 3], [0.08, 0.08, 0.0]), // pelvis tilt (yaw handled separately)
            range([0.25, 0.0, 0.0], [0.55, 0.15, 0.2]), // right hip
            range([-0.55, 0.0, 0.0], [0.5, 0.0, 0.0]), // right knee
            range([0.0; 3], [0.0; 3]),
            range([0.25, 0.0, 0.0], [0.55, 0.15, 0.2]), // left hip
            range([-0.55, 0.0, 0.0], [0.5, 0.0, 0.0]),  // left knee
            range([0.0; 3], [0.0; 3]),
            range([0.1, 0.0, 0.0], [0.2, 0.12, 0.25]), // spine
            range([0.0; 3], [0.1, 0.08, 0.15]),        // thorax
            range([0.1, 0.0, 0.0], [0.25, 0.1, 0.35]), // neck
            range([0.0; 3], [0.0; 3]),
            range([0.2, -0.35, 0.0], [0.8, 0.35, 0.3]), // left shoulder
            range([0.7, 0.0, 0.0], [0.6, 0.0, 0.2]),    // left elbow
            range([0.0; 3], [0.0; 3]),
            range([0.2, 0.35, 0.0], [0.8, 0.35, 0.3]), // right shoulder
            range([0.7, 0.0, 0.0], [0.6, 0.0, 0.2]),   // right elbow
            range([0.0; 3], [0.0; 3]),
        ]
    } else {
        (0..skeleton.joint_count())
            .map(|_| range([0.0; 3], [0.3, 0.2, 0.2]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    amplitude: f64,
    frequency: f64,
    phase: f64,
}

impl Wave {
    fn eval(&self, time: f64) -> f64 {
        self.amplitude * (TAU * self.frequency * time + self.phase).sin()
    }
}

struct MotionPlan {
    /// `[joint][axis][harmonic]`
    joint_waves: Vec<[Vec<Wave>; 3]>,
    base: Vec<[f64; 3]>,
    yaw0: f64,
    yaw: Wave,
    root: [Vec<Wave>; 2],
    pelvis_height: f64,
}

impl MotionPlan {
    fn sample(skeleton: &Skeleton, config: &MotionConfig, rng: &mut ChaCha8Rng) -> Self {
        let wave = |rng: &mut ChaCha8Rng, max_amp: f64| Wave {
            amplitude: max_amp * rng.random_range(0.3..=1.0) / config.harmonics as f64,
            frequency: rng.random_range(config.min_frequency_hz..=config.max_frequency_hz),
            phase: rng.random_range(0.0..TAU),
        };
        let ranges = angle_ranges(skeleton);
        let mut joint_waves = Vec::with_capacity(ranges.len());
        for r in &ranges {
            let axes: [Vec<Wave>; 3] = std::array::from_fn(|axis| {
                (0..config.harmonics)
                    .map(|_| wave(rng, r.amp[axis] * config.amplitude_scale))
                    .collect()
            });
            joint_waves.push(axes);
        }
        let yaw0 = rng.random_range(-PI..PI);
        let yaw = Wave {
            amplitude: config.yaw_sweep / 2.0,
            frequency: rng.random_range(0.02..=0.08),
            phase: rng.random_range(0.0..TAU),
        };
        let root = std::array::from_fn(|_| {
            (0..config.harmonics)
                .map(|_| wave(rng, config.root_wander_mm))
                .collect()
        });
        Self {
            joint_waves,
            base: ranges.iter().map(|r| r.base).collect(),
            yaw0,
            yaw,
            root,
            pelvis_height: skeleton.pelvis_height(),
        }
    }

    fn pose(&self, skeleton: &Skeleton, time: f64) -> Pose3D {
        let local: Vec<Matrix3<f64>> = self
            .joint_waves
            .iter()
            .zip(&self.base)
            .enumerate()
            .map(|(j, (axes, base))| {
                let angles = Vector3::from_fn(|axis, _| {
                    base[axis] + axes[axis].iter().map(|w| w.eval(time)).sum::<f64>()
                });
                let rot = axis_angle(&angles);
                if j == 0 {
                    axis_angle(&Vector3::new(0.0, 0.0, self.yaw0 + self.yaw.eval(time))) * rot
                } else {
                    rot
                }
            })
            .collect();
        let root = Vector3::new(
            self.root[0].iter().map(|w| w.eval(time)).sum(),
            self.root[1].iter().map(|w| w.eval(time)).sum(),
            self.pelvis_height,
        );
        skeleton.forward_kinematics(&root, &local)
    }
}

fn max_displacement(motion: &[Pose3D]) -> f64 {
    motion
        .windows(2)
        .flat_map(|w| {
            w[0].joints
                .iter()
                .zip(&w[1].joints)
                .map(|(a, b)| (a - b).norm())
        })
        .fold(0.0, f64::max)
}

/// World-frame motion that keeps every bone at its template length and stays under
/// `config.velocity_cap_mm`. Deterministic in `seed`.
pub fn generate_motion(
    skeleton: &Skeleton,
    frame_count: usize,
    seed: u64,
    config: &MotionConfig,
) -> Result<Vec<Pose3D>> {
    if frame_count == 0 {
        return Err(Error::InvalidConfig(
            "frame_count must be at least 1".into(),
        ));
    }
    if !(config.fps > 0.0 && config.velocity_cap_mm > 0.0 && config.harmonics > 0) {
        return Err(Error::InvalidConfig(
            "motion config must have positive fps, cap and harmonics".into(),
        ));
    }
    skeleton.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = MotionPlan::sample(skeleton, config, &mut rng);

    // Displacement scales roughly linearly with playback speed: slow the clock until the cap holds.
    let mut speed = 1.0;
    loop {
        let motion: Vec<Pose3D> = (0..frame_count)
            .map(|f| plan.pose(skeleton, speed * f as f64 / config.fps))
            .collect();
        let peak = max_displacement(&motion);
        if peak <= config.velocity_cap_mm {
            return Ok(motion);
        }
        speed *= 0.95 * config.velocity_cap_mm / peak;
    }
}
