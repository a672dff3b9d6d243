use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_rotation, look_at};
use crate::pose::Pose3D;

use super::motion::{generate_motion, MotionConfig};
use super::Skeleton;

/// Pinhole intrinsics `K = [[fx, 0, cx], [0, fy, cy], [0, 0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    /// Fallback when nothing is known: principal point at the image centre, focal `max(w, h)`.
    pub fn default_for_frame(width: f64, height: f64) -> Self {
        let f = width.max(height);
        Self::new(f, f, width / 2.0, height / 2.0)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn mean_focal(&self) -> f64 {
        (self.fx + self.fy) / 2.0
    }

    /// Pixel to normalized image coordinates.
    pub fn normalize(&self, p: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    #[default]
    FullPerspective,
    WeakPerspective,
}

/// World-to-camera extrinsics `X_c = R X_w + t`, camera axes x right, y down, z forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    #[serde(with = "crate::serde_helpers::mat3")]
    pub rotation: Matrix3<f64>,
    #[serde(with = "crate::serde_helpers::vec3")]
    pub translation: Vector3<f64>,
    /// Pixels per millimetre in weak-perspective mode.
    pub weak_scale: f64,
    pub width: f64,
    pub height: f64,
}

impl Camera {
    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    pub fn project(&self, world: &Vector3<f64>, mode: ProjectionMode) -> Result<Vector2<f64>> {
        let p = self.to_camera(world);
        let k = &self.intrinsics;
        match mode {
            ProjectionMode::FullPerspective => {
                if p.z <= 0.0 {
                    return Err(Error::BehindCamera(p.z));
                }
                Ok(Vector2::new(
                    k.fx * p.x / p.z + k.cx,
                    k.fy * p.y / p.z + k.cy,
                ))
            }
            ProjectionMode::WeakPerspective => Ok(Vector2::new(
                self.weak_scale * p.x + k.cx,
                self.weak_scale * p.y + k.cy,
            )),
        }
    }
}

/// Rotation of camera `b` relative to camera `a`, and the translation of `b` in `a`'s frame
/// convention: `X_b = R X_a + t`.
pub fn relative_extrinsics(a: &Camera, b: &Camera) -> (Matrix3<f64>, Vector3<f64>) {
    let r = b.rotation * a.rotation.transpose();
    let t = b.translation - r * a.translation;
    (r, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub frames: usize,
    pub views: usize,
    pub seed: u64,
    pub projection_mode: ProjectionMode,
    pub focal: f64,
    pub width: f64,
    pub height: f64,
    pub camera_distance_mm: f64,
    pub camera_height_mm: f64,
    /// Azimuth between neighbouring cameras, degrees. Defaults to `min(90, 360 / views)`.
    pub azimuth_step_deg: Option<f64>,
    /// Random perturbation of azimuth (degrees) and distance (mm) per camera.
    pub azimuth_jitter_deg: f64,
    pub distance_jitter_mm: f64,
    pub motion: MotionConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            frames: 270,
            views: 2,
            seed: 0,
            projection_mode: ProjectionMode::FullPerspective,
            focal: 1000.0,
            width: 1000.0,
            height: 1000.0,
            camera_distance_mm: 5000.0,
            camera_height_mm: 1300.0,
            azimuth_step_deg: None,
            azimuth_jitter_deg: 10.0,
            distance_jitter_mm: 400.0,
            motion: MotionConfig::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::InvalidConfig("frames must be at least 1".into()));
        }
        if self.views == 0 {
            return Err(Error::InvalidConfig("views must be at least 1".into()));
        }
        if !(self.focal > 0.0 && self.width > 0.0 && self.height > 0.0) {
            return Err(Error::InvalidConfig(
                "focal and frame size must be positive".into(),
            ));
        }
        if !(self.camera_distance_mm > self.distance_jitter_mm + 2000.0) {
            return Err(Error::InvalidConfig(
                "cameras must stay at least 2 m from the subject".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub skeleton: Skeleton,
    pub cameras: Vec<Camera>,
    pub projection_mode: ProjectionMode,
    pub motion: Vec<Pose3D>,
}

impl SyntheticScene {
    pub fn generate(skeleton: &Skeleton, config: &SceneConfig) -> Result<Self> {
        config.validate()?;
        let motion = generate_motion(skeleton, config.frames, config.seed, &config.motion)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ca3e_a000_0000);
        let step = config
            .azimuth_step_deg
            .unwrap_or_else(|| (360.0 / config.views as f64).min(90.0))
            .to_radians();
        let base = rng.random_range(-PI..PI);
        let target = Vector3::new(0.0, 0.0, skeleton.pelvis_height());
        let cameras = (0..config.views)
            .map(|v| {
                let azimuth = base
                    + step * v as f64
                    + config.azimuth_jitter_deg.to_radians() * rng.random_range(-1.0..=1.0);
                let distance = config.camera_distance_mm
                    + config.distance_jitter_mm * rng.random_range(-1.0..=1.0);
                let eye = Vector3::new(
                    distance * azimuth.cos(),
                    distance * azimuth.sin(),
                    config.camera_height_mm,
                );
                let rotation = look_at(&eye, &target, &Vector3::z());
                Camera {
                    intrinsics: Intrinsics::new(
                        config.focal,
                        config.focal,
                        config.width / 2.0,
                        config.height / 2.0,
                    ),
                    rotation,
                    translation: -rotation * eye,
                    weak_scale: config.focal / (eye - target).norm(),
                    width: config.width,
                    height: config.height,
                }
            })
            .collect();
        let scene = Self {
            skeleton: skeleton.clone(),
            cameras,
            projection_mode: config.projection_mode,
            motion,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Rotations must be orthonormal and every joint in front of every camera.
    pub fn validate(&self) -> Result<()> {
        for (v, cam) in self.cameras.iter().enumerate() {
            if !is_rotation(&cam.rotation, 1e-9) {
                return Err(Error::InvalidData(format!(
                    "camera {v} rotation is not in SO(3)"
                )));
            }
            for pose in &self.motion {
                for joint in &pose.joints {
                    let z = cam.to_camera(joint).z;
                    if z <= 0.0 {
                        return Err(Error::BehindCamera(z));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.motion.len()
    }

    pub fn view_count(&self) -> usize {
        self.cameras.len()
    }

    /// Noiseless projection of one frame into one view.
    pub fn project(&self, view: usize, frame: usize) -> Result<Vec<Vector2<f64>>> {
        let cam = self
            .cameras
            .get(view)
            .ok_or_else(|| Error::InvalidConfig(format!("view {view} out of range")))?;
        let pose = self
            .motion
            .get(frame)
            .ok_or_else(|| Error::InvalidConfig(format!("frame {frame} out of range")))?;
        pose.joints
            .iter()
            .map(|p| cam.project(p, self.projection_mode))
            .collect()
    }

    /// Ground-truth pose of `frame` in `view`'s camera frame, root-relative, mm.
    pub fn camera_pose(&self, view: usize, frame: usize) -> Pose3D {
        let cam = &self.cameras[view];
        Pose3D::new(
            self.motion[frame]
                .joints
                .iter()
                .map(|p| cam.to_camera(p))
                .collect(),
        )
        .root_centered()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Detector simulation: additive pixel noise, confidence decaying with the noise magnitude
/// `c = exp(-|n|^2 / (2 tau^2))`, and occlusion episodes that draw `c` uniformly from `[0, 0.5]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub sigma_px: f64,
    pub tau_px: f64,
    /// Stationary fraction of occluded joints.
    pub occlusion_rate: f64,
    /// Mean occlusion episode length in frames.
    pub occlusion_duration: f64,
    /// Extra positional error on occluded joints.
    pub occlusion_jitter_px: f64,
    /// Joints that are always occluded.
    pub forced_occlusions: Vec<usize>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_px: 0.0,
            tau_px: 8.0,
            occlusion_rate: 0.0,
            occlusion_duration: 5.0,
            occlusion_jitter_px: 10.0,
            forced_occlusions: Vec::new(),
        }
    }
}

impl NoiseConfig {
    pub fn gaussian(sigma_px: f64) -> Self {
        Self {
            sigma_px,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_px >= 0.0 && self.tau_px > 0.0) {
            return Err(Error::InvalidConfig(
                "noise sigma must be >= 0 and tau > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.occlusion_rate) {
            return Err(Error::InvalidConfig(
                "occlusion rate must be in [0, 1)".into(),
            ));
        }
        if !(self.occlusion_duration >= 1.0) {
            return Err(Error::InvalidConfig(
                "occlusion duration must be at least one frame".into(),
            ));
        }
        Ok(())
    }
}

/// One view's 2D detections over time.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSequence2D {
    pub view_id: usize,
    pub width: f64,
    pub height: f64,
    pub intrinsics: Option<Intrinsics>,
    /// `frames[t][j]`, pixels.
    pub frames: Vec<Vec<Vector2<f64>>>,
    /// `confidences[t][j]` in `[0, 1]`.
    pub confidences: Vec<Vec<f64>>,
}

impl KeypointSequence2D {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn joint_count(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn intrinsics_or_default(&self) -> Intrinsics {
        self.intrinsics
            .unwrap_or_else(|| Intrinsics::default_for_frame(self.width, self.height))
    }

    pub fn validate(&self, joint_count: usize) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InvalidData(format!(
                "view {} has no frames",
                self.view_id
            )));
        }
        if self.confidences.len() != self.frames.len() {
            return Err(Error::InvalidData(
                "confidence and keypoint frame counts differ".into(),
            ));
        }
        for (kp, conf) in self.frames.iter().zip(&self.confidences) {
            if kp.len() != joint_count || conf.len() != joint_count {
                return Err(Error::InvalidData(format!(
                    "view {} frame has {} joints, expected {joint_count}",
                    self.view_id,
                    kp.len()
                )));
            }
            if conf.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::InvalidData("confidence outside [0, 1]".into()));
            }
            if kp.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                return Err(Error::InvalidData("non-finite keypoint".into()));
            }
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::InvalidData("frame size must be positive".into()));
        }
        Ok(())
    }
}

/// Renders every view through the detector simulation. View `v` draws from its own stream
/// seeded by `(seed, v)`, so adding views never changes earlier ones.
pub fn render_keypoints(
    scene: &SyntheticScene,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Vec<KeypointSequence2D>> {
    noise.validate()?;
    let j = scene.skeleton.joint_count();
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let p_on = if noise.occlusion_rate > 0.0 {
        noise.occlusion_rate / (1.0 - noise.occlusion_rate) / noise.occlusion_duration
    } else {
        0.0
    };
    let p_off = 1.0 / noise.occlusion_duration;

    (0..scene.view_count())
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add(v as u64),
            );
            let mut occluded: Vec<bool> = (0..j)
                .map(|_| rng.random::<f64>() < noise.occlusion_rate)
                .collect();
            let mut frames = Vec::with_capacity(scene.frame_count());
            let mut confidences = Vec::with_capacity(scene.frame_count());
            for f in 0..scene.frame_count() {
                let clean = scene.project(v, f)?;
                let mut kp = Vec::with_capacity(j);
                let mut conf = Vec::with_capacity(j);
                for (joint, p) in clean.iter().enumerate() {
                    let n = Vector2::new(gauss.sample(&mut rng), gauss.sample(&mut rng))
                        * noise.sigma_px;
                    let toggle: f64 = rng.random();
                    occluded[joint] = if occluded[joint] {
                        toggle >= p_off
                    } else {
                        toggle < p_on
                    };
                    let occ_draw: f64 = rng.random();
                    let jitter = Vector2::new(gauss.sample(&mut rng), gauss.sample(&mut rng));
                    if occluded[joint] || noise.forced_occlusions.contains(&joint) {
                        kp.push(p + n + jitter * noise.occlusion_jitter_px);
                        conf.push(0.5 * occ_draw);
                    } else {
                        kp.push(p + n);
                        conf.push((-n.norm_squared() / (2.0 * noise.tau_px * noise.tau_px)).exp());
                    }
                }
                frames.push(kp);
                confidences.push(conf);
            }
            let cam = &scene.cameras[v];
            Ok(KeypointSequence2D {
                view_id: v,
                width: cam.width,
                height: cam.height,
                intrinsics: Some(cam.intrinsics),
                frames,
                confidences,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_camera(k: Intrinsics, weak_scale: f64) -> Camera {
        Camera {
            intrinsics: k,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            weak_scale,
            width: 1000.0,
            height: 1000.0,
        }
    }

    #[test]
    fn on_axis_point_hits_principal_point() {
        let cam = identity_camera(Intrinsics::new(1000.0, 1000.0, 500.0, 500.0), 1.0);
        let uv = cam
            .project(
                &Vector3::new(0.0, 0.0, 5000.0),
                ProjectionMode::FullPerspective,
            )
            .unwrap();
        assert_eq!(uv, Vector2::new(500.0, 500.0));
    }

    #[test]
    fn weak_perspective_drops_depth() {
        let cam = identity_camera(Intrinsics::new(1.0, 1.0, 0.0, 0.0), 1.0);
        let uv = cam
            .project(
                &Vector3::new(1.0, 2.0, 3.0),
                ProjectionMode::WeakPerspective,
            )
            .unwrap();
        assert_eq!(uv, Vector2::new(1.0, 2.0));
    }

    #[test]
    fn point_behind_camera_is_an_error() {
        let cam = identity_camera(Intrinsics::new(1000.0, 1000.0, 500.0, 500.0), 1.0);
        assert!(matches!(
            cam.project(
                &Vector3::new(0.0, 0.0, -1.0),
                ProjectionMode::FullPerspective
            ),
            Err(Error::BehindCamera(_))
        ));
    }

    #[test]
    fn noiseless_rendering_is_fully_confident() {
        let scene = SyntheticScene::generate(
            &Skeleton::h36m17(),
            &SceneConfig {
                frames: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let views = render_keypoints(&scene, &NoiseConfig::default(), 3).unwrap();
        assert_eq!(views.len(), 2);
        for v in &views {
            assert!(v.confidences.iter().flatten().all(|&c| c == 1.0));
            assert_eq!(v.frames[4], scene.project(v.view_id, 4).unwrap());
        }
    }

    #[test]
    fn forced_occlusions_have_low_confidence() {
        let scene = SyntheticScene::generate(
            &Skeleton::h36m17(),
            &SceneConfig {
                frames: 30,
                ..Default::default()
            },
        )
        .unwrap();
        let noise = NoiseConfig {
            sigma_px: 1.0,
            forced_occlusions: vec![13],
            ..Default::default()
        };
        let views = render_keypoints(&scene, &noise, 0).unwrap();
        for conf in &views[0].confidences {
            assert!(conf[13] <= 0.5);
        }
    }

    #[test]
    fn occlusion_rate_is_roughly_respected() {
        let scene = SyntheticScene::generate(
            &Skeleton::h36m17(),
            &SceneConfig {
                frames: 600,
                ..Default::default()
            },
        )
        .unwrap();
        let noise = NoiseConfig {
            occlusion_rate: 0.1,
            ..Default::default()
        };
        let views = render_keypoints(&scene, &noise, 0).unwrap();
        let total = views[0].confidences.iter().flatten().count() as f64;
        let low = views[0]
            .confidences
            .iter()
            .flatten()
            .filter(|&&c| c <= 0.5)
            .count() as f64;
        let rate = low / total;
        assert!((0.05..0.15).contains(&rate), "{rate}");
    }

    #[test]
    fn generated_scene_is_valid_and_deterministic() {
        let config = SceneConfig {
            frames: 50,
            views: 4,
            seed: 9,
            ..Default::default()
        };
        let a = SyntheticScene::generate(&Skeleton::h36m17(), &config).unwrap();
        let b = SyntheticScene::generate(&Skeleton::h36m17(), &config).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        for cam in &a.cameras {
            let rtr = cam.rotation.transpose() * cam.rotation;
            assert!((rtr - Matrix3::identity()).abs().max() < 1e-9);
            assert!((cam.rotation.determinant() - 1.0).abs() < 1e-9);
        }
        let restored: SyntheticScene = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        restored.validate().unwrap();
    }
}
