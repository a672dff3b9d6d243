//! Recurrent 2D-to-3D lifting, camera rotation correction and the weakly supervised training
//! loop combining triangulation and re-projection losses.

use std::path::Path;

use nalgebra::{Matrix3, Vector2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::KeypointSequence2D;
use crate::neuralcore::{
    AdamState, EncoderConfig, Graph, ParamCheckpoint, ParamStore, SequenceEncoder, Tensor, Var,
};
use crate::pose::Pose3D;
use crate::reprojection::{self, RotationTable};
use crate::triangulation::{GateConfig, PseudoGtCache};

/// Network outputs are in metres; poses elsewhere are in millimetres.
pub const MM_PER_OUTPUT_UNIT: f64 = 1000.0;

pub const MODEL_FORMAT: &str = "liftpose-model";
pub const MODEL_VERSION: u32 = 1;

const INFER_CHUNK: usize = 512;
const DISCREPANCY_FRAMES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub joints: usize,
    /// Frames per input window, `2T + 1`.
    pub window: usize,
    pub hidden: usize,
    pub width: usize,
    pub gru_layers: usize,
    pub residual_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            joints: 17,
            window: 27,
            hidden: 1024,
            width: 1000,
            gru_layers: 2,
            residual_blocks: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "window must be odd, got {}",
                self.window
            )));
        }
        if self.joints < 2 {
            return Err(Error::InvalidConfig("need at least two joints".into()));
        }
        Ok(())
    }

    pub fn half_window(&self) -> usize {
        self.window / 2
    }

    fn encoder(&self, input: usize, output: usize) -> EncoderConfig {
        EncoderConfig {
            input,
            hidden: self.hidden,
            width: self.width,
            output,
            gru_layers: self.gru_layers,
            residual_blocks: self.residual_blocks,
        }
    }
}

/// Maps `[0, w]` to `[-1, 1]` horizontally and divides `v` by the same `w`, centred on `h / 2`.
pub fn normalize_point(p: &Vector2<f64>, width: f64, height: f64) -> Vector2<f64> {
    Vector2::new(2.0 * p.x / width - 1.0, (2.0 * p.y - height) / width)
}

pub fn denormalize_point(p: &Vector2<f64>, width: f64, height: f64) -> Vector2<f64> {
    Vector2::new((p.x + 1.0) * width / 2.0, (p.y * width + height) / 2.0)
}

pub fn normalize_input(seq: &KeypointSequence2D) -> Vec<Vec<Vector2<f64>>> {
    seq.frames
        .iter()
        .map(|f| {
            f.iter()
                .map(|p| normalize_point(p, seq.width, seq.height))
                .collect()
        })
        .collect()
}

/// Frame indices of the window centred on `centre`, replicating the first and last frames past
/// the sequence ends.
pub fn window_indices(len: usize, centre: usize, window: usize) -> impl Iterator<Item = usize> {
    let half = (window / 2) as isize;
    let last = len.saturating_sub(1) as isize;
    (-half..=half).map(move |k| (centre as isize + k).clamp(0, last) as usize)
}

pub(crate) fn flatten(frames: &[Vec<Vector2<f64>>]) -> Vec<Vec<f64>> {
    frames
        .iter()
        .map(|f| f.iter().flat_map(|p| [p.x, p.y]).collect())
        .collect()
}

/// Time-major input `[window * items, cols]`: row `k * items + b` holds the `k`-th frame of
/// item `b`'s window, with the columns of every source in `b` concatenated.
pub(crate) fn window_tensor(items: &[(Vec<&[Vec<f64>]>, usize)], window: usize) -> Tensor {
    let cols: usize = items
        .first()
        .map_or(0, |(s, _)| s.iter().map(|f| f[0].len()).sum());
    let mut data = Vec::with_capacity(window * items.len() * cols);
    let mut idx: Vec<Vec<usize>> = Vec::with_capacity(items.len());
    for (sources, centre) in items {
        idx.push(window_indices(sources[0].len(), *centre, window).collect());
    }
    for k in 0..window {
        for ((sources, _), frames) in items.iter().zip(&idx) {
            for src in sources {
                data.extend_from_slice(&src[frames[k]]);
            }
        }
    }
    Tensor::matrix(window * items.len(), cols, data)
}

fn check_window(window: &[Vec<Vector2<f64>>], config: &ModelConfig) -> Result<()> {
    if window.len() != config.window {
        return Err(Error::shape(format!(
            "window has {} frames, model expects {}",
            window.len(),
            config.window
        )));
    }
    if let Some(f) = window.iter().find(|f| f.len() != config.joints) {
        return Err(Error::shape(format!(
            "frame has {} joints, model expects {}",
            f.len(),
            config.joints
        )));
    }
    Ok(())
}

fn rows_to_poses(t: &Tensor) -> Result<Vec<Pose3D>> {
    (0..t.rows())
        .map(|r| {
            Pose3D::from_flat(
                &t.row_slice(r)
                    .iter()
                    .map(|v| v * MM_PER_OUTPUT_UNIT)
                    .collect::<Vec<_>>(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    kind: String,
    config: ModelConfig,
    params: ParamCheckpoint,
}

fn save_model(path: &Path, kind: &str, config: &ModelConfig, params: &ParamStore) -> Result<()> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        kind: kind.into(),
        config: *config,
        params: params.to_checkpoint(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

fn read_model(path: &Path, kind: &str) -> Result<ModelFile> {
    let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if file.format != MODEL_FORMAT || file.version != MODEL_VERSION || file.kind != kind {
        return Err(Error::InvalidData(format!(
            "expected a {kind} model, found {} {} v{}",
            file.format, file.kind, file.version
        )));
    }
    Ok(file)
}

/// Sequence-to-one lifting network: a window of normalized 2D poses to the root-centred 3D pose
/// of the centre frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftingModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    encoder: SequenceEncoder,
}

impl LiftingModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = SequenceEncoder::new(
            &mut params,
            "lift",
            config.encoder(2 * config.joints, 3 * config.joints),
            &mut rng,
        )?;
        Ok(Self {
            config,
            params,
            encoder,
        })
    }

    /// `x: [window * batch, 2J]` time-major; returns root-centred `[batch, 3J]` in metres.
    pub fn forward(&self, g: &mut Graph, x: Var, batch: usize) -> Result<Var> {
        let out = self.encoder.forward(g, &self.params, x, batch)?;
        g.center_root(out, 3)
    }

    /// Centre-frame pose in mm for one window of normalized frames.
    pub fn lift(&self, window: &[Vec<Vector2<f64>>]) -> Result<Pose3D> {
        check_window(window, &self.config)?;
        let frames = flatten(window);
        let centre = self.config.half_window();
        let mut poses = self.predict(&[(vec![frames.as_slice()], centre)])?;
        Ok(poses.remove(0))
    }

    fn predict(&self, items: &[(Vec<&[Vec<f64>]>, usize)]) -> Result<Vec<Pose3D>> {
        let mut g = Graph::new();
        let x = g.constant(window_tensor(items, self.config.window));
        let out = self.forward(&mut g, x, items.len())?;
        rows_to_poses(g.value(out))
    }

    /// Centre-frame poses for the given frames of an already normalized sequence.
    pub fn predict_frames(
        &self,
        normalized: &[Vec<Vector2<f64>>],
        frames: &[usize],
    ) -> Result<Vec<Pose3D>> {
        if let Some(f) = normalized.iter().find(|f| f.len() != self.config.joints) {
            return Err(Error::shape(format!(
                "frame has {} joints, model expects {}",
                f.len(),
                self.config.joints
            )));
        }
        let flat = flatten(normalized);
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(INFER_CHUNK) {
            let items: Vec<_> = chunk.iter().map(|&c| (vec![flat.as_slice()], c)).collect();
            out.extend(self.predict(&items)?);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(path, "lifting", &self.config, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = read_model(path, "lifting")?;
        let mut model = Self::new(file.config, 0)?;
        model.params.load_checkpoint(file.params)?;
        Ok(model)
    }
}

/// Predicts an additive correction to a triangulated relative rotation from the two views'
/// windows. The output layer starts at zero, so an untrained model returns `R_triang`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraCorrectionModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    encoder: SequenceEncoder,
}

impl CameraCorrectionModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xca3e_7a00);
        let mut params = ParamStore::new();
        let encoder = SequenceEncoder::new(
            &mut params,
            "camera",
            config.encoder(4 * config.joints, 9),
            &mut rng,
        )?;
        params.value_mut(encoder.output.w).data_mut().fill(0.0);
        params.value_mut(encoder.output.b).data_mut().fill(0.0);
        Ok(Self {
            config,
            params,
            encoder,
        })
    }

    /// Raw correction `[batch, 9]` (row-major) for `x: [window * batch, 4J]`.
    pub fn correction(&self, g: &mut Graph, x: Var, batch: usize) -> Result<Var> {
        self.encoder.forward(g, &self.params, x, batch)
    }

    /// `polar(R_triang + correction)` per row, `[batch, 9]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        batch: usize,
        r_triang: &Matrix3<f64>,
    ) -> Result<Var> {
        let delta = self.correction(g, x, batch)?;
        let base = g.constant(Tensor::row(reprojection::rotation_row(r_triang)));
        let sum = g.add_bias(delta, base)?;
        g.polar_project(sum)
    }

    /// Corrected rotation from view `i` to view `j` given aligned windows of both.
    pub fn correct_rotation(
        &self,
        window_i: &[Vec<Vector2<f64>>],
        window_j: &[Vec<Vector2<f64>>],
        r_triang: &Matrix3<f64>,
    ) -> Result<Matrix3<f64>> {
        check_window(window_i, &self.config)?;
        check_window(window_j, &self.config)?;
        let (a, b) = (flatten(window_i), flatten(window_j));
        let mut g = Graph::new();
        let x = g.constant(window_tensor(
            &[(vec![a.as_slice(), b.as_slice()], self.config.half_window())],
            self.config.window,
        ));
        let r = self.forward(&mut g, x, 1, r_triang)?;
        Ok(Matrix3::from_row_slice(g.value(r).data()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(path, "camera", &self.config, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = read_model(path, "camera")?;
        let mut model = Self::new(file.config, 0)?;
        model.params.load_checkpoint(file.params)?;
        Ok(model)
    }
}

/// Sliding-window inference over a single view, one pose (mm, root-centred) per frame.
pub fn infer(model: &LiftingModel, seq: &KeypointSequence2D) -> Result<Vec<Pose3D>> {
    if seq.frames.is_empty() {
        return Err(Error::SequenceTooShort(0));
    }
    let frames: Vec<usize> = (0..seq.frame_count()).collect();
    model.predict_frames(&normalize_input(seq), &frames)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// `2T + 1`, odd.
    pub window: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub use_triangulation: bool,
    pub use_reprojection: bool,
    pub use_camera_correction: bool,
    /// Drop joints below the gate's per-joint threshold from the re-projection residual.
    pub confidence_mask: bool,
    pub triangulation_weight: f64,
    pub reprojection_weight: f64,
    pub hidden: usize,
    pub width: usize,
    pub gru_layers: usize,
    pub residual_blocks: usize,
    /// Caps the number of minibatches per epoch.
    pub max_steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            window: m.window,
            batch_size: 64,
            epochs: 10,
            lr: 0.001,
            seed: 0,
            use_triangulation: true,
            use_reprojection: true,
            use_camera_correction: true,
            confidence_mask: true,
            triangulation_weight: 1.0,
            reprojection_weight: 1.0,
            hidden: m.hidden,
            width: m.width,
            gru_layers: m.gru_layers,
            residual_blocks: m.residual_blocks,
            max_steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "window must be odd, got {}",
                self.window
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !self.use_triangulation && !self.use_reprojection {
            return Err(Error::InvalidConfig(
                "at least one of the triangulation and re-projection losses is needed".into(),
            ));
        }
        Ok(())
    }

    pub fn model_config(&self, joints: usize) -> ModelConfig {
        ModelConfig {
            joints,
            window: self.window,
            hidden: self.hidden,
            width: self.width,
            gru_layers: self.gru_layers,
            residual_blocks: self.residual_blocks,
        }
    }
}

/// Multi-view training input. `rotations` holds the frozen triangulation-time rotations.
#[derive(Debug, Clone)]
pub struct TrainingData<'a> {
    pub views: &'a [KeypointSequence2D],
    pub rotations: RotationTable,
    pub pseudo_gt: Option<&'a PseudoGtCache>,
    pub gate: GateConfig,
}

impl TrainingData<'_> {
    fn validate(&self) -> Result<(usize, usize)> {
        let first = self.views.first().ok_or(Error::EmptyDataset)?;
        let (frames, joints) = (first.frame_count(), first.joint_count());
        if frames == 0 || joints == 0 {
            return Err(Error::EmptyDataset);
        }
        for v in self.views {
            v.validate(joints)?;
            if v.frame_count() != frames {
                return Err(Error::InvalidData(
                    "views have different frame counts".into(),
                ));
            }
        }
        if self.rotations.views != self.views.len() {
            return Err(Error::shape(format!(
                "rotation table covers {} views, dataset has {}",
                self.rotations.views,
                self.views.len()
            )));
        }
        Ok((frames, joints))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub triangulation: f64,
    pub reprojection: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub triangulation: f64,
    pub reprojection: f64,
    pub total: f64,
    /// Mean cross-view MPJPE (mm) of the per-view predictions after rotating into a common view.
    pub view_discrepancy_mm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub lifting: LiftingModel,
    pub camera: Option<CameraCorrectionModel>,
    /// Epoch 0 is the untrained model, with zero losses.
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub used_triangulation: bool,
    pub used_reprojection: bool,
}

impl TrainOutcome {
    /// `epoch,L_T,L_R,total`, one row per trained epoch; a disabled term's column is left empty.
    pub fn history_csv(&self) -> String {
        let cell = |on: bool, v: f64| if on { v.to_string() } else { String::new() };
        let mut out = String::from("epoch,L_T,L_R,total\n");
        for e in self.history.iter().filter(|e| e.epoch > 0) {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch,
                cell(self.used_triangulation, e.triangulation),
                cell(self.used_reprojection, e.reprojection),
                e.total
            ));
        }
        out
    }
}

struct Prepared {
    flat: Vec<Vec<Vec<f64>>>,
    observations: Vec<Vec<Vec<Vector2<f64>>>>,
    views: usize,
    joints: usize,
}

/// Mean cross-view discrepancy of single-view predictions on evenly spaced frames.
pub fn view_discrepancy(
    model: &LiftingModel,
    views: &[KeypointSequence2D],
    rotations: &RotationTable,
    max_frames: usize,
) -> Result<f64> {
    let len = views.first().ok_or(Error::EmptyDataset)?.frame_count();
    if len == 0 || max_frames == 0 {
        return Err(Error::EmptyDataset);
    }
    let stride = len.div_ceil(max_frames);
    let frames: Vec<usize> = (0..len).step_by(stride).collect();
    let preds = views
        .iter()
        .map(|v| model.predict_frames(&normalize_input(v), &frames))
        .collect::<Result<Vec<_>>>()?;
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..views.len() {
        for j in i + 1..views.len() {
            let r = rotations.get(i, j);
            for (a, b) in preds[i].iter().zip(&preds[j]) {
                sum += crate::metrics::mpjpe(&a.transformed(r), b)?;
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

struct StepLosses {
    triangulation: f64,
    reprojection: f64,
    total: f64,
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    data: &'a TrainingData<'a>,
    prep: Prepared,
    lifting: LiftingModel,
    camera: Option<CameraCorrectionModel>,
}

const TRANSPOSE_9: [usize; 9] = [0, 3, 6, 1, 4, 7, 2, 5, 8];

impl Trainer<'_> {
    fn step(&mut self, batch: &[usize], epoch: usize, step: usize) -> Result<StepLosses> {
        let (n, b) = (self.prep.views, batch.len());
        let window = self.config.window;
        let mut g = Graph::new();
        let items: Vec<_> = (0..n)
            .flat_map(|v| batch.iter().map(move |&f| (v, f)))
            .map(|(v, f)| (vec![self.prep.flat[v].as_slice()], f))
            .collect();
        let x = g.constant(window_tensor(&items, window));
        let out = self.lifting.forward(&mut g, x, n * b)?;

        let mut terms = Vec::new();
        let mut l_t = None;
        if self.config.use_triangulation {
            if let Some(node) = self.triangulation_node(&mut g, out, batch)? {
                terms.push(g.scale(node, self.config.triangulation_weight));
                l_t = Some(node);
            }
        }
        let mut l_r = None;
        if self.config.use_reprojection {
            let node = self.reprojection_node(&mut g, out, batch)?;
            terms.push(g.scale(node, self.config.reprojection_weight));
            l_r = Some(node);
        }
        let total = match terms.as_slice() {
            [] => {
                return Ok(StepLosses {
                    triangulation: 0.0,
                    reprojection: 0.0,
                    total: 0.0,
                })
            }
            [one] => *one,
            [a, b] => g.add(*a, *b)?,
            _ => unreachable!(),
        };
        let losses = StepLosses {
            triangulation: l_t.map_or(0.0, |v| g.scalar(v)),
            reprojection: l_r.map_or(0.0, |v| g.scalar(v)),
            total: g.scalar(total),
        };
        if !losses.total.is_finite()
            || !losses.triangulation.is_finite()
            || !losses.reprojection.is_finite()
        {
            return Err(Error::NonFiniteLoss {
                epoch,
                step,
                triangulation: losses.triangulation,
                reprojection: losses.reprojection,
            });
        }
        g.backward(total)?;
        self.lifting.params.zero_grads();
        self.lifting.params.accumulate(&g, 1.0);
        if let Some(cam) = &mut self.camera {
            cam.params.zero_grads();
            cam.params.accumulate(&g, 1.0);
        }
        Ok(losses)
    }

    fn triangulation_node(&self, g: &mut Graph, out: Var, batch: &[usize]) -> Result<Option<Var>> {
        let (n, j, b) = (self.prep.views, self.prep.joints, batch.len());
        let Some(cache) = self.data.pseudo_gt else {
            return Ok(None);
        };
        let mut targets = vec![0.0; n * b * 3 * j];
        let mut weights = vec![0.0; n * b * j];
        let mut count = 0usize;
        for v in 0..n {
            for (k, &f) in batch.iter().enumerate() {
                if !self.data.gate.accepts(&self.data.views[v].confidences[f]) {
                    continue;
                }
                let Some(target) = cache.target(f, v) else {
                    continue;
                };
                let row = v * b + k;
                let flat = target.root_centered().to_flat();
                for (dst, src) in targets[row * 3 * j..(row + 1) * 3 * j].iter_mut().zip(flat) {
                    *dst = src / MM_PER_OUTPUT_UNIT;
                }
                weights[row * j..(row + 1) * j].fill(1.0);
                count += 1;
            }
        }
        if count == 0 {
            return Ok(None);
        }
        let scale = 1.0 / (count * j) as f64;
        weights.iter_mut().for_each(|w| *w *= scale);
        let t = g.constant(Tensor::matrix(n * b, 3 * j, targets));
        let w = g.constant(Tensor::matrix(n * b, j, weights));
        let diff = g.sub(out, t)?;
        let norms = g.group_norm(diff, 3)?;
        let weighted = g.mul(norms, w)?;
        Ok(Some(g.sum(weighted)))
    }

    fn reprojection_node(&self, g: &mut Graph, out: Var, batch: &[usize]) -> Result<Var> {
        let (n, b) = (self.prep.views, batch.len());
        let preds = (0..n)
            .map(|v| g.slice_rows(out, v * b, b))
            .collect::<Result<Vec<_>>>()?;
        let mut observations = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        for v in 0..n {
            let obs: Vec<&[Vector2<f64>]> = batch
                .iter()
                .map(|&f| self.prep.observations[v][f].as_slice())
                .collect();
            observations.push(g.constant(reprojection::normalized_batch(&obs)?));
            let conf: Vec<&[f64]> = batch
                .iter()
                .map(|&f| self.data.views[v].confidences[f].as_slice())
                .collect();
            masks.push(g.constant(reprojection::confidence_mask(
                &conf,
                self.data.gate.joint_threshold,
            )));
        }
        let mut rotations = vec![vec![None; n]; n];
        for i in 0..n {
            rotations[i][i] = Some(g.constant(Tensor::row(reprojection::rotation_row(
                &Matrix3::identity(),
            ))));
            for k in i + 1..n {
                let r_triang = self.data.rotations.get(i, k);
                let r = match &self.camera {
                    Some(cam) => {
                        let items: Vec<_> = batch
                            .iter()
                            .map(|&f| {
                                (
                                    vec![
                                        self.prep.flat[i].as_slice(),
                                        self.prep.flat[k].as_slice(),
                                    ],
                                    f,
                                )
                            })
                            .collect();
                        let x = g.constant(window_tensor(&items, self.config.window));
                        cam.forward(g, x, b, r_triang)?
                    }
                    None => g.constant(Tensor::row(reprojection::rotation_row(r_triang))),
                };
                rotations[i][k] = Some(r);
                rotations[k][i] = Some(g.permute_cols(r, &TRANSPOSE_9)?);
            }
        }
        let rotations: Vec<Vec<Var>> = rotations
            .into_iter()
            .map(|row| row.into_iter().map(|r| r.expect("filled")).collect())
            .collect();
        let masks = self.config.confidence_mask.then_some(masks.as_slice());
        reprojection::loss_node(g, &preds, &observations, &rotations, masks)
    }
}

/// Minibatch Adam on `w_T L_T + w_R L_R`. The pseudo-GT cache is only read.
pub fn train(data: &TrainingData<'_>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (frames, joints) = data.validate()?;
    if config.use_triangulation && data.pseudo_gt.is_none() {
        return Err(Error::InvalidConfig(
            "triangulation loss needs a pseudo-GT cache".into(),
        ));
    }
    let model_config = config.model_config(joints);
    let lifting = LiftingModel::new(model_config, config.seed)?;
    let camera = (config.use_camera_correction && config.use_reprojection && data.views.len() > 1)
        .then(|| CameraCorrectionModel::new(model_config, config.seed))
        .transpose()?;
    let prep = Prepared {
        flat: data
            .views
            .iter()
            .map(|v| flatten(&normalize_input(v)))
            .collect(),
        observations: data.views.iter().map(|v| v.frames.clone()).collect(),
        views: data.views.len(),
        joints,
    };
    let mut trainer = Trainer {
        config,
        data,
        prep,
        lifting,
        camera,
    };
    let mut adam_lift = AdamState::new(&trainer.lifting.params, config.lr);
    let mut adam_cam = trainer
        .camera
        .as_ref()
        .map(|c| AdamState::new(&c.params, config.lr));

    let mut history = vec![EpochRecord {
        epoch: 0,
        triangulation: 0.0,
        reprojection: 0.0,
        total: 0.0,
        view_discrepancy_mm: view_discrepancy(
            &trainer.lifting,
            data.views,
            &data.rotations,
            DISCREPANCY_FRAMES,
        )?,
    }];
    let mut steps = Vec::new();
    let mut order: Vec<usize> = (0..frames).collect();
    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(
            config
                .seed
                .wrapping_add(epoch as u64)
                .wrapping_mul(0x2545_f491_4f6c_dd1d),
        );
        order.shuffle(&mut rng);
        let limit = config.max_steps_per_epoch.unwrap_or(usize::MAX);
        let mut sums = [0.0; 3];
        let mut count = 0usize;
        for (step, batch) in order.chunks(config.batch_size).take(limit).enumerate() {
            let losses = trainer.step(batch, epoch, step)?;
            adam_lift.step(&mut trainer.lifting.params)?;
            if let (Some(cam), Some(adam)) = (&mut trainer.camera, &mut adam_cam) {
                adam.step(&mut cam.params)?;
            }
            sums[0] += losses.triangulation;
            sums[1] += losses.reprojection;
            sums[2] += losses.total;
            count += 1;
            steps.push(StepRecord {
                epoch,
                step,
                triangulation: losses.triangulation,
                reprojection: losses.reprojection,
                total: losses.total,
            });
        }
        let c = count.max(1) as f64;
        history.push(EpochRecord {
            epoch,
            triangulation: sums[0] / c,
            reprojection: sums[1] / c,
            total: sums[2] / c,
            view_discrepancy_mm: view_discrepancy(
                &trainer.lifting,
                data.views,
                &data.rotations,
                DISCREPANCY_FRAMES,
            )?,
        });
    }
    Ok(TrainOutcome {
        lifting: trainer.lifting,
        camera: trainer.camera,
        history,
        steps,
        used_triangulation: config.use_triangulation,
        used_reprojection: config.use_reprojection,
    })
}
