//! Single-view adversarial training: a weight-clipped Wasserstein critic over 3D pose sequences
//! with the lifting network as generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::KeypointSequence2D;
use crate::lifting::{self, LiftingModel, ModelConfig, MM_PER_OUTPUT_UNIT};
use crate::neuralcore::{
    sgd_step_clipped, AdamState, Graph, GruLayerParams, Linear, ParamStore, Tensor, Var,
};
use crate::pose::Pose3D;
use crate::reprojection::{self, rotation_row};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub joints: usize,
    pub hidden: usize,
    pub gru_layers: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            joints: 17,
            hidden: 128,
            gru_layers: 2,
        }
    }
}

/// Root-relative pose sequences, time-major `[T * batch, 3J]`, in metres.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub data: Tensor,
    pub batch: usize,
}

impl SequenceBatch {
    /// Sequences must share one length; poses are in mm and get root-centred.
    pub fn from_poses(sequences: &[&[Pose3D]]) -> Result<Self> {
        let first = sequences.first().ok_or(Error::EmptyDataset)?;
        let (t, b) = (first.len(), sequences.len());
        if t == 0 {
            return Err(Error::SequenceTooShort(0));
        }
        let j = first[0].joint_count();
        if sequences
            .iter()
            .any(|s| s.len() != t || s.iter().any(|p| p.joint_count() != j))
        {
            return Err(Error::shape(
                "pose sequences differ in length or joint count",
            ));
        }
        let mut data = Vec::with_capacity(t * b * 3 * j);
        for k in 0..t {
            for s in sequences {
                data.extend(
                    s[k].root_centered()
                        .to_flat()
                        .into_iter()
                        .map(|v| v / MM_PER_OUTPUT_UNIT),
                );
            }
        }
        Ok(Self {
            data: Tensor::matrix(t * b, 3 * j, data),
            batch: b,
        })
    }

    pub fn steps(&self) -> usize {
        self.data.rows() / self.batch
    }
}

/// GRU stack read out at the last hidden state, then a linear layer to one score.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticModel {
    pub config: CriticConfig,
    pub params: ParamStore,
    gru: Vec<GruLayerParams>,
    head: Linear,
}

impl CriticModel {
    /// Initial weights are drawn as usual and then clipped to `clip`.
    pub fn new(config: CriticConfig, clip: f64, seed: u64) -> Result<Self> {
        if config.gru_layers == 0 || config.hidden == 0 || config.joints == 0 {
            return Err(Error::InvalidConfig(format!(
                "critic sizes must be positive: {config:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc217_1c00);
        let mut params = ParamStore::new();
        let gru = (0..config.gru_layers)
            .map(|l| {
                let input = if l == 0 {
                    3 * config.joints
                } else {
                    config.hidden
                };
                GruLayerParams::new(
                    &mut params,
                    &format!("critic.gru{l}"),
                    input,
                    config.hidden,
                    &mut rng,
                )
            })
            .collect();
        let head = Linear::new(&mut params, "critic.head", config.hidden, 1, &mut rng);
        params.clip(clip);
        Ok(Self {
            config,
            params,
            gru,
            head,
        })
    }

    /// Scores `[batch, 1]` for `x: [T * batch, 3J]`.
    pub fn forward(&self, g: &mut Graph, x: Var, batch: usize) -> Result<Var> {
        let mut input = x;
        let mut states = Vec::new();
        for (l, layer) in self.gru.iter().enumerate() {
            if l > 0 {
                input = g.concat_rows(&states)?;
            }
            states = layer.forward(g, &self.params, input, batch)?;
        }
        let last = *states
            .last()
            .ok_or_else(|| Error::shape("empty sequence"))?;
        self.head.forward(g, &self.params, last)
    }

    /// Score of one sequence of poses (mm). A single pose is a sequence of length one.
    pub fn score(&self, sequence: &[Pose3D]) -> Result<f64> {
        let batch = SequenceBatch::from_poses(&[sequence])?;
        let mut g = Graph::new();
        let x = g.constant(batch.data);
        let s = self.forward(&mut g, x, 1)?;
        Ok(g.scalar(s))
    }

    fn mean_score(&self, g: &mut Graph, x: Var, batch: usize) -> Result<Var> {
        let s = self.forward(g, x, batch)?;
        Ok(g.mean(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticStep {
    /// `E_real[C] - E_fake[C]` before the update.
    pub gap: f64,
    /// Largest parameter magnitude after clipping.
    pub max_abs: f64,
}

/// One SGD ascent step on `E_real[C] - E_fake[C]`, then clipping to `[-clip, clip]`.
pub fn critic_step(
    critic: &mut CriticModel,
    real: &SequenceBatch,
    fake: &SequenceBatch,
    lr: f64,
    clip: f64,
) -> Result<CriticStep> {
    if real.batch == 0 || fake.batch == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut g = Graph::new();
    let xr = g.constant(real.data.clone());
    let xf = g.constant(fake.data.clone());
    let sr = critic.mean_score(&mut g, xr, real.batch)?;
    let sf = critic.mean_score(&mut g, xf, fake.batch)?;
    let gap = g.sub(sr, sf)?;
    let loss = g.scale(gap, -1.0);
    let gap = g.scalar(gap);
    if !gap.is_finite() {
        return Err(Error::NumericalFailure(format!("critic gap is {gap}")));
    }
    g.backward(loss)?;
    critic.params.zero_grads();
    critic.params.accumulate(&g, 1.0);
    sgd_step_clipped(&mut critic.params, lr, clip)?;
    Ok(CriticStep {
        gap,
        max_abs: critic.params.max_abs(),
    })
}

/// Generator adversarial loss `-E_fake[C]`: the critic is trained to score real sequences
/// higher, so the generator descends the negated score of its own samples.
pub fn generator_adversarial_loss(
    g: &mut Graph,
    critic: &CriticModel,
    fake: Var,
    batch: usize,
) -> Result<Var> {
    let s = critic.mean_score(g, fake, batch)?;
    Ok(g.scale(s, -1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversarialConfig {
    pub window: usize,
    /// Consecutive frames per generated sequence fed to the critic.
    pub sequence_length: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub critic_lr: f64,
    pub clip: f64,
    pub n_critic: usize,
    pub use_adversarial: bool,
    pub adversarial_weight: f64,
    pub confidence_mask: bool,
    pub mask_threshold: f64,
    pub seed: u64,
    pub hidden: usize,
    pub width: usize,
    pub gru_layers: usize,
    pub residual_blocks: usize,
    pub critic_hidden: usize,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            window: m.window,
            sequence_length: 8,
            batch_size: 16,
            epochs: 5,
            steps_per_epoch: 50,
            lr: 0.001,
            critic_lr: 5e-5,
            clip: 0.01,
            n_critic: 5,
            use_adversarial: true,
            adversarial_weight: 1.0,
            confidence_mask: true,
            mask_threshold: 0.7,
            seed: 0,
            hidden: m.hidden,
            width: m.width,
            gru_layers: m.gru_layers,
            residual_blocks: m.residual_blocks,
            critic_hidden: CriticConfig::default().hidden,
        }
    }
}

impl AdversarialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "window must be odd, got {}",
                self.window
            )));
        }
        if !(self.lr > 0.0 && self.critic_lr > 0.0 && self.clip > 0.0) {
            return Err(Error::InvalidConfig(
                "learning rates and clip bound must be positive".into(),
            ));
        }
        if self.sequence_length == 0 || self.batch_size == 0 || self.n_critic == 0 {
            return Err(Error::InvalidConfig(
                "sequence length, batch size and n_critic must be positive".into(),
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

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversarialStep {
    pub epoch: usize,
    pub step: usize,
    pub reprojection: f64,
    pub adversarial: f64,
    pub total: f64,
    pub critic_gap: f64,
    pub critic_max_abs: f64,
}

#[derive(Debug, Clone)]
pub struct AdversarialOutcome {
    pub lifting: LiftingModel,
    pub critic: CriticModel,
    pub steps: Vec<AdversarialStep>,
}

struct Generator<'a> {
    view: &'a KeypointSequence2D,
    flat: Vec<Vec<f64>>,
    config: &'a AdversarialConfig,
}

impl Generator<'_> {
    fn starts(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let span = self.flat.len() - self.config.sequence_length + 1;
        (0..self.config.batch_size)
            .map(|_| rng.random_range(0..span))
            .collect()
    }

    /// Lifted sequences, time-major `[L * B, 3J]`, with row `t * B + b` the frame `starts[b] + t`.
    fn lift(&self, g: &mut Graph, model: &LiftingModel, starts: &[usize]) -> Result<Var> {
        let items: Vec<_> = (0..self.config.sequence_length)
            .flat_map(|t| starts.iter().map(move |s| s + t))
            .map(|f| (vec![self.flat.as_slice()], f))
            .collect();
        let x = g.constant(lifting::window_tensor(&items, model.config.window));
        model.forward(g, x, items.len())
    }

    fn reprojection(&self, g: &mut Graph, pred: Var, starts: &[usize]) -> Result<Var> {
        let frames: Vec<usize> = (0..self.config.sequence_length)
            .flat_map(|t| starts.iter().map(move |s| s + t))
            .collect();
        let obs: Vec<_> = frames
            .iter()
            .map(|&f| self.view.frames[f].as_slice())
            .collect();
        let obs = g.constant(reprojection::normalized_batch(&obs)?);
        let conf: Vec<_> = frames
            .iter()
            .map(|&f| self.view.confidences[f].as_slice())
            .collect();
        let mask = g.constant(reprojection::confidence_mask(
            &conf,
            self.config.mask_threshold,
        ));
        let identity = g.constant(Tensor::row(rotation_row(&nalgebra::Matrix3::identity())));
        let masks = [mask];
        let masks = self.config.confidence_mask.then_some(&masks[..]);
        reprojection::loss_node(g, &[pred], &[obs], &[vec![identity]], masks)
    }
}

fn real_batch(
    real: &[Pose3D],
    length: usize,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SequenceBatch> {
    let span = real.len() - length + 1;
    let seqs: Vec<&[Pose3D]> = (0..batch)
        .map(|_| {
            let s = rng.random_range(0..span);
            &real[s..s + length]
        })
        .collect();
    SequenceBatch::from_poses(&seqs)
}

/// Alternates `n_critic` critic updates with one generator update on `L_R + w L_advG`.
/// With the adversarial term off the critic is left untouched and only `L_R` is minimized.
pub fn train_adversarial(
    view: &KeypointSequence2D,
    real: &[Pose3D],
    config: &AdversarialConfig,
) -> Result<AdversarialOutcome> {
    config.validate()?;
    let joints = view.joint_count();
    if view.frames.is_empty() || joints == 0 {
        return Err(Error::EmptyDataset);
    }
    view.validate(joints)?;
    if view.frame_count() < config.sequence_length {
        return Err(Error::SequenceTooShort(view.frame_count()));
    }
    if config.use_adversarial {
        if real.len() < config.sequence_length {
            return Err(Error::SequenceTooShort(real.len()));
        }
        if real.iter().any(|p| p.joint_count() != joints) {
            return Err(Error::InvalidData(
                "real pose archive has a different joint count".into(),
            ));
        }
    }
    let mut model = LiftingModel::new(config.model_config(joints), config.seed)?;
    let critic_config = CriticConfig {
        joints,
        hidden: config.critic_hidden,
        gru_layers: 2,
    };
    let mut critic = CriticModel::new(critic_config, config.clip, config.seed)?;
    let generator = Generator {
        view,
        flat: lifting::flatten(&lifting::normalize_input(view)),
        config,
    };
    let mut adam = AdamState::new(&model.params, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xad7e_5a21);
    let mut steps = Vec::new();

    for epoch in 1..=config.epochs {
        for step in 0..config.steps_per_epoch {
            let mut last = CriticStep {
                gap: 0.0,
                max_abs: critic.params.max_abs(),
            };
            if config.use_adversarial {
                for _ in 0..config.n_critic {
                    let starts = generator.starts(&mut rng);
                    let mut g = Graph::new();
                    let fake = generator.lift(&mut g, &model, &starts)?;
                    let fake = SequenceBatch {
                        data: g.value(fake).clone(),
                        batch: starts.len(),
                    };
                    let real =
                        real_batch(real, config.sequence_length, config.batch_size, &mut rng)?;
                    last = critic_step(&mut critic, &real, &fake, config.critic_lr, config.clip)?;
                }
            }
            let starts = generator.starts(&mut rng);
            let mut g = Graph::new();
            let fake = generator.lift(&mut g, &model, &starts)?;
            let l_r = generator.reprojection(&mut g, fake, &starts)?;
            let (total, l_adv) = if config.use_adversarial {
                let adv = generator_adversarial_loss(&mut g, &critic, fake, starts.len())?;
                let weighted = g.scale(adv, config.adversarial_weight);
                (g.add(l_r, weighted)?, Some(adv))
            } else {
                (l_r, None)
            };
            let record = AdversarialStep {
                epoch,
                step,
                reprojection: g.scalar(l_r),
                adversarial: l_adv.map_or(0.0, |v| g.scalar(v)),
                total: g.scalar(total),
                critic_gap: last.gap,
                critic_max_abs: last.max_abs,
            };
            if !record.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    triangulation: record.adversarial,
                    reprojection: record.reprojection,
                });
            }
            g.backward(total)?;
            model.params.zero_grads();
            model.params.accumulate(&g, 1.0);
            adam.step(&mut model.params)?;
            steps.push(record);
        }
    }
    Ok(AdversarialOutcome {
        lifting: model,
        critic,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::gradcheck;
    use nalgebra::Vector3;
    use rand_distr::{Distribution, Normal};

    fn cloud(rng: &mut ChaCha8Rng, centre: &[f64], n: usize, joints: usize) -> Vec<Pose3D> {
        let noise = Normal::new(0.0, 50.0).unwrap();
        (0..n)
            .map(|_| {
                Pose3D::new(
                    (0..joints)
                        .map(|j| {
                            Vector3::from_fn(|k, _| {
                                if j == 0 {
                                    0.0
                                } else {
                                    centre[3 * j + k] + noise.sample(rng)
                                }
                            })
                        })
                        .collect(),
                )
            })
            .collect()
    }

    fn config(joints: usize) -> CriticConfig {
        CriticConfig {
            joints,
            hidden: 6,
            gru_layers: 2,
        }
    }

    #[test]
    fn zero_critic_scores_zero() {
        let mut critic = CriticModel::new(config(3), 0.01, 1).unwrap();
        critic.params.fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let poses = cloud(&mut rng, &[0.0; 9], 4, 3);
        assert_eq!(critic.score(&poses).unwrap(), 0.0);
        assert_eq!(critic.score(&poses[..1]).unwrap(), 0.0);
    }

    #[test]
    fn initial_critic_is_clipped() {
        let critic = CriticModel::new(config(3), 0.01, 2).unwrap();
        assert!(critic.params.max_abs() <= 0.01);
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut critic = CriticModel::new(config(3), 1.0, 3).unwrap();
        critic.params.clip(0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let poses = cloud(&mut rng, &[300.0; 9], 6, 3);
        let batch = SequenceBatch::from_poses(&[&poses[..3], &poses[3..]]).unwrap();
        let c = critic.clone();
        let build = |g: &mut Graph, store: &ParamStore| -> Result<Var> {
            let model = CriticModel {
                params: store.clone(),
                ..c.clone()
            };
            let x = g.constant(batch.data.clone());
            let s = model.forward(g, x, 2)?;
            let w = g.constant(Tensor::matrix(2, 1, vec![0.7, -1.3]));
            let s = g.mul(s, w)?;
            Ok(g.sum(s))
        };
        let report =
            gradcheck::check_params(&critic.params, build, gradcheck::SUITE_STEP, Some(8), 4)
                .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
        assert!(report.checked > 40);
    }

    #[test]
    fn identical_batches_leave_critic_unchanged() {
        let mut critic = CriticModel::new(config(3), 0.01, 4).unwrap();
        let before = critic.params.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let poses = cloud(&mut rng, &[100.0; 9], 8, 3);
        let b = SequenceBatch::from_poses(&[&poses[..4], &poses[4..]]).unwrap();
        let step = critic_step(&mut critic, &b, &b, 5e-5, 0.01).unwrap();
        assert_eq!(step.gap, 0.0);
        for id in critic.params.ids() {
            assert!(critic.params.grad(id).iter().all(|g| g.abs() < 1e-15));
            let moved = critic
                .params
                .value(id)
                .data()
                .iter()
                .zip(before.value(id).data())
                .map(|(a, b)| (a - b).abs());
            assert!(moved.fold(0.0, f64::max) < 1e-18);
        }
    }

    #[test]
    fn clipping_holds_after_every_step_and_gap_grows() {
        let j = 4;
        let mut critic = CriticModel::new(config(j), 0.01, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let real_centre = vec![400.0; 3 * j];
        let fake_centre = vec![-400.0; 3 * j];
        let mut gaps = Vec::new();
        for _ in 0..50 {
            let r = cloud(&mut rng, &real_centre, 16, j);
            let f = cloud(&mut rng, &fake_centre, 16, j);
            let rs: Vec<&[Pose3D]> = r.chunks(2).collect();
            let fs: Vec<&[Pose3D]> = f.chunks(2).collect();
            let step = critic_step(
                &mut critic,
                &SequenceBatch::from_poses(&rs).unwrap(),
                &SequenceBatch::from_poses(&fs).unwrap(),
                5e-5,
                0.01,
            )
            .unwrap();
            assert!(step.max_abs <= 0.01);
            gaps.push(step.gap);
        }
        let head: f64 = gaps[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = gaps[40..].iter().sum::<f64>() / 10.0;
        assert!(tail > head, "{head} -> {tail}");
    }

    #[test]
    fn constant_critic_gives_zero_generator_gradient() {
        let mut critic = CriticModel::new(config(3), 0.01, 6).unwrap();
        critic.params.fill(0.0);
        let head_b = critic.head.b;
        critic.params.value_mut(head_b).data_mut()[0] = 0.3;
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let poses = cloud(&mut rng, &[0.0; 9], 4, 3);
        let x = g.input(
            SequenceBatch::from_poses(&[&poses[..2], &poses[2..]])
                .unwrap()
                .data,
        );
        let loss = generator_adversarial_loss(&mut g, &critic, x, 2).unwrap();
        assert!((g.scalar(loss) + 0.3).abs() < 1e-15);
        g.backward(loss).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|v| *v == 0.0));
    }

    fn toy_view(frames: usize) -> KeypointSequence2D {
        let scene = crate::kinematics::SyntheticScene::generate(
            &crate::kinematics::Skeleton::h36m17(),
            &crate::kinematics::SceneConfig {
                frames,
                views: 1,
                ..Default::default()
            },
        )
        .unwrap();
        crate::kinematics::render_keypoints(
            &scene,
            &crate::kinematics::NoiseConfig::gaussian(1.0),
            3,
        )
        .unwrap()
        .remove(0)
    }

    fn small(use_adversarial: bool) -> AdversarialConfig {
        AdversarialConfig {
            window: 3,
            sequence_length: 3,
            batch_size: 4,
            epochs: 1,
            steps_per_epoch: 3,
            n_critic: 2,
            use_adversarial,
            hidden: 8,
            width: 16,
            critic_hidden: 8,
            ..AdversarialConfig::default()
        }
    }

    #[test]
    fn additive_total_and_clipped_critic() {
        let view = toy_view(40);
        let real: Vec<Pose3D> = (0..20)
            .map(|_| crate::kinematics::Skeleton::h36m17().rest_pose())
            .collect();
        let out = train_adversarial(&view, &real, &small(true)).unwrap();
        assert_eq!(out.steps.len(), 3);
        for s in &out.steps {
            assert!((s.total - (s.reprojection + s.adversarial)).abs() <= 1e-12);
            assert!(s.critic_max_abs <= 0.01);
        }
        assert!(out.critic.params.max_abs() <= 0.01);
    }

    #[test]
    fn disabled_adversarial_term_is_plain_reprojection() {
        let view = toy_view(40);
        let off = train_adversarial(&view, &[], &small(false)).unwrap();
        let fresh = CriticModel::new(
            CriticConfig {
                joints: 17,
                hidden: 8,
                gru_layers: 2,
            },
            0.01,
            0,
        )
        .unwrap();
        assert_eq!(off.critic.params, fresh.params);
        for s in &off.steps {
            assert_eq!(s.adversarial, 0.0);
            assert_eq!(s.total, s.reprojection);
        }
        let on = train_adversarial(&view, &vec![view_pose(); 10], &small(true)).unwrap();
        assert_ne!(on.lifting.params, off.lifting.params);
    }

    fn view_pose() -> Pose3D {
        crate::kinematics::Skeleton::h36m17().rest_pose()
    }

    #[test]
    fn short_inputs_are_rejected() {
        let view = toy_view(2);
        assert!(matches!(
            train_adversarial(&view, &[], &small(false)),
            Err(Error::SequenceTooShort(2))
        ));
    }
}
