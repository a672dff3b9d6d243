//! Gaussian-cloud adversarial toy: the "generator" is a learnable offset added to noise, the
//! real archive a cloud around a fixed centre, both as `[T * B, 3J]` sequence batches.

use liftpose_core::adversarial::{
    critic_step, generator_adversarial_loss, CriticConfig, CriticModel, SequenceBatch,
};
use liftpose_core::neuralcore::{AdamState, Graph, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const JOINTS: usize = 17;
pub const STEPS: usize = 4;
pub const BATCH: usize = 16;
pub const CRITIC_HIDDEN: usize = 32;
pub const CRITIC_LR: f64 = 0.01;
pub const GENERATOR_LR: f64 = 0.002;
pub const N_CRITIC: usize = 5;
pub const CLIP: f64 = 0.01;
pub const SPREAD: f64 = 0.05;
pub const REAL_CENTRE: f64 = 0.25;
pub const FAKE_START: f64 = -0.25;

pub struct ToyRun {
    /// Distance between the fake mean (the offset) and the real centre, before each generator
    /// step and once after the last.
    pub distances: Vec<f64>,
    /// Largest critic parameter magnitude after each critic step.
    pub critic_max_abs: Vec<f64>,
}

fn cloud(rng: &mut ChaCha8Rng, centre: &[f64]) -> Tensor {
    let normal = Normal::new(0.0, SPREAD).unwrap();
    let d = centre.len();
    let data = (0..STEPS * BATCH * d)
        .map(|k| centre[k % d] + normal.sample(rng))
        .collect();
    Tensor::matrix(STEPS * BATCH, d, data)
}

pub fn run(generator_steps: usize, seed: u64) -> ToyRun {
    let d = 3 * JOINTS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = CriticConfig {
        joints: JOINTS,
        hidden: CRITIC_HIDDEN,
        gru_layers: 2,
    };
    let mut critic = CriticModel::new(config, CLIP, seed).unwrap();
    let mut generator = ParamStore::new();
    let offset = generator.add("offset", Tensor::new(&[d], vec![FAKE_START; d]).unwrap());
    let mut adam = AdamState::new(&generator, GENERATOR_LR);
    let real_centre = vec![REAL_CENTRE; d];
    let zero = vec![0.0; d];
    let distance = |g: &ParamStore| {
        g.value(offset)
            .data()
            .iter()
            .map(|o| (o - REAL_CENTRE).powi(2))
            .sum::<f64>()
            .sqrt()
    };

    let mut run = ToyRun {
        distances: Vec::new(),
        critic_max_abs: Vec::new(),
    };
    for _ in 0..generator_steps {
        run.distances.push(distance(&generator));
        for _ in 0..N_CRITIC {
            let real = SequenceBatch {
                data: cloud(&mut rng, &real_centre),
                batch: BATCH,
            };
            let fake = SequenceBatch {
                data: cloud(&mut rng, generator.value(offset).data()),
                batch: BATCH,
            };
            let step = critic_step(&mut critic, &real, &fake, CRITIC_LR, CLIP).unwrap();
            run.critic_max_abs.push(step.max_abs);
        }
        let mut g = Graph::new();
        let noise = g.constant(cloud(&mut rng, &zero));
        let o = g.param(&generator, offset);
        let fake = g.add_bias(noise, o).unwrap();
        let loss = generator_adversarial_loss(&mut g, &critic, fake, BATCH).unwrap();
        g.backward(loss).unwrap();
        generator.zero_grads();
        generator.accumulate(&g, 1.0);
        adam.step(&mut generator).unwrap();
    }
    run.distances.push(distance(&generator));
    run
}

pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    values
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}
