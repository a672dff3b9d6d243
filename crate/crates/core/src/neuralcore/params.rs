use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "liftpose-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

static NEXT_STORE: AtomicU64 = AtomicU64::new(0);

/// Named parameters with gradient accumulators. Each store carries an id so several stores can
/// feed one graph; clones share it.
#[derive(Debug, Clone)]
pub struct ParamStore {
    uid: u64,
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Serialized parameter values, in registration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheckpoint {
    pub format: String,
    pub version: u32,
    pub params: Vec<CheckpointEntry>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values == other.values && self.grads == other.grads
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.grads.push(vec![0.0; value.len()]);
        self.values.push(value);
        self.names.push(name);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    /// Adds `scale * g` for every parameter gradient recorded in `graph`.
    pub fn accumulate(&mut self, graph: &super::Graph, scale: f64) {
        for (id, g) in graph.param_grads(self) {
            self.grads[id.0]
                .iter_mut()
                .zip(g)
                .for_each(|(a, b)| *a += scale * b);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(Tensor::max_abs).fold(0.0, f64::max)
    }

    /// Clamps every entry to `[-bound, bound]`.
    pub fn clip(&mut self, bound: f64) {
        for t in &mut self.values {
            t.data_mut()
                .iter_mut()
                .for_each(|x| *x = x.clamp(-bound, bound));
        }
    }

    pub fn fill(&mut self, value: f64) {
        for t in &mut self.values {
            t.data_mut().fill(value);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn to_checkpoint(&self) -> ParamCheckpoint {
        ParamCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(n, v)| CheckpointEntry {
                    name: n.clone(),
                    shape: v.shape().to_vec(),
                    values: v.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Overwrites values from a checkpoint; names and shapes must match exactly.
    pub fn load_json(&mut self, text: &str) -> Result<()> {
        self.load_checkpoint(serde_json::from_str(text)?)
    }

    pub fn load_checkpoint(&mut self, ck: ParamCheckpoint) -> Result<()> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        if ck.params.len() != self.values.len() {
            return Err(Error::InvalidData(format!(
                "checkpoint has {} parameters, model has {}",
                ck.params.len(),
                self.values.len()
            )));
        }
        for (i, e) in ck.params.into_iter().enumerate() {
            if e.name != self.names[i] || e.shape != self.values[i].shape() {
                return Err(Error::InvalidData(format!(
                    "checkpoint entry {} {:?} does not match {} {:?}",
                    e.name,
                    e.shape,
                    self.names[i],
                    self.values[i].shape()
                )));
            }
            self.values[i] = Tensor::new(&e.shape, e.values)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        self.load_json(&std::fs::read_to_string(path)?)
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`, stored as `[rows, cols]`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect(),
    )
}

/// Square orthogonal matrix from the QR factorization of a Gaussian matrix, with the sign of
/// `R`'s diagonal folded into `Q` so the distribution is uniform.
pub fn orthogonal(n: usize, rng: &mut impl Rng) -> Tensor {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Tensor::matrix(n, n, (0..n * n).map(|k| q[(k / n, k % n)]).collect())
}
