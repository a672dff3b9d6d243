use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{glorot_uniform, orthogonal, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `y = x W^T + b` with `W: [out, in]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add(format!("{name}.w"), glorot_uniform(output, input, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[output]));
        Self {
            w,
            b,
            input,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w, true)?;
        g.add_bias(y, b)
    }
}

/// Gated recurrent unit layer; input matrices `[H, in]`, recurrent matrices `[H, H]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruLayerParams {
    pub input: usize,
    pub hidden: usize,
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
}

impl GruLayerParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut w = |gate: &str, rng: &mut _| {
            store.add(
                format!("{name}.w_{gate}"),
                glorot_uniform(hidden, input, rng),
            )
        };
        let (w_z, w_r, w_h) = (w("z", rng), w("r", rng), w("h", rng));
        let mut u = |gate: &str, rng: &mut _| {
            store.add(format!("{name}.u_{gate}"), orthogonal(hidden, rng))
        };
        let (u_z, u_r, u_h) = (u("z", rng), u("r", rng), u("h", rng));
        let mut b = |gate: &str| store.add(format!("{name}.b_{gate}"), Tensor::zeros(&[hidden]));
        let (b_z, b_r, b_h) = (b("z"), b("r"), b("h"));
        Self {
            input,
            hidden,
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z,
            b_r,
            b_h,
        }
    }

    /// Runs the recurrence from `h_0 = 0` over `x: [T * batch, in]` (time-major rows) and
    /// returns the `T` hidden states, each `[batch, H]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        batch: usize,
    ) -> Result<Vec<Var>> {
        let rows = g.value(x).rows();
        if batch == 0 || rows % batch != 0 || rows == 0 {
            return Err(Error::shape(format!(
                "{rows} rows are not whole time steps of batch {batch}"
            )));
        }
        if g.value(x).cols() != self.input {
            return Err(Error::shape(format!(
                "GRU expects {} inputs, got {}",
                self.input,
                g.value(x).cols()
            )));
        }
        let steps = rows / batch;
        let p = |g: &mut Graph, id| g.param(store, id);
        let (w_z, w_r, w_h) = (p(g, self.w_z), p(g, self.w_r), p(g, self.w_h));
        let (u_z, u_r, u_h) = (p(g, self.u_z), p(g, self.u_r), p(g, self.u_h));
        let (b_z, b_r, b_h) = (p(g, self.b_z), p(g, self.b_r), p(g, self.b_h));
        let xz = g.matmul(x, w_z, true)?;
        let xz = g.add_bias(xz, b_z)?;
        let xr = g.matmul(x, w_r, true)?;
        let xr = g.add_bias(xr, b_r)?;
        let xh = g.matmul(x, w_h, true)?;
        let xh = g.add_bias(xh, b_h)?;

        let mut states: Vec<Var> = Vec::with_capacity(steps);
        for t in 0..steps {
            let az = g.slice_rows(xz, t * batch, batch)?;
            let ah = g.slice_rows(xh, t * batch, batch)?;
            let h = match states.last().copied() {
                None => {
                    let z = g.sigmoid(az);
                    let cand = g.tanh(ah);
                    g.mul(z, cand)?
                }
                Some(prev) => {
                    let ar = g.slice_rows(xr, t * batch, batch)?;
                    let hz = g.matmul(prev, u_z, true)?;
                    let z = g.add(az, hz)?;
                    let z = g.sigmoid(z);
                    let hr = g.matmul(prev, u_r, true)?;
                    let r = g.add(ar, hr)?;
                    let r = g.sigmoid(r);
                    let rh = g.mul(r, prev)?;
                    let hh = g.matmul(rh, u_h, true)?;
                    let cand = g.add(ah, hh)?;
                    let cand = g.tanh(cand);
                    let step = g.sub(cand, prev)?;
                    let step = g.mul(z, step)?;
                    g.add(prev, step)?
                }
            };
            states.push(h);
        }
        Ok(states)
    }
}

/// Elementwise max over time concatenated with the mean over time: `T x [B, H] -> [B, 2H]`.
pub fn pool_concat(g: &mut Graph, states: &[Var]) -> Result<Var> {
    let max = g.max_pool(states)?;
    let mean = g.mean_pool(states)?;
    g.concat_cols(&[max, mean])
}

/// `y = x + relu(L2(relu(L1 x)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualBlockParams {
    pub first: Linear,
    pub second: Linear,
}

impl ResidualBlockParams {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, rng: &mut impl Rng) -> Self {
        Self {
            first: Linear::new(store, &format!("{name}.l1"), width, width, rng),
            second: Linear::new(store, &format!("{name}.l2"), width, width, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.first.forward(g, store, x)?;
        let y = g.relu(y);
        let y = self.second.forward(g, store, y)?;
        let y = g.relu(y);
        g.add(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input: usize,
    pub hidden: usize,
    pub width: usize,
    pub output: usize,
    pub gru_layers: usize,
    pub residual_blocks: usize,
}

/// GRU stack, max/mean pooling over time, a projection to the block width, residual blocks and
/// a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEncoder {
    pub config: EncoderConfig,
    pub gru: Vec<GruLayerParams>,
    pub project: Linear,
    pub blocks: Vec<ResidualBlockParams>,
    pub output: Linear,
}

impl SequenceEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if config.gru_layers == 0
            || config.hidden == 0
            || config.width == 0
            || config.input == 0
            || config.output == 0
        {
            return Err(Error::InvalidConfig(format!(
                "encoder sizes must be positive: {config:?}"
            )));
        }
        let gru = (0..config.gru_layers)
            .map(|l| {
                let input = if l == 0 { config.input } else { config.hidden };
                GruLayerParams::new(store, &format!("{name}.gru{l}"), input, config.hidden, rng)
            })
            .collect();
        let project = Linear::new(
            store,
            &format!("{name}.project"),
            2 * config.hidden,
            config.width,
            rng,
        );
        let blocks = (0..config.residual_blocks)
            .map(|b| {
                ResidualBlockParams::new(store, &format!("{name}.block{b}"), config.width, rng)
            })
            .collect();
        let output = Linear::new(
            store,
            &format!("{name}.out"),
            config.width,
            config.output,
            rng,
        );
        Ok(Self {
            config,
            gru,
            project,
            blocks,
            output,
        })
    }

    /// `x: [T * batch, input]`, time-major; returns `[batch, output]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, batch: usize) -> Result<Var> {
        let mut input = x;
        let mut states = Vec::new();
        for (l, layer) in self.gru.iter().enumerate() {
            if l > 0 {
                input = g.concat_rows(&states)?;
            }
            states = layer.forward(g, store, input, batch)?;
        }
        let pooled = pool_concat(g, &states)?;
        let y = self.project.forward(g, store, pooled)?;
        let mut y = g.relu(y);
        for block in &self.blocks {
            y = block.forward(g, store, y)?;
        }
        self.output.forward(g, store, y)
    }
}
