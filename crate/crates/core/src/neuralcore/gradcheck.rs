//! Central finite-difference checks of recorded gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor of the relative error, so gradients that are zero up to rounding compare
/// absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates whose probe points straddle a kink (relu, pooling winner, zero norm).
    pub skipped: usize,
}

impl GradCheckReport {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.max_relative_error = self
            .max_relative_error
            .max(relative_error(analytic, numeric));
        self.checked += 1;
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.max_relative_error = self.max_relative_error.max(other.max_relative_error);
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn coordinates(len: usize, limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match limit {
        Some(k) if k < len => {
            let mut v = index::sample(rng, len, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

/// Checks the gradient of `build`'s scalar output with respect to each input tensor.
pub fn check_inputs<F>(
    inputs: &[Tensor],
    build: F,
    h: f64,
    limit: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<(f64, u64, Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok((g.scalar(out), g.branch_signature(), g, vars, out))
    };
    let (_, base_sig, mut g, vars, out) = eval(inputs)?;
    g.backward(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for k in coordinates(inputs[i].len(), limit, &mut rng) {
            let x0 = inputs[i].data()[k];
            probe[i].data_mut()[k] = x0 + h;
            let (fp, sp, ..) = eval(&probe)?;
            probe[i].data_mut()[k] = x0 - h;
            let (fm, sm, ..) = eval(&probe)?;
            probe[i].data_mut()[k] = x0;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            report.record(analytic[k], (fp - fm) / (2.0 * h));
        }
    }
    Ok(report)
}

/// Checks parameter gradients of `build`'s scalar output, probing at most `limit` entries of
/// each parameter tensor.
pub fn check_params<F>(
    store: &ParamStore,
    build: F,
    h: f64,
    limit: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<(f64, u64, Graph, Var)> {
        let mut g = Graph::new();
        let out = build(&mut g, s)?;
        Ok((g.scalar(out), g.branch_signature(), g, out))
    };
    let (_, base_sig, mut g, out) = eval(store)?;
    g.backward(out)?;
    let mut analytic = store.clone();
    analytic.zero_grads();
    analytic.accumulate(&g, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    let mut probe = store.clone();
    for id in store.ids() {
        for k in coordinates(store.value(id).len(), limit, &mut rng) {
            let x0 = store.value(id).data()[k];
            probe.value_mut(id).data_mut()[k] = x0 + h;
            let (fp, sp, ..) = eval(&probe)?;
            probe.value_mut(id).data_mut()[k] = x0 - h;
            let (fm, sm, ..) = eval(&probe)?;
            probe.value_mut(id).data_mut()[k] = x0;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            report.record(analytic.grad(id)[k], (fp - fm) / (2.0 * h));
        }
    }
    Ok(report)
}

/// Finite-difference step used by the op suite.
pub const SUITE_STEP: f64 = 1e-5;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    use rand::Rng;
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

/// Reduces `y` to a scalar with fixed pseudo-random weights so every output entry matters.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let t = g.value(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = random_tensor(&mut rng, t.rows(), t.cols());
    let w = g.constant(w.reshape(g.value(y).shape())?);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type OpBuilder = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// Gradient check of every differentiable op on random inputs of the given size.
pub fn op_suite(
    rows: usize,
    cols: usize,
    seed: u64,
) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (rows.max(1), cols.max(1));
    let j = n.max(2);
    let mat = |rng: &mut ChaCha8Rng, r, c| random_tensor(rng, r, c);
    let rotation_rows = |rng: &mut ChaCha8Rng, r: usize| {
        use rand::Rng;
        let mut data = Vec::with_capacity(r * 9);
        for _ in 0..r {
            let axis = nalgebra::Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let rot = crate::linalg::axis_angle(&axis);
            for k in 0..9 {
                data.push(rot[(k / 3, k % 3)] + rng.random_range(-0.3..0.3));
            }
        }
        Tensor::matrix(r, 9, data)
    };

    let cases: Vec<(&'static str, Vec<Tensor>, OpBuilder)> = vec![
        (
            "matmul",
            vec![mat(&mut rng, m, n), mat(&mut rng, n, 3)],
            Box::new(|g, v| g.matmul(v[0], v[1], false)),
        ),
        (
            "matmul_bt",
            vec![mat(&mut rng, m, n), mat(&mut rng, 3, n)],
            Box::new(|g, v| g.matmul(v[0], v[1], true)),
        ),
        (
            "add_bias",
            vec![mat(&mut rng, m, n), mat(&mut rng, 1, n)],
            Box::new(|g, v| g.add_bias(v[0], v[1])),
        ),
        (
            "add",
            vec![mat(&mut rng, m, n), mat(&mut rng, m, n)],
            Box::new(|g, v| g.add(v[0], v[1])),
        ),
        (
            "sub",
            vec![mat(&mut rng, m, n), mat(&mut rng, m, n)],
            Box::new(|g, v| g.sub(v[0], v[1])),
        ),
        (
            "mul",
            vec![mat(&mut rng, m, n), mat(&mut rng, m, n)],
            Box::new(|g, v| g.mul(v[0], v[1])),
        ),
        (
            "scale",
            vec![mat(&mut rng, m, n)],
            Box::new(|g, v| Ok(g.scale(v[0], -1.7))),
        ),
        (
            "add_scalar",
            vec![mat(&mut rng, m, n)],
            Box::new(|g, v| Ok(g.add_scalar(v[0], 0.3))),
        ),
        (
            "sigmoid",
            vec![mat(&mut rng, m, n)],
            Box::new(|g, v| Ok(g.sigmoid(v[0]))),
        ),
        (
            "tanh",
            vec![mat(&mut rng, m, n)],
            Box::new(|g, v| Ok(g.tanh(v[0]))),
        ),
        (
            "relu",
            vec![mat(&mut rng, m, n)],
            Box::new(|g, v| Ok(g.relu(v[0]))),
        ),
        (
            "concat_cols",
            vec![mat(&mut rng, m, n), mat(&mut rng, m, 2)],
            Box::new(|g, v| g.concat_cols(&[v[0], v[1]])),
        ),
        (
            "concat_rows",
            vec![mat(&mut rng, m, n), mat(&mut rng, 2, n)],
            Box::new(|g, v| g.concat_rows(&[v[0], v[1]])),
        ),
        (
            "slice_rows",
            vec![mat(&mut rng, m + 2, n)],
            Box::new(move |g, v| g.slice_rows(v[0], 1, m)),
        ),
        (
            "slice_cols",
            vec![mat(&mut rng, m, n + 2)],
            Box::new(move |g, v| g.slice_cols(v[0], 1, n)),
        ),
        (
            "permute_cols",
            vec![mat(&mut rng, m, n + 1)],
            Box::new(move |g, v| {
                let perm: Vec<usize> = (0..=n).rev().collect();
                g.permute_cols(v[0], &perm)
            }),
        ),
        (
            "max_pool",
            vec![
                mat(&mut rng, m, n),
                mat(&mut rng, m, n),
                mat(&mut rng, m, n),
            ],
            Box::new(|g, v| g.max_pool(v)),
        ),
        (
            "mean_pool",
            vec![
                mat(&mut rng, m, n),
                mat(&mut rng, m, n),
                mat(&mut rng, m, n),
            ],
            Box::new(|g, v| g.mean_pool(v)),
        ),
        (
            "sum",
            vec![mat(&mut rng, m, n)],
            Box::new(|g, v| Ok(g.sum(v[0]))),
        ),
        (
            "mean",
            vec![mat(&mut rng, m, n)],
            Box::new(|g, v| Ok(g.mean(v[0]))),
        ),
        (
            "frobenius_norm",
            vec![mat(&mut rng, m, n)],
            Box::new(|g, v| Ok(g.frobenius_norm(v[0]))),
        ),
        (
            "group_norm",
            vec![mat(&mut rng, m, 3 * j)],
            Box::new(|g, v| g.group_norm(v[0], 3)),
        ),
        (
            "row_normalize",
            vec![mat(&mut rng, m, n + 1)],
            Box::new(|g, v| g.row_normalize(v[0])),
        ),
        (
            "center_root",
            vec![mat(&mut rng, m, 2 * j)],
            Box::new(|g, v| g.center_root(v[0], 2)),
        ),
        (
            "drop_last",
            vec![mat(&mut rng, m, 3 * j)],
            Box::new(|g, v| g.drop_last(v[0], 3)),
        ),
        (
            "rotate_joints",
            vec![mat(&mut rng, m, 3 * j), mat(&mut rng, m, 9)],
            Box::new(|g, v| g.rotate_joints(v[0], v[1])),
        ),
        (
            "rotate_joints_shared",
            vec![mat(&mut rng, m, 3 * j), mat(&mut rng, 1, 9)],
            Box::new(|g, v| g.rotate_joints(v[0], v[1])),
        ),
        (
            "polar_project",
            vec![rotation_rows(&mut rng, m)],
            Box::new(|g, v| g.polar_project(v[0])),
        ),
    ];
    let mut out = Vec::with_capacity(cases.len());
    for (k, (name, inputs, op)) in cases.into_iter().enumerate() {
        let s = seed.wrapping_add(k as u64);
        let report = check_inputs(
            &inputs,
            |g, v| {
                let y = op(g, v)?;
                if g.value(y).len() == 1 {
                    Ok(y)
                } else {
                    weighted_sum(g, y, s)
                }
            },
            SUITE_STEP,
            None,
            s,
        )?;
        out.push((name, report));
    }
    Ok(out)
}
