//! Reverse-mode differentiation tape. Every op checks shapes when it is recorded, so
//! `backward` cannot fail.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use nalgebra::Matrix3;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Input,
    Param,
    MatMul { a: Var, b: Var, b_t: bool },
    AddBias { a: Var, bias: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    PermuteCols { a: Var, perm: Vec<usize> },
    MaxPool { inputs: Vec<Var>, argmax: Vec<u32> },
    MeanPool(Vec<Var>),
    Sum(Var),
    Mean(Var),
    FrobeniusNorm(Var),
    GroupNorm { a: Var, k: usize },
    RowNormalize(Var),
    CenterRoot { a: Var, k: usize },
    DropLast { a: Var, k: usize },
    RotateJoints { x: Var, r: Var },
    PolarProject { a: Var, aux: Vec<f64> },
}

const POLAR_AUX: usize = 12;

#[derive(Default)]
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    needs_grad: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<(u64, ParamId), Var>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.ops.push(op);
        self.values.push(value);
        self.needs_grad.push(needs_grad);
        self.grads.push(None);
        Var(self.ops.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.needs_grad[v.0])
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0].item()
    }

    /// Gradient of the last `backward` loss with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// A node that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t, false)
    }

    /// A leaf whose gradient is kept.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t, true)
    }

    /// The node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&(store.uid(), id)) {
            return *v;
        }
        let v = self.push(Op::Param, store.value(id).clone(), true);
        self.params.insert((store.uid(), id), v);
        v
    }

    /// Gradients after `backward` of the parameters drawn from `store`, sorted by id.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<(ParamId, &[f64])> {
        let mut out: Vec<(ParamId, &[f64])> = self
            .params
            .iter()
            .filter(|((uid, _), _)| *uid == store.uid())
            .filter_map(|((_, id), v)| self.grads[v.0].as_deref().map(|g| (*id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.values[v.0];
        (t.rows(), t.cols())
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.values[a.0].len() != self.values[b.0].len() || self.dims(a) != self.dims(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.values[a.0].shape(),
                self.values[b.0].shape()
            )));
        }
        Ok(())
    }

    /// `a @ b`, or `a @ b^T` when `b_t`.
    pub fn matmul(&mut self, a: Var, b: Var, b_t: bool) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (kb, n) = if b_t { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::shape(format!(
                "matmul inner dimensions {k} and {kb}"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.values[a.0].data(),
            false,
            self.values[b.0].data(),
            b_t,
            &mut out,
            false,
        );
        let ng = self.ng(&[a, b]);
        Ok(self.push(Op::MatMul { a, b, b_t }, Tensor::matrix(m, n, out), ng))
    }

    /// Adds a `[cols]` (or `[1, cols]`) bias to every row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.values[bias.0].len() != n {
            return Err(Error::shape(format!(
                "bias of length {} for {n} columns",
                self.values[bias.0].len()
            )));
        }
        let b = self.values[bias.0].data();
        let mut out = self.values[a.0].data().to_vec();
        for row in out.chunks_mut(n.max(1)) {
            row.iter_mut().zip(b).for_each(|(o, b)| *o += b);
        }
        let ng = self.ng(&[a, bias]);
        Ok(self.push(Op::AddBias { a, bias }, Tensor::matrix(m, n, out), ng))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool)> {
        self.same_shape(a, b, what)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor::new(self.values[a.0].shape(), data)?;
        Ok((t, self.ng(&[a, b])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ng) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), t, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ng) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), t, ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ng) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), t, ng))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = &self.values[a.0];
        let t = Tensor::new(src.shape(), src.data().iter().map(|x| f(*x)).collect())
            .expect("same shape");
        let ng = self.needs_grad[a.0];
        self.push(op, t, ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        let m = self.dims(*first).0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = self.dims(*p);
            if r != m {
                return Err(Error::shape(format!("concat_cols rows {r} vs {m}")));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.values[p.0].data()[r * w..(r + 1) * w]);
            }
        }
        let ng = self.ng(parts);
        Ok(self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::matrix(m, n, out),
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        let n = self.dims(*first).1;
        let mut out = Vec::new();
        let mut m = 0;
        for p in parts {
            let (r, c) = self.dims(*p);
            if c != n {
                return Err(Error::shape(format!("concat_rows cols {c} vs {n}")));
            }
            out.extend_from_slice(self.values[p.0].data());
            m += r;
        }
        let ng = self.ng(parts);
        Ok(self.push(
            Op::ConcatRows(parts.to_vec()),
            Tensor::matrix(m, n, out),
            ng,
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start + count > m {
            return Err(Error::shape(format!(
                "rows {start}..{} of {m}",
                start + count
            )));
        }
        let out = self.values[a.0].data()[start * n..(start + count) * n].to_vec();
        let ng = self.needs_grad[a.0];
        Ok(self.push(
            Op::SliceRows { a, start },
            Tensor::matrix(count, n, out),
            ng,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start + count > n {
            return Err(Error::shape(format!(
                "cols {start}..{} of {n}",
                start + count
            )));
        }
        let src = self.values[a.0].data();
        let out = (0..m)
            .flat_map(|r| src[r * n + start..r * n + start + count].iter().copied())
            .collect();
        let ng = self.needs_grad[a.0];
        Ok(self.push(
            Op::SliceCols { a, start },
            Tensor::matrix(m, count, out),
            ng,
        ))
    }

    /// `out[:, k] = a[:, perm[k]]`; `perm` must be a permutation of the columns.
    pub fn permute_cols(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(a);
        let mut seen = vec![false; n];
        if perm.len() != n
            || !perm
                .iter()
                .all(|&p| p < n && !std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::shape(format!(
                "{perm:?} is not a permutation of {n} columns"
            )));
        }
        let src = self.values[a.0].data();
        let out = (0..m)
            .flat_map(|r| perm.iter().map(move |&p| src[r * n + p]))
            .collect();
        let ng = self.needs_grad[a.0];
        Ok(self.push(
            Op::PermuteCols {
                a,
                perm: perm.to_vec(),
            },
            Tensor::matrix(m, n, out),
            ng,
        ))
    }

    fn check_same(&self, inputs: &[Var], what: &str) -> Result<()> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape(format!("{what} over an empty sequence")))?;
        for v in inputs {
            self.same_shape(*first, *v, what)?;
        }
        Ok(())
    }

    /// Elementwise maximum over a sequence of equally shaped nodes; ties go to the first.
    pub fn max_pool(&mut self, inputs: &[Var]) -> Result<Var> {
        self.check_same(inputs, "max_pool")?;
        let shape = self.values[inputs[0].0].shape().to_vec();
        let mut out = self.values[inputs[0].0].data().to_vec();
        let mut argmax = vec![0u32; out.len()];
        for (t, v) in inputs.iter().enumerate().skip(1) {
            for ((o, a), x) in out
                .iter_mut()
                .zip(argmax.iter_mut())
                .zip(self.values[v.0].data())
            {
                if *x > *o {
                    *o = *x;
                    *a = t as u32;
                }
            }
        }
        let ng = self.ng(inputs);
        Ok(self.push(
            Op::MaxPool {
                inputs: inputs.to_vec(),
                argmax,
            },
            Tensor::new(&shape, out)?,
            ng,
        ))
    }

    pub fn mean_pool(&mut self, inputs: &[Var]) -> Result<Var> {
        self.check_same(inputs, "mean_pool")?;
        let shape = self.values[inputs[0].0].shape().to_vec();
        let mut out = vec![0.0; self.values[inputs[0].0].len()];
        for v in inputs {
            out.iter_mut()
                .zip(self.values[v.0].data())
                .for_each(|(o, x)| *o += x);
        }
        let inv = 1.0 / inputs.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let ng = self.ng(inputs);
        Ok(self.push(Op::MeanPool(inputs.to_vec()), Tensor::new(&shape, out)?, ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.values[a.0].data().iter().sum();
        let ng = self.needs_grad[a.0];
        self.push(Op::Sum(a), Tensor::scalar(s), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.values[a.0];
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let ng = self.needs_grad[a.0];
        self.push(Op::Mean(a), Tensor::scalar(s), ng)
    }

    pub fn frobenius_norm(&mut self, a: Var) -> Var {
        let s = self.values[a.0]
            .data()
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let ng = self.needs_grad[a.0];
        self.push(Op::FrobeniusNorm(a), Tensor::scalar(s), ng)
    }

    /// Euclidean norm of each consecutive group of `k` columns: `[B, k*J] -> [B, J]`.
    pub fn group_norm(&mut self, a: Var, k: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if k == 0 || n % k != 0 {
            return Err(Error::shape(format!("{n} columns are not groups of {k}")));
        }
        let out = self.values[a.0]
            .data()
            .chunks(k)
            .map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let ng = self.needs_grad[a.0];
        Ok(self.push(Op::GroupNorm { a, k }, Tensor::matrix(m, n / k, out), ng))
    }

    /// Divides each row by its Euclidean norm.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let mut out = self.values[a.0].data().to_vec();
        for row in out.chunks_mut(n.max(1)) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::ZeroExtent("row has zero norm"));
            }
            row.iter_mut().for_each(|x| *x /= norm);
        }
        let ng = self.needs_grad[a.0];
        Ok(self.push(Op::RowNormalize(a), Tensor::matrix(m, n, out), ng))
    }

    /// Subtracts the first `k`-group (the root joint) from every group of each row.
    pub fn center_root(&mut self, a: Var, k: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if k == 0 || n % k != 0 {
            return Err(Error::shape(format!("{n} columns are not groups of {k}")));
        }
        let mut out = self.values[a.0].data().to_vec();
        for row in out.chunks_mut(n) {
            let root: Vec<f64> = row[..k].to_vec();
            for g in row.chunks_mut(k) {
                g.iter_mut().zip(&root).for_each(|(x, r)| *x -= r);
            }
        }
        let ng = self.needs_grad[a.0];
        Ok(self.push(Op::CenterRoot { a, k }, Tensor::matrix(m, n, out), ng))
    }

    /// Drops the last coordinate of every `k`-group: `[B, k*J] -> [B, (k-1)*J]`.
    pub fn drop_last(&mut self, a: Var, k: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if k < 2 || n % k != 0 {
            return Err(Error::shape(format!("{n} columns are not groups of {k}")));
        }
        let out: Vec<f64> = self.values[a.0]
            .data()
            .chunks(k)
            .flat_map(|g| g[..k - 1].iter().copied())
            .collect();
        let ng = self.needs_grad[a.0];
        Ok(self.push(
            Op::DropLast { a, k },
            Tensor::matrix(m, n / k * (k - 1), out),
            ng,
        ))
    }

    /// Rotates every joint of each row of `x: [B, 3J]` by the row-major 3x3 matrix in the matching
    /// row of `r: [B, 9]`, or by the single row of `r: [1, 9]`.
    pub fn rotate_joints(&mut self, x: Var, r: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        let (rm, rn) = self.dims(r);
        if n % 3 != 0 || rn != 9 || (rm != m && rm != 1) {
            return Err(Error::shape(format!(
                "rotate_joints of [{m}, {n}] by [{rm}, {rn}]"
            )));
        }
        let xs = self.values[x.0].data();
        let rs = self.values[r.0].data();
        let mut out = vec![0.0; m * n];
        for b in 0..m {
            let rot = &rs[if rm == 1 { 0 } else { b * 9 }..][..9];
            for j in 0..n / 3 {
                let p = &xs[b * n + 3 * j..][..3];
                for k in 0..3 {
                    out[b * n + 3 * j + k] =
                        rot[3 * k] * p[0] + rot[3 * k + 1] * p[1] + rot[3 * k + 2] * p[2];
                }
            }
        }
        let ng = self.ng(&[x, r]);
        Ok(self.push(Op::RotateJoints { x, r }, Tensor::matrix(m, n, out), ng))
    }

    /// Nearest rotation (in Frobenius norm) to each row-major 3x3 row of `a: [B, 9]`.
    pub fn polar_project(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if n != 9 {
            return Err(Error::shape(format!(
                "polar_project needs 9 columns, got {n}"
            )));
        }
        let mut out = Vec::with_capacity(m * 9);
        let mut aux = Vec::with_capacity(m * POLAR_AUX);
        for row in self.values[a.0].data().chunks(9) {
            let mat = Matrix3::from_row_slice(row);
            let svd = mat.svd(true, true);
            let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
            let det = (u * v_t).determinant().signum();
            let d = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, det));
            let r = u * d * v_t;
            let v = v_t.transpose();
            for i in 0..3 {
                for j in 0..3 {
                    out.push(r[(i, j)]);
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    aux.push(v[(i, j)]);
                }
            }
            let s = svd.singular_values;
            aux.extend_from_slice(&[s[0], s[1], det * s[2]]);
        }
        let ng = self.needs_grad[a.0];
        Ok(self.push(Op::PolarProject { a, aux }, Tensor::matrix(m, 9, out), ng))
    }

    /// Hash of every discrete branch taken (relu signs, pooling winners, zero norms); finite
    /// difference checks compare it to detect kinks between the probe points.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, op) in self.ops.iter().enumerate() {
            match op {
                Op::Relu(a) => self.values[a.0]
                    .data()
                    .iter()
                    .for_each(|x| (*x > 0.0).hash(&mut h)),
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                Op::GroupNorm { .. } => self.values[i]
                    .data()
                    .iter()
                    .for_each(|x| (*x > 0.0).hash(&mut h)),
                _ => {}
            }
        }
        h.finish()
    }

    /// Back-propagates from the scalar `loss`. Gradients from an earlier call are cleared.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.values[loss.0].len() != 1 {
            return Err(Error::shape(format!(
                "loss must be scalar, got {:?}",
                self.values[loss.0].shape()
            )));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.needs_grad[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        if !self.needs_grad[v.0] {
            return None;
        }
        let n = self.values[v.0].len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn acc_with(&mut self, v: Var, f: impl Fn(usize) -> f64) {
        if let Some(gv) = self.acc(v) {
            gv.iter_mut().enumerate().for_each(|(k, x)| *x += f(k));
        }
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        let op = std::mem::replace(&mut self.ops[i], Op::Constant);
        match &op {
            Op::Constant | Op::Input | Op::Param => {}
            Op::MatMul { a, b, b_t } => {
                let (m, k) = self.dims(*a);
                let n = self.values[i].cols();
                if self.needs_grad[a.0] {
                    let bv = self.values[b.0].data().to_vec();
                    let ga = self.acc(*a).unwrap();
                    // dA = G op(B)^T
                    gemm(m, n, k, g, false, &bv, !*b_t, ga, true);
                }
                if self.needs_grad[b.0] {
                    let av = self.values[a.0].data().to_vec();
                    let gb = self.acc(*b).unwrap();
                    if *b_t {
                        gemm(n, m, k, g, true, &av, false, gb, true);
                    } else {
                        gemm(k, m, n, &av, true, g, false, gb, true);
                    }
                }
            }
            Op::AddBias { a, bias } => {
                self.acc_with(*a, |k| g[k]);
                let n = self.values[i].cols().max(1);
                if let Some(gb) = self.acc(*bias) {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc_with(*a, |k| g[k]);
                self.acc_with(*b, |k| g[k]);
            }
            Op::Sub(a, b) => {
                self.acc_with(*a, |k| g[k]);
                self.acc_with(*b, |k| -g[k]);
            }
            Op::Mul(a, b) => {
                if self.needs_grad[a.0] {
                    let bv = self.values[b.0].data().to_vec();
                    self.acc_with(*a, |k| g[k] * bv[k]);
                }
                if self.needs_grad[b.0] {
                    let av = self.values[a.0].data().to_vec();
                    self.acc_with(*b, |k| g[k] * av[k]);
                }
            }
            Op::Scale(a, s) => self.acc_with(*a, |k| g[k] * s),
            Op::AddScalar(a) => self.acc_with(*a, |k| g[k]),
            Op::Sigmoid(a) => {
                let y = self.values[i].data().to_vec();
                self.acc_with(*a, |k| g[k] * y[k] * (1.0 - y[k]));
            }
            Op::Tanh(a) => {
                let y = self.values[i].data().to_vec();
                self.acc_with(*a, |k| g[k] * (1.0 - y[k] * y[k]));
            }
            Op::Relu(a) => {
                let x = self.values[a.0].data().to_vec();
                self.acc_with(*a, |k| if x[k] > 0.0 { g[k] } else { 0.0 });
            }
            Op::ConcatCols(parts) => {
                let m = self.values[i].rows();
                let n = self.values[i].cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.values[p.0].cols();
                    self.acc_with(*p, |k| g[(k / w) * n + offset + k % w]);
                    offset += w;
                }
                debug_assert!(m == 0 || offset == n);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.values[p.0].len();
                    self.acc_with(*p, |k| g[offset + k]);
                    offset += len;
                }
            }
            Op::SliceRows { a, start } => {
                let n = self.values[i].cols();
                let len = g.len();
                if let Some(ga) = self.acc(*a) {
                    ga[start * n..start * n + len]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(x, y)| *x += y);
                }
            }
            Op::SliceCols { a, start } => {
                let w = self.values[i].cols();
                let n = self.values[a.0].cols();
                if let Some(ga) = self.acc(*a) {
                    for (r, row) in g.chunks(w.max(1)).enumerate() {
                        ga[r * n + start..r * n + start + w]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::PermuteCols { a, perm } => {
                let n = perm.len();
                if let Some(ga) = self.acc(*a) {
                    for (r, row) in g.chunks(n.max(1)).enumerate() {
                        for (k, &p) in perm.iter().enumerate() {
                            ga[r * n + p] += row[k];
                        }
                    }
                }
            }
            Op::MaxPool { inputs, argmax } => {
                for (t, v) in inputs.iter().enumerate() {
                    self.acc_with(*v, |k| if argmax[k] as usize == t { g[k] } else { 0.0 });
                }
            }
            Op::MeanPool(inputs) => {
                let inv = 1.0 / inputs.len() as f64;
                for v in inputs {
                    self.acc_with(*v, |k| g[k] * inv);
                }
            }
            Op::Sum(a) => self.acc_with(*a, |_| g[0]),
            Op::Mean(a) => {
                let inv = 1.0 / self.values[a.0].len().max(1) as f64;
                self.acc_with(*a, |_| g[0] * inv);
            }
            Op::FrobeniusNorm(a) => {
                let norm = self.values[i].item();
                let x = self.values[a.0].data().to_vec();
                self.acc_with(*a, |k| if norm > 0.0 { g[0] * x[k] / norm } else { 0.0 });
            }
            Op::GroupNorm { a, k } => {
                let norms = self.values[i].data().to_vec();
                let x = self.values[a.0].data().to_vec();
                let k = *k;
                self.acc_with(*a, |idx| {
                    let gi = idx / k;
                    if norms[gi] > 0.0 {
                        g[gi] * x[idx] / norms[gi]
                    } else {
                        0.0
                    }
                });
            }
            Op::RowNormalize(a) => {
                let y = self.values[i].data().to_vec();
                let x = self.values[a.0].data().to_vec();
                let n = self.values[i].cols().max(1);
                let mut dx = vec![0.0; y.len()];
                for r in 0..y.len() / n {
                    let ys = &y[r * n..(r + 1) * n];
                    let gs = &g[r * n..(r + 1) * n];
                    let norm = x[r * n..(r + 1) * n]
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt();
                    let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        dx[r * n + c] = (gs[c] - ys[c] * dot) / norm;
                    }
                }
                self.acc_with(*a, |k| dx[k]);
            }
            Op::CenterRoot { a, k } => {
                let n = self.values[i].cols();
                let k = *k;
                if let Some(ga) = self.acc(*a) {
                    for (row_g, row_out) in g.chunks(n).zip(ga.chunks_mut(n)) {
                        row_out.iter_mut().zip(row_g).for_each(|(o, gv)| *o += gv);
                        for c in 0..k {
                            let s: f64 = row_g.iter().skip(c).step_by(k).sum();
                            row_out[c] -= s;
                        }
                    }
                }
            }
            Op::DropLast { a, k } => {
                let k = *k;
                self.acc_with(*a, |idx| {
                    let (grp, c) = (idx / k, idx % k);
                    if c < k - 1 {
                        g[grp * (k - 1) + c]
                    } else {
                        0.0
                    }
                });
            }
            Op::RotateJoints { x, r } => {
                let (m, n) = self.dims(*x);
                let rm = self.values[r.0].rows();
                if self.needs_grad[x.0] {
                    let rs = self.values[r.0].data().to_vec();
                    let gx = self.acc(*x).unwrap();
                    for b in 0..m {
                        let rot = &rs[if rm == 1 { 0 } else { b * 9 }..][..9];
                        for j in 0..n / 3 {
                            let gj = &g[b * n + 3 * j..][..3];
                            for l in 0..3 {
                                gx[b * n + 3 * j + l] +=
                                    rot[l] * gj[0] + rot[3 + l] * gj[1] + rot[6 + l] * gj[2];
                            }
                        }
                    }
                }
                if self.needs_grad[r.0] {
                    let xs = self.values[x.0].data().to_vec();
                    let gr = self.acc(*r).unwrap();
                    for b in 0..m {
                        let base = if rm == 1 { 0 } else { b * 9 };
                        for j in 0..n / 3 {
                            for k in 0..3 {
                                let gk = g[b * n + 3 * j + k];
                                for l in 0..3 {
                                    gr[base + 3 * k + l] += gk * xs[b * n + 3 * j + l];
                                }
                            }
                        }
                    }
                }
            }
            Op::PolarProject { a, aux } => {
                let rs = self.values[i].data().to_vec();
                let mut dm = vec![0.0; rs.len()];
                for (b, (rrow, grow)) in rs.chunks(9).zip(g.chunks(9)).enumerate() {
                    let r = Matrix3::from_row_slice(rrow);
                    let gm = Matrix3::from_row_slice(grow);
                    let ax = &aux[b * POLAR_AUX..(b + 1) * POLAR_AUX];
                    let v = Matrix3::from_row_slice(&ax[..9]);
                    let lam = &ax[9..];
                    let a_m = v.transpose() * r.transpose() * gm * v;
                    let mut c = Matrix3::zeros();
                    for p in 0..3 {
                        for q in 0..3 {
                            let s = lam[p] + lam[q];
                            if p != q && s.abs() > 1e-12 {
                                c[(p, q)] = a_m[(p, q)] / s;
                            }
                        }
                    }
                    let d = r * v * (c - c.transpose()) * v.transpose();
                    for p in 0..3 {
                        for q in 0..3 {
                            dm[b * 9 + 3 * p + q] = d[(p, q)];
                        }
                    }
                }
                self.acc_with(*a, |k| dm[k]);
            }
        }
        self.ops[i] = op;
    }
}
