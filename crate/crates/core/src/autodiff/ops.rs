//! Op kinds with their shape rules, forward kernels and backward rules.

use std::str::FromStr;

use super::kernels::{self, axpy, dot, split_axis};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One linear-interpolation read: `w_lo * row[lo] + w_hi * row[hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpTap {
    pub lo: usize,
    pub hi: usize,
    pub w_lo: f64,
    pub w_hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul,
    Add,
    Sub,
    Mul,
    /// `[.., n] + [n]`, the bias broadcast over leading axes.
    AddBias,
    Scale(f64),
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Softplus,
    /// Sum of every element, shape `[1]`.
    Sum,
    SumAxis(usize),
    MeanAxis(usize),
    Concat(usize),
    Slice { axis: usize, start: usize, len: usize },
    Reshape(Vec<usize>),
    /// Rows of a 2-D input gathered by linear interpolation.
    GatherInterp(Vec<InterpTap>),
    /// `x[B,T,Cin] (*) w[K,Cin,Cout] -> [B,T,Cout]`, zero padding `K/2`.
    Conv1d,
    /// `x[B,T,C], gamma[C], beta[C]`; statistics per sample and channel group.
    GroupNorm { groups: usize, eps: f64 },
    /// Elementwise smooth-L1 between two tensors.
    SmoothL1 { beta: f64 },
}

impl FromStr for OpKind {
    type Err = Error;

    /// Parses the parameter-free op kinds by name.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "matmul" => OpKind::MatMul,
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "mul" => OpKind::Mul,
            "add_bias" => OpKind::AddBias,
            "relu" => OpKind::Relu,
            "sigmoid" => OpKind::Sigmoid,
            "tanh" => OpKind::Tanh,
            "exp" => OpKind::Exp,
            "log" => OpKind::Log,
            "softplus" => OpKind::Softplus,
            "sum" => OpKind::Sum,
            "conv1d" => OpKind::Conv1d,
            "smooth_l1" => OpKind::SmoothL1 { beta: 1.0 },
            other => return Err(Error::UnknownOp(other.to_string())),
        })
    }
}

/// Which buffers an op keeps for its backward rule.
pub(crate) struct Saves {
    pub inputs: &'static [usize],
    pub output: bool,
}

pub(crate) struct Forward {
    pub out: Tensor,
    pub aux: Vec<Vec<f64>>,
    pub flops: u64,
    /// Branch decisions of piecewise ops (for kink detection in grad checks).
    pub branches: Option<Vec<bool>>,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddBias => "add_bias",
            OpKind::Scale(_) => "scale",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Softplus => "softplus",
            OpKind::Sum => "sum",
            OpKind::SumAxis(_) => "sum_axis",
            OpKind::MeanAxis(_) => "mean_axis",
            OpKind::Concat(_) => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Reshape(_) => "reshape",
            OpKind::GatherInterp(_) => "gather_interp",
            OpKind::Conv1d => "conv1d",
            OpKind::GroupNorm { .. } => "group_norm",
            OpKind::SmoothL1 { .. } => "smooth_l1",
        }
    }

    pub(crate) fn saves(&self) -> Saves {
        match self {
            OpKind::MatMul | OpKind::Mul | OpKind::Conv1d | OpKind::SmoothL1 { .. } => {
                Saves { inputs: &[0, 1], output: false }
            }
            OpKind::Relu | OpKind::Sigmoid | OpKind::Tanh | OpKind::Exp => {
                Saves { inputs: &[], output: true }
            }
            OpKind::Log | OpKind::Softplus => Saves { inputs: &[0], output: false },
            OpKind::GroupNorm { .. } => Saves { inputs: &[1], output: false },
            _ => Saves { inputs: &[], output: false },
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::MatMul
            | OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::AddBias
            | OpKind::Conv1d
            | OpKind::SmoothL1 { .. } => Some(2),
            OpKind::GroupNorm { .. } => Some(3),
            OpKind::Concat(_) => None,
            _ => Some(1),
        }
    }

    fn mismatch(&self, inputs: &[&Tensor]) -> Error {
        Error::ShapeMismatch {
            op: self.name(),
            shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
        }
    }

    /// Validates input shapes and returns the output shape.
    pub(crate) fn output_shape(&self, inputs: &[&Tensor]) -> Result<Vec<usize>> {
        match self.arity() {
            Some(n) if inputs.len() != n => return Err(self.mismatch(inputs)),
            None if inputs.is_empty() => return Err(self.mismatch(inputs)),
            _ => {}
        }
        let bad = || self.mismatch(inputs);
        let s0 = inputs[0].shape();
        Ok(match self {
            OpKind::MatMul => {
                let s1 = inputs[1].shape();
                if s0.len() != 2 || s1.len() != 2 || s0[1] != s1[0] {
                    return Err(bad());
                }
                vec![s0[0], s1[1]]
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::SmoothL1 { .. } => {
                if s0 != inputs[1].shape() {
                    return Err(bad());
                }
                s0.to_vec()
            }
            OpKind::AddBias => {
                let s1 = inputs[1].shape();
                if s1.len() != 1 || s0.last() != Some(&s1[0]) {
                    return Err(bad());
                }
                s0.to_vec()
            }
            OpKind::Scale(_)
            | OpKind::Relu
            | OpKind::Sigmoid
            | OpKind::Tanh
            | OpKind::Exp
            | OpKind::Log
            | OpKind::Softplus => s0.to_vec(),
            OpKind::Sum => vec![1],
            OpKind::SumAxis(axis) | OpKind::MeanAxis(axis) => {
                if *axis >= s0.len() {
                    return Err(bad());
                }
                let mut s = s0.to_vec();
                s.remove(*axis);
                if s.is_empty() {
                    s.push(1);
                }
                s
            }
            OpKind::Concat(axis) => {
                if *axis >= s0.len() {
                    return Err(bad());
                }
                let mut total = 0;
                for t in inputs {
                    let s = t.shape();
                    if s.len() != s0.len()
                        || s.iter().zip(s0).enumerate().any(|(d, (a, b))| d != *axis && a != b)
                    {
                        return Err(bad());
                    }
                    total += s[*axis];
                }
                let mut s = s0.to_vec();
                s[*axis] = total;
                s
            }
            OpKind::Slice { axis, start, len } => {
                if *axis >= s0.len() || *len == 0 || start + len > s0[*axis] {
                    return Err(bad());
                }
                let mut s = s0.to_vec();
                s[*axis] = *len;
                s
            }
            OpKind::Reshape(shape) => {
                if shape.iter().product::<usize>() != inputs[0].numel()
                    || shape.iter().any(|&d| d == 0)
                {
                    return Err(bad());
                }
                shape.clone()
            }
            OpKind::GatherInterp(taps) => {
                if s0.len() != 2 || taps.is_empty() || taps.iter().any(|t| t.lo >= s0[0] || t.hi >= s0[0]) {
                    return Err(bad());
                }
                vec![taps.len(), s0[1]]
            }
            OpKind::Conv1d => {
                let w = inputs[1].shape();
                if s0.len() != 3 || w.len() != 3 || w[0] % 2 == 0 || w[1] != s0[2] {
                    return Err(bad());
                }
                vec![s0[0], s0[1], w[2]]
            }
            OpKind::GroupNorm { groups, .. } => {
                let (g, b) = (inputs[1].shape(), inputs[2].shape());
                if s0.len() != 3
                    || *groups == 0
                    || s0[2] % groups != 0
                    || g != [s0[2]]
                    || b != [s0[2]]
                {
                    return Err(bad());
                }
                s0.to_vec()
            }
        })
    }

    pub(crate) fn forward(&self, inputs: &[&Tensor], shape: Vec<usize>) -> Forward {
        let x = inputs[0].data();
        let numel = shape.iter().product::<usize>();
        let unary = |f: &dyn Fn(f64) -> f64| x.iter().map(|&v| f(v)).collect::<Vec<_>>();
        let mut aux = Vec::new();
        let mut branches = None;
        let (data, flops): (Vec<f64>, u64) = match self {
            OpKind::MatMul => {
                let (m, k) = (inputs[0].shape()[0], inputs[0].shape()[1]);
                let n = inputs[1].shape()[1];
                (kernels::matmul(x, inputs[1].data(), m, k, n), (2 * m * k * n) as u64)
            }
            OpKind::Add => (zip_with(x, inputs[1].data(), |a, b| a + b), numel as u64),
            OpKind::Sub => (zip_with(x, inputs[1].data(), |a, b| a - b), numel as u64),
            OpKind::Mul => (zip_with(x, inputs[1].data(), |a, b| a * b), numel as u64),
            OpKind::AddBias => {
                let b = inputs[1].data();
                let mut out = x.to_vec();
                for row in out.chunks_exact_mut(b.len()) {
                    for (o, v) in row.iter_mut().zip(b) {
                        *o += v;
                    }
                }
                (out, numel as u64)
            }
            OpKind::Scale(c) => (unary(&|v| v * c), numel as u64),
            OpKind::Relu => {
                branches = Some(x.iter().map(|&v| v > 0.0).collect());
                (unary(&|v| if v > 0.0 { v } else { 0.0 }), numel as u64)
            }
            OpKind::Sigmoid => (unary(&kernels::sigmoid), numel as u64),
            OpKind::Tanh => (unary(&f64::tanh), numel as u64),
            OpKind::Exp => (unary(&f64::exp), numel as u64),
            OpKind::Log => (unary(&f64::ln), numel as u64),
            OpKind::Softplus => (unary(&kernels::softplus), numel as u64),
            OpKind::Sum => (vec![x.iter().sum()], x.len() as u64),
            OpKind::SumAxis(axis) | OpKind::MeanAxis(axis) => {
                let (outer, len, inner) = split_axis(inputs[0].shape(), *axis);
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    let dst = &mut out[o * inner..(o + 1) * inner];
                    for a in 0..len {
                        let src = &x[(o * len + a) * inner..(o * len + a + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                if matches!(self, OpKind::MeanAxis(_)) {
                    let inv = 1.0 / len as f64;
                    out.iter_mut().for_each(|v| *v *= inv);
                }
                (out, x.len() as u64)
            }
            OpKind::Concat(axis) => {
                let (outer, _, inner) = split_axis(&shape, *axis);
                let mut out = Vec::with_capacity(numel);
                for o in 0..outer {
                    for t in inputs {
                        let w = t.shape()[*axis] * inner;
                        out.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
                    }
                }
                (out, 0)
            }
            OpKind::Slice { axis, start, len } => {
                let (outer, full, inner) = split_axis(inputs[0].shape(), *axis);
                let mut out = Vec::with_capacity(numel);
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    out.extend_from_slice(&x[base..base + len * inner]);
                }
                (out, 0)
            }
            OpKind::Reshape(_) => (x.to_vec(), 0),
            OpKind::GatherInterp(taps) => {
                let c = inputs[0].shape()[1];
                let mut out = vec![0.0; taps.len() * c];
                for (tap, dst) in taps.iter().zip(out.chunks_exact_mut(c)) {
                    let lo = &x[tap.lo * c..(tap.lo + 1) * c];
                    let hi = &x[tap.hi * c..(tap.hi + 1) * c];
                    for ((d, a), b) in dst.iter_mut().zip(lo).zip(hi) {
                        *d = tap.w_lo * a + tap.w_hi * b;
                    }
                }
                (out, (3 * taps.len() * c) as u64)
            }
            OpKind::Conv1d => {
                let (out, flops) = conv1d_forward(inputs[0], inputs[1]);
                (out, flops)
            }
            OpKind::GroupNorm { groups, eps } => {
                let (out, xhat, inv) =
                    group_norm_forward(inputs[0], inputs[1].data(), inputs[2].data(), *groups, *eps);
                aux.push(xhat);
                aux.push(inv);
                (out, 5 * numel as u64)
            }
            OpKind::SmoothL1 { beta } => {
                let b = inputs[1].data();
                branches = Some(x.iter().zip(b).map(|(p, q)| (p - q).abs() < *beta).collect());
                (zip_with(x, b, |p, q| smooth_l1(p - q, *beta)), 3 * numel as u64)
            }
        };
        Forward { out: Tensor::from_parts(shape, data), aux, flops, branches }
    }

    /// Gradients with respect to each input for which `need[i]` is set.
    pub(crate) fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        aux: &[Vec<f64>],
        dy: &[f64],
        need: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let x = inputs[0].data();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; inputs.len()];
        let elementwise = |f: &dyn Fn(usize) -> f64| (0..dy.len()).map(f).collect::<Vec<_>>();
        match self {
            OpKind::MatMul => {
                let (k, n) = (inputs[0].shape()[1], inputs[1].shape()[1]);
                if need[0] {
                    let mut da = vec![0.0; x.len()];
                    kernels::matmul_grad_a(dy, inputs[1].data(), &mut da, k, n);
                    grads[0] = Some(da);
                }
                if need[1] {
                    let mut db = vec![0.0; inputs[1].numel()];
                    kernels::matmul_grad_b(x, dy, &mut db, k, n);
                    grads[1] = Some(db);
                }
            }
            OpKind::Add => {
                grads[0] = need[0].then(|| dy.to_vec());
                grads[1] = need[1].then(|| dy.to_vec());
            }
            OpKind::Sub => {
                grads[0] = need[0].then(|| dy.to_vec());
                grads[1] = need[1].then(|| dy.iter().map(|g| -g).collect());
            }
            OpKind::Mul => {
                let b = inputs[1].data();
                grads[0] = need[0].then(|| elementwise(&|i| dy[i] * b[i]));
                grads[1] = need[1].then(|| elementwise(&|i| dy[i] * x[i]));
            }
            OpKind::AddBias => {
                grads[0] = need[0].then(|| dy.to_vec());
                if need[1] {
                    let n = inputs[1].numel();
                    let mut db = vec![0.0; n];
                    for row in dy.chunks_exact(n) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    grads[1] = Some(db);
                }
            }
            OpKind::Scale(c) => grads[0] = Some(dy.iter().map(|g| g * c).collect()),
            OpKind::Relu => {
                let y = output.data();
                grads[0] = Some(elementwise(&|i| if y[i] > 0.0 { dy[i] } else { 0.0 }));
            }
            OpKind::Sigmoid => {
                let y = output.data();
                grads[0] = Some(elementwise(&|i| dy[i] * y[i] * (1.0 - y[i])));
            }
            OpKind::Tanh => {
                let y = output.data();
                grads[0] = Some(elementwise(&|i| dy[i] * (1.0 - y[i] * y[i])));
            }
            OpKind::Exp => {
                let y = output.data();
                grads[0] = Some(elementwise(&|i| dy[i] * y[i]));
            }
            OpKind::Log => grads[0] = Some(elementwise(&|i| dy[i] / x[i])),
            OpKind::Softplus => {
                grads[0] = Some(elementwise(&|i| dy[i] * kernels::sigmoid(x[i])));
            }
            OpKind::Sum => grads[0] = Some(vec![dy[0]; x.len()]),
            OpKind::SumAxis(axis) | OpKind::MeanAxis(axis) => {
                let (outer, len, inner) = split_axis(inputs[0].shape(), *axis);
                let scale = if matches!(self, OpKind::MeanAxis(_)) { 1.0 / len as f64 } else { 1.0 };
                let mut dx = vec![0.0; x.len()];
                for o in 0..outer {
                    let src = &dy[o * inner..(o + 1) * inner];
                    for a in 0..len {
                        let dst = &mut dx[(o * len + a) * inner..(o * len + a + 1) * inner];
                        for (d, g) in dst.iter_mut().zip(src) {
                            *d = g * scale;
                        }
                    }
                }
                grads[0] = Some(dx);
            }
            OpKind::Concat(axis) => {
                let (outer, total, inner) = split_axis(output.shape(), *axis);
                let mut offset = 0;
                for (i, t) in inputs.iter().enumerate() {
                    let w = t.shape()[*axis] * inner;
                    if need[i] {
                        let mut g = Vec::with_capacity(t.numel());
                        for o in 0..outer {
                            let base = o * total * inner + offset;
                            g.extend_from_slice(&dy[base..base + w]);
                        }
                        grads[i] = Some(g);
                    }
                    offset += w;
                }
            }
            OpKind::Slice { axis, start, len } => {
                let (outer, full, inner) = split_axis(inputs[0].shape(), *axis);
                let mut dx = vec![0.0; x.len()];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    dx[base..base + len * inner]
                        .copy_from_slice(&dy[o * len * inner..(o + 1) * len * inner]);
                }
                grads[0] = Some(dx);
            }
            OpKind::Reshape(_) => grads[0] = Some(dy.to_vec()),
            OpKind::GatherInterp(taps) => {
                let c = inputs[0].shape()[1];
                let mut dx = vec![0.0; x.len()];
                for (tap, g) in taps.iter().zip(dy.chunks_exact(c)) {
                    axpy(tap.w_lo, g, &mut dx[tap.lo * c..(tap.lo + 1) * c]);
                    axpy(tap.w_hi, g, &mut dx[tap.hi * c..(tap.hi + 1) * c]);
                }
                grads[0] = Some(dx);
            }
            OpKind::Conv1d => {
                let (dx, dw) = conv1d_backward(inputs[0], inputs[1], dy, need[0], need[1]);
                grads[0] = dx;
                grads[1] = dw;
            }
            OpKind::GroupNorm { groups, .. } => {
                let (dx, dg, db) =
                    group_norm_backward(inputs[0].shape(), inputs[1].data(), aux, dy, *groups);
                grads[0] = need[0].then_some(dx);
                grads[1] = need[1].then_some(dg);
                grads[2] = need[2].then_some(db);
            }
            OpKind::SmoothL1 { beta } => {
                let b = inputs[1].data();
                let d: Vec<f64> = elementwise(&|i| dy[i] * smooth_l1_grad(x[i] - b[i], *beta));
                grads[1] = need[1].then(|| d.iter().map(|g| -g).collect());
                grads[0] = need[0].then_some(d);
            }
        }
        grads
    }
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub fn smooth_l1(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        0.5 * d * d / beta
    } else {
        d.abs() - 0.5 * beta
    }
}

fn smooth_l1_grad(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        d / beta
    } else {
        d.signum()
    }
}

fn conv1d_forward(x: &Tensor, w: &Tensor) -> (Vec<f64>, u64) {
    let (b, t, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (k, cout) = (w.shape()[0], w.shape()[2]);
    let pad = k / 2;
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; b * t * cout];
    for bi in 0..b {
        for ti in 0..t {
            let dst = &mut out[(bi * t + ti) * cout..(bi * t + ti + 1) * cout];
            for ki in 0..k {
                let src_t = ti + ki;
                if src_t < pad || src_t - pad >= t {
                    continue;
                }
                let row = &xd[(bi * t + src_t - pad) * cin..(bi * t + src_t - pad + 1) * cin];
                for (ci, &xv) in row.iter().enumerate() {
                    if xv != 0.0 {
                        let wrow = &wd[(ki * cin + ci) * cout..(ki * cin + ci + 1) * cout];
                        axpy(xv, wrow, dst);
                    }
                }
            }
        }
    }
    (out, (2 * b * t * k * cin * cout) as u64)
}

fn conv1d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &[f64],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (b, t, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (k, cout) = (w.shape()[0], w.shape()[2]);
    let pad = k / 2;
    let (xd, wd) = (x.data(), w.data());
    let mut dx = need_x.then(|| vec![0.0; xd.len()]);
    let mut dw = need_w.then(|| vec![0.0; wd.len()]);
    for bi in 0..b {
        for ti in 0..t {
            let g = &dy[(bi * t + ti) * cout..(bi * t + ti + 1) * cout];
            for ki in 0..k {
                let src_t = ti + ki;
                if src_t < pad || src_t - pad >= t {
                    continue;
                }
                let xoff = (bi * t + src_t - pad) * cin;
                for ci in 0..cin {
                    let woff = (ki * cin + ci) * cout;
                    if let Some(dx) = dx.as_mut() {
                        dx[xoff + ci] += dot(g, &wd[woff..woff + cout]);
                    }
                    if let Some(dw) = dw.as_mut() {
                        let xv = xd[xoff + ci];
                        if xv != 0.0 {
                            axpy(xv, g, &mut dw[woff..woff + cout]);
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}

fn group_norm_forward(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    groups: usize,
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (b, t, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let cg = c / groups;
    let count = (t * cg) as f64;
    let xd = x.data();
    let mut xhat = vec![0.0; xd.len()];
    let mut inv = vec![0.0; b * groups];
    for bi in 0..b {
        for g in 0..groups {
            let idx = |ti: usize, j: usize| (bi * t + ti) * c + g * cg + j;
            let mut mean = 0.0;
            for ti in 0..t {
                for j in 0..cg {
                    mean += xd[idx(ti, j)];
                }
            }
            mean /= count;
            let mut var = 0.0;
            for ti in 0..t {
                for j in 0..cg {
                    let d = xd[idx(ti, j)] - mean;
                    var += d * d;
                }
            }
            var /= count;
            let s = 1.0 / (var + eps).sqrt();
            inv[bi * groups + g] = s;
            for ti in 0..t {
                for j in 0..cg {
                    xhat[idx(ti, j)] = (xd[idx(ti, j)] - mean) * s;
                }
            }
        }
    }
    let out = xhat
        .chunks_exact(c)
        .flat_map(|row| row.iter().zip(gamma).zip(beta).map(|((v, g), bb)| v * g + bb))
        .collect();
    (out, xhat, inv)
}

fn group_norm_backward(
    shape: &[usize],
    gamma: &[f64],
    aux: &[Vec<f64>],
    dy: &[f64],
    groups: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (b, t, c) = (shape[0], shape[1], shape[2]);
    let cg = c / groups;
    let count = (t * cg) as f64;
    let (xhat, inv) = (&aux[0], &aux[1]);
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (row_dy, row_xh) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for ch in 0..c {
            dgamma[ch] += row_dy[ch] * row_xh[ch];
            dbeta[ch] += row_dy[ch];
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for bi in 0..b {
        for g in 0..groups {
            let idx = |ti: usize, j: usize| (bi * t + ti) * c + g * cg + j;
            let (mut sum_d, mut sum_dx) = (0.0, 0.0);
            for ti in 0..t {
                for j in 0..cg {
                    let i = idx(ti, j);
                    let dxh = dy[i] * gamma[g * cg + j];
                    sum_d += dxh;
                    sum_dx += dxh * xhat[i];
                }
            }
            let s = inv[bi * groups + g];
            for ti in 0..t {
                for j in 0..cg {
                    let i = idx(ti, j);
                    let dxh = dy[i] * gamma[g * cg + j];
                    dx[i] = s / count * (count * dxh - sum_d - xhat[i] * sum_dx);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}
