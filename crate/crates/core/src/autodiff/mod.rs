//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] owns every value produced during a forward pass. In
//! [`Mode::Train`] each op whose inputs depend on a gradient-requiring leaf is
//! appended to the tape together with the buffers its backward rule reads;
//! those buffers are what the memory accountant counts. In [`Mode::Eval`]
//! nothing is recorded and nothing is retained.
//!
//! Backward walks the tape in reverse creation order, so the traversal (and
//! every floating-point reduction in it) is fully deterministic.

mod gradcheck;
pub mod kernels;
mod ops;
mod profile;

use std::sync::atomic::{AtomicU64, Ordering};

pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{smooth_l1, InterpTap, OpKind};
pub use profile::{FlopLedger, MemoryReport};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use profile::Profiler;

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a value stored in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    id: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NodeKind {
    Constant,
    Input,
    Param,
    Op,
}

struct Node {
    value: Tensor,
    kind: NodeKind,
    requires_grad: bool,
    /// Depends on a gradient-requiring leaf through recorded ops.
    needs_grad: bool,
    recorded: bool,
    retained: bool,
    grad: Option<Tensor>,
}

struct TapeNode {
    op: OpKind,
    inputs: Vec<usize>,
    output: usize,
    aux: Vec<Vec<f64>>,
    flops: u64,
    phase: String,
}

pub struct Graph {
    id: u64,
    mode: Mode,
    nodes: Vec<Node>,
    tape: Vec<TapeNode>,
    profiler: Profiler,
    branch_trace: Option<Vec<bool>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new(Mode::Train)
    }
}

impl Graph {
    pub fn new(mode: Mode) -> Self {
        Self {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            mode,
            nodes: Vec::new(),
            tape: Vec::new(),
            profiler: Profiler::default(),
            branch_trace: None,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn tape_len(&self) -> usize {
        self.tape.len()
    }

    /// Drops every node and the tape. Handles issued before the call become
    /// invalid; the memory peaks and FLOP ledger survive.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.tape.clear();
        self.profiler.release_all();
        self.id = NEXT_GRAPH.fetch_add(1, Ordering::Relaxed);
    }

    /// Resets phase peaks and FLOP counters.
    pub fn reset_profile(&mut self) {
        self.profiler.reset_counters();
    }

    pub fn begin_phase(&mut self, label: &str) {
        self.profiler.begin_phase(label);
    }

    pub fn phase(&self) -> &str {
        self.profiler.phase()
    }

    pub fn snapshot_memory(&self) -> MemoryReport {
        self.profiler.report()
    }

    pub fn read_flops(&self) -> FlopLedger {
        self.profiler.flops().clone()
    }

    fn push(&mut self, value: Tensor, kind: NodeKind, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            kind,
            requires_grad,
            needs_grad: requires_grad,
            recorded: false,
            retained: false,
            grad: None,
        });
        Var { graph: self.id, id }
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, NodeKind::Constant, false)
    }

    /// A data leaf that accumulates a gradient (e.g. a detached feature map).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, NodeKind::Input, true)
    }

    /// A trainable parameter leaf; its bytes are reported apart from activations.
    pub fn param(&mut self, value: &Tensor) -> Var {
        self.profiler.add_params(value.bytes());
        self.push(value.clone(), NodeKind::Param, true)
    }

    fn check(&self, v: Var) -> Result<&Node> {
        if v.graph != self.id || v.id >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "variable {} does not belong to this graph",
                v.id
            )));
        }
        Ok(&self.nodes[v.id])
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.check(v).expect("foreign variable").value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.check(v).ok()?.grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.check(v).ok()?;
        self.nodes[v.id].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.value(v);
        self.nodes[v.id].requires_grad
    }

    /// Starts collecting branch decisions of piecewise ops.
    pub(crate) fn trace_branches(&mut self) {
        self.branch_trace = Some(Vec::new());
    }

    pub(crate) fn take_branch_trace(&mut self) -> Vec<bool> {
        self.branch_trace.take().unwrap_or_default()
    }

    /// Evaluates `op` on `inputs`, recording a tape node in train mode.
    pub fn apply(&mut self, op: OpKind, inputs: &[Var]) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.id].value).collect();
        let shape = op.output_shape(&vals)?;
        let fwd = op.forward(&vals, shape);
        self.profiler.count_forward(fwd.flops);
        if let (Some(trace), Some(b)) = (self.branch_trace.as_mut(), fwd.branches) {
            trace.extend(b);
        }

        let needs_grad = inputs.iter().any(|v| self.nodes[v.id].needs_grad);
        let record = self.mode == Mode::Train && needs_grad;
        let out = self.push(fwd.out, NodeKind::Op, false);
        if !record {
            return Ok(out);
        }
        let node = &mut self.nodes[out.id];
        node.needs_grad = true;
        node.recorded = true;

        let saves = op.saves();
        let name = op.name();
        let mut to_retain: Vec<usize> = saves.inputs.iter().map(|&i| inputs[i].id).collect();
        if saves.output {
            to_retain.push(out.id);
        }
        for id in to_retain {
            let n = &mut self.nodes[id];
            if !n.retained && n.kind != NodeKind::Param {
                n.retained = true;
                let bytes = n.value.bytes();
                self.profiler.retain(name, bytes);
            }
        }
        let aux_bytes: u64 = fwd.aux.iter().map(|a| (a.len() * 8) as u64).sum();
        if aux_bytes > 0 {
            self.profiler.retain(name, aux_bytes);
        }
        self.tape.push(TapeNode {
            op,
            inputs: inputs.iter().map(|v| v.id).collect(),
            output: out.id,
            aux: fwd.aux,
            flops: fwd.flops,
            phase: self.profiler.phase().to_string(),
        });
        Ok(out)
    }

    /// Backpropagates `seed` from `root`, accumulating (`+=`) into the grad
    /// buffer of every gradient-requiring leaf reachable from it.
    pub fn backward(&mut self, root: Var, seed: &Tensor) -> Result<()> {
        let node = self.check(root)?;
        if !node.recorded && !(node.requires_grad && node.kind != NodeKind::Op) {
            return Err(Error::NoTape(root.id));
        }
        if node.value.shape() != seed.shape() {
            return Err(Error::SeedShape {
                seed: seed.shape().to_vec(),
                root: node.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(root.id + 1, || None);
        grads[root.id] = Some(seed.data().to_vec());

        for t in self.tape.iter().rev() {
            if t.output > root.id {
                continue;
            }
            let Some(dy) = grads[t.output].take() else { continue };
            let inputs: Vec<&Tensor> = t.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let need: Vec<bool> = t.inputs.iter().map(|&i| self.nodes[i].needs_grad).collect();
            let out = &self.nodes[t.output].value;
            let input_grads = t.op.backward(&inputs, out, &t.aux, &dy, &need);
            self.profiler.count_backward(&t.phase, t.flops);
            for (&i, g) in t.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[i].needs_grad {
                    continue;
                }
                match grads[i].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => grads[i] = Some(g),
                }
            }
        }

        for (i, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &mut self.nodes[i];
            if !(node.requires_grad && node.kind != NodeKind::Op) {
                continue;
            }
            let g = Tensor::from_parts(node.value.shape().to_vec(), g);
            match node.grad.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    // Convenience wrappers over `apply`.

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.apply(OpKind::AddBias, &[a, bias])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::Scale(c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Relu, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Tanh, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Log, &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Softplus, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(OpKind::SumAxis(axis), &[a])
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(OpKind::MeanAxis(axis), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(OpKind::Concat(axis), parts)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.apply(OpKind::Slice { axis, start, len }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(OpKind::Reshape(shape.to_vec()), &[a])
    }

    pub fn gather_interp(&mut self, a: Var, taps: Vec<InterpTap>) -> Result<Var> {
        self.apply(OpKind::GatherInterp(taps), &[a])
    }

    pub fn conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        self.apply(OpKind::Conv1d, &[x, w])
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        self.apply(OpKind::GroupNorm { groups, eps: 1e-5 }, &[x, gamma, beta])
    }

    pub fn smooth_l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::SmoothL1 { beta: 1.0 }, &[a, b])
    }

    /// `x W + b` for `x: [m, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }
}
