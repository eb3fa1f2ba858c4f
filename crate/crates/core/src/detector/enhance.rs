//! Bidirectional gated recurrence with a residual, then two
//! conv -> group-norm -> relu blocks.

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::params::Bound;
use crate::tensor::Tensor;

/// One direction of the update-gate cell
/// `z = σ(Wz x + Uz h + bz)`, `h̃ = tanh(Wh x + Uh h + bh)`, `h' = h + z ⊙ (h̃ - h)`.
/// Returns the hidden states `[N, C]` in sequence order.
fn recur(g: &mut Graph, p: &Bound, x: Var, dir: &str, reverse: bool) -> Result<Var> {
    let (n, c) = (g.shape(x)[0], g.shape(x)[1]);
    let xw = g.linear(x, p.get(&format!("det.enh.{dir}.w")), p.get(&format!("det.enh.{dir}.b")))?;
    let u = p.get(&format!("det.enh.{dir}.u"));
    let mut h = g.constant(Tensor::zeros(&[1, c]));
    let mut states = Vec::with_capacity(n);
    let steps: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for t in steps {
        let xt = g.slice(xw, 0, t, 1)?;
        let hu = g.matmul(h, u)?;
        let a = g.add(xt, hu)?;
        let z = g.slice(a, 1, 0, c)?;
        let z = g.sigmoid(z)?;
        let cand = g.slice(a, 1, c, c)?;
        let cand = g.tanh(cand)?;
        let d = g.sub(cand, h)?;
        let d = g.mul(z, d)?;
        h = g.add(h, d)?;
        states.push(h);
    }
    if reverse {
        states.reverse();
    }
    g.concat(&states, 0)
}

fn conv_block(g: &mut Graph, p: &Bound, x: Var, name: &str, groups: usize) -> Result<Var> {
    let y = g.conv1d(x, p.get(&format!("det.enh.{name}.w")))?;
    let y = g.add_bias(y, p.get(&format!("det.enh.{name}.b")))?;
    let y = g.group_norm(y, p.get(&format!("det.enh.{name}.gn_g")), p.get(&format!("det.enh.{name}.gn_b")), groups)?;
    g.relu(y)
}

/// `features: [N, C] -> [N, C]`.
pub fn enhance(g: &mut Graph, p: &Bound, features: Var, groups: usize) -> Result<Var> {
    let (n, c) = (g.shape(features)[0], g.shape(features)[1]);
    let fwd = recur(g, p, features, "fwd", false)?;
    let bwd = recur(g, p, features, "bwd", true)?;
    let x = g.add(features, fwd)?;
    let x = g.add(x, bwd)?;
    let x = g.reshape(x, &[1, n, c])?;
    let x = conv_block(g, p, x, "conv1", groups)?;
    let x = conv_block(g, p, x, "conv2", groups)?;
    g.reshape(x, &[n, c])
}
