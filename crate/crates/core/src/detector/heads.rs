use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::params::Bound;

/// Affine layers `{prefix}.{l}.w/b`, relu between them, none after the last.
pub fn mlp(g: &mut Graph, p: &Bound, prefix: &str, x: Var, layers: usize) -> Result<Var> {
    let mut h = x;
    for l in 0..layers {
        h = g.linear(h, p.get(&format!("{prefix}.{l}.w")), p.get(&format!("{prefix}.{l}.b")))?;
        if l + 1 < layers {
            h = g.relu(h)?;
        }
    }
    Ok(h)
}

/// `[N, C] -> ([N], [N])` start and end logits.
pub fn boundary_head(g: &mut Graph, p: &Bound, x: Var) -> Result<(Var, Var)> {
    let (n, c) = (g.shape(x)[0], g.shape(x)[1]);
    let h = g.reshape(x, &[1, n, c])?;
    let h = g.conv1d(h, p.get("det.bd.conv1.w"))?;
    let h = g.add_bias(h, p.get("det.bd.conv1.b"))?;
    let h = g.relu(h)?;
    let h = g.conv1d(h, p.get("det.bd.conv2.w"))?;
    let h = g.add_bias(h, p.get("det.bd.conv2.b"))?;
    let h = g.reshape(h, &[n, 2])?;
    let s = g.slice(h, 1, 0, 1)?;
    let e = g.slice(h, 1, 1, 1)?;
    Ok((g.reshape(s, &[n])?, g.reshape(e, &[n])?))
}
