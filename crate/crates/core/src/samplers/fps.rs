use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy farthest-point order starting at `start`: each step adds the
/// unselected row with the largest squared distance to its nearest selected
/// row, ties to the lowest index.
pub fn fps_order(embeddings: &Tensor, k: usize, start: usize) -> Result<Vec<usize>> {
    let n = embeddings.rows();
    if k > n || start >= n {
        return Err(Error::Sampling(format!("fps: k={k}, start={start} with {n} candidates")));
    }
    if !embeddings.all_finite() {
        return Err(Error::Sampling("fps: non-finite embeddings".into()));
    }
    let mut order = Vec::with_capacity(k);
    if k == 0 {
        return Ok(order);
    }
    let mut taken = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut cur = start;
    loop {
        order.push(cur);
        taken[cur] = true;
        if order.len() == k {
            return Ok(order);
        }
        let anchor = embeddings.row(cur);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = sq_dist(anchor, embeddings.row(i));
            if d < min_d[i] {
                min_d[i] = d;
            }
            if best.map_or(true, |(_, b)| min_d[i] > b) {
                best = Some((i, min_d[i]));
            }
        }
        cur = best.expect("k <= n").0;
    }
}
