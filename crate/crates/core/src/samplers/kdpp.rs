//! Exact k-DPP sampling by spectral decomposition of the kernel.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::Tensor;

/// Candidate count above which the dense eigendecomposition is refused.
pub const KDPP_MAX_CANDIDATES: usize = 2048;

const RIDGE: f64 = 0.01;

fn to_matrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.row_len(), t.data())
}

/// Cosine kernel `X̂ X̂ᵀ + 0.01 I`, rows of `X̂` L2-normalised. A zero row
/// stays zero and keeps only the ridge.
pub fn kdpp_kernel(embeddings: &Tensor) -> Result<Tensor> {
    if embeddings.shape().len() != 2 {
        return Err(Error::Sampling(format!("kdpp: embeddings shape {:?}", embeddings.shape())));
    }
    if !embeddings.all_finite() {
        return Err(Error::Sampling("kdpp: non-finite embeddings".into()));
    }
    let n = embeddings.rows();
    let unit: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r = embeddings.row(i);
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 { r.iter().map(|v| v / norm).collect() } else { r.to_vec() }
        })
        .collect();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            l[i * n + j] = v;
            l[j * n + i] = v;
        }
        l[i * n + i] += RIDGE;
    }
    Tensor::new(vec![n, n], l)
}

pub(super) fn sample_kdpp(embeddings: &Tensor, k: usize, rng: &mut StreamRng) -> Result<Vec<usize>> {
    if embeddings.rows() > KDPP_MAX_CANDIDATES {
        return Err(Error::Sampling(format!(
            "kdpp: {} candidates exceed the limit of {KDPP_MAX_CANDIDATES}",
            embeddings.rows()
        )));
    }
    sample_kdpp_kernel(&kdpp_kernel(embeddings)?, k, rng)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Draws a size-`k` subset with probability proportional to `det(L_S)`.
pub fn sample_kdpp_kernel(l: &Tensor, k: usize, rng: &mut StreamRng) -> Result<Vec<usize>> {
    let n = l.rows();
    if l.shape() != [n, n] || k == 0 || k > n {
        return Err(Error::Sampling(format!("kdpp: k={k} with kernel {:?}", l.shape())));
    }
    if !l.all_finite() {
        return Err(Error::Sampling("kdpp: non-finite kernel".into()));
    }
    let eig = SymmetricEigen::try_new(to_matrix(l), 1e-13, 10_000)
        .ok_or_else(|| Error::Eigen(format!("kdpp: eigendecomposition of {n}x{n} kernel did not converge")))?;
    let log_lambda: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0).ln()).collect();

    // e[l][m]: log of the l-th elementary symmetric polynomial of the first m eigenvalues.
    let mut e = vec![vec![f64::NEG_INFINITY; n + 1]; k + 1];
    e[0].fill(0.0);
    for lvl in 1..=k {
        for m in 1..=n {
            e[lvl][m] = log_add(e[lvl][m - 1], log_lambda[m - 1] + e[lvl - 1][m - 1]);
        }
    }
    if !e[k][n].is_finite() {
        return Err(Error::Eigen(format!("kdpp: kernel rank below k={k}")));
    }

    let mut chosen = Vec::with_capacity(k);
    let mut rem = k;
    for m in (1..=n).rev() {
        if rem == 0 {
            break;
        }
        let p = if rem == m { 1.0 } else { (log_lambda[m - 1] + e[rem - 1][m - 1] - e[rem][m]).exp() };
        if rng.random::<f64>() < p {
            chosen.push(m - 1);
            rem -= 1;
        }
    }

    let mut v: Vec<Vec<f64>> = chosen.iter().map(|&c| eig.eigenvectors.column(c).iter().copied().collect()).collect();
    let mut out = Vec::with_capacity(k);
    while !v.is_empty() {
        let weights: Vec<f64> = (0..n).map(|i| v.iter().map(|col| col[i] * col[i]).sum()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                pick = i;
                break;
            }
            u -= w;
        }
        while weights[pick] == 0.0 && pick > 0 {
            pick -= 1;
        }
        out.push(pick);

        let (j, _) = v
            .iter()
            .enumerate()
            .map(|(j, col)| (j, col[pick].abs()))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        let pivot = v.swap_remove(j);
        for col in &mut v {
            let f = col[pick] / pivot[pick];
            for (c, p) in col.iter_mut().zip(&pivot) {
                *c -= f * p;
            }
        }
        for a in 0..v.len() {
            for b in 0..a {
                let d: f64 = v[a].iter().zip(&v[b]).map(|(x, y)| x * y).sum();
                let (head, tail) = v.split_at_mut(a);
                for (x, y) in tail[0].iter_mut().zip(&head[b]) {
                    *x -= d * y;
                }
            }
            let norm = v[a].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v[a].iter_mut().for_each(|x| *x /= norm);
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    if out.len() != k {
        return Err(Error::Sampling(format!("kdpp: degenerate elimination produced {} of {k}", out.len())));
    }
    Ok(out)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] != i + n - k) else { return out };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// `P(S) = det(L_S) / Σ_{|S'|=k} det(L_S')` for every size-`k` subset in
/// lexicographic order.
pub fn kdpp_marginals_bruteforce(l: &Tensor, k: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    let n = l.rows();
    if l.shape() != [n, n] || k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("brute force: k={k} with kernel {:?}", l.shape())));
    }
    if n > 12 {
        return Err(Error::InvalidArgument(format!("brute force limited to n <= 12, got {n}")));
    }
    let full = to_matrix(l);
    let subsets = combinations(n, k);
    let dets: Vec<f64> = subsets
        .iter()
        .map(|s| DMatrix::from_fn(k, k, |a, b| full[(s[a], s[b])]).determinant())
        .collect();
    let z: f64 = dets.iter().sum();
    Ok(subsets.into_iter().zip(dets).map(|(s, d)| (s, d / z)).collect())
}
