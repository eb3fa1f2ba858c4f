use rand::seq::index;
use rand::Rng;

use super::Layout;
use crate::rng::StreamRng;

pub(super) fn random(n: usize, k: usize, rng: &mut StreamRng) -> Vec<usize> {
    index::sample(rng, n, k).into_vec()
}

/// `{ round_half_up(j * n / k) : j < k }`.
pub fn grid_1d(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|j| (2 * j * n + k) / (2 * k)).collect()
}

/// Proposal-map grid: the lattice `s ≡ e ≡ 0 (mod stride)` with
/// `stride = ceil(sqrt(n / k))`. A lattice larger than `k` is thinned by the
/// 1-D grid rule over its enumeration order; a smaller one is topped up with
/// the 1-D grid rule over the remaining proposals.
pub fn grid_proposal_map(t: usize, k: usize) -> Vec<usize> {
    let n = t * (t - 1) / 2;
    let mut stride = 1;
    while stride * stride * k < n {
        stride += 1;
    }
    let mut lattice = Vec::new();
    let mut rest = Vec::new();
    let mut idx = 0;
    for s in 0..t {
        for e in s + 1..t {
            if s % stride == 0 && e % stride == 0 {
                lattice.push(idx);
            } else {
                rest.push(idx);
            }
            idx += 1;
        }
    }
    if lattice.len() >= k {
        return grid_1d(lattice.len(), k).into_iter().map(|j| lattice[j]).collect();
    }
    let pad = k - lattice.len();
    lattice.extend(grid_1d(rest.len(), pad).into_iter().map(|j| rest[j]));
    lattice
}

/// The contiguous run `start..start + k`.
pub fn block_from_start(start: usize, k: usize) -> Vec<usize> {
    (start..start + k).collect()
}

pub(super) fn block(n: usize, k: usize, layout: Layout, rng: &mut StreamRng) -> Vec<usize> {
    match layout {
        Layout::Sequence => block_from_start(rng.random_range(0..=n - k), k),
        Layout::ProposalMap { t } => {
            // Smallest window of w+1 positions holding at least k proposals.
            let mut w = 1;
            while (w + 1) * w / 2 < k {
                w += 1;
            }
            let offset = rng.random_range(0..=t - 1 - w);
            let inside: Vec<usize> = (0..t)
                .flat_map(|s| (s + 1..t).map(move |e| (s, e)))
                .enumerate()
                .filter(|&(_, (s, e))| s >= offset && e <= offset + w)
                .map(|(i, _)| i)
                .collect();
            grid_1d(inside.len(), k).into_iter().map(|j| inside[j]).collect()
        }
    }
}
