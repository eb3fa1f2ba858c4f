use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Bin edges `[0, .3), [.3, .7), [.7, 1]` shared by IoU and scale labels.
pub const BIN_EDGES: [f64; 2] = [0.3, 0.7];

pub fn bin_of(label: f64) -> usize {
    if label < BIN_EDGES[0] {
        0
    } else if label < BIN_EDGES[1] {
        1
    } else {
        2
    }
}

/// Per-bin draw counts: `floor(k/3)` each with the remainder to the lowest
/// bins, then every bin's shortfall against its capacity is handed out one
/// at a time, round-robin in bin order, to bins with spare capacity.
pub fn balanced_quotas(capacity: [usize; 3], k: usize) -> Result<[usize; 3]> {
    let total: usize = capacity.iter().sum();
    if total == 0 {
        return Err(Error::Sampling("balanced sampling over empty bins".into()));
    }
    if k > total {
        return Err(Error::Sampling(format!("cannot draw {k} of {total} candidates")));
    }
    let mut quota = [k / 3; 3];
    for q in quota.iter_mut().take(k % 3) {
        *q += 1;
    }
    let mut deficit = 0;
    for b in 0..3 {
        if quota[b] > capacity[b] {
            deficit += quota[b] - capacity[b];
            quota[b] = capacity[b];
        }
    }
    let mut b = 0;
    while deficit > 0 {
        if quota[b] < capacity[b] {
            quota[b] += 1;
            deficit -= 1;
        }
        b = (b + 1) % 3;
    }
    Ok(quota)
}

pub(super) fn sample_balanced(labels: &[f64], k: usize, rng: &mut StreamRng) -> Result<Vec<usize>> {
    let mut bins: [Vec<usize>; 3] = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        if !l.is_finite() {
            return Err(Error::Sampling(format!("non-finite label at {i}")));
        }
        bins[bin_of(l)].push(i);
    }
    let quota = balanced_quotas([bins[0].len(), bins[1].len(), bins[2].len()], k)?;
    let mut out = Vec::with_capacity(k);
    for (members, q) in bins.iter().zip(quota) {
        out.extend(index::sample(rng, members.len(), q).into_iter().map(|j| members[j]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn quota_examples() {
        assert_eq!(balanced_quotas([100, 100, 100], 30).unwrap(), [10, 10, 10]);
        assert_eq!(balanced_quotas([100, 100, 100], 32).unwrap(), [11, 11, 10]);
        assert_eq!(balanced_quotas([100, 0, 100], 30).unwrap(), [15, 0, 15]);
        assert_eq!(balanced_quotas([2, 100, 100], 30).unwrap(), [2, 14, 14]);
        assert_eq!(balanced_quotas([2, 1, 100], 30).unwrap(), [2, 1, 27]);
        assert!(balanced_quotas([0, 0, 0], 1).is_err());
        assert!(balanced_quotas([1, 1, 1], 4).is_err());
    }

    #[test]
    fn bins_follow_edges() {
        assert_eq!([bin_of(0.0), bin_of(0.29), bin_of(0.3), bin_of(0.69), bin_of(0.7), bin_of(1.0)], [0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn equal_bins_give_equal_draws() {
        let labels: Vec<f64> = (0..300).map(|i| [0.1, 0.5, 0.9][i % 3]).collect();
        let got = sample_balanced(&labels, 30, &mut stream(1, "bal")).unwrap();
        let mut counts = [0; 3];
        for i in got {
            counts[bin_of(labels[i])] += 1;
        }
        assert_eq!(counts, [10, 10, 10]);
    }
}
