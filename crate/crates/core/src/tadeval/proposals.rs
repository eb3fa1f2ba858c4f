use super::Segment;
use crate::error::{Error, Result};

/// Every `(s, e)` with `0 <= s < e <= t - 1`, s-major.
pub fn enumerate_proposals(t: usize) -> Result<Vec<(usize, usize)>> {
    if t < 2 {
        return Err(Error::InvalidArgument(format!("proposal map needs t >= 2, got {t}")));
    }
    Ok((0..t).flat_map(|s| (s + 1..t).map(move |e| (s, e))).collect())
}

/// The segment covered by snippets `s..=e`.
pub fn proposal_segment(s: usize, e: usize) -> Segment {
    Segment::new(s as f64, (e + 1) as f64)
}

/// Intersection over union of two segments; 0 when the union is empty.
pub fn tiou(a: Segment, b: Segment) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.len() + b.len() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn peaks(p: &[f64]) -> Vec<usize> {
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..p.len())
        .filter(|&t| {
            let left = t == 0 || p[t] > p[t - 1];
            let right = t + 1 == p.len() || p[t] > p[t + 1];
            (left && right) || p[t] > 0.5 * max
        })
        .collect()
}

/// Start candidates are strict local maxima of `start_prob` or values above
/// half its maximum (likewise for ends); returns every ordered pair `s < e`.
pub fn select_boundaries(start_prob: &[f64], end_prob: &[f64]) -> Vec<(usize, usize)> {
    let ends = peaks(end_prob);
    peaks(start_prob)
        .into_iter()
        .flat_map(|s| ends.iter().filter(move |&&e| e > s).map(move |&e| (s, e)))
        .collect()
}

pub fn fuse_scores(p_s: f64, p_e: f64, p_iou: f64) -> f64 {
    p_s * p_e * p_iou
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration() {
        assert_eq!(enumerate_proposals(128).unwrap().len(), 8128);
        assert_eq!(enumerate_proposals(2).unwrap(), vec![(0, 1)]);
        assert_eq!(enumerate_proposals(8).unwrap().len(), 28);
        assert!(enumerate_proposals(1).is_err());
    }

    #[test]
    fn tiou_examples() {
        let s = Segment::new;
        assert_eq!(tiou(s(1.0, 4.0), s(1.0, 4.0)), 1.0);
        assert_eq!(tiou(s(0.0, 1.0), s(2.0, 3.0)), 0.0);
        assert_eq!(tiou(s(0.0, 2.0), s(1.0, 3.0)), 1.0 / 3.0);
        assert_eq!(tiou(s(10.0, 20.0), s(12.0, 22.0)), 8.0 / 12.0);
    }

    #[test]
    fn boundary_selection() {
        let mut sp = vec![0.1; 16];
        sp[5] = 0.9;
        let mut ep = vec![0.1; 16];
        ep[9] = 0.9;
        assert!(select_boundaries(&sp, &ep).contains(&(5, 9)));

        // A linear ramp passes the half-max rule on its upper half; a
        // geometric one only at the endpoint maximum.
        let inc: Vec<f64> = (0..10).map(|i| i as f64 / 100.0).collect();
        assert_eq!(peaks(&inc), vec![5, 6, 7, 8, 9]);
        let steep: Vec<f64> = (0..10).map(|i| (2f64).powi(i)).collect();
        assert_eq!(peaks(&steep), vec![9]);

        let flat = vec![0.3; 12];
        assert_eq!(select_boundaries(&flat, &flat).len(), 12 * 11 / 2);
    }

    #[test]
    fn fusion() {
        assert_eq!(fuse_scores(1.0, 1.0, 1.0), 1.0);
        assert_eq!(fuse_scores(0.0, 0.3, 0.7), 0.0);
        assert_eq!(fuse_scores(0.5, 0.5, 0.5), 0.125);
    }
}
