//! Training targets for the boundary head and each cascade stage.

use serde::{Deserialize, Serialize};

use crate::tadeval::{tiou, Segment};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    /// Half-width, in snippet units, of the boundary neighbourhood.
    pub boundary_radius: f64,
    pub stage_thresholds: Vec<f64>,
    /// IoU targets at or above this are positives of the IoU classifier.
    pub iou_pos: f64,
    /// IoU targets at or below this are negatives; the band between is ignored.
    pub iou_neg: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self { boundary_radius: 1.5, stage_thresholds: vec![0.7, 0.8, 0.9], iou_pos: 0.9, iou_neg: 0.3 }
    }
}

/// Per-snippet boundary labels in `{0, 1}`.
pub fn snippet_labels(gt: &[Segment], n: usize, radius: f64) -> (Vec<f64>, Vec<f64>) {
    let near = |t: f64, edge: f64| ((t - edge).abs() <= radius) as u8 as f64;
    let label = |edge: fn(&Segment) -> f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let c = i as f64 + 0.5;
                gt.iter().map(|s| near(c, edge(s))).fold(0.0, f64::max)
            })
            .collect()
    };
    (label(|s| s.start), label(|s| s.end))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProposalLabels {
    /// Max tIoU against any ground truth.
    pub iou: Vec<f64>,
    pub positive: Vec<bool>,
    /// `(δs, δe, δc, δlogw)` against the best-matching ground truth.
    pub offsets: Vec<[f64; 4]>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

/// Offsets that move `p` onto `g`: start and end as fractions of the
/// duration, centre likewise, width as a log ratio.
pub fn regression_target(p: Segment, g: Segment) -> [f64; 4] {
    let d = p.len();
    [
        (g.start - p.start) / d,
        (g.end - p.end) / d,
        (g.center() - p.center()) / d,
        (g.len() / d).ln(),
    ]
}

pub fn best_match(p: Segment, gt: &[Segment]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, g) in gt.iter().enumerate() {
        let v = tiou(p, *g);
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best
}

pub fn proposal_labels(gt: &[Segment], proposals: &[Segment], threshold: f64, radius: f64) -> ProposalLabels {
    let mut out = ProposalLabels {
        iou: Vec::with_capacity(proposals.len()),
        positive: Vec::with_capacity(proposals.len()),
        offsets: Vec::with_capacity(proposals.len()),
        start: Vec::with_capacity(proposals.len()),
        end: Vec::with_capacity(proposals.len()),
    };
    let nearest = |t: f64, edge: fn(&Segment) -> f64| gt.iter().map(|g| (t - edge(g)).abs()).fold(f64::INFINITY, f64::min);
    for &p in proposals {
        let (iou, offsets) = match best_match(p, gt) {
            Some((j, v)) => (v, regression_target(p, gt[j])),
            None => (0.0, [0.0; 4]),
        };
        out.iou.push(iou);
        out.positive.push(iou >= threshold);
        out.offsets.push(offsets);
        out.start.push((nearest(p.start, |g| g.start) <= radius) as u8 as f64);
        out.end.push((nearest(p.end, |g| g.end) <= radius) as u8 as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proposal_iou_targets() {
        let gt = [Segment::new(10.0, 20.0)];
        let props = [Segment::new(10.0, 20.0), Segment::new(30.0, 40.0), Segment::new(12.0, 22.0)];
        for thr in [0.7, 0.8, 0.9] {
            let l = proposal_labels(&gt, &props, thr, 1.5);
            assert_eq!(l.iou[0], 1.0);
            assert_eq!(l.iou[1], 0.0);
            assert_eq!(l.positive, vec![true, false, false]);
            assert_eq!(l.offsets[0], [0.0; 4]);
        }
        let l = proposal_labels(&gt, &props, 0.7, 1.5);
        assert!((l.iou[2] - 8.0 / 12.0).abs() < 1e-15);
        assert_eq!(l.start, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_ground_truth_is_all_negative() {
        let l = proposal_labels(&[], &[Segment::new(1.0, 3.0)], 0.7, 1.5);
        assert_eq!((l.iou[0], l.positive[0], l.start[0]), (0.0, false, 0.0));
        let (s, e) = snippet_labels(&[], 8, 1.5);
        assert!(s.iter().chain(&e).all(|&v| v == 0.0));
    }

    #[test]
    fn snippet_neighbourhood() {
        // Centres 8.5 ..= 11.5 lie within 1.5 of t_s = 10.
        let (s, e) = snippet_labels(&[Segment::new(10.0, 20.0)], 32, 1.5);
        let starts: Vec<usize> = (0..32).filter(|&i| s[i] == 1.0).collect();
        let ends: Vec<usize> = (0..32).filter(|&i| e[i] == 1.0).collect();
        assert_eq!(starts, vec![8, 9, 10, 11]);
        assert_eq!(ends, vec![18, 19, 20, 21]);
    }

    #[test]
    fn regression_targets_invert_refinement() {
        let t = regression_target(Segment::new(4.0, 6.0), Segment::new(3.0, 7.0));
        assert_eq!(t, [-0.5, 0.5, 0.0, 2f64.ln()]);
    }
}
