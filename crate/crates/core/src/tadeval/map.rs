use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{tiou, Detection, Segment};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub thresholds: Vec<f64>,
    pub ap: Vec<f64>,
    pub average: f64,
}

impl EvalResult {
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["average_map".to_string()];
        cols.extend(self.thresholds.iter().map(|t| format!("ap@{t:.2}")));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.average.to_string()];
        cols.extend(self.ap.iter().map(f64::to_string));
        cols.join(",")
    }
}

/// `0.50, 0.55, ..., 0.95`.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Class-agnostic average precision per threshold. Detections are ranked by
/// descending score (ties by video id, start, end); each is matched to the
/// unmatched ground truth of its video with the highest tIoU at or above the
/// threshold. AP is the area under the monotone precision envelope.
pub fn compute_map(
    dets: &[Detection],
    gt: &BTreeMap<String, Vec<Segment>>,
    thresholds: &[f64],
) -> Result<EvalResult> {
    let n_gt: usize = gt.values().map(Vec::len).sum();
    if n_gt == 0 {
        return Err(Error::Evaluation("no ground-truth segments".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::Evaluation("empty threshold list".into()));
    }
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.video_id.cmp(&b.video_id))
            .then(a.start.total_cmp(&b.start))
            .then(a.end.total_cmp(&b.end))
    });

    let mut ap = Vec::with_capacity(thresholds.len());
    for &thr in thresholds {
        let mut used: BTreeMap<&str, Vec<bool>> =
            gt.iter().map(|(k, v)| (k.as_str(), vec![false; v.len()])).collect();
        let mut tp = Vec::with_capacity(order.len());
        for d in &order {
            let mut hit = false;
            if let (Some(segs), Some(flags)) = (gt.get(&d.video_id), used.get_mut(d.video_id.as_str())) {
                let mut best: Option<(usize, f64)> = None;
                for (j, s) in segs.iter().enumerate() {
                    if flags[j] {
                        continue;
                    }
                    let iou = tiou(d.segment(), *s);
                    if iou >= thr && best.map_or(true, |(_, b)| iou > b) {
                        best = Some((j, iou));
                    }
                }
                if let Some((j, _)) = best {
                    flags[j] = true;
                    hit = true;
                }
            }
            tp.push(hit);
        }
        ap.push(average_precision(&tp, n_gt));
    }
    let average = ap.iter().sum::<f64>() / ap.len() as f64;
    Ok(EvalResult { thresholds: thresholds.to_vec(), ap, average })
}

fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (i + 1) as f64);
        recall.push(hits as f64 / n_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut prev = 0.0;
    let mut area = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        area += (r - prev) * p;
        prev = *r;
    }
    area
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tadeval::ScoreParts;

    fn det(v: &str, start: f64, end: f64, score: f64) -> Detection {
        Detection {
            video_id: v.into(),
            start,
            end,
            score,
            components: ScoreParts { p_s: 1.0, p_e: 1.0, p_iou: score },
        }
    }

    fn gt() -> BTreeMap<String, Vec<Segment>> {
        BTreeMap::from([("a".to_string(), vec![Segment::new(0.0, 10.0), Segment::new(20.0, 30.0)])])
    }

    #[test]
    fn perfect_and_empty() {
        let dets = vec![det("a", 0.0, 10.0, 1.0), det("a", 20.0, 30.0, 1.0)];
        let r = compute_map(&dets, &gt(), &default_thresholds()).unwrap();
        assert!(r.ap.iter().all(|&a| a == 1.0));
        assert_eq!(r.average, 1.0);
        let r = compute_map(&[], &gt(), &default_thresholds()).unwrap();
        assert_eq!(r.average, 0.0);
        assert!(compute_map(&dets, &BTreeMap::new(), &[0.5]).is_err());
    }

    #[test]
    fn hand_computed_pr_table() {
        // Ranked: TP (iou 1), FP (iou 0), TP (iou 0.8 vs [20,30]).
        // precision 1, 1/2, 2/3; recall 1/2, 1/2, 1. Envelope: 1, 2/3, 2/3.
        // AP = 0.5 * 1 + 0.5 * 2/3 = 5/6.
        let dets = vec![
            det("a", 0.0, 10.0, 0.9),
            det("a", 40.0, 50.0, 0.8),
            det("a", 20.0, 28.0, 0.7),
        ];
        let r = compute_map(&dets, &gt(), &[0.5]).unwrap();
        assert!((r.ap[0] - 5.0 / 6.0).abs() < 1e-15);
        // At 0.9 the third misses: AP = 0.5.
        let r = compute_map(&dets, &gt(), &[0.9]).unwrap();
        assert_eq!(r.ap[0], 0.5);
    }

    #[test]
    fn thresholds_and_csv() {
        let t = default_thresholds();
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.5);
        assert_eq!(t[9], 0.95);
        let r = EvalResult { thresholds: vec![0.5], ap: vec![0.25], average: 0.25 };
        assert_eq!(r.csv_header(), "average_map,ap@0.50");
        assert_eq!(r.csv_row(), "0.25,0.25");
    }
}
