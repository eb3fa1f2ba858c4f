use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{tiou, Detection};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsConfig {
    pub sigma: f64,
    pub score_floor: f64,
    pub top_k: usize,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self { sigma: 0.4, score_floor: 1e-4, top_k: 100 }
    }
}

impl NmsConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            errors.push(format!("nms.sigma must be positive, got {}", self.sigma));
        }
        if !(self.score_floor >= 0.0) {
            errors.push(format!("nms.score_floor must be non-negative, got {}", self.score_floor));
        }
        if self.top_k == 0 {
            errors.push("nms.top_k must be at least 1".into());
        }
    }
}

/// Higher score first, then earlier start, then lower original index.
fn precedes(a: (&Detection, usize), b: (&Detection, usize)) -> Ordering {
    b.0.score
        .total_cmp(&a.0.score)
        .then(a.0.start.total_cmp(&b.0.start))
        .then(a.1.cmp(&b.1))
}

/// Gaussian soft-NMS: repeatedly keeps the best remaining detection and
/// multiplies every other score by `exp(-tiou^2 / sigma)`, discarding scores
/// below `score_floor`, until `top_k` are kept.
pub fn soft_nms(dets: &[Detection], cfg: &NmsConfig) -> Vec<Detection> {
    let mut pool: Vec<(Detection, usize)> = dets
        .iter()
        .cloned()
        .enumerate()
        .filter(|(_, d)| d.score >= cfg.score_floor)
        .map(|(i, d)| (d, i))
        .collect();
    let mut kept = Vec::new();
    while !pool.is_empty() && kept.len() < cfg.top_k {
        let best = (0..pool.len())
            .min_by(|&a, &b| precedes((&pool[a].0, pool[a].1), (&pool[b].0, pool[b].1)))
            .expect("non-empty");
        let (top, _) = pool.swap_remove(best);
        let seg = top.segment();
        pool.retain_mut(|(d, _)| {
            let iou = tiou(seg, d.segment());
            if iou > 0.0 {
                d.score *= (-iou * iou / cfg.sigma).exp();
            }
            d.score >= cfg.score_floor
        });
        kept.push(top);
    }
    kept
}
