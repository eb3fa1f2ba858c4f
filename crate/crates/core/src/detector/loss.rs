//! Detector training loss.

use serde::{Deserialize, Serialize};

use super::labels::{proposal_labels, snippet_labels, LabelConfig};
use super::DetectorOutput;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tadeval::Segment;
use crate::tensor::Tensor;

pub const LAMBDA: f64 = 10.0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_bd_s: f64,
    pub l_bd_p: Vec<f64>,
    pub l_iou: Vec<f64>,
    pub l_secw: Vec<f64>,
    pub total: f64,
}

impl LossBreakdown {
    /// Recombines the components with weight [`LAMBDA`] on the regression terms.
    pub fn recomputed_total(&self) -> f64 {
        let stages: f64 = (0..self.l_bd_p.len())
            .map(|i| self.l_bd_p[i] + self.l_iou[i] + LAMBDA * self.l_secw[i])
            .sum();
        self.l_bd_s + stages
    }

    pub fn add_scaled(&mut self, other: &LossBreakdown, s: f64) {
        let grow = |v: &mut Vec<f64>, n: usize| v.resize(v.len().max(n), 0.0);
        grow(&mut self.l_bd_p, other.l_bd_p.len());
        grow(&mut self.l_iou, other.l_iou.len());
        grow(&mut self.l_secw, other.l_secw.len());
        self.l_bd_s += s * other.l_bd_s;
        for i in 0..other.l_bd_p.len() {
            self.l_bd_p[i] += s * other.l_bd_p[i];
            self.l_iou[i] += s * other.l_iou[i];
            self.l_secw[i] += s * other.l_secw[i];
        }
        self.total += s * other.total;
    }
}

/// Weighted dot of `v` with a constant weight vector.
fn weighted_sum(g: &mut Graph, v: Var, w: Vec<f64>) -> Result<Var> {
    let w = g.constant(Tensor::new(g.shape(v).to_vec(), w)?);
    let m = g.mul(v, w)?;
    g.sum(m)
}

/// Positive/negative-balanced cross entropy on logits: labels `1.0` are
/// positives, `0.0` negatives, anything else is ignored. Each present side
/// contributes half its mean; an absent side contributes 0.
pub fn balanced_bce(g: &mut Graph, logits: Var, labels: &[f64]) -> Result<Var> {
    let pos = labels.iter().filter(|&&l| l == 1.0).count();
    let neg = labels.iter().filter(|&&l| l == 0.0).count();
    let wp = if pos > 0 { 0.5 / pos as f64 } else { 0.0 };
    let wn = if neg > 0 { 0.5 / neg as f64 } else { 0.0 };
    let neg_x = g.scale(logits, -1.0)?;
    let sp_pos = g.softplus(neg_x)?;
    let sp_neg = g.softplus(logits)?;
    let a = weighted_sum(g, sp_pos, labels.iter().map(|&l| if l == 1.0 { wp } else { 0.0 }).collect())?;
    let b = weighted_sum(g, sp_neg, labels.iter().map(|&l| if l == 0.0 { wn } else { 0.0 }).collect())?;
    g.add(a, b)
}

fn column(g: &mut Graph, x: Var, col: usize) -> Result<Var> {
    let n = g.shape(x)[0];
    let c = g.slice(x, 1, col, 1)?;
    g.reshape(c, &[n])
}

pub struct LossGraph {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

pub fn compute_loss(g: &mut Graph, out: &DetectorOutput, gt: &[Segment], cfg: &LabelConfig) -> Result<LossGraph> {
    let n = g.shape(out.start_logits)[0];
    if out.stages.len() != cfg.stage_thresholds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} stages but {} thresholds",
            out.stages.len(),
            cfg.stage_thresholds.len()
        )));
    }
    let (ls, le) = snippet_labels(gt, n, cfg.boundary_radius);
    let a = balanced_bce(g, out.start_logits, &ls)?;
    let b = balanced_bce(g, out.end_logits, &le)?;
    let l_bd_s = g.add(a, b)?;
    let mut breakdown = LossBreakdown { l_bd_s: g.value(l_bd_s).data()[0], ..Default::default() };
    let mut total = l_bd_s;

    for (stage, &thr) in out.stages.iter().zip(&cfg.stage_thresholds) {
        let labels = proposal_labels(gt, &stage.proposals, thr, cfg.boundary_radius);
        let p = stage.proposals.len();

        let sl = column(g, stage.head_a, 2)?;
        let el = column(g, stage.head_a, 3)?;
        let a = balanced_bce(g, sl, &labels.start)?;
        let b = balanced_bce(g, el, &labels.end)?;
        let l_bd_p = g.add(a, b)?;

        let cls = column(g, stage.head_c, 0)?;
        let binarized: Vec<f64> = labels
            .iou
            .iter()
            .map(|&t| if t >= cfg.iou_pos { 1.0 } else if t <= cfg.iou_neg { 0.0 } else { 0.5 })
            .collect();
        let l_cls = balanced_bce(g, cls, &binarized)?;
        let reg = column(g, stage.head_c, 1)?;
        let reg = g.sigmoid(reg)?;
        let target = g.constant(Tensor::new(vec![p], labels.iou.clone())?);
        let diff = g.sub(reg, target)?;
        let sq = g.mul(diff, diff)?;
        let l_l2 = weighted_sum(g, sq, vec![1.0 / p as f64; p])?;
        let l_iou = g.add(l_cls, l_l2)?;

        let npos = labels.positive.iter().filter(|&&b| b).count();
        let l_secw = if npos == 0 {
            g.constant(Tensor::scalar(0.0))
        } else {
            let se = g.slice(stage.head_a, 1, 0, 2)?;
            let pred = g.concat(&[se, stage.head_b], 1)?;
            let tgt: Vec<f64> = labels.offsets.iter().flatten().copied().collect();
            let tgt = g.constant(Tensor::new(vec![p, 4], tgt)?);
            let sl1 = g.smooth_l1(pred, tgt)?;
            let w = 1.0 / (4 * npos) as f64;
            let mask = labels.positive.iter().flat_map(|&b| [if b { w } else { 0.0 }; 4]).collect();
            weighted_sum(g, sl1, mask)?
        };

        breakdown.l_bd_p.push(g.value(l_bd_p).data()[0]);
        breakdown.l_iou.push(g.value(l_iou).data()[0]);
        breakdown.l_secw.push(g.value(l_secw).data()[0]);
        let weighted = g.scale(l_secw, LAMBDA)?;
        let stage_total = g.add(l_bd_p, l_iou)?;
        let stage_total = g.add(stage_total, weighted)?;
        total = g.add(total, stage_total)?;
    }
    breakdown.total = g.value(total).data()[0];
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite(format!("detector loss {breakdown:?}")));
    }
    Ok(LossGraph { total, breakdown })
}
