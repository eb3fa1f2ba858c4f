//! Action detector: feature enhancement, snippet boundary head, and a
//! cascade of proposal evaluation stages.

mod enhance;
mod heads;
mod labels;
mod loss;
mod roi;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mode, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamSet};
use crate::rng::{stream, uniform_tensor, StreamRng};
use crate::tadeval::Segment;
use crate::tensor::Tensor;

pub use enhance::enhance;
pub use heads::{boundary_head, mlp};
pub use labels::{best_match, proposal_labels, regression_target, snippet_labels, LabelConfig, ProposalLabels};
pub use loss::{balanced_bce, compute_loss, LossBreakdown, LossGraph, LAMBDA};
pub use roi::{proposal_taps, roi_align, sample_times, RoiConfig, RoiFeatures, BOUNDARY_BINS, EXTENDED_BINS};

/// Shortest refined proposal, in snippets.
pub const MIN_PROPOSAL_LEN: f64 = 0.5;
/// Bound on the predicted log-width change.
pub const MAX_LOG_WIDTH_STEP: f64 = 8.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub feat_dim: usize,
    pub groups: usize,
    pub boundary_hidden: usize,
    /// Width of the projection applied before RoI alignment.
    pub roi_dim: usize,
    /// Hidden widths of every PEM head.
    pub pem_hidden: Vec<usize>,
    pub roi: RoiConfig,
    pub labels: LabelConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            feat_dim: 64,
            groups: 16,
            boundary_hidden: 64,
            roi_dim: 4,
            pem_hidden: vec![16],
            roi: RoiConfig::default(),
            labels: LabelConfig::default(),
        }
    }
}

impl DetectorConfig {
    pub fn stages(&self) -> usize {
        self.labels.stage_thresholds.len()
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.feat_dim == 0 || self.groups == 0 || self.feat_dim % self.groups != 0 {
            errors.push(format!(
                "detector.feat_dim ({}) must be a positive multiple of detector.groups ({})",
                self.feat_dim, self.groups
            ));
        }
        if self.boundary_hidden == 0 || self.roi_dim == 0 || self.pem_hidden.iter().any(|&h| h == 0) {
            errors.push("detector widths must be positive".into());
        }
        if self.labels.stage_thresholds.is_empty()
            || self.labels.stage_thresholds.iter().any(|t| !(0.0..=1.0).contains(t))
        {
            errors.push("detector.labels.stage_thresholds must be non-empty values in [0, 1]".into());
        }
        if !(self.labels.iou_neg <= self.labels.iou_pos) || !(self.labels.boundary_radius >= 0.0) {
            errors.push("detector.labels: need iou_neg <= iou_pos and boundary_radius >= 0".into());
        }
        if !(self.roi.extend >= 0.0) || !(self.roi.boundary > 0.0) {
            errors.push("detector.roi fractions must be non-negative (boundary positive)".into());
        }
    }

    fn head_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(&self.pem_hidden);
        dims.push(output);
        dims
    }

    /// Input and output widths of heads `a`, `b`, `c`.
    pub fn heads(&self) -> [(&'static str, Vec<usize>); 3] {
        let r = self.roi_dim;
        [
            ("a", self.head_dims(2 * BOUNDARY_BINS * r, 4)),
            ("b", self.head_dims(EXTENDED_BINS * r, 2)),
            ("c", self.head_dims(EXTENDED_BINS * r, 2)),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub config: DetectorConfig,
    pub params: ParamSet,
}

pub fn init_detector(config: &DetectorConfig, seed: u64) -> Detector {
    let mut rng = stream(seed, "detector.init");
    let mut params = ParamSet::new();
    let c = config.feat_dim;
    let uniform = |rng: &mut StreamRng, shape: &[usize], fan_in: usize| {
        uniform_tensor(rng, shape, (1.0 / fan_in as f64).sqrt())
    };
    for dir in ["fwd", "bwd"] {
        params.insert(format!("det.enh.{dir}.w"), uniform(&mut rng, &[c, 2 * c], c));
        params.insert(format!("det.enh.{dir}.b"), Tensor::zeros(&[2 * c]));
        params.insert(format!("det.enh.{dir}.u"), uniform(&mut rng, &[c, 2 * c], c));
    }
    for name in ["conv1", "conv2"] {
        params.insert(format!("det.enh.{name}.w"), uniform(&mut rng, &[3, c, c], 3 * c));
        params.insert(format!("det.enh.{name}.b"), Tensor::zeros(&[c]));
        params.insert(format!("det.enh.{name}.gn_g"), Tensor::full(&[c], 1.0));
        params.insert(format!("det.enh.{name}.gn_b"), Tensor::zeros(&[c]));
    }
    let hb = config.boundary_hidden;
    params.insert("det.bd.conv1.w", uniform(&mut rng, &[3, c, hb], 3 * c));
    params.insert("det.bd.conv1.b", Tensor::zeros(&[hb]));
    params.insert("det.bd.conv2.w", uniform(&mut rng, &[1, hb, 2], hb));
    params.insert("det.bd.conv2.b", Tensor::zeros(&[2]));
    params.insert("det.roi.w", uniform(&mut rng, &[c, config.roi_dim], c));
    params.insert("det.roi.b", Tensor::zeros(&[config.roi_dim]));
    for stage in 0..config.stages() {
        for (head, dims) in config.heads() {
            for (l, pair) in dims.windows(2).enumerate() {
                let prefix = format!("det.pem{stage}.{head}.{l}");
                params.insert(format!("{prefix}.w"), uniform(&mut rng, &[pair[0], pair[1]], pair[0]));
                params.insert(format!("{prefix}.b"), Tensor::zeros(&[pair[1]]));
            }
        }
    }
    Detector { config: config.clone(), params }
}

/// Per-proposal head outputs of one stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PemValues {
    pub ds: f64,
    pub de: f64,
    pub dc: f64,
    pub dlogw: f64,
    pub iou_cls: f64,
    pub iou_reg: f64,
    pub prop_start: f64,
    pub prop_end: f64,
}

/// Averages the boundary-offset and centre/width predictions, then clips to
/// `[0, n]`, swaps inverted ends and widens anything shorter than
/// [`MIN_PROPOSAL_LEN`] about its centre.
pub fn refine(proposals: &[Segment], values: &[PemValues], n: usize) -> Vec<Segment> {
    let n = n as f64;
    proposals
        .iter()
        .zip(values)
        .map(|(p, v)| {
            let d = p.len();
            let (sb, eb) = (p.start + v.ds * d, p.end + v.de * d);
            let c = p.center() + v.dc * d;
            let w = d * v.dlogw.clamp(-MAX_LOG_WIDTH_STEP, MAX_LOG_WIDTH_STEP).exp();
            let (sc, ec) = (c - 0.5 * w, c + 0.5 * w);
            let mut s = (0.5 * (sb + sc)).clamp(0.0, n);
            let mut e = (0.5 * (eb + ec)).clamp(0.0, n);
            if s > e {
                std::mem::swap(&mut s, &mut e);
            }
            if e - s < MIN_PROPOSAL_LEN {
                let mid = (0.5 * (s + e)).clamp(0.5 * MIN_PROPOSAL_LEN, n - 0.5 * MIN_PROPOSAL_LEN);
                s = mid - 0.5 * MIN_PROPOSAL_LEN;
                e = mid + 0.5 * MIN_PROPOSAL_LEN;
            }
            Segment::new(s, e)
        })
        .collect()
}

pub struct Backbone {
    pub enhanced: Var,
    pub projected: Var,
    pub start_logits: Var,
    pub end_logits: Var,
}

pub struct StageOutput {
    /// Proposals fed to this stage.
    pub proposals: Vec<Segment>,
    /// `[P, 4]`: `δs, δe`, proposal start and end logits.
    pub head_a: Var,
    /// `[P, 2]`: `δc, δlogw`.
    pub head_b: Var,
    /// `[P, 2]`: IoU classification and regression logits.
    pub head_c: Var,
    pub values: Vec<PemValues>,
    pub refined: Vec<Segment>,
}

pub struct DetectorOutput {
    pub start_logits: Var,
    pub end_logits: Var,
    pub stages: Vec<StageOutput>,
}

fn sigmoid(x: f64) -> f64 {
    crate::autodiff::kernels::sigmoid(x)
}

impl Detector {
    pub fn backbone(&self, g: &mut Graph, p: &Bound, features: Var) -> Result<Backbone> {
        let s = g.shape(features);
        let c = self.config.feat_dim;
        if s.len() != 2 || s[1] != c {
            return Err(Error::InvalidShape(format!("detector expects [N, {c}] features, got {s:?}")));
        }
        if c % self.config.groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "feature width {c} is not divisible by {} groups",
                self.config.groups
            )));
        }
        let enhanced = enhance(g, p, features, self.config.groups)?;
        let (start_logits, end_logits) = boundary_head(g, p, enhanced)?;
        let projected = g.linear(enhanced, p.get("det.roi.w"), p.get("det.roi.b"))?;
        let projected = g.relu(projected)?;
        Ok(Backbone { enhanced, projected, start_logits, end_logits })
    }

    pub fn stage(&self, g: &mut Graph, p: &Bound, bb: &Backbone, i: usize, proposals: Vec<Segment>) -> Result<StageOutput> {
        let n = g.shape(bb.projected)[0];
        let roi = roi_align(g, bb.projected, &proposals, &self.config.roi)?;
        let layers = self.config.pem_hidden.len() + 1;
        let head_a = mlp(g, p, &format!("det.pem{i}.a"), roi.boundary, layers)?;
        let head_b = mlp(g, p, &format!("det.pem{i}.b"), roi.extended, layers)?;
        let head_c = mlp(g, p, &format!("det.pem{i}.c"), roi.extended, layers)?;
        let (a, b, c) = (g.value(head_a).data(), g.value(head_b).data(), g.value(head_c).data());
        let values: Vec<PemValues> = (0..proposals.len())
            .map(|k| PemValues {
                ds: a[4 * k],
                de: a[4 * k + 1],
                prop_start: sigmoid(a[4 * k + 2]),
                prop_end: sigmoid(a[4 * k + 3]),
                dc: b[2 * k],
                dlogw: b[2 * k + 1],
                iou_cls: sigmoid(c[2 * k]),
                iou_reg: sigmoid(c[2 * k + 1]),
            })
            .collect();
        let refined = refine(&proposals, &values, n);
        Ok(StageOutput { proposals, head_a, head_b, head_c, values, refined })
    }

    /// Runs every stage, each on the detached refinement of the previous one.
    pub fn cascade(&self, g: &mut Graph, p: &Bound, bb: &Backbone, proposals: Vec<Segment>) -> Result<Vec<StageOutput>> {
        let mut stages = Vec::with_capacity(self.config.stages());
        let mut current = proposals;
        for i in 0..self.config.stages() {
            let out = self.stage(g, p, bb, i, current)?;
            current = out.refined.clone();
            stages.push(out);
        }
        Ok(stages)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, features: Var, proposals: Vec<Segment>) -> Result<DetectorOutput> {
        let bb = self.backbone(g, p, features)?;
        let stages = self.cascade(g, p, &bb, proposals)?;
        Ok(DetectorOutput { start_logits: bb.start_logits, end_logits: bb.end_logits, stages })
    }

    /// Start and end probabilities of a feature sequence, evaluated without a tape.
    pub fn boundary_probs(&self, features: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new(Mode::Eval);
        let p = self.params.bind(&mut g);
        let f = g.constant(features.clone());
        let bb = self.backbone(&mut g, &p, f)?;
        let s = g.value(bb.start_logits).data().iter().map(|&x| sigmoid(x)).collect();
        let e = g.value(bb.end_logits).data().iter().map(|&x| sigmoid(x)).collect();
        Ok((s, e))
    }
}

#[cfg(test)]
mod tests;
