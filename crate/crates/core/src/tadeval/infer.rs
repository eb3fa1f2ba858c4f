//! Inference path: sequential encoding, boundary candidates, optional grid
//! subsampling, cascade refinement, score fusion and soft-NMS.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{compute_map, enumerate_proposals, fuse_scores, proposal_segment, select_boundaries, soft_nms};
use super::{Detection, EvalResult, NmsConfig, ScoreParts, Segment};
use crate::autodiff::{kernels::sigmoid, Graph, Mode};
use crate::detector::{Detector, PemValues};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::samplers::{grid_1d, grid_proposal_map, sample_count};
use crate::synthdata::VideoSample;
use crate::tensor::Tensor;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "ETAD_LAB_THREADS";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    /// Pairs of boundary peaks.
    #[default]
    Select,
    /// Every proposal of the dense map.
    Enumerate,
}

/// How the two IoU scores of a stage combine into `p_iou`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouFusion {
    #[default]
    Product,
    Classification,
    Regression,
}

impl IouFusion {
    fn apply(self, v: &PemValues) -> f64 {
        match self {
            IouFusion::Product => v.iou_cls * v.iou_reg,
            IouFusion::Classification => v.iou_cls,
            IouFusion::Regression => v.iou_reg,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub candidates: CandidateMode,
    /// Fraction of candidates kept by grid sampling; 1 keeps all.
    pub aps_ratio: f64,
    pub iou_fusion: IouFusion,
    pub nms: NmsConfig,
    pub micro_batch: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            candidates: CandidateMode::Select,
            aps_ratio: 1.0,
            iou_fusion: IouFusion::Product,
            nms: NmsConfig::default(),
            micro_batch: 4,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if !(self.aps_ratio > 0.0 && self.aps_ratio <= 1.0) {
            errors.push(format!("inference.aps_ratio must lie in (0, 1], got {}", self.aps_ratio));
        }
        if self.micro_batch == 0 {
            errors.push("inference.micro_batch must be at least 1".into());
        }
        self.nms.validate(errors);
    }
}

/// Detections for one feature sequence `[N, C]`.
pub fn infer_features(video_id: &str, features: &Tensor, detector: &Detector, cfg: &InferenceConfig) -> Result<Vec<Detection>> {
    let n = features.shape()[0];
    let mut g = Graph::new(Mode::Eval);
    let p = detector.params.bind(&mut g);
    let f = g.constant(features.clone());
    let bb = detector.backbone(&mut g, &p, f)?;
    let sp: Vec<f64> = g.value(bb.start_logits).data().iter().map(|&x| sigmoid(x)).collect();
    let ep: Vec<f64> = g.value(bb.end_logits).data().iter().map(|&x| sigmoid(x)).collect();

    let pairs = match cfg.candidates {
        CandidateMode::Select => select_boundaries(&sp, &ep),
        CandidateMode::Enumerate if n >= 2 => enumerate_proposals(n)?,
        CandidateMode::Enumerate => Vec::new(),
    };
    let k = sample_count(pairs.len(), cfg.aps_ratio);
    let pairs: Vec<(usize, usize)> = if k == pairs.len() {
        pairs
    } else {
        let keep = match cfg.candidates {
            CandidateMode::Select => grid_1d(pairs.len(), k),
            CandidateMode::Enumerate => grid_proposal_map(n, k),
        };
        keep.into_iter().map(|i| pairs[i]).collect()
    };
    if pairs.is_empty() {
        return Ok(Vec::new());
    }

    let proposals: Vec<Segment> = pairs.iter().map(|&(s, e)| proposal_segment(s, e)).collect();
    let stages = detector.cascade(&mut g, &p, &bb, proposals)?;
    let m = stages.len() as f64;
    let dets: Vec<Detection> = pairs
        .iter()
        .enumerate()
        .map(|(i, &(s, e))| {
            let start = stages.iter().map(|st| st.refined[i].start).sum::<f64>() / m;
            let end = stages.iter().map(|st| st.refined[i].end).sum::<f64>() / m;
            let p_iou = stages.iter().map(|st| cfg.iou_fusion.apply(&st.values[i])).sum::<f64>() / m;
            let components = ScoreParts { p_s: sp[s], p_e: ep[e], p_iou };
            Detection {
                video_id: video_id.to_string(),
                start,
                end,
                score: fuse_scores(components.p_s, components.p_e, components.p_iou),
                components,
            }
        })
        .collect();
    if dets.iter().any(|d| !d.score.is_finite()) {
        return Err(Error::NonFinite(format!("detection score for {video_id}")));
    }
    Ok(soft_nms(&dets, &cfg.nms))
}

/// Encodes `video` sequentially in eval mode and runs [`infer_features`].
pub fn infer(video: &VideoSample, encoder: &Encoder, detector: &Detector, cfg: &InferenceConfig) -> Result<Vec<Detection>> {
    let mut g = Graph::new(Mode::Eval);
    let features = encoder.encode_sequential(&mut g, &video.snippets, cfg.micro_batch)?;
    infer_features(&video.video_id, &features, detector, cfg)
}

/// Worker cap from [`THREADS_ENV`]; 1 when unset or invalid.
pub fn thread_cap() -> usize {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()).filter(|&t: &usize| t >= 1).unwrap_or(1)
}

/// Runs `f` over `items` on up to [`thread_cap`] threads, keeping input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let threads = thread_cap().min(items.len().max(1));
    if threads <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    let parts: Vec<Result<Vec<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Result<Vec<R>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("inference worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Detections of every video, concatenated in input order.
pub fn infer_all(videos: &[VideoSample], encoder: &Encoder, detector: &Detector, cfg: &InferenceConfig) -> Result<Vec<Detection>> {
    Ok(parallel_map(videos, |v| infer(v, encoder, detector, cfg))?.into_iter().flatten().collect())
}

pub fn ground_truth(videos: &[VideoSample]) -> BTreeMap<String, Vec<Segment>> {
    videos.iter().map(|v| (v.video_id.clone(), v.segments())).collect()
}

pub fn evaluate(
    videos: &[VideoSample],
    encoder: &Encoder,
    detector: &Detector,
    cfg: &InferenceConfig,
    thresholds: &[f64],
) -> Result<EvalResult> {
    let dets = infer_all(videos, encoder, detector, cfg)?;
    compute_map(&dets, &ground_truth(videos), thresholds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{init_detector, DetectorConfig};
    use crate::encoder::{init_encoder, EncoderConfig};
    use crate::synthdata::{generate_dataset, DatasetConfig};

    fn setup() -> (VideoSample, Encoder, Detector) {
        let ds = generate_dataset(&DatasetConfig { n_train: 1, n_val: 0, snippets: 24, ..DatasetConfig::default() }).unwrap();
        let enc = init_encoder(&EncoderConfig { out_dim: 16, ..EncoderConfig::default() }, 1);
        let det = init_detector(
            &DetectorConfig { feat_dim: 16, boundary_hidden: 8, roi_dim: 2, pem_hidden: vec![4], ..DetectorConfig::default() },
            2,
        );
        (ds.train[0].clone(), enc, det)
    }

    #[test]
    fn detections_are_valid_segments() {
        let (v, enc, det) = setup();
        for candidates in [CandidateMode::Select, CandidateMode::Enumerate] {
            let cfg = InferenceConfig { candidates, ..InferenceConfig::default() };
            let dets = infer(&v, &enc, &det, &cfg).unwrap();
            assert!(!dets.is_empty());
            for d in &dets {
                assert!(0.0 <= d.start && d.start < d.end && d.end <= 24.0, "{d:?}");
                assert_eq!(d.video_id, v.video_id);
            }
        }
    }

    #[test]
    fn full_ratio_equals_no_sampling() {
        let (v, enc, det) = setup();
        let cfg = InferenceConfig { candidates: CandidateMode::Enumerate, ..InferenceConfig::default() };
        let a = infer(&v, &enc, &det, &cfg).unwrap();
        let b = infer(&v, &enc, &det, &InferenceConfig { aps_ratio: 1.0, ..cfg.clone() }).unwrap();
        assert_eq!(a, b);
        let c = infer(&v, &enc, &det, &InferenceConfig { aps_ratio: 0.1, nms: NmsConfig { top_k: 1000, ..NmsConfig::default() }, ..cfg }).unwrap();
        assert!(c.len() <= sample_count(24 * 23 / 2, 0.1));
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<usize> = (0..17).collect();
        let out = parallel_map(&items, |&i| Ok(i * 2)).unwrap();
        assert_eq!(out, items.iter().map(|i| i * 2).collect::<Vec<_>>());
    }
}
