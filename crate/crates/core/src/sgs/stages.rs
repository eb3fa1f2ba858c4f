use super::ApsConfig;
use crate::autodiff::{Graph, Mode};
use crate::detector::{compute_loss, Detector, LossBreakdown};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::samplers::{sample, sample_count, Layout, SampleRequest, Strategy};
use crate::synthdata::VideoSample;
use crate::tadeval::{enumerate_proposals, proposal_segment, tiou, Segment};
use crate::tensor::Tensor;

/// Profiler phase of every encoder pass.
pub const ENCODER_PHASE: &str = "encoder";
/// Profiler phase of every detector pass.
pub const DETECTOR_PHASE: &str = "detector";

/// Stage 1: eval-mode encoding in micro-batches of `k`; nothing is retained.
pub fn stage1_sequential_encode(g: &mut Graph, encoder: &Encoder, video: &VideoSample, k: usize) -> Result<Tensor> {
    g.begin_phase(ENCODER_PHASE);
    encoder.encode_sequential(g, &video.snippets, k)
}

/// Training proposals: a sample of the dense map over `n` snippets.
/// Feature-guided strategies embed a proposal as its start and end feature
/// rows; `iou_balanced` labels are the best tIoU against `gt` and
/// `scale_balanced` labels the length over `n`.
pub fn aps_proposals(
    n: usize,
    gt: &[Segment],
    features: &Tensor,
    cfg: &ApsConfig,
    rng: &mut StreamRng,
) -> Result<Vec<Segment>> {
    let pairs = enumerate_proposals(n)?;
    let segments: Vec<Segment> = pairs.iter().map(|&(s, e)| proposal_segment(s, e)).collect();
    let k = sample_count(pairs.len(), cfg.ratio);
    let embeddings = if cfg.strategy.needs_embeddings() {
        let rows: Vec<Vec<f64>> = pairs.iter().map(|&(s, e)| [features.row(s), features.row(e)].concat()).collect();
        Some(Tensor::from_rows(&rows)?)
    } else {
        None
    };
    let labels: Option<Vec<f64>> = match cfg.strategy {
        Strategy::IouBalanced => {
            Some(segments.iter().map(|p| gt.iter().map(|g| tiou(*p, *g)).fold(0.0, f64::max)).collect())
        }
        Strategy::ScaleBalanced => Some(segments.iter().map(|p| p.len() / n as f64).collect()),
        _ => None,
    };
    let mut req = SampleRequest::new(pairs.len(), k, cfg.strategy).layout(Layout::ProposalMap { t: n });
    if let Some(e) = &embeddings {
        req = req.embeddings(e);
    }
    if let Some(l) = &labels {
        req = req.labels(l);
    }
    Ok(sample(&req, rng)?.into_iter().map(|i| segments[i]).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorStep {
    pub loss: LossBreakdown,
    /// `∂(seed · L) / ∂F`, detached.
    pub feature_grads: Tensor,
}

/// Stage 2: detector forward and backward on detached features. The loss is
/// backpropagated with weight `seed`; detector parameter gradients are
/// accumulated into `detector.params`.
pub fn stage2_detector_step(
    g: &mut Graph,
    detector: &mut Detector,
    features: &Tensor,
    gt: &[Segment],
    proposals: Vec<Segment>,
    seed: f64,
) -> Result<DetectorStep> {
    g.clear();
    g.set_mode(Mode::Train);
    g.begin_phase(DETECTOR_PHASE);
    let f = g.input(features.clone());
    let p = detector.params.bind(g);
    let out = detector.forward(g, &p, f, proposals)?;
    let loss = compute_loss(g, &out, gt, &detector.config.labels)?;
    g.backward(loss.total, &Tensor::scalar(seed))?;
    let feature_grads = g.take_grad(f).unwrap_or_else(|| Tensor::zeros(features.shape()));
    detector.params.accumulate_grads(g, &p);
    g.clear();
    if !feature_grads.all_finite() {
        return Err(Error::NonFinite("feature gradients".into()));
    }
    Ok(DetectorStep { loss: loss.breakdown, feature_grads })
}

/// Snippets whose feature gradients reach the encoder: `round(gamma * n)` of
/// them, sorted.
pub fn sample_snippets(
    n: usize,
    gamma: f64,
    strategy: Strategy,
    features: &Tensor,
    rng: &mut StreamRng,
) -> Result<Vec<usize>> {
    let k = sample_count(n, gamma);
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut req = SampleRequest::new(n, k, strategy);
    if strategy.needs_embeddings() {
        req = req.embeddings(features);
    }
    sample(&req, rng)
}

/// Stage 3: re-encodes the `indices` snippets in train mode, `k` at a time,
/// seeding each backward with the matching rows of `feature_grads` times
/// `scale`. Encoder gradients accumulate into `encoder.params`.
pub fn stage3_sampled_update(
    g: &mut Graph,
    encoder: &mut Encoder,
    video: &VideoSample,
    feature_grads: &Tensor,
    indices: &[usize],
    k: usize,
    scale: f64,
) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("micro-batch size must be at least 1".into()));
    }
    if feature_grads.rows() != video.len() {
        return Err(Error::InvalidShape(format!(
            "{} feature-gradient rows for {} snippets",
            feature_grads.rows(),
            video.len()
        )));
    }
    g.set_mode(Mode::Train);
    g.begin_phase(ENCODER_PHASE);
    for chunk in indices.chunks(k) {
        g.clear();
        let p = encoder.params.bind(g);
        let x = g.constant(video.snippets.select_rows(chunk)?);
        let y = encoder.forward(g, &p, x)?;
        let mut seed = feature_grads.select_rows(chunk)?;
        if scale != 1.0 {
            seed.scale(scale);
        }
        g.backward(y, &seed)?;
        encoder.params.accumulate_grads(g, &p);
    }
    g.clear();
    Ok(())
}

/// The parallel baseline: every snippet encoded in one train-mode batch,
/// then the detector, then a single backward with weight `seed`. Gradients of
/// both models accumulate. Returns the loss and the encoded features.
#[allow(clippy::too_many_arguments)]
pub fn naive_e2e_step(
    g: &mut Graph,
    encoder: &mut Encoder,
    detector: &mut Detector,
    video: &VideoSample,
    aps: &ApsConfig,
    rng: &mut StreamRng,
    seed: f64,
) -> Result<(LossBreakdown, Tensor)> {
    g.clear();
    g.set_mode(Mode::Train);
    g.begin_phase(ENCODER_PHASE);
    let pe = encoder.params.bind(g);
    let x = g.constant(video.snippets.clone());
    let f = encoder.forward(g, &pe, x)?;
    let features = g.value(f).clone();
    let gt = video.segments();
    let proposals = aps_proposals(video.len(), &gt, &features, aps, rng)?;
    g.begin_phase(DETECTOR_PHASE);
    let pd = detector.params.bind(g);
    let out = detector.forward(g, &pd, f, proposals)?;
    let loss = compute_loss(g, &out, &gt, &detector.config.labels)?;
    g.backward(loss.total, &Tensor::scalar(seed))?;
    encoder.params.accumulate_grads(g, &pe);
    detector.params.accumulate_grads(g, &pd);
    g.clear();
    Ok((loss.breakdown, features))
}
