use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::stages::{
    aps_proposals, naive_e2e_step, sample_snippets, stage1_sequential_encode, stage2_detector_step,
    stage3_sampled_update, DETECTOR_PHASE, ENCODER_PHASE,
};
use super::{AdamW, OptimizerState};
use crate::autodiff::{Graph, Mode};
use crate::config::RunConfig;
use crate::detector::{init_detector, Detector, LossBreakdown};
use crate::encoder::{init_encoder, Encoder};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::synthdata::Dataset;
use crate::tadeval::{evaluate, EvalResult};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub epoch: usize,
    pub encoder: Encoder,
    pub detector: Detector,
    pub encoder_opt: OptimizerState,
    pub detector_opt: OptimizerState,
}

impl Checkpoint {
    /// Restores gradient buffers, which are not serialized.
    pub fn from_json(s: &str) -> Result<Self> {
        let mut c: Checkpoint = serde_json::from_str(s)?;
        c.encoder.params.reset_grads();
        c.detector.params.reset_grads();
        Ok(c)
    }
}

/// One epoch of training: mean losses over the epoch's videos, held-out
/// evaluation, and the epoch's peak bytes and FLOPs per phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub eval: EvalResult,
    pub peak_encoder_bytes: u64,
    pub peak_detector_bytes: u64,
    pub encoder_forward_flops: u64,
    pub encoder_backward_flops: u64,
    pub detector_forward_flops: u64,
    pub detector_backward_flops: u64,
    pub wall_seconds: f64,
}

impl MetricsRow {
    /// Column names; `wall_seconds` is last.
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["epoch".to_string(), "loss_total".into(), "l_bd_s".into()];
        for i in 0..self.loss.l_bd_p.len() {
            h.extend([format!("l_bd_p_{}", i + 1), format!("l_iou_{}", i + 1), format!("l_secw_{}", i + 1)]);
        }
        h.push("average_map".into());
        h.extend(self.eval.thresholds.iter().map(|t| format!("ap@{t:.2}")));
        h.extend(
            [
                "peak_bytes_encoder",
                "peak_bytes_detector",
                "flops_fwd_encoder",
                "flops_bwd_encoder",
                "flops_fwd_detector",
                "flops_bwd_detector",
                "wall_seconds",
            ]
            .map(String::from),
        );
        h
    }

    pub fn values(&self) -> Vec<String> {
        let l = &self.loss;
        let mut v = vec![self.epoch.to_string(), l.total.to_string(), l.l_bd_s.to_string()];
        for i in 0..l.l_bd_p.len() {
            v.extend([l.l_bd_p[i].to_string(), l.l_iou[i].to_string(), l.l_secw[i].to_string()]);
        }
        v.push(self.eval.average.to_string());
        v.extend(self.eval.ap.iter().map(f64::to_string));
        v.extend(
            [
                self.peak_encoder_bytes,
                self.peak_detector_bytes,
                self.encoder_forward_flops,
                self.encoder_backward_flops,
                self.detector_forward_flops,
                self.detector_backward_flops,
            ]
            .map(|x| x.to_string()),
        );
        v.push(format!("{:.3}", self.wall_seconds));
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRow>,
}

pub fn train(ds: &Dataset, cfg: &RunConfig) -> Result<TrainOutcome> {
    train_with(ds, cfg, |_| {})
}

/// Epoch loop over shuffled video batches. Every batch runs the three stages
/// (or the parallel baseline) per video with the loss weighted by one over
/// the batch size, then one optimizer step per parameter group. With
/// `gamma = 0` the encoder is never updated and its features are computed
/// once.
pub fn train_with(ds: &Dataset, cfg: &RunConfig, mut on_epoch: impl FnMut(&MetricsRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.train.is_empty() || ds.val.is_empty() {
        return Err(Error::InvalidArgument("training needs non-empty train and val splits".into()));
    }
    let n = cfg.dataset.snippets;
    if let Some(v) = ds.train.iter().chain(&ds.val).find(|v| v.len() != n) {
        return Err(Error::InvalidArgument(format!("{} has {} snippets, config says {n}", v.video_id, v.len())));
    }
    let s = &cfg.sgs;
    let mut encoder = init_encoder(&cfg.encoder, cfg.seed);
    let mut detector = init_detector(&cfg.detector, cfg.seed);
    let opt = AdamW::new(s.weight_decay);
    let mut encoder_opt = OptimizerState::new(&encoder.params);
    let mut detector_opt = OptimizerState::new(&detector.params);
    let frozen: Vec<bool> = encoder.params.names().iter().map(|n| s.freeze.contains(n)).collect();
    let encoder_trains = s.naive_e2e || s.gamma > 0.0;
    let mut cache: Vec<Option<Tensor>> = vec![None; ds.train.len()];

    let mut g = Graph::new(Mode::Train);
    let mut metrics = Vec::with_capacity(s.epochs);
    for epoch in 1..=s.epochs {
        let clock = Instant::now();
        g.reset_profile();
        for phase in [ENCODER_PHASE, DETECTOR_PHASE] {
            g.begin_phase(phase);
        }
        let lr_scale = if epoch > s.decay_after { s.lr_decay } else { 1.0 };
        let mut order: Vec<usize> = (0..ds.train.len()).collect();
        let mut rng = stream(cfg.seed, &format!("train.order.{epoch}"));
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut epoch_loss = LossBreakdown::default();
        for batch in order.chunks(s.batch_videos) {
            let weight = 1.0 / batch.len() as f64;
            for &vi in batch {
                let mut video = ds.train[vi].clone();
                if !cfg.augment.is_identity() {
                    video = cfg.augment.apply(&video, &mut stream(cfg.seed, &format!("augment.{epoch}.{vi}")))?;
                }
                let gt = video.segments();
                let mut aps_rng = stream(cfg.seed, &format!("aps.{epoch}.{vi}"));
                let loss = if s.naive_e2e {
                    naive_e2e_step(&mut g, &mut encoder, &mut detector, &video, &cfg.aps, &mut aps_rng, weight)?.0
                } else {
                    let features = match &cache[vi] {
                        Some(f) => f.clone(),
                        None => {
                            let f = stage1_sequential_encode(&mut g, &encoder, &video, s.micro_batch)?;
                            if !encoder_trains && cfg.augment.is_identity() {
                                cache[vi] = Some(f.clone());
                            }
                            f
                        }
                    };
                    let proposals = aps_proposals(n, &gt, &features, &cfg.aps, &mut aps_rng)?;
                    let step = stage2_detector_step(&mut g, &mut detector, &features, &gt, proposals, weight)?;
                    if encoder_trains {
                        let mut rng = stream(cfg.seed, &format!("sgs.{epoch}.{vi}"));
                        let idx = sample_snippets(n, s.gamma, s.snippet_sampler, &features, &mut rng)?;
                        let scale = if s.rescale { 1.0 / s.gamma } else { 1.0 };
                        stage3_sampled_update(&mut g, &mut encoder, &video, &step.feature_grads, &idx, s.micro_batch, scale)?;
                    }
                    step.loss
                };
                epoch_loss.add_scaled(&loss, 1.0 / ds.train.len() as f64);
            }
            opt.step(&mut detector.params, &mut detector_opt, s.lr_detector * lr_scale, &[])?;
            if encoder_trains {
                opt.step(&mut encoder.params, &mut encoder_opt, s.lr_encoder * lr_scale, &frozen)?;
            }
        }
        let mem = g.snapshot_memory();
        let flops = g.read_flops();
        let eval = evaluate(&ds.val, &encoder, &detector, &cfg.inference, &cfg.thresholds)?;
        let row = MetricsRow {
            epoch,
            loss: epoch_loss,
            eval,
            peak_encoder_bytes: mem.peak(ENCODER_PHASE),
            peak_detector_bytes: mem.peak(DETECTOR_PHASE),
            encoder_forward_flops: flops.forward(ENCODER_PHASE),
            encoder_backward_flops: flops.backward(ENCODER_PHASE),
            detector_forward_flops: flops.forward(DETECTOR_PHASE),
            detector_backward_flops: flops.backward(DETECTOR_PHASE),
            wall_seconds: clock.elapsed().as_secs_f64(),
        };
        if !row.loss.total.is_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch} loss")));
        }
        on_epoch(&row);
        metrics.push(row);
    }
    let checkpoint = Checkpoint { config: cfg.clone(), epoch: s.epochs, encoder, detector, encoder_opt, detector_opt };
    Ok(TrainOutcome { checkpoint, metrics })
}
