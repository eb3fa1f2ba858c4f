//! Seeded synthetic untrimmed videos.
//!
//! Each frame holds a latent `z` of width `D`: unit Gaussian noise scaled by
//! `1/snr`, plus a class pattern inside action segments or a constant
//! distractor vector inside distractor segments. Class patterns flip sign on
//! every frame, so their frame average is zero and a linear read of pooled
//! frames cannot see them. The stored frame is `g(M z)` with `M` a fixed
//! random orthogonal matrix and `g(x) = x + 0.1 x^3`.

mod io;
mod windows;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};
use crate::tadeval::Segment;
use crate::tensor::Tensor;

pub use io::{index_checksum, load_dataset, save_dataset, INDEX_FILE};
pub use windows::{rescale_sequence, sliding_windows, Window, CLIP_KEEP};

/// Cubic coefficient of the elementwise warp.
pub const WARP: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub start: f64,
    pub end: f64,
    pub class: usize,
}

impl Annotation {
    pub fn segment(&self) -> Segment {
        Segment::new(self.start, self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoSample {
    pub video_id: String,
    /// `[N, T_f, D]`.
    pub snippets: Tensor,
    pub annotations: Vec<Annotation>,
}

impl VideoSample {
    pub fn len(&self) -> usize {
        self.snippets.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segments(&self) -> Vec<Segment> {
        self.annotations.iter().map(Annotation::segment).collect()
    }

    /// Checks ordering, range and disjointness of the annotations.
    pub fn validate(&self) -> Result<()> {
        let n = self.len() as f64;
        let mut prev_end = 0.0;
        for a in &self.annotations {
            if !(0.0 <= a.start && a.start < a.end && a.end <= n) || a.start < prev_end {
                return Err(Error::InvalidArgument(format!(
                    "{}: annotation [{}, {}] out of order or range",
                    self.video_id, a.start, a.end
                )));
            }
            prev_end = a.end;
        }
        Ok(())
    }
}

/// Mixture of duration ranges, as fractions of `N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DurationMix {
    pub weights: [f64; 3],
    pub ranges: [[f64; 2]; 3],
}

impl Default for DurationMix {
    fn default() -> Self {
        Self { weights: [0.4, 0.4, 0.2], ranges: [[0.03, 0.08], [0.08, 0.2], [0.2, 0.35]] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub snippets: usize,
    pub frames: usize,
    pub frame_dim: usize,
    pub n_classes: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    pub durations: DurationMix,
    /// Distractor segments per video, drawn uniformly from `0..=max_distractors`.
    pub max_distractors: usize,
    /// Pattern amplitude over noise standard deviation; `None` disables noise.
    pub snr: Option<f64>,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 32,
            n_val: 16,
            snippets: 128,
            frames: 4,
            frame_dim: 8,
            n_classes: 3,
            min_actions: 1,
            max_actions: 3,
            durations: DurationMix::default(),
            max_distractors: 2,
            snr: Some(3.0),
            seed: 0,
        }
    }
}

fn min_len(frac: f64, n: usize) -> usize {
    ((frac * n as f64).round() as usize).max(1)
}

impl DatasetConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        for (name, v) in [
            ("dataset.n_train", self.n_train),
            ("dataset.snippets", self.snippets),
            ("dataset.frames", self.frames),
            ("dataset.frame_dim", self.frame_dim),
            ("dataset.n_classes", self.n_classes),
        ] {
            if v == 0 {
                errors.push(format!("{name} must be positive"));
            }
        }
        if self.min_actions > self.max_actions {
            errors.push("dataset.min_actions exceeds dataset.max_actions".into());
        }
        let d = &self.durations;
        if d.weights.iter().any(|w| !(*w >= 0.0)) || d.weights.iter().sum::<f64>() <= 0.0 {
            errors.push("dataset.durations.weights must be non-negative with a positive sum".into());
        }
        if d.ranges.iter().any(|r| !(0.0 < r[0] && r[0] <= r[1] && r[1] <= 1.0)) {
            errors.push("dataset.durations.ranges must satisfy 0 < lo <= hi <= 1".into());
        }
        if let Some(snr) = self.snr {
            if !(snr > 0.0 && snr.is_finite()) {
                errors.push("dataset.snr must be positive and finite, or null".into());
            }
        }
        if let Err(e) = self.check_packing() {
            errors.push(e.to_string());
        }
    }

    /// Rejects configs whose shortest possible segments cannot all fit.
    pub fn check_packing(&self) -> Result<()> {
        let shortest = self
            .durations
            .ranges
            .iter()
            .zip(self.durations.weights)
            .filter(|(_, w)| *w > 0.0)
            .map(|(r, _)| min_len(r[0], self.snippets))
            .min()
            .unwrap_or(1);
        let need = (self.max_actions + self.max_distractors) * shortest;
        if need > self.snippets {
            return Err(Error::Infeasible(format!(
                "{} actions and {} distractors of at least {shortest} snippets need {need} > {} snippets",
                self.max_actions, self.max_distractors, self.snippets
            )));
        }
        Ok(())
    }
}

/// Fixed per-dataset generator state.
#[derive(Clone, Debug)]
pub struct Generator {
    pub config: DatasetConfig,
    /// `[D, D]` orthogonal mixing matrix.
    pub mixing: DMatrix<f64>,
    /// Per class, `[T_f, D]` latent pattern.
    pub patterns: Vec<Vec<Vec<f64>>>,
}

fn unit_vector(rng: &mut StreamRng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Inverse of `x + WARP x^3`, which is strictly increasing.
pub fn unwarp(y: f64) -> f64 {
    let mut x = y.signum() * y.abs().cbrt().min(y.abs());
    for _ in 0..60 {
        let f = x + WARP * x * x * x - y;
        let step = f / (1.0 + 3.0 * WARP * x * x);
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

pub fn warp(x: f64) -> f64 {
    x + WARP * x * x * x
}

impl Generator {
    pub fn new(config: &DatasetConfig) -> Result<Self> {
        let mut errors = Vec::new();
        config.validate(&mut errors);
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let d = config.frame_dim;
        let mut rng = stream(config.seed, "synth.mixing");
        let gauss = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        let mixing = gauss.qr().q();
        let mut rng = stream(config.seed, "synth.patterns");
        let patterns = (0..config.n_classes)
            .map(|_| {
                let u = unit_vector(&mut rng, d);
                (0..config.frames)
                    .map(|f| {
                        let sign = if f % 2 == 0 { 1.0 } else { -1.0 };
                        u.iter().map(|x| sign * x).collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { config: config.clone(), mixing, patterns })
    }

    fn sample_duration(&self, rng: &mut StreamRng) -> usize {
        let mix = &self.config.durations;
        let total: f64 = mix.weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut bin = mix.weights.len() - 1;
        for (i, w) in mix.weights.iter().enumerate() {
            if u < *w {
                bin = i;
                break;
            }
            u -= w;
        }
        let [lo, hi] = mix.ranges[bin];
        let frac = lo + (hi - lo) * rng.random::<f64>();
        min_len(frac, self.config.snippets)
    }

    /// Lays out segments of the given lengths in a random order with random
    /// gaps; returns `(start, len, slot)` sorted by start.
    fn pack(&self, lens: &[usize], rng: &mut StreamRng) -> Vec<(usize, usize, usize)> {
        let n = self.config.snippets;
        let free = n - lens.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..lens.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        // Stars and bars: `lens.len() + 1` gaps summing to `free`.
        let mut cuts: Vec<usize> = (0..lens.len()).map(|_| rng.random_range(0..=free)).collect();
        cuts.sort_unstable();
        let mut out = Vec::with_capacity(lens.len());
        let mut pos = 0;
        let mut prev_cut = 0;
        for (slot, &cut) in order.iter().zip(&cuts) {
            pos += cut - prev_cut;
            prev_cut = cut;
            out.push((pos, lens[*slot], *slot));
            pos += lens[*slot];
        }
        out
    }

    fn frame(&self, latent: &[f64], out: &mut [f64]) {
        let d = self.config.frame_dim;
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..d {
                acc += self.mixing[(i, j)] * latent[j];
            }
            *o = warp(acc);
        }
    }

    pub fn video(&self, split: &str, index: usize) -> Result<VideoSample> {
        let c = &self.config;
        let mut rng = stream(c.seed, &format!("synth.{split}.{index}"));
        let n_actions = rng.random_range(c.min_actions..=c.max_actions);
        let n_distractors = rng.random_range(0..=c.max_distractors);
        let total = n_actions + n_distractors;
        let mut lens = Vec::new();
        for attempt in 0.. {
            lens = (0..total).map(|_| self.sample_duration(&mut rng)).collect();
            if lens.iter().sum::<usize>() <= c.snippets {
                break;
            }
            if attempt == 100 {
                return Err(Error::Infeasible(format!(
                    "could not pack {total} segments into {} snippets",
                    c.snippets
                )));
            }
        }
        let classes: Vec<usize> = (0..n_actions).map(|_| rng.random_range(0..c.n_classes)).collect();
        let distractors: Vec<Vec<f64>> = (0..n_distractors).map(|_| unit_vector(&mut rng, c.frame_dim)).collect();
        let placed = self.pack(&lens, &mut rng);

        // Per snippet: None for background, Some(slot) inside a segment.
        let mut owner = vec![None; c.snippets];
        let mut annotations = Vec::new();
        for &(start, len, slot) in &placed {
            owner[start..start + len].iter_mut().for_each(|o| *o = Some(slot));
            if slot < n_actions {
                annotations.push(Annotation {
                    start: start as f64,
                    end: (start + len) as f64,
                    class: classes[slot],
                });
            }
        }
        let noise = c.snr.map_or(0.0, |s| 1.0 / s);
        let mut data = vec![0.0; c.snippets * c.frames * c.frame_dim];
        let mut latent = vec![0.0; c.frame_dim];
        for (i, snippet) in data.chunks_mut(c.frames * c.frame_dim).enumerate() {
            for (f, frame) in snippet.chunks_mut(c.frame_dim).enumerate() {
                for (j, z) in latent.iter_mut().enumerate() {
                    let eps: f64 = if noise > 0.0 { StandardNormal.sample(&mut rng) } else { 0.0 };
                    *z = noise * eps
                        + match owner[i] {
                            Some(s) if s < n_actions => self.patterns[classes[s]][f][j],
                            Some(s) => distractors[s - n_actions][j],
                            None => 0.0,
                        };
                }
                self.frame(&latent, frame);
            }
        }
        let video = VideoSample {
            video_id: format!("{split}_{index:04}"),
            snippets: Tensor::new(vec![c.snippets, c.frames, c.frame_dim], data)?,
            annotations,
        };
        video.validate()?;
        Ok(video)
    }

    /// Recovers the latent of one stored frame.
    pub fn invert_frame(&self, frame: &[f64]) -> Vec<f64> {
        let y: Vec<f64> = frame.iter().map(|&v| unwarp(v)).collect();
        let d = self.config.frame_dim;
        (0..d).map(|j| (0..d).map(|i| self.mixing[(i, j)] * y[i]).sum()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<VideoSample>,
    pub val: Vec<VideoSample>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&[VideoSample]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    let gen = Generator::new(config)?;
    let train = (0..config.n_train).map(|i| gen.video("train", i)).collect::<Result<_>>()?;
    let val = (0..config.n_val).map(|i| gen.video("val", i)).collect::<Result<_>>()?;
    Ok(Dataset { config: config.clone(), train, val })
}

/// Optional training-time jitter: additive Gaussian noise on every value and
/// a temporal shift of at most `max_shift` snippets with edge replication.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Augment {
    pub noise: f64,
    pub max_shift: usize,
}

impl Augment {
    pub fn is_identity(&self) -> bool {
        self.noise == 0.0 && self.max_shift == 0
    }

    pub fn apply(&self, video: &VideoSample, rng: &mut StreamRng) -> Result<VideoSample> {
        let n = video.len();
        let row = video.snippets.numel() / n;
        let shift = if self.max_shift > 0 {
            rng.random_range(-(self.max_shift as i64)..=self.max_shift as i64)
        } else {
            0
        };
        let src = video.snippets.data();
        let mut data = Vec::with_capacity(src.len());
        for i in 0..n as i64 {
            let j = (i - shift).clamp(0, n as i64 - 1) as usize;
            data.extend_from_slice(&src[j * row..(j + 1) * row]);
        }
        if self.noise > 0.0 {
            for v in &mut data {
                let eps: f64 = StandardNormal.sample(rng);
                *v += self.noise * eps;
            }
        }
        let annotations = video
            .annotations
            .iter()
            .filter_map(|a| {
                let (s, e) = ((a.start + shift as f64).max(0.0), (a.end + shift as f64).min(n as f64));
                (s < e).then_some(Annotation { start: s, end: e, class: a.class })
            })
            .collect();
        Ok(VideoSample {
            video_id: video.video_id.clone(),
            snippets: Tensor::new(video.snippets.shape().to_vec(), data)?,
            annotations,
        })
    }
}

#[cfg(test)]
mod tests;
