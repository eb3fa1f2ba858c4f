use super::{Annotation, VideoSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fraction of an annotation that must survive clipping for it to be kept.
pub const CLIP_KEEP: f64 = 0.5;

/// Linear interpolation of `[N', C]` rows onto `n` evenly spaced positions;
/// the first and last rows are preserved.
pub fn rescale_sequence(features: &Tensor, n: usize) -> Result<Tensor> {
    let s = features.shape();
    if s.len() != 2 || s[0] < 2 || n < 2 {
        return Err(Error::InvalidArgument(format!("cannot rescale {s:?} to {n} rows")));
    }
    let (src, c) = (s[0], s[1]);
    if src == n {
        return Ok(features.clone());
    }
    let mut out = Vec::with_capacity(n * c);
    for j in 0..n {
        let x = (j * (src - 1)) as f64 / (n - 1) as f64;
        let i = (x.floor() as usize).min(src - 2);
        let w = x - i as f64;
        let (a, b) = (features.row(i), features.row(i + 1));
        out.extend(a.iter().zip(b).map(|(&a, &b)| a + w * (b - a)));
    }
    Tensor::new(vec![n, c], out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub offset: usize,
    pub video: VideoSample,
}

/// Windows of `window` snippets every `stride`; the last one is zero-padded
/// when it runs past the end. Annotations are clipped to each window and kept
/// when at least [`CLIP_KEEP`] of their length survives.
pub fn sliding_windows(video: &VideoSample, window: usize, stride: usize) -> Result<Vec<Window>> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument("window and stride must be positive".into()));
    }
    let n = video.len();
    let count = if n <= window { 1 } else { (n - window).div_ceil(stride) + 1 };
    let row = video.snippets.numel() / n;
    let mut shape = video.snippets.shape().to_vec();
    shape[0] = window;
    (0..count)
        .map(|w| {
            let offset = w * stride;
            let avail = n.min(offset + window) - offset;
            let mut data = video.snippets.data()[offset * row..(offset + avail) * row].to_vec();
            data.resize(window * row, 0.0);
            let (lo, hi) = (offset as f64, (offset + window) as f64);
            let annotations = video
                .annotations
                .iter()
                .filter_map(|a| {
                    let (s, e) = (a.start.max(lo), a.end.min(hi));
                    (e > s && (e - s) >= CLIP_KEEP * (a.end - a.start))
                        .then_some(Annotation { start: s - lo, end: e - lo, class: a.class })
                })
                .collect();
            Ok(Window {
                offset,
                video: VideoSample {
                    video_id: format!("{}@{offset}", video.video_id),
                    snippets: Tensor::new(shape.clone(), data)?,
                    annotations,
                },
            })
        })
        .collect()
}
