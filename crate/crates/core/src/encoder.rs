//! Toy snippet encoder.
//!
//! `conv1d(D->w, k3) -> relu -> conv1d(w->w, k3) -> relu -> mean over frames
//! -> affine(w->h) -> relu -> affine(h->C)`. No op mixes rows of the batch
//! axis, so the features of a snippet do not depend on its micro-batch.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mode, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamSet};
use crate::rng::{stream, uniform_tensor};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub frames: usize,
    pub frame_dim: usize,
    pub conv_width: usize,
    pub hidden: usize,
    pub out_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { frames: 4, frame_dim: 8, conv_width: 32, hidden: 64, out_dim: 64 }
    }
}

impl EncoderConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        for (name, v) in [
            ("encoder.frames", self.frames),
            ("encoder.frame_dim", self.frame_dim),
            ("encoder.conv_width", self.conv_width),
            ("encoder.hidden", self.hidden),
            ("encoder.out_dim", self.out_dim),
        ] {
            if v == 0 {
                errors.push(format!("{name} must be positive"));
            }
        }
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (d, w, h, c) = (self.frame_dim, self.conv_width, self.hidden, self.out_dim);
        3 * d * w + w + 3 * w * w + w + w * h + h + h * c + c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParamSet,
}

pub const ENCODER_PARAMS: [&str; 8] = [
    "enc.conv1.w",
    "enc.conv1.b",
    "enc.conv2.w",
    "enc.conv2.b",
    "enc.fc1.w",
    "enc.fc1.b",
    "enc.fc2.w",
    "enc.fc2.b",
];

/// Weights uniform in `±sqrt(1/fan_in)`, biases zero.
pub fn init_encoder(config: &EncoderConfig, seed: u64) -> Encoder {
    let mut rng = stream(seed, "encoder.init");
    let (d, w, h, c) = (config.frame_dim, config.conv_width, config.hidden, config.out_dim);
    let mut params = ParamSet::new();
    let mut weight = |shape: &[usize], fan_in: usize| {
        uniform_tensor(&mut rng, shape, (1.0 / fan_in as f64).sqrt())
    };
    let conv1 = weight(&[3, d, w], 3 * d);
    let conv2 = weight(&[3, w, w], 3 * w);
    let fc1 = weight(&[w, h], w);
    let fc2 = weight(&[h, c], h);
    params.insert(ENCODER_PARAMS[0], conv1);
    params.insert(ENCODER_PARAMS[1], Tensor::zeros(&[w]));
    params.insert(ENCODER_PARAMS[2], conv2);
    params.insert(ENCODER_PARAMS[3], Tensor::zeros(&[w]));
    params.insert(ENCODER_PARAMS[4], fc1);
    params.insert(ENCODER_PARAMS[5], Tensor::zeros(&[h]));
    params.insert(ENCODER_PARAMS[6], fc2);
    params.insert(ENCODER_PARAMS[7], Tensor::zeros(&[c]));
    Encoder { config: config.clone(), params }
}

impl Encoder {
    /// Builds the forward graph for `x: [K, frames, frame_dim]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 3 || s[1] != self.config.frames || s[2] != self.config.frame_dim {
            return Err(Error::InvalidShape(format!(
                "encoder expects [K, {}, {}], got {:?}",
                self.config.frames, self.config.frame_dim, s
            )));
        }
        let h = g.conv1d(x, p.get("enc.conv1.w"))?;
        let h = g.add_bias(h, p.get("enc.conv1.b"))?;
        let h = g.relu(h)?;
        let h = g.conv1d(h, p.get("enc.conv2.w"))?;
        let h = g.add_bias(h, p.get("enc.conv2.b"))?;
        let h = g.relu(h)?;
        let h = g.mean_axis(h, 1)?;
        let h = g.linear(h, p.get("enc.fc1.w"), p.get("enc.fc1.b"))?;
        let h = g.relu(h)?;
        g.linear(h, p.get("enc.fc2.w"), p.get("enc.fc2.b"))
    }

    /// Encodes `[N, frames, frame_dim]` in eval mode, `k` snippets at a time,
    /// on `g`. The graph is cleared per chunk, so nothing is retained.
    pub fn encode_sequential(&self, g: &mut Graph, snippets: &Tensor, k: usize) -> Result<Tensor> {
        if k == 0 {
            return Err(Error::InvalidArgument("micro-batch size must be at least 1".into()));
        }
        let n = snippets.shape()[0];
        g.set_mode(Mode::Eval);
        let mut parts = Vec::with_capacity(n.div_ceil(k));
        for start in (0..n).step_by(k) {
            g.clear();
            let p = self.params.bind(g);
            let x = g.constant(snippets.row_range(start, k.min(n - start))?);
            let y = self.forward(g, &p, x)?;
            parts.push(g.value(y).clone());
        }
        g.clear();
        Tensor::concat_rows(&parts)
    }

    /// Encodes a batch in a fresh graph of the given mode and returns `[K, C]`.
    pub fn encode(&self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut g = Graph::new(mode);
        let p = self.params.bind(&mut g);
        let x = g.constant(batch.clone());
        let y = self.forward(&mut g, &p, x)?;
        Ok(g.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::uniform_tensor;

    fn small() -> EncoderConfig {
        EncoderConfig { frames: 4, frame_dim: 3, conv_width: 5, hidden: 6, out_dim: 2 }
    }

    #[test]
    fn zero_snippet_maps_to_zero() {
        let enc = init_encoder(&EncoderConfig::default(), 1);
        let y = enc.encode(&Tensor::zeros(&[2, 4, 8]), Mode::Eval).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.shape(), &[2, 64]);
    }

    #[test]
    fn per_snippet_independence() {
        let enc = init_encoder(&EncoderConfig::default(), 2);
        let mut rng = stream(3, "x");
        let x = uniform_tensor(&mut rng, &[2, 4, 8], 1.0);
        let both = enc.encode(&x, Mode::Eval).unwrap();
        let a = enc.encode(&x.row_range(0, 1).unwrap(), Mode::Eval).unwrap();
        let b = enc.encode(&x.row_range(1, 1).unwrap(), Mode::Eval).unwrap();
        assert_eq!(both, Tensor::concat_rows(&[a, b]).unwrap());
    }

    /// Plain-loop reimplementation of the encoder.
    fn oracle(enc: &Encoder, x: &Tensor) -> Vec<f64> {
        let c = &enc.config;
        let get = |n: &str| enc.params.get(n).unwrap().data().to_vec();
        let conv = |inp: &[Vec<f64>], w: &[f64], b: &[f64], cin: usize, cout: usize| {
            let t = inp.len();
            let mut out = vec![vec![0.0; cout]; t];
            for (ti, row) in out.iter_mut().enumerate() {
                for (o, v) in row.iter_mut().enumerate() {
                    let mut acc = b[o];
                    for k in 0..3 {
                        let src = ti as isize + k as isize - 1;
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        for i in 0..cin {
                            acc += inp[src as usize][i] * w[(k * cin + i) * cout + o];
                        }
                    }
                    *v = acc.max(0.0);
                }
            }
            out
        };
        let frames: Vec<Vec<f64>> = (0..c.frames).map(|f| x.data()[f * c.frame_dim..(f + 1) * c.frame_dim].to_vec()).collect();
        let h1 = conv(&frames, &get("enc.conv1.w"), &get("enc.conv1.b"), c.frame_dim, c.conv_width);
        let h2 = conv(&h1, &get("enc.conv2.w"), &get("enc.conv2.b"), c.conv_width, c.conv_width);
        let pooled: Vec<f64> = (0..c.conv_width)
            .map(|j| h2.iter().map(|r| r[j]).sum::<f64>() / c.frames as f64)
            .collect();
        let affine = |inp: &[f64], w: &[f64], b: &[f64], relu: bool| -> Vec<f64> {
            (0..b.len())
                .map(|o| {
                    let v = b[o] + inp.iter().enumerate().map(|(i, a)| a * w[i * b.len() + o]).sum::<f64>();
                    if relu { v.max(0.0) } else { v }
                })
                .collect()
        };
        let h3 = affine(&pooled, &get("enc.fc1.w"), &get("enc.fc1.b"), true);
        affine(&h3, &get("enc.fc2.w"), &get("enc.fc2.b"), false)
    }

    #[test]
    fn matches_straight_line_oracle() {
        let mut enc = init_encoder(&small(), 4);
        let mut rng = stream(5, "bias");
        for name in ["enc.conv1.b", "enc.conv2.b", "enc.fc1.b", "enc.fc2.b"] {
            let i = enc.params.names().iter().position(|n| n == name).unwrap();
            let shape = enc.params.values()[i].shape().to_vec();
            enc.params.values_mut()[i] = uniform_tensor(&mut rng, &shape, 0.3);
        }
        let x = uniform_tensor(&mut rng, &[1, 4, 3], 1.0);
        let y = enc.encode(&x, Mode::Eval).unwrap();
        for (a, b) in y.data().iter().zip(oracle(&enc, &x)) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn init_is_seeded_and_counted() {
        let cfg = EncoderConfig::default();
        assert_eq!(init_encoder(&cfg, 9), init_encoder(&cfg, 9));
        assert_ne!(init_encoder(&cfg, 9).params, init_encoder(&cfg, 10).params);
        // 3*8*32 + 32 + 3*32*32 + 32 + 32*64 + 64 + 64*64 + 64
        assert_eq!(cfg.param_count(), 10176);
        assert_eq!(init_encoder(&cfg, 9).params.numel(), 10176);
    }

    #[test]
    fn rejects_wrong_frame_dim() {
        let enc = init_encoder(&EncoderConfig::default(), 1);
        assert!(matches!(enc.encode(&Tensor::zeros(&[1, 4, 7]), Mode::Eval), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn sequential_encode_matches_parallel() {
        let enc = init_encoder(&EncoderConfig::default(), 3);
        let x = uniform_tensor(&mut stream(4, "x"), &[9, 4, 8], 1.0);
        let full = enc.encode(&x, Mode::Eval).unwrap();
        for k in [1, 2, 4, 9, 20] {
            let mut g = Graph::new(Mode::Train);
            assert_eq!(enc.encode_sequential(&mut g, &x, k).unwrap(), full);
            assert_eq!(g.snapshot_memory().peak("default"), 0);
        }
        assert!(enc.encode_sequential(&mut Graph::new(Mode::Eval), &x, 0).is_err());
    }

    #[test]
    fn train_peak_scales_with_batch() {
        let enc = init_encoder(&EncoderConfig::default(), 1);
        let peak = |k: usize| {
            let mut g = Graph::new(Mode::Train);
            g.begin_phase("encoder");
            let p = enc.params.bind(&mut g);
            let x = g.constant(Tensor::full(&[k, 4, 8], 0.5));
            enc.forward(&mut g, &p, x).unwrap();
            g.snapshot_memory().peak("encoder")
        };
        for k in [1, 2, 4, 8] {
            let ratio = peak(2 * k) as f64 / peak(k) as f64;
            assert!((1.9..=2.1).contains(&ratio), "{ratio}");
        }
    }
}
