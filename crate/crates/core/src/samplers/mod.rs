//! Subset samplers shared by snippet-gradient selection and proposal
//! sampling.
//!
//! Every sampler returns exactly `k` distinct in-range indices in ascending
//! order and is a pure function of the request and the random stream.

mod balanced;
mod fps;
mod heuristic;
mod kdpp;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::Tensor;

pub use balanced::{balanced_quotas, bin_of, BIN_EDGES};
pub use fps::fps_order;
pub use heuristic::{block_from_start, grid_1d, grid_proposal_map};
pub use kdpp::{kdpp_kernel, kdpp_marginals_bruteforce, sample_kdpp_kernel, KDPP_MAX_CANDIDATES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Grid,
    Block,
    Fps,
    Kdpp,
    IouBalanced,
    ScaleBalanced,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Random,
        Strategy::Grid,
        Strategy::Block,
        Strategy::Fps,
        Strategy::Kdpp,
        Strategy::IouBalanced,
        Strategy::ScaleBalanced,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Grid => "grid",
            Strategy::Block => "block",
            Strategy::Fps => "fps",
            Strategy::Kdpp => "kdpp",
            Strategy::IouBalanced => "iou_balanced",
            Strategy::ScaleBalanced => "scale_balanced",
        }
    }

    pub fn needs_embeddings(self) -> bool {
        matches!(self, Strategy::Fps | Strategy::Kdpp)
    }

    pub fn needs_labels(self) -> bool {
        matches!(self, Strategy::IouBalanced | Strategy::ScaleBalanced)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sampler {s:?}")))
    }
}

/// Arrangement of the candidates, used by the structured strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// A 1-D sequence such as snippets.
    Sequence,
    /// The dense `(s, e)` proposal map over `t` positions in s-major order.
    ProposalMap { t: usize },
}

#[derive(Clone, Copy, Debug)]
pub struct SampleRequest<'a> {
    pub n_total: usize,
    pub k: usize,
    pub strategy: Strategy,
    pub layout: Layout,
    /// `n_total x C`, required by `fps` and `kdpp`.
    pub embeddings: Option<&'a Tensor>,
    /// Per-candidate IoU or scale in `[0, 1]`, required by the balanced strategies.
    pub labels: Option<&'a [f64]>,
    pub fps_random_start: bool,
}

impl<'a> SampleRequest<'a> {
    pub fn new(n_total: usize, k: usize, strategy: Strategy) -> Self {
        Self {
            n_total,
            k,
            strategy,
            layout: Layout::Sequence,
            embeddings: None,
            labels: None,
            fps_random_start: false,
        }
    }

    pub fn layout(mut self, layout: Layout) -> Self {
        self.layout = layout;
        self
    }

    pub fn embeddings(mut self, e: &'a Tensor) -> Self {
        self.embeddings = Some(e);
        self
    }

    pub fn labels(mut self, l: &'a [f64]) -> Self {
        self.labels = Some(l);
        self
    }
}

/// `round_half_up(ratio * n)`, at least 1 for a positive ratio.
pub fn sample_count(n: usize, ratio: f64) -> usize {
    if ratio <= 0.0 || n == 0 {
        return 0;
    }
    ((ratio * n as f64 + 0.5).floor() as usize).clamp(1, n)
}

pub fn sample(req: &SampleRequest<'_>, rng: &mut StreamRng) -> Result<Vec<usize>> {
    let n = req.n_total;
    if req.k == 0 || req.k > n {
        return Err(Error::Sampling(format!("cannot draw {} of {} candidates", req.k, n)));
    }
    if let Layout::ProposalMap { t } = req.layout {
        if t < 2 || t * (t - 1) / 2 != n {
            return Err(Error::Sampling(format!("{n} candidates do not form a proposal map over {t}")));
        }
    }
    let embeddings = match (req.strategy.needs_embeddings(), req.embeddings) {
        (true, None) => return Err(Error::Sampling(format!("{} needs embeddings", req.strategy))),
        (true, Some(e)) if e.shape().len() != 2 || e.rows() != n => {
            return Err(Error::Sampling(format!("embeddings shape {:?} for {n} candidates", e.shape())))
        }
        (_, e) => e,
    };
    let labels = match (req.strategy.needs_labels(), req.labels) {
        (true, None) => return Err(Error::Sampling(format!("{} needs labels", req.strategy))),
        (true, Some(l)) if l.len() != n => {
            return Err(Error::Sampling(format!("{} labels for {n} candidates", l.len())))
        }
        (_, l) => l,
    };
    if req.k == n {
        return Ok((0..n).collect());
    }
    let mut out = match req.strategy {
        Strategy::Random => heuristic::random(n, req.k, rng),
        Strategy::Grid => match req.layout {
            Layout::Sequence => grid_1d(n, req.k),
            Layout::ProposalMap { t } => grid_proposal_map(t, req.k),
        },
        Strategy::Block => heuristic::block(n, req.k, req.layout, rng),
        Strategy::Fps => {
            let start = if req.fps_random_start {
                use rand::Rng;
                rng.random_range(0..n)
            } else {
                0
            };
            fps_order(embeddings.expect("checked"), req.k, start)?
        }
        Strategy::Kdpp => kdpp::sample_kdpp(embeddings.expect("checked"), req.k, rng)?,
        Strategy::IouBalanced | Strategy::ScaleBalanced => {
            balanced::sample_balanced(labels.expect("checked"), req.k, rng)?
        }
    };
    out.sort_unstable();
    debug_assert!(out.windows(2).all(|w| w[0] < w[1]) && out.len() == req.k);
    Ok(out)
}
