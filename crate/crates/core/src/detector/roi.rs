//! Linear-interpolation RoI alignment over a feature sequence.
//!
//! Snippet `i` covers `[i, i + 1)` and its feature sits at time `i + 0.5`, so
//! time `τ` reads feature coordinate `clamp(τ - 0.5, 0, N - 1)`.

use crate::autodiff::{Graph, InterpTap, Var};
use crate::error::{Error, Result};
use crate::tadeval::Segment;

pub const BOUNDARY_BINS: usize = 8;
pub const EXTENDED_BINS: usize = 32;
pub const TAPS_PER_PROPOSAL: usize = 2 * BOUNDARY_BINS + EXTENDED_BINS;

/// Region fractions of the proposal duration.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoiConfig {
    pub extend: f64,
    pub boundary: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self { extend: 0.25, boundary: 0.15 }
    }
}

pub struct RoiFeatures {
    /// `[P, 16 c]`: eight start-region bins then eight end-region bins.
    pub boundary: Var,
    /// `[P, 32 c]`.
    pub extended: Var,
}

fn tap(time: f64, n: usize) -> InterpTap {
    let u = (time - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = u.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w_hi = u - lo as f64;
    InterpTap { lo, hi, w_lo: 1.0 - w_hi, w_hi }
}

/// `count` equally spaced times over `[a, b]`, endpoints included.
pub fn sample_times(a: f64, b: f64, count: usize) -> impl Iterator<Item = f64> {
    (0..count).map(move |j| a + (b - a) * j as f64 / (count - 1) as f64)
}

pub fn proposal_taps(seg: Segment, n: usize, cfg: &RoiConfig) -> Vec<InterpTap> {
    let d = seg.len();
    let (s, e) = (seg.start, seg.end);
    let bd = cfg.boundary * d;
    let ext = cfg.extend * d;
    sample_times(s - bd, s + bd, BOUNDARY_BINS)
        .chain(sample_times(e - bd, e + bd, BOUNDARY_BINS))
        .chain(sample_times(s - ext, e + ext, EXTENDED_BINS))
        .map(|t| tap(t, n))
        .collect()
}

/// Aligns every proposal against `seq: [N, c]`.
pub fn roi_align(g: &mut Graph, seq: Var, proposals: &[Segment], cfg: &RoiConfig) -> Result<RoiFeatures> {
    let (n, c) = (g.shape(seq)[0], g.shape(seq)[1]);
    if proposals.is_empty() {
        return Err(Error::InvalidArgument("roi_align needs at least one proposal".into()));
    }
    let mut taps = Vec::with_capacity(proposals.len() * TAPS_PER_PROPOSAL);
    for (i, p) in proposals.iter().enumerate() {
        if !(p.end > p.start) || p.start < 0.0 || p.end > n as f64 {
            return Err(Error::InvalidArgument(format!("proposal {i} [{}, {}] outside [0, {n}]", p.start, p.end)));
        }
        taps.extend(proposal_taps(*p, n, cfg));
    }
    let rows = g.gather_interp(seq, taps)?;
    let flat = g.reshape(rows, &[proposals.len(), TAPS_PER_PROPOSAL * c])?;
    let boundary = g.slice(flat, 1, 0, 2 * BOUNDARY_BINS * c)?;
    let extended = g.slice(flat, 1, 2 * BOUNDARY_BINS * c, EXTENDED_BINS * c)?;
    Ok(RoiFeatures { boundary, extended })
}
