//! Proposal geometry, post-processing and localisation mAP.

mod infer;
mod map;
mod nms;
mod proposals;

use serde::{Deserialize, Serialize};

pub use infer::{
    evaluate, ground_truth, infer, infer_all, infer_features, parallel_map, thread_cap, CandidateMode, InferenceConfig,
    IouFusion, THREADS_ENV,
};
pub use map::{compute_map, default_thresholds, EvalResult};
pub use nms::{soft_nms, NmsConfig};
pub use proposals::{enumerate_proposals, fuse_scores, proposal_segment, select_boundaries, tiou};

/// A temporal segment in snippet units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreParts {
    pub p_s: f64,
    pub p_e: f64,
    pub p_iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub score: f64,
    pub components: ScoreParts,
}

impl Detection {
    pub fn segment(&self) -> Segment {
        Segment::new(self.start, self.end)
    }
}
