//! Live-activation byte accounting and FLOP counting.
//!
//! Only buffers retained on the tape for a backward rule are counted as
//! activations. Parameter leaves are tracked separately in `param_bytes`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    /// Highest live activation byte count observed while each phase was active.
    pub peak_live_bytes: BTreeMap<String, u64>,
    pub current_live_bytes: u64,
    /// Live activation bytes grouped by the op kind that retained them.
    pub breakdown: BTreeMap<String, u64>,
    pub param_bytes: u64,
}

impl MemoryReport {
    pub fn peak(&self, phase: &str) -> u64 {
        self.peak_live_bytes.get(phase).copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopLedger {
    pub forward_flops: BTreeMap<String, u64>,
    pub backward_flops: BTreeMap<String, u64>,
}

impl FlopLedger {
    pub fn forward(&self, phase: &str) -> u64 {
        self.forward_flops.get(phase).copied().unwrap_or(0)
    }

    pub fn backward(&self, phase: &str) -> u64 {
        self.backward_flops.get(phase).copied().unwrap_or(0)
    }

    pub fn total(&self, phase: &str) -> u64 {
        self.forward(phase) + self.backward(phase)
    }

    /// Adds every counter of `other` into `self`.
    pub fn merge(&mut self, other: &FlopLedger) {
        for (k, v) in &other.forward_flops {
            *self.forward_flops.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.backward_flops {
            *self.backward_flops.entry(k.clone()).or_default() += v;
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Profiler {
    phase: String,
    live: u64,
    peaks: BTreeMap<String, u64>,
    breakdown: BTreeMap<&'static str, u64>,
    param_bytes: u64,
    flops: FlopLedger,
}

impl Default for Profiler {
    fn default() -> Self {
        let mut p = Self {
            phase: String::new(),
            live: 0,
            peaks: BTreeMap::new(),
            breakdown: BTreeMap::new(),
            param_bytes: 0,
            flops: FlopLedger::default(),
        };
        p.begin_phase("default");
        p
    }
}

impl Profiler {
    pub fn phase(&self) -> &str {
        &self.phase
    }

    pub fn begin_phase(&mut self, label: &str) {
        self.phase = label.to_string();
        let peak = self.peaks.entry(self.phase.clone()).or_insert(0);
        *peak = (*peak).max(self.live);
    }

    pub fn retain(&mut self, op: &'static str, bytes: u64) {
        self.live += bytes;
        *self.breakdown.entry(op).or_insert(0) += bytes;
        let peak = self.peaks.entry(self.phase.clone()).or_insert(0);
        *peak = (*peak).max(self.live);
    }

    pub fn add_params(&mut self, bytes: u64) {
        self.param_bytes += bytes;
    }

    /// Drops every retained buffer; phase peaks are kept.
    pub fn release_all(&mut self) {
        self.live = 0;
        self.breakdown.clear();
        self.param_bytes = 0;
    }

    pub fn count_forward(&mut self, flops: u64) {
        *self.flops.forward_flops.entry(self.phase.clone()).or_insert(0) += flops;
    }

    pub fn count_backward(&mut self, phase: &str, flops: u64) {
        *self.flops.backward_flops.entry(phase.to_string()).or_insert(0) += flops;
    }

    pub fn report(&self) -> MemoryReport {
        MemoryReport {
            peak_live_bytes: self.peaks.clone(),
            current_live_bytes: self.live,
            breakdown: self
                .breakdown
                .iter()
                .filter(|(_, &b)| b > 0)
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            param_bytes: self.param_bytes,
        }
    }

    pub fn flops(&self) -> &FlopLedger {
        &self.flops
    }

    pub fn reset_counters(&mut self) {
        self.peaks.clear();
        self.flops = FlopLedger::default();
        let phase = self.phase.clone();
        self.begin_phase(&phase);
    }
}
