//! Observation-only instrumentation counters.
//!
//! Counters never feed back into computation; scores are identical whether a
//! `Telemetry` is attached or not.

use std::sync::atomic::{AtomicU64, Ordering};

/// Call counters shared by the model stages. Increments are relaxed atomics
/// so chunked scoring can update them from worker threads.
#[derive(Debug, Default)]
pub struct Telemetry {
    /// Set-attention invocations (one per block or cache entry).
    pub set_attention_calls: AtomicU64,
    /// Prediction-head evaluations (one per permutation-position pair).
    pub head_evals: AtomicU64,
    /// Rows pushed through the feature-cross network.
    pub feature_cross_rows: AtomicU64,
}

impl Telemetry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_set_attention(&self, n: u64) {
        self.set_attention_calls.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_head_evals(&self, n: u64) {
        self.head_evals.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_feature_cross_rows(&self, n: u64) {
        self.feature_cross_rows.fetch_add(n, Ordering::Relaxed);
    }

    pub fn set_attention_count(&self) -> u64 {
        self.set_attention_calls.load(Ordering::Relaxed)
    }

    pub fn head_eval_count(&self) -> u64 {
        self.head_evals.load(Ordering::Relaxed)
    }

    pub fn feature_cross_row_count(&self) -> u64 {
        self.feature_cross_rows.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.set_attention_calls.store(0, Ordering::Relaxed);
        self.head_evals.store(0, Ordering::Relaxed);
        self.feature_cross_rows.store(0, Ordering::Relaxed);
    }
}

/// Wall-clock per stage of one rerank call, in seconds. Reported, never
/// asserted on.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub semantic_s: f64,
    pub cache_s: f64,
    pub score_s: f64,
    pub argmax_s: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counters_accumulate_and_reset() {
        let t = Telemetry::new();
        t.add_set_attention(3);
        t.add_set_attention(4);
        t.add_head_evals(10);
        assert_eq!(t.set_attention_count(), 7);
        assert_eq!(t.head_eval_count(), 10);
        t.reset();
        assert_eq!(t.set_attention_count(), 0);
    }
}
