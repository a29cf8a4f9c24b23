//! FLOP and transient-allocation accounting.
//!
//! The counter is passed explicitly (`&mut OpCounter`) into every kernel that
//! does counted work, so accounting is deterministic and never hides behind
//! global state. Conventions, chosen so the analytic cost model in [`crate::cost`]
//! matches the measured numbers *exactly*:
//!
//! - FLOPs count multiply-add-equivalent work of matmul-like kernels at
//!   2 flops per MAC. Elementwise work (softmax exponentials, layernorm,
//!   activation functions, rescaling) is not counted; those terms are a
//!   vanishing fraction of the total and keeping them out makes the cost
//!   ratios exact integers.
//! - `attn_core_flops` is the subset of `flops` spent on the score and
//!   weighted-sum matmuls inside an attention core. The sparse/dense cost law
//!   is asserted on this subset.
//! - Transient bytes track scratch buffers (score tiles, online-softmax
//!   accumulators) for the duration they are live, not resident parameters
//!   and not operator outputs. Kernels call [`OpCounter::scratch_alloc`] /
//!   [`OpCounter::scratch_free`] around the real buffer lifetimes.

/// Monotone counters for one measured region.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpCounter {
    flops: u64,
    attn_core_flops: u64,
    cur_transient_bytes: u64,
    peak_transient_bytes: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Total multiply-add-equivalent flops recorded so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    /// Flops spent inside attention cores (scores + weighted sum).
    pub fn attn_core_flops(&self) -> u64 {
        self.attn_core_flops
    }

    /// Largest simultaneously-live scratch allocation seen so far.
    pub fn peak_transient_bytes(&self) -> u64 {
        self.peak_transient_bytes
    }

    /// Currently live scratch bytes. Zero once all scratch has been released.
    pub fn live_transient_bytes(&self) -> u64 {
        self.cur_transient_bytes
    }

    pub fn add_flops(&mut self, flops: u64) {
        self.flops += flops;
    }

    /// Record attention-core flops; they also count toward the total.
    pub fn add_attn_core_flops(&mut self, flops: u64) {
        self.flops += flops;
        self.attn_core_flops += flops;
    }

    /// Record that `bytes` of scratch just went live.
    pub fn scratch_alloc(&mut self, bytes: u64) {
        self.cur_transient_bytes += bytes;
        if self.cur_transient_bytes > self.peak_transient_bytes {
            self.peak_transient_bytes = self.cur_transient_bytes;
        }
    }

    /// Record that `bytes` of scratch was released. Must pair with a prior
    /// [`scratch_alloc`](Self::scratch_alloc) of the same size.
    pub fn scratch_free(&mut self, bytes: u64) {
        debug_assert!(self.cur_transient_bytes >= bytes, "unbalanced scratch_free");
        self.cur_transient_bytes = self.cur_transient_bytes.saturating_sub(bytes);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_tracks_high_water_mark() {
        let mut c = OpCounter::new();
        c.scratch_alloc(100);
        c.scratch_alloc(50);
        c.scratch_free(50);
        c.scratch_alloc(20);
        assert_eq!(c.peak_transient_bytes(), 150);
        assert_eq!(c.live_transient_bytes(), 120);
    }

    #[test]
    fn counters_are_monotone() {
        let mut c = OpCounter::new();
        let mut last_flops = 0;
        let mut last_peak = 0;
        for i in 1..10u64 {
            c.add_flops(i);
            c.scratch_alloc(i);
            assert!(c.flops() >= last_flops);
            assert!(c.peak_transient_bytes() >= last_peak);
            last_flops = c.flops();
            last_peak = c.peak_transient_bytes();
            c.scratch_free(i);
        }
    }

    #[test]
    fn core_flops_count_toward_total() {
        let mut c = OpCounter::new();
        c.add_flops(10);
        c.add_attn_core_flops(7);
        assert_eq!(c.flops(), 17);
        assert_eq!(c.attn_core_flops(), 7);
    }
}
