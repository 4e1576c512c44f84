//! Activation-arena accounting.
//!
//! Embedded deployments size one fixed scratch arena per inference thread,
//! so what matters is the high-water mark of live activation bytes and that
//! it is identical on every run. The tracker meters every activation the
//! forward pass materializes (kernel-internal scratch such as im2col
//! buffers is the kernels' own, not arena-resident). Each inference uses a
//! private tracker; nothing here is shared across threads.

#[derive(Debug, Default)]
pub struct Arena {
    live_bytes: u64,
    peak_bytes: u64,
    allocations: u64,
}

impl Arena {
    #[must_use]
    pub fn new() -> Self {
        Self::default()
    }

    /// Record an activation of `floats` f32 elements coming live.
    pub fn track(&mut self, floats: usize) {
        self.live_bytes += 4 * floats as u64;
        self.allocations += 1;
        if self.live_bytes > self.peak_bytes {
            self.peak_bytes = self.live_bytes;
        }
    }

    /// Record an activation of `floats` f32 elements being released.
    pub fn release(&mut self, floats: usize) {
        debug_assert!(self.live_bytes >= 4 * floats as u64, "arena underflow");
        self.live_bytes = self.live_bytes.saturating_sub(4 * floats as u64);
    }

    #[must_use]
    pub fn live_bytes(&self) -> u64 {
        self.live_bytes
    }

    #[must_use]
    pub fn peak_bytes(&self) -> u64 {
        self.peak_bytes
    }

    #[must_use]
    pub fn allocations(&self) -> u64 {
        self.allocations
    }
}
