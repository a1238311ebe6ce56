//! Per-thread accounting of live tensor storage.
//!
//! Every tensor buffer registers its byte size on creation and releases it on
//! drop, so the benchmark harness can report the peak footprint of a forward
//! pass without an allocator hook.

use std::cell::Cell;

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

pub(crate) fn track_alloc(bytes: usize) {
    LIVE.with(|live| {
        let now = live.get() + bytes;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

pub(crate) fn track_free(bytes: usize) {
    LIVE.with(|live| live.set(live.get().saturating_sub(bytes)));
}

/// Bytes held by tensor buffers alive on this thread.
pub fn live_bytes() -> usize {
    LIVE.with(Cell::get)
}

/// High-water mark since the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK.with(Cell::get)
}

/// Resets the high-water mark to the current live size.
pub fn reset_peak() {
    let live = live_bytes();
    PEAK.with(|peak| peak.set(live));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn buffers_are_counted_and_released() {
        let before = live_bytes();
        reset_peak();
        {
            let _t = Tensor::zeros(&[10, 10]);
            assert_eq!(live_bytes(), before + 800);
        }
        assert_eq!(live_bytes(), before);
        assert!(peak_bytes() >= before + 800);
    }
}
