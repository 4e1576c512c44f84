#![no_main]

use libfuzzer_sys::fuzz_target;
use wsi::deploy::{detect_overlaps, parse_trace};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(trace) = parse_trace(text) {
        assert!(trace.span_s().is_finite());
        // Overlap detection on any accepted trace may refuse, never panic.
        if let Ok(events) = detect_overlaps(&trace, 0.3) {
            for e in events {
                assert!(e.duration_s >= 0.3);
                assert!(e.onset_s >= 0.0);
            }
        }
    }
});
