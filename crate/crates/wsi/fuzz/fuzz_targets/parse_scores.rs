#![no_main]

use libfuzzer_sys::fuzz_target;
use wsi::metrics::{parse_scores, render_scores};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(clips) = parse_scores(text) {
        // Anything accepted must survive a render/parse round trip: the
        // parser rejects non-finite scores and field counts other than 6,
        // which is exactly what makes the renderer's output unambiguous.
        let again = parse_scores(&render_scores(&clips)).expect("round trip");
        assert_eq!(clips, again);
    }
});
