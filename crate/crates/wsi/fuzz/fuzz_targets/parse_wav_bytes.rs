#![no_main]

use libfuzzer_sys::fuzz_target;
use wsi::io::parse_wav_bytes;

fuzz_target!(|data: &[u8]| {
    if let Ok((clip, _truncated)) = parse_wav_bytes(data, 16_000, 16) {
        assert_eq!(clip.samples_per_channel(), 16);
        assert!(clip.left().iter().all(|v| v.is_finite()));
        assert!(clip.right().iter().all(|v| v.is_finite()));
    }
});
