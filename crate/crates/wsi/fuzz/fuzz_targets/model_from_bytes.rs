//! The model container is the largest attack surface: length-prefixed header,
//! tensor directory with offsets, then raw payload. Decoding must never panic
//! and anything that decodes must re-encode to something that decodes again.

#![no_main]

use libfuzzer_sys::fuzz_target;
use wsi::io::{model_from_bytes, model_to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = model_from_bytes(data) {
        let bytes = model_to_bytes(&m);
        let again = model_from_bytes(&bytes).expect("serialized model must decode");
        assert_eq!(
            model_to_bytes(&again),
            bytes,
            "decode/encode must reach a fixed point"
        );
    }
});
