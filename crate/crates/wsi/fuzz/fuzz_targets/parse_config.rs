#![no_main]

use libfuzzer_sys::fuzz_target;
use wsi::model::ModelConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ModelConfig::from_kv_text(text) {
        let again = ModelConfig::from_kv_text(&cfg.to_kv_text()).expect("round trip");
        assert_eq!(cfg, again);
    }
});
