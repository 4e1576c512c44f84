#![no_main]

use libfuzzer_sys::fuzz_target;
use wsi::deploy::EnergyScenario;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = EnergyScenario::from_kv_text(text) {
        let again = EnergyScenario::from_kv_text(&s.to_kv_text()).expect("round trip");
        assert_eq!(s, again);
    }
});
