#![no_main]

use endonav_harness::scenario::Scenario;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = Scenario::from_toml(text) {
        if s.validate().is_ok() {
            let _ = s.ticks();
        }
    }
});
