#![no_main]

use endonav::servo::ServoConfig;
use endonav::sim::SimConfig;
use endonav_harness::session::{Session, SessionConfig};
use libfuzzer_sys::fuzz_target;

// Each line goes to the session; a line starting with '.' runs one tick.
fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let Ok(mut session) = Session::new(SimConfig::default(), ServoConfig::default(), SessionConfig::default()) else {
        return;
    };
    let mut last = None;
    for line in text.lines().take(32) {
        let out = if line.starts_with('.') { session.tick() } else { session.handle_line(line) };
        if !line.starts_with('.') {
            assert!(!out.is_empty(), "every line gets an answer");
        }
        for o in out {
            let v: serde_json::Value = serde_json::from_str(&o.line).expect("outgoing line is json");
            let seq = v["seq"].as_u64().expect("outgoing seq");
            assert!(last.is_none_or(|p| seq > p), "outgoing seq increases");
            last = Some(seq);
        }
    }
});
