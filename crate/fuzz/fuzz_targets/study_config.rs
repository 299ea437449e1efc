#![no_main]

use endonav_harness::study::StudyFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = StudyFile::from_toml(text);
});
