#![no_main]

use endonav_harness::protocol::parse_client_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    let _ = parse_client_line(line);
});
