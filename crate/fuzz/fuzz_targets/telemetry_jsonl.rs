#![no_main]

use endonav_harness::report::compute_report;
use endonav_harness::telemetry::parse_jsonl;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((header, rows)) = parse_jsonl(text) {
        let report = compute_report(&header, &rows);
        serde_json::to_string(&report).expect("report serializes");
    }
});
