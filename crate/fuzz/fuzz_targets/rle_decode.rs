#![no_main]

use endonav_harness::protocol::{rle_decode, rle_encode};
use libfuzzer_sys::fuzz_target;

// The first two bytes give the expected pixel count.
fuzz_target!(|data: &[u8]| {
    let [a, b, rest @ ..] = data else { return };
    let expected = u16::from_le_bytes([*a, *b]) as usize;
    if let Ok(pixels) = rle_decode(rest, expected) {
        assert_eq!(pixels.len(), expected);
    }
    let round = rle_decode(&rle_encode(rest), rest.len()).expect("encoded data decodes");
    assert_eq!(round, rest);
});
