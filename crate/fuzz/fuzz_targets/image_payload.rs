#![no_main]

use endonav_harness::protocol::{decode_image, ImagePayload};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(img) = serde_json::from_slice::<ImagePayload>(data) else { return };
    if let Ok(pixels) = decode_image(&img) {
        assert_eq!(pixels.len(), img.width * img.height);
    }
});
