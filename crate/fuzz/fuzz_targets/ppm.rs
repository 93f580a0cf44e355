#![no_main]

use libfuzzer_sys::fuzz_target;
use osrlab::synthdata::{decode_ppm, encode_ppm};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_ppm(data) {
        let bytes = encode_ppm(&img);
        let again = decode_ppm(&bytes).expect("re-encoded image decodes");
        assert_eq!(img.height(), again.height());
        assert_eq!(img.width(), again.width());
        assert_eq!(encode_ppm(&again), bytes);
    }
});
