#![no_main]

use libfuzzer_sys::fuzz_target;
use osrlab::nn::{decode_params, encode_params};

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = decode_params::<f32>(data) {
        let bytes = encode_params(&p);
        let again = decode_params::<f32>(&bytes).expect("re-encoded f32 params decode");
        assert_eq!(encode_params(&again), bytes);
    }
    if let Ok(p) = decode_params::<f64>(data) {
        let bytes = encode_params(&p);
        let again = decode_params::<f64>(&bytes).expect("re-encoded f64 params decode");
        assert_eq!(encode_params(&again), bytes);
    }
});
