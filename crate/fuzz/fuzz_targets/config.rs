#![no_main]

use libfuzzer_sys::fuzz_target;
use osrlab::harness::{parse_config, parse_pairs};

fuzz_target!(|text: &str| {
    let _ = parse_pairs(text);
    if let Ok(cfg) = parse_config(text) {
        let canonical = cfg.canonical();
        let again = parse_config(&canonical).expect("canonical config parses");
        assert_eq!(again.canonical(), canonical);
    }
});
