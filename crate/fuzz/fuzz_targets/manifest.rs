#![no_main]

use libfuzzer_sys::fuzz_target;
use osrlab::synthdata::parse_manifest;

fuzz_target!(|text: &str| {
    if let Ok(m) = parse_manifest(text) {
        let again = parse_manifest(&m.render()).expect("rendered manifest parses");
        assert_eq!(m, again);
    }
});
