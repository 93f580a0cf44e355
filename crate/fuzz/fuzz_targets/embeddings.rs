#![no_main]

use libfuzzer_sys::fuzz_target;
use osrlab::osr::{format_embeddings, parse_embeddings};

fuzz_target!(|text: &str| {
    if let Ok(batch) = parse_embeddings(text) {
        // Values are printed with enough digits to round-trip exactly.
        let again = parse_embeddings(&format_embeddings(&batch)).expect("formatted batch parses");
        assert_eq!(batch, again);
    }
});
