#![no_main]
use libfuzzer_sys::fuzz_target;
use pca_lab::io::{parse_seeds, MAX_SEEDS};

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(v) = parse_seeds(s) {
            assert!(!v.is_empty() && (v.len() as u64) <= MAX_SEEDS);
        }
    }
});
