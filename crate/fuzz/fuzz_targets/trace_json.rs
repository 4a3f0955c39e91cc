#![no_main]
use libfuzzer_sys::fuzz_target;
use pca_lab::deflation::DeflationTrace;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(t) = DeflationTrace::from_json(s) {
            let f = t.frame();
            assert_eq!(f.cols(), t.k());
            let _ = t.sample_segments();
        }
    }
});
