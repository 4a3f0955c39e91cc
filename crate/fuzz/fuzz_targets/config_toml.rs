#![no_main]
use libfuzzer_sys::fuzz_target;
use pca_lab::harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(c) = ExperimentConfig::from_toml(s) {
            let _ = c.validate();
            let _ = c.seeds.expand();
        }
    }
});
