#![no_main]
use libfuzzer_sys::fuzz_target;
use pca_lab::adversarial::CounterexampleInstance;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(inst) = CounterexampleInstance::from_json(s) {
            let _ = inst.u1_mass();
            let _ = inst.run_witness();
        }
    }
});
