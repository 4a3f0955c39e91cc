#![no_main]
use libfuzzer_sys::fuzz_target;
use pca_lab::io::Sidecar;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(sc) = Sidecar::from_json(s) {
            assert_eq!(Sidecar::from_json(&sc.to_json()).unwrap(), sc);
            let _ = sc.check_against(sc.inlier_mask.as_ref().map_or(0, |m| m.len()));
        }
    }
});
