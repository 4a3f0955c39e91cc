#![no_main]
use libfuzzer_sys::fuzz_target;
use pca_lab::io::{read_dataset, write_dataset};

fuzz_target!(|data: &[u8]| {
    if let Ok(pts) = read_dataset(data) {
        let mut buf = Vec::new();
        if write_dataset(&mut buf, &pts).is_ok() && !pts.is_empty() {
            assert_eq!(read_dataset(&buf[..]).unwrap(), pts);
        }
    }
});
