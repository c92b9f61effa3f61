#![no_main]
use libfuzzer_sys::fuzz_target;

use csclab_core::manifest::Manifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = Manifest::from_json(text) {
        for i in 0..m.len() {
            m.entry(i, std::path::Path::new("base")).expect("validated lengths");
        }
        assert_eq!(Manifest::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
});
