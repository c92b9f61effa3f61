#![no_main]
use libfuzzer_sys::fuzz_target;

use csclab_core::model::ToyAttentionDenoiser;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = ToyAttentionDenoiser::from_json(text) {
        let again = ToyAttentionDenoiser::from_json(&model.to_json()).expect("roundtrip");
        assert_eq!(again, model);
    }
});
