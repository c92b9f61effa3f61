#![no_main]
use libfuzzer_sys::fuzz_target;

use csclab_core::io::{decode_grid, encode_grid};

fuzz_target!(|data: &[u8]| {
    if let Ok(grid) = decode_grid(data) {
        // Accepted input is canonical: re-encoding reproduces it.
        assert_eq!(encode_grid(&grid), data);
    }
});
