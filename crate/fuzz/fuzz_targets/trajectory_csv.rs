#![no_main]
use libfuzzer_sys::fuzz_target;

use csclab_cli::plot::{parse_trajectories, render_svg};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(charts) = parse_trajectories(text) {
        for chart in &charts {
            render_svg(chart);
        }
    }
});
