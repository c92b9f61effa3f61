//! Replays the checked-in fuzz corpus through the same checks as the fuzz
//! targets, so the seeds and properties stay exercised on stable.

use std::fs;
use std::path::{Path, PathBuf};

use csclab_cli::plot::{parse_trajectories, render_svg};
use csclab_cli::ExperimentConfig;
use csclab_core::io::{decode_grid, encode_grid};
use csclab_core::manifest::Manifest;
use csclab_core::model::ToyAttentionDenoiser;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn grid_seeds_roundtrip() {
    let mut accepted = 0;
    for (_, data) in seeds("grid_decode") {
        if let Ok(grid) = decode_grid(&data) {
            assert_eq!(encode_grid(&grid), data);
            accepted += 1;
        }
    }
    assert!(accepted >= 2);
}

#[test]
fn toy_model_seeds_roundtrip() {
    let mut accepted = 0;
    for (p, data) in seeds("toy_model_json") {
        let text = std::str::from_utf8(&data).unwrap();
        match ToyAttentionDenoiser::from_json(text) {
            Ok(m) => {
                assert_eq!(ToyAttentionDenoiser::from_json(&m.to_json()).unwrap(), m);
                accepted += 1;
            }
            Err(_) => assert!(p.ends_with("odd_height.json"), "{} rejected", p.display()),
        }
    }
    assert_eq!(accepted, 1);
}

#[test]
fn manifest_seeds_roundtrip() {
    for (p, data) in seeds("manifest_json") {
        let m = Manifest::from_json(std::str::from_utf8(&data).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        for i in 0..m.len() {
            m.entry(i, Path::new("base")).unwrap();
        }
        assert_eq!(Manifest::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}

#[test]
fn config_seeds_roundtrip() {
    for (p, data) in seeds("experiment_config_json") {
        let cfg = ExperimentConfig::from_json(std::str::from_utf8(&data).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}

#[test]
fn trajectory_seeds_parse_and_render() {
    let mut rendered = 0;
    for (_, data) in seeds("trajectory_csv") {
        if let Ok(charts) = parse_trajectories(std::str::from_utf8(&data).unwrap()) {
            for chart in &charts {
                assert!(render_svg(chart).starts_with("<svg"));
                rendered += 1;
            }
        }
    }
    assert!(rendered > 0);
}
