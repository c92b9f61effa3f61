//! Loading dataset samples listed in a manifest.

use std::path::{Path, PathBuf};

use csclab_core::io::{read_grid, read_mask};
use csclab_core::manifest::Manifest;
use csclab_core::vtid::{Flow, SceneImage};
use csclab_core::{BinaryMask, Grid};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};

/// One manifest entry read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    pub person: SceneImage,
    pub garment: SceneImage,
    pub flow: Flow,
    pub generated: SceneImage,
    pub mask: BinaryMask,
    pub gen_mask: BinaryMask,
}

pub fn read_manifest(path: &Path) -> CliResult<(Manifest, PathBuf)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    let manifest = Manifest::from_json(&text).map_err(|e| CliError::input(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, base))
}

fn grid(path: &Path) -> CliResult<Grid> {
    read_grid(path).map_err(|e| CliError::input(path, e))
}

fn image(path: &Path) -> CliResult<SceneImage> {
    SceneImage::from_stacked(&grid(path)?).map_err(|e| CliError::input(path, e))
}

fn mask(path: &Path) -> CliResult<BinaryMask> {
    read_mask(path).map_err(|e| CliError::input(path, e))
}

pub fn load_sample(manifest: &Manifest, base: &Path, index: usize) -> CliResult<LoadedSample> {
    let e = manifest.entry(index, base).map_err(|e| CliError::user(e.to_string()))?;
    let sample = LoadedSample {
        person: image(&e.person)?,
        garment: image(&e.garment)?,
        flow: Flow {
            x: grid(&e.flow_x)?,
            y: grid(&e.flow_y)?,
        },
        generated: image(&e.generated)?,
        mask: mask(&e.mask)?,
        gen_mask: mask(&e.gen_mask)?,
    };
    let shape = sample.person.shape();
    let shapes = [
        ("garment", sample.garment.shape()),
        ("flow_x", sample.flow.x.shape()),
        ("flow_y", sample.flow.y.shape()),
        ("generated", sample.generated.shape()),
        ("mask", sample.mask.shape()),
        ("gen_mask", sample.gen_mask.shape()),
    ];
    for (role, s) in shapes {
        if s != shape {
            return Err(CliError::user(format!(
                "sample {index}: shape mismatch: {role} is {}x{}, person is {}x{}",
                s.0, s.1, shape.0, shape.1
            )));
        }
    }
    Ok(sample)
}

/// Every sample of the manifest, read in parallel and returned in order.
pub fn load_all(manifest: &Manifest, base: &Path) -> CliResult<Vec<LoadedSample>> {
    let loaded: Vec<_> = (0..manifest.len())
        .into_par_iter()
        .map(|i| load_sample(manifest, base, i))
        .collect();
    // Sequential collection reports the lowest failing index.
    loaded.into_iter().collect()
}
