//! Synthetic dataset generation on disk.

use std::path::Path;

use csclab_core::manifest::Manifest;
use csclab_core::synthbench::{gen_dataset, write_dataset};

use crate::error::{CliError, CliResult};

/// Writes `<out>/<split>/...` and returns the manifest.
pub fn cmd_gen(seed: u64, n: usize, paired: bool, out: &Path) -> CliResult<Manifest> {
    let dataset = gen_dataset(seed, n, paired).map_err(|e| CliError::user(e.to_string()))?;
    write_dataset(&dataset, out).map_err(|e| CliError::output(out, e))
}
