//! Dataset manifest: parallel arrays of grid file paths, one entry per sample.
//!
//! Relative paths are resolved against the directory holding the manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// File roles written per sample by the benchmark generator.
pub const ROLES: [&str; 7] = [
    "person", "garment", "flow_x", "flow_y", "mask", "gen_mask", "reference",
];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub person: Vec<String>,
    pub garment: Vec<String>,
    pub flow_x: Vec<String>,
    pub flow_y: Vec<String>,
    pub generated: Vec<String>,
    pub mask: Vec<String>,
    pub gen_mask: Vec<String>,
}

/// Resolved paths of one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub person: PathBuf,
    pub garment: PathBuf,
    pub flow_x: PathBuf,
    pub flow_y: PathBuf,
    pub generated: PathBuf,
    pub mask: PathBuf,
    pub gen_mask: PathBuf,
}

impl Manifest {
    fn columns(&self) -> [(&'static str, &Vec<String>); 7] {
        [
            ("person", &self.person),
            ("garment", &self.garment),
            ("flow_x", &self.flow_x),
            ("flow_y", &self.flow_y),
            ("generated", &self.generated),
            ("mask", &self.mask),
            ("gen_mask", &self.gen_mask),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.person.len();
        for (name, col) in self.columns() {
            if col.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "manifest field `{name}` lists {} paths, `person` lists {n}",
                    col.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.person.len()
    }

    pub fn is_empty(&self) -> bool {
        self.person.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Paths of sample `index` joined onto `base`.
    pub fn entry(&self, index: usize, base: &Path) -> Result<ManifestEntry> {
        if index >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "sample {index} out of range for {} entries",
                self.len()
            )));
        }
        let p = |col: &Vec<String>| base.join(&col[index]);
        Ok(ManifestEntry {
            person: p(&self.person),
            garment: p(&self.garment),
            flow_x: p(&self.flow_x),
            flow_y: p(&self.flow_y),
            generated: p(&self.generated),
            mask: p(&self.mask),
            gen_mask: p(&self.gen_mask),
        })
    }
}
