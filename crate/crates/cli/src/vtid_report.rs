//! VTID over every sample of a manifest.

use std::path::Path;

use csclab_core::vtid::{
    random_feature_extractor, vtid_score, FeatureExtractor, PixelExtractor, VtidInputs, VtidReport,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{load_sample, read_manifest};
use crate::error::{compute, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    Pixel,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    pub seed: u64,
    pub scales: usize,
    pub channels: usize,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        Self {
            kind: ExtractorKind::Pixel,
            seed: 0,
            scales: 3,
            channels: 8,
        }
    }
}

impl ExtractorSpec {
    pub fn build(&self) -> CliResult<Box<dyn FeatureExtractor>> {
        Ok(match self.kind {
            ExtractorKind::Pixel => Box::new(PixelExtractor),
            ExtractorKind::Random => Box::new(
                random_feature_extractor(self.seed, self.scales, self.channels)
                    .map_err(|e| CliError::user(e.to_string()))?,
            ),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleVtid {
    pub index: usize,
    #[serde(flatten)]
    pub report: VtidReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VtidSummary {
    pub extractor: ExtractorKind,
    pub samples: Vec<SampleVtid>,
    pub mean: VtidReport,
}

pub fn cmd_vtid(manifest_path: &Path, spec: &ExtractorSpec) -> CliResult<VtidSummary> {
    let (manifest, base) = read_manifest(manifest_path)?;
    if manifest.is_empty() {
        return Err(CliError::user(format!(
            "{}: manifest lists no samples",
            manifest_path.display()
        )));
    }
    let fx = spec.build()?;
    let scored: Vec<CliResult<SampleVtid>> = (0..manifest.len())
        .into_par_iter()
        .map(|i| {
            let s = load_sample(&manifest, &base, i)?;
            let report = vtid_score(
                VtidInputs {
                    person: &s.person,
                    garment: &s.garment,
                    flow: &s.flow,
                    generated: &s.generated,
                    clothing_mask: &s.mask,
                    gen_clothing_mask: &s.gen_mask,
                },
                fx.as_ref(),
            )
            .map_err(compute)?;
            Ok(SampleVtid { index: i, report })
        })
        .collect();
    let samples = scored.into_iter().collect::<CliResult<Vec<_>>>()?;
    let n = samples.len() as f64;
    let mean_of = |f: fn(&VtidReport) -> f64| samples.iter().map(|s| f(&s.report)).sum::<f64>() / n;
    let mean = VtidReport {
        human_dist: mean_of(|r| r.human_dist),
        clothing_dist: mean_of(|r| r.clothing_dist),
        vtid: mean_of(|r| r.vtid),
    };
    Ok(VtidSummary {
        extractor: spec.kind,
        samples,
        mean,
    })
}

pub fn vtid_csv(summary: &VtidSummary) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample", "human_dist", "clothing_dist", "vtid"])
        .map_err(CliError::internal)?;
    let row = |label: String, r: &VtidReport| {
        [
            label,
            format!("{:?}", r.human_dist),
            format!("{:?}", r.clothing_dist),
            format!("{:?}", r.vtid),
        ]
    };
    for s in &summary.samples {
        w.write_record(row(s.index.to_string(), &s.report))
            .map_err(CliError::internal)?;
    }
    w.write_record(row("mean".into(), &summary.mean))
        .map_err(CliError::internal)?;
    let bytes = w.into_inner().map_err(CliError::internal)?;
    String::from_utf8(bytes).map_err(CliError::internal)
}

pub fn write_vtid(summary: &VtidSummary, out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::output(out, e))?;
    let json_path = out.join("vtid.json");
    let json = serde_json::to_string_pretty(summary).map_err(CliError::internal)? + "\n";
    std::fs::write(&json_path, json).map_err(|e| CliError::output(&json_path, e))?;
    let csv_path = out.join("vtid.csv");
    std::fs::write(&csv_path, vtid_csv(summary)?).map_err(|e| CliError::output(&csv_path, e))
}
