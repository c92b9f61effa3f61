//! Experiment configuration read from JSON.

use std::path::{Path, PathBuf};

use csclab_core::model::FitConfig;
use csclab_core::sampler::{make_schedule, NoiseSchedule, SamplerConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Output-scalar fitting on the dataset's latents; `iters = 0` skips it.
    pub fit: FitConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 16,
            width: 12,
            channels: 4,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t_max: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> CliResult<NoiseSchedule> {
        make_schedule(self.t_max, self.beta_start, self.beta_end)
            .map_err(|e| CliError::user(format!("schedule: {e}")))
    }
}

fn default_trials() -> usize {
    64
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Path to a dataset manifest (as written by `gen`).
    pub dataset: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Worker threads; absent or 0 uses every core. Outputs do not depend on it.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    /// Sampler settings, including the `energy` block.
    #[serde(default)]
    pub sampler: SamplerConfig,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            seed: 0,
            trials: default_trials(),
            out: default_out(),
            threads: None,
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }

    /// Parses and validates; errors name the offending field.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                CliError::user(format!("config: {}", e.inner()))
            } else {
                CliError::user(format!("config field `{path}`: {}", e.inner()))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> CliResult<()> {
        let field = |name: &str, msg: &str| Err(CliError::user(format!("config field `{name}`: {msg}")));
        if self.dataset.as_os_str().is_empty() {
            return field("dataset", "must name a manifest file");
        }
        if self.trials == 0 {
            return field("trials", "must be >= 1");
        }
        let m = &self.model;
        if m.height == 0 || m.width == 0 || !m.height.is_multiple_of(2) || !m.width.is_multiple_of(2) {
            return field("model", "height and width must be positive and even");
        }
        if m.channels == 0 {
            return field("model.channels", "must be >= 1");
        }
        self.schedule.build()?;
        if self.sampler.steps == 0 || self.sampler.steps > self.schedule.t_max {
            return field("sampler.steps", "must lie in 1..=schedule.t_max");
        }
        if !(self.sampler.rho >= 0.0 && self.sampler.rho.is_finite()) {
            return field("sampler.rho", "must be finite and >= 0");
        }
        if !self.sampler.guidance_scale.is_finite() {
            return field("sampler.guidance_scale", "must be finite");
        }
        self.sampler
            .energy
            .validate()
            .map_err(|e| CliError::user(format!("config field `sampler.energy`: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(r#"{"dataset": "d/manifest.json"}"#).unwrap();
        assert_eq!(cfg, ExperimentConfig::new("d/manifest.json"));
        assert_eq!(cfg.sampler.rho, 0.2);
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn errors_name_fields() {
        let e = ExperimentConfig::from_json("{}").unwrap_err().to_string();
        assert!(e.contains("dataset"), "{e}");
        let e = ExperimentConfig::from_json(r#"{"dataset":"x","sampler":{"rho":"a"}}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("sampler.rho"), "{e}");
        let e = ExperimentConfig::from_json(r#"{"dataset":"x","trials":0}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("trials"), "{e}");
        let e = ExperimentConfig::from_json(r#"{"dataset":"x","modle":{}}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("modle"), "{e}");
        let e = ExperimentConfig::from_json(r#"{"dataset":"x","sampler":{"energy":{"delta":-1}}}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("sampler.energy"), "{e}");
    }
}
