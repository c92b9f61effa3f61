//! Paired CSC-on / CSC-off runs and the ablation sweeps.

use std::path::Path;

use csclab_core::model::{fit_toy, toy_init, ToyAttentionDenoiser, LAYER_FULL, LAYER_HALF};
use csclab_core::sampler::{sample, NoiseSchedule, SampleOutcome, SamplerConfig, TRAJECTORY_CSV_HEADER};
use csclab_core::synthbench::{composite_reference, image_from_latent, latent_from_image};
use csclab_core::vtid::{vtid_score, PixelExtractor, SceneImage, VtidInputs};
use csclab_core::{resample_mask, BinaryMask, RandomStream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{load_all, read_manifest, LoadedSample};
use crate::config::ExperimentConfig;
use crate::error::{compute, CliError, CliResult};

/// Everything a trial needs that does not change between arms.
pub struct Prepared {
    pub model: ToyAttentionDenoiser,
    pub schedule: NoiseSchedule,
    pub scenes: Vec<Scene>,
    /// Training loss trace when the model was fitted.
    pub fit_losses: Vec<f64>,
}

pub struct Scene {
    pub sample: LoadedSample,
    /// Ideal try-on: the person with the warped garment pasted into the mask.
    pub reference: SceneImage,
    /// Clothing mask at latent resolution.
    pub latent_mask: BinaryMask,
}

pub fn prepare(cfg: &ExperimentConfig) -> CliResult<Prepared> {
    let (manifest, base) = read_manifest(&cfg.dataset)?;
    if manifest.is_empty() {
        return Err(CliError::user(format!(
            "{}: manifest lists no samples",
            cfg.dataset.display()
        )));
    }
    let samples = load_all(&manifest, &base)?;
    let (h, w) = (cfg.model.height, cfg.model.width);
    let scenes = samples
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let reference = composite_reference(&s.person, &s.garment, &s.mask, &s.flow)
                .map_err(|e| CliError::user(format!("sample {i}: {e}")))?;
            let latent_mask = resample_mask(&s.mask, h, w)
                .map_err(|e| CliError::user(format!("sample {i}: {e}")))?;
            Ok(Scene {
                sample: s,
                reference,
                latent_mask,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let schedule = cfg.schedule.build()?;
    let init = toy_init(cfg.model.seed, h, w, cfg.model.channels).map_err(compute)?;
    let (model, fit_losses) = if cfg.model.fit.iters > 0 {
        let latents = scenes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                latent_from_image(&s.reference, h, w)
                    .map_err(|e| CliError::user(format!("sample {i}: {e}")))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let mut rng = RandomStream::new(cfg.seed).child("fit");
        let fit = fit_toy(&init, &latents, &schedule, &mut rng, &cfg.model.fit).map_err(compute)?;
        (fit.model, fit.losses)
    } else {
        (init, vec![])
    };
    Ok(Prepared {
        model,
        schedule,
        scenes,
        fit_losses,
    })
}

/// Final-state metrics of one sampled trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    /// Mean over attention layers of the final `e_attract`.
    pub final_e_attract: f64,
    pub final_e_total: f64,
    /// Mean over attention layers of the final in-mask attention mass.
    pub final_in_mask_fraction: f64,
    /// VTID of the decoded latent against the composite reference.
    pub toy_vtid: f64,
    pub outcome: SampleOutcome,
}

fn run_arm(
    prep: &Prepared,
    scene: &Scene,
    sampler: &SamplerConfig,
    mut rng: RandomStream,
) -> CliResult<ArmResult> {
    let outcome = sample(&prep.model, &scene.latent_mask, sampler, &prep.schedule, &mut rng)
        .map_err(compute)?;
    let layers = &outcome.final_energy.layers;
    let n = layers.len() as f64;
    let final_e_attract = layers.iter().map(|l| l.e_attract).sum::<f64>() / n;
    let final_in_mask_fraction = layers.iter().map(|l| l.in_mask_fraction).sum::<f64>() / n;
    let (ch, cw) = scene.reference.shape();
    let generated = image_from_latent(&outcome.x0, ch, cw).map_err(compute)?;
    let s = &scene.sample;
    let report = vtid_score(
        VtidInputs {
            person: &s.person,
            garment: &s.garment,
            flow: &s.flow,
            generated: &generated,
            clothing_mask: &s.mask,
            gen_clothing_mask: &s.mask,
        },
        &PixelExtractor,
    )
    .map_err(compute)?;
    Ok(ArmResult {
        final_e_attract,
        final_e_total: outcome.final_energy.total,
        final_in_mask_fraction,
        toy_vtid: report.vtid,
        outcome,
    })
}

fn trial_stream(seed: u64, trial: usize) -> RandomStream {
    RandomStream::new(seed).child_indexed("trial", trial as u64)
}

fn pool(threads: Option<usize>) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(CliError::internal)
}

/// Runs `trials` trials of each sampler config; trial `i` uses scene
/// `i mod n` and the same random stream in every config. Results are
/// indexed `[trial][config]`.
pub fn run_trials(
    prep: &Prepared,
    configs: &[SamplerConfig],
    seed: u64,
    trials: usize,
    threads: Option<usize>,
) -> CliResult<Vec<Vec<ArmResult>>> {
    let results: Vec<CliResult<Vec<ArmResult>>> = pool(threads)?.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|i| {
                let scene = &prep.scenes[i % prep.scenes.len()];
                let rng = trial_stream(seed, i);
                configs.iter().map(|c| run_arm(prep, scene, c, rng)).collect()
            })
            .collect()
    });
    results.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub mean_final_e_attract: f64,
    pub mean_final_e_total: f64,
    pub mean_final_in_mask_fraction: f64,
    pub mean_toy_vtid_proxy: f64,
}

impl ArmSummary {
    pub fn of<'a>(arms: impl Iterator<Item = &'a ArmResult>) -> Self {
        let mut s = [0.0; 4];
        let mut n = 0usize;
        for a in arms {
            s[0] += a.final_e_attract;
            s[1] += a.final_e_total;
            s[2] += a.final_in_mask_fraction;
            s[3] += a.toy_vtid;
            n += 1;
        }
        let n = n.max(1) as f64;
        Self {
            mean_final_e_attract: s[0] / n,
            mean_final_e_total: s[1] / n,
            mean_final_in_mask_fraction: s[2] / n,
            mean_toy_vtid_proxy: s[3] / n,
        }
    }
}

/// CSC arm minus baseline arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub final_e_attract: f64,
    pub final_e_total: f64,
    pub final_in_mask_fraction: f64,
    pub toy_vtid_proxy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wins {
    /// Trials whose CSC arm has the larger final in-mask fraction.
    pub in_mask_fraction: usize,
    /// Trials whose CSC arm has the lower final `e_attract`.
    pub e_attract: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub trials: usize,
    pub rho: f64,
    pub guidance_scale: f64,
    pub steps: usize,
    pub baseline: ArmSummary,
    pub csc: ArmSummary,
    pub delta: Deltas,
    pub csc_wins: Wins,
}

pub struct RunReport {
    pub summary: RunSummary,
    pub trajectories_csv: String,
}

pub fn cmd_run(cfg: &ExperimentConfig) -> CliResult<RunReport> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    let arms = [cfg.sampler.clone().baseline(), cfg.sampler.clone()];
    let results = run_trials(&prep, &arms, cfg.seed, cfg.trials, cfg.threads)?;
    let baseline = ArmSummary::of(results.iter().map(|r| &r[0]));
    let csc = ArmSummary::of(results.iter().map(|r| &r[1]));
    let summary = RunSummary {
        seed: cfg.seed,
        trials: cfg.trials,
        rho: cfg.sampler.rho,
        guidance_scale: cfg.sampler.guidance_scale,
        steps: cfg.sampler.steps,
        baseline,
        csc,
        delta: Deltas {
            final_e_attract: csc.mean_final_e_attract - baseline.mean_final_e_attract,
            final_e_total: csc.mean_final_e_total - baseline.mean_final_e_total,
            final_in_mask_fraction: csc.mean_final_in_mask_fraction
                - baseline.mean_final_in_mask_fraction,
            toy_vtid_proxy: csc.mean_toy_vtid_proxy - baseline.mean_toy_vtid_proxy,
        },
        csc_wins: Wins {
            in_mask_fraction: results
                .iter()
                .filter(|r| r[1].final_in_mask_fraction > r[0].final_in_mask_fraction)
                .count(),
            e_attract: results
                .iter()
                .filter(|r| r[1].final_e_attract < r[0].final_e_attract)
                .count(),
        },
    };
    Ok(RunReport {
        summary,
        trajectories_csv: trajectories_csv(&results)?,
    })
}

pub const ARM_NAMES: [&str; 2] = ["baseline", "csc"];

fn trajectories_csv(results: &[Vec<ArmResult>]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["trial", "arm"];
    header.extend(TRAJECTORY_CSV_HEADER);
    w.write_record(&header).map_err(CliError::internal)?;
    for (trial, arms) in results.iter().enumerate() {
        for (arm, r) in ARM_NAMES.iter().zip(arms) {
            for row in r.outcome.record.csv_rows() {
                let mut rec = vec![trial.to_string(), arm.to_string()];
                rec.extend(row);
                w.write_record(&rec).map_err(CliError::internal)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(CliError::internal)?;
    String::from_utf8(bytes).map_err(CliError::internal)
}

pub fn write_run(report: &RunReport, out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::output(out, e))?;
    let traj = out.join("trajectories.csv");
    std::fs::write(&traj, &report.trajectories_csv).map_err(|e| CliError::output(&traj, e))?;
    let summary = out.join("summary.json");
    let json = serde_json::to_string_pretty(&report.summary).map_err(CliError::internal)? + "\n";
    std::fs::write(&summary, json).map_err(|e| CliError::output(&summary, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum SweepKind {
    ScaleFactor,
    Guidance,
    Layers,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::ScaleFactor => "scale_factor",
            SweepKind::Guidance => "guidance",
            SweepKind::Layers => "layers",
        }
    }
}

pub const SCALE_FACTOR_GRID: [f64; 7] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3];
pub const GUIDANCE_GRID: [f64; 6] = [1.0, 1.5, 2.0, 2.5, 3.0, 5.0];
pub const LAYER_SUBSETS: [&str; 3] = ["both", "full_only", "half_only"];

pub const SWEEP_HEADER: [&str; 8] = [
    "kind",
    "value",
    "rho",
    "guidance_scale",
    "layers",
    "mean_final_e_attract",
    "mean_final_in_mask_fraction",
    "mean_toy_vtid_proxy",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub sampler: SamplerConfig,
    pub layers: &'static str,
    pub summary: ArmSummary,
}

/// Grid points of a sweep applied to the configured sampler.
pub fn sweep_points(kind: SweepKind, base: &SamplerConfig) -> Vec<(String, &'static str, SamplerConfig)> {
    match kind {
        SweepKind::ScaleFactor => SCALE_FACTOR_GRID
            .iter()
            .map(|&rho| (format!("{rho:?}"), "both", SamplerConfig { rho, ..base.clone() }))
            .collect(),
        SweepKind::Guidance => GUIDANCE_GRID
            .iter()
            .map(|&s| {
                let cfg = SamplerConfig {
                    guidance_scale: s,
                    ..base.clone()
                };
                (format!("{s:?}"), "both", cfg)
            })
            .collect(),
        SweepKind::Layers => LAYER_SUBSETS
            .iter()
            .map(|&name| {
                let ids: &[&str] = match name {
                    "both" => &[LAYER_FULL, LAYER_HALF],
                    "full_only" => &[LAYER_FULL],
                    _ => &[LAYER_HALF],
                };
                let mut cfg = base.clone();
                cfg.energy = cfg.energy.with_layers(ids.iter().copied());
                (name.to_string(), name, cfg)
            })
            .collect(),
    }
}

pub fn cmd_sweep(kind: SweepKind, cfg: &ExperimentConfig) -> CliResult<Vec<SweepRow>> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    let points = sweep_points(kind, &cfg.sampler);
    let configs: Vec<SamplerConfig> = points.iter().map(|p| p.2.clone()).collect();
    let results = run_trials(&prep, &configs, cfg.seed, cfg.trials, cfg.threads)?;
    Ok(points
        .into_iter()
        .enumerate()
        .map(|(k, (value, layers, sampler))| SweepRow {
            value,
            layers,
            summary: ArmSummary::of(results.iter().map(|r| &r[k])),
            sampler,
        })
        .collect())
}

pub fn sweep_csv(kind: SweepKind, rows: &[SweepRow]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER).map_err(CliError::internal)?;
    for r in rows {
        w.write_record([
            kind.name().to_string(),
            r.value.clone(),
            format!("{:?}", r.sampler.rho),
            format!("{:?}", r.sampler.guidance_scale),
            r.layers.to_string(),
            format!("{:?}", r.summary.mean_final_e_attract),
            format!("{:?}", r.summary.mean_final_in_mask_fraction),
            format!("{:?}", r.summary.mean_toy_vtid_proxy),
        ])
        .map_err(CliError::internal)?;
    }
    let bytes = w.into_inner().map_err(CliError::internal)?;
    String::from_utf8(bytes).map_err(CliError::internal)
}
