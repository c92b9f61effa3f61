//! Noise schedules, reverse steps and the energy-corrected sampling loop.

mod schedule;
mod step;

pub use schedule::{make_schedule, q_sample, NoiseSchedule};
pub use step::{ancestral_step, cfg_mix, csc_correct, score_from_eps};

use serde::{Deserialize, Serialize};

use crate::energy::{e_total, grad_total, Branch, EnergyBreakdown, EnergyConfig};
use crate::error::{Error, Result};
use crate::grid::{resample_mask, BinaryMask, Grid};
use crate::model::{Condition, DenoiserModel};
use crate::rng::{gaussian_field, RandomStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Correction scale, constant over steps.
    pub rho: f64,
    pub guidance_scale: f64,
    pub steps: usize,
    pub csc_enabled: bool,
    pub energy: EnergyConfig,
    pub record_snapshots: bool,
    /// Inclusive range of executed-step numbers (1 = first step) on which
    /// the correction runs; `None` means every step.
    pub csc_steps: Option<(usize, usize)>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            rho: 0.2,
            guidance_scale: 2.0,
            steps: 20,
            csc_enabled: true,
            energy: EnergyConfig::default(),
            record_snapshots: false,
            csc_steps: None,
        }
    }
}

impl SamplerConfig {
    pub fn baseline(mut self) -> Self {
        self.csc_enabled = false;
        self
    }

    fn corrects_at(&self, step: usize) -> bool {
        self.csc_enabled && self.csc_steps.is_none_or(|(lo, hi)| step >= lo && step <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// 1 for the first executed step.
    pub step: usize,
    /// Time step of the underlying schedule.
    pub t: usize,
    pub e_total: f64,
    /// Mean over selected layers.
    pub e_attract: f64,
    /// Mean over selected layers.
    pub e_repel: f64,
    pub branches: Vec<(String, Branch)>,
    pub in_mask_fraction: Vec<(String, f64)>,
    /// Norm of the latent-space energy gradient; 0 when no correction ran.
    pub grad_norm: f64,
    pub snapshot: Option<Grid>,
}

impl TrajectoryStep {
    pub fn fraction(&self, layer: &str) -> Option<f64> {
        self.in_mask_fraction
            .iter()
            .find(|(id, _)| id == layer)
            .map(|(_, v)| *v)
    }

    /// Branches as `full=outer;half=inner`.
    pub fn branch_label(&self) -> String {
        self.branches
            .iter()
            .map(|(id, b)| format!("{id}={b}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub steps: Vec<TrajectoryStep>,
}

pub const TRAJECTORY_CSV_HEADER: [&str; 9] = [
    "step",
    "t",
    "e_total",
    "e_attract",
    "e_repel",
    "branch",
    "in_mask_fraction_full",
    "in_mask_fraction_half",
    "grad_norm",
];

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// One row of fields per step, in [`TRAJECTORY_CSV_HEADER`] order. A layer
    /// the model does not have leaves its fraction empty.
    pub fn csv_rows(&self) -> Vec<[String; 9]> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        self.steps
            .iter()
            .map(|s| {
                [
                    s.step.to_string(),
                    s.t.to_string(),
                    s.e_total.to_string(),
                    s.e_attract.to_string(),
                    s.e_repel.to_string(),
                    s.branch_label(),
                    opt(s.fraction(crate::model::LAYER_FULL)),
                    opt(s.fraction(crate::model::LAYER_HALF)),
                    s.grad_norm.to_string(),
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = TRAJECTORY_CSV_HEADER.join(",");
        out.push('\n');
        for row in self.csv_rows() {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub x0: Grid,
    pub record: TrajectoryRecord,
    /// Energies of the garment attention evaluated on the returned latent.
    pub final_energy: EnergyBreakdown,
}

/// Runs the reverse process from Gaussian noise.
///
/// Each step predicts with the garment and null conditions, mixes them with
/// classifier-free guidance, converts the mix to a score and takes the
/// ancestral step to `m_t`. When correction is active the energy of the
/// garment attention at `x_t` is differentiated back to `x_t` and
/// `rho * grad` is subtracted from `m_t`. With `steps < T` the loop runs on
/// the strided schedule.
pub fn sample<M: DenoiserModel + ?Sized>(
    model: &M,
    mask: &BinaryMask,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    rng: &mut RandomStream,
) -> Result<SampleOutcome> {
    let (h, w) = model.dims();
    mask.grid().ensure_shape((h, w))?;
    config.energy.validate()?;
    if !(config.rho >= 0.0 && config.rho.is_finite()) {
        return Err(Error::InvalidArgument("rho must be finite and >= 0".into()));
    }
    if !config.guidance_scale.is_finite() {
        return Err(Error::InvalidArgument("guidance_scale must be finite".into()));
    }
    let sub = schedule.strided(config.steps)?;
    let masks: Vec<BinaryMask> = model
        .layer_shapes()
        .into_iter()
        .map(|(_, (lh, lw))| resample_mask(mask, lh, lw))
        .collect::<Result<_>>()?;

    let mut x = gaussian_field(rng, h, w)?;
    let mut record = TrajectoryRecord::default();
    for (n, k) in (1..=sub.len()).rev().enumerate() {
        let step = n + 1;
        let t = sub.timestep(k)?;
        let cond = model.predict(&x, t, Condition::Garment)?;
        let uncond = model.predict(&x, t, Condition::Null)?;
        let eps = cfg_mix(&uncond.eps, &cond.eps, config.guidance_scale)?;
        let score = score_from_eps(&eps, k, &sub)?;
        let m_t = ancestral_step(&x, k, &score, &sub, rng)?;

        let energy = e_total(&cond.layers, &masks, &config.energy)?;
        let mut grad_norm = 0.0;
        let next = if config.corrects_at(step) {
            let grads = grad_total(&cond.layers, &masks, &config.energy)?;
            let grad_x = model
                .attention_vjp(&x, t, Condition::Garment, &grads)
                .map_err(|e| match e {
                    Error::NonFinite { index } => Error::NonFiniteGradient { index },
                    other => other,
                })?;
            grad_norm = grad_x.norm();
            csc_correct(&m_t, &grad_x, config.rho)?
        } else {
            m_t
        };
        record.steps.push(TrajectoryStep {
            step,
            t,
            e_total: energy.total,
            e_attract: energy.mean_attract(),
            e_repel: energy.mean_repel(),
            branches: energy
                .layers
                .iter()
                .map(|l| (l.layer_id.clone(), l.branch))
                .collect(),
            in_mask_fraction: energy
                .layers
                .iter()
                .map(|l| (l.layer_id.clone(), l.in_mask_fraction))
                .collect(),
            grad_norm,
            snapshot: config.record_snapshots.then(|| next.clone()),
        });
        x = next;
    }

    let final_pred = model.predict(&x, sub.timestep(1)?, Condition::Garment)?;
    let final_energy = e_total(&final_pred.layers, &masks, &config.energy)?;
    Ok(SampleOutcome {
        x0: x,
        record,
        final_energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{toy_init, LinearGaussianModel, LAYER_FULL};

    fn toy_mask() -> BinaryMask {
        BinaryMask::rect(16, 12, 2, 3, 6, 6).unwrap()
    }

    #[test]
    fn rho_zero_matches_baseline_bitwise() {
        let model = toy_init(5, 16, 12, 4).unwrap();
        let sched = make_schedule(1000, 1e-4, 0.02).unwrap();
        let base = SamplerConfig::default().baseline();
        let zero = SamplerConfig {
            rho: 0.0,
            ..SamplerConfig::default()
        };
        let a = sample(&model, &toy_mask(), &base, &sched, &mut RandomStream::new(5)).unwrap();
        let b = sample(&model, &toy_mask(), &zero, &sched, &mut RandomStream::new(5)).unwrap();
        let bits = |g: &Grid| g.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.x0), bits(&b.x0));
        assert_eq!(a.final_energy, b.final_energy);
        assert!(b.record.steps.iter().any(|s| s.grad_norm > 0.0));
    }

    #[test]
    fn record_has_one_entry_per_step() {
        let model = toy_init(1, 8, 8, 2).unwrap();
        let sched = make_schedule(100, 1e-4, 0.02).unwrap();
        for steps in [1, 7, 20, 100] {
            let cfg = SamplerConfig {
                steps,
                record_snapshots: true,
                ..SamplerConfig::default()
            };
            let mask = BinaryMask::rect(8, 8, 0, 0, 4, 8).unwrap();
            let out = sample(&model, &mask, &cfg, &sched, &mut RandomStream::new(2)).unwrap();
            assert_eq!(out.record.len(), steps);
            assert_eq!(out.record.steps.last().unwrap().t, 1);
            assert!(out.record.steps.iter().all(|s| s.snapshot.is_some() && s.e_total.is_finite()));
            assert_eq!(out.record.to_csv().lines().count(), steps + 1);
        }
    }

    #[test]
    fn step_range_limits_correction() {
        let model = toy_init(1, 8, 8, 2).unwrap();
        let sched = make_schedule(100, 1e-4, 0.02).unwrap();
        let cfg = SamplerConfig {
            steps: 10,
            csc_steps: Some((3, 5)),
            ..SamplerConfig::default()
        };
        let mask = BinaryMask::rect(8, 8, 0, 0, 4, 8).unwrap();
        let out = sample(&model, &mask, &cfg, &sched, &mut RandomStream::new(2)).unwrap();
        for s in &out.record.steps {
            assert_eq!(s.grad_norm > 0.0, (3..=5).contains(&s.step), "step {}", s.step);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = toy_init(1, 8, 8, 2).unwrap();
        let sched = make_schedule(10, 1e-4, 0.02).unwrap();
        let mask = BinaryMask::rect(8, 8, 0, 0, 4, 8).unwrap();
        let too_many = SamplerConfig::default();
        assert!(sample(&model, &mask, &too_many, &sched, &mut RandomStream::new(0)).is_err());
        let wrong_mask = BinaryMask::rect(4, 4, 0, 0, 2, 2).unwrap();
        let cfg = SamplerConfig { steps: 5, ..SamplerConfig::default() };
        assert!(sample(&model, &wrong_mask, &cfg, &sched, &mut RandomStream::new(0)).is_err());
    }

    #[test]
    fn gaussian_sampler_recovers_mean_small() {
        let sched = make_schedule(50, 1e-3, 0.2).unwrap();
        let model = LinearGaussianModel::new(0.5, 1.0, sched.clone(), 4, 4).unwrap();
        let mask = BinaryMask::rect(4, 4, 0, 0, 2, 2).unwrap();
        let cfg = SamplerConfig {
            steps: 50,
            csc_enabled: false,
            guidance_scale: 1.0,
            ..SamplerConfig::default()
        };
        let root = RandomStream::new(77);
        let mut all = Vec::new();
        for i in 0..500 {
            let out = sample(&model, &mask, &cfg, &sched, &mut root.child_indexed("traj", i)).unwrap();
            all.extend_from_slice(out.x0.values());
        }
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 0.5).abs() < 4.0 * var.sqrt() / n.sqrt() + 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
        // Uniform placeholder attention: the in-mask fraction is the mask area.
        let out = sample(&model, &mask, &cfg, &sched, &mut RandomStream::new(1)).unwrap();
        assert_eq!(out.record.steps[0].fraction(LAYER_FULL), Some(0.25));
    }
}
