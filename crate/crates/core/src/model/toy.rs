//! A small attention-bearing denoiser with hand-derived backpropagation.
//!
//! ```text
//! z_c   = conv3x3(x, K_c)              zero padding
//! f_c   = softplus(z_c)
//! A     = softmax_ij(<q, f_ij> / sqrt(C))            layer "full", h x w
//! A_1/2 = softmax_ab(<q, avgpool2(f)_ab> / sqrt(C))  layer "half", h/2 x w/2
//! eps   = u x + v (h w) A_full x
//! ```
//!
//! `q` is `q_garment` or `q_null`; the latter is zero, so the unconditional
//! attention is exactly uniform.

use serde::{Deserialize, Serialize};

use super::{check_grad_layers, Condition, DenoiserModel, Prediction, LAYER_FULL, LAYER_HALF};
use crate::energy::AttentionLayer;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::{gaussian_field, RandomStream};
use crate::sampler::{q_sample, NoiseSchedule};

const KERNEL_SCALE: f64 = 0.5;
const QUERY_SCALE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyAttentionDenoiser {
    height: usize,
    width: usize,
    channels: usize,
    kernel: Vec<[f64; 9]>,
    q_garment: Vec<f64>,
    q_null: Vec<f64>,
    u: f64,
    v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

/// JSON form of the model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyParams {
    /// One row of nine taps (row-major 3x3) per channel.
    pub kernel: Vec<Vec<f64>>,
    pub q_garment: Vec<f64>,
    pub q_null: Vec<f64>,
    pub u: f64,
    pub v: f64,
    pub dims: ToyDims,
}

fn check_dims(h: usize, w: usize, channels: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(2) || !w.is_multiple_of(2) {
        return Err(Error::InvalidDimensions { height: h, width: w });
    }
    if channels == 0 {
        return Err(Error::InvalidArgument("channels must be >= 1".into()));
    }
    Ok(())
}

/// Seeded model with `u = 1.0`, `v = 0.05`. Height and width must be even.
pub fn toy_init(seed: u64, h: usize, w: usize, channels: usize) -> Result<ToyAttentionDenoiser> {
    check_dims(h, w, channels)?;
    let mut rng = RandomStream::new(seed).child("toy_init");
    let taps = rng.normals(9 * channels);
    let kernel = taps
        .chunks_exact(9)
        .map(|c| {
            let mut k = [0.0; 9];
            for (dst, src) in k.iter_mut().zip(c) {
                *dst = KERNEL_SCALE * src;
            }
            k
        })
        .collect();
    let q_garment = rng.normals(channels).into_iter().map(|v| QUERY_SCALE * v).collect();
    Ok(ToyAttentionDenoiser {
        height: h,
        width: w,
        channels,
        kernel,
        q_garment,
        q_null: vec![0.0; channels],
        u: 1.0,
        v: 0.05,
    })
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `dl = A (g - <A, g>)`.
fn softmax_backward(a: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = a.iter().zip(g).map(|(x, y)| x * y).sum();
    a.iter().zip(g).map(|(ai, gi)| ai * (gi - dot)).collect()
}

struct Forward {
    /// Pre-activations, channel-major.
    z: Vec<Vec<f64>>,
    a_full: Vec<f64>,
    a_half: Vec<f64>,
}

impl ToyAttentionDenoiser {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn with_output_scalars(mut self, u: f64, v: f64) -> Self {
        self.u = u;
        self.v = v;
        self
    }

    pub fn kernel(&self) -> &[[f64; 9]] {
        &self.kernel
    }

    fn query(&self, cond: Condition) -> &[f64] {
        match cond {
            Condition::Garment => &self.q_garment,
            Condition::Null => &self.q_null,
        }
    }

    fn check_input(&self, x: &Grid) -> Result<()> {
        x.ensure_shape((self.height, self.width))
    }

    fn forward(&self, x: &Grid, cond: Condition) -> Forward {
        let (h, w, c) = (self.height, self.width, self.channels);
        let xs = x.values();
        let mut z = vec![vec![0.0; h * w]; c];
        for (zc, k) in z.iter_mut().zip(&self.kernel) {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for di in 0..3 {
                        let si = i as isize + di as isize - 1;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        for dj in 0..3 {
                            let sj = j as isize + dj as isize - 1;
                            if sj < 0 || sj >= w as isize {
                                continue;
                            }
                            acc += k[di * 3 + dj] * xs[si as usize * w + sj as usize];
                        }
                    }
                    zc[i * w + j] = acc;
                }
            }
        }
        let q = self.query(cond);
        let inv_sqrt_c = 1.0 / (c as f64).sqrt();
        let f: Vec<Vec<f64>> = z
            .iter()
            .map(|zc| zc.iter().map(|&v| softplus(v)).collect())
            .collect();

        let logits_full: Vec<f64> = (0..h * w)
            .map(|p| inv_sqrt_c * (0..c).map(|ch| q[ch] * f[ch][p]).sum::<f64>())
            .collect();

        let (hh, hw) = (h / 2, w / 2);
        let logits_half: Vec<f64> = (0..hh * hw)
            .map(|p| {
                let (a, b) = (p / hw, p % hw);
                let dot: f64 = (0..c)
                    .map(|ch| {
                        let fc = &f[ch];
                        let pooled = 0.25
                            * (fc[2 * a * w + 2 * b]
                                + fc[2 * a * w + 2 * b + 1]
                                + fc[(2 * a + 1) * w + 2 * b]
                                + fc[(2 * a + 1) * w + 2 * b + 1]);
                        q[ch] * pooled
                    })
                    .sum();
                inv_sqrt_c * dot
            })
            .collect();

        Forward {
            z,
            a_full: softmax(&logits_full),
            a_half: softmax(&logits_half),
        }
    }

    pub fn to_params(&self) -> ToyParams {
        ToyParams {
            kernel: self.kernel.iter().map(|k| k.to_vec()).collect(),
            q_garment: self.q_garment.clone(),
            q_null: self.q_null.clone(),
            u: self.u,
            v: self.v,
            dims: ToyDims {
                height: self.height,
                width: self.width,
                channels: self.channels,
            },
        }
    }

    pub fn from_params(p: ToyParams) -> Result<Self> {
        let ToyDims {
            height,
            width,
            channels,
        } = p.dims;
        check_dims(height, width, channels)?;
        // Bound the work a parameter file can request.
        if height.saturating_mul(width).saturating_mul(channels) > 1 << 24 {
            return Err(Error::InvalidArgument("model dimensions too large".into()));
        }
        if p.kernel.len() != channels || p.kernel.iter().any(|k| k.len() != 9) {
            return Err(Error::InvalidArgument(format!(
                "kernel must be {channels} rows of 9 taps"
            )));
        }
        if p.q_garment.len() != channels || p.q_null.len() != channels {
            return Err(Error::InvalidArgument(format!(
                "queries must have {channels} entries"
            )));
        }
        let finite = p
            .kernel
            .iter()
            .flatten()
            .chain(&p.q_garment)
            .chain(&p.q_null)
            .chain([&p.u, &p.v])
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            kernel: p
                .kernel
                .iter()
                .map(|k| {
                    let mut a = [0.0; 9];
                    a.copy_from_slice(k);
                    a
                })
                .collect(),
            q_garment: p.q_garment,
            q_null: p.q_null,
            u: p.u,
            v: p.v,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_params()).expect("params serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_params(serde_json::from_str(s)?)
    }

    /// `(h w) A_full x`, the regressor multiplying `v`.
    fn attention_term(&self, x: &Grid, a_full: &[f64]) -> Vec<f64> {
        let n = (self.height * self.width) as f64;
        x.values().iter().zip(a_full).map(|(xv, a)| n * a * xv).collect()
    }
}

impl DenoiserModel for ToyAttentionDenoiser {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn layer_shapes(&self) -> Vec<(String, (usize, usize))> {
        vec![
            (LAYER_FULL.to_string(), (self.height, self.width)),
            (LAYER_HALF.to_string(), (self.height / 2, self.width / 2)),
        ]
    }

    fn predict(&self, x: &Grid, _t: usize, cond: Condition) -> Result<Prediction> {
        self.check_input(x)?;
        let fw = self.forward(x, cond);
        let att = self.attention_term(x, &fw.a_full);
        let eps: Vec<f64> = x
            .values()
            .iter()
            .zip(&att)
            .map(|(xv, at)| self.u * xv + self.v * at)
            .collect();
        let (h, w) = (self.height, self.width);
        Ok(Prediction {
            eps: Grid::new(h, w, eps)?,
            layers: vec![
                AttentionLayer::new(LAYER_FULL, Grid::new(h, w, fw.a_full)?)?,
                AttentionLayer::new(LAYER_HALF, Grid::new(h / 2, w / 2, fw.a_half)?)?,
            ],
        })
    }

    fn attention_vjp(
        &self,
        x: &Grid,
        _t: usize,
        cond: Condition,
        grad_layers: &[Grid],
    ) -> Result<Grid> {
        self.check_input(x)?;
        check_grad_layers(&self.layer_shapes(), grad_layers)?;
        let (h, w, c) = (self.height, self.width, self.channels);
        let fw = self.forward(x, cond);
        let dl_full = softmax_backward(&fw.a_full, grad_layers[0].values());
        let dl_half = softmax_backward(&fw.a_half, grad_layers[1].values());
        let q = self.query(cond);
        let inv_sqrt_c = 1.0 / (c as f64).sqrt();
        let hw = w / 2;

        let mut dx = vec![0.0; h * w];
        for ch in 0..c {
            let qc = q[ch] * inv_sqrt_c;
            let k = &self.kernel[ch];
            for i in 0..h {
                for j in 0..w {
                    let p = i * w + j;
                    let df = qc * (dl_full[p] + 0.25 * dl_half[(i / 2) * hw + j / 2]);
                    let dz = df * sigmoid(fw.z[ch][p]);
                    if dz == 0.0 {
                        continue;
                    }
                    for di in 0..3 {
                        let si = i as isize + di as isize - 1;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        for dj in 0..3 {
                            let sj = j as isize + dj as isize - 1;
                            if sj < 0 || sj >= w as isize {
                                continue;
                            }
                            dx[si as usize * w + sj as usize] += k[di * 3 + dj] * dz;
                        }
                    }
                }
            }
        }
        Grid::new(h, w, dx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub iters: usize,
    pub step_size: f64,
    /// Number of `(x0, t, eps)` draws in the fixed training batch.
    pub batch: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iters: 0,
            step_size: 0.05,
            batch: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: ToyAttentionDenoiser,
    /// Batch loss before each iteration and after the last one.
    pub losses: Vec<f64>,
}

/// Gradient descent on the output scalars `u` and `v` against the noise
/// prediction loss on a fixed batch drawn from `rng`; kernel and queries stay
/// frozen, so the loss is a convex quadratic in `(u, v)`.
pub fn fit_toy(
    model: &ToyAttentionDenoiser,
    dataset: &[Grid],
    schedule: &NoiseSchedule,
    rng: &mut RandomStream,
    cfg: &FitConfig,
) -> Result<FitOutcome> {
    if cfg.iters == 0 || cfg.step_size == 0.0 {
        return Ok(FitOutcome {
            model: model.clone(),
            losses: vec![],
        });
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch must be >= 1".into()));
    }
    // (eps, x_t, attention regressor) per draw.
    let mut batch = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let x0 = &dataset[rng.below(dataset.len() as u64) as usize];
        model.check_input(x0)?;
        let t = 1 + rng.below(schedule.len() as u64) as usize;
        let eps = gaussian_field(rng, model.height, model.width)?;
        let xt = q_sample(x0, t, &eps, schedule)?;
        let fw = model.forward(&xt, Condition::Garment);
        let att = model.attention_term(&xt, &fw.a_full);
        batch.push((eps.into_values(), xt.into_values(), att));
    }
    let count = (cfg.batch * model.height * model.width) as f64;
    let eval = |u: f64, v: f64| {
        let mut loss = 0.0;
        let mut gu = 0.0;
        let mut gv = 0.0;
        for (eps, xt, att) in &batch {
            for ((e, x), a) in eps.iter().zip(xt).zip(att) {
                let r = e - u * x - v * a;
                loss += r * r;
                gu -= 2.0 * r * x;
                gv -= 2.0 * r * a;
            }
        }
        (loss / count, gu / count, gv / count)
    };
    let (mut u, mut v) = (model.u, model.v);
    let mut losses = Vec::with_capacity(cfg.iters + 1);
    for _ in 0..cfg.iters {
        let (loss, gu, gv) = eval(u, v);
        losses.push(loss);
        u -= cfg.step_size * gu;
        v -= cfg.step_size * gv;
    }
    losses.push(eval(u, v).0);
    if !(u.is_finite() && v.is_finite()) {
        return Err(Error::InvalidArgument("fit diverged; reduce step_size".into()));
    }
    Ok(FitOutcome {
        model: model.clone().with_output_scalars(u, v),
        losses,
    })
}
