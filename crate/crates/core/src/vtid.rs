//! VTID: a try-on distance built from two perceptual distances.
//!
//! Four representations are compared in two pairs:
//! the person's agnostic (garment region removed) against the generated
//! image's agnostic, and the garment warped onto the person against the
//! generated image's garment region.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{bilinear_warp, BinaryMask, Grid};
use crate::rng::{gaussian_field, RandomStream};

/// RGB image with channels clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    channels: [Grid; 3],
}

impl SceneImage {
    pub fn new(r: Grid, g: Grid, b: Grid) -> Result<Self> {
        g.ensure_shape(r.shape())?;
        b.ensure_shape(r.shape())?;
        let clamp = |c: Grid| c.map(|v| v.clamp(0.0, 1.0));
        Ok(Self {
            channels: [clamp(r)?, clamp(g)?, clamp(b)?],
        })
    }

    pub fn filled(h: usize, w: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::new(
            Grid::filled(h, w, rgb[0])?,
            Grid::filled(h, w, rgb[1])?,
            Grid::filled(h, w, rgb[2])?,
        )
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut planes = [
            Vec::with_capacity(h * w),
            Vec::with_capacity(h * w),
            Vec::with_capacity(h * w),
        ];
        for i in 0..h {
            for j in 0..w {
                let px = f(i, j);
                for (p, v) in planes.iter_mut().zip(px) {
                    p.push(v);
                }
            }
        }
        let [r, g, b] = planes;
        Self::new(Grid::new(h, w, r)?, Grid::new(h, w, g)?, Grid::new(h, w, b)?)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.channels[0].shape()
    }

    pub fn channels(&self) -> &[Grid; 3] {
        &self.channels
    }

    pub fn pixel(&self, i: usize, j: usize) -> [f64; 3] {
        [
            self.channels[0].get(i, j),
            self.channels[1].get(i, j),
            self.channels[2].get(i, j),
        ]
    }

    pub fn map_channels(&self, mut f: impl FnMut(&Grid) -> Result<Grid>) -> Result<SceneImage> {
        let [r, g, b] = &self.channels;
        SceneImage::new(f(r)?, f(g)?, f(b)?)
    }

    /// Channel-stacked `3h x w` grid: R rows, then G, then B.
    pub fn to_stacked(&self) -> Grid {
        let (h, w) = self.shape();
        let values = self
            .channels
            .iter()
            .flat_map(|c| c.values().iter().copied())
            .collect();
        Grid::new(3 * h, w, values).expect("finite channels")
    }

    pub fn from_stacked(grid: &Grid) -> Result<Self> {
        let (h3, w) = grid.shape();
        if h3 % 3 != 0 {
            return Err(Error::InvalidArgument(format!(
                "stacked RGB grid height {h3} is not a multiple of 3"
            )));
        }
        let h = h3 / 3;
        let plane = |k: usize| Grid::new(h, w, grid.values()[k * h * w..(k + 1) * h * w].to_vec());
        Self::new(plane(0)?, plane(1)?, plane(2)?)
    }

    /// Adds `N(0, sigma^2)` noise per pixel and channel, then clamps.
    pub fn with_noise(&self, sigma: f64, rng: &mut RandomStream) -> Result<SceneImage> {
        let (h, w) = self.shape();
        self.map_channels(|c| {
            let n = gaussian_field(rng, h, w)?;
            c.zip_map(&n, |v, e| v + sigma * e)
        })
    }
}

fn mask_channels(image: &SceneImage, m: &Grid) -> Result<SceneImage> {
    m.ensure_shape(image.shape())?;
    image.map_channels(|c| c.mul(m))
}

/// Every channel multiplied by `1 - M`.
pub fn extract_agnostic(image: &SceneImage, clothing_mask: &BinaryMask) -> Result<SceneImage> {
    mask_channels(image, clothing_mask.complement().grid())
}

/// Every channel multiplied by `M`.
pub fn extract_clothing(image: &SceneImage, clothing_mask: &BinaryMask) -> Result<SceneImage> {
    mask_channels(image, clothing_mask.grid())
}

/// Dense displacement field in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub x: Grid,
    pub y: Grid,
}

impl Flow {
    pub fn new(x: Grid, y: Grid) -> Result<Self> {
        y.ensure_shape(x.shape())?;
        Ok(Self { x, y })
    }

    pub fn zero(h: usize, w: usize) -> Result<Self> {
        Ok(Self {
            x: Grid::zeros(h, w)?,
            y: Grid::zeros(h, w)?,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.x.shape()
    }
}

pub fn warp_image(image: &SceneImage, flow: &Flow) -> Result<SceneImage> {
    image.map_channels(|c| bilinear_warp(c, &flow.x, &flow.y))
}

/// Per-scale feature maps of an image.
pub type Features = Vec<Vec<Grid>>;

pub trait FeatureExtractor: Send + Sync {
    /// Feature maps grouped by scale. Deterministic.
    fn features(&self, image: &SceneImage) -> Result<Features>;
}

/// The RGB channels themselves at a single scale.
#[derive(Debug, Clone, Copy, Default)]
pub struct PixelExtractor;

impl FeatureExtractor for PixelExtractor {
    fn features(&self, image: &SceneImage) -> Result<Features> {
        Ok(vec![image.channels().to_vec()])
    }
}

/// Fixed random convolutional features: for scale `s` (from 1), the image is
/// average-pooled by 2 `s - 1` times, convolved with seeded 3x3x3 kernels
/// (zero padding) and passed through softplus.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomConvExtractor {
    /// `[scale][map]` kernels, laid out `[in_channel][3][3]`.
    kernels: Vec<Vec<[f64; 27]>>,
}

pub fn random_feature_extractor(
    seed: u64,
    n_scales: usize,
    channels: usize,
) -> Result<RandomConvExtractor> {
    if n_scales == 0 || channels == 0 {
        return Err(Error::InvalidArgument(
            "n_scales and channels must be >= 1".into(),
        ));
    }
    let root = RandomStream::new(seed).child("features");
    let gain = 1.0 / 27f64.sqrt();
    let kernels = (0..n_scales)
        .map(|s| {
            let mut rng = root.child_indexed("scale", s as u64);
            (0..channels)
                .map(|_| {
                    let mut k = [0.0; 27];
                    for (dst, v) in k.iter_mut().zip(rng.normals(27)) {
                        *dst = gain * v;
                    }
                    k
                })
                .collect()
        })
        .collect();
    Ok(RandomConvExtractor { kernels })
}

/// 2x average pooling; odd edges average the cells that exist.
pub fn avg_pool2(g: &Grid) -> Grid {
    let (h, w) = g.shape();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(oh * ow);
    for a in 0..oh {
        for b in 0..ow {
            let mut s = 0.0;
            let mut n = 0.0;
            for i in 2 * a..(2 * a + 2).min(h) {
                for j in 2 * b..(2 * b + 2).min(w) {
                    s += g.get(i, j);
                    n += 1.0;
                }
            }
            out.push(s / n);
        }
    }
    Grid::from_parts(oh, ow, out)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Copy of `g` with a one-pixel zero border.
fn zero_pad(g: &Grid) -> Vec<f64> {
    let (h, w) = g.shape();
    let pw = w + 2;
    let mut out = vec![0.0; (h + 2) * pw];
    for (i, row) in g.values().chunks_exact(w).enumerate() {
        out[(i + 1) * pw + 1..(i + 1) * pw + 1 + w].copy_from_slice(row);
    }
    out
}

impl FeatureExtractor for RandomConvExtractor {
    fn features(&self, image: &SceneImage) -> Result<Features> {
        let mut planes: Vec<Grid> = image.channels().to_vec();
        let mut out = Vec::with_capacity(self.kernels.len());
        for (s, scale_kernels) in self.kernels.iter().enumerate() {
            if s > 0 {
                planes = planes.iter().map(avg_pool2).collect();
            }
            let (h, w) = planes[0].shape();
            let pw = w + 2;
            let padded: Vec<Vec<f64>> = planes.iter().map(zero_pad).collect();
            let maps = scale_kernels
                .iter()
                .map(|k| {
                    let mut acc = vec![0.0; h * w];
                    for (c, plane) in padded.iter().enumerate() {
                        for di in 0..3 {
                            for dj in 0..3 {
                                let wk = k[c * 9 + di * 3 + dj];
                                for i in 0..h {
                                    let src = &plane[(i + di) * pw + dj..(i + di) * pw + dj + w];
                                    let dst = &mut acc[i * w..(i + 1) * w];
                                    for (d, v) in dst.iter_mut().zip(src) {
                                        *d += wk * v;
                                    }
                                }
                            }
                        }
                    }
                    Grid::new(h, w, acc.into_iter().map(softplus).collect())
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(maps);
        }
        Ok(out)
    }
}

/// Square root of the mean over scales of the per-element mean squared
/// feature difference.
pub fn perceptual_l2(a: &SceneImage, b: &SceneImage, fx: &dyn FeatureExtractor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape(),
            found: b.shape(),
        });
    }
    let fa = fx.features(a)?;
    let fb = fx.features(b)?;
    if fa.is_empty() || fa.len() != fb.len() {
        return Err(Error::InvalidArgument("extractor returned no scales".into()));
    }
    let mut total = 0.0;
    for (sa, sb) in fa.iter().zip(&fb) {
        let mut sq = 0.0;
        let mut n = 0usize;
        for (ga, gb) in sa.iter().zip(sb) {
            gb.ensure_shape(ga.shape())?;
            sq += ga
                .values()
                .iter()
                .zip(gb.values())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
            n += ga.len();
        }
        total += sq / n as f64;
    }
    Ok((total / fa.len() as f64).sqrt())
}

/// How the human and clothing distances are combined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Combination {
    #[default]
    Sum,
    Weighted { human: f64, clothing: f64 },
}

impl Combination {
    pub fn combine(&self, human: f64, clothing: f64) -> f64 {
        match *self {
            Combination::Sum => human + clothing,
            Combination::Weighted { human: wh, clothing: wc } => wh * human + wc * clothing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VtidReport {
    pub human_dist: f64,
    pub clothing_dist: f64,
    pub vtid: f64,
}

/// Inputs of one VTID evaluation.
#[derive(Debug, Clone, Copy)]
pub struct VtidInputs<'a> {
    pub person: &'a SceneImage,
    pub garment: &'a SceneImage,
    pub flow: &'a Flow,
    pub generated: &'a SceneImage,
    pub clothing_mask: &'a BinaryMask,
    pub gen_clothing_mask: &'a BinaryMask,
}

pub fn vtid_score(inputs: VtidInputs<'_>, fx: &dyn FeatureExtractor) -> Result<VtidReport> {
    vtid_score_with(inputs, fx, Combination::Sum)
}

pub fn vtid_score_with(
    inputs: VtidInputs<'_>,
    fx: &dyn FeatureExtractor,
    combination: Combination,
) -> Result<VtidReport> {
    let shape = inputs.person.shape();
    for s in [
        inputs.garment.shape(),
        inputs.generated.shape(),
        inputs.flow.shape(),
        inputs.clothing_mask.shape(),
        inputs.gen_clothing_mask.shape(),
    ] {
        if s != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: s,
            });
        }
    }
    let human_dist = perceptual_l2(
        &extract_agnostic(inputs.person, inputs.clothing_mask)?,
        &extract_agnostic(inputs.generated, inputs.gen_clothing_mask)?,
        fx,
    )?;
    let warped = warp_image(inputs.garment, inputs.flow)?;
    let clothing_dist = perceptual_l2(
        &extract_clothing(&warped, inputs.gen_clothing_mask)?,
        &extract_clothing(inputs.generated, inputs.gen_clothing_mask)?,
        fx,
    )?;
    Ok(VtidReport {
        human_dist,
        clothing_dist,
        vtid: combination.combine(human_dist, clothing_dist),
    })
}

/// Ranks starting at 1; ties share their average rank.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "sample lengths differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("constant input has no rank correlation".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}
