//! Synthetic try-on scenes with exact masks, flows and composite references.
//!
//! A scene is a person canvas (textured background plus an elliptical body)
//! wearing a patterned garment inside a rectangular clothing region. The
//! garment is also rendered standalone, and an affine flow places the
//! garment rectangle onto the clothing region.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid};
use crate::io::{write_grid, write_mask};
use crate::manifest::{Manifest, ROLES};
use crate::rng::RandomStream;
use crate::vtid::{warp_image, Flow, SceneImage};

pub const DEFAULT_HEIGHT: usize = 48;
pub const DEFAULT_WIDTH: usize = 36;

pub type Rgb = [f64; 3];

/// Rows `[top, top + height)`, columns `[left, left + width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.top && i < self.top + self.height && j >= self.left && j < self.left + self.width
    }

    fn fits(&self, h: usize, w: usize) -> bool {
        self.height > 0 && self.width > 0 && self.top + self.height <= h && self.left + self.width <= w
    }
}

/// Axis-aligned ellipse in pixel-centre coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
}

impl Ellipse {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StripeAxis {
    /// Colour changes from row to row.
    Horizontal,
    /// Colour changes from column to column.
    Vertical,
}

/// Garment texture in garment-local pixel coordinates. A period `p` means
/// bands of `p / 2` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pattern {
    Solid { color: Rgb },
    Stripes { a: Rgb, b: Rgb, period: usize, axis: StripeAxis },
    Checker { a: Rgb, b: Rgb, period: usize },
    LogoBlob { base: Rgb, blob: Rgb, radius: f64 },
}

impl Pattern {
    pub fn color_at(&self, gy: usize, gx: usize, rect: &Rect) -> Rgb {
        match *self {
            Pattern::Solid { color } => color,
            Pattern::Stripes { a, b, period, axis } => {
                let u = match axis {
                    StripeAxis::Horizontal => gy,
                    StripeAxis::Vertical => gx,
                };
                if (2 * u / period) % 2 == 0 {
                    a
                } else {
                    b
                }
            }
            Pattern::Checker { a, b, period } => {
                if (2 * gy / period + 2 * gx / period).is_multiple_of(2) {
                    a
                } else {
                    b
                }
            }
            Pattern::LogoBlob { base, blob, radius } => {
                let dy = gy as f64 + 0.5 - rect.height as f64 / 2.0;
                let dx = gx as f64 + 0.5 - rect.width as f64 / 2.0;
                if dy * dy + dx * dx <= radius * radius {
                    blob
                } else {
                    base
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let colors: Vec<Rgb> = match *self {
            Pattern::Solid { color } => vec![color],
            Pattern::Stripes { a, b, period, .. } | Pattern::Checker { a, b, period } => {
                if period < 2 {
                    return Err(Error::DegenerateGeometry(format!(
                        "pattern period {period} is below 2 pixels"
                    )));
                }
                vec![a, b]
            }
            Pattern::LogoBlob { base, blob, radius } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(Error::DegenerateGeometry(format!("blob radius {radius}")));
                }
                vec![base, blob]
            }
        };
        check_colors(&colors)
    }
}

fn check_colors(colors: &[Rgb]) -> Result<()> {
    if colors.iter().flatten().all(|c| (0.0..=1.0).contains(c)) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("colours must lie in [0, 1]".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub background: Rgb,
    /// Amplitude of the per-pixel background texture.
    pub texture: f64,
    pub skin: Rgb,
    pub body: Ellipse,
    pub croi: Rect,
    /// Where the garment sits in the standalone garment image.
    pub garment_rect: Rect,
    pub garment_background: Rgb,
    pub pattern: Pattern,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height, self.width);
        if h < 3 || w < 3 {
            return Err(Error::DegenerateGeometry(format!("canvas {h}x{w} is too small")));
        }
        let c = &self.croi;
        if !(c.height > 0
            && c.width > 0
            && c.top >= 1
            && c.left >= 1
            && c.top + c.height < h
            && c.left + c.width < w)
        {
            return Err(Error::DegenerateGeometry(format!(
                "clothing region {c:?} is not strictly inside the {h}x{w} canvas"
            )));
        }
        let b = &self.body;
        if !(b.ry > 0.0 && b.rx > 0.0 && b.cy.is_finite() && b.cx.is_finite())
            || !b.contains(
                c.top as f64 + c.height as f64 / 2.0,
                c.left as f64 + c.width as f64 / 2.0,
            )
        {
            return Err(Error::DegenerateGeometry(
                "clothing region centre lies outside the body".into(),
            ));
        }
        if !self.garment_rect.fits(h, w) {
            return Err(Error::DegenerateGeometry(format!(
                "garment rectangle {:?} does not fit the canvas",
                self.garment_rect
            )));
        }
        if !(self.texture >= 0.0 && self.texture.is_finite()) {
            return Err(Error::InvalidArgument("texture must be finite and >= 0".into()));
        }
        check_colors(&[self.background, self.skin, self.garment_background])?;
        self.pattern.validate()
    }

    pub fn mask(&self) -> Result<BinaryMask> {
        let c = &self.croi;
        BinaryMask::rect(self.height, self.width, c.top, c.left, c.height, c.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSample {
    pub person: SceneImage,
    pub garment: SceneImage,
    pub mask: BinaryMask,
    pub flow: Flow,
    pub paired: bool,
    pub reference: SceneImage,
}

/// Affine field mapping the clothing region onto the garment rectangle,
/// corner to corner, so every clothing-region pixel samples inside the
/// garment. Defined on the whole canvas.
pub fn placement_flow(garment_rect: &Rect, croi: &Rect, h: usize, w: usize) -> Result<Flow> {
    let ratio = |g: usize, c: usize| {
        if c > 1 {
            (g - 1) as f64 / (c - 1) as f64
        } else {
            0.0
        }
    };
    let sy = ratio(garment_rect.height, croi.height);
    let sx = ratio(garment_rect.width, croi.width);
    let fy = Grid::from_fn(h, w, |i, _| {
        garment_rect.top as f64 + (i as f64 - croi.top as f64) * sy - i as f64
    })?;
    let fx = Grid::from_fn(h, w, |_, j| {
        garment_rect.left as f64 + (j as f64 - croi.left as f64) * sx - j as f64
    })?;
    Flow::new(fx, fy)
}

/// `person * (1 - M) + warp(garment, flow) * M`, channelwise.
pub fn composite_reference(
    person: &SceneImage,
    garment: &SceneImage,
    mask: &BinaryMask,
    flow: &Flow,
) -> Result<SceneImage> {
    let shape = person.shape();
    for s in [garment.shape(), mask.shape(), flow.shape()] {
        if s != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: s,
            });
        }
    }
    let warped = warp_image(garment, flow)?;
    let (h, w) = shape;
    SceneImage::from_fn(h, w, |i, j| {
        if mask.is_set(i, j) {
            warped.pixel(i, j)
        } else {
            person.pixel(i, j)
        }
    })
}

pub fn render_garment(spec: &SceneSpec) -> Result<SceneImage> {
    let r = spec.garment_rect;
    SceneImage::from_fn(spec.height, spec.width, |i, j| {
        if r.contains(i, j) {
            spec.pattern.color_at(i - r.top, j - r.left, &r)
        } else {
            spec.garment_background
        }
    })
}

pub fn gen_scene(rng: &mut RandomStream, spec: &SceneSpec) -> Result<BenchSample> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let garment = render_garment(spec)?;
    let mut base = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let px = if spec.body.contains(i as f64 + 0.5, j as f64 + 0.5) {
                spec.skin
            } else {
                let n = spec.texture * rng.normal();
                spec.background.map(|c| c + n)
            };
            base.push(px);
        }
    }
    let base = SceneImage::from_fn(h, w, |i, j| base[i * w + j])?;
    let mask = spec.mask()?;
    let flow = placement_flow(&spec.garment_rect, &spec.croi, h, w)?;
    let person = composite_reference(&base, &garment, &mask, &flow)?;
    let reference = composite_reference(&person, &garment, &mask, &flow)?;
    Ok(BenchSample {
        person,
        garment,
        mask,
        flow,
        paired: true,
        reference,
    })
}

fn random_color(rng: &mut RandomStream) -> Rgb {
    [rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)]
}

/// Seeded scene on an `h x w` canvas with the clothing region around the
/// upper third of the body.
pub fn random_spec(rng: &mut RandomStream, h: usize, w: usize) -> Result<SceneSpec> {
    if h < 12 || w < 12 {
        return Err(Error::DegenerateGeometry(format!(
            "canvas {h}x{w} is too small for a random scene"
        )));
    }
    let jitter = |rng: &mut RandomStream, n: usize| rng.below(n as u64 + 1) as usize;
    let (hf, wf) = (h as f64, w as f64);
    let body = Ellipse {
        cy: hf * 0.55,
        cx: wf / 2.0,
        ry: hf * 0.42,
        rx: wf * 0.32,
    };
    let ch = (h / 4).max(2) + jitter(rng, h / 12);
    let cw = (w * 2 / 5).max(2) + jitter(rng, w / 9);
    let ctop = h / 4 + jitter(rng, h / 12) - h / 24;
    let cleft = (w - cw) / 2 + jitter(rng, 2) - 1;
    let croi = Rect {
        top: ctop,
        left: cleft,
        height: ch,
        width: cw,
    };
    let gh = (ch + jitter(rng, 4)).saturating_sub(2).max(2).min(h - 2);
    let gw = (cw + jitter(rng, 4)).saturating_sub(2).max(2).min(w - 2);
    let garment_rect = Rect {
        top: jitter(rng, h - gh - 1) + 1,
        left: jitter(rng, w - gw - 1) + 1,
        height: gh,
        width: gw,
    }
    .clamped(h, w);
    let a = random_color(rng);
    let b = random_color(rng);
    let period = 2 + 2 * jitter(rng, 3);
    let pattern = match rng.below(4) {
        0 => Pattern::Solid { color: a },
        1 => Pattern::Stripes {
            a,
            b,
            period,
            axis: if rng.below(2) == 0 {
                StripeAxis::Horizontal
            } else {
                StripeAxis::Vertical
            },
        },
        2 => Pattern::Checker { a, b, period },
        _ => Pattern::LogoBlob {
            base: a,
            blob: b,
            radius: gh.min(gw) as f64 * rng.uniform(0.2, 0.4),
        },
    };
    let spec = SceneSpec {
        height: h,
        width: w,
        background: random_color(rng),
        texture: 0.03,
        skin: [
            rng.uniform(0.55, 0.95),
            rng.uniform(0.4, 0.75),
            rng.uniform(0.3, 0.6),
        ],
        body,
        croi,
        garment_rect,
        garment_background: [1.0, 1.0, 1.0],
        pattern,
    };
    spec.validate()?;
    Ok(spec)
}

impl Rect {
    fn clamped(mut self, h: usize, w: usize) -> Rect {
        if self.top + self.height > h {
            self.top = h - self.height;
        }
        if self.left + self.width > w {
            self.left = w - self.width;
        }
        self
    }
}

/// A generated split: specs and samples in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub paired: bool,
    pub specs: Vec<SceneSpec>,
    pub samples: Vec<BenchSample>,
}

impl Dataset {
    pub fn split_name(&self) -> &'static str {
        split_name(self.paired)
    }
}

pub fn split_name(paired: bool) -> &'static str {
    if paired {
        "paired"
    } else {
        "unpaired"
    }
}

/// `n` scenes on the default canvas. Unpaired samples wear the garment of
/// scene `(i + 1) mod n`.
pub fn gen_dataset(seed: u64, n: usize, paired: bool) -> Result<Dataset> {
    gen_dataset_on(seed, n, paired, DEFAULT_HEIGHT, DEFAULT_WIDTH)
}

pub fn gen_dataset_on(seed: u64, n: usize, paired: bool, h: usize, w: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be >= 1".into()));
    }
    if !paired && n < 2 {
        return Err(Error::InvalidArgument(
            "an unpaired split needs at least 2 scenes".into(),
        ));
    }
    let root = RandomStream::new(seed).child("synthbench");
    let specs = (0..n)
        .map(|i| random_spec(&mut root.child_indexed("spec", i as u64), h, w))
        .collect::<Result<Vec<_>>>()?;
    let scenes = specs
        .iter()
        .enumerate()
        .map(|(i, s)| gen_scene(&mut root.child_indexed("scene", i as u64), s))
        .collect::<Result<Vec<_>>>()?;
    let samples = if paired {
        scenes
    } else {
        (0..n)
            .map(|i| {
                let j = (i + 1) % n;
                let own = &scenes[i];
                let garment = scenes[j].garment.clone();
                let flow = placement_flow(&specs[j].garment_rect, &specs[i].croi, h, w)?;
                let reference = composite_reference(&own.person, &garment, &own.mask, &flow)?;
                Ok(BenchSample {
                    person: own.person.clone(),
                    garment,
                    mask: own.mask.clone(),
                    flow,
                    paired: false,
                    reference,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(Dataset {
        seed,
        paired,
        specs,
        samples,
    })
}

/// Writes `<out>/<split>/<index>/<role>.f64grid` for every sample and
/// `<out>/<split>/manifest.json`. The manifest's `generated` entries point
/// at the composite references and `gen_mask` at the clothing masks.
pub fn write_dataset(dataset: &Dataset, out: &Path) -> Result<Manifest> {
    let split = dataset.split_name();
    let dir = out.join(split);
    let mut manifest = Manifest {
        split: Some(split.to_string()),
        seed: Some(dataset.seed),
        ..Manifest::default()
    };
    for (i, s) in dataset.samples.iter().enumerate() {
        let index = format!("{i:04}");
        let sample_dir = dir.join(&index);
        std::fs::create_dir_all(&sample_dir)?;
        for role in ROLES {
            let path = sample_dir.join(format!("{role}.f64grid"));
            match role {
                "person" => write_grid(&path, &s.person.to_stacked())?,
                "garment" => write_grid(&path, &s.garment.to_stacked())?,
                "reference" => write_grid(&path, &s.reference.to_stacked())?,
                "flow_x" => write_grid(&path, &s.flow.x)?,
                "flow_y" => write_grid(&path, &s.flow.y)?,
                "mask" | "gen_mask" => write_mask(&path, &s.mask)?,
                _ => unreachable!("unknown role {role}"),
            }
        }
        let rel = |role: &str| format!("{index}/{role}.f64grid");
        manifest.person.push(rel("person"));
        manifest.garment.push(rel("garment"));
        manifest.flow_x.push(rel("flow_x"));
        manifest.flow_y.push(rel("flow_y"));
        manifest.generated.push(rel("reference"));
        manifest.mask.push(rel("mask"));
        manifest.gen_mask.push(rel("gen_mask"));
    }
    std::fs::write(dir.join("manifest.json"), manifest.to_json()?)?;
    Ok(manifest)
}

/// Grey-level latent in `[-1, 1]` at `h x w`, box-averaged from the image.
/// The canvas must be an integer multiple of the latent size.
pub fn latent_from_image(image: &SceneImage, h: usize, w: usize) -> Result<Grid> {
    let (ih, iw) = image.shape();
    if h == 0 || w == 0 || ih % h != 0 || iw % w != 0 {
        return Err(Error::InvalidArgument(format!(
            "{ih}x{iw} image is not a multiple of {h}x{w}"
        )));
    }
    let (fy, fx) = (ih / h, iw / w);
    let [r, g, b] = image.channels();
    Grid::from_fn(h, w, |a, c| {
        let mut s = 0.0;
        for i in a * fy..(a + 1) * fy {
            for j in c * fx..(c + 1) * fx {
                s += (r.get(i, j) + g.get(i, j) + b.get(i, j)) / 3.0;
            }
        }
        2.0 * s / (fy * fx) as f64 - 1.0
    })
}

/// Grey image at `h x w` from a latent: `(clamp(x, -1, 1) + 1) / 2`,
/// nearest-neighbour upsampled.
pub fn image_from_latent(latent: &Grid, h: usize, w: usize) -> Result<SceneImage> {
    let (lh, lw) = latent.shape();
    if h == 0 || w == 0 || !h.is_multiple_of(lh) || !w.is_multiple_of(lw) {
        return Err(Error::InvalidArgument(format!(
            "{h}x{w} canvas is not a multiple of the {lh}x{lw} latent"
        )));
    }
    let (fy, fx) = (h / lh, w / lw);
    SceneImage::from_fn(h, w, |i, j| {
        let v = (latent.get(i / fy, j / fx).clamp(-1.0, 1.0) + 1.0) / 2.0;
        [v; 3]
    })
}
