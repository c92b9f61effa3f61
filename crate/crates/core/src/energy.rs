//! Attention-map energies that pull a token's attention into a binary region.
//!
//! * attract: mass outside the region divided by mass inside it;
//! * repel, inner branch: hinge penalty on pairs of in-region attention values
//!   closer than a margin, active once the support already lies in the region;
//! * repel, outer branch: negative in-region mass.
//!
//! The support of a map is its relatively thresholded non-zero set
//! (`A > tau * max A`). Support membership and its size `N` are held constant
//! when differentiating.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    /// Weight of the repel term.
    pub lambda: f64,
    /// Hinge margin of the inner repel term.
    pub delta: f64,
    /// Relative support threshold in `(0, 1)`.
    pub support_tau: f64,
    /// Layers contributing to the total; `None` selects every layer.
    pub layer_select: Option<BTreeSet<String>>,
    /// Lower clamp for the in-region mass in the attract denominator.
    pub epsilon_den: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            delta: 0.02,
            support_tau: 0.01,
            layer_select: None,
            epsilon_den: 1e-8,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad("delta must be finite and >= 0");
        }
        if !(self.support_tau > 0.0 && self.support_tau < 1.0) {
            return bad("support_tau must lie in (0, 1)");
        }
        if !(self.epsilon_den > 0.0 && self.epsilon_den.is_finite()) {
            return bad("epsilon_den must be finite and > 0");
        }
        if matches!(&self.layer_select, Some(s) if s.is_empty()) {
            return Err(Error::EmptySelection);
        }
        Ok(())
    }

    pub fn selects(&self, layer_id: &str) -> bool {
        self.layer_select
            .as_ref()
            .is_none_or(|s| s.contains(layer_id))
    }

    pub fn with_layers<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.layer_select = Some(ids.into_iter().map(Into::into).collect());
        self
    }
}

/// One token's attention map at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionLayer {
    pub layer_id: String,
    pub map: Grid,
}

impl AttentionLayer {
    pub fn new(layer_id: impl Into<String>, map: Grid) -> Result<Self> {
        if let Some(index) = map.values().iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "attention value at index {index} is negative"
            )));
        }
        Ok(Self {
            layer_id: layer_id.into(),
            map,
        })
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.map.shape()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Inner,
    Outer,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Inner => "inner",
            Branch::Outer => "outer",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergy {
    pub layer_id: String,
    pub e_attract: f64,
    pub e_repel: f64,
    pub branch: Branch,
    pub selected: bool,
    /// `sum(A * M)`.
    pub in_mask_fraction: f64,
}

impl LayerEnergy {
    pub fn combined(&self, lambda: f64) -> f64 {
        self.e_attract + lambda * self.e_repel
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub layers: Vec<LayerEnergy>,
    /// Mean of `e_attract + lambda * e_repel` over selected layers.
    pub total: f64,
}

impl EnergyBreakdown {
    fn selected(&self) -> impl Iterator<Item = &LayerEnergy> {
        self.layers.iter().filter(|l| l.selected)
    }

    pub fn mean_attract(&self) -> f64 {
        mean(self.selected().map(|l| l.e_attract))
    }

    pub fn mean_repel(&self) -> f64 {
        mean(self.selected().map(|l| l.e_repel))
    }

    pub fn layer(&self, id: &str) -> Option<&LayerEnergy> {
        self.layers.iter().find(|l| l.layer_id == id)
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Positions where `A > tau * max(A)`. An all-zero map has empty support.
pub fn support(a: &Grid, tau: f64) -> BinaryMask {
    let threshold = tau * a.max();
    BinaryMask::from_fn(a.height(), a.width(), |i, j| a.get(i, j) > threshold)
        .expect("shape already validated")
}

/// `(sum A(1-M), sum A M)`.
fn masses(a: &Grid, m: &BinaryMask) -> Result<(f64, f64)> {
    m.grid().ensure_shape(a.shape())?;
    let mut out = 0.0;
    let mut inside = 0.0;
    for (&v, &mv) in a.values().iter().zip(m.grid().values()) {
        out += v * (1.0 - mv);
        inside += v * mv;
    }
    Ok((out, inside))
}

pub fn e_attract(a: &Grid, m: &BinaryMask, cfg: &EnergyConfig) -> Result<f64> {
    let (s_out, s_in) = masses(a, m)?;
    Ok(s_out / s_in.max(cfg.epsilon_den))
}

/// Gradient of [`e_attract`] with respect to `A`. When the denominator is
/// clamped it is a constant and only the numerator contributes.
pub fn grad_e_attract(a: &Grid, m: &BinaryMask, cfg: &EnergyConfig) -> Result<Grid> {
    let (s_out, s_in) = masses(a, m)?;
    if s_in > cfg.epsilon_den {
        let inv = 1.0 / s_in;
        let inner = s_out * inv * inv;
        m.grid().map(|mv| (1.0 - mv) * inv - mv * inner)
    } else {
        let inv = 1.0 / cfg.epsilon_den;
        m.grid().map(|mv| (1.0 - mv) * inv)
    }
}

/// Indices and values of points in `support(A) ∩ M`.
fn inner_points(a: &Grid, m: &BinaryMask, tau: f64) -> Result<Vec<(usize, f64)>> {
    m.grid().ensure_shape(a.shape())?;
    let threshold = tau * a.max();
    Ok(a.values()
        .iter()
        .zip(m.grid().values())
        .enumerate()
        .filter(|(_, (&v, &mv))| mv == 1.0 && v > threshold)
        .map(|(k, (&v, _))| (k, v))
        .collect())
}

pub fn e_repel_inner(a: &Grid, m: &BinaryMask, cfg: &EnergyConfig) -> Result<f64> {
    let pts = inner_points(a, m, cfg.support_tau)?;
    if pts.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut acc = 0.0;
    for (p, &(_, ap)) in pts.iter().enumerate() {
        for (q, &(_, aq)) in pts.iter().enumerate() {
            if p != q {
                acc += (cfg.delta - (ap - aq).abs()).max(0.0);
            }
        }
    }
    Ok(acc / pts.len() as f64)
}

pub fn e_repel_outer(a: &Grid, m: &BinaryMask) -> Result<f64> {
    let (_, s_in) = masses(a, m)?;
    Ok(-s_in)
}

/// Inner branch iff the support lies entirely inside `M` and meets it.
pub fn repel_branch(a: &Grid, m: &BinaryMask, cfg: &EnergyConfig) -> Result<Branch> {
    m.grid().ensure_shape(a.shape())?;
    let threshold = cfg.support_tau * a.max();
    let mut any_inside = false;
    for (&v, &mv) in a.values().iter().zip(m.grid().values()) {
        if v > threshold {
            if mv == 0.0 {
                return Ok(Branch::Outer);
            }
            any_inside = true;
        }
    }
    Ok(if any_inside { Branch::Inner } else { Branch::Outer })
}

pub fn e_repel(a: &Grid, m: &BinaryMask, cfg: &EnergyConfig) -> Result<(f64, Branch)> {
    let branch = repel_branch(a, m, cfg)?;
    let value = match branch {
        Branch::Inner => e_repel_inner(a, m, cfg)?,
        Branch::Outer => e_repel_outer(a, m)?,
    };
    Ok((value, branch))
}

/// (Sub)gradient of [`e_repel`] on the branch selected at `A`.
pub fn grad_e_repel(a: &Grid, m: &BinaryMask, cfg: &EnergyConfig) -> Result<Grid> {
    match repel_branch(a, m, cfg)? {
        Branch::Outer => m.grid().map(|mv| -mv),
        Branch::Inner => {
            let pts = inner_points(a, m, cfg.support_tau)?;
            let inv_n = 1.0 / pts.len() as f64;
            let mut grad = vec![0.0; a.len()];
            for (p, &(ip, ap)) in pts.iter().enumerate() {
                for (q, &(iq, aq)) in pts.iter().enumerate() {
                    if p == q || cfg.delta - (ap - aq).abs() <= 0.0 {
                        continue;
                    }
                    let s = sign(ap - aq);
                    grad[ip] -= s * inv_n;
                    grad[iq] += s * inv_n;
                }
            }
            Grid::new(a.height(), a.width(), grad)
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_pairs(layers: &[AttentionLayer], masks: &[BinaryMask]) -> Result<()> {
    if layers.len() != masks.len() {
        return Err(Error::InvalidArgument(format!(
            "{} layers but {} masks",
            layers.len(),
            masks.len()
        )));
    }
    for (l, m) in layers.iter().zip(masks) {
        m.grid().ensure_shape(l.resolution())?;
    }
    Ok(())
}

/// Per-layer energies and their mean over the selected layers.
pub fn e_total(
    layers: &[AttentionLayer],
    masks: &[BinaryMask],
    cfg: &EnergyConfig,
) -> Result<EnergyBreakdown> {
    check_pairs(layers, masks)?;
    let mut out = Vec::with_capacity(layers.len());
    let mut sum = 0.0;
    let mut n = 0usize;
    for (layer, m) in layers.iter().zip(masks) {
        let attract = e_attract(&layer.map, m, cfg)?;
        let (repel, branch) = e_repel(&layer.map, m, cfg)?;
        let selected = cfg.selects(&layer.layer_id);
        if selected {
            sum += attract + cfg.lambda * repel;
            n += 1;
        }
        out.push(LayerEnergy {
            layer_id: layer.layer_id.clone(),
            e_attract: attract,
            e_repel: repel,
            branch,
            selected,
            in_mask_fraction: layer.map.dot(m.grid())?,
        });
    }
    if n == 0 {
        return Err(Error::EmptySelection);
    }
    Ok(EnergyBreakdown {
        layers: out,
        total: sum / n as f64,
    })
}

/// Gradient of the total energy with respect to each layer's map; zero for
/// unselected layers.
pub fn grad_total(
    layers: &[AttentionLayer],
    masks: &[BinaryMask],
    cfg: &EnergyConfig,
) -> Result<Vec<Grid>> {
    check_pairs(layers, masks)?;
    let n = layers.iter().filter(|l| cfg.selects(&l.layer_id)).count();
    if n == 0 {
        return Err(Error::EmptySelection);
    }
    let w = 1.0 / n as f64;
    layers
        .iter()
        .zip(masks)
        .map(|(layer, m)| {
            let (h, wd) = layer.resolution();
            if !cfg.selects(&layer.layer_id) {
                return Grid::zeros(h, wd);
            }
            let ga = grad_e_attract(&layer.map, m, cfg)?;
            let gr = grad_e_repel(&layer.map, m, cfg)?;
            ga.zip_map(&gr, |x, y| w * (x + cfg.lambda * y))
        })
        .collect()
}
