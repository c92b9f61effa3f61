//! Dense row-major grids and binary masks.
//!
//! A [`Grid`] carries latents, attention maps, masks and image channels.
//! Every value is finite; constructors reject NaN and infinities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct Grid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl TryFrom<RawGrid> for Grid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        Grid::new(raw.height, raw.width, raw.values)
    }
}

impl From<Grid> for RawGrid {
    fn from(g: Grid) -> Self {
        RawGrid {
            height: g.height,
            width: g.width,
            values: g.values,
        }
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidDimensions { height, width });
    }
    height
        .checked_mul(width)
        .map(|_| ())
        .ok_or(Error::InvalidDimensions { height, width })
}

impl Grid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                height,
                width,
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Builds a grid from nested rows. Rows must be non-empty and of equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(height * width);
        for row in rows {
            let row = row.as_ref();
            if row.len() != width {
                return Err(Error::LengthMismatch {
                    height,
                    width,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(height, width, values)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        check_dims(height, width)?;
        Self::new(height, width, vec![value; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(height, width)?;
        let mut values = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                values.push(f(i, j));
            }
        }
        Self::new(height, width, values)
    }

    // Callers guarantee dims and finiteness.
    pub(crate) fn from_parts(height: usize, width: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    pub fn ensure_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: self.shape(),
            });
        }
        Ok(())
    }

    /// Applies `f` elementwise. Fails if any output is non-finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Grid> {
        Grid::new(self.height, self.width, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Combines two equally shaped grids elementwise.
    pub fn zip_map(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Result<Grid> {
        other.ensure_shape(self.shape())?;
        Grid::new(
            self.height,
            self.width,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn dot(&self, other: &Grid) -> Result<f64> {
        other.ensure_shape(self.shape())?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, c: f64) -> Result<Grid> {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Grid) -> Result<Grid> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Grid) -> Result<Grid> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Grid) -> Result<Grid> {
        self.zip_map(other, |a, b| a * b)
    }
}

/// A grid whose values are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Grid", into = "Grid")]
pub struct BinaryMask(Grid);

impl TryFrom<Grid> for BinaryMask {
    type Error = Error;

    fn try_from(grid: Grid) -> Result<Self> {
        BinaryMask::new(grid)
    }
}

impl From<BinaryMask> for Grid {
    fn from(m: BinaryMask) -> Self {
        m.0
    }
}

impl BinaryMask {
    pub fn new(grid: Grid) -> Result<Self> {
        if let Some((index, &value)) = grid
            .values
            .iter()
            .enumerate()
            .find(|(_, &v)| v != 0.0 && v != 1.0)
        {
            return Err(Error::NotBinary { index, value });
        }
        Ok(Self(grid))
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        Grid::from_fn(height, width, |i, j| if f(i, j) { 1.0 } else { 0.0 }).map(Self)
    }

    pub fn from_bits(height: usize, width: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::LengthMismatch {
                height,
                width,
                found: bits.len(),
            });
        }
        Self::from_fn(height, width, |i, j| bits[i * width + j])
    }

    /// Axis-aligned box `[top, top + h) x [left, left + w)`, clipped to the canvas.
    pub fn rect(
        height: usize,
        width: usize,
        top: usize,
        left: usize,
        box_h: usize,
        box_w: usize,
    ) -> Result<Self> {
        Self::from_fn(height, width, |i, j| {
            i >= top && i < top + box_h && j >= left && j < left + box_w
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn is_set(&self, i: usize, j: usize) -> bool {
        self.0.get(i, j) == 1.0
    }

    pub fn count(&self) -> usize {
        self.0.values.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.count() == 0
    }

    /// `1 - M`.
    pub fn complement(&self) -> BinaryMask {
        BinaryMask(Grid::from_parts(
            self.0.height,
            self.0.width,
            self.0.values.iter().map(|v| 1.0 - v).collect(),
        ))
    }

    /// Elementwise logical and.
    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.0.mul(&other.0).map(BinaryMask)
    }
}

/// Per-axis overlap of source cells with target cells, in integer units where
/// one source cell has length `dst` and one target cell has length `src`.
fn axis_overlaps(src: usize, dst: usize) -> Vec<Vec<(usize, u64)>> {
    (0..dst)
        .map(|a| {
            let lo = (a * src) as u64;
            let hi = ((a + 1) * src) as u64;
            let first = (lo / dst as u64) as usize;
            let last = ((hi - 1) / dst as u64) as usize;
            (first..=last.min(src - 1))
                .filter_map(|r| {
                    let r_lo = (r * dst) as u64;
                    let r_hi = ((r + 1) * dst) as u64;
                    let ov = hi.min(r_hi).saturating_sub(lo.max(r_lo));
                    (ov > 0).then_some((r, ov))
                })
                .collect()
        })
        .collect()
}

/// Area-averages `mask` onto a `target_h x target_w` grid and thresholds the
/// covered fraction at 0.5; a fraction of exactly one half maps to 1.
///
/// The comparison is carried out in integer arithmetic, so ties are exact.
pub fn resample_mask(mask: &BinaryMask, target_h: usize, target_w: usize) -> Result<BinaryMask> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidDimensions {
            height: target_h,
            width: target_w,
        });
    }
    let (h, w) = mask.shape();
    let rows = axis_overlaps(h, target_h);
    let cols = axis_overlaps(w, target_w);
    // Each target cell has integer area h * w in these units.
    let cell_area = (h as u128) * (w as u128);
    BinaryMask::from_fn(target_h, target_w, |a, b| {
        let mut covered: u128 = 0;
        for &(r, wr) in &rows[a] {
            for &(c, wc) in &cols[b] {
                if mask.is_set(r, c) {
                    covered += wr as u128 * wc as u128;
                }
            }
        }
        2 * covered >= cell_area
    })
}

/// Samples `image` at `(i + flow_y, j + flow_x)` with bilinear interpolation.
/// Source coordinates are clamped to the image rectangle.
pub fn bilinear_warp(image: &Grid, flow_x: &Grid, flow_y: &Grid) -> Result<Grid> {
    flow_x.ensure_shape(image.shape())?;
    flow_y.ensure_shape(image.shape())?;
    let (h, w) = image.shape();
    Grid::from_fn(h, w, |i, j| {
        let sy = (i as f64 + flow_y.get(i, j)).clamp(0.0, (h - 1) as f64);
        let sx = (j as f64 + flow_x.get(i, j)).clamp(0.0, (w - 1) as f64);
        let y0 = sy.floor() as usize;
        let x0 = sx.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let ty = sy - y0 as f64;
        let tx = sx - x0 as f64;
        // a + t * (b - a) keeps constant images and zero flow exact.
        let top = lerp(image.get(y0, x0), image.get(y0, x1), tx);
        let bottom = lerp(image.get(y1, x0), image.get(y1, x1), tx);
        lerp(top, bottom, ty)
    })
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ones(h: usize, w: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |_, _| true).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Grid::new(0, 3, vec![]).is_err());
        assert!(Grid::new(2, 2, vec![1.0; 3]).is_err());
        assert!(matches!(
            Grid::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(BinaryMask::new(Grid::filled(2, 2, 0.5).unwrap()).is_err());
    }

    #[test]
    fn resample_constant_masks() {
        let m = resample_mask(&ones(8, 8), 4, 4).unwrap();
        assert_eq!(m.count(), 16);
        let z = BinaryMask::from_fn(8, 8, |_, _| false).unwrap();
        assert_eq!(resample_mask(&z, 2, 2).unwrap().count(), 0);
    }

    #[test]
    fn resample_checkerboard_tie_maps_to_one() {
        let m = BinaryMask::new(Grid::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
        let r = resample_mask(&m, 1, 1).unwrap();
        assert_eq!(r.grid().values(), &[1.0]);
    }

    #[test]
    fn resample_non_integer_ratio() {
        // 3 source rows onto 2 target rows: target 0 covers row 0 fully and
        // half of row 1.
        let m = BinaryMask::new(Grid::from_rows(&[[1.0], [0.0], [0.0]]).unwrap()).unwrap();
        let r = resample_mask(&m, 2, 1).unwrap();
        // covered fraction 1/1.5 = 2/3 -> 1; second target covers half of row 1
        // and row 2 -> 0.
        assert_eq!(r.grid().values(), &[1.0, 0.0]);
        let up = resample_mask(&m, 6, 2).unwrap();
        assert_eq!(up.count(), 4);
    }

    #[test]
    fn resample_rejects_zero_target() {
        assert!(resample_mask(&ones(4, 4), 0, 2).is_err());
    }

    #[test]
    fn warp_half_pixel() {
        let img = Grid::from_rows(&[[0.0, 1.0]]).unwrap();
        let fx = Grid::from_rows(&[[0.5, 0.0]]).unwrap();
        let fy = Grid::zeros(1, 2).unwrap();
        let out = bilinear_warp(&img, &fx, &fy).unwrap();
        assert_eq!(out.get(0, 0), 0.5);
        assert_eq!(out.get(0, 1), 1.0);
    }

    #[test]
    fn warp_clamps_and_rejects_mismatch() {
        let img = Grid::from_rows(&[[2.0, 3.0], [4.0, 5.0]]).unwrap();
        let fx = Grid::filled(2, 2, -10.0).unwrap();
        let fy = Grid::filled(2, 2, 10.0).unwrap();
        let out = bilinear_warp(&img, &fx, &fy).unwrap();
        assert_eq!(out.values(), &[4.0, 4.0, 4.0, 4.0]);
        let bad = Grid::zeros(1, 2).unwrap();
        assert!(bilinear_warp(&img, &bad, &fy).is_err());
    }

    fn grid_strategy() -> impl Strategy<Value = Grid> {
        (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
            prop::collection::vec(-5.0f64..5.0, h * w)
                .prop_map(move |v| Grid::new(h, w, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn zero_flow_is_identity(img in grid_strategy()) {
            let z = Grid::zeros(img.height(), img.width()).unwrap();
            let out = bilinear_warp(&img, &z, &z).unwrap();
            prop_assert_eq!(out.values(), img.values());
        }

        #[test]
        fn constant_image_invariant_under_any_flow(
            c in -3.0f64..3.0,
            flows in prop::collection::vec(-4.0f64..4.0, 2 * 12),
        ) {
            let img = Grid::filled(3, 4, c).unwrap();
            let fx = Grid::new(3, 4, flows[..12].to_vec()).unwrap();
            let fy = Grid::new(3, 4, flows[12..].to_vec()).unwrap();
            let out = bilinear_warp(&img, &fx, &fy).unwrap();
            prop_assert!(out.values().iter().all(|&v| v == c));
        }

        #[test]
        fn resample_stays_binary(
            bits in prop::collection::vec(any::<bool>(), 7 * 5),
            th in 1usize..10,
            tw in 1usize..10,
        ) {
            let m = BinaryMask::from_bits(7, 5, &bits).unwrap();
            let r = resample_mask(&m, th, tw).unwrap();
            prop_assert_eq!(r.shape(), (th, tw));
            prop_assert!(r.grid().values().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }
}
