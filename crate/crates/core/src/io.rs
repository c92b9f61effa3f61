//! `.f64grid` files: `"F64G"`, height and width as little-endian `u32`, then
//! `height * width` little-endian IEEE-754 doubles in row-major order.
//!
//! Masks use the same layout with values 0.0 and 1.0. RGB images are stored
//! channel-stacked: a `3h x w` grid holding the R rows, then G, then B.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid};

pub const MAGIC: &[u8; 4] = b"F64G";
pub const HEADER_LEN: usize = 12;

pub fn encode_grid(grid: &Grid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * grid.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    for v in grid.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a `.f64grid` byte buffer.
///
/// Rejects wrong magic, zero dimensions, payload sizes that overflow, short
/// or over-long payloads and non-finite values.
pub fn decode_grid(bytes: &[u8]) -> Result<Grid> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if height == 0 || width == 0 {
        return Err(Error::InvalidDimensions {
            height: height as usize,
            width: width as usize,
        });
    }
    let overflow = Error::DimensionOverflow {
        height: height as u64,
        width: width as u64,
    };
    let payload = (height as u64)
        .checked_mul(width as u64)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or(overflow)?;
    let total = payload.checked_add(HEADER_LEN).ok_or(Error::DimensionOverflow {
        height: height as u64,
        width: width as u64,
    })?;
    if bytes.len() < total {
        return Err(Error::Truncated {
            expected: total,
            found: bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(Error::TrailingBytes(bytes.len() - total));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Grid::new(height as usize, width as usize, values)
}

pub fn write_grid(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    fs::write(path, encode_grid(grid))?;
    Ok(())
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<Grid> {
    decode_grid(&fs::read(path)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    write_grid(path, mask.grid())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    BinaryMask::new(read_grid(path)?)
}
