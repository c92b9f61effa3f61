//! Attention-energy guided diffusion sampling.
//!
//! Building blocks: grids and masks, counter-based random streams, the
//! `.f64grid` format, attention energies with analytic gradients, denoiser
//! models exposing attention maps and their vector-Jacobian products, the
//! ancestral sampler with energy correction, a synthetic try-on benchmark and
//! the VTID try-on metric.

pub mod energy;
pub mod error;
pub mod grid;
pub mod io;
pub mod manifest;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod synthbench;
pub mod vtid;

pub use error::{Error, Result};
pub use grid::{bilinear_warp, resample_mask, BinaryMask, Grid};
pub use rng::{gaussian_field, RandomStream};
