//! Coded aperture snapshot spectral imaging (CASSI) toolkit.
//!
//! The crate simulates single- and multi-snapshot CASSI acquisition and
//! reconstructs hyperspectral cubes with a split-Bregman alternating
//! minimization that combines a wavelet/spectral sparsity prior with a
//! pluggable denoiser (built-in or an external deep-image-prior worker).
//!
//! Array conventions used throughout:
//!
//! * cube-shaped arrays are `Array3<f64>` with shape `(bands, rows, cols)`;
//! * measurement-shaped arrays are `Array3<f64>` with shape
//!   `(snapshots, rows, detector_cols)` where the detector width is
//!   `cols + (bands - 1) * shift`;
//! * the flattened (vectorized) order is the standard row-major order of those
//!   shapes, i.e. band-major then row-major within a band.

pub mod denoiser;
pub mod error;
pub mod forward_model;
pub mod metrics;
pub mod solver;
pub mod sparse_basis;
pub mod tensor_io;

pub use error::{Error, Result};
