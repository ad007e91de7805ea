//! Matrix-free CASSI sensing operator.
//!
//! Band `l` of the cube is modulated by the snapshot's coded aperture at its
//! unshifted location, sheared horizontally by `l * shift` detector columns
//! (or `(bands - 1 - l) * shift` for [`Dispersion::Leftward`]) and summed over
//! bands on the detector.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array3, Array4, ArrayView3, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{stack_apertures, CodedAperture, HyperCube, Measurement};

/// Default cap on `rows * cols * bands` for [`SensingOperator::build_explicit_h`].
pub const EXPLICIT_H_CAP: usize = 100_000;

/// Direction in which increasing band index is displaced on the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dispersion {
    #[default]
    Rightward,
    Leftward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingOperator {
    rows: usize,
    cols: usize,
    bands: usize,
    shift: usize,
    dispersion: Dispersion,
    /// `(snapshots, rows, cols)`
    apertures: Array3<f64>,
}

impl SensingOperator {
    pub fn new(apertures: &[CodedAperture], bands: usize, shift: usize) -> Result<Self> {
        Self::with_dispersion(apertures, bands, shift, Dispersion::Rightward)
    }

    pub fn with_dispersion(
        apertures: &[CodedAperture],
        bands: usize,
        shift: usize,
        dispersion: Dispersion,
    ) -> Result<Self> {
        let stacked = stack_apertures(apertures)?;
        Self::from_stacked(stacked, bands, shift, dispersion)
    }

    /// Builds the operator from a `(snapshots, rows, cols)` mask stack.
    pub fn from_stacked(apertures: Array3<f64>, bands: usize, shift: usize, dispersion: Dispersion) -> Result<Self> {
        if bands == 0 {
            return Err(Error::Parameter("bands must be >= 1".into()));
        }
        if shift == 0 {
            return Err(Error::Parameter("dispersion shift must be >= 1".into()));
        }
        if apertures.is_empty() {
            return Err(Error::Parameter("at least one non-empty aperture is required".into()));
        }
        if apertures.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("aperture entries must lie in [0, 1]".into()));
        }
        let (_, rows, cols) = apertures.dim();
        Ok(Self {
            rows,
            cols,
            bands,
            shift,
            dispersion,
            apertures,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn dispersion(&self) -> Dispersion {
        self.dispersion
    }

    pub fn snapshots(&self) -> usize {
        self.apertures.dim().0
    }

    pub fn apertures(&self) -> &Array3<f64> {
        &self.apertures
    }

    /// Detector width `cols + (bands - 1) * shift`.
    pub fn detector_cols(&self) -> usize {
        self.cols + (self.bands - 1) * self.shift
    }

    pub fn cube_dim(&self) -> (usize, usize, usize) {
        (self.bands, self.rows, self.cols)
    }

    pub fn measurement_dim(&self) -> (usize, usize, usize) {
        (self.snapshots(), self.rows, self.detector_cols())
    }

    /// Detector column offset of band `l`.
    pub fn band_offset(&self, l: usize) -> usize {
        match self.dispersion {
            Dispersion::Rightward => l * self.shift,
            Dispersion::Leftward => (self.bands - 1 - l) * self.shift,
        }
    }

    fn check_cube(&self, x: &ArrayView3<f64>) -> Result<()> {
        if x.dim() != self.cube_dim() {
            return Err(Error::Shape(format!(
                "cube has shape {:?}, operator expects {:?} (bands, rows, cols)",
                x.dim(),
                self.cube_dim()
            )));
        }
        Ok(())
    }

    fn check_measurement(&self, y: &ArrayView3<f64>) -> Result<()> {
        if y.dim() != self.measurement_dim() {
            return Err(Error::Shape(format!(
                "measurement has shape {:?}, operator expects {:?} (snapshots, rows, detector cols)",
                y.dim(),
                self.measurement_dim()
            )));
        }
        Ok(())
    }

    /// `y = H x` for a cube-shaped array.
    pub fn apply_h(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
        self.check_cube(&x)?;
        let mut y = Array3::zeros(self.measurement_dim());
        for (k, mask) in self.apertures.outer_iter().enumerate() {
            for l in 0..self.bands {
                let off = self.band_offset(l);
                let band = x.index_axis(ndarray::Axis(0), l);
                for i in 0..self.rows {
                    let out = &mut y.slice_mut(ndarray::s![k, i, off..off + self.cols]);
                    Zip::from(out)
                        .and(mask.row(i))
                        .and(band.row(i))
                        .for_each(|o, &t, &v| *o += t * v);
                }
            }
        }
        Ok(y)
    }

    /// Noiseless measurement of a validated cube.
    pub fn measure(&self, x: &HyperCube) -> Result<Measurement> {
        Measurement::new(self.apply_h(x.data().view())?)
    }

    /// `H^T y` for a measurement-shaped array.
    pub fn apply_ht(&self, y: ArrayView3<f64>) -> Result<Array3<f64>> {
        self.check_measurement(&y)?;
        let mut x = Array3::zeros(self.cube_dim());
        for (k, mask) in self.apertures.outer_iter().enumerate() {
            for l in 0..self.bands {
                let off = self.band_offset(l);
                for i in 0..self.rows {
                    let det = y.slice(ndarray::s![k, i, off..off + self.cols]);
                    Zip::from(x.slice_mut(ndarray::s![l, i, ..]))
                        .and(mask.row(i))
                        .and(det)
                        .for_each(|o, &t, &v| *o += t * v);
                }
            }
        }
        Ok(x)
    }

    /// Diagonal of `H H^T`, measurement-shaped.
    pub fn diag_hht(&self) -> Array3<f64> {
        let mut d = Array3::zeros(self.measurement_dim());
        for (k, mask) in self.apertures.outer_iter().enumerate() {
            for l in 0..self.bands {
                let off = self.band_offset(l);
                for i in 0..self.rows {
                    Zip::from(d.slice_mut(ndarray::s![k, i, off..off + self.cols]))
                        .and(mask.row(i))
                        .for_each(|o, &t| *o += t * t);
                }
            }
        }
        d
    }

    /// `H H^T` is block diagonal: detector pixels of different snapshots
    /// at the same `(row, detector col)` share voxels, nothing else does.
    /// Returns the `K x K` blocks, shaped `(rows, detector_cols, K, K)`.
    pub fn gram_blocks(&self) -> Array4<f64> {
        let k_count = self.snapshots();
        let mut g = Array4::zeros((self.rows, self.detector_cols(), k_count, k_count));
        for l in 0..self.bands {
            let off = self.band_offset(l);
            for i in 0..self.rows {
                for j in 0..self.cols {
                    for k in 0..k_count {
                        let tk = self.apertures[[k, i, j]];
                        for k2 in 0..k_count {
                            g[[i, j + off, k, k2]] += tk * self.apertures[[k2, i, j]];
                        }
                    }
                }
            }
        }
        g
    }

    /// Noisy measurement `H x + w` with i.i.d. zero-mean Gaussian `w`.
    pub fn simulate(&self, x: &HyperCube, noise_sigma: f64, seed: u64) -> Result<Measurement> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::Parameter(format!(
                "noise sigma must be finite and >= 0, got {noise_sigma}"
            )));
        }
        let mut y = self.apply_h(x.data().view())?;
        if noise_sigma > 0.0 {
            let normal = Normal::new(0.0, noise_sigma).expect("sigma validated");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            y.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
        }
        Measurement::new(y)
    }

    /// Explicit sparse `H` using the crate-wide vectorization order. Testing
    /// and visualization only; refuses instances with more than `cap` voxels.
    pub fn build_explicit_h(&self, cap: usize) -> Result<SparseMatrix> {
        let voxels = self.rows * self.cols * self.bands;
        if voxels > cap {
            return Err(Error::Size(format!(
                "explicit H requested for {voxels} voxels, cap is {cap}"
            )));
        }
        let det_cols = self.detector_cols();
        let det_plane = self.rows * det_cols;
        let mut entries = Vec::new();
        for k in 0..self.snapshots() {
            for i in 0..self.rows {
                for c in 0..det_cols {
                    let row = k * det_plane + i * det_cols + c;
                    for l in 0..self.bands {
                        let off = self.band_offset(l);
                        if c < off || c - off >= self.cols {
                            continue;
                        }
                        let j = c - off;
                        let t = self.apertures[[k, i, j]];
                        if t != 0.0 {
                            let col = l * self.rows * self.cols + i * self.cols + j;
                            entries.push((row, col, t));
                        }
                    }
                }
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        Ok(SparseMatrix {
            nrows: self.snapshots() * det_plane,
            ncols: voxels,
            entries,
        })
    }
}

/// Sparse matrix stored as row-major sorted `(row, col, value)` triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        let mut y = vec![0.0; self.nrows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    pub fn matvec_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.nrows, "matvec_transpose dimension mismatch");
        let mut x = vec![0.0; self.ncols];
        for &(r, c, v) in &self.entries {
            x[c] += v * y[r];
        }
        x
    }

    /// Triplet CSV with header `row,col,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,value\n");
        for (r, c, v) in &self.entries {
            let _ = writeln!(out, "{r},{c},{v}");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
