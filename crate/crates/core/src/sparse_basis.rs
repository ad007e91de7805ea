//! Orthonormal sparsifying basis: a 1D spectral transform along the band axis
//! combined (Kronecker product) with a separable, periodized 2D Symmlet-8
//! wavelet transform in the spatial plane.
//!
//! Coefficients use the cube layout `(bands, rows, cols)`. Within each band
//! plane the wavelet coefficients follow the usual in-place pyramid layout:
//! after `J` levels the coarsest approximation occupies the top-left
//! `(rows >> J) x (cols >> J)` block.

use ndarray::{Array2, Array3, ArrayView3, ArrayViewMut1, Axis, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::solver::{soft, soft_complex};

/// Symmlet-8 scaling (low-pass) filter, 16 taps: the least-asymmetric
/// Daubechies filter with 8 vanishing moments. Values as tabulated by
/// PyWavelets (`pywt.Wavelet("sym8").rec_lo`).
#[allow(clippy::excessive_precision)]
pub const SYM8_LOWPASS: [f64; 16] = [
    0.0018899503327594609,
    -0.0003029205147213668,
    -0.014952258337048231,
    0.0038087520138906151,
    0.049137179673607506,
    -0.027219029917056003,
    -0.051945838107709037,
    0.3644418948353314,
    0.77718575170052351,
    0.48135965125837221,
    -0.061273359067658524,
    -0.14329423835080971,
    0.0076074873249176054,
    0.031695087811492981,
    -0.00054213233179114812,
    -0.0033824159510061256,
];

/// Default wavelet depth when the dimensions allow it.
pub const DEFAULT_LEVELS: usize = 3;

/// Cap on `rows * cols * bands` for [`SparseBasis::build_dense_basis`].
pub const DENSE_BASIS_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralTransform {
    /// Orthonormal DCT-II; keeps every coefficient real.
    #[default]
    Dct,
    /// Unitary DFT; coefficients are complex.
    Dft,
}

/// Scalar type a coefficient vector can hold.
pub trait Coefficient:
    Copy + Default + Send + Sync + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn modulus(self) -> f64;
    fn modulus_sqr(self) -> f64;
    fn is_finite(self) -> bool;
    /// Soft thresholding with threshold `tau`.
    fn shrink(self, tau: f64) -> Self;
}

impl Coefficient for f64 {
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn modulus_sqr(self) -> f64 {
        self * self
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn shrink(self, tau: f64) -> Self {
        soft(self, tau)
    }
}

impl Coefficient for Complex64 {
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn modulus_sqr(self) -> f64 {
        self.norm_sqr()
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    fn shrink(self, tau: f64) -> Self {
        soft_complex(self, tau)
    }
}

/// Coefficients `theta = Psi^T x` (and the auxiliary split variables that
/// live in the same domain).
#[derive(Debug, Clone, PartialEq)]
pub enum CoeffVector {
    Real(Array3<f64>),
    Complex(Array3<Complex64>),
}

impl CoeffVector {
    pub fn dim(&self) -> (usize, usize, usize) {
        match self {
            CoeffVector::Real(a) => a.dim(),
            CoeffVector::Complex(a) => a.dim(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            CoeffVector::Real(a) => a.len(),
            CoeffVector::Complex(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros_like(&self) -> CoeffVector {
        match self {
            CoeffVector::Real(a) => CoeffVector::Real(Array3::zeros(a.dim())),
            CoeffVector::Complex(a) => CoeffVector::Complex(Array3::zeros(a.dim())),
        }
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn norm_sqr(&self) -> f64 {
        match self {
            CoeffVector::Real(a) => a.iter().map(|v| v.modulus_sqr()).sum(),
            CoeffVector::Complex(a) => a.iter().map(|v| v.modulus_sqr()).sum(),
        }
    }

    pub fn l1_norm(&self) -> f64 {
        match self {
            CoeffVector::Real(a) => a.iter().map(|v| v.modulus()).sum(),
            CoeffVector::Complex(a) => a.iter().map(|v| v.modulus()).sum(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            CoeffVector::Real(a) => a.iter().all(|v| Coefficient::is_finite(*v)),
            CoeffVector::Complex(a) => a.iter().all(|v| Coefficient::is_finite(*v)),
        }
    }

    /// Magnitudes of every coefficient, in layout order.
    pub fn magnitudes(&self) -> Vec<f64> {
        match self {
            CoeffVector::Real(a) => a.iter().map(|v| v.modulus()).collect(),
            CoeffVector::Complex(a) => a.iter().map(|v| v.modulus()).collect(),
        }
    }

    pub fn as_real(&self) -> Option<&Array3<f64>> {
        match self {
            CoeffVector::Real(a) => Some(a),
            CoeffVector::Complex(_) => None,
        }
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &CoeffVector) -> Result<CoeffVector> {
        match (self, other) {
            (CoeffVector::Real(a), CoeffVector::Real(b)) if a.dim() == b.dim() => Ok(CoeffVector::Real(a - b)),
            (CoeffVector::Complex(a), CoeffVector::Complex(b)) if a.dim() == b.dim() => {
                Ok(CoeffVector::Complex(a - b))
            }
            _ => Err(Error::Shape("coefficient vectors differ in shape or scalar type".into())),
        }
    }

    /// Unit coefficient at flat index `idx` with the scalar type of `self`.
    pub fn unit_like(&self, idx: usize) -> CoeffVector {
        let mut out = self.zeros_like();
        match &mut out {
            CoeffVector::Real(a) => a.as_slice_mut().expect("standard layout")[idx] = 1.0,
            CoeffVector::Complex(a) => a.as_slice_mut().expect("standard layout")[idx] = Complex64::new(1.0, 0.0),
        }
        out
    }
}

/// Row-major dense matrix, used only as a test oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.ncols + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.nrows).map(|r| self.get(r, c)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SparseBasis {
    rows: usize,
    cols: usize,
    bands: usize,
    levels: usize,
    spectral: SpectralTransform,
    highpass: [f64; 16],
    /// Real spectral analysis matrix (DCT) or the cosine part of the DFT.
    spec_re: Array2<f64>,
    /// Sine part of the DFT analysis matrix (zero for the DCT).
    spec_im: Array2<f64>,
}

impl SparseBasis {
    /// `levels = None` selects [`DEFAULT_LEVELS`] or the largest feasible depth.
    pub fn new(
        rows: usize,
        cols: usize,
        bands: usize,
        levels: Option<usize>,
        spectral: SpectralTransform,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(Error::Parameter("basis dims must be >= 1".into()));
        }
        let feasible = max_levels(rows).min(max_levels(cols));
        let levels = match levels {
            Some(0) => return Err(Error::Parameter("wavelet levels must be >= 1".into())),
            Some(j) if j > feasible => {
                return Err(Error::Parameter(format!(
                    "{j} wavelet levels need rows and cols divisible by {}, got {rows}x{cols}",
                    1usize << j.min(63)
                )))
            }
            Some(j) => j,
            None if feasible == 0 => {
                return Err(Error::Parameter(format!(
                    "rows and cols must be even for a wavelet basis, got {rows}x{cols}"
                )))
            }
            None => DEFAULT_LEVELS.min(feasible),
        };
        let mut highpass = [0.0; 16];
        for (t, g) in highpass.iter_mut().enumerate() {
            let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
            *g = sign * SYM8_LOWPASS[15 - t];
        }
        let (spec_re, spec_im) = spectral_matrices(bands, spectral);
        Ok(Self {
            rows,
            cols,
            bands,
            levels,
            spectral,
            highpass,
            spec_re,
            spec_im,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn spectral(&self) -> SpectralTransform {
        self.spectral
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        (self.bands, self.rows, self.cols)
    }

    fn check(&self, dim: (usize, usize, usize)) -> Result<()> {
        if dim != self.dim() {
            return Err(Error::Shape(format!(
                "array has shape {dim:?}, basis expects {:?}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// `theta = Psi^T x`.
    pub fn analyze(&self, x: ArrayView3<f64>) -> Result<CoeffVector> {
        self.check(x.dim())?;
        match self.spectral {
            SpectralTransform::Dct => {
                let mut out = spectral_apply(&x, &self.spec_re);
                for mut band in out.outer_iter_mut() {
                    self.wavelet_forward(&mut band);
                }
                Ok(CoeffVector::Real(out))
            }
            SpectralTransform::Dft => {
                let re = spectral_apply(&x, &self.spec_re);
                let im = spectral_apply(&x, &self.spec_im);
                let mut out = Zip::from(&re).and(&im).map_collect(|&r, &i| Complex64::new(r, i));
                for mut band in out.outer_iter_mut() {
                    self.wavelet_forward(&mut band);
                }
                Ok(CoeffVector::Complex(out))
            }
        }
    }

    /// `x = Psi theta`; for the DFT the real part is returned.
    pub fn synthesize(&self, theta: &CoeffVector) -> Result<Array3<f64>> {
        self.check(theta.dim())?;
        match (self.spectral, theta) {
            (SpectralTransform::Dct, CoeffVector::Real(t)) => {
                let mut spatial = t.clone();
                for mut band in spatial.outer_iter_mut() {
                    self.wavelet_inverse(&mut band);
                }
                Ok(spectral_apply(&spatial.view(), &self.spec_re.t().to_owned()))
            }
            (SpectralTransform::Dft, CoeffVector::Complex(t)) => {
                let mut spatial = t.clone();
                for mut band in spatial.outer_iter_mut() {
                    self.wavelet_inverse(&mut band);
                }
                // Re(F^H v) = C^T Re(v) + S^T Im(v) with F = C + iS.
                let re = spatial.mapv(|v| v.re);
                let im = spatial.mapv(|v| v.im);
                let mut out = spectral_apply(&re.view(), &self.spec_re.t().to_owned());
                out += &spectral_apply(&im.view(), &self.spec_im.t().to_owned());
                Ok(out)
            }
            _ => Err(Error::Shape("coefficient scalar type does not match the spectral transform".into())),
        }
    }

    /// Zero coefficient vector of the right type and shape.
    pub fn zeros(&self) -> CoeffVector {
        match self.spectral {
            SpectralTransform::Dct => CoeffVector::Real(Array3::zeros(self.dim())),
            SpectralTransform::Dft => CoeffVector::Complex(Array3::zeros(self.dim())),
        }
    }

    /// Dense `Psi` whose columns are the synthesized unit coefficients.
    /// Only available for the real (DCT) basis.
    pub fn build_dense_basis(&self) -> Result<DenseMatrix> {
        let n = self.rows * self.cols * self.bands;
        if n > DENSE_BASIS_CAP {
            return Err(Error::Size(format!("dense basis of {n} columns exceeds cap {DENSE_BASIS_CAP}")));
        }
        if self.spectral != SpectralTransform::Dct {
            return Err(Error::Parameter("dense basis is only built for the real DCT basis".into()));
        }
        let zero = self.zeros();
        let mut data = vec![0.0; n * n];
        for c in 0..n {
            let col = self.synthesize(&zero.unit_like(c))?;
            for (r, v) in col.iter().enumerate() {
                data[r * n + c] = *v;
            }
        }
        Ok(DenseMatrix { nrows: n, ncols: n, data })
    }

    fn wavelet_forward<T: Coefficient>(&self, plane: &mut ndarray::ArrayViewMut2<T>) {
        let mut scratch = Vec::new();
        let (mut h, mut w) = (self.rows, self.cols);
        for _ in 0..self.levels {
            let mut block = plane.slice_mut(ndarray::s![..h, ..w]);
            for lane in block.rows_mut() {
                analysis_1d(lane, &SYM8_LOWPASS, &self.highpass, &mut scratch);
            }
            for lane in block.columns_mut() {
                analysis_1d(lane, &SYM8_LOWPASS, &self.highpass, &mut scratch);
            }
            h /= 2;
            w /= 2;
        }
    }

    fn wavelet_inverse<T: Coefficient>(&self, plane: &mut ndarray::ArrayViewMut2<T>) {
        let mut scratch = Vec::new();
        for level in (0..self.levels).rev() {
            let (h, w) = (self.rows >> level, self.cols >> level);
            let mut block = plane.slice_mut(ndarray::s![..h, ..w]);
            for lane in block.columns_mut() {
                synthesis_1d(lane, &SYM8_LOWPASS, &self.highpass, &mut scratch);
            }
            for lane in block.rows_mut() {
                synthesis_1d(lane, &SYM8_LOWPASS, &self.highpass, &mut scratch);
            }
        }
    }
}

fn max_levels(mut n: usize) -> usize {
    let mut j = 0;
    while n.is_multiple_of(2) && n > 1 {
        n /= 2;
        j += 1;
    }
    j
}

/// Analysis matrices `(C, S)` such that the transform is `C + iS`.
fn spectral_matrices(bands: usize, kind: SpectralTransform) -> (Array2<f64>, Array2<f64>) {
    let n = bands as f64;
    match kind {
        SpectralTransform::Dct => {
            let c = Array2::from_shape_fn((bands, bands), |(k, l)| {
                let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                scale * (PI * (l as f64 + 0.5) * k as f64 / n).cos()
            });
            (c, Array2::zeros((bands, bands)))
        }
        SpectralTransform::Dft => {
            let norm = n.sqrt();
            let angle = |k: usize, l: usize| 2.0 * PI * ((k * l) % bands) as f64 / n;
            let c = Array2::from_shape_fn((bands, bands), |(k, l)| angle(k, l).cos() / norm);
            let s = Array2::from_shape_fn((bands, bands), |(k, l)| -angle(k, l).sin() / norm);
            (c, s)
        }
    }
}

/// Applies `matrix` along the band axis: `out[k] = sum_l matrix[k, l] x[l]`.
fn spectral_apply(x: &ArrayView3<f64>, matrix: &Array2<f64>) -> Array3<f64> {
    let mut out = Array3::zeros(x.dim());
    for (k, mut out_band) in out.outer_iter_mut().enumerate() {
        for (l, in_band) in x.axis_iter(Axis(0)).enumerate() {
            let m = matrix[[k, l]];
            if m != 0.0 {
                out_band.scaled_add(m, &in_band);
            }
        }
    }
    out
}

/// One periodized analysis level: approximation to the first half of `lane`,
/// detail to the second half.
fn analysis_1d<T: Coefficient>(mut lane: ArrayViewMut1<T>, lo: &[f64; 16], hi: &[f64; 16], scratch: &mut Vec<T>) {
    let n = lane.len();
    let half = n / 2;
    scratch.clear();
    scratch.extend(lane.iter().copied());
    for k in 0..half {
        let mut a = T::default();
        let mut d = T::default();
        for t in 0..16 {
            let v = scratch[(2 * k + t) % n];
            a = a + v * lo[t];
            d = d + v * hi[t];
        }
        lane[k] = a;
        lane[half + k] = d;
    }
}

/// Transpose of [`analysis_1d`].
fn synthesis_1d<T: Coefficient>(mut lane: ArrayViewMut1<T>, lo: &[f64; 16], hi: &[f64; 16], scratch: &mut Vec<T>) {
    let n = lane.len();
    let half = n / 2;
    scratch.clear();
    scratch.extend(lane.iter().copied());
    lane.fill(T::default());
    for k in 0..half {
        let a = scratch[k];
        let d = scratch[half + k];
        for t in 0..16 {
            let idx = (2 * k + t) % n;
            lane[idx] = lane[idx] + a * lo[t] + d * hi[t];
        }
    }
}
