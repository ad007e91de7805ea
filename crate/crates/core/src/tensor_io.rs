//! Cube, aperture and measurement containers plus their on-disk formats.
//!
//! All tensors share one lossless little-endian binary layout:
//!
//! | offset | size | content                                         |
//! |--------|------|-------------------------------------------------|
//! | 0      | 16   | magic, identifies the tensor kind                |
//! | 16     | 4    | `u32` rows                                      |
//! | 20     | 4    | `u32` cols                                      |
//! | 24     | 4    | `u32` planes (bands, snapshots or masks)         |
//! | 28     | 8·n  | `f64` payload, plane-major then row-major        |
//!
//! `n = rows * cols * planes`. The payload order is exactly the standard
//! layout of an `Array3` of shape `(planes, rows, cols)`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC_CUBE: [u8; 16] = *b"CASSI-F64-CUBE\0\0";
pub const MAGIC_MEASUREMENT: [u8; 16] = *b"CASSI-F64-MEAS\0\0";
pub const MAGIC_APERTURE: [u8; 16] = *b"CASSI-F64-MASK\0\0";
pub const MAGIC_COEFFS: [u8; 16] = *b"CASSI-F64-COEF\0\0";

/// Size in bytes of the fixed tensor header.
pub const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorKind {
    Cube,
    Measurement,
    Aperture,
    Coefficients,
}

impl TensorKind {
    pub fn magic(self) -> [u8; 16] {
        match self {
            TensorKind::Cube => MAGIC_CUBE,
            TensorKind::Measurement => MAGIC_MEASUREMENT,
            TensorKind::Aperture => MAGIC_APERTURE,
            TensorKind::Coefficients => MAGIC_COEFFS,
        }
    }

    fn from_magic(magic: &[u8; 16]) -> Option<Self> {
        [
            TensorKind::Cube,
            TensorKind::Measurement,
            TensorKind::Aperture,
            TensorKind::Coefficients,
        ]
        .into_iter()
        .find(|k| &k.magic() == magic)
    }
}

/// Serializes `data` (shape `(planes, rows, cols)`) into `w`.
pub fn write_tensor<W: Write>(w: &mut W, kind: TensorKind, data: &Array3<f64>) -> Result<()> {
    let (planes, rows, cols) = data.dim();
    let dim = |v: usize, name: &str| {
        u32::try_from(v).map_err(|_| Error::Size(format!("{name} = {v} does not fit in u32")))
    };
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * data.len());
    buf.extend_from_slice(&kind.magic());
    buf.extend_from_slice(&dim(rows, "rows")?.to_le_bytes());
    buf.extend_from_slice(&dim(cols, "cols")?.to_le_bytes());
    buf.extend_from_slice(&dim(planes, "planes")?.to_le_bytes());
    for v in data.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn encode_tensor(kind: TensorKind, data: &Array3<f64>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_tensor(&mut out, kind, data)?;
    Ok(out)
}

/// Reads exactly one tensor (header + payload) from `r`.
///
/// Trailing bytes after the payload are left unread, so this also works on
/// streams carrying several tensors back to back.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<(TensorKind, Array3<f64>)> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format("truncated tensor header".into()),
        _ => Error::Io(e),
    })?;
    let magic: [u8; 16] = header[..16].try_into().expect("16-byte slice");
    let kind = TensorKind::from_magic(&magic)
        .ok_or_else(|| Error::Format(format!("unknown tensor magic {:?}", String::from_utf8_lossy(&magic))))?;
    let field = |at: usize| u32::from_le_bytes(header[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols, planes) = (field(16), field(20), field(24));
    if rows == 0 || cols == 0 || planes == 0 {
        return Err(Error::Format(format!(
            "tensor dims must be positive, got {rows}x{cols}x{planes}"
        )));
    }
    let count = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(planes))
        .filter(|v| v.checked_mul(8).is_some())
        .ok_or_else(|| Error::Format("tensor dims overflow".into()))?;
    let mut payload = vec![0u8; count * 8];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format(format!(
            "payload shorter than declared {rows}x{cols}x{planes} values"
        )),
        _ => Error::Io(e),
    })?;
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let data = Array3::from_shape_vec((planes, rows, cols), values).expect("length checked above");
    Ok((kind, data))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<(TensorKind, Array3<f64>)> {
    let mut cursor = bytes;
    let out = read_tensor(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor payload",
            cursor.len()
        )));
    }
    Ok(out)
}

fn read_tensor_file(path: &Path, expected: TensorKind) -> Result<Array3<f64>> {
    let bytes = fs::read(path)?;
    let (kind, data) = decode_tensor(&bytes)?;
    if kind != expected {
        return Err(Error::Format(format!(
            "{}: expected a {expected:?} tensor, found {kind:?}",
            path.display()
        )));
    }
    Ok(data)
}

fn write_tensor_file(path: &Path, kind: TensorKind, data: &Array3<f64>) -> Result<()> {
    let bytes = encode_tensor(kind, data)?;
    fs::write(path, bytes)?;
    Ok(())
}

fn ensure_finite(data: &Array3<f64>, what: &str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(idx) => Err(Error::Data(format!("{what} has a non-finite value at flat index {idx}"))),
        None => Ok(()),
    }
}

/// A hyperspectral scene with values in `[0, 1]`, shape `(bands, rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    data: Array3<f64>,
}

impl HyperCube {
    /// Validates an already normalized cube.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Shape("cube dims must all be >= 1".into()));
        }
        ensure_finite(&data, "cube")?;
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("cube value {v} outside [0, 1]")));
        }
        Ok(Self { data })
    }

    /// Builds a cube from raw non-negative data, dividing by the global maximum.
    ///
    /// An all-zero array is accepted unchanged.
    pub fn normalized(mut data: Array3<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Shape("cube dims must all be >= 1".into()));
        }
        ensure_finite(&data, "cube")?;
        if let Some(v) = data.iter().find(|v| **v < 0.0) {
            return Err(Error::Data(format!("negative cube value {v}")));
        }
        let max = data.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            data.mapv_inplace(|v| v / max);
        }
        Self::new(data)
    }

    pub fn rows(&self) -> usize {
        self.data.dim().1
    }

    pub fn cols(&self) -> usize {
        self.data.dim().2
    }

    pub fn bands(&self) -> usize {
        self.data.dim().0
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn band(&self, l: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), l)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// Spatial modulation mask, one per snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedAperture {
    mask: Array2<f64>,
}

impl CodedAperture {
    pub fn new(mask: Array2<f64>) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::Shape("aperture dims must be >= 1".into()));
        }
        if let Some(v) = mask.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("aperture entry {v} outside [0, 1]")));
        }
        Ok(Self { mask })
    }

    pub fn rows(&self) -> usize {
        self.mask.nrows()
    }

    pub fn cols(&self) -> usize {
        self.mask.ncols()
    }

    pub fn mask(&self) -> &Array2<f64> {
        &self.mask
    }

    /// Fraction of entries equal to one.
    pub fn open_fraction(&self) -> f64 {
        self.mask.iter().filter(|v| **v == 1.0).count() as f64 / self.mask.len() as f64
    }
}

/// Detector data, shape `(snapshots, rows, detector_cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    data: Array3<f64>,
}

impl Measurement {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Shape("measurement dims must all be >= 1".into()));
        }
        ensure_finite(&data, "measurement")?;
        Ok(Self { data })
    }

    pub fn snapshots(&self) -> usize {
        self.data.dim().0
    }

    pub fn rows(&self) -> usize {
        self.data.dim().1
    }

    pub fn cols(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CubeFormat {
    /// Single binary tensor file.
    PlanarBinary,
    /// Directory of grayscale PNG images, one per band, sorted by file name.
    PerBandImageStack,
}

/// Loads a cube and normalizes it to a global peak of one.
pub fn load_cube(path: &Path, format: CubeFormat) -> Result<HyperCube> {
    let data = match format {
        CubeFormat::PlanarBinary => read_tensor_file(path, TensorKind::Cube)?,
        CubeFormat::PerBandImageStack => read_image_stack(path)?,
    };
    HyperCube::normalized(data)
}

fn read_image_stack(dir: &Path) -> Result<Array3<f64>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Format(format!("no PNG bands found in {}", dir.display())));
    }
    let mut bands = Vec::with_capacity(files.len());
    for file in &files {
        let img = image::open(file)
            .map_err(|e| Error::Format(format!("{}: {e}", file.display())))?
            .to_luma16();
        let (w, h) = img.dimensions();
        let band = Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
            f64::from(img.get_pixel(j as u32, i as u32)[0]) / f64::from(u16::MAX)
        });
        if let Some(first) = bands.first() {
            let first: &Array2<f64> = first;
            if first.dim() != band.dim() {
                return Err(Error::Format(format!(
                    "{}: band size {:?} differs from {:?}",
                    file.display(),
                    band.dim(),
                    first.dim()
                )));
            }
        }
        bands.push(band);
    }
    let views: Vec<_> = bands.iter().map(|b| b.view()).collect();
    Ok(ndarray::stack(Axis(0), &views).expect("equal band shapes"))
}

pub fn save_cube(path: &Path, cube: &HyperCube) -> Result<()> {
    write_tensor_file(path, TensorKind::Cube, cube.data())
}

/// Saves an arbitrary cube-shaped array (e.g. a raw solver iterate).
pub fn save_cube_array(path: &Path, data: &Array3<f64>) -> Result<()> {
    ensure_finite(data, "cube")?;
    write_tensor_file(path, TensorKind::Cube, data)
}

/// Loads a cube-shaped array without any normalization or range check.
pub fn load_cube_array(path: &Path) -> Result<Array3<f64>> {
    let data = read_tensor_file(path, TensorKind::Cube)?;
    ensure_finite(&data, "cube")?;
    Ok(data)
}

pub fn save_measurement(path: &Path, y: &Measurement) -> Result<()> {
    write_tensor_file(path, TensorKind::Measurement, y.data())
}

pub fn load_measurement(path: &Path) -> Result<Measurement> {
    Measurement::new(read_tensor_file(path, TensorKind::Measurement)?)
}

/// Stacks apertures into a `(count, rows, cols)` array.
pub fn stack_apertures(apertures: &[CodedAperture]) -> Result<Array3<f64>> {
    let first = apertures
        .first()
        .ok_or_else(|| Error::Parameter("at least one aperture is required".into()))?;
    if apertures.iter().any(|a| a.mask.dim() != first.mask.dim()) {
        return Err(Error::Shape("apertures have differing shapes".into()));
    }
    let views: Vec<_> = apertures.iter().map(|a| a.mask.view()).collect();
    Ok(ndarray::stack(Axis(0), &views).expect("shapes checked"))
}

pub fn unstack_apertures(data: &Array3<f64>) -> Result<Vec<CodedAperture>> {
    data.outer_iter()
        .map(|m| CodedAperture::new(m.to_owned()))
        .collect()
}

pub fn save_apertures(path: &Path, apertures: &[CodedAperture]) -> Result<()> {
    write_tensor_file(path, TensorKind::Aperture, &stack_apertures(apertures)?)
}

pub fn load_apertures(path: &Path) -> Result<Vec<CodedAperture>> {
    let data = read_tensor_file(path, TensorKind::Aperture)?;
    ensure_finite(&data, "aperture")?;
    unstack_apertures(&data)
}

/// Random binary aperture: each entry is 1 with probability `transmittance`.
pub fn generate_aperture(rows: usize, cols: usize, transmittance: f64, seed: u64) -> Result<CodedAperture> {
    if !(transmittance > 0.0 && transmittance < 1.0) {
        return Err(Error::Parameter(format!(
            "transmittance must lie in (0, 1), got {transmittance}"
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Parameter("aperture dims must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random_bool(transmittance) {
            1.0
        } else {
            0.0
        }
    });
    CodedAperture::new(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    GaussianBlobs,
    GradientRamp,
    CheckerSpectral,
}

/// Deterministic desk-scale test scene, peak-normalized.
pub fn make_synthetic_cube(
    rows: usize,
    cols: usize,
    bands: usize,
    kind: SyntheticKind,
    seed: u64,
) -> Result<HyperCube> {
    if rows == 0 || cols == 0 || bands == 0 {
        return Err(Error::Parameter(format!(
            "synthetic cube dims must be >= 1, got {rows}x{cols}x{bands}"
        )));
    }
    let data = match kind {
        SyntheticKind::GradientRamp => {
            Array3::from_shape_fn((bands, rows, cols), |(l, i, j)| (i + j + l) as f64)
        }
        SyntheticKind::GaussianBlobs => gaussian_blobs(rows, cols, bands, seed),
        SyntheticKind::CheckerSpectral => checker_spectral(rows, cols, bands, seed),
    };
    HyperCube::normalized(data)
}

fn gaussian_blobs(rows: usize, cols: usize, bands: usize, seed: u64) -> Array3<f64> {
    const BLOBS: usize = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = rows.min(cols) as f64;
    let blobs: Vec<[f64; 6]> = (0..BLOBS)
        .map(|_| {
            let ci = rng.random::<f64>() * rows as f64;
            let cj = rng.random::<f64>() * cols as f64;
            let width = (extent * rng.random_range(0.08..0.22)).max(1.0);
            let amp = rng.random_range(0.4..1.0);
            let peak_band = rng.random::<f64>() * (bands.max(2) - 1) as f64;
            let spread = (bands as f64 * rng.random_range(0.3..0.8)).max(0.5);
            [ci, cj, width, amp, peak_band, spread]
        })
        .collect();
    Array3::from_shape_fn((bands, rows, cols), |(l, i, j)| {
        blobs
            .iter()
            .map(|&[ci, cj, width, amp, peak, spread]| {
                let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                let spatial = (-d2 / (2.0 * width * width)).exp();
                let spectral = 0.25 + 0.75 * (-(l as f64 - peak).powi(2) / (2.0 * spread * spread)).exp();
                amp * spatial * spectral
            })
            .sum()
    })
}

fn checker_spectral(rows: usize, cols: usize, bands: usize, seed: u64) -> Array3<f64> {
    let block = (rows.min(cols) / 4).max(1);
    let blocks_down = rows.div_ceil(block);
    let blocks_across = cols.div_ceil(block);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gains: Vec<f64> = (0..blocks_down * blocks_across)
        .map(|_| rng.random_range(0.5..1.0))
        .collect();
    Array3::from_shape_fn((bands, rows, cols), |(l, i, j)| {
        let (bi, bj) = (i / block, j / block);
        let t = (l as f64 + 1.0) / bands as f64;
        let spectrum = if (bi + bj) % 2 == 0 {
            0.3 + 0.7 * t
        } else {
            1.0 - 0.7 * t
        };
        gains[bi * blocks_across + bj] * spectrum
    })
}

/// Writes one 8-bit grayscale PNG per band using a single global scale
/// anchored at the cube maximum. Returns the written paths in band order.
pub fn export_band_images(cube: &HyperCube, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let max = cube.max();
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut written = Vec::with_capacity(cube.bands());
    for l in 0..cube.bands() {
        let band = cube.band(l);
        let img = image::GrayImage::from_fn(cube.cols() as u32, cube.rows() as u32, |x, y| {
            image::Luma([quantize(band[[y as usize, x as usize]] * scale)])
        });
        let path = dir.join(format!("band_{l:03}.png"));
        img.save(&path)
            .map_err(|e| Error::Io(io::Error::other(format!("{}: {e}", path.display()))))?;
        written.push(path);
    }
    Ok(written)
}

/// Round-half-up to an 8-bit level.
pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Axis-aligned spatial rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn new(row: usize, col: usize, height: usize, width: usize) -> Self {
        Self { row, col, height, width }
    }

    /// Checks the region is non-empty and inside `rows x cols`.
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Parameter("region is empty".into()));
        }
        if self.row + self.height > rows || self.col + self.width > cols {
            return Err(Error::Parameter(format!(
                "region {self:?} exceeds spatial bounds {rows}x{cols}"
            )));
        }
        Ok(())
    }
}

impl std::str::FromStr for Region {
    type Err = Error;

    /// Parses `row,col,height,width`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parameter(format!("region '{s}': {e}")))?;
        match parts.as_slice() {
            &[row, col, height, width] => Ok(Region::new(row, col, height, width)),
            _ => Err(Error::Parameter(format!(
                "region '{s}' must be row,col,height,width"
            ))),
        }
    }
}

/// Mean value over `region` for every band of a cube-shaped array.
pub fn region_spectrum(data: &Array3<f64>, region: Region) -> Result<Vec<f64>> {
    let (_, rows, cols) = data.dim();
    region.validate(rows, cols)?;
    let count = (region.height * region.width) as f64;
    Ok(data
        .outer_iter()
        .map(|band| {
            band.slice(ndarray::s![
                region.row..region.row + region.height,
                region.col..region.col + region.width
            ])
            .sum()
                / count
        })
        .collect())
}

/// CSV text with header `band,value` and one LF-terminated row per band.
pub fn spectrum_csv(cube: &HyperCube, region: Region) -> Result<String> {
    let spectrum = region_spectrum(cube.data(), region)?;
    let mut out = String::from("band,value\n");
    for (l, v) in spectrum.iter().enumerate() {
        out.push_str(&format!("{l},{v}\n"));
    }
    Ok(out)
}

pub fn export_spectrum_csv(cube: &HyperCube, region: Region, path: &Path) -> Result<()> {
    fs::write(path, spectrum_csv(cube, region)?)?;
    Ok(())
}
