//! Reconstruction quality: PSNR, SSIM and spectral correlation.

use std::fmt::Write as _;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor_io::{region_spectrum, Region};

/// SSIM Gaussian window: 11 taps, sigma 1.5.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes(a: (usize, usize, usize), b: (usize, usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("reference {a:?} and estimate {b:?} differ in shape")));
    }
    Ok(())
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsnrReport {
    /// dB per band; `inf` marks an exact match.
    pub per_band: Vec<f64>,
    /// Mean of the per-band values (the headline number).
    pub mean: f64,
    /// PSNR of the flattened cube.
    pub flattened: f64,
}

impl PsnrReport {
    pub fn is_exact(&self) -> bool {
        self.flattened.is_infinite()
    }
}

/// Per-band PSNR in dB with a given peak value.
pub fn psnr(reference: &Array3<f64>, estimate: &Array3<f64>, peak: f64) -> Result<PsnrReport> {
    check_shapes(reference.dim(), estimate.dim())?;
    if !(peak > 0.0) {
        return Err(Error::Parameter(format!("peak must be positive, got {peak}")));
    }
    let mut total = 0.0;
    let per_band: Vec<f64> = reference
        .outer_iter()
        .zip(estimate.outer_iter())
        .map(|(r, e)| {
            let sse: f64 = r.iter().zip(e.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            total += sse;
            psnr_from_mse(sse / r.len() as f64, peak)
        })
        .collect();
    let mean = per_band.iter().sum::<f64>() / per_band.len() as f64;
    Ok(PsnrReport {
        per_band,
        mean,
        flattened: psnr_from_mse(total / reference.len() as f64, peak),
    })
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|t| (-(t as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering with a symmetric 1D window.
fn filter_valid(img: &Array2<f64>, w: &[f64]) -> Array2<f64> {
    let k = w.len();
    let (rows, cols) = img.dim();
    let (out_r, out_c) = (rows + 1 - k, cols + 1 - k);
    let mut tmp = Array2::<f64>::zeros((rows, out_c));
    for i in 0..rows {
        for j in 0..out_c {
            tmp[[i, j]] = (0..k).map(|t| w[t] * img[[i, j + t]]).sum();
        }
    }
    let mut out = Array2::zeros((out_r, out_c));
    for i in 0..out_r {
        for j in 0..out_c {
            out[[i, j]] = (0..k).map(|t| w[t] * tmp[[i + t, j]]).sum();
        }
    }
    out
}

/// SSIM of one band: Gaussian 11x11 window (sigma 1.5), `C1 = (0.01 peak)^2`,
/// `C2 = (0.03 peak)^2`, averaged over all window positions fully inside
/// the image.
pub fn ssim(reference: ArrayView2<f64>, estimate: ArrayView2<f64>, peak: f64) -> Result<f64> {
    if reference.dim() != estimate.dim() {
        return Err(Error::Shape(format!(
            "bands differ in shape: {:?} vs {:?}",
            reference.dim(),
            estimate.dim()
        )));
    }
    let (rows, cols) = reference.dim();
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::Parameter(format!(
            "band {rows}x{cols} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let w = gaussian_window();
    let x = reference.to_owned();
    let y = estimate.to_owned();
    let mu_x = filter_valid(&x, &w);
    let mu_y = filter_valid(&y, &w);
    let xx = filter_valid(&(&x * &x), &w);
    let yy = filter_valid(&(&y * &y), &w);
    let xy = filter_valid(&(&x * &y), &w);
    let mut acc = 0.0;
    for (((((mx, my), sxx), syy), sxy), _) in mu_x
        .iter()
        .zip(mu_y.iter())
        .zip(xx.iter())
        .zip(yy.iter())
        .zip(xy.iter())
        .zip(0..)
    {
        let var_x = sxx - mx * mx;
        let var_y = syy - my * my;
        let cov = sxy - mx * my;
        acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
    }
    Ok(acc / mu_x.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SsimReport {
    pub per_band: Vec<f64>,
    pub mean: f64,
}

pub fn ssim_cube(reference: &Array3<f64>, estimate: &Array3<f64>, peak: f64) -> Result<SsimReport> {
    check_shapes(reference.dim(), estimate.dim())?;
    let per_band = reference
        .axis_iter(Axis(0))
        .zip(estimate.axis_iter(Axis(0)))
        .map(|(r, e)| ssim(r, e, peak))
        .collect::<Result<Vec<_>>>()?;
    let mean = per_band.iter().sum::<f64>() / per_band.len() as f64;
    Ok(SsimReport { per_band, mean })
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation between the region-mean spectra of reference and estimate.
pub fn spectral_correlation(reference: &Array3<f64>, estimate: &Array3<f64>, region: Region) -> Result<Option<f64>> {
    check_shapes(reference.dim(), estimate.dim())?;
    let a = region_spectrum(reference, region)?;
    let b = region_spectrum(estimate, region)?;
    Ok(pearson(&a, &b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionCorrelation {
    pub region: Region,
    /// `None` when a spectrum is constant over bands (undefined correlation).
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub psnr: PsnrReport,
    /// Absent when bands are smaller than the SSIM window.
    pub ssim: Option<SsimReport>,
    pub spectral_correlation: Vec<RegionCorrelation>,
}

impl QualityReport {
    pub fn evaluate(reference: &Array3<f64>, estimate: &Array3<f64>, regions: &[Region]) -> Result<Self> {
        let psnr = psnr(reference, estimate, 1.0)?;
        let (_, rows, cols) = reference.dim();
        let ssim = if rows >= SSIM_WINDOW && cols >= SSIM_WINDOW {
            Some(ssim_cube(reference, estimate, 1.0)?)
        } else {
            None
        };
        let spectral_correlation = regions
            .iter()
            .map(|&region| {
                Ok(RegionCorrelation {
                    region,
                    correlation: spectral_correlation(reference, estimate, region)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            psnr,
            ssim,
            spectral_correlation,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Long-form CSV: `metric,scope,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,scope,value\n");
        for (l, v) in self.psnr.per_band.iter().enumerate() {
            let _ = writeln!(out, "psnr,band{l},{v}");
        }
        let _ = writeln!(out, "psnr,mean,{}", self.psnr.mean);
        let _ = writeln!(out, "psnr,flattened,{}", self.psnr.flattened);
        if let Some(s) = &self.ssim {
            for (l, v) in s.per_band.iter().enumerate() {
                let _ = writeln!(out, "ssim,band{l},{v}");
            }
            let _ = writeln!(out, "ssim,mean,{}", s.mean);
        }
        for rc in &self.spectral_correlation {
            let r = rc.region;
            let value = rc.correlation.map_or_else(|| "undefined".to_string(), |c| c.to_string());
            let _ = writeln!(
                out,
                "spectral_correlation,{}:{}:{}:{},{value}",
                r.row, r.col, r.height, r.width
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dim: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn(dim, || rng.random::<f64>())
    }

    #[test]
    fn psnr_exact_match_is_infinite() {
        let a = random((3, 8, 8), 1);
        let r = psnr(&a, &a, 1.0).unwrap();
        assert!(r.is_exact());
        assert!(r.per_band.iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn psnr_analytic_value() {
        let a = Array3::zeros((2, 4, 4));
        let b = Array3::from_elem((2, 4, 4), 0.1);
        let r = psnr(&a, &b, 1.0).unwrap();
        for v in r.per_band.iter().chain([&r.mean, &r.flattened]) {
            assert!((v - 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_mean_matches_scalar_recomputation() {
        let a = random((4, 6, 5), 2);
        let b = random((4, 6, 5), 3);
        let r = psnr(&a, &b, 1.0).unwrap();
        let mut acc = 0.0;
        for l in 0..4 {
            let mut sse = 0.0;
            for i in 0..6 {
                for j in 0..5 {
                    sse += (a[[l, i, j]] - b[[l, i, j]]).powi(2);
                }
            }
            acc += 10.0 * (1.0 / (sse / 30.0)).log10();
        }
        assert!((r.mean - acc / 4.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_tracks_known_noise_level() {
        let a = random((4, 128, 128), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = rand_distr::Normal::new(0.0, 0.05).unwrap();
        let b = a.mapv(|v| v + rand_distr::Distribution::sample(&normal, &mut rng));
        let r = psnr(&a, &b, 1.0).unwrap();
        assert!((r.mean - 10.0 * (1.0f64 / 0.0025).log10()).abs() < 0.1);
    }

    #[test]
    fn ssim_identity_symmetry_and_bounds() {
        let a = random((1, 32, 32), 6);
        let b = random((1, 32, 32), 7);
        let (a0, b0) = (a.index_axis(Axis(0), 0), b.index_axis(Axis(0), 0));
        assert!((ssim(a0, a0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let ab = ssim(a0, b0, 1.0).unwrap();
        let ba = ssim(b0, a0, 1.0).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
        let inv = a0.mapv(|v| 1.0 - v);
        assert!(ssim(a0, inv.view(), 1.0).unwrap() < 1.0);
    }

    #[test]
    fn ssim_matches_scikit_image() {
        // structural_similarity(a, b, data_range=1, gaussian_weights=True,
        // sigma=1.5, use_sample_covariance=False) from scikit-image 0.25
        let a = Array2::from_shape_fn((32, 24), |(i, j)| 0.5 + 0.4 * (0.3 * i as f64 + 0.2 * j as f64).sin());
        let b = Array2::from_shape_fn((32, 24), |(i, j)| {
            let (i, j) = (i as f64, j as f64);
            0.5 + 0.35 * (0.3 * i + 0.25 * j).sin() + 0.05 * (1.7 * i * j / 10.0).cos()
        });
        let affine = a.mapv(|v| 0.8 * v + 0.1);
        assert!((ssim(a.view(), b.view(), 1.0).unwrap() - 0.6713804759410159).abs() < 1e-10);
        assert!((ssim(a.view(), affine.view(), 1.0).unwrap() - 0.9635755441401018).abs() < 1e-10);
    }

    #[test]
    fn ssim_too_small_band() {
        let a = Array2::<f64>::zeros((10, 20));
        assert!(matches!(ssim(a.view(), a.view(), 1.0), Err(Error::Parameter(_))));
        let b = Array2::<f64>::zeros((12, 20));
        assert!(matches!(ssim(a.view(), b.view(), 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn correlation_cases() {
        let a = random((6, 4, 4), 8);
        let region = Region::new(0, 0, 4, 4);
        assert!((spectral_correlation(&a, &a, region).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let affine = a.mapv(|v| 3.0 * v + 0.2);
        assert!((spectral_correlation(&a, &affine, region).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let anti = a.mapv(|v| -v);
        assert!((spectral_correlation(&a, &anti, region).unwrap().unwrap() + 1.0).abs() < 1e-12);
        let flat = Array3::from_elem((6, 4, 4), 0.5);
        assert_eq!(spectral_correlation(&a, &flat, region).unwrap(), None);
    }

    #[test]
    fn report_serializes() {
        let a = random((2, 12, 12), 9);
        let b = random((2, 12, 12), 10);
        let report = QualityReport::evaluate(&a, &b, &[Region::new(0, 0, 2, 2)]).unwrap();
        assert!(report.ssim.is_some());
        let csv = report.to_csv();
        assert!(csv.starts_with("metric,scope,value\npsnr,band0,"));
        assert!(csv.contains("spectral_correlation,0:0:2:2,"));
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["psnr"]["per_band"].as_array().unwrap().len(), 2);
    }
}
