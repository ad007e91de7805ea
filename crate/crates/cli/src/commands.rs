use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use cassi_core::denoiser::{open_session, Denoiser, DenoiserKind, ProblemDescriptor, SessionOptions};
use cassi_core::forward_model::{Dispersion, SensingOperator, EXPLICIT_H_CAP};
use cassi_core::metrics::QualityReport;
use cassi_core::solver::{IterationTrace, Mode, Solver, SolverConfig, SolverState};
use cassi_core::sparse_basis::{SparseBasis, SpectralTransform};
use cassi_core::tensor_io::{
    export_band_images, export_spectrum_csv, generate_aperture, load_apertures, load_cube, load_cube_array,
    load_measurement, make_synthetic_cube, save_apertures, save_cube, save_cube_array, CubeFormat, HyperCube,
    Measurement, Region, SyntheticKind,
};
use cassi_core::{Error, Result};

use crate::manifest::{beside, Manifest, MANIFEST_FILE};

/// Parses a kebab-case enum through its serde representation.
fn kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_region(s: &str) -> std::result::Result<Region, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => Ok(fs::create_dir_all(p)?),
        _ => Ok(()),
    }
}

/// Refuses to write outputs over any of the inputs.
fn guard_inputs(outputs: &[&Path], inputs: &[&Path]) -> Result<()> {
    for out in outputs {
        for input in inputs {
            let same = match (fs::canonicalize(out), fs::canonicalize(input)) {
                (Ok(a), Ok(b)) => a == b || a.starts_with(&b),
                _ => false,
            };
            if same {
                return Err(Error::Parameter(format!(
                    "output {} would overwrite input {}",
                    out.display(),
                    input.display()
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MakeApertureArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    /// Probability that an aperture element is open.
    #[arg(long, default_value_t = 0.5)]
    pub transmittance: f64,
    /// Number of snapshots; snapshot k uses seed + k.
    #[arg(long, default_value_t = 1)]
    pub snapshots: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn make_aperture(a: &MakeApertureArgs, argv: &[String]) -> Result<()> {
    if a.snapshots == 0 {
        return Err(Error::Parameter("snapshots must be >= 1".into()));
    }
    let apertures = (0..a.snapshots as u64)
        .map(|k| generate_aperture(a.rows, a.cols, a.transmittance, a.seed.wrapping_add(k)))
        .collect::<Result<Vec<_>>>()?;
    ensure_parent(&a.out)?;
    save_apertures(&a.out, &apertures)?;
    let mut m = Manifest::new("make-aperture", argv, a)?;
    m.output(&a.out);
    m.summary = json!({
        "open_fraction": apertures.iter().map(|ap| ap.open_fraction()).collect::<Vec<_>>(),
    });
    m.write(&beside(&a.out))
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MakeCubeArgs {
    #[arg(long, required_unless_present = "from_images")]
    pub rows: Option<usize>,
    #[arg(long, required_unless_present = "from_images")]
    pub cols: Option<usize>,
    #[arg(long, required_unless_present = "from_images")]
    pub bands: Option<usize>,
    /// gaussian-blobs, gradient-ramp or checker-spectral.
    #[arg(long, value_parser = kebab::<SyntheticKind>, default_value = "gaussian-blobs")]
    pub kind: SyntheticKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Import a directory of per-band grayscale PNGs instead.
    #[arg(long, conflicts_with_all = ["rows", "cols", "bands"])]
    pub from_images: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn make_cube(a: &MakeCubeArgs, argv: &[String]) -> Result<()> {
    let mut m = Manifest::new("make-cube", argv, a)?;
    let cube = match (&a.from_images, a.rows, a.cols, a.bands) {
        (Some(dir), ..) => {
            guard_inputs(&[&a.out], &[dir])?;
            m.input(dir)?;
            load_cube(dir, CubeFormat::PerBandImageStack)?
        }
        (None, Some(rows), Some(cols), Some(bands)) => make_synthetic_cube(rows, cols, bands, a.kind, a.seed)?,
        _ => return Err(Error::Parameter("give --rows, --cols and --bands, or --from-images".into())),
    };
    ensure_parent(&a.out)?;
    save_cube(&a.out, &cube)?;
    m.output(&a.out);
    m.summary = json!({ "dims": [cube.bands(), cube.rows(), cube.cols()] });
    m.write(&beside(&a.out))
}

/// Operator geometry shared by the commands that rebuild `H`.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Geometry {
    /// Aperture tensor file (one plane per snapshot).
    #[arg(long)]
    pub apertures: PathBuf,
    /// Detector pixels between adjacent bands.
    #[arg(long, default_value_t = 1)]
    pub shift: usize,
    /// rightward or leftward.
    #[arg(long, value_parser = kebab::<Dispersion>, default_value = "rightward")]
    pub dispersion: Dispersion,
}

impl Geometry {
    fn operator(&self, bands: usize) -> Result<SensingOperator> {
        let apertures = load_apertures(&self.apertures)?;
        SensingOperator::with_dispersion(&apertures, bands, self.shift, self.dispersion)
    }

    /// Recovers the band count from the detector width when not given.
    fn operator_for(&self, y: &Measurement, bands: Option<usize>) -> Result<SensingOperator> {
        let apertures = load_apertures(&self.apertures)?;
        let cols = apertures.first().map(|a| a.cols()).unwrap_or(0);
        let bands = match bands {
            Some(b) => b,
            None => {
                let extra = y.cols().checked_sub(cols).ok_or_else(|| {
                    Error::Shape(format!("detector width {} is narrower than the aperture ({cols})", y.cols()))
                })?;
                if self.shift == 0 || extra % self.shift != 0 {
                    return Err(Error::Shape(format!(
                        "detector width {} is not aperture width {cols} plus a multiple of shift {}",
                        y.cols(),
                        self.shift
                    )));
                }
                extra / self.shift + 1
            }
        };
        let op = SensingOperator::with_dispersion(&apertures, bands, self.shift, self.dispersion)?;
        if op.measurement_dim() != y.data().dim() {
            return Err(Error::Shape(format!(
                "measurement {:?} does not match the operator's {:?}",
                y.data().dim(),
                op.measurement_dim()
            )));
        }
        Ok(op)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub cube: PathBuf,
    #[command(flatten)]
    pub geometry: Geometry,
    /// Standard deviation of additive Gaussian detector noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn simulate(a: &SimulateArgs, argv: &[String]) -> Result<()> {
    if !(a.noise_sigma >= 0.0 && a.noise_sigma.is_finite()) {
        return Err(Error::Parameter(format!("noise sigma must be finite and >= 0, got {}", a.noise_sigma)));
    }
    guard_inputs(&[&a.out], &[&a.cube, &a.geometry.apertures])?;
    let mut m = Manifest::new("simulate", argv, a)?;
    m.input(&a.cube)?;
    m.input(&a.geometry.apertures)?;
    let cube = HyperCube::new(load_cube_array(&a.cube)?)?;
    let op = a.geometry.operator(cube.bands())?;
    let y = op.simulate(&cube, a.noise_sigma, a.seed)?;
    ensure_parent(&a.out)?;
    cassi_core::tensor_io::save_measurement(&a.out, &y)?;
    m.output(&a.out);
    m.summary = json!({ "measurement_dims": [y.snapshots(), y.rows(), y.cols()] });
    m.write(&beside(&a.out))
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BackprojectArgs {
    #[arg(long)]
    pub measurement: PathBuf,
    #[command(flatten)]
    pub geometry: Geometry,
    /// Band count; inferred from the detector width when omitted.
    #[arg(long)]
    pub bands: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn backproject(a: &BackprojectArgs, argv: &[String]) -> Result<()> {
    guard_inputs(&[&a.out], &[&a.measurement, &a.geometry.apertures])?;
    let mut m = Manifest::new("backproject", argv, a)?;
    m.input(&a.measurement)?;
    m.input(&a.geometry.apertures)?;
    let y = load_measurement(&a.measurement)?;
    let op = a.geometry.operator_for(&y, a.bands)?;
    let x = op.apply_ht(y.data().view())?;
    ensure_parent(&a.out)?;
    save_cube_array(&a.out, &x)?;
    m.output(&a.out);
    m.write(&beside(&a.out))
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub measurement: PathBuf,
    #[command(flatten)]
    pub geometry: Geometry,
    /// Band count; inferred from the detector width when omitted.
    #[arg(long)]
    pub bands: Option<usize>,
    /// fama-sdip or sparsity-only.
    #[arg(long, value_parser = kebab::<Mode>, default_value = "fama-sdip")]
    pub mode: Mode,
    /// Start fama-sdip from a sparsity-only reconstruction.
    #[arg(long)]
    pub warm_start: bool,
    #[arg(long, default_value_t = 10.0)]
    pub xi1: f64,
    #[arg(long, default_value_t = 8.0)]
    pub xi: f64,
    #[arg(long, default_value_t = 10.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.95)]
    pub t_prime: f64,
    #[arg(long, default_value_t = 45)]
    pub outer_iters: usize,
    #[arg(long, default_value_t = 100)]
    pub inner_iters: u32,
    /// Stop when the relative change of x falls below this value.
    #[arg(long)]
    pub early_stop: Option<f64>,
    /// external-worker, builtin-smoother or builtin-identity.
    #[arg(long, value_parser = kebab::<DenoiserKind>, default_value = "external-worker")]
    pub denoiser: DenoiserKind,
    /// Worker executable for the external denoiser.
    #[arg(long)]
    pub worker: Option<String>,
    /// Argument passed to the worker; repeat for several.
    #[arg(long = "worker-arg", allow_hyphen_values = true)]
    pub worker_args: Vec<String>,
    /// Seed forwarded to the denoiser.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seconds to wait for the worker handshake.
    #[arg(long, default_value_t = 60.0)]
    pub handshake_timeout: f64,
    /// Seconds to wait for each denoising step.
    #[arg(long, default_value_t = 600.0)]
    pub step_timeout: f64,
    /// dct or dft along the bands.
    #[arg(long, value_parser = kebab::<SpectralTransform>, default_value = "dct")]
    pub spectral: SpectralTransform,
    /// Wavelet decomposition levels.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Continue from a saved `state/` directory up to --outer-iters in total.
    #[arg(long, conflicts_with = "warm_start")]
    pub resume_state: Option<PathBuf>,
    /// Reference cube; adds PSNR and SSIM columns to the trace.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out_dir: PathBuf,
}

impl ReconstructArgs {
    fn config(&self) -> Result<SolverConfig> {
        let cfg = SolverConfig {
            xi1: self.xi1,
            xi: self.xi,
            eta: self.eta,
            t_prime: self.t_prime,
            outer_iters: self.outer_iters,
            inner_iters: self.inner_iters,
            mode: self.mode,
            warm_start: self.warm_start,
            early_stop: self.early_stop,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn session_options(&self) -> Result<SessionOptions> {
        let secs = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(Duration::from_secs_f64(v))
            } else {
                Err(Error::Parameter(format!("{what} must be a positive number of seconds, got {v}")))
            }
        };
        Ok(SessionOptions {
            handshake_timeout: secs(self.handshake_timeout, "handshake timeout")?,
            step_timeout: secs(self.step_timeout, "step timeout")?,
            ..SessionOptions::default()
        })
    }

    fn worker_command(&self) -> Option<Vec<String>> {
        self.worker.as_ref().map(|w| {
            let mut cmd = vec![w.clone()];
            cmd.extend(self.worker_args.iter().cloned());
            cmd
        })
    }
}

fn write_trace(path: &Path, trace: &IterationTrace) -> Result<()> {
    fs::write(path, trace.to_csv())?;
    Ok(())
}

pub fn reconstruct(a: &ReconstructArgs, argv: &[String]) -> Result<()> {
    let cfg = a.config()?;
    let options = a.session_options()?;
    let worker = a.worker_command();
    let needs_worker = cfg.mode == Mode::FamaSdip && a.denoiser == DenoiserKind::ExternalWorker;
    if needs_worker && worker.is_none() {
        return Err(Error::Parameter(
            "fama-sdip with the external-worker denoiser needs --worker".into(),
        ));
    }
    let mut inputs: Vec<&Path> = vec![&a.measurement, &a.geometry.apertures];
    if let Some(gt) = &a.ground_truth {
        inputs.push(gt);
    }
    if let Some(st) = &a.resume_state {
        inputs.push(st);
    }
    guard_inputs(&[&a.out_dir, &a.out_dir.join("state")], &inputs)?;

    let mut m = Manifest::new("reconstruct", argv, a)?;
    for p in &inputs {
        m.input(p)?;
    }
    let y = load_measurement(&a.measurement)?;
    let op = a.geometry.operator_for(&y, a.bands)?;
    let (bands, rows, cols) = op.cube_dim();
    let basis = SparseBasis::new(rows, cols, bands, a.levels, a.spectral)?;
    let ground_truth = match &a.ground_truth {
        Some(p) => {
            let gt = load_cube_array(p)?;
            if gt.dim() != op.cube_dim() {
                return Err(Error::Shape(format!(
                    "ground truth {:?} does not match the operator's {:?}",
                    gt.dim(),
                    op.cube_dim()
                )));
            }
            Some(gt)
        }
        None => None,
    };
    let solver = Solver::new(&op, &basis, &y, cfg)?;
    let resume = a.resume_state.as_deref().map(SolverState::load).transpose()?;

    let mut session = if a.mode == Mode::FamaSdip {
        let problem = ProblemDescriptor {
            operator: op.clone(),
            measurement: y.data().clone(),
            eta: a.eta,
            seed: a.seed,
        };
        Some(open_session(a.denoiser, &problem, worker.as_deref(), options)?)
    } else {
        None
    };

    fs::create_dir_all(&a.out_dir)?;
    let started = Instant::now();
    let denoiser = session.as_mut().map(|s| s as &mut dyn Denoiser);
    let outcome = match resume {
        Some(state) => solver.resume(state, denoiser, ground_truth.as_ref()),
        None => solver.run(denoiser, ground_truth.as_ref()),
    };
    if let Some(s) = session.as_mut() {
        s.close();
    }
    let elapsed = started.elapsed().as_secs_f64();
    let out = |name: &str| a.out_dir.join(name);

    let rec = match outcome {
        Ok(rec) => rec,
        Err(failure) => {
            // keep whatever the aborted run produced
            write_trace(&out("trace.csv"), &failure.trace)?;
            m.output(&out("trace.csv"));
            if let Some(state) = &failure.state {
                state.save(&out("state"))?;
                m.output(&out("state"));
            }
            m.summary = json!({
                "status": "failed",
                "error": failure.error.kind(),
                "message": failure.error.to_string(),
                "iterations": failure.trace.len(),
                "seconds": elapsed,
            });
            m.write(&out(MANIFEST_FILE))?;
            return Err(failure.error);
        }
    };

    save_cube_array(&out("reconstruction.bin"), &rec.x)?;
    save_cube_array(&out("reconstruction_raw.bin"), &rec.x_raw)?;
    write_trace(&out("trace.csv"), &rec.trace)?;
    rec.state.save(&out("state"))?;
    for name in ["reconstruction.bin", "reconstruction_raw.bin", "trace.csv", "state"] {
        m.output(&out(name));
    }
    if let Some(warm) = &rec.warm_start_trace {
        write_trace(&out("warm_start_trace.csv"), warm)?;
        m.output(&out("warm_start_trace.csv"));
    }
    let last = rec.trace.records.last();
    m.summary = json!({
        "status": "ok",
        "iterations": rec.trace.len(),
        "warm_start_iterations": rec.warm_start_trace.as_ref().map(|t| t.len()),
        "stopped_early": rec.stopped_early,
        "final_objective": last.map(|r| r.objective),
        "final_psnr": last.and_then(|r| r.psnr),
        "final_ssim": last.and_then(|r| r.ssim),
        "seconds": elapsed,
    });
    log::info!("reconstruction finished: {} iterations in {elapsed:.2} s", rec.trace.len());
    m.write(&out(MANIFEST_FILE))
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub estimate: PathBuf,
    /// Region `row,col,height,width` for spectral correlation; repeatable.
    #[arg(long = "region", value_parser = parse_region)]
    pub regions: Vec<Region>,
    /// JSON report path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional long-form CSV report.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn evaluate(a: &EvaluateArgs, argv: &[String]) -> Result<()> {
    let mut outputs: Vec<&Path> = vec![&a.out];
    if let Some(csv) = &a.csv {
        outputs.push(csv);
    }
    guard_inputs(&outputs, &[&a.reference, &a.estimate])?;
    let mut m = Manifest::new("evaluate", argv, a)?;
    m.input(&a.reference)?;
    m.input(&a.estimate)?;
    let reference = load_cube_array(&a.reference)?;
    let estimate = load_cube_array(&a.estimate)?;
    let report = QualityReport::evaluate(&reference, &estimate, &a.regions)?;
    ensure_parent(&a.out)?;
    fs::write(&a.out, report.to_json() + "\n")?;
    m.output(&a.out);
    if let Some(csv) = &a.csv {
        ensure_parent(csv)?;
        fs::write(csv, report.to_csv())?;
        m.output(csv);
    }
    let psnr = if report.psnr.is_exact() {
        Value::String("inf".into())
    } else {
        json!(report.psnr.mean)
    };
    m.summary = json!({ "psnr_mean": psnr, "ssim_mean": report.ssim.as_ref().map(|s| s.mean) });
    println!("{}", m.summary);
    m.write(&beside(&a.out))
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExportArgs {
    /// Cube to export as band PNGs and region spectra.
    #[arg(long)]
    pub cube: Option<PathBuf>,
    /// Region `row,col,height,width` for a spectrum CSV; repeatable.
    #[arg(long = "region", value_parser = parse_region, requires = "cube")]
    pub regions: Vec<Region>,
    /// Also write the explicit sensing matrix for these apertures.
    #[arg(long, requires = "bands")]
    pub apertures: Option<PathBuf>,
    #[arg(long)]
    pub bands: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub shift: usize,
    #[arg(long, value_parser = kebab::<Dispersion>, default_value = "rightward")]
    pub dispersion: Dispersion,
    /// Largest voxel count for which the explicit matrix is built.
    #[arg(long, default_value_t = EXPLICIT_H_CAP)]
    pub cap: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn export(a: &ExportArgs, argv: &[String]) -> Result<()> {
    if a.cube.is_none() && a.apertures.is_none() {
        return Err(Error::Parameter("nothing to export: give --cube and/or --apertures".into()));
    }
    let inputs: Vec<&Path> = a.cube.iter().chain(a.apertures.iter()).map(|p| p.as_path()).collect();
    guard_inputs(&[&a.out_dir], &inputs)?;
    let mut m = Manifest::new("export", argv, a)?;
    for p in &inputs {
        m.input(p)?;
    }
    fs::create_dir_all(&a.out_dir)?;
    if let Some(path) = &a.cube {
        let cube = HyperCube::normalized(load_cube_array(path)?.mapv(|v| v.max(0.0)))?;
        for r in &a.regions {
            r.validate(cube.rows(), cube.cols())?;
        }
        for written in export_band_images(&cube, &a.out_dir.join("bands"))? {
            m.output(&written);
        }
        for r in &a.regions {
            let file = a.out_dir.join(format!("spectrum_{}_{}_{}_{}.csv", r.row, r.col, r.height, r.width));
            export_spectrum_csv(&cube, *r, &file)?;
            m.output(&file);
        }
    }
    if let (Some(path), Some(bands)) = (&a.apertures, a.bands) {
        let apertures = load_apertures(path)?;
        let op = SensingOperator::with_dispersion(&apertures, bands, a.shift, a.dispersion)?;
        let h = op.build_explicit_h(a.cap)?;
        let file = a.out_dir.join("sensing_matrix.csv");
        h.write_csv(&file)?;
        m.output(&file);
        m.summary = json!({ "sensing_matrix_shape": h.shape(), "nnz": h.nnz() });
    }
    m.write(&a.out_dir.join(MANIFEST_FILE))
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Redirect the output file (or directory) instead of overwriting the original.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn params<T: DeserializeOwned>(m: &Manifest) -> Result<T> {
    serde_json::from_value(m.params.clone())
        .map_err(|e| Error::Format(format!("manifest params for {}: {e}", m.command)))
}

pub fn replay(a: &ReplayArgs, argv: &[String]) -> Result<()> {
    let m = Manifest::read(&a.manifest)?;
    let out = a.out.clone();
    macro_rules! rerun {
        ($ty:ty, $run:ident, $field:ident) => {{
            let mut args: $ty = params(&m)?;
            if let Some(o) = out {
                args.$field = o;
            }
            $run(&args, argv)
        }};
    }
    match m.command.as_str() {
        "make-aperture" => rerun!(MakeApertureArgs, make_aperture, out),
        "make-cube" => rerun!(MakeCubeArgs, make_cube, out),
        "simulate" => rerun!(SimulateArgs, simulate, out),
        "backproject" => rerun!(BackprojectArgs, backproject, out),
        "reconstruct" => rerun!(ReconstructArgs, reconstruct, out_dir),
        "evaluate" => rerun!(EvaluateArgs, evaluate, out),
        "export" => rerun!(ExportArgs, export, out_dir),
        other => Err(Error::Format(format!("manifest names unknown command '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enums_parse_from_kebab_case() {
        assert_eq!(kebab::<Mode>("sparsity-only"), Ok(Mode::SparsityOnly));
        assert_eq!(kebab::<DenoiserKind>("builtin-smoother"), Ok(DenoiserKind::BuiltinSmoother));
        assert_eq!(kebab::<Dispersion>("leftward"), Ok(Dispersion::Leftward));
        assert!(kebab::<SpectralTransform>("wavelet").is_err());
    }

    #[test]
    fn regions_parse_or_explain() {
        assert_eq!(parse_region("1,2,3,4"), Ok(Region::new(1, 2, 3, 4)));
        assert!(parse_region("1,2,3").unwrap_err().contains("row,col,height,width"));
    }
}
