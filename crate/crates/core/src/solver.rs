//! Split-Bregman alternating minimization for CASSI reconstruction.
//!
//! Each outer iteration runs
//!
//! 1. the closed-form x-update (elementwise Woodbury shortcut) and the
//!    measurement residual update `e += y - Hx`;
//! 2. the denoiser step producing `f` and the residual update `b += f - x`
//!    (skipped in sparsity-only mode);
//! 3. `theta = Psi^T x`, the relaxed soft-threshold update of `c` and the
//!    coefficient residual update `w += theta - c`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Array3, Array4, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiseRequest, DenoiseResponse, Denoiser};
use crate::error::{Error, Result};
use crate::forward_model::SensingOperator;
use crate::metrics;
use crate::sparse_basis::{CoeffVector, Coefficient, SparseBasis};
use crate::tensor_io::{self, Measurement, TensorKind};

/// Soft thresholding `sgn(v) * max(|v| - tau, 0)`.
pub fn soft(v: f64, tau: f64) -> f64 {
    let sign = if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    };
    sign * (v.abs() - tau).max(0.0)
}

/// Complex soft thresholding `v / |v| * max(|v| - tau, 0)`, zero at the origin.
pub fn soft_complex(v: Complex64, tau: f64) -> Complex64 {
    let mag = v.norm();
    if mag == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    v * ((mag - tau).max(0.0) / mag)
}

/// In-place soft thresholding of an array.
pub fn soft_array(values: &mut Array3<f64>, tau: f64) -> Result<()> {
    if !(tau >= 0.0) {
        return Err(Error::Parameter(format!("threshold must be >= 0, got {tau}")));
    }
    values.mapv_inplace(|v| soft(v, tau));
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Sparsity prior plus denoiser (Step 2 enabled).
    FamaSdip,
    /// Sparsity prior only; eta is treated as zero and Step 2 skipped.
    SparsityOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// l1 weight.
    pub xi1: f64,
    /// Coefficient-splitting penalty.
    pub xi: f64,
    /// Denoiser-fidelity penalty.
    pub eta: f64,
    /// Relaxation step of the c-update, in (0, 1].
    pub t_prime: f64,
    pub outer_iters: usize,
    pub inner_iters: u32,
    pub mode: Mode,
    /// Run a sparsity-only reconstruction first and start from its result.
    pub warm_start: bool,
    /// Optional early exit on `||x_new - x|| / ||x|| < tol`.
    pub early_stop: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            xi1: 10.0,
            xi: 8.0,
            eta: 10.0,
            t_prime: 0.95,
            outer_iters: 45,
            inner_iters: 100,
            mode: Mode::FamaSdip,
            warm_start: false,
            early_stop: None,
        }
    }
}

/// Tolerance used for the sparsity-only warm-start phase when no explicit
/// early-stop threshold is configured.
pub const WARM_START_TOLERANCE: f64 = 1e-5;

impl SolverConfig {
    pub fn sparsity_only() -> Self {
        Self {
            mode: Mode::SparsityOnly,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if !(self.xi1 >= 0.0 && self.xi1.is_finite()) {
            return bad(format!("xi1 must be finite and >= 0, got {}", self.xi1));
        }
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return bad(format!("xi must be finite and > 0, got {}", self.xi));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be finite and >= 0, got {}", self.eta));
        }
        if !(self.t_prime > 0.0 && self.t_prime <= 1.0) {
            return bad(format!("t_prime must lie in (0, 1], got {}", self.t_prime));
        }
        if self.inner_iters == 0 {
            return bad("inner_iters must be >= 1".into());
        }
        if let Some(tol) = self.early_stop {
            if !(tol > 0.0 && tol.is_finite()) {
                return bad(format!("early-stop tolerance must be positive, got {tol}"));
            }
        }
        Ok(())
    }

    /// Eta as used by the updates: zero in sparsity-only mode.
    pub fn effective_eta(&self) -> f64 {
        match self.mode {
            Mode::FamaSdip => self.eta,
            Mode::SparsityOnly => 0.0,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.xi1 / self.xi
    }
}

/// Split-Bregman variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: Array3<f64>,
    /// Measurement-domain residual accumulator.
    pub e: Array3<f64>,
    /// Denoiser-domain residual accumulator.
    pub b: Array3<f64>,
    /// Latest denoiser output.
    pub f: Array3<f64>,
    pub c: CoeffVector,
    pub w: CoeffVector,
    pub theta: CoeffVector,
    /// Completed outer iterations.
    pub n: usize,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    n: usize,
    complex: bool,
}

impl SolverState {
    /// Fails with a data error naming the first non-finite variable.
    pub fn check_finite(&self, during: &str) -> Result<()> {
        let arrays = [("x", &self.x), ("e", &self.e), ("b", &self.b), ("f", &self.f)];
        for (name, a) in arrays {
            if let Some(idx) = a.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite {name} at flat index {idx} after {during} (iteration {})",
                    self.n + 1
                )));
            }
        }
        for (name, c) in [("c", &self.c), ("w", &self.w), ("theta", &self.theta)] {
            if !c.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite {name} after {during} (iteration {})",
                    self.n + 1
                )));
            }
        }
        Ok(())
    }

    /// Writes every variable as a tensor file into `dir` plus `state.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let write = |name: &str, kind: TensorKind, a: &Array3<f64>| -> Result<()> {
            fs::write(dir.join(name), tensor_io::encode_tensor(kind, a)?)?;
            Ok(())
        };
        write("x.bin", TensorKind::Cube, &self.x)?;
        write("e.bin", TensorKind::Measurement, &self.e)?;
        write("b.bin", TensorKind::Cube, &self.b)?;
        write("f.bin", TensorKind::Cube, &self.f)?;
        for (name, c) in [("c", &self.c), ("w", &self.w), ("theta", &self.theta)] {
            match c {
                CoeffVector::Real(a) => write(&format!("{name}.bin"), TensorKind::Coefficients, a)?,
                CoeffVector::Complex(a) => {
                    write(&format!("{name}_re.bin"), TensorKind::Coefficients, &a.mapv(|v| v.re))?;
                    write(&format!("{name}_im.bin"), TensorKind::Coefficients, &a.mapv(|v| v.im))?;
                }
            }
        }
        let meta = StateMeta {
            n: self.n,
            complex: matches!(self.c, CoeffVector::Complex(_)),
        };
        fs::write(dir.join("state.json"), serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: StateMeta = serde_json::from_slice(&fs::read(dir.join("state.json"))?)
            .map_err(|e| Error::Format(format!("state.json: {e}")))?;
        let read = |name: &str, kind: TensorKind| -> Result<Array3<f64>> {
            let (found, a) = tensor_io::decode_tensor(&fs::read(dir.join(name))?)?;
            if found != kind {
                return Err(Error::Format(format!("{name}: expected {kind:?}, found {found:?}")));
            }
            Ok(a)
        };
        let coeffs = |name: &str| -> Result<CoeffVector> {
            if meta.complex {
                let re = read(&format!("{name}_re.bin"), TensorKind::Coefficients)?;
                let im = read(&format!("{name}_im.bin"), TensorKind::Coefficients)?;
                if re.dim() != im.dim() {
                    return Err(Error::Shape(format!("{name}: real and imaginary parts differ in shape")));
                }
                Ok(CoeffVector::Complex(Zip::from(&re).and(&im).map_collect(|&r, &i| Complex64::new(r, i))))
            } else {
                Ok(CoeffVector::Real(read(&format!("{name}.bin"), TensorKind::Coefficients)?))
            }
        };
        let state = SolverState {
            x: read("x.bin", TensorKind::Cube)?,
            e: read("e.bin", TensorKind::Measurement)?,
            b: read("b.bin", TensorKind::Cube)?,
            f: read("f.bin", TensorKind::Cube)?,
            c: coeffs("c")?,
            w: coeffs("w")?,
            theta: coeffs("theta")?,
            n: meta.n,
        };
        state.check_finite("load")?;
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    /// 1-based outer iteration index.
    pub iter: usize,
    pub objective: f64,
    /// `||y - Hx||_2`
    pub data_residual: f64,
    /// `||theta||_1`
    pub l1_norm: f64,
    /// `||f - x||_2`
    pub f_x_gap: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with header `iter,objective,data_residual,l1_norm,f_x_gap,psnr,ssim`;
    /// missing metrics are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,objective,data_residual,l1_norm,f_x_gap,psnr,ssim\n");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iter,
                r.objective,
                r.data_residual,
                r.l1_norm,
                r.f_x_gap,
                opt(r.psnr),
                opt(r.ssim)
            );
        }
        out
    }
}

/// Successful reconstruction.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Final iterate clamped to `[0, inf)`; for reporting only.
    pub x: Array3<f64>,
    pub x_raw: Array3<f64>,
    pub trace: IterationTrace,
    pub warm_start_trace: Option<IterationTrace>,
    pub state: SolverState,
    pub stopped_early: bool,
}

/// A run that aborted; carries everything needed to inspect or resume it.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub trace: IterationTrace,
    pub state: Option<SolverState>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "reconstruction aborted after {} iterations: {}", self.trace.len(), self.error)
    }
}

impl std::error::Error for RunFailure {}

fn norm(a: &Array3<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn diff_norm(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

fn shrink_update<T: Coefficient>(c: &mut Array3<T>, theta: &Array3<T>, w: &Array3<T>, t_prime: f64, tau: f64) {
    Zip::from(c).and(theta).and(w).for_each(|c, &th, &w| {
        *c = (*c * (1.0 - t_prime) + (th + w) * t_prime).shrink(tau);
    });
}

fn residual_update<T: Coefficient>(w: &mut Array3<T>, theta: &Array3<T>, c: &Array3<T>) {
    Zip::from(w).and(theta).and(c).for_each(|w, &th, &c| *w = *w + th - c);
}

/// Precomputed `(H H^T + rho I)^{-1}`.
///
/// With one snapshot `H H^T` is diagonal and the solve is an elementwise
/// division. With several snapshots it couples the `K` detector pixels at
/// the same `(row, detector col)`, so each `K x K` block is inverted.
#[derive(Debug, Clone)]
enum NormalSolve {
    /// `diag(H H^T) + rho`, measurement-shaped.
    Diagonal(Array3<f64>),
    /// Block inverses, `(rows, detector_cols, K, K)`.
    Blocks(Array4<f64>),
}

impl NormalSolve {
    fn new(op: &SensingOperator, rho: f64) -> Result<Self> {
        if op.snapshots() == 1 {
            return Ok(Self::Diagonal(op.diag_hht().mapv(|d| d + rho)));
        }
        let mut g = op.gram_blocks();
        let k = op.snapshots();
        let (rows, det, _, _) = g.dim();
        for i in 0..rows {
            for j in 0..det {
                let mut block = g.slice_mut(s![i, j, .., ..]);
                for d in 0..k {
                    block[[d, d]] += rho;
                }
                let inv = invert_spd(&block.to_owned())
                    .ok_or_else(|| Error::Data("H H^T + rho I is not positive definite".into()))?;
                block.assign(&inv);
            }
        }
        Ok(Self::Blocks(g))
    }

    /// Overwrites `r` with `(H H^T + rho I)^{-1} r`.
    fn apply(&self, r: &mut Array3<f64>) {
        match self {
            Self::Diagonal(d) => Zip::from(r).and(d).for_each(|r, &d| *r /= d),
            Self::Blocks(inv) => {
                let (k_count, rows, det) = r.dim();
                let mut buf = vec![0.0; k_count];
                for i in 0..rows {
                    for j in 0..det {
                        let block = inv.slice(s![i, j, .., ..]);
                        for (k, out) in buf.iter_mut().enumerate() {
                            *out = (0..k_count).map(|k2| block[[k, k2]] * r[[k2, i, j]]).sum();
                        }
                        for (k, v) in buf.iter().enumerate() {
                            r[[k, i, j]] = *v;
                        }
                    }
                }
            }
        }
    }
}

/// Inverse of a small symmetric positive definite matrix via Cholesky.
fn invert_spd(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|p| l[[i, p]] * l[[j, p]]).sum();
            if i == j {
                let d = a[[i, i]] - dot;
                if !(d > 0.0) {
                    return None;
                }
                l[[i, i]] = d.sqrt();
            } else {
                l[[i, j]] = (a[[i, j]] - dot) / l[[j, j]];
            }
        }
    }
    let mut inv = Array2::<f64>::zeros((n, n));
    for c in 0..n {
        // L z = e_c, then L^T x = z
        let mut z = vec![0.0; n];
        for i in 0..n {
            let rhs = if i == c { 1.0 } else { 0.0 };
            z[i] = (rhs - (0..i).map(|p| l[[i, p]] * z[p]).sum::<f64>()) / l[[i, i]];
        }
        for i in (0..n).rev() {
            let v = (z[i] - (i + 1..n).map(|p| l[[p, i]] * inv[[p, c]]).sum::<f64>()) / l[[i, i]];
            inv[[i, c]] = v;
        }
    }
    Some(inv)
}

/// One reconstruction problem: operator, basis, measurement and parameters.
pub struct Solver<'a> {
    op: &'a SensingOperator,
    basis: &'a SparseBasis,
    y: &'a Array3<f64>,
    cfg: SolverConfig,
    normal: NormalSolve,
}

impl<'a> Solver<'a> {
    pub fn new(op: &'a SensingOperator, basis: &'a SparseBasis, y: &'a Measurement, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        if basis.dim() != op.cube_dim() {
            return Err(Error::Shape(format!(
                "basis dims {:?} do not match operator cube dims {:?}",
                basis.dim(),
                op.cube_dim()
            )));
        }
        if y.data().dim() != op.measurement_dim() {
            return Err(Error::Shape(format!(
                "measurement dims {:?} do not match operator {:?}",
                y.data().dim(),
                op.measurement_dim()
            )));
        }
        let normal = NormalSolve::new(op, cfg.effective_eta() + cfg.xi)?;
        Ok(Self {
            op,
            basis,
            y: y.data(),
            cfg,
            normal,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn operator(&self) -> &SensingOperator {
        self.op
    }

    pub fn basis(&self) -> &SparseBasis {
        self.basis
    }

    pub fn measurement(&self) -> &Array3<f64> {
        self.y
    }

    /// `x = f = H^T y`, `e = b = w = 0`, `theta = c = Psi^T x`, `n = 0`.
    pub fn init_state(&self) -> Result<SolverState> {
        let x = self.op.apply_ht(self.y.view())?;
        self.init_state_from(x)
    }

    /// Same as [`Solver::init_state`] but starting from a given estimate.
    pub fn init_state_from(&self, x: Array3<f64>) -> Result<SolverState> {
        if x.dim() != self.op.cube_dim() {
            return Err(Error::Shape(format!(
                "initial estimate {:?} does not match {:?}",
                x.dim(),
                self.op.cube_dim()
            )));
        }
        let theta = self.basis.analyze(x.view())?;
        let state = SolverState {
            f: x.clone(),
            e: Array3::zeros(self.op.measurement_dim()),
            b: Array3::zeros(x.dim()),
            c: theta.clone(),
            w: theta.zeros_like(),
            theta,
            x,
            n: 0,
        };
        state.check_finite("initialization")?;
        Ok(state)
    }

    /// Closed-form x-update:
    /// `alpha = (eta (f + b) + xi Psi (c - w)) / (eta + xi)`,
    /// `x = alpha + H^T (H H^T + (eta + xi) I)^{-1} (y - H alpha + e)`,
    /// an elementwise division when there is a single snapshot.
    pub fn step1_update_x(&self, s: &mut SolverState) -> Result<()> {
        let eta = self.cfg.effective_eta();
        let rho = eta + self.cfg.xi;
        if !(rho > 0.0) {
            return Err(Error::Parameter(format!("eta + xi must be positive, got {rho}")));
        }
        let prior = self.basis.synthesize(&s.c.sub(&s.w)?)?;
        let alpha = match self.cfg.mode {
            Mode::SparsityOnly => prior,
            Mode::FamaSdip => {
                let xi = self.cfg.xi;
                let mut alpha = prior;
                Zip::from(&mut alpha)
                    .and(&s.f)
                    .and(&s.b)
                    .for_each(|a, &f, &b| *a = (eta * (f + b) + xi * *a) / rho);
                alpha
            }
        };
        let mut r = self.op.apply_h(alpha.view())?;
        Zip::from(&mut r).and(self.y).and(&s.e).for_each(|r, &y, &e| *r = y - *r + e);
        self.normal.apply(&mut r);
        let mut x = self.op.apply_ht(r.view())?;
        x += &alpha;
        s.x = x;
        Ok(())
    }

    /// `e += y - H x`.
    pub fn update_e(&self, s: &mut SolverState) -> Result<()> {
        let hx = self.op.apply_h(s.x.view())?;
        Zip::from(&mut s.e).and(self.y).and(&hx).for_each(|e, &y, &hx| *e += y - hx);
        Ok(())
    }

    /// Sends `(x, b)` to the denoiser, stores its output in `f` and applies
    /// `b += f - x`.
    pub fn step2_denoise(&self, s: &mut SolverState, session: &mut dyn Denoiser) -> Result<DenoiseResponse> {
        let request = DenoiseRequest {
            x: s.x.clone(),
            b: s.b.clone(),
            inner_iters: self.cfg.inner_iters,
            iteration: s.n as u32,
        };
        let response = session.denoise(&request)?;
        if response.f.dim() != s.x.dim() {
            return Err(Error::Shape(format!(
                "denoiser returned shape {:?}, expected {:?}",
                response.f.dim(),
                s.x.dim()
            )));
        }
        if let Some(idx) = response.f.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("denoiser output is non-finite at flat index {idx}")));
        }
        s.f.assign(&response.f);
        Zip::from(&mut s.b).and(&s.f).and(&s.x).for_each(|b, &f, &x| *b += f - x);
        Ok(response)
    }

    /// `theta = Psi^T x`; `c = Soft((1 - t') c + t' (theta + w), xi1 / xi)`;
    /// `w += theta - c`.
    pub fn step3_shrink(&self, s: &mut SolverState) -> Result<()> {
        let tau = self.cfg.threshold();
        if !(tau >= 0.0) {
            return Err(Error::Parameter(format!("xi1 / xi must be >= 0, got {tau}")));
        }
        s.theta = self.basis.analyze(s.x.view())?;
        let t = self.cfg.t_prime;
        match (&mut s.c, &s.theta, &mut s.w) {
            (CoeffVector::Real(c), CoeffVector::Real(th), CoeffVector::Real(w)) => {
                shrink_update(c, th, w, t, tau);
                residual_update(w, th, c);
            }
            (CoeffVector::Complex(c), CoeffVector::Complex(th), CoeffVector::Complex(w)) => {
                shrink_update(c, th, w, t, tau);
                residual_update(w, th, c);
            }
            _ => return Err(Error::Shape("coefficient variables disagree in scalar type".into())),
        }
        Ok(())
    }

    /// One full outer iteration. `session` is required in fama-sdip mode.
    pub fn iterate(&self, s: &mut SolverState, session: Option<&mut dyn Denoiser>) -> Result<()> {
        self.step1_update_x(s)?;
        s.check_finite("step 1")?;
        self.update_e(s)?;
        if self.cfg.mode == Mode::FamaSdip {
            let session = session
                .ok_or_else(|| Error::Parameter("fama-sdip mode requires a denoiser session".into()))?;
            self.step2_denoise(s, session)?;
            s.check_finite("step 2")?;
        }
        self.step3_shrink(s)?;
        s.check_finite("step 3")?;
        s.n += 1;
        Ok(())
    }

    /// Value of the split objective at the current state.
    pub fn objective(&self, s: &SolverState) -> Result<f64> {
        let hx = self.op.apply_h(s.x.view())?;
        let fit: f64 = Zip::from(self.y)
            .and(&hx)
            .and(&s.e)
            .fold(0.0, |acc, &y, &hx, &e| acc + (y - hx + e).powi(2));
        let split = s.c.sub(&s.theta)?.sub(&s.w)?.norm_sqr();
        let mut obj = 0.5 * fit + 0.5 * self.cfg.xi * split + self.cfg.xi1 * s.c.l1_norm();
        if self.cfg.mode == Mode::FamaSdip {
            let hf = self.op.apply_h(s.f.view())?;
            let dip_fit: f64 = Zip::from(self.y).and(&hf).fold(0.0, |acc, &y, &hf| acc + (y - hf).powi(2));
            let agree: f64 = Zip::from(&s.f)
                .and(&s.x)
                .and(&s.b)
                .fold(0.0, |acc, &f, &x, &b| acc + (f - x + b).powi(2));
            obj += 0.5 * dip_fit + 0.5 * self.cfg.eta * agree;
        }
        Ok(obj)
    }

    pub fn data_residual(&self, x: &Array3<f64>) -> Result<f64> {
        let hx = self.op.apply_h(x.view())?;
        Ok(diff_norm(self.y, &hx))
    }

    fn record(&self, s: &SolverState, ground_truth: Option<&Array3<f64>>) -> Result<IterationRecord> {
        let (psnr, ssim) = match ground_truth {
            Some(gt) => {
                let est = clamp_nonnegative(&s.x);
                let psnr = metrics::psnr(gt, &est, 1.0)?.mean;
                let (_, rows, cols) = gt.dim();
                let ssim = if rows >= metrics::SSIM_WINDOW && cols >= metrics::SSIM_WINDOW {
                    Some(metrics::ssim_cube(gt, &est, 1.0)?.mean)
                } else {
                    None
                };
                (Some(psnr), ssim)
            }
            None => (None, None),
        };
        Ok(IterationRecord {
            iter: s.n,
            objective: self.objective(s)?,
            data_residual: self.data_residual(&s.x)?,
            l1_norm: s.theta.l1_norm(),
            f_x_gap: diff_norm(&s.f, &s.x),
            psnr,
            ssim,
        })
    }

    /// Runs from `state` for up to `iters` iterations, appending to `trace`.
    /// Returns whether the early-stop criterion fired.
    fn run_loop(
        &self,
        state: &mut SolverState,
        mut session: Option<&mut dyn Denoiser>,
        ground_truth: Option<&Array3<f64>>,
        iters: usize,
        early_stop: Option<f64>,
        trace: &mut IterationTrace,
    ) -> Result<bool> {
        for _ in 0..iters {
            let previous = early_stop.map(|_| state.x.clone());
            let session = session.as_mut().map(|s| &mut **s as &mut dyn Denoiser);
            self.iterate(state, session)?;
            trace.records.push(self.record(state, ground_truth)?);
            if let (Some(tol), Some(prev)) = (early_stop, previous) {
                let base = norm(&prev);
                if base > 0.0 && diff_norm(&state.x, &prev) / base < tol {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// Full reconstruction, optionally preceded by a sparsity-only warm start.
    pub fn run(
        &self,
        session: Option<&mut dyn Denoiser>,
        ground_truth: Option<&Array3<f64>>,
    ) -> std::result::Result<Reconstruction, RunFailure> {
        let fail = |error: Error, trace: IterationTrace, state: Option<SolverState>| RunFailure { error, trace, state };
        if let Some(gt) = ground_truth {
            if gt.dim() != self.op.cube_dim() {
                let err = Error::Shape(format!("ground truth {:?} does not match {:?}", gt.dim(), self.op.cube_dim()));
                return Err(fail(err, IterationTrace::default(), None));
            }
        }
        if self.cfg.mode == Mode::FamaSdip && session.is_none() {
            let err = Error::Parameter("fama-sdip mode requires a denoiser session".into());
            return Err(fail(err, IterationTrace::default(), None));
        }

        let mut warm_start_trace = None;
        let initial = if self.cfg.warm_start && self.cfg.mode == Mode::FamaSdip {
            let warm_cfg = SolverConfig {
                mode: Mode::SparsityOnly,
                warm_start: false,
                early_stop: Some(self.cfg.early_stop.unwrap_or(WARM_START_TOLERANCE)),
                ..self.cfg.clone()
            };
            let normal = match NormalSolve::new(self.op, warm_cfg.effective_eta() + warm_cfg.xi) {
                Ok(n) => n,
                Err(e) => return Err(fail(e, IterationTrace::default(), None)),
            };
            let warm = Solver {
                op: self.op,
                basis: self.basis,
                y: self.y,
                cfg: warm_cfg,
                normal,
            };
            let mut state = match warm.init_state() {
                Ok(s) => s,
                Err(e) => return Err(fail(e, IterationTrace::default(), None)),
            };
            let mut trace = IterationTrace::default();
            if let Err(e) = warm.run_loop(&mut state, None, ground_truth, self.cfg.outer_iters, warm.cfg.early_stop, &mut trace) {
                return Err(fail(e, trace, Some(state)));
            }
            warm_start_trace = Some(trace);
            log::info!("warm start finished after {} sparsity-only iterations", state.n);
            self.init_state_from(state.x)
        } else {
            self.init_state()
        };
        let state = match initial {
            Ok(s) => s,
            Err(e) => return Err(fail(e, IterationTrace::default(), None)),
        };
        self.finish(state, session, ground_truth, self.cfg.outer_iters, warm_start_trace)
    }

    /// Continues a saved run (e.g. one that aborted) up to `outer_iters`
    /// total iterations. The trace covers only the resumed iterations.
    pub fn resume(
        &self,
        state: SolverState,
        session: Option<&mut dyn Denoiser>,
        ground_truth: Option<&Array3<f64>>,
    ) -> std::result::Result<Reconstruction, RunFailure> {
        let fail = |error: Error| RunFailure { error, trace: IterationTrace::default(), state: None };
        let cube = self.op.cube_dim();
        let shapes_ok = state.x.dim() == cube
            && state.b.dim() == cube
            && state.f.dim() == cube
            && state.e.dim() == self.op.measurement_dim();
        let zeros = self.basis.zeros();
        let coeffs_ok = [&state.c, &state.w, &state.theta].iter().all(|c| {
            c.dim() == zeros.dim() && matches!(*c, CoeffVector::Complex(_)) == matches!(zeros, CoeffVector::Complex(_))
        });
        if !(shapes_ok && coeffs_ok) {
            return Err(fail(Error::Shape("saved state does not match this problem".into())));
        }
        if let Err(e) = state.check_finite("resume") {
            return Err(fail(e));
        }
        if self.cfg.mode == Mode::FamaSdip && session.is_none() {
            return Err(fail(Error::Parameter("fama-sdip mode requires a denoiser session".into())));
        }
        if let Some(gt) = ground_truth {
            if gt.dim() != cube {
                return Err(fail(Error::Shape(format!("ground truth {:?} does not match {:?}", gt.dim(), cube))));
            }
        }
        let remaining = self.cfg.outer_iters.saturating_sub(state.n);
        self.finish(state, session, ground_truth, remaining, None)
    }

    fn finish(
        &self,
        mut state: SolverState,
        session: Option<&mut dyn Denoiser>,
        ground_truth: Option<&Array3<f64>>,
        iters: usize,
        warm_start_trace: Option<IterationTrace>,
    ) -> std::result::Result<Reconstruction, RunFailure> {
        let mut trace = IterationTrace::default();
        match self.run_loop(&mut state, session, ground_truth, iters, self.cfg.early_stop, &mut trace) {
            Ok(stopped_early) => Ok(Reconstruction {
                x: clamp_nonnegative(&state.x),
                x_raw: state.x.clone(),
                trace,
                warm_start_trace,
                state,
                stopped_early,
            }),
            Err(error) => Err(RunFailure { error, trace, state: Some(state) }),
        }
    }
}

pub fn clamp_nonnegative(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| v.max(0.0))
}
