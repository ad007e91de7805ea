//! Step-2 plug-in boundary.
//!
//! A [`DenoiserSession`] is either one of the built-in deterministic
//! denoisers or an external worker process speaking the framed protocol in
//! [`protocol`]. The solver only sees the [`Denoiser`] trait.

pub mod protocol;

use std::io::{BufReader, BufWriter};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use ndarray::{Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_model::SensingOperator;
use protocol::{
    bye_frame, read_frame, write_frame, Frame, InitAck, InitMessage, StepMessage, StepResponse, PROTOCOL_VERSION,
};

/// Inputs of one denoising step.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseRequest {
    pub x: Array3<f64>,
    pub b: Array3<f64>,
    pub inner_iters: u32,
    /// Outer iteration index `n`.
    pub iteration: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseResponse {
    pub f: Array3<f64>,
    /// Measurement loss at the end of the step.
    pub loss_y: f64,
    /// Reference loss at the end of the step.
    pub loss_x: f64,
}

pub trait Denoiser {
    fn denoise(&mut self, request: &DenoiseRequest) -> Result<DenoiseResponse>;
}

/// Mean absolute measurement misfit `mean |y - H f|`.
pub fn measurement_loss(op: &SensingOperator, y: &Array3<f64>, f: &Array3<f64>) -> Result<f64> {
    let hf = op.apply_h(f.view())?;
    Ok(Zip::from(y).and(&hf).fold(0.0, |acc, &y, &hf| acc + (y - hf).abs()) / y.len() as f64)
}

/// Mean absolute reference misfit `mean |f - x + b|`.
pub fn reference_loss(f: &Array3<f64>, x: &Array3<f64>, b: &Array3<f64>) -> f64 {
    Zip::from(f).and(x).and(b).fold(0.0, |acc, &f, &x, &b| acc + (f - x + b).abs()) / f.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiserKind {
    BuiltinIdentity,
    BuiltinSmoother,
    ExternalWorker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BuiltinKind {
    Identity,
    Smoother,
}

/// Deterministic in-process denoisers.
///
/// * identity: `f = x - b`, the exact minimizer of the reference term;
/// * smoother: separable `[0.25, 0.5, 0.25]` spatial smoothing of `x - b`
///   with half-sample symmetric boundaries (mass preserving), identity along
///   the spectrum.
#[derive(Debug, Clone)]
pub struct BuiltinDenoiser {
    kind: BuiltinKind,
    op: SensingOperator,
    y: Array3<f64>,
}

pub fn builtin_identity(op: &SensingOperator, y: &Array3<f64>) -> BuiltinDenoiser {
    BuiltinDenoiser::identity(op, y)
}

impl BuiltinDenoiser {
    pub fn identity(op: &SensingOperator, y: &Array3<f64>) -> Self {
        Self {
            kind: BuiltinKind::Identity,
            op: op.clone(),
            y: y.clone(),
        }
    }

    pub fn smoother(op: &SensingOperator, y: &Array3<f64>) -> Self {
        Self {
            kind: BuiltinKind::Smoother,
            op: op.clone(),
            y: y.clone(),
        }
    }
}

/// `[0.25, 0.5, 0.25]` along one axis with symmetric (edge-repeating) ends.
fn smooth_axis(data: &Array3<f64>, axis: Axis) -> Array3<f64> {
    let mut out = data.clone();
    for (src, mut dst) in data.lanes(axis).into_iter().zip(out.lanes_mut(axis)) {
        let n = src.len();
        for i in 0..n {
            let left = src[i.saturating_sub(1)];
            let right = src[(i + 1).min(n - 1)];
            dst[i] = 0.25 * left + 0.5 * src[i] + 0.25 * right;
        }
    }
    out
}

pub fn smooth_spatial(data: &Array3<f64>) -> Array3<f64> {
    smooth_axis(&smooth_axis(data, Axis(2)), Axis(1))
}

impl Denoiser for BuiltinDenoiser {
    fn denoise(&mut self, request: &DenoiseRequest) -> Result<DenoiseResponse> {
        if request.x.dim() != self.op.cube_dim() || request.b.dim() != self.op.cube_dim() {
            return Err(Error::Shape(format!(
                "denoise request shapes {:?}/{:?}, expected {:?}",
                request.x.dim(),
                request.b.dim(),
                self.op.cube_dim()
            )));
        }
        let target = &request.x - &request.b;
        let f = match self.kind {
            BuiltinKind::Identity => target,
            BuiltinKind::Smoother => smooth_spatial(&target),
        };
        Ok(DenoiseResponse {
            loss_y: measurement_loss(&self.op, &self.y, &f)?,
            loss_x: reference_loss(&f, &request.x, &request.b),
            f,
        })
    }
}

/// Everything a denoiser needs to know about the reconstruction problem.
#[derive(Debug, Clone)]
pub struct ProblemDescriptor {
    pub operator: SensingOperator,
    /// Measurement, `(snapshots, rows, detector_cols)`.
    pub measurement: Array3<f64>,
    pub eta: f64,
    pub seed: u64,
}

impl ProblemDescriptor {
    pub fn init_message(&self) -> InitMessage {
        let op = &self.operator;
        InitMessage {
            version: PROTOCOL_VERSION,
            rows: op.rows(),
            cols: op.cols(),
            bands: op.bands(),
            snapshots: op.snapshots(),
            shift: op.shift(),
            dispersion: op.dispersion(),
            eta: self.eta,
            seed: self.seed,
            apertures: op.apertures().clone(),
            measurement: self.measurement.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionOptions {
    pub handshake_timeout: Duration,
    pub step_timeout: Duration,
    /// Time the worker gets to exit after `BYE` before it is killed.
    pub shutdown_grace: Duration,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            handshake_timeout: Duration::from_secs(60),
            step_timeout: Duration::from_secs(600),
            shutdown_grace: Duration::from_secs(5),
        }
    }
}

struct WorkerProcess {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    frames: Receiver<Result<Frame>>,
    exit_status: Option<ExitStatus>,
}

impl WorkerProcess {
    fn launch(command: &[String]) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Parameter("empty worker command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Session(format!("failed to launch worker '{program}': {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name("denoiser-worker-reader".into())
            .spawn(move || {
                let mut reader = BufReader::new(stdout);
                loop {
                    match read_frame(&mut reader) {
                        Ok(Some(frame)) => {
                            if tx.send(Ok(frame)).is_err() {
                                return;
                            }
                        }
                        Ok(None) => {
                            let _ = tx.send(Err(Error::Session("worker closed its output stream".into())));
                            return;
                        }
                        Err(e) => {
                            let _ = tx.send(Err(e));
                            return;
                        }
                    }
                }
            })
            .map_err(Error::Io)?;
        Ok(Self {
            child,
            stdin: Some(BufWriter::new(stdin)),
            frames: rx,
            exit_status: None,
        })
    }

    fn send(&mut self, frame: &Frame) -> Result<()> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| Error::Session("worker input already closed".into()))?;
        write_frame(stdin, frame).map_err(|e| Error::Session(format!("writing to worker failed: {e}")))
    }

    fn receive(&mut self, timeout: Duration, what: &str) -> Result<Frame> {
        match self.frames.recv_timeout(timeout) {
            Ok(result) => result,
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                Err(Error::Timeout(format!("no {what} from worker within {timeout:?}")))
            }
            Err(RecvTimeoutError::Disconnected) => Err(Error::Session("worker reader stopped".into())),
        }
    }

    fn kill(&mut self) {
        if let Err(e) = self.child.kill() {
            log::debug!("killing worker: {e}");
        }
        self.stdin = None;
        self.exit_status = self.child.wait().ok();
    }

    fn shutdown(&mut self, grace: Duration) {
        if self.exit_status.is_some() {
            return;
        }
        if self.stdin.is_some() {
            if let Err(e) = self.send(&bye_frame()) {
                log::debug!("sending BYE: {e}");
            }
        }
        self.stdin = None;
        let deadline = Instant::now() + grace;
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => {
                    if !status.success() {
                        log::warn!("worker exited with {status}");
                    }
                    self.exit_status = Some(status);
                    return;
                }
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                Ok(None) => {
                    log::warn!("worker did not exit within {grace:?} of BYE; terminating");
                    self.kill();
                    return;
                }
                Err(e) => {
                    log::warn!("waiting for worker: {e}");
                    self.kill();
                    return;
                }
            }
        }
    }
}

enum Backend {
    Builtin(BuiltinDenoiser),
    External(Box<WorkerProcess>),
}

/// Handle to an open Step-2 denoiser.
pub struct DenoiserSession {
    kind: DenoiserKind,
    backend: Backend,
    cube_dim: (usize, usize, usize),
    options: SessionOptions,
    next_request: u64,
    closed: bool,
}

/// Opens a session. External workers receive `INIT` and must acknowledge
/// with the same protocol version within the handshake timeout.
pub fn open_session(
    kind: DenoiserKind,
    problem: &ProblemDescriptor,
    worker_command: Option<&[String]>,
    options: SessionOptions,
) -> Result<DenoiserSession> {
    let op = &problem.operator;
    if problem.measurement.dim() != op.measurement_dim() {
        return Err(Error::Shape(format!(
            "measurement {:?} does not match operator {:?}",
            problem.measurement.dim(),
            op.measurement_dim()
        )));
    }
    let backend = match kind {
        DenoiserKind::BuiltinIdentity => Backend::Builtin(BuiltinDenoiser::identity(op, &problem.measurement)),
        DenoiserKind::BuiltinSmoother => Backend::Builtin(BuiltinDenoiser::smoother(op, &problem.measurement)),
        DenoiserKind::ExternalWorker => {
            let command = worker_command
                .filter(|c| !c.is_empty())
                .ok_or_else(|| Error::Parameter("external worker requires a worker command".into()))?;
            let mut worker = WorkerProcess::launch(command)?;
            let handshake = (|| {
                worker.send(&problem.init_message().to_frame()?)?;
                let frame = worker.receive(options.handshake_timeout, "INIT acknowledgement")?;
                let ack = InitAck::from_frame(&frame)?;
                if ack.version != PROTOCOL_VERSION {
                    return Err(Error::VersionMismatch {
                        client: PROTOCOL_VERSION,
                        worker: ack.version,
                    });
                }
                Ok(())
            })();
            if let Err(e) = handshake {
                worker.shutdown(options.shutdown_grace);
                return Err(e);
            }
            Backend::External(Box::new(worker))
        }
    };
    Ok(DenoiserSession {
        kind,
        backend,
        cube_dim: op.cube_dim(),
        options,
        next_request: 1,
        closed: false,
    })
}

impl DenoiserSession {
    pub fn kind(&self) -> DenoiserKind {
        self.kind
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Exit status of an external worker once it has terminated.
    pub fn worker_exit_status(&self) -> Option<ExitStatus> {
        match &self.backend {
            Backend::External(w) => w.exit_status,
            Backend::Builtin(_) => None,
        }
    }

    /// Sends `BYE` and reaps the worker. Calling it again is a no-op.
    pub fn close(&mut self) {
        if self.closed {
            return;
        }
        self.closed = true;
        if let Backend::External(worker) = &mut self.backend {
            worker.shutdown(self.options.shutdown_grace);
        }
    }
}

impl Denoiser for DenoiserSession {
    fn denoise(&mut self, request: &DenoiseRequest) -> Result<DenoiseResponse> {
        if self.closed {
            return Err(Error::Session("denoiser session is closed".into()));
        }
        if request.x.dim() != self.cube_dim || request.b.dim() != self.cube_dim {
            return Err(Error::Shape(format!(
                "denoise request shapes {:?}/{:?}, expected {:?}",
                request.x.dim(),
                request.b.dim(),
                self.cube_dim
            )));
        }
        let response = match &mut self.backend {
            Backend::Builtin(b) => b.denoise(request)?,
            Backend::External(worker) => {
                let id = self.next_request;
                self.next_request += 1;
                let msg = StepMessage {
                    request_id: id,
                    iteration: request.iteration,
                    inner_iters: request.inner_iters,
                    x: request.x.clone(),
                    b: request.b.clone(),
                };
                worker.send(&msg.to_frame()?)?;
                let frame = worker.receive(self.options.step_timeout, "STEP response")?;
                let resp = StepResponse::from_frame(&frame)?;
                if resp.request_id != id {
                    return Err(Error::Session(format!(
                        "response carries request id {}, outstanding request is {id}",
                        resp.request_id
                    )));
                }
                DenoiseResponse {
                    f: resp.f,
                    loss_y: resp.loss_y,
                    loss_x: resp.loss_x,
                }
            }
        };
        if response.f.dim() != self.cube_dim {
            return Err(Error::Shape(format!(
                "denoiser returned shape {:?}, expected {:?}",
                response.f.dim(),
                self.cube_dim
            )));
        }
        if response.f.iter().any(|v| !v.is_finite()) || !response.loss_y.is_finite() || !response.loss_x.is_finite() {
            return Err(Error::Data("denoiser returned a non-finite payload".into()));
        }
        Ok(response)
    }
}

impl Drop for DenoiserSession {
    fn drop(&mut self) {
        self.close();
    }
}
