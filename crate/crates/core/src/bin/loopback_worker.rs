//! Minimal denoiser worker used to exercise the external-worker path.
//!
//! Answers `INIT` with its protocol version and every `STEP` with `f = x`,
//! reporting mean absolute losses. Exits 0 on `BYE`.
//!
//! Flags (for fault injection in tests):
//!   --report-version N   acknowledge INIT with version N
//!   --stall-after N      stop answering after N STEP responses
//!   --exit-on-step       exit with status 0 on the first STEP without replying
//!   --fail-on-step       answer every STEP with an ERR frame
//!   --transcript PATH    record every frame: b'>' + bytes received, b'<' + bytes sent

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use ndarray::Array3;

use cassi_core::denoiser::protocol::{
    error_frame, read_frame, write_frame, Frame, InitAck, InitMessage, StepMessage, StepResponse, Tag,
    PROTOCOL_VERSION,
};
use cassi_core::denoiser::{measurement_loss, reference_loss};
use cassi_core::forward_model::SensingOperator;

#[derive(Default)]
struct Options {
    version: Option<u32>,
    stall_after: Option<u64>,
    exit_on_step: bool,
    fail_on_step: bool,
    transcript: Option<String>,
}

fn parse_args() -> Result<Options, String> {
    let mut opts = Options::default();
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--report-version" => {
                opts.version = Some(args.next().and_then(|v| v.parse().ok()).ok_or("--report-version needs a u32")?);
            }
            "--stall-after" => {
                opts.stall_after = Some(args.next().and_then(|v| v.parse().ok()).ok_or("--stall-after needs a count")?);
            }
            "--exit-on-step" => opts.exit_on_step = true,
            "--fail-on-step" => opts.fail_on_step = true,
            "--transcript" => opts.transcript = Some(args.next().ok_or("--transcript needs a path")?),
            other => return Err(format!("unknown argument {other}")),
        }
    }
    Ok(opts)
}

struct Worker {
    opts: Options,
    out: BufWriter<io::Stdout>,
    transcript: Option<BufWriter<File>>,
    problem: Option<(SensingOperator, Array3<f64>)>,
    answered: u64,
}

impl Worker {
    fn record(&mut self, direction: u8, frame: &Frame) -> cassi_core::Result<()> {
        if let Some(t) = self.transcript.as_mut() {
            t.write_all(&[direction])?;
            t.write_all(&frame.encode())?;
            t.flush()?;
        }
        Ok(())
    }

    fn send(&mut self, frame: &Frame) -> cassi_core::Result<()> {
        self.record(b'<', frame)?;
        write_frame(&mut self.out, frame)
    }

    /// Returns `false` when the worker should exit.
    fn handle(&mut self, frame: &Frame) -> cassi_core::Result<bool> {
        self.record(b'>', frame)?;
        match frame.tag {
            Tag::Init => {
                let init = InitMessage::from_frame(frame)?;
                let op = SensingOperator::from_stacked(init.apertures, init.bands, init.shift, init.dispersion)?;
                self.problem = Some((op, init.measurement));
                let version = self.opts.version.unwrap_or(PROTOCOL_VERSION);
                self.send(&InitAck { version }.to_frame())?;
            }
            Tag::Step => {
                if self.opts.exit_on_step {
                    return Ok(false);
                }
                if self.opts.stall_after.is_some_and(|n| self.answered >= n) {
                    loop {
                        thread::sleep(Duration::from_secs(3600));
                    }
                }
                if self.opts.fail_on_step {
                    return self.send(&error_frame("loopback worker asked to fail")).map(|_| true);
                }
                let step = StepMessage::from_frame(frame)?;
                let Some((op, y)) = self.problem.as_ref() else {
                    return self.send(&error_frame("STEP before INIT")).map(|_| true);
                };
                let f = step.x.clone();
                let response = StepResponse {
                    request_id: step.request_id,
                    loss_y: measurement_loss(op, y, &f)?,
                    loss_x: reference_loss(&f, &step.x, &step.b),
                    f,
                };
                self.send(&response.to_frame()?)?;
                self.answered += 1;
            }
            Tag::Bye => return Ok(false),
            Tag::Resp | Tag::Err => self.send(&error_frame("unexpected frame from client"))?,
        }
        Ok(true)
    }
}

fn run(opts: Options) -> cassi_core::Result<()> {
    let transcript = match &opts.transcript {
        Some(path) => Some(BufWriter::new(File::create(path)?)),
        None => None,
    };
    let mut worker = Worker {
        opts,
        out: BufWriter::new(io::stdout()),
        transcript,
        problem: None,
        answered: 0,
    };
    let mut input = BufReader::new(io::stdin().lock());
    while let Some(frame) = read_frame(&mut input)? {
        if !worker.handle(&frame)? {
            break;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let opts = match parse_args() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("loopback worker: {e}");
            return ExitCode::from(2);
        }
    };
    match run(opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("loopback worker: {e}");
            ExitCode::from(1)
        }
    }
}
