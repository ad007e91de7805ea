//! Framed binary protocol spoken with external denoiser workers over the
//! worker's stdin/stdout.
//!
//! Frame: 4-byte ASCII tag, `u64` little-endian payload length, payload.
//! Tags are `INIT`, `STEP`, `RESP`, `BYE ` and `ERR ` (the last two padded
//! with a space). Tensors are embedded in the `tensor_io` binary format and
//! every scalar is little-endian.
//!
//! | frame          | payload                                                                          |
//! |----------------|----------------------------------------------------------------------------------|
//! | `INIT`         | u32 version, u32 rows, u32 cols, u32 bands, u32 snapshots, u32 shift, u32 dispersion (0 right, 1 left), f64 eta, u64 seed, aperture tensor, measurement tensor |
//! | `RESP` (init)  | u64 request id (always 0), u32 version                                           |
//! | `STEP`         | u64 request id, u32 iteration, u32 inner iterations, cube tensor x, cube tensor b |
//! | `RESP` (step)  | u64 request id, f64 loss_y, f64 loss_x, cube tensor f                            |
//! | `BYE `         | empty                                                                            |
//! | `ERR `         | UTF-8 message                                                                    |

use std::io::{self, Read, Write};

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::forward_model::Dispersion;
use crate::tensor_io::{read_tensor, write_tensor, TensorKind};

pub const PROTOCOL_VERSION: u32 = 1;

/// Upper bound on a frame payload (16 GiB).
pub const MAX_PAYLOAD: u64 = 1 << 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Init,
    Step,
    Resp,
    Bye,
    Err,
}

impl Tag {
    pub fn bytes(self) -> [u8; 4] {
        match self {
            Tag::Init => *b"INIT",
            Tag::Step => *b"STEP",
            Tag::Resp => *b"RESP",
            Tag::Bye => *b"BYE ",
            Tag::Err => *b"ERR ",
        }
    }

    pub fn from_bytes(b: [u8; 4]) -> Option<Self> {
        match &b {
            b"INIT" => Some(Tag::Init),
            b"STEP" => Some(Tag::Step),
            b"RESP" => Some(Tag::Resp),
            b"BYE " => Some(Tag::Bye),
            b"ERR " => Some(Tag::Err),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub tag: Tag,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(tag: Tag, payload: Vec<u8>) -> Self {
        Self { tag, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.payload.len());
        out.extend_from_slice(&self.tag.bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream before any byte of
/// a new frame.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>> {
    let mut head = [0u8; 12];
    let mut filled = 0;
    while filled < head.len() {
        match r.read(&mut head[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(Error::Format("stream ended inside a frame header".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::Io(e)),
        }
    }
    let tag_bytes: [u8; 4] = head[..4].try_into().expect("4 bytes");
    let tag = Tag::from_bytes(tag_bytes)
        .ok_or_else(|| Error::Format(format!("unknown frame tag {:?}", String::from_utf8_lossy(&tag_bytes))))?;
    let len = u64::from_le_bytes(head[4..].try_into().expect("8 bytes"));
    if len > MAX_PAYLOAD {
        return Err(Error::Format(format!("frame payload of {len} bytes exceeds limit")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format("stream ended inside a frame payload".into()),
        _ => Error::Io(e),
    })?;
    Ok(Some(Frame { tag, payload }))
}

/// Cursor over a payload with typed little-endian reads.
struct PayloadReader<'a> {
    rest: &'a [u8],
}

impl<'a> PayloadReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { rest: bytes }
    }

    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        if self.rest.len() < N {
            return Err(Error::Format(format!("payload truncated while reading {what}")));
        }
        let (head, tail) = self.rest.split_at(N);
        self.rest = tail;
        Ok(head.try_into().expect("split at N"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take::<4>(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take::<8>(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take::<8>(what)?))
    }

    fn tensor(&mut self, expected: TensorKind, what: &str) -> Result<Array3<f64>> {
        let (kind, data) = read_tensor(&mut self.rest)?;
        if kind != expected {
            return Err(Error::Format(format!("{what}: expected {expected:?} tensor, found {kind:?}")));
        }
        Ok(data)
    }

    fn finish(self, what: &str) -> Result<()> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes in {what} payload", self.rest.len())))
        }
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Size(format!("{what} = {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitMessage {
    pub version: u32,
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub snapshots: usize,
    pub shift: usize,
    pub dispersion: Dispersion,
    pub eta: f64,
    pub seed: u64,
    /// `(snapshots, rows, cols)`
    pub apertures: Array3<f64>,
    /// `(snapshots, rows, detector_cols)`
    pub measurement: Array3<f64>,
}

impl InitMessage {
    pub fn to_frame(&self) -> Result<Frame> {
        let mut p = Vec::new();
        p.extend_from_slice(&self.version.to_le_bytes());
        push_u32(&mut p, self.rows, "rows")?;
        push_u32(&mut p, self.cols, "cols")?;
        push_u32(&mut p, self.bands, "bands")?;
        push_u32(&mut p, self.snapshots, "snapshots")?;
        push_u32(&mut p, self.shift, "shift")?;
        let disp: u32 = match self.dispersion {
            Dispersion::Rightward => 0,
            Dispersion::Leftward => 1,
        };
        p.extend_from_slice(&disp.to_le_bytes());
        p.extend_from_slice(&self.eta.to_le_bytes());
        p.extend_from_slice(&self.seed.to_le_bytes());
        write_tensor(&mut p, TensorKind::Aperture, &self.apertures)?;
        write_tensor(&mut p, TensorKind::Measurement, &self.measurement)?;
        Ok(Frame::new(Tag::Init, p))
    }

    pub fn from_frame(frame: &Frame) -> Result<Self> {
        expect_tag(frame, Tag::Init)?;
        let mut r = PayloadReader::new(&frame.payload);
        let version = r.u32("version")?;
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let bands = r.u32("bands")? as usize;
        let snapshots = r.u32("snapshots")? as usize;
        let shift = r.u32("shift")? as usize;
        let dispersion = match r.u32("dispersion")? {
            0 => Dispersion::Rightward,
            1 => Dispersion::Leftward,
            other => return Err(Error::Format(format!("unknown dispersion code {other}"))),
        };
        let eta = r.f64("eta")?;
        let seed = r.u64("seed")?;
        let apertures = r.tensor(TensorKind::Aperture, "apertures")?;
        let measurement = r.tensor(TensorKind::Measurement, "measurement")?;
        r.finish("INIT")?;
        Ok(Self {
            version,
            rows,
            cols,
            bands,
            snapshots,
            shift,
            dispersion,
            eta,
            seed,
            apertures,
            measurement,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitAck {
    pub version: u32,
}

impl InitAck {
    pub fn to_frame(&self) -> Frame {
        let mut p = Vec::with_capacity(12);
        p.extend_from_slice(&0u64.to_le_bytes());
        p.extend_from_slice(&self.version.to_le_bytes());
        Frame::new(Tag::Resp, p)
    }

    pub fn from_frame(frame: &Frame) -> Result<Self> {
        expect_tag(frame, Tag::Resp)?;
        let mut r = PayloadReader::new(&frame.payload);
        let id = r.u64("request id")?;
        if id != 0 {
            return Err(Error::Format(format!("INIT acknowledgement carries request id {id}, expected 0")));
        }
        let version = r.u32("version")?;
        r.finish("INIT acknowledgement")?;
        Ok(Self { version })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMessage {
    pub request_id: u64,
    pub iteration: u32,
    pub inner_iters: u32,
    pub x: Array3<f64>,
    pub b: Array3<f64>,
}

impl StepMessage {
    pub fn to_frame(&self) -> Result<Frame> {
        let mut p = Vec::new();
        p.extend_from_slice(&self.request_id.to_le_bytes());
        p.extend_from_slice(&self.iteration.to_le_bytes());
        p.extend_from_slice(&self.inner_iters.to_le_bytes());
        write_tensor(&mut p, TensorKind::Cube, &self.x)?;
        write_tensor(&mut p, TensorKind::Cube, &self.b)?;
        Ok(Frame::new(Tag::Step, p))
    }

    pub fn from_frame(frame: &Frame) -> Result<Self> {
        expect_tag(frame, Tag::Step)?;
        let mut r = PayloadReader::new(&frame.payload);
        let msg = Self {
            request_id: r.u64("request id")?,
            iteration: r.u32("iteration")?,
            inner_iters: r.u32("inner iterations")?,
            x: r.tensor(TensorKind::Cube, "x")?,
            b: r.tensor(TensorKind::Cube, "b")?,
        };
        r.finish("STEP")?;
        Ok(msg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResponse {
    pub request_id: u64,
    pub loss_y: f64,
    pub loss_x: f64,
    pub f: Array3<f64>,
}

impl StepResponse {
    pub fn to_frame(&self) -> Result<Frame> {
        let mut p = Vec::new();
        p.extend_from_slice(&self.request_id.to_le_bytes());
        p.extend_from_slice(&self.loss_y.to_le_bytes());
        p.extend_from_slice(&self.loss_x.to_le_bytes());
        write_tensor(&mut p, TensorKind::Cube, &self.f)?;
        Ok(Frame::new(Tag::Resp, p))
    }

    pub fn from_frame(frame: &Frame) -> Result<Self> {
        expect_tag(frame, Tag::Resp)?;
        let mut r = PayloadReader::new(&frame.payload);
        let msg = Self {
            request_id: r.u64("request id")?,
            loss_y: r.f64("loss_y")?,
            loss_x: r.f64("loss_x")?,
            f: r.tensor(TensorKind::Cube, "f")?,
        };
        r.finish("RESP")?;
        Ok(msg)
    }
}

pub fn bye_frame() -> Frame {
    Frame::new(Tag::Bye, Vec::new())
}

pub fn error_frame(message: &str) -> Frame {
    Frame::new(Tag::Err, message.as_bytes().to_vec())
}

fn expect_tag(frame: &Frame, tag: Tag) -> Result<()> {
    if frame.tag == Tag::Err {
        return Err(Error::Session(format!(
            "worker reported: {}",
            String::from_utf8_lossy(&frame.payload)
        )));
    }
    if frame.tag != tag {
        return Err(Error::Format(format!("expected {tag:?} frame, got {:?}", frame.tag)));
    }
    Ok(())
}
