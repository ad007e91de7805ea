#![allow(dead_code)]

use std::fs;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cassi_core::denoiser::{open_session, DenoiseRequest, Denoiser, DenoiserKind, ProblemDescriptor, SessionOptions};
use cassi_core::forward_model::{Dispersion, SensingOperator};
use cassi_core::solver::{Mode, Solver, SolverConfig};
use cassi_core::sparse_basis::{CoeffVector, SparseBasis, SpectralTransform};
use cassi_core::tensor_io::{generate_aperture, make_synthetic_cube, CodedAperture, Measurement, SyntheticKind};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_array(dim: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<f64> {
    Array3::from_shape_simple_fn(dim, || rng.random_range(-1.0..1.0))
}

pub fn random_apertures(k: usize, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<CodedAperture> {
    (0..k)
        .map(|_| CodedAperture::new(Array2::from_shape_simple_fn((rows, cols), || rng.random_range(0.0..1.0))).unwrap())
        .collect()
}

pub fn random_operator(
    rows: usize,
    cols: usize,
    bands: usize,
    k: usize,
    shift: usize,
    rng: &mut ChaCha8Rng,
) -> SensingOperator {
    SensingOperator::new(&random_apertures(k, rows, cols, rng), bands, shift).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `||a - b|| / max(||b||, tiny)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b).max(f64::MIN_POSITIVE)
}

/// Dense `H` written straight from the measurement equation, one voxel at a
/// time: voxel `(l, i, j)` lands on detector column `j + offset(l)` of every
/// snapshot `k`, weighted by the aperture entry at `(i, j)`.
pub fn dense_h(op: &SensingOperator) -> Array2<f64> {
    let (bands, rows, cols) = op.cube_dim();
    let (k_count, _, det) = op.measurement_dim();
    let shift = op.shift();
    let mut h = Array2::zeros((k_count * rows * det, bands * rows * cols));
    for l in 0..bands {
        let off = match op.dispersion() {
            Dispersion::Rightward => l * shift,
            Dispersion::Leftward => (bands - 1 - l) * shift,
        };
        for i in 0..rows {
            for j in 0..cols {
                let col = (l * rows + i) * cols + j;
                for k in 0..k_count {
                    let row = (k * rows + i) * det + j + off;
                    h[[row, col]] += op.apertures()[[k, i, j]];
                }
            }
        }
    }
    h
}

pub fn loopback_worker() -> String {
    env!("CARGO_BIN_EXE_cassi-loopback-worker").to_string()
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data")
}

/// Solves `(H^T H + (eta + xi) I) x = H^T (y + e) + eta (f + b) + xi Psi (c - w)`
/// densely and compares with the closed-form update.
pub fn step1_dense_error(dims: (usize, usize, usize, usize, usize), mode: Mode, seed: u64) -> f64 {
    let (rows, cols, bands, k, shift) = dims;
    let mut rng = rng(seed);
    let op = random_operator(rows, cols, bands, k, shift, &mut rng);
    let basis = SparseBasis::new(rows, cols, bands, None, SpectralTransform::Dct).unwrap();
    let y = Measurement::new(random_array(op.measurement_dim(), &mut rng).mapv(f64::abs)).unwrap();
    let cfg = SolverConfig {
        xi: 0.5 + 10.0 * rand::Rng::random::<f64>(&mut rng),
        eta: 0.5 + 10.0 * rand::Rng::random::<f64>(&mut rng),
        mode,
        ..SolverConfig::default()
    };
    let solver = Solver::new(&op, &basis, &y, cfg.clone()).unwrap();
    let mut state = solver.init_state().unwrap();
    state.e = random_array(op.measurement_dim(), &mut rng);
    state.f = random_array(op.cube_dim(), &mut rng);
    state.b = random_array(op.cube_dim(), &mut rng);
    state.c = CoeffVector::Real(random_array(op.cube_dim(), &mut rng));
    state.w = CoeffVector::Real(random_array(op.cube_dim(), &mut rng));

    let h = dense_h(&op);
    let (m, n) = h.dim();
    let h = DMatrix::from_row_slice(m, n, h.as_slice().unwrap());
    let psi = basis.build_dense_basis().unwrap();
    let psi = DMatrix::from_row_slice(psi.nrows, psi.ncols, &psi.data);
    let vec = |a: &ndarray::Array3<f64>| DVector::from_iterator(a.len(), a.iter().copied());

    let eta = match mode {
        Mode::FamaSdip => cfg.eta,
        Mode::SparsityOnly => 0.0,
    };
    let rho = eta + cfg.xi;
    let c_minus_w = vec(state.c.as_real().unwrap()) - vec(state.w.as_real().unwrap());
    let rhs = h.transpose() * (vec(y.data()) + vec(&state.e))
        + (vec(&state.f) + vec(&state.b)) * eta
        + &psi * c_minus_w * cfg.xi;
    let a = h.transpose() * &h + DMatrix::identity(n, n) * rho;
    let expected = a.cholesky().expect("normal matrix is SPD").solve(&rhs);

    solver.step1_update_x(&mut state).unwrap();
    let got = vec(&state.x);
    (got - &expected).norm() / expected.norm()
}

pub const TRANSCRIPT: &str = "golden_transcript.bin";

pub fn transcript_problem() -> ProblemDescriptor {
    let apertures = [generate_aperture(4, 6, 0.5, 1).unwrap(), generate_aperture(4, 6, 0.5, 2).unwrap()];
    let operator = SensingOperator::new(&apertures, 3, 1).unwrap();
    let cube = make_synthetic_cube(4, 6, 3, SyntheticKind::CheckerSpectral, 0).unwrap();
    ProblemDescriptor {
        measurement: operator.apply_h(cube.data().view()).unwrap(),
        operator,
        eta: 10.0,
        seed: 7,
    }
}

pub fn transcript_requests() -> Vec<DenoiseRequest> {
    let x0 = make_synthetic_cube(4, 6, 3, SyntheticKind::GradientRamp, 0).unwrap().into_data();
    (0..2u32)
        .map(|n| DenoiseRequest {
            x: x0.mapv(|v| v * (1.0 + n as f64) - 0.125),
            b: x0.mapv(|v| 0.25 * v - 0.0625 * n as f64),
            inner_iters: 100,
            iteration: n,
        })
        .collect()
}

/// Runs the reference session against the loopback worker and returns the
/// worker-side transcript.
pub fn record_transcript() -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("transcript.bin");
    let cmd = vec![loopback_worker(), "--transcript".into(), path.display().to_string()];
    let mut session = open_session(
        DenoiserKind::ExternalWorker,
        &transcript_problem(),
        Some(&cmd),
        SessionOptions::default(),
    )
    .unwrap();
    for req in transcript_requests() {
        session.denoise(&req).unwrap();
    }
    session.close();
    assert!(session.worker_exit_status().unwrap().success());
    fs::read(path).unwrap()
}

/// Splits a transcript into `(direction, frame bytes)` records.
pub fn split_transcript(bytes: &[u8]) -> Vec<(u8, Vec<u8>)> {
    let mut out = Vec::new();
    let mut rest = bytes;
    while let Some((&dir, tail)) = rest.split_first() {
        let len = u64::from_le_bytes(tail[4..12].try_into().unwrap()) as usize;
        out.push((dir, tail[..12 + len].to_vec()));
        rest = &tail[12 + len..];
    }
    out
}
