//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p cassi-core --test acceptance`.

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use ndarray::{Array1, Array3, Zip};
use num_complex::Complex64;
use rand::Rng;

use cassi_core::denoiser::{open_session, DenoiserKind, ProblemDescriptor, SessionOptions};
use cassi_core::forward_model::{SensingOperator, EXPLICIT_H_CAP};
use cassi_core::metrics::psnr;
use cassi_core::solver::{clamp_nonnegative, soft, soft_complex, Mode, Solver, SolverConfig};
use cassi_core::sparse_basis::{CoeffVector, SparseBasis, SpectralTransform};
use cassi_core::tensor_io::{
    decode_tensor, encode_tensor, generate_aperture, make_synthetic_cube, Measurement, SyntheticKind, TensorKind,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn forward_model_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for m in [4, 6, 8] {
        for n in [4, 6, 8] {
            for l in [2, 3, 4] {
                for k in [1, 2, 3] {
                    for s in [1, 2] {
                        cases += 1;
                        let mut rng = rng(cases);
                        let op = random_operator(m, n, l, k, s, &mut rng);
                        let h = dense_h(&op);
                        let x = random_array(op.cube_dim(), &mut rng);
                        let y = random_array(op.measurement_dim(), &mut rng);
                        let hx = op.apply_h(x.view()).map_err(|e| e.to_string())?;
                        let hty = op.apply_ht(y.view()).map_err(|e| e.to_string())?;
                        let xs = Array1::from(x.iter().copied().collect::<Vec<_>>());
                        let ys = Array1::from(y.iter().copied().collect::<Vec<_>>());
                        let diag: Vec<f64> = h.rows().into_iter().map(|r| r.dot(&r)).collect();
                        worst = worst
                            .max(rel_err(hx.as_slice().unwrap(), h.dot(&xs).as_slice().unwrap()))
                            .max(rel_err(hty.as_slice().unwrap(), h.t().dot(&ys).as_slice().unwrap()))
                            .max(rel_err(op.diag_hht().as_slice().unwrap(), &diag));
                    }
                }
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max relative error {worst:e} over {cases} cases"))?;
    let op = random_operator(6, 6, 3, 2, 1, &mut rng(0));
    let shape = op.build_explicit_h(EXPLICIT_H_CAP).map_err(|e| e.to_string())?.shape();
    ensure(shape == (96, 108), || format!("explicit H for 6x6x3, K=2, s=1 is {shape:?}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{cases} cases, max rel err {worst:.1e}, 6x6x3/K=2 H is 96x108, {elapsed:.2?}"))
}

fn adjoint_identity() -> Outcome {
    let mut rng = rng(101);
    let mut worst = 0.0f64;
    let pairs = 128;
    for t in 0..pairs {
        let dims = [(4, 4, 2, 1, 1), (6, 5, 3, 2, 1), (8, 8, 4, 3, 2), (7, 6, 5, 2, 2)][t % 4];
        let op = random_operator(dims.0, dims.1, dims.2, dims.3, dims.4, &mut rng);
        let x = random_array(op.cube_dim(), &mut rng);
        let y = random_array(op.measurement_dim(), &mut rng);
        let lhs = dot(op.apply_h(x.view()).unwrap().as_slice().unwrap(), y.as_slice().unwrap());
        let rhs = dot(x.as_slice().unwrap(), op.apply_ht(y.view()).unwrap().as_slice().unwrap());
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    ensure(worst <= 1e-12, || format!("max relative gap {worst:e}"))?;
    Ok(format!("{pairs} pairs, max rel gap {worst:.1e}"))
}

fn basis_suite() -> Outcome {
    let mut rng = rng(202);
    let mut worst_rt = 0.0f64;
    let mut worst_parseval = 0.0f64;
    for t in 0..50 {
        let rows = [8, 16, 32, 12, 6][t % 5];
        let cols = [8, 16, 8, 20, 10][t % 5];
        let bands = 1 + t % 7;
        let spectral = if t % 3 == 0 { SpectralTransform::Dft } else { SpectralTransform::Dct };
        let basis = SparseBasis::new(rows, cols, bands, None, spectral).map_err(|e| e.to_string())?;
        let x = random_array((bands, rows, cols), &mut rng);
        let theta = basis.analyze(x.view()).unwrap();
        let back = basis.synthesize(&theta).unwrap();
        let xn = norm(x.as_slice().unwrap());
        worst_rt = worst_rt.max(rel_err(back.as_slice().unwrap(), x.as_slice().unwrap()));
        worst_parseval = worst_parseval.max((theta.norm() - xn).abs() / xn);
    }
    ensure(worst_rt <= 1e-10, || format!("round trip rel err {worst_rt:e}"))?;
    ensure(worst_parseval <= 1e-10, || format!("Parseval rel err {worst_parseval:e}"))?;

    let basis = SparseBasis::new(8, 8, 2, None, SpectralTransform::Dct).unwrap();
    let psi = basis.build_dense_basis().map_err(|e| e.to_string())?;
    let n = psi.nrows;
    let mut worst_gram = 0.0f64;
    for a in 0..n {
        for b in 0..n {
            let g: f64 = (0..n).map(|r| psi.get(r, a) * psi.get(r, b)).sum();
            worst_gram = worst_gram.max((g - if a == b { 1.0 } else { 0.0 }).abs());
        }
    }
    ensure(worst_gram <= 1e-10, || format!("Psi^T Psi deviates from I by {worst_gram:e}"))?;
    Ok(format!(
        "50 cubes: round trip {worst_rt:.1e}, Parseval {worst_parseval:.1e}; 8x8x2 Gram {worst_gram:.1e}"
    ))
}

fn step1_closed_form() -> Outcome {
    let shapes = [(8, 8, 2, 1, 1), (8, 8, 3, 1, 2), (4, 8, 4, 2, 1), (6, 6, 3, 2, 1), (8, 4, 2, 3, 2)];
    let mut worst = 0.0f64;
    let mut count = 0;
    for t in 0..20u64 {
        let mode = if t % 2 == 0 { Mode::FamaSdip } else { Mode::SparsityOnly };
        worst = worst.max(step1_dense_error(shapes[t as usize % shapes.len()], mode, 300 + t));
        count += 1;
    }
    ensure(worst <= 1e-8, || format!("max relative error {worst:e}"))?;
    Ok(format!("{count} instances, max rel err {worst:.1e}"))
}

fn soft_law() -> Outcome {
    let sgn = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
    let oracle = |v: f64, tau: f64| sgn(v) * (v.abs() - tau).max(0.0);
    let mut samples = 0usize;
    for tau in [1.25f64, 0.0, 0.3, 7.0] {
        let n = 250_000;
        let span = 5.0 * tau.max(1.0);
        let mut check = |v: f64| -> Result<(), String> {
            samples += 1;
            let (got, want) = (soft(v, tau), oracle(v, tau));
            ensure(got == want, || format!("soft({v}, {tau}) = {got}, expected {want}"))
        };
        for i in 0..n {
            check(-span + 2.0 * span * i as f64 / (n - 1) as f64)?;
        }
        check(tau)?;
        check(-tau)?;
        check(0.0)?;
    }
    ensure(soft(1.25, 1.25) == 0.0 && soft(-1.25, 1.25) == 0.0, || "threshold points not zero".into())?;

    let mut rng = rng(404);
    for _ in 0..100_000 {
        let tau: f64 = rng.random_range(0.0..3.0);
        let (a, b): (f64, f64) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        // each side of the comparison carries a few roundings of operands up to this size
        let slack = 4.0 * f64::EPSILON * (a.abs() + b.abs() + tau);
        let gap = (soft(a, tau) - soft(b, tau)).abs();
        ensure(gap <= (a - b).abs() + slack, || format!("Lipschitz fails at {a}, {b}"))?;
        let (za, zb) = (
            Complex64::new(a, rng.random_range(-10.0..10.0)),
            Complex64::new(b, rng.random_range(-10.0..10.0)),
        );
        let gap = (soft_complex(za, tau) - soft_complex(zb, tau)).norm();
        let slack = 16.0 * f64::EPSILON * (za.norm() + zb.norm() + tau);
        ensure(gap <= (za - zb).norm() + slack, || format!("complex Lipschitz fails at {za}, {zb}"))?;
    }
    Ok(format!("{samples} grid samples exact, 100000 Lipschitz pairs (real and complex)"))
}

fn desk_problem() -> (SensingOperator, SparseBasis, Measurement, Array3<f64>) {
    let cube = make_synthetic_cube(32, 32, 8, SyntheticKind::GaussianBlobs, 2024).unwrap();
    let op = SensingOperator::new(&[generate_aperture(32, 32, 0.5, 2025).unwrap()], 8, 1).unwrap();
    let basis = SparseBasis::new(32, 32, 8, None, SpectralTransform::Dct).unwrap();
    let y = op.measure(&cube).unwrap();
    (op, basis, y, cube.into_data())
}

fn bregman_identities() -> Outcome {
    let (op, basis, y, _) = desk_problem();
    let cfg = SolverConfig::sparsity_only();
    let iters = cfg.outer_iters;
    let solver = Solver::new(&op, &basis, &y, cfg).map_err(|e| e.to_string())?;
    let mut s = solver.init_state().unwrap();
    let real = |c: &CoeffVector| c.as_real().cloned().ok_or_else(|| "complex coefficients".to_string());
    for n in 0..iters {
        let e_prev = s.e.clone();
        let w_prev = real(&s.w)?;
        let b_prev = s.b.clone();
        solver.step1_update_x(&mut s).unwrap();
        let residual = y.data() - &op.apply_h(s.x.view()).unwrap();
        solver.update_e(&mut s).unwrap();
        ensure(s.e == &e_prev + &residual, || format!("e recurrence broken at iteration {n}"))?;
        solver.step3_shrink(&mut s).unwrap();
        let (theta, c) = (real(&s.theta)?, real(&s.c)?);
        let mut w_expected = w_prev;
        Zip::from(&mut w_expected).and(&theta).and(&c).for_each(|w, &t, &c| *w = *w + t - c);
        ensure(real(&s.w)? == w_expected, || format!("w recurrence broken at iteration {n}"))?;
        ensure(s.b == b_prev, || format!("b changed without a denoiser at iteration {n}"))?;
        s.n += 1;
    }
    let run = solver.run(None, None).map_err(|f| f.error.to_string())?;
    ensure(run.x_raw == s.x, || "run() disagrees with manually stepped iterations".into())?;

    // b recurrence with a denoiser in the loop
    let cfg = SolverConfig::default();
    let solver = Solver::new(&op, &basis, &y, cfg).unwrap();
    let problem = ProblemDescriptor { operator: op.clone(), measurement: y.data().clone(), eta: 10.0, seed: 0 };
    let mut den = open_session(DenoiserKind::BuiltinSmoother, &problem, None, SessionOptions::default()).unwrap();
    let mut s = solver.init_state().unwrap();
    for n in 0..iters {
        solver.step1_update_x(&mut s).unwrap();
        solver.update_e(&mut s).unwrap();
        let b_prev = s.b.clone();
        solver.step2_denoise(&mut s, &mut den).unwrap();
        let mut b_expected = b_prev;
        Zip::from(&mut b_expected).and(&s.f).and(&s.x).for_each(|b, &f, &x| *b += f - x);
        ensure(s.b == b_expected, || format!("b recurrence broken at iteration {n}"))?;
        solver.step3_shrink(&mut s).unwrap();
        s.n += 1;
    }
    Ok(format!("e, w exact over {iters} sparsity-only iterations, b exact over {iters} smoother iterations"))
}

const DESK_INIT_PSNR: f64 = 0.2675964063980902;
const DESK_FINAL_PSNR: f64 = 17.871367756665485;

fn desk_scale_reconstruction() -> Outcome {
    let (op, basis, y, truth) = desk_problem();
    let start = Instant::now();
    let solver = Solver::new(&op, &basis, &y, SolverConfig::sparsity_only()).unwrap();
    let rec = solver.run(None, None).map_err(|f| f.error.to_string())?;
    let elapsed = start.elapsed();
    let init = clamp_nonnegative(&op.apply_ht(y.data().view()).unwrap());
    let p0 = psnr(&truth, &init, 1.0).unwrap().mean;
    let p1 = psnr(&truth, &rec.x, 1.0).unwrap().mean;
    ensure(rec.trace.len() == 45, || format!("ran {} iterations", rec.trace.len()))?;
    ensure(p1 - p0 >= 5.0, || format!("gain {:.2} dB ({p0:.2} -> {p1:.2})", p1 - p0))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    ensure((p0 - DESK_INIT_PSNR).abs() < 1e-6 && (p1 - DESK_FINAL_PSNR).abs() < 1e-6, || {
        format!("PSNR {p0} -> {p1} differs from recorded {DESK_INIT_PSNR} -> {DESK_FINAL_PSNR}")
    })?;
    Ok(format!("PSNR {p0:.2} -> {p1:.2} dB (+{:.2}), {elapsed:.2?}", p1 - p0))
}

fn identity_denoiser_keeps_b_zero() -> Outcome {
    let (op, basis, y, _) = desk_problem();
    let cfg = SolverConfig::default();
    let iters = cfg.outer_iters;
    let solver = Solver::new(&op, &basis, &y, cfg).unwrap();
    let problem = ProblemDescriptor { operator: op.clone(), measurement: y.data().clone(), eta: 10.0, seed: 0 };
    let mut den = open_session(DenoiserKind::BuiltinIdentity, &problem, None, SessionOptions::default()).unwrap();
    let mut s = solver.init_state().unwrap();
    for n in 0..iters {
        solver.step1_update_x(&mut s).unwrap();
        solver.update_e(&mut s).unwrap();
        solver.step2_denoise(&mut s, &mut den).unwrap();
        ensure(s.b.iter().all(|v| *v == 0.0), || format!("b nonzero after step 2 of iteration {n}"))?;
        solver.step3_shrink(&mut s).unwrap();
        s.n += 1;
    }
    let rec = solver.run(Some(&mut den), None).map_err(|f| f.error.to_string())?;
    ensure(rec.state.b.iter().all(|v| *v == 0.0), || "b nonzero at the end of run()".into())?;
    ensure(rec.x_raw == s.x, || "run() disagrees with manually stepped iterations".into())?;
    Ok(format!("b == 0 exactly after each of {iters} denoising steps"))
}

fn protocol_conformance() -> Outcome {
    let golden = fs::read(data_dir().join(TRANSCRIPT)).map_err(|e| format!("golden transcript: {e}"))?;
    let recorded = record_transcript();
    ensure(recorded == golden, || format!("transcript of {} bytes differs from golden {}", recorded.len(), golden.len()))?;

    let mut rng = rng(909);
    for kind in [TensorKind::Cube, TensorKind::Measurement, TensorKind::Aperture, TensorKind::Coefficients] {
        for _ in 0..50 {
            let dim = (rng.random_range(1..5), rng.random_range(1..9), rng.random_range(1..9));
            let data = Array3::from_shape_simple_fn(dim, || f64::from_bits(rng.random()));
            let bytes = encode_tensor(kind, &data).unwrap();
            let (k, back) = decode_tensor(&bytes).map_err(|e| e.to_string())?;
            ensure(k == kind && back.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()), || {
                format!("{kind:?} tensor did not round-trip bit-identically")
            })?;
        }
    }
    for name in ["cube.bin", "apertures.bin", "measurement.bin"] {
        let bytes = fs::read(data_dir().join("conformance").join(name)).map_err(|e| e.to_string())?;
        let (kind, data) = decode_tensor(&bytes).map_err(|e| e.to_string())?;
        ensure(encode_tensor(kind, &data).unwrap() == bytes, || format!("{name} did not re-encode identically"))?;
    }
    Ok(format!("{}-byte transcript byte-exact, 200 random tensors and 3 conformance files bit-identical", golden.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("forward-model oracle suite", forward_model_oracle),
        ("adjoint identity", adjoint_identity),
        ("basis suite", basis_suite),
        ("closed-form x-update vs dense solve", step1_closed_form),
        ("soft-shrink law", soft_law),
        ("Bregman recurrences", bregman_identities),
        ("desk-scale reconstruction", desk_scale_reconstruction),
        ("builtin-identity keeps b at zero", identity_denoiser_keeps_b_zero),
        ("protocol conformance", protocol_conformance),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(reason)) => {
                failed += 1;
                println!("FAIL {name}: {reason}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
