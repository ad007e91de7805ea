mod common;

use std::fs;
use std::path::PathBuf;

use common::*;
use ndarray::Array3;
use proptest::prelude::*;
use serde_json::json;

use cassi_core::forward_model::SensingOperator;
use cassi_core::tensor_io::{
    decode_tensor, encode_tensor, generate_aperture, load_apertures, load_cube_array, load_measurement,
    make_synthetic_cube, save_apertures, save_cube, save_measurement, stack_apertures, SyntheticKind, TensorKind,
    HEADER_LEN,
};
use cassi_core::Error;

fn conformance_dir() -> PathBuf {
    data_dir().join("conformance")
}

/// Byte layout written out by hand: magic, rows, cols, planes, then values
/// plane by plane, row by row.
#[test]
fn encoding_matches_hand_built_bytes() {
    let data = Array3::from_shape_vec((2, 1, 3), vec![0.0, 0.5, 1.0, -2.0, 0.25, 3.5]).unwrap();
    let mut expected = b"CASSI-F64-CUBE\0\0".to_vec();
    expected.extend_from_slice(&[1, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0]);
    for v in [0.0f64, 0.5, 1.0, -2.0, 0.25, 3.5] {
        expected.extend_from_slice(&v.to_le_bytes());
    }
    assert_eq!(encode_tensor(TensorKind::Cube, &data).unwrap(), expected);
    assert_eq!(expected.len(), HEADER_LEN + 6 * 8);
    let golden = fs::read(data_dir().join("tensor_2x1x3.bin")).unwrap();
    assert_eq!(golden, expected);
}

#[test]
fn malformed_headers_are_format_errors() {
    let good = encode_tensor(TensorKind::Measurement, &Array3::ones((1, 2, 2))).unwrap();
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(matches!(decode_tensor(&bad_magic), Err(Error::Format(_))));
    assert!(matches!(decode_tensor(&good[..HEADER_LEN + 8]), Err(Error::Format(_))));
    let mut zero_dim = good.clone();
    zero_dim[16..20].copy_from_slice(&0u32.to_le_bytes());
    assert!(matches!(decode_tensor(&zero_dim), Err(Error::Format(_))));
    let mut trailing = good;
    trailing.push(0);
    assert!(matches!(decode_tensor(&trailing), Err(Error::Format(_))));
}

proptest! {
    #[test]
    fn tensors_round_trip_bit_identically(
        planes in 1usize..4,
        rows in 1usize..5,
        cols in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = rng(seed);
        let bits: Vec<u64> = (0..planes * rows * cols).map(|_| rand::Rng::random(&mut rng)).collect();
        let data = Array3::from_shape_vec((planes, rows, cols), bits.iter().map(|b| f64::from_bits(*b)).collect()).unwrap();
        for kind in [TensorKind::Cube, TensorKind::Measurement, TensorKind::Aperture, TensorKind::Coefficients] {
            let (back_kind, back) = decode_tensor(&encode_tensor(kind, &data).unwrap()).unwrap();
            prop_assert_eq!(back_kind, kind);
            let back_bits: Vec<u64> = back.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(&back_bits, &bits);
        }
    }
}

struct Vectors {
    cube: cassi_core::tensor_io::HyperCube,
    apertures: Vec<cassi_core::tensor_io::CodedAperture>,
    operator: SensingOperator,
}

fn conformance_vectors() -> Vectors {
    let cube = make_synthetic_cube(8, 8, 4, SyntheticKind::GaussianBlobs, 11).unwrap();
    let apertures = vec![generate_aperture(8, 8, 0.5, 21).unwrap(), generate_aperture(8, 8, 0.5, 22).unwrap()];
    let operator = SensingOperator::new(&apertures, 4, 1).unwrap();
    Vectors { cube, apertures, operator }
}

fn write_vectors(dir: &std::path::Path) {
    let v = conformance_vectors();
    fs::create_dir_all(dir).unwrap();
    save_cube(&dir.join("cube.bin"), &v.cube).unwrap();
    save_apertures(&dir.join("apertures.bin"), &v.apertures).unwrap();
    save_measurement(&dir.join("measurement.bin"), &v.operator.measure(&v.cube).unwrap()).unwrap();
    let manifest = json!({
        "rows": 8, "cols": 8, "bands": 4, "snapshots": 2, "shift": 1, "dispersion": "rightward",
        "cube": "cube.bin", "apertures": "apertures.bin", "measurement": "measurement.bin",
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap() + "\n").unwrap();
}

#[test]
fn conformance_vectors_are_reproduced_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    write_vectors(tmp.path());
    for name in ["cube.bin", "apertures.bin", "measurement.bin", "manifest.json"] {
        let golden = fs::read(conformance_dir().join(name))
            .unwrap_or_else(|e| panic!("{name}: {e}; run the ignored bless test"));
        assert!(fs::read(tmp.path().join(name)).unwrap() == golden, "{name} differs");
    }
}

#[test]
fn conformance_measurement_is_h_applied_to_cube() {
    let dir = conformance_dir();
    let cube = load_cube_array(&dir.join("cube.bin")).unwrap();
    let apertures = load_apertures(&dir.join("apertures.bin")).unwrap();
    let y = load_measurement(&dir.join("measurement.bin")).unwrap();
    let op = SensingOperator::new(&apertures, 4, 1).unwrap();
    assert_eq!(op.apertures(), &stack_apertures(&apertures).unwrap());
    let h = dense_h(&op);
    let flat = ndarray::Array1::from(cube.iter().copied().collect::<Vec<_>>());
    let expected = h.dot(&flat);
    assert!(rel_err(y.data().as_slice().unwrap(), expected.as_slice().unwrap()) < 1e-12);
}

#[test]
#[ignore = "rewrites the golden tensor files"]
fn bless_tensor_files() {
    write_vectors(&conformance_dir());
    let data = Array3::from_shape_vec((2, 1, 3), vec![0.0, 0.5, 1.0, -2.0, 0.25, 3.5]).unwrap();
    fs::write(data_dir().join("tensor_2x1x3.bin"), encode_tensor(TensorKind::Cube, &data).unwrap()).unwrap();
}
