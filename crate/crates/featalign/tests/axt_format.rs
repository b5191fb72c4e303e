use std::fs;

use featalign::axt::{read_tensor, write_tensor, AxtReader, AxtWriter, Dtype};
use featalign::Error;
use featalign_core::Matrix;
use proptest::prelude::*;

fn sample(rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |i, j| (i * cols + j) as f64 * 0.5 - 3.0)
}

#[test]
fn f64_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.axt");
    let m = Matrix::from_fn(7, 3, |i, j| ((i as f64 + 1.0) / (j as f64 + 3.0)).sin());
    write_tensor(&p, &m, Dtype::F64).unwrap();
    assert_eq!(read_tensor(&p).unwrap(), m);
}

#[test]
fn f32_round_trip_narrows_values() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.axt");
    let m = Matrix::from_fn(4, 4, |i, j| (i as f64 + 0.1) * (j as f64 - 0.3));
    write_tensor(&p, &m, Dtype::F32).unwrap();
    let back = read_tensor(&p).unwrap();
    for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
        assert_eq!(*b, *a as f32 as f64);
    }
}

#[test]
fn empty_tensor_keeps_its_column_count() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.axt");
    write_tensor(&p, &Matrix::zeros(0, 5), Dtype::F32).unwrap();
    let r = AxtReader::open(&p).unwrap();
    assert_eq!((r.rows(), r.cols()), (0, 5));
    assert_eq!(r.read_all().unwrap().shape(), (0, 5));
    assert_eq!(r.blocks(3).unwrap().count(), 0);
}

#[test]
fn identical_inputs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let m = sample(9, 4);
    let (p, q) = (dir.path().join("p.axt"), dir.path().join("q.axt"));
    write_tensor(&p, &m, Dtype::F32).unwrap();
    // streamed in uneven pieces
    let mut w = AxtWriter::create(&q, Dtype::F32, 9, 4).unwrap();
    w.write_rows(&m.row_block(0, 2)).unwrap();
    w.write_rows(&m.row_block(2, 9)).unwrap();
    w.finish().unwrap();
    assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
}

#[test]
fn blocks_cover_rows_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("b.axt");
    let m = sample(10, 3);
    write_tensor(&p, &m, Dtype::F64).unwrap();
    let blocks: Vec<(usize, Matrix)> = AxtReader::open(&p)
        .unwrap()
        .blocks(4)
        .unwrap()
        .map(Result::unwrap)
        .collect();
    let sizes: Vec<(usize, usize)> = blocks.iter().map(|(o, b)| (*o, b.rows())).collect();
    assert_eq!(sizes, vec![(0, 4), (4, 4), (8, 2)]);
    for (o, b) in &blocks {
        assert_eq!(*b, m.row_block(*o, o + b.rows()));
    }
}

#[test]
fn read_columns_picks_listed_order() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.axt");
    let m = sample(6, 5);
    write_tensor(&p, &m, Dtype::F64).unwrap();
    let r = AxtReader::open(&p).unwrap();
    assert_eq!(r.read_columns(&[4, 0, 4], 4).unwrap(), m.select_cols(&[4, 0, 4]));
    assert!(r.read_columns(&[5], 4).is_err());
}

#[test]
fn writer_rejects_wrong_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.axt");
    let mut w = AxtWriter::create(&p, Dtype::F32, 3, 2).unwrap();
    w.write_rows(&sample(2, 2)).unwrap();
    assert!(w.finish().is_err());
    let mut w = AxtWriter::create(&p, Dtype::F32, 1, 2).unwrap();
    assert!(w.write_rows(&sample(2, 2)).is_err());
    let mut w = AxtWriter::create(&p, Dtype::F32, 2, 2).unwrap();
    assert!(w.write_rows(&sample(2, 3)).is_err());
}

fn written(dir: &std::path::Path) -> (std::path::PathBuf, Vec<u8>) {
    let p = dir.join("t.axt");
    write_tensor(&p, &sample(3, 2), Dtype::F32).unwrap();
    let bytes = fs::read(&p).unwrap();
    (p, bytes)
}

fn expect_format_error(p: &std::path::Path) {
    match AxtReader::open(p) {
        Err(Error::Format { .. }) => {}
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn bad_magic_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (p, mut bytes) = written(dir.path());
    bytes[0] = b'X';
    fs::write(&p, bytes).unwrap();
    expect_format_error(&p);
}

#[test]
fn truncated_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (p, bytes) = written(dir.path());
    fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    expect_format_error(&p);
    fs::write(&p, &bytes[..6]).unwrap();
    expect_format_error(&p);
}

#[test]
fn trailing_bytes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (p, mut bytes) = written(dir.path());
    bytes.extend_from_slice(&[0, 0, 0, 0]);
    fs::write(&p, bytes).unwrap();
    expect_format_error(&p);
}

fn with_header(json: &str, payload: usize) -> Vec<u8> {
    let mut out = b"AXT1".to_vec();
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    out.extend(std::iter::repeat_n(0u8, payload));
    out
}

#[test]
fn malformed_headers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.axt");
    for (json, payload) in [
        (r#"{"dtype":"f32","shape":[2,2]"#, 16),
        (r#"{"dtype":"f16","shape":[2,2],"byte_order":"little"}"#, 8),
        (r#"{"dtype":"f32","shape":[2,2],"byte_order":"big"}"#, 16),
        (r#"{"dtype":"f32","shape":[2,2,1],"byte_order":"little"}"#, 16),
    ] {
        fs::write(&p, with_header(json, payload)).unwrap();
        expect_format_error(&p);
    }
    let mut huge = b"AXT1".to_vec();
    huge.extend_from_slice(&u32::MAX.to_le_bytes());
    fs::write(&p, huge).unwrap();
    expect_format_error(&p);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn any_matrix_round_trips(rows in 0usize..12, cols in 1usize..6, block in 1usize..8, seed in 0u64..1000) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.axt");
        let m = Matrix::from_fn(rows, cols, |i, j| ((seed + (i * 31 + j * 7) as u64) as f64).cos() * 1e3);
        write_tensor(&p, &m, Dtype::F64).unwrap();
        let r = AxtReader::open(&p).unwrap();
        let mut stacked = Matrix::zeros(0, cols);
        for b in r.blocks(block).unwrap() {
            stacked.vstack(&b.unwrap().1).unwrap();
        }
        prop_assert_eq!(stacked, m);
    }
}
