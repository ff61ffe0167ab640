use super::*;
use proptest::prelude::*;
use tempfile::tempdir;

#[test]
fn p5_single_white_pixel() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("w.pgm");
    std::fs::write(&path, b"P5\n1 1\n255\n\xff").unwrap();
    let (shape, x) = load_image(&path).unwrap();
    assert_eq!(shape, ImageShape::gray(1, 1));
    assert_eq!(x.as_slice(), &[1.0]);
}

#[test]
fn header_comments_and_planar_layout() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("c.ppm");
    let mut bytes = b"P6 # rgb\n2 # width\n1\n255\n".to_vec();
    bytes.extend_from_slice(&[10, 20, 30, 40, 50, 60]);
    std::fs::write(&path, &bytes).unwrap();
    let (shape, x) = load_image(&path).unwrap();
    assert_eq!((shape.height, shape.width, shape.channels), (1, 2, 3));
    let bytes_back: Vec<u8> = x.iter().map(|v| to_byte(*v)).collect();
    assert_eq!(bytes_back, vec![10, 40, 20, 50, 30, 60]);
}

#[test]
fn rounding_is_half_away_from_zero_after_clamp() {
    assert_eq!(to_byte(0.5), 128);
    assert_eq!(to_byte(-0.2), 0);
    assert_eq!(to_byte(1.7), 255);
    assert_eq!(to_byte(1.5 / 255.0), 2);
    assert_eq!(to_byte(0.49 / 255.0), 0);
}

#[test]
fn image_round_trip_is_byte_exact() {
    let dir = tempdir().unwrap();
    for channels in [1, 3] {
        let shape = ImageShape::new(5, 7, channels).unwrap();
        let bytes: Vec<u8> = (0..shape.len()).map(|i| (i * 37 % 256) as u8).collect();
        let x = DVector::from_iterator(shape.len(), bytes.iter().map(|&b| f64::from(b) / 255.0));
        let a = dir.path().join(format!("a{channels}"));
        let b = dir.path().join(format!("b{channels}"));
        save_image(&a, shape, &x).unwrap();
        let (s2, x2) = load_image(&a).unwrap();
        assert_eq!(s2, shape);
        assert_eq!(x2, x);
        save_image(&b, s2, &x2).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}

#[test]
fn image_errors() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("bad");
    let check = |bytes: &[u8]| {
        std::fs::write(&path, bytes).unwrap();
        load_image(&path).unwrap_err()
    };
    assert!(matches!(check(b"P5\n2 2\n255\n\x01\x02"), DmpsError::TruncatedPayload { expected: 4, found: 2, .. }));
    assert!(matches!(check(b"P5\n1 1\n65535\n\x00\x00"), DmpsError::UnsupportedMaxval(65535)));
    assert!(matches!(check(b"P3\n1 1\n255\n0"), DmpsError::MalformedHeader { .. }));
    assert!(matches!(check(b"P5\n1\n"), DmpsError::MalformedHeader { .. }));
    assert!(matches!(check(b"P5\n0 1\n255\n"), DmpsError::MalformedHeader { .. }));
    assert!(matches!(check(b"P5\n1 1\n255"), DmpsError::MalformedHeader { .. }));
    let missing = load_image(dir.path().join("nope.pgm")).unwrap_err();
    assert!(missing.is_io());
    assert!(save_image(&path, ImageShape::gray(1, 2), &DVector::zeros(3)).is_err());
}

#[test]
fn matrix_round_trip_is_bit_exact() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("m.mat");
    let m = DMatrix::from_fn(3, 5, |i, j| (i as f64 + 1.0).sqrt() * (j as f64 - 2.3).powi(3) * 1e-7 + 1.0 / 3.0);
    save_matrix(&path, &m).unwrap();
    let back = load_matrix(&path).unwrap();
    assert_eq!(back.shape(), (3, 5));
    for (a, b) in m.iter().zip(back.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"DMPSMAT1");
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
    assert_eq!(f64::from_le_bytes(bytes[32..40].try_into().unwrap()).to_bits(), m[(0, 1)].to_bits());
}

#[test]
fn matrix_errors() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("m.mat");
    std::fs::write(&path, b"DMPSMAT2\0\0\0\0\0\0\0\0").unwrap();
    assert!(matches!(load_matrix(&path).unwrap_err(), DmpsError::BadMagic(_)));

    let mut bytes = MATRIX_MAGIC.to_vec();
    bytes.extend_from_slice(&1u64.to_le_bytes());
    bytes.extend_from_slice(&2u64.to_le_bytes());
    bytes.extend_from_slice(&1.0f64.to_le_bytes());
    bytes.extend_from_slice(&f64::NAN.to_le_bytes());
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_matrix(&path).unwrap_err(), DmpsError::NonFinite(_)));

    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_matrix(&path).unwrap_err(), DmpsError::SizeMismatch { .. }));

    let mut huge = MATRIX_MAGIC.to_vec();
    huge.extend_from_slice(&u64::MAX.to_le_bytes());
    huge.extend_from_slice(&u64::MAX.to_le_bytes());
    std::fs::write(&path, &huge).unwrap();
    assert!(matches!(load_matrix(&path).unwrap_err(), DmpsError::SizeMismatch { .. }));

    let nan = DMatrix::from_element(1, 1, f64::INFINITY);
    assert!(save_matrix(&path, &nan).is_err());
}

#[test]
fn csv_header_only_and_round_trip() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_csv(&path, &["a", "b"], &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\r\n");

    let value = 0.1f64 + 0.2;
    let rows = vec![vec![CsvValue::from(value), CsvValue::from("x, \"quoted\""), CsvValue::from(7usize)]];
    write_csv(&path, &["v", "s", "n"], &rows).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let record = reader.records().next().unwrap().unwrap();
    assert_eq!(record[0].parse::<f64>().unwrap().to_bits(), value.to_bits());
    assert_eq!(&record[1], "x, \"quoted\"");
    assert_eq!(&record[2], "7");
}

#[test]
fn csv_rejects_ragged_rows_without_writing() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let rows = vec![vec![CsvValue::from(1.0), CsvValue::from(2.0)], vec![CsvValue::from(1.0)]];
    let err = write_csv(&path, &["a", "b"], &rows).unwrap_err();
    assert!(matches!(err, DmpsError::CsvWidth { row: 1, expected: 2, got: 1 }));
    assert!(!path.exists());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matrix_files_round_trip(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.mat");
        let m = DMatrix::from_fn(rows, cols, |i, j| {
            let bits = seed.wrapping_mul(6364136223846793005).wrapping_add((i * 7 + j) as u64);
            f64::from_bits(bits >> 2 | 0x3ff0_0000_0000_0000) * if (i + j) % 2 == 0 { 1.0 } else { -1e-200 }
        });
        save_matrix(&path, &m).unwrap();
        let back = load_matrix(&path).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        for (a, b) in m.iter().zip(back.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn csv_floats_parse_back_exactly(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        let text = CsvValue::Float(v).render();
        prop_assert_eq!(text.parse::<f64>().unwrap().to_bits(), v.to_bits());
    }
}
