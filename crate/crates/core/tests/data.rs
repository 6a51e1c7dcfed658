use diffmark::data::{encode_idx, load_idx_dataset, make_synthetic_dataset, parse_idx, SyntheticKind, BLOB_FRACTION};
use diffmark::Image;

#[test]
fn blob_foreground_fraction_by_direct_count() {
    let imgs = make_synthetic_dataset::<f64>(64, 16, SyntheticKind::Blobs, 11).unwrap();
    assert_eq!(imgs.len(), 64);
    for img in &imgs {
        let fg = img.data().iter().filter(|&&v| v == 1.0).count();
        let bg = img.data().iter().filter(|&&v| v == -1.0).count();
        assert_eq!(fg + bg, 256);
        let frac = fg as f64 / 256.0;
        assert!((BLOB_FRACTION.0..=BLOB_FRACTION.1).contains(&frac), "{frac}");
    }
}

#[test]
fn single_image_corpus() {
    let imgs = make_synthetic_dataset::<f32>(1, 16, SyntheticKind::DigitsLike, 0).unwrap();
    assert_eq!(imgs.len(), 1);
    assert_eq!(imgs[0].shape(), (1, 16, 16));
}

/// Reads the first image's bytes without the library parser.
fn first_image_checksum(bytes: &[u8]) -> u64 {
    let rows = u32::from_be_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let cols = u32::from_be_bytes([bytes[12], bytes[13], bytes[14], bytes[15]]) as usize;
    bytes[16..16 + rows * cols]
        .iter()
        .enumerate()
        .map(|(i, &b)| (i as u64 + 1) * b as u64)
        .sum()
}

#[test]
fn idx_file_first_image_matches_independent_parse() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = vec![0u8, 0, 8, 3, 0, 0, 0, 5, 0, 0, 0, 28, 0, 0, 0, 28];
    bytes.extend((0..5 * 784).map(|i| ((i * 7919) % 256) as u8));
    let path = dir.path().join("images-idx3-ubyte");
    std::fs::write(&path, &bytes).unwrap();
    let imgs: Vec<Image<f64>> = load_idx_dataset(&path).unwrap();
    assert_eq!(imgs.len(), 5);
    let checksum: u64 = imgs[0]
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| (i as u64 + 1) * ((v + 1.0) * 127.5).round() as u64)
        .sum();
    assert_eq!(checksum, first_image_checksum(&bytes));
}

#[test]
fn idx_encoding_round_trips_synthetic_sets() {
    for kind in [SyntheticKind::Blobs, SyntheticKind::DigitsLike] {
        let imgs = make_synthetic_dataset::<f64>(6, 12, kind, 3).unwrap();
        assert_eq!(parse_idx::<f64>(&encode_idx(&imgs).unwrap()).unwrap(), imgs);
    }
}
