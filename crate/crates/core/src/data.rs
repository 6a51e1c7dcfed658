//! Training corpora: IDX image files and seeded synthetic sets, all scaled to `[-1, 1]`.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{streams, substream};
use crate::scalar::Scalar;

/// Parse an unsigned-byte, three-dimensional IDX buffer (`count × rows × cols`).
pub fn parse_idx<S: Scalar>(bytes: &[u8]) -> Result<Vec<Image<S>>> {
    if bytes.len() < 4 {
        return Err(Error::IdxMagic(format!("{} bytes is shorter than the magic", bytes.len())));
    }
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return Err(Error::IdxMagic(format!(
            "expected 00 00 08, found {:02x} {:02x} {:02x}",
            bytes[0], bytes[1], bytes[2]
        )));
    }
    if bytes[3] != 3 {
        return Err(Error::IdxDimensions(format!(
            "expected 3 dimensions, header declares {}",
            bytes[3]
        )));
    }
    if bytes.len() < 16 {
        return Err(Error::IdxTruncated {
            expected: 16,
            found: bytes.len(),
        });
    }
    let dim = |i: usize| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (n, h, w) = (dim(0), dim(1), dim(2));
    if h == 0 || w == 0 {
        return Err(Error::IdxDimensions(format!("image size {h}x{w}")));
    }
    let expected = 16 + n * h * w;
    if bytes.len() < expected {
        return Err(Error::IdxTruncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::IdxDimensions(format!(
            "{} trailing bytes beyond {n}x{h}x{w}",
            bytes.len() - expected
        )));
    }
    Ok(bytes[16..]
        .chunks_exact(h * w)
        .map(|px| {
            let data = px.iter().map(|&b| S::of(b as f64 / 127.5 - 1.0)).collect();
            Image::from_vec(1, h, w, data).expect("chunk size matches shape")
        })
        .collect())
}

pub fn load_idx_dataset<S: Scalar>(path: impl AsRef<Path>) -> Result<Vec<Image<S>>> {
    parse_idx(&fs::read(path)?)
}

/// Inverse of [`parse_idx`] for single-channel images; values are clamped and rounded.
pub fn encode_idx<S: Scalar>(images: &[Image<S>]) -> Result<Vec<u8>> {
    let (c, h, w) = images
        .first()
        .map(Image::shape)
        .ok_or_else(|| Error::Input("no images to encode".into()))?;
    if c != 1 {
        return Err(Error::Input("IDX images must be single-channel".into()));
    }
    let mut out = vec![0, 0, 0x08, 3];
    for d in [images.len(), h, w] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for img in images {
        if img.shape() != (c, h, w) {
            return Err(Error::ShapeMismatch {
                expected: (c, h, w),
                got: img.shape(),
            });
        }
        out.extend(
            img.data()
                .iter()
                .map(|v| ((v.as_f64() + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Filled ellipses, foreground fraction in `[0.05, 0.5]`.
    Blobs,
    /// Thick strokes in the upper-left two thirds, leaving the bottom-right corner blank.
    DigitsLike,
}

pub const BLOB_FRACTION: (f64, f64) = (0.05, 0.5);

fn blob_image<R: Rng>(size: usize, rng: &mut R) -> Vec<bool> {
    let s = size as f64;
    loop {
        let mut mask = vec![false; size * size];
        for _ in 0..rng.random_range(1..=3) {
            let (cy, cx) = (rng.random_range(0.2 * s..0.8 * s), rng.random_range(0.2 * s..0.8 * s));
            let (ry, rx) = (rng.random_range(0.1 * s..0.3 * s), rng.random_range(0.1 * s..0.3 * s));
            for y in 0..size {
                for x in 0..size {
                    let dy = (y as f64 + 0.5 - cy) / ry;
                    let dx = (x as f64 + 0.5 - cx) / rx;
                    if dx * dx + dy * dy <= 1.0 {
                        mask[y * size + x] = true;
                    }
                }
            }
        }
        let frac = mask.iter().filter(|&&m| m).count() as f64 / (size * size) as f64;
        if (BLOB_FRACTION.0..=BLOB_FRACTION.1).contains(&frac) {
            return mask;
        }
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p.0 - a.0 - t * vx).powi(2) + (p.1 - a.1 - t * vy).powi(2)).sqrt()
}

fn stroke_image<R: Rng>(size: usize, rng: &mut R) -> Vec<bool> {
    let s = size as f64;
    let (lo, hi) = (0.15 * s, 0.65 * s);
    let half_width = (s / 16.0).max(0.75);
    let points: Vec<(f64, f64)> = (0..rng.random_range(3..=5))
        .map(|_| (rng.random_range(lo..hi), rng.random_range(lo..hi)))
        .collect();
    let mut mask = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            if points.windows(2).any(|w| segment_distance(p, w[0], w[1]) <= half_width) {
                mask[y * size + x] = true;
            }
        }
    }
    mask
}

/// Deterministic single-channel corpus: foreground `+1`, background `-1`.
pub fn make_synthetic_dataset<S: Scalar>(
    n: usize,
    size: usize,
    kind: SyntheticKind,
    seed: u64,
) -> Result<Vec<Image<S>>> {
    if size < 8 {
        return Err(Error::Input(format!("synthetic images need size >= 8, got {size}")));
    }
    let mut rng = substream(seed, streams::SYNTHETIC);
    Ok((0..n)
        .map(|_| {
            let mask = match kind {
                SyntheticKind::Blobs => blob_image(size, &mut rng),
                SyntheticKind::DigitsLike => stroke_image(size, &mut rng),
            };
            let data = mask.into_iter().map(|m| S::of(if m { 1.0 } else { -1.0 })).collect();
            Image::from_vec(1, size, size, data).expect("square image")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(n: u32, h: u32, w: u32) -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3];
        for d in [n, h, w] {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b
    }

    #[test]
    fn parses_header_and_maps_endpoints() {
        let mut b = header(10, 28, 28);
        b.extend((0..7840).map(|i| (i % 256) as u8));
        let imgs = parse_idx::<f64>(&b).unwrap();
        assert_eq!(imgs.len(), 10);
        assert_eq!(imgs[0].shape(), (1, 28, 28));
        assert_eq!(imgs[0].data()[0], -1.0);
        assert_eq!(imgs[0].data()[255], 1.0);
    }

    #[test]
    fn distinct_errors() {
        let mut b = header(2, 2, 2);
        b.extend([0u8; 8]);
        let mut bad = b.clone();
        bad[2] = 0x09;
        assert!(matches!(parse_idx::<f64>(&bad), Err(Error::IdxMagic(_))));
        let mut bad = b.clone();
        bad[3] = 2;
        assert!(matches!(parse_idx::<f64>(&bad), Err(Error::IdxDimensions(_))));
        assert!(matches!(
            parse_idx::<f64>(&b[..b.len() - 1]),
            Err(Error::IdxTruncated { expected: 24, found: 23 })
        ));
        let mut long = b.clone();
        long.push(7);
        assert!(matches!(parse_idx::<f64>(&long), Err(Error::IdxDimensions(_))));
    }

    #[test]
    fn encode_round_trip() {
        let imgs = make_synthetic_dataset::<f32>(3, 8, SyntheticKind::DigitsLike, 4).unwrap();
        let back = parse_idx::<f32>(&encode_idx(&imgs).unwrap()).unwrap();
        assert_eq!(back, imgs);
    }

    #[test]
    fn synthetic_is_deterministic_and_bounded() {
        for kind in [SyntheticKind::Blobs, SyntheticKind::DigitsLike] {
            let a = make_synthetic_dataset::<f64>(5, 16, kind, 9).unwrap();
            assert_eq!(a, make_synthetic_dataset::<f64>(5, 16, kind, 9).unwrap());
            assert!(a.iter().all(|i| i.data().iter().all(|v| v.abs() <= 1.0)));
            assert_ne!(a, make_synthetic_dataset::<f64>(5, 16, kind, 10).unwrap());
        }
        assert!(make_synthetic_dataset::<f64>(1, 7, SyntheticKind::Blobs, 0).is_err());
    }

    #[test]
    fn strokes_leave_corner_blank() {
        for img in make_synthetic_dataset::<f64>(20, 16, SyntheticKind::DigitsLike, 1).unwrap() {
            for y in 11..16 {
                for x in 11..16 {
                    assert_eq!(img.get(0, y, x), -1.0);
                }
            }
            assert!(img.data().iter().any(|&v| v == 1.0));
        }
    }
}
