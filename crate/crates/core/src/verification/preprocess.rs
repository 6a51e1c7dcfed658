//! Image preparation ahead of contour extraction: 8-bit range mapping, luminance,
//! binarisation and optional blur + edge detection.

use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::scalar::Scalar;

/// Single-channel 8-bit raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Gray {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "level")]
pub enum Binarization {
    /// Foreground where the 8-bit value is at least `level`.
    Fixed(u8),
    /// Level chosen by Otsu's between-class variance criterion.
    Otsu,
}

impl Default for Binarization {
    fn default() -> Self {
        Binarization::Fixed(128)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeParams {
    pub blur_size: usize,
    pub blur_sigma: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for EdgeParams {
    fn default() -> Self {
        Self {
            blur_size: 5,
            blur_sigma: 1.0,
            low: 50.0,
            high: 150.0,
        }
    }
}

/// Per-channel 8-bit planes after mapping the image's full value range onto `[0, 255]`.
/// A constant image maps to zeros.
pub fn to_u8<S: Scalar>(image: &Image<S>) -> Vec<Gray> {
    let (c, h, w) = image.shape();
    let lo = image.min().as_f64();
    let hi = image.max().as_f64();
    let range = hi - lo;
    (0..c)
        .map(|ch| {
            let mut g = Gray::new(h, w);
            if range > 0.0 && range.is_finite() {
                for y in 0..h {
                    for x in 0..w {
                        let v = (image.get(ch, y, x).as_f64() - lo) / range * 255.0;
                        g.set(y, x, v.round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
            g
        })
        .collect()
}

/// `0.299 R + 0.587 G + 0.114 B` for three planes, identity for one, plain mean otherwise.
pub fn grayscale(planes: &[Gray]) -> Gray {
    let first = &planes[0];
    if planes.len() == 1 {
        return first.clone();
    }
    let weights: Vec<f64> = if planes.len() == 3 {
        vec![0.299, 0.587, 0.114]
    } else {
        vec![1.0 / planes.len() as f64; planes.len()]
    };
    let mut out = Gray::new(first.height, first.width);
    for i in 0..out.data.len() {
        let v: f64 = planes
            .iter()
            .zip(&weights)
            .map(|(p, w)| w * p.data[i] as f64)
            .sum();
        out.data[i] = v.round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Otsu level: the `k` maximising between-class variance for the split `< k` / `>= k`.
pub fn otsu_level(gray: &Gray) -> u8 {
    let mut hist = [0usize; 256];
    for &v in &gray.data {
        hist[v as usize] += 1;
    }
    let total = gray.data.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &n)| i as f64 * n as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_k) = (-1.0, 128u8);
    for k in 1..256 {
        w0 += hist[k - 1] as f64;
        sum0 += (k - 1) as f64 * hist[k - 1] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_k = k as u8;
        }
    }
    best_k
}

/// Pixels at or above the level become 255, the rest 0.
pub fn binarize(gray: &Gray, mode: Binarization) -> Gray {
    let level = match mode {
        Binarization::Fixed(l) => l,
        Binarization::Otsu => otsu_level(gray),
    };
    Gray {
        height: gray.height,
        width: gray.width,
        data: gray
            .data
            .iter()
            .map(|&v| if v >= level { 255 } else { 0 })
            .collect(),
    }
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
#[inline]
fn reflect101(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with reflect-101 borders; returns float values on the 8-bit scale.
pub fn gaussian_blur(gray: &Gray, size: usize, sigma: f64) -> Vec<f64> {
    let (h, w) = (gray.height, gray.width);
    let k = gaussian_kernel(size.max(1) | 1, sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * gray.get(y, reflect101(x as isize + i as isize - r, w)) as f64)
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[reflect101(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Gradient-magnitude edge detection with non-maximum suppression and hysteresis.
pub fn canny(values: &[f64], height: usize, width: usize, low: f64, high: f64) -> Gray {
    let (h, w) = (height, width);
    let at = |y: isize, x: isize| values[reflect101(y, h) * w + reflect101(x, w)];
    let mut mag = vec![0.0; h * w];
    let mut dir = vec![0u8; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            let i = y as usize * w + x as usize;
            mag[i] = gx.hypot(gy);
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            dir[i] = if !(22.5..157.5).contains(&angle) {
                0
            } else if angle < 67.5 {
                1
            } else if angle < 112.5 {
                2
            } else {
                3
            };
        }
    }
    let m = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    // 0: strong, 1: weak, 2: none
    let mut class = vec![2u8; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let v = mag[i];
            if v < low {
                continue;
            }
            let (a, b) = match dir[i] {
                0 => (m(y, x - 1), m(y, x + 1)),
                1 => (m(y - 1, x - 1), m(y + 1, x + 1)),
                2 => (m(y - 1, x), m(y + 1, x)),
                _ => (m(y - 1, x + 1), m(y + 1, x - 1)),
            };
            if v >= a && v > b {
                class[i] = if v >= high { 0 } else { 1 };
            }
        }
    }
    let mut out = Gray::new(h, w);
    let mut stack: Vec<usize> = (0..h * w).filter(|&i| class[i] == 0).collect();
    for &i in &stack {
        out.data[i] = 255;
    }
    while let Some(i) = stack.pop() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if class[j] == 1 && out.data[j] == 0 {
                    out.data[j] = 255;
                    stack.push(j);
                }
            }
        }
    }
    out
}

/// Full preparation; returns the binary raster and the names of the stages applied.
pub fn preprocess<S: Scalar>(
    image: &Image<S>,
    edgesconvert: bool,
    binarization: Binarization,
    edges: &EdgeParams,
) -> (Gray, Vec<String>) {
    let mut stages = vec!["uint8".to_string(), "grayscale".to_string()];
    let gray = grayscale(&to_u8(image));
    let mut binary = binarize(&gray, binarization);
    stages.push(match binarization {
        Binarization::Fixed(_) => "threshold".into(),
        Binarization::Otsu => "threshold_otsu".into(),
    });
    if edgesconvert {
        let blurred = gaussian_blur(&binary, edges.blur_size, edges.blur_sigma);
        binary = canny(&blurred, binary.height, binary.width, edges.low, edges.high);
        stages.push("gaussian_blur".into());
        stages.push("canny".into());
    }
    (binary, stages)
}
