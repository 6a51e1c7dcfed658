//! Polygon moments, Hu invariants and the contour dissimilarity built on them.

use super::contour::Point;

/// Below this, log-scaled Hu values are linear in the invariant.
pub const HU_REGULARIZER: f64 = 1e-5;

/// Raw moments up to order three, orientation-normalised so `m00 >= 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub m00: f64,
    pub m10: f64,
    pub m01: f64,
    pub m20: f64,
    pub m11: f64,
    pub m02: f64,
    pub m30: f64,
    pub m21: f64,
    pub m12: f64,
    pub m03: f64,
}

/// Moments of the region enclosed by a closed polygon (Green's theorem).
pub fn polygon_moments(points: &[Point]) -> Moments {
    let n = points.len();
    let mut m = Moments::default();
    for i in 0..n {
        let (xa, ya) = (points[i].0 as f64, points[i].1 as f64);
        let (xb, yb) = (points[(i + 1) % n].0 as f64, points[(i + 1) % n].1 as f64);
        let c = xa * yb - xb * ya;
        m.m00 += c;
        m.m10 += c * (xa + xb);
        m.m01 += c * (ya + yb);
        m.m20 += c * (xa * xa + xa * xb + xb * xb);
        m.m02 += c * (ya * ya + ya * yb + yb * yb);
        m.m11 += c * (xa * yb + 2.0 * xa * ya + 2.0 * xb * yb + xb * ya);
        m.m30 += c * (xa * xa * xa + xa * xa * xb + xa * xb * xb + xb * xb * xb);
        m.m03 += c * (ya * ya * ya + ya * ya * yb + ya * yb * yb + yb * yb * yb);
        m.m21 += c
            * (xa * xa * (3.0 * ya + yb) + 2.0 * xa * xb * (ya + yb) + xb * xb * (ya + 3.0 * yb));
        m.m12 += c
            * (ya * ya * (3.0 * xa + xb) + 2.0 * ya * yb * (xa + xb) + yb * yb * (xa + 3.0 * xb));
    }
    m.m00 /= 2.0;
    m.m10 /= 6.0;
    m.m01 /= 6.0;
    m.m20 /= 12.0;
    m.m02 /= 12.0;
    m.m11 /= 24.0;
    m.m30 /= 20.0;
    m.m03 /= 20.0;
    m.m21 /= 60.0;
    m.m12 /= 60.0;
    if m.m00 < 0.0 {
        m = Moments {
            m00: -m.m00,
            m10: -m.m10,
            m01: -m.m01,
            m20: -m.m20,
            m11: -m.m11,
            m02: -m.m02,
            m30: -m.m30,
            m21: -m.m21,
            m12: -m.m12,
            m03: -m.m03,
        };
    }
    m
}

/// The seven Hu invariants, or `None` for a zero-area region.
pub fn hu_moments(m: &Moments) -> Option<[f64; 7]> {
    if !(m.m00 > 1e-12) {
        return None;
    }
    let xc = m.m10 / m.m00;
    let yc = m.m01 / m.m00;
    let mu20 = m.m20 - xc * m.m10;
    let mu02 = m.m02 - yc * m.m01;
    let mu11 = m.m11 - xc * m.m01;
    let mu30 = m.m30 - 3.0 * xc * m.m20 + 2.0 * xc * xc * m.m10;
    let mu03 = m.m03 - 3.0 * yc * m.m02 + 2.0 * yc * yc * m.m01;
    let mu21 = m.m21 - 2.0 * xc * m.m11 - yc * m.m20 + 2.0 * xc * xc * m.m01;
    let mu12 = m.m12 - 2.0 * yc * m.m11 - xc * m.m02 + 2.0 * yc * yc * m.m10;

    let s2 = m.m00 * m.m00;
    let s3 = s2 * m.m00.sqrt();
    let (n20, n02, n11) = (mu20 / s2, mu02 / s2, mu11 / s2);
    let (n30, n03, n21, n12) = (mu30 / s3, mu03 / s3, mu21 / s3, mu12 / s3);

    let a = n30 + n12;
    let b = n21 + n03;
    let p = n30 - 3.0 * n12;
    let q = 3.0 * n21 - n03;
    Some([
        n20 + n02,
        (n20 - n02).powi(2) + 4.0 * n11 * n11,
        p * p + q * q,
        a * a + b * b,
        p * a * (a * a - 3.0 * b * b) + q * b * (3.0 * a * a - b * b),
        (n20 - n02) * (a * a - b * b) + 4.0 * n11 * a * b,
        q * a * (a * a - 3.0 * b * b) - p * b * (3.0 * a * a - b * b),
    ])
}

fn log_scale(h: f64) -> f64 {
    h.signum() * (1.0 + h.abs() / HU_REGULARIZER).log10()
}

/// Sum of absolute differences of log-scaled Hu invariants; 0 for identical shapes.
/// `None` when either contour encloses no area.
pub fn contour_similarity(a: &[Point], b: &[Point]) -> Option<f64> {
    if a.len() < 3 || b.len() < 3 {
        return None;
    }
    let ha = hu_moments(&polygon_moments(a))?;
    let hb = hu_moments(&polygon_moments(b))?;
    Some(
        ha.iter()
            .zip(&hb)
            .map(|(&u, &v)| (log_scale(u) - log_scale(v)).abs())
            .sum(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x: i64, y: i64, w: i64, h: i64) -> Vec<Point> {
        vec![(x, y), (x, y + h), (x + w, y + h), (x + w, y)]
    }

    #[test]
    fn rectangle_moments_match_closed_form() {
        let m = polygon_moments(&rect(2, 3, 4, 6));
        assert!((m.m00 - 24.0).abs() < 1e-12);
        assert!((m.m10 / m.m00 - 4.0).abs() < 1e-12);
        assert!((m.m01 / m.m00 - 6.0).abs() < 1e-12);
        let h = hu_moments(&m).unwrap();
        let (a, b) = (4.0f64, 6.0f64);
        assert!((h[0] - (a / b + b / a) / 12.0).abs() < 1e-12);
        assert!((h[1] - ((a / b - b / a) / 12.0).powi(2)).abs() < 1e-12);
        for v in &h[2..] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn orientation_does_not_matter() {
        let r = rect(0, 0, 3, 5);
        let mut rev = r.clone();
        rev.reverse();
        assert_eq!(contour_similarity(&r, &rev), Some(0.0));
    }

    #[test]
    fn invariant_to_translation_and_scale() {
        let tri = vec![(0, 0), (4, 0), (1, 3)];
        let big: Vec<Point> = tri.iter().map(|&(x, y)| (3 * x + 7, 3 * y - 2)).collect();
        assert!(contour_similarity(&tri, &big).unwrap() < 1e-9);
    }

    #[test]
    fn degenerate_is_incomparable() {
        let line = vec![(0, 0), (1, 0), (2, 0)];
        assert_eq!(contour_similarity(&line, &rect(0, 0, 2, 2)), None);
        assert_eq!(contour_similarity(&[(0, 0)], &rect(0, 0, 2, 2)), None);
    }

    #[test]
    fn symmetric_and_nonnegative() {
        let a = rect(0, 0, 3, 9);
        let b = vec![(0, 0), (5, 1), (2, 4), (1, 2)];
        let ab = contour_similarity(&a, &b).unwrap();
        assert!(ab > 0.0);
        assert_eq!(ab, contour_similarity(&b, &a).unwrap());
    }
}
