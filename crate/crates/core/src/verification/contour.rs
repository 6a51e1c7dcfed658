//! Outer boundaries of 8-connected foreground components.
//!
//! Points are pixel centres `(x, y)` with `y` growing downwards. Every contour is returned
//! counter-clockwise as displayed on screen, which makes its shoelace sum negative in these
//! coordinates. Isolated pixels yield single-point contours.

use super::preprocess::Gray;

pub type Point = (i64, i64);

/// Neighbour offsets `(dx, dy)`, clockwise on screen starting east.
const DIRS: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

fn dir_index(dx: i64, dy: i64) -> usize {
    DIRS.iter().position(|&d| d == (dx, dy)).expect("unit offset")
}

/// Twice the signed area via the shoelace sum.
pub fn shoelace2(points: &[Point]) -> i64 {
    let n = points.len();
    (0..n)
        .map(|i| {
            let (x0, y0) = points[i];
            let (x1, y1) = points[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum()
}

/// Polygon area enclosed by the contour.
pub fn contour_area(points: &[Point]) -> f64 {
    shoelace2(points).unsigned_abs() as f64 / 2.0
}

/// Component labels (0 = background), 8-connectivity, numbered in raster order.
pub fn label_components(img: &Gray) -> (Vec<u32>, u32) {
    let (h, w) = (img.height, img.width);
    let mut labels = vec![0u32; h * w];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if img.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = ((i / w) as i64, (i % w) as i64);
            for (dx, dy) in DIRS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if img.data[j] != 0 && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
    }
    (labels, next)
}

fn trace(labels: &[u32], label: u32, w: usize, h: usize, start: Point) -> Vec<Point> {
    let inside = |(x, y): Point| {
        x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && labels[y as usize * w + x as usize] == label
    };
    // The start is the component's first pixel in raster order, so its west neighbour is
    // background and serves as the initial backtrack.
    let next_from = |p: Point, back: Point| -> Option<(Point, Point)> {
        let k = dir_index(back.0 - p.0, back.1 - p.1);
        let mut prev = back;
        for i in 1..=8 {
            let (dx, dy) = DIRS[(k + i) % 8];
            let c = (p.0 + dx, p.1 + dy);
            if inside(c) {
                return Some((c, prev));
            }
            prev = c;
        }
        None
    };
    let Some((first, first_back)) = next_from(start, (start.0 - 1, start.1)) else {
        return vec![start];
    };
    let mut out = vec![start];
    let (mut p, mut back) = (first, first_back);
    loop {
        let (q, b) = next_from(p, back).expect("connected pixel has a neighbour");
        if p == start && q == first {
            break;
        }
        out.push(p);
        p = q;
        back = b;
    }
    // Traced clockwise on screen; flip while keeping the start point first.
    out[1..].reverse();
    out
}

/// One outer contour per connected component, in raster order of their first pixel.
pub fn find_contours(img: &Gray) -> Vec<Vec<Point>> {
    let (labels, count) = label_components(img);
    let mut seen = vec![false; count as usize + 1];
    let mut out = Vec::with_capacity(count as usize);
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 && !seen[l as usize] {
            seen[l as usize] = true;
            let start = ((i % img.width) as i64, (i / img.width) as i64);
            out.push(trace(&labels, l, img.width, img.height, start));
        }
    }
    out
}
