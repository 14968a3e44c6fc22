//! Brute-force per-pixel reference implementations.

#![allow(dead_code)]

use image::RgbImage;
use num_rational::BigRational;
use num_traits::Signed;

pub type P = (f64, f64);

fn q(v: f64) -> BigRational {
    BigRational::from_float(v).unwrap()
}

fn sign(r: &BigRational) -> f64 {
    if r.is_positive() {
        1.0
    } else if r.is_negative() {
        -1.0
    } else {
        0.0
    }
}

/// Orientation of `o, a, b`; near-zero values are replaced by their exact
/// sign.
fn cross(o: P, a: P, b: P) -> f64 {
    if o == a || o == b || a == b {
        return 0.0;
    }
    let v = (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    if v.abs() > 1e-6 {
        return v;
    }
    sign(&((q(a.0) - q(o.0)) * (q(b.1) - q(o.1)) - (q(a.1) - q(o.1)) * (q(b.0) - q(o.0))))
}

/// Whether `p` lies strictly left of where edge `a-b` meets its row.
fn left_of_edge(p: P, a: P, b: P) -> bool {
    let x = a.0 + (p.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
    if (p.0 - x).abs() > 1e-6 {
        return p.0 < x;
    }
    q(p.0) < q(a.0) + (q(p.1) - q(a.1)) * (q(b.0) - q(a.0)) / (q(b.1) - q(a.1))
}

fn on_segment(q: P, a: P, b: P) -> bool {
    cross(a, b, q) == 0.0 && q.0 >= a.0.min(b.0) && q.0 <= a.0.max(b.0) && q.1 >= a.1.min(b.1) && q.1 <= a.1.max(b.1)
}

/// Even-odd crossing test; points on the boundary count as inside.
pub fn in_polygon(q: P, poly: &[P]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if on_segment(q, a, b) {
            return true;
        }
        if (a.1 > q.1) != (b.1 > q.1) && left_of_edge(q, a, b) {
            inside = !inside;
        }
    }
    inside
}

/// Directed hull edges found by checking every ordered pair: an edge is on
/// the hull when no point lies strictly to its right.
pub fn hull_edges(points: &[P]) -> Vec<(P, P)> {
    let mut edges = Vec::new();
    for (i, &a) in points.iter().enumerate() {
        for (j, &b) in points.iter().enumerate() {
            if i == j || a == b {
                continue;
            }
            let mut left = false;
            let mut right = false;
            for &c in points {
                let x = cross(a, b, c);
                left |= x > 0.0;
                right |= x < 0.0;
            }
            if left && !right {
                edges.push((a, b));
            }
        }
    }
    edges
}

pub fn in_hull(q: P, edges: &[(P, P)]) -> bool {
    !edges.is_empty() && edges.iter().all(|&(a, b)| cross(a, b, q) >= 0.0)
}

/// Skin mask membership for 68 landmarks: inside the hull and outside both
/// eyes and the outer mouth (polygon boundaries belong to the holes).
pub fn face_pixels(lm: &[P], width: u32, height: u32) -> Vec<(u32, u32)> {
    let edges = hull_edges(lm);
    let holes = [&lm[36..42], &lm[42..48], &lm[48..60]];
    let mut out = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let q = (f64::from(x), f64::from(y));
            if in_hull(q, &edges) && !holes.iter().any(|h| in_polygon(q, h)) {
                out.push((x, y));
            }
        }
    }
    out
}

/// Mean Rec.601 luma over the pixels whose HSV value is in `[v_min, v_max]`.
pub fn filtered_mean_gray(img: &RgbImage, pixels: &[(u32, u32)], v_min: f64, v_max: f64) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for &(x, y) in pixels {
        let [r, g, b] = img.get_pixel(x, y).0;
        let v = f64::from(r.max(g).max(b)) / 255.0;
        if v >= v_min && v <= v_max {
            sum += 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}
