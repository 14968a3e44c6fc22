//! Planar geometry and polygon rasterization.
//!
//! Pixel `(x, y)` is sampled at the point `(x, y)`: landmark coordinates are
//! in the same pixel units, so a landmark at `(10.0, 4.0)` sits exactly on
//! the centre of pixel 10 in row 4. Polygons are closed sets: a pixel whose
//! sample point lies on an edge is inside.

use std::cmp::Ordering;

use num_rational::BigRational;
use num_traits::Signed;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

/// Z-component of `(a - o) x (b - o)`; positive when `o, a, b` turn left.
pub fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Results this far from a decision boundary are trusted in floating point;
/// closer ones are recomputed exactly.
const FILTER: f64 = 1e-7;

fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite coordinate")
}

/// Exact sign of [`cross`].
pub fn orientation(o: Point, a: Point, b: Point) -> Ordering {
    let v = cross(o, a, b);
    if v.abs() > FILTER {
        return v.total_cmp(&0.0);
    }
    let (ox, oy) = (exact(o.x), exact(o.y));
    let z = (exact(a.x) - &ox) * (exact(b.y) - &oy) - (exact(a.y) - &oy) * (exact(b.x) - &ox);
    if z.is_positive() {
        Ordering::Greater
    } else if z.is_negative() {
        Ordering::Less
    } else {
        Ordering::Equal
    }
}

/// Shoelace area (absolute).
pub fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        twice += a.x * b.y - b.x * a.y;
    }
    twice.abs() / 2.0
}

/// Convex hull by Andrew's monotone chain, counter-clockwise (in y-up
/// terms), collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && orientation(hull[hull.len() - 2], hull[hull.len() - 1], p) != Ordering::Greater {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && orientation(hull[hull.len() - 2], hull[hull.len() - 1], p) != Ordering::Greater
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Row-major binary pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.set(x, y, f(x, y));
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn idx(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.idx(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let i = self.idx(x, y);
        self.bits[i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    pub fn union_with(&mut self, other: &Mask) {
        assert_eq!(self.dimensions(), other.dimensions());
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn subtract(&mut self, other: &Mask) {
        assert_eq!(self.dimensions(), other.dimensions());
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= !b;
        }
    }
}

/// Fills `poly` (even-odd rule, boundary included) into a new mask.
pub fn rasterize_polygon(poly: &[Point], width: u32, height: u32) -> Mask {
    let mut mask = Mask::new(width, height);
    if poly.is_empty() || width == 0 || height == 0 {
        return mask;
    }
    let n = poly.len();
    let (ymin, ymax) = poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
    let row_lo = ymin.ceil().max(0.0) as i64;
    let row_hi = ymax.floor().min(f64::from(height - 1)) as i64;
    let last_col = i64::from(width) - 1;

    let fill_span = |mask: &mut Mask, y: u32, lo: i64, hi: i64| {
        for x in lo.max(0)..=hi.min(last_col) {
            mask.set(x as u32, y, true);
        }
    };

    let mut crossings: Vec<Crossing> = Vec::with_capacity(n);
    for row in row_lo..=row_hi {
        let yy = row as f64;
        let y = row as u32;
        crossings.clear();
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            if (a.y > yy) != (b.y > yy) {
                crossings.push(Crossing::new(a, b, yy));
            }
            // boundary pixels
            if a.y == b.y {
                if a.y == yy {
                    fill_span(&mut mask, y, a.x.min(b.x).ceil() as i64, a.x.max(b.x).floor() as i64);
                }
            } else if yy >= a.y.min(b.y) && yy <= a.y.max(b.y) {
                let c = Crossing::new(a, b, yy);
                if c.ceil == c.floor {
                    fill_span(&mut mask, y, c.ceil, c.floor);
                }
            }
        }
        crossings.sort_by(|p, q| p.x.total_cmp(&q.x));
        for pair in crossings.chunks_exact(2) {
            fill_span(&mut mask, y, pair[0].ceil, pair[1].floor);
        }
    }
    mask
}

/// Where segment `a-b` crosses the horizontal line at `y`: the approximate
/// x plus its exact ceiling and floor.
struct Crossing {
    x: f64,
    ceil: i64,
    floor: i64,
}

impl Crossing {
    fn new(a: Point, b: Point, y: f64) -> Self {
        let x = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
        let k = x.round();
        if (x - k).abs() > FILTER * k.abs().max(1.0) {
            return Self { x, ceil: x.ceil() as i64, floor: x.floor() as i64 };
        }
        let ex = exact(a.x) + (exact(y) - exact(a.y)) * (exact(b.x) - exact(a.x)) / (exact(b.y) - exact(a.y));
        let k = k as i64;
        match ex.cmp(&BigRational::from_integer(k.into())) {
            Ordering::Equal => Self { x, ceil: k, floor: k },
            Ordering::Less => Self { x, ceil: k, floor: k - 1 },
            Ordering::Greater => Self { x, ceil: k + 1, floor: k },
        }
    }
}
