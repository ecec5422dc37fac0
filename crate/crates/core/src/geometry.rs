//! Convex hull, minimum-area enclosing rectangle and the rotation that lays
//! that rectangle flat.

use std::f64::consts::FRAC_PI_2;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Rotate by `angle` radians about `center`.
    pub fn rotated_about(self, center: Point2, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        let d = self.sub(center);
        Point2::new(center.x + c * d.x - s * d.y, center.y + s * d.x + c * d.y)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

/// `(a - o) × (b - o)`; positive when `o → a → b` turns counter-clockwise.
pub fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn of(points: &[Point2]) -> BBox {
        points.iter().fold(
            BBox {
                min_x: f64::INFINITY,
                min_y: f64::INFINITY,
                max_x: f64::NEG_INFINITY,
                max_y: f64::NEG_INFINITY,
            },
            |b, p| BBox {
                min_x: b.min_x.min(p.x),
                min_y: b.min_y.min(p.y),
                max_x: b.max_x.max(p.x),
                max_y: b.max_y.max(p.y),
            },
        )
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        p.x >= self.min_x - tol
            && p.x <= self.max_x + tol
            && p.y >= self.min_y - tol
            && p.y <= self.max_y + tol
    }
}

/// Convex polygon, counter-clockwise, without collinear vertices. Starts at
/// the lexicographically smallest vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Hull {
    vertices: Vec<Point2>,
}

impl Hull {
    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Shoelace area.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                a.x * b.y - b.x * a.y
            })
            .sum();
        0.5 * twice
    }

    /// Cross-product containment test. Coordinates are scaled by the hull's
    /// bounding-box extent before comparing against `tol`.
    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        let bb = BBox::of(&self.vertices);
        let scale = bb.width().max(bb.height()).max(f64::MIN_POSITIVE);
        let norm = |q: Point2| Point2::new((q.x - bb.min_x) / scale, (q.y - bb.min_y) / scale);
        let p = norm(p);
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = norm(self.vertices[i]);
            let b = norm(self.vertices[(i + 1) % n]);
            cross(a, b, p) >= -tol
        })
    }
}

/// Andrew's monotone chain. Collinear points on hull edges are dropped.
pub fn convex_hull(points: &[Point2]) -> Result<Hull, GeometryError> {
    if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(GeometryError::DegenerateInput("non-finite coordinate".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return Err(GeometryError::DegenerateInput(format!(
            "need at least 3 distinct points, got {}",
            pts.len()
        )));
    }

    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();

    if hull.len() < 3 {
        return Err(GeometryError::DegenerateInput("all points are collinear".into()));
    }
    Ok(Hull { vertices: hull })
}

/// Rectangle with sides along `(cos angle, sin angle)` (width) and the
/// perpendicular (height).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: Point2,
    pub angle: f64,
    pub width: f64,
    pub height: f64,
}

impl OrientedRect {
    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Corners, counter-clockwise.
    pub fn corners(&self) -> [Point2; 4] {
        let (s, c) = self.angle.sin_cos();
        let a = Point2::new(c * self.width / 2.0, s * self.width / 2.0);
        let b = Point2::new(-s * self.height / 2.0, c * self.height / 2.0);
        let o = self.center;
        [
            Point2::new(o.x - a.x - b.x, o.y - a.y - b.y),
            Point2::new(o.x + a.x - b.x, o.y + a.y - b.y),
            Point2::new(o.x + a.x + b.x, o.y + a.y + b.y),
            Point2::new(o.x - a.x + b.x, o.y - a.y + b.y),
        ]
    }
}

/// Relative slack when comparing candidate rectangle areas.
const AREA_TIE_REL: f64 = 1e-12;

/// Minimum-area enclosing rectangle by rotating calipers. One side of the
/// result is collinear with a hull edge. Equal areas resolve to the smaller
/// angle.
pub fn min_area_rect(h: &Hull) -> OrientedRect {
    let v = h.vertices();
    let n = v.len();
    let next = |i: usize| (i + 1) % n;

    let frame = |i: usize| {
        let e = v[next(i)].sub(v[i]);
        let len = e.norm();
        let u = Point2::new(e.x / len, e.y / len);
        (u, Point2::new(-u.y, u.x))
    };
    let along = |i: usize, dir: Point2, k: usize| v[k].sub(v[i]).dot(dir);

    // pointers to the vertices extreme along +u, -u and +normal for edge 0
    let (u0, n0) = frame(0);
    let argmax = |f: &dyn Fn(usize) -> f64| {
        (0..n).fold(0, |best, k| if f(k) > f(best) { k } else { best })
    };
    let mut right = argmax(&|k| along(0, u0, k));
    let mut left = argmax(&|k| -along(0, u0, k));
    let mut top = argmax(&|k| along(0, n0, k));

    let mut best: Option<(f64, OrientedRect)> = None;
    for (i, vi) in v.iter().enumerate() {
        let (u, nrm) = frame(i);
        let advance = |ptr: &mut usize, f: &dyn Fn(usize) -> f64| {
            for _ in 0..n {
                if f(next(*ptr)) > f(*ptr) {
                    *ptr = next(*ptr);
                } else {
                    break;
                }
            }
        };
        advance(&mut right, &|k| along(i, u, k));
        advance(&mut left, &|k| -along(i, u, k));
        advance(&mut top, &|k| along(i, nrm, k));

        let max_u = along(i, u, right);
        let min_u = along(i, u, left);
        let max_n = along(i, nrm, top);
        let ext_u = max_u - min_u;
        let ext_n = max_n;
        let mid_u = 0.5 * (max_u + min_u);
        let center = Point2::new(
            vi.x + u.x * mid_u + nrm.x * 0.5 * max_n,
            vi.y + u.y * mid_u + nrm.y * 0.5 * max_n,
        );

        let mut angle = u.y.atan2(u.x).rem_euclid(FRAC_PI_2);
        if FRAC_PI_2 - angle < 1e-12 {
            angle = 0.0;
        }
        // the reduced axis is parallel to either u or the edge normal
        let axis = Point2::new(angle.cos(), angle.sin());
        let (width, height) = if axis.dot(u).abs() >= axis.dot(nrm).abs() {
            (ext_u, ext_n)
        } else {
            (ext_n, ext_u)
        };
        let rect = OrientedRect {
            center,
            angle,
            width,
            height,
        };
        let area = ext_u * ext_n;
        let better = match &best {
            None => true,
            Some((ba, br)) => {
                area < ba * (1.0 - AREA_TIE_REL)
                    || (area <= ba * (1.0 + AREA_TIE_REL) && angle < br.angle)
            }
        };
        if better {
            best = Some((area, rect));
        }
    }
    best.expect("hull has at least 3 vertices").1
}

/// Rotate `points` by `-rect.angle` about the rectangle center; if the
/// result is taller than wide, add a further quarter turn clockwise.
/// Returns the rotated points and their bounding box.
pub fn rotate_to_horizontal(points: &[Point2], rect: &OrientedRect) -> (Vec<Point2>, BBox) {
    let mut out: Vec<Point2> = points
        .iter()
        .map(|p| p.rotated_about(rect.center, -rect.angle))
        .collect();
    let mut bbox = BBox::of(&out);
    if bbox.width() < bbox.height() {
        let c = rect.center;
        for p in out.iter_mut() {
            *p = Point2::new(c.x + (p.y - c.y), c.y - (p.x - c.x));
        }
        bbox = BBox::of(&out);
    }
    (out, bbox)
}
