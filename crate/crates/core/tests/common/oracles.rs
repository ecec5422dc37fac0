//! Brute-force reference computations, written without the library's
//! algorithms.

use emb2img::geometry::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Area of the axis-aligned box of `pts` after rotating the axes by `theta`.
pub fn box_area_at(pts: &[Point2], theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let (mut umin, mut umax, mut vmin, mut vmax) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        let u = p.x * c + p.y * s;
        let v = -p.x * s + p.y * c;
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    (umax - umin) * (vmax - vmin)
}

pub const SWEEP_STEP_DEG: f64 = 0.01;

/// Result of the angle sweep: the plain 0.01° grid minimum and a refined
/// minimum obtained by zooming in on every near-best grid minimum.
pub struct SweepResult {
    pub coarse: f64,
    pub refined: f64,
}

/// Sweep `[0°, 90°)` at 0.01° steps. The box area has a kink at the true
/// minimum, so the grid alone lands up to ~1e-4 relative above it; each grid
/// local minimum within 1e-3 of the best is then refined by repeated
/// tenfold subdivision of its bracket.
pub fn sweep_min_area(pts: &[Point2]) -> SweepResult {
    let step = SWEEP_STEP_DEG.to_radians();
    let k = (90.0 / SWEEP_STEP_DEG).round() as usize;
    let areas: Vec<f64> = (0..k).map(|i| box_area_at(pts, i as f64 * step)).collect();
    let coarse = areas.iter().copied().fold(f64::INFINITY, f64::min);
    let mut refined = coarse;
    for i in 0..k {
        let (prev, next) = (areas[(i + k - 1) % k], areas[(i + 1) % k]);
        if areas[i] > prev || areas[i] > next || areas[i] > coarse * (1.0 + 1e-3) {
            continue;
        }
        let mut center = i as f64 * step;
        let mut width = step;
        let mut best = areas[i];
        while width > 1e-13 {
            let sub = width / 10.0;
            for j in -10..=10 {
                let t = center + j as f64 * sub;
                let a = box_area_at(pts, t);
                if a < best {
                    best = a;
                    center = t;
                }
            }
            width = sub;
        }
        refined = refined.min(best);
    }
    SweepResult { coarse, refined }
}

/// Every point lies left of or on every CCW hull edge, in coordinates
/// scaled by the input's bounding box.
pub fn hull_contains_all(hull: &[Point2], pts: &[Point2], tol: f64) -> bool {
    let (mut xmin, mut xmax, mut ymin, mut ymax) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    let scale = (xmax - xmin).max(ymax - ymin);
    let norm = |p: &Point2| ((p.x - xmin) / scale, (p.y - ymin) / scale);
    let n = hull.len();
    (0..n).all(|i| {
        let (ax, ay) = norm(&hull[i]);
        let (bx, by) = norm(&hull[(i + 1) % n]);
        pts.iter().all(|p| {
            let (px, py) = norm(p);
            (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= -tol
        })
    })
}

pub fn strictly_convex_ccw(hull: &[Point2]) -> bool {
    let n = hull.len();
    n >= 3
        && (0..n).all(|i| {
            let (a, b, c) = (hull[i], hull[(i + 1) % n], hull[(i + 2) % n]);
            (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x) > 0.0
        })
}

/// A random planar cloud: uniform, Gaussian, ring or clustered, with a
/// random anisotropic scale, rotation and offset.
pub fn random_cloud(seed: u64, m: usize) -> Vec<Point2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = rng.random_range(0..4);
    let (sx, sy) = (rng.random_range(0.1..10.0), rng.random_range(0.1..10.0));
    let rot: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ox, oy) = (rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
    let centers: Vec<(f64, f64)> = (0..3).map(|_| (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).collect();
    (0..m)
        .map(|i| {
            let (x, y): (f64, f64) = match kind {
                0 => (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                1 => (rng.sample(StandardNormal), rng.sample(StandardNormal)),
                2 => {
                    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let r: f64 = rng.random_range(0.9..1.0);
                    (r * a.cos(), r * a.sin())
                }
                _ => {
                    let (cx, cy) = centers[i % 3];
                    let dx: f64 = rng.sample(StandardNormal);
                    let dy: f64 = rng.sample(StandardNormal);
                    (cx + 0.2 * dx, cy + 0.2 * dy)
                }
            };
            let (x, y) = (x * sx, y * sy);
            let (s, c) = rot.sin_cos();
            Point2::new(c * x - s * y + ox, s * x + c * y + oy)
        })
        .collect()
}

/// Shannon entropy in bits of a probability row, skipping zeros.
pub fn entropy_bits(row: &[f64]) -> f64 {
    row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum()
}

/// `KL(P‖Q)` with Student-t `Q`, from first principles over ordered pairs.
pub fn kl_reference(p: &[f64], m: usize, y: &[[f64; 2]]) -> f64 {
    let w = |i: usize, j: usize| {
        let d2 = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
        1.0 / (1.0 + d2)
    };
    let mut z = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                z += w(i, j);
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..m {
        for j in 0..m {
            let pij = p[i * m + j];
            if i != j && pij > 0.0 {
                kl += pij * (pij / (w(i, j) / z)).ln();
            }
        }
    }
    kl
}
