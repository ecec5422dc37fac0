//! Feature coordinates → pixel grid, per-sample rendering with collision
//! averaging, and global z-normalization of the pixel space.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::Point2;
use crate::io::{EmbeddingMatrix, FeatureLayout, FormatError, ImageDataset, NormalizationStats, Provenance};

pub const DEFAULT_GRID: usize = 50;
pub const DEFAULT_EPSILON: f32 = 1e-8;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("all {axis} coordinates are identical; cannot scale onto the grid")]
    ZeroExtent { axis: char },
    #[error("length mismatch: expected {expected} features, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Index of `v` on a `cells`-wide axis spanning `[lo, hi]`, rounded half away
/// from zero.
fn cell_index(v: f64, lo: f64, hi: f64, cells: usize) -> usize {
    let t = (v - lo) / (hi - lo) * (cells - 1) as f64;
    (t.round() as usize).min(cells - 1)
}

/// Scale `coords` onto a `grid_w × grid_h` grid. `x` maps to columns, `y` to
/// rows, each axis stretched independently so the extremes land on the
/// border pixels.
pub fn build_layout(
    coords: &[Point2],
    grid_w: usize,
    grid_h: usize,
    provenance: Provenance,
) -> Result<FeatureLayout, RasterError> {
    if grid_w < 2 || grid_h < 2 {
        return Err(RasterError::InvalidGrid(format!(
            "grid must be at least 2x2, got {grid_w}x{grid_h}"
        )));
    }
    if coords.is_empty() {
        return Err(RasterError::InvalidGrid("no coordinates".into()));
    }
    if coords.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(RasterError::InvalidGrid("non-finite coordinate".into()));
    }
    let (mut xmin, mut xmax, mut ymin, mut ymax) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in coords {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    if xmax == xmin {
        return Err(RasterError::ZeroExtent { axis: 'x' });
    }
    if ymax == ymin {
        return Err(RasterError::ZeroExtent { axis: 'y' });
    }
    let assignments = coords
        .iter()
        .map(|p| {
            let col = cell_index(p.x, xmin, xmax, grid_w);
            let row = cell_index(p.y, ymin, ymax, grid_h);
            row * grid_w + col
        })
        .collect();
    Ok(FeatureLayout::new(grid_w, grid_h, assignments, provenance)?)
}

fn render_into(x: &[f32], layout: &FeatureLayout, out: &mut [f32]) {
    let mut sums = vec![0.0f64; out.len()];
    for (&v, &a) in x.iter().zip(layout.assignments()) {
        sums[a] += v as f64;
    }
    for ((o, s), &count) in out.iter_mut().zip(sums).zip(layout.density()) {
        *o = if count == 0 { 0.0 } else { (s / count as f64) as f32 };
    }
}

/// Render one feature vector: each pixel is the mean of the features
/// assigned to it, `0` where none are.
pub fn render_sample(x: &[f32], layout: &FeatureLayout) -> Result<Vec<f32>, RasterError> {
    if x.len() != layout.d() {
        return Err(RasterError::LengthMismatch {
            expected: layout.d(),
            actual: x.len(),
        });
    }
    let mut out = vec![0.0; layout.grid_w() * layout.grid_h()];
    render_into(x, layout, &mut out);
    Ok(out)
}

/// Render every row of `m`. Labels are carried over.
pub fn render_dataset(m: &EmbeddingMatrix, layout: &FeatureLayout) -> Result<ImageDataset, RasterError> {
    if m.d() != layout.d() {
        return Err(RasterError::LengthMismatch {
            expected: layout.d(),
            actual: m.d(),
        });
    }
    let p = layout.grid_w() * layout.grid_h();
    let mut pixels = vec![0.0f32; m.n() * p];
    pixels
        .par_chunks_mut(p)
        .enumerate()
        .for_each(|(i, out)| render_into(m.row(i), layout, out));
    Ok(ImageDataset::new(
        layout.grid_w(),
        layout.grid_h(),
        pixels,
        m.labels().to_vec(),
    )?)
}

/// Mean and population standard deviation over every pixel of every image.
pub fn pixel_stats(pixels: &[f32]) -> (f64, f64) {
    if pixels.is_empty() {
        return (0.0, 0.0);
    }
    let n = pixels.len() as f64;
    let mu = pixels.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = pixels
        .iter()
        .map(|&v| {
            let d = v as f64 - mu;
            d * d
        })
        .sum::<f64>()
        / n;
    (mu, var.sqrt())
}

/// Replace every pixel by `(x − μ)/(σ + ε)` with `μ`, `σ` taken over the whole
/// pixel space, and record the statistics.
pub fn z_normalize(ds: &ImageDataset, epsilon: f32) -> Result<ImageDataset, RasterError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(RasterError::Format(FormatError::Invariant(format!(
            "epsilon must be positive, got {epsilon}"
        ))));
    }
    let (mu, sigma) = pixel_stats(ds.pixels());
    let denom = sigma + epsilon as f64;
    let pixels = ds
        .pixels()
        .par_iter()
        .map(|&v| ((v as f64 - mu) / denom) as f32)
        .collect();
    let out = ImageDataset::new(ds.grid_w(), ds.grid_h(), pixels, ds.labels().to_vec())?;
    Ok(out.with_stats(NormalizationStats {
        mu: mu as f32,
        sigma: sigma as f32,
        epsilon,
    })?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    #[test]
    fn corners_on_two_by_two() {
        let l = build_layout(
            &[p(0., 0.), p(1., 0.), p(0., 1.), p(1., 1.)],
            2,
            2,
            Provenance::default(),
        )
        .unwrap();
        assert_eq!(l.assignments(), &[0, 1, 2, 3]);
        assert_eq!(l.density(), &[1, 1, 1, 1]);
    }

    #[test]
    fn coincident_points_share_a_cell() {
        let l = build_layout(&[p(0., 0.), p(0.5, 0.5), p(0.5, 0.5), p(1., 1.)], 3, 3, Provenance::default())
            .unwrap();
        assert_eq!(l.density_at(1, 1), 2);
        assert_eq!(l.assignments()[1], l.assignments()[2]);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        // 0.25 of the way across a 3-cell axis is exactly index 0.5
        let l = build_layout(&[p(0., 0.), p(0.25, 0.), p(1., 1.)], 3, 2, Provenance::default()).unwrap();
        assert_eq!(l.assignments()[1], 1);
    }

    #[test]
    fn zero_extent() {
        let err = build_layout(&[p(1., 0.), p(1., 1.)], 4, 4, Provenance::default()).unwrap_err();
        assert!(matches!(err, RasterError::ZeroExtent { axis: 'x' }));
        let err = build_layout(&[p(0., 2.), p(1., 2.)], 4, 4, Provenance::default()).unwrap_err();
        assert!(matches!(err, RasterError::ZeroExtent { axis: 'y' }));
    }

    #[test]
    fn collisions_are_averaged() {
        let l = FeatureLayout::new(2, 1, vec![0, 0, 1], Provenance::default()).unwrap();
        assert_eq!(render_sample(&[2.0, 4.0, 7.0], &l).unwrap(), vec![3.0, 7.0]);
        let l = FeatureLayout::new(3, 1, vec![0, 0], Provenance::default()).unwrap();
        assert_eq!(render_sample(&[2.0, 4.0], &l).unwrap(), vec![3.0, 0.0, 0.0]);
        assert!(matches!(
            render_sample(&[1.0], &l),
            Err(RasterError::LengthMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn render_dataset_matches_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 40;
        let assignments = (0..d).map(|_| rng.random_range(0..25)).collect();
        let l = FeatureLayout::new(5, 5, assignments, Provenance::default()).unwrap();
        let values: Vec<f32> = (0..3 * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = EmbeddingMatrix::new(3, d, values, vec![0, 1, 0]).unwrap();
        let ds = render_dataset(&m, &l).unwrap();
        for i in 0..3 {
            assert_eq!(ds.image(i), render_sample(m.row(i), &l).unwrap().as_slice());
        }
        assert_eq!(ds.labels(), &[0, 1, 0]);

        let permuted = render_dataset(&m.permute_rows(&[2, 0, 1]).unwrap(), &l).unwrap();
        assert_eq!(permuted.image(0), ds.image(2));
        assert_eq!(permuted.image(1), ds.image(0));
    }

    #[test]
    fn z_normalize_two_points() {
        let ds = ImageDataset::new(2, 1, vec![0.0, 2.0], vec![0]).unwrap();
        let eps = 1e-8f32;
        let z = z_normalize(&ds, eps).unwrap();
        let s = z.norm_stats().unwrap();
        assert_eq!((s.mu, s.sigma), (1.0, 1.0));
        let expected = (1.0 / (1.0 + eps as f64)) as f32;
        assert_eq!(z.pixels(), &[-expected, expected]);
    }

    #[test]
    fn z_normalize_constant() {
        let ds = ImageDataset::new(2, 2, vec![3.5; 8], vec![0, 1]).unwrap();
        let z = z_normalize(&ds, DEFAULT_EPSILON).unwrap();
        assert!(z.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn z_normalize_is_nearly_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pixels: Vec<f32> = (0..10 * 16).map(|_| rng.random_range(0.0..5.0)).collect();
        let ds = ImageDataset::new(4, 4, pixels, vec![0; 10]).unwrap();
        let eps = 1e-3;
        let once = z_normalize(&ds, eps).unwrap();
        let twice = z_normalize(&once, eps).unwrap();
        let (_, s1) = pixel_stats(once.pixels());
        let (_, s2) = pixel_stats(twice.pixels());
        let sigma = once.norm_stats().unwrap().sigma as f64;
        assert!(((s2 - s1) / s1).abs() < eps as f64 / (sigma + eps as f64));
    }
}
