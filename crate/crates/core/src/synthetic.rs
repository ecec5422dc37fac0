//! Seeded synthetic datasets for smoke runs and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::io::{EmbeddingMatrix, FormatError, ImageDataset};

/// Two Gaussian classes with unit variance. Class 1 is shifted by
/// `separation` standard deviations on the first `informative` fraction of
/// features; the rest are pure noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub n: usize,
    pub d: usize,
    pub separation: f32,
    pub informative: f32,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            d: 256,
            separation: 2.0,
            informative: 0.25,
            seed: 7,
        }
    }
}

/// Labels alternate `0, 1, 0, …` so both classes are equally sized.
pub fn two_clusters(cfg: &ClusterConfig) -> Result<EmbeddingMatrix, FormatError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = ((cfg.d as f64) * cfg.informative as f64).round() as usize;
    let labels: Vec<u8> = (0..cfg.n).map(|i| (i % 2) as u8).collect();
    let mut values = Vec::with_capacity(cfg.n * cfg.d);
    for &l in &labels {
        for j in 0..cfg.d {
            let z: f32 = rng.sample(StandardNormal);
            let shift = if l == 1 && j < k { cfg.separation } else { 0.0 };
            values.push(z + shift);
        }
    }
    EmbeddingMatrix::new(cfg.n, cfg.d, values, labels)
}

/// `n` noisy `h × w` images; class 1 is brighter by `contrast` on the left
/// half, so a linear probe separates the classes.
pub fn separable_images(n: usize, h: usize, w: usize, contrast: f32, seed: u64) -> Result<ImageDataset, FormatError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let mut pixels = Vec::with_capacity(n * h * w);
    for &l in &labels {
        for _ in 0..h {
            for col in 0..w {
                let z: f32 = rng.sample(StandardNormal);
                let shift = if l == 1 && col < w / 2 { contrast } else { 0.0 };
                pixels.push(0.5 * z + shift);
            }
        }
    }
    ImageDataset::new(w, h, pixels, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cluster_shift_is_on_informative_block() {
        let cfg = ClusterConfig {
            n: 400,
            d: 8,
            ..Default::default()
        };
        let m = two_clusters(&cfg).unwrap();
        let mean = |label: u8, j: usize| {
            let rows: Vec<_> = (0..m.n()).filter(|&i| m.labels()[i] == label).collect();
            rows.iter().map(|&i| m.row(i)[j] as f64).sum::<f64>() / rows.len() as f64
        };
        assert!((mean(1, 0) - mean(0, 0) - 2.0).abs() < 0.3);
        assert!((mean(1, 5) - mean(0, 5)).abs() < 0.3);
        assert_eq!(two_clusters(&cfg).unwrap(), m);
    }
}
