//! Exact t-SNE on the transposed dataset: every feature is a point whose
//! coordinates are its values across all samples.
//!
//! Affinities are calibrated per point by bisection on the Gaussian precision
//! so that the conditional distribution has the requested perplexity, then
//! symmetrized into a joint distribution `P`. The 2D embedding minimizes
//! `KL(P‖Q)` where `Q` uses a Student-t kernel with one degree of freedom.
//! The gradient is exact (`O(m²)` per iteration).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::EmbeddingMatrix;

/// Maximum bisection steps per row of the affinity calibration.
pub const MAX_BANDWIDTH_STEPS: usize = 200;
/// Required agreement between achieved and target entropy, in bits.
pub const ENTROPY_TOL: f64 = 1e-5;
/// Unnormalized conditional probabilities never drop below this.
pub const CONDITIONAL_FLOOR: f64 = 1e-12;
/// Standard deviation of the initial Gaussian coordinates.
pub const INIT_STD: f64 = 1e-4;

const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum TsneError {
    #[error("invalid t-SNE configuration: {0}")]
    InvalidConfig(String),
    #[error("bandwidth search failed for point {row}: entropy {entropy} bits, target {target} bits")]
    BandwidthSearchFailed { row: usize, entropy: f64, target: f64 },
    #[error("non-finite coordinate at iteration {iteration}")]
    NumericalDivergence { iteration: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub n_iter: usize,
    pub learning_rate: f64,
    pub early_exaggeration_factor: f64,
    pub early_exaggeration_iters: usize,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            n_iter: 1000,
            learning_rate: 200.0,
            early_exaggeration_factor: 12.0,
            early_exaggeration_iters: 250,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch_iter: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    /// Check the configuration against a point count `m`.
    pub fn validate(&self, m: usize) -> Result<(), TsneError> {
        let bad = |msg: String| Err(TsneError::InvalidConfig(msg));
        if m < 3 {
            return bad(format!("need at least 3 points, got {m}"));
        }
        if !(self.perplexity >= 2.0 && self.perplexity < m as f64) {
            return bad(format!(
                "perplexity must be in [2, {m}), got {}",
                self.perplexity
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.early_exaggeration_factor > 0.0 && self.early_exaggeration_factor.is_finite()) {
            return bad("early exaggeration factor must be positive".into());
        }
        if self.early_exaggeration_iters > self.n_iter {
            return bad("early exaggeration iterations exceed n_iter".into());
        }
        if self.momentum_switch_iter > self.n_iter {
            return bad("momentum switch iteration exceeds n_iter".into());
        }
        for mo in [self.momentum_initial, self.momentum_final] {
            if !(0.0..1.0).contains(&mo) {
                return bad(format!("momentum must be in [0, 1), got {mo}"));
            }
        }
        Ok(())
    }
}

/// `rows × cols` row-major matrix: one row per feature, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(rows * cols, data.len(), "feature matrix shape mismatch");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> FeatureMatrix {
        transpose_raw(&self.data, self.rows, self.cols)
    }
}

fn transpose_raw(data: &[f32], rows: usize, cols: usize) -> FeatureMatrix {
    let mut out = vec![0.0f32; data.len()];
    const BLOCK: usize = 64;
    for ib in (0..rows).step_by(BLOCK) {
        for jb in (0..cols).step_by(BLOCK) {
            for i in ib..(ib + BLOCK).min(rows) {
                for j in jb..(jb + BLOCK).min(cols) {
                    out[j * rows + i] = data[i * cols + j];
                }
            }
        }
    }
    FeatureMatrix::new(cols, rows, out)
}

/// The `d × n` feature matrix of an `n × d` embedding matrix.
pub fn transpose_to_features(m: &EmbeddingMatrix) -> FeatureMatrix {
    transpose_raw(m.values(), m.n(), m.d())
}

/// Symmetric `m × m` matrix of squared Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub struct SqDistMatrix {
    m: usize,
    data: Vec<f64>,
}

impl SqDistMatrix {
    pub fn from_raw(m: usize, data: Vec<f64>) -> Self {
        assert_eq!(m * m, data.len(), "distance matrix shape mismatch");
        Self { m, data }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Reindex so that new point `k` is old point `order[k]`.
    fn permuted(&self, order: &[usize]) -> SqDistMatrix {
        let m = self.m;
        let mut data = vec![0.0; m * m];
        for (a, &i) in order.iter().enumerate() {
            for (b, &j) in order.iter().enumerate() {
                data[a * m + b] = self.data[i * m + j];
            }
        }
        SqDistMatrix { m, data }
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Pairwise squared distances between the rows of `f`.
///
/// Each entry is summed over columns in index order, so the result does not
/// depend on the thread count.
pub fn pairwise_sq_dists(f: &FeatureMatrix) -> SqDistMatrix {
    let m = f.rows();
    let upper: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let ri = f.row(i);
            ((i + 1)..m).map(|j| sq_dist(ri, f.row(j))).collect()
        })
        .collect();
    let mut data = vec![0.0; m * m];
    for (i, row) in upper.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            let j = i + 1 + k;
            data[i * m + j] = v;
            data[j * m + i] = v;
        }
    }
    SqDistMatrix { m, data }
}

/// Row-stochastic conditional affinities `P(j|i)` with their calibrated
/// Gaussian precisions `beta[i] = 1 / (2σ_i²)`.
#[derive(Debug, Clone)]
pub struct ConditionalAffinities {
    pub m: usize,
    pub p: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ConditionalAffinities {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.p[i * self.m..(i + 1) * self.m]
    }
}

/// Symmetric joint distribution over point pairs; zero diagonal, sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    m: usize,
    p: Vec<f64>,
}

impl AffinityMatrix {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.m + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.p
    }

    /// Build from raw values, symmetrizing and normalizing. Diagonal is zeroed.
    pub fn from_weights(m: usize, w: &[f64]) -> Self {
        assert_eq!(w.len(), m * m);
        let mut p = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    p[i * m + j] = w[i * m + j] + w[j * m + i];
                }
            }
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        Self { m, p }
    }
}

/// Fill `out` with the floored, normalized conditional row for precision
/// `beta` and return its entropy in bits.
fn conditional_row(dists: &[f64], row: usize, dmin: f64, beta: f64, out: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for (j, (&d, o)) in dists.iter().zip(out.iter_mut()).enumerate() {
        *o = if j == row {
            0.0
        } else {
            (-(d - dmin) * beta).exp().max(CONDITIONAL_FLOOR)
        };
        sum += *o;
    }
    let mut h = 0.0;
    for o in out.iter_mut() {
        *o /= sum;
        if *o > 0.0 {
            h -= *o * o.log2();
        }
    }
    h
}

fn calibrate_row(
    dists: &[f64],
    row: usize,
    target: f64,
    out: &mut [f64],
) -> Result<f64, TsneError> {
    let dmin = dists
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != row)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let spread: f64 = dists
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != row)
        .map(|(_, &d)| d - dmin)
        .sum::<f64>()
        / (dists.len() - 1) as f64;
    let mut beta = if spread > 0.0 { 1.0 / spread } else { 1.0 };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut tried = beta;
    let mut entropy = f64::NAN;
    for _ in 0..MAX_BANDWIDTH_STEPS {
        tried = beta;
        entropy = conditional_row(dists, row, dmin, tried, out);
        let diff = entropy - target;
        if diff.abs() < 1e-10 {
            return Ok(tried);
        }
        if diff > 0.0 {
            lo = tried;
            beta = if hi.is_finite() { 0.5 * (lo + hi) } else { tried * 2.0 };
        } else {
            hi = tried;
            beta = 0.5 * (lo + hi);
        }
        if beta == tried || !beta.is_finite() {
            break;
        }
    }
    // bisection can stall on floating-point resolution before reaching 1e-10
    if (entropy - target).abs() <= ENTROPY_TOL {
        Ok(tried)
    } else {
        Err(TsneError::BandwidthSearchFailed {
            row,
            entropy,
            target,
        })
    }
}

/// Per-row bisection of the Gaussian precision so each conditional
/// distribution has entropy `log2(perplexity)` bits.
pub fn calibrate_conditionals(
    d2: &SqDistMatrix,
    perplexity: f64,
) -> Result<ConditionalAffinities, TsneError> {
    let m = d2.m();
    if m < 3 {
        return Err(TsneError::InvalidConfig(format!("need at least 3 points, got {m}")));
    }
    if !(perplexity >= 2.0 && perplexity < m as f64) {
        return Err(TsneError::InvalidConfig(format!(
            "perplexity must be in [2, {m}), got {perplexity}"
        )));
    }
    let target = perplexity.log2();
    if d2.data().iter().all(|&v| v == 0.0) {
        return Err(TsneError::BandwidthSearchFailed {
            row: 0,
            entropy: ((m - 1) as f64).log2(),
            target,
        });
    }
    let mut p = vec![0.0; m * m];
    let betas: Vec<Result<f64, TsneError>> = p
        .par_chunks_mut(m)
        .enumerate()
        .map(|(i, out)| calibrate_row(d2.row(i), i, target, out))
        .collect();
    let beta = betas.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(ConditionalAffinities { m, p, beta })
}

/// Joint affinities `(P(j|i) + P(i|j)) / 2m`, renormalized to sum to 1.
pub fn symmetrize(cond: &ConditionalAffinities) -> AffinityMatrix {
    AffinityMatrix::from_weights(cond.m, &cond.p)
}

pub fn calibrate_affinities(
    d2: &SqDistMatrix,
    perplexity: f64,
) -> Result<AffinityMatrix, TsneError> {
    Ok(symmetrize(&calibrate_conditionals(d2, perplexity)?))
}

/// `KL(P‖Q)` for embedding `y`.
pub fn kl_divergence(p: &AffinityMatrix, y: &[[f64; 2]]) -> f64 {
    kl_and_gradient(p, y, 1.0).0
}

/// `KL(P‖Q)` (with the unexaggerated `P`) and its gradient with respect to
/// `y` when `P` is scaled by `exaggeration`.
pub fn kl_and_gradient(p: &AffinityMatrix, y: &[[f64; 2]], exaggeration: f64) -> (f64, Vec<[f64; 2]>) {
    let m = p.m();
    assert_eq!(y.len(), m);
    let kernel = |i: usize, j: usize| {
        let dx = y[i][0] - y[j][0];
        let dy = y[i][1] - y[j][1];
        1.0 / (1.0 + dx * dx + dy * dy)
    };
    let mut z = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            z += kernel(i, j);
        }
    }
    z *= 2.0;
    let mut grad = vec![[0.0; 2]; m];
    let mut kl = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let w = kernel(i, j);
            let q = (w / z).max(f64::MIN_POSITIVE);
            let pij = p.get(i, j);
            if pij > 0.0 {
                kl += 2.0 * pij * (pij / q).ln();
            }
            let coef = 4.0 * (exaggeration * pij - q) * w;
            let gx = coef * (y[i][0] - y[j][0]);
            let gy = coef * (y[i][1] - y[j][1]);
            grad[i][0] += gx;
            grad[i][1] += gy;
            grad[j][0] -= gx;
            grad[j][1] -= gy;
        }
    }
    (kl, grad)
}

/// Output of [`tsne_embed`].
#[derive(Debug, Clone, PartialEq)]
pub struct TsneEmbedding {
    pub coords: Vec<[f64; 2]>,
    /// `KL(P‖Q)` evaluated before each update step.
    pub kl_history: Vec<f64>,
}

/// Order in which points are processed internally: lexicographic on their
/// values, ties broken by index. Makes the embedding equivariant under
/// permutation of the input rows.
fn canonical_order(f: &FeatureMatrix) -> Vec<usize> {
    let mut order: Vec<usize> = (0..f.rows()).collect();
    order.sort_by(|&a, &b| {
        f.row(a)
            .iter()
            .zip(f.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Gradient descent on `KL(P‖Q)` given calibrated joint affinities. Points
/// are used in the order given.
pub fn optimize_embedding(p: &AffinityMatrix, cfg: &TsneConfig) -> Result<TsneEmbedding, TsneError> {
    let m = p.m();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..m)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let mut update = vec![[0.0f64; 2]; m];
    let mut gains = vec![[1.0f64; 2]; m];
    let mut kl_history = Vec::with_capacity(cfg.n_iter);

    for iter in 0..cfg.n_iter {
        let exaggeration = if iter < cfg.early_exaggeration_iters {
            cfg.early_exaggeration_factor
        } else {
            1.0
        };
        let momentum = if iter < cfg.momentum_switch_iter {
            cfg.momentum_initial
        } else {
            cfg.momentum_final
        };
        let (kl, grad) = kl_and_gradient(p, &y, exaggeration);
        kl_history.push(kl);
        for i in 0..m {
            for k in 0..2 {
                let g = grad[i][k];
                let gain = &mut gains[i][k];
                *gain = if (g > 0.0) != (update[i][k] > 0.0) {
                    *gain + 0.2
                } else {
                    *gain * 0.8
                };
                *gain = gain.max(MIN_GAIN);
                update[i][k] = momentum * update[i][k] - cfg.learning_rate * *gain * g;
                y[i][k] += update[i][k];
            }
        }
        let mean = y.iter().fold([0.0; 2], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        let mean = [mean[0] / m as f64, mean[1] / m as f64];
        for v in y.iter_mut() {
            v[0] -= mean[0];
            v[1] -= mean[1];
        }
        if !kl.is_finite() || y.iter().any(|v| !(v[0].is_finite() && v[1].is_finite())) {
            return Err(TsneError::NumericalDivergence { iteration: iter });
        }
    }
    Ok(TsneEmbedding {
        coords: y,
        kl_history,
    })
}

/// Embed the rows of `f` in 2D.
pub fn tsne_embed(f: &FeatureMatrix, cfg: &TsneConfig) -> Result<TsneEmbedding, TsneError> {
    let m = f.rows();
    cfg.validate(m)?;
    let order = canonical_order(f);
    let d2 = pairwise_sq_dists(f).permuted(&order);
    let p = calibrate_affinities(&d2, cfg.perplexity)?;
    let canonical = optimize_embedding(&p, cfg)?;
    let mut coords = vec![[0.0; 2]; m];
    for (k, &i) in order.iter().enumerate() {
        coords[i] = canonical.coords[k];
    }
    Ok(TsneEmbedding {
        coords,
        kl_history: canonical.kl_history,
    })
}
