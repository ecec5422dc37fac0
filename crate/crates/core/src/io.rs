//! Domain types and the four little-endian binary formats that carry them
//! between pipeline stages (`EMB1`, `LAY1`, `IMG1`, `TEN1`).
//!
//! All floats on disk are `f32` little-endian, all integers `u64`
//! little-endian, labels are `u8`. Loaders validate every invariant of the
//! in-memory type, so a value that loads is a value that could have been
//! constructed directly.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
pub const LAY1_MAGIC: &[u8; 4] = b"LAY1";
pub const IMG1_MAGIC: &[u8; 4] = b"IMG1";
pub const TEN1_MAGIC: &[u8; 4] = b"TEN1";

/// Tolerance on the global pixel mean of a dataset that claims to be normalized.
pub const NORMALIZED_MEAN_TOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value at flat index {index}")]
    NonFiniteValue { index: usize },
    #[error("label {value} at index {index} is not 0 or 1")]
    InvalidLabel { index: usize, value: u8 },
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

fn check_finite(values: &[f32]) -> Result<(), FormatError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(FormatError::NonFiniteValue { index }),
        None => Ok(()),
    }
}

fn check_labels(labels: &[u8]) -> Result<(), FormatError> {
    match labels.iter().position(|&l| l > 1) {
        Some(index) => Err(FormatError::InvalidLabel {
            index,
            value: labels[index],
        }),
        None => Ok(()),
    }
}

/// `n` samples by `d` features, row-major, with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    values: Vec<f32>,
    labels: Vec<u8>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f32>, labels: Vec<u8>) -> Result<Self, FormatError> {
        if n < 2 || d < 2 {
            return Err(FormatError::Invariant(format!(
                "embedding matrix needs n >= 2 and d >= 2, got n={n} d={d}"
            )));
        }
        if values.len() != n * d {
            return Err(FormatError::DimensionMismatch(format!(
                "expected {} values for {n}x{d}, got {}",
                n * d,
                values.len()
            )));
        }
        if labels.len() != n {
            return Err(FormatError::DimensionMismatch(format!(
                "expected {n} labels, got {}",
                labels.len()
            )));
        }
        check_finite(&values)?;
        check_labels(&labels)?;
        Ok(Self { n, d, values, labels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    /// Rows reordered so that output row `k` is input row `order[k]`.
    pub fn permute_rows(&self, order: &[usize]) -> Result<Self, FormatError> {
        let mut values = Vec::with_capacity(order.len() * self.d);
        let mut labels = Vec::with_capacity(order.len());
        for &i in order {
            if i >= self.n {
                return Err(FormatError::Invariant(format!("row {i} out of range")));
            }
            values.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(order.len(), self.d, values, labels)
    }
}

/// Where a layout came from: the t-SNE seed and a hash of the fit configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: u64,
}

/// Per-feature pixel assignment on a `grid_w × grid_h` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    grid_w: usize,
    grid_h: usize,
    assignments: Vec<usize>,
    density: Vec<u32>,
    provenance: Provenance,
}

impl FeatureLayout {
    /// `assignments[i]` is the flat pixel index `row * grid_w + col` of feature `i`.
    pub fn new(
        grid_w: usize,
        grid_h: usize,
        assignments: Vec<usize>,
        provenance: Provenance,
    ) -> Result<Self, FormatError> {
        if grid_w == 0 || grid_h == 0 {
            return Err(FormatError::Invariant("grid dimensions must be positive".into()));
        }
        let cells = grid_w
            .checked_mul(grid_h)
            .ok_or_else(|| FormatError::Invariant("grid too large".into()))?;
        let mut density = vec![0u32; cells];
        for (i, &a) in assignments.iter().enumerate() {
            if a >= cells {
                return Err(FormatError::Invariant(format!(
                    "feature {i} assigned to pixel {a}, grid has {cells}"
                )));
            }
            density[a] += 1;
        }
        Ok(Self {
            grid_w,
            grid_h,
            assignments,
            density,
            provenance,
        })
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    /// Number of features laid out.
    pub fn d(&self) -> usize {
        self.assignments.len()
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// Row-major `grid_h × grid_w` feature counts.
    pub fn density(&self) -> &[u32] {
        &self.density
    }

    pub fn density_at(&self, row: usize, col: usize) -> u32 {
        self.density[row * self.grid_w + col]
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
}

/// Global pixel statistics used by z-normalization.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalizationStats {
    pub mu: f32,
    pub sigma: f32,
    pub epsilon: f32,
}

impl NormalizationStats {
    pub fn validate(&self) -> Result<(), FormatError> {
        if !(self.mu.is_finite() && self.sigma.is_finite() && self.epsilon.is_finite()) {
            return Err(FormatError::Invariant("normalization stats must be finite".into()));
        }
        if self.sigma < 0.0 || self.epsilon <= 0.0 {
            return Err(FormatError::Invariant(format!(
                "normalization stats need sigma >= 0 and epsilon > 0, got sigma={} epsilon={}",
                self.sigma, self.epsilon
            )));
        }
        Ok(())
    }
}

/// `n` single-channel `grid_h × grid_w` images with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    n: usize,
    grid_w: usize,
    grid_h: usize,
    pixels: Vec<f32>,
    labels: Vec<u8>,
    norm_stats: Option<NormalizationStats>,
}

impl ImageDataset {
    pub fn new(
        grid_w: usize,
        grid_h: usize,
        pixels: Vec<f32>,
        labels: Vec<u8>,
    ) -> Result<Self, FormatError> {
        let n = labels.len();
        if grid_w == 0 || grid_h == 0 {
            return Err(FormatError::Invariant("grid dimensions must be positive".into()));
        }
        if pixels.len() != n * grid_w * grid_h {
            return Err(FormatError::DimensionMismatch(format!(
                "expected {} pixels for {n} images of {grid_w}x{grid_h}, got {}",
                n * grid_w * grid_h,
                pixels.len()
            )));
        }
        check_finite(&pixels)?;
        check_labels(&labels)?;
        Ok(Self {
            n,
            grid_w,
            grid_h,
            pixels,
            labels,
            norm_stats: None,
        })
    }

    /// Attach normalization stats. The pixels must already be normalized.
    pub fn with_stats(mut self, stats: NormalizationStats) -> Result<Self, FormatError> {
        stats.validate()?;
        let mean = self.global_mean();
        if mean.abs() > NORMALIZED_MEAN_TOL {
            return Err(FormatError::Invariant(format!(
                "dataset carries normalization stats but its global mean is {mean:e}"
            )));
        }
        self.norm_stats = Some(stats);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn pixels_per_image(&self) -> usize {
        self.grid_w * self.grid_h
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn norm_stats(&self) -> Option<NormalizationStats> {
        self.norm_stats
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.pixels_per_image();
        &self.pixels[i * p..(i + 1) * p]
    }

    pub fn global_mean(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// Images at `indices`, in that order. Normalization stats describe the
    /// full pixel space, so the subset does not carry them.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, FormatError> {
        let p = self.pixels_per_image();
        let mut pixels = Vec::with_capacity(indices.len() * p);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n {
                return Err(FormatError::Invariant(format!("image {i} out of range")));
            }
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Self::new(self.grid_w, self.grid_h, pixels, labels)
    }
}

/// A named `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered collection of uniquely named tensors; the weight and checkpoint format.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorStore {
    entries: Vec<TensorEntry>,
}

impl TensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        data: Vec<f32>,
    ) -> Result<(), FormatError> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(FormatError::DuplicateName(name));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(FormatError::DimensionMismatch(format!(
                "tensor {name:?} has shape {shape:?} ({expected} values) but {} values",
                data.len()
            )));
        }
        check_finite(&data)?;
        self.entries.push(TensorEntry { name, shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn remove(&mut self, name: &str) -> Option<TensorEntry> {
        let i = self.entries.iter().position(|e| e.name == name)?;
        Some(self.entries.remove(i))
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Byte-level reading

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, len: usize) -> Option<&'a [u8]> {
        if self.remaining() < len {
            return None;
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Some(out)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize) -> Option<Vec<f32>> {
        let bytes = self.take(count.checked_mul(4)?)?;
        Some(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<(), FormatError> {
        match self.take(4) {
            Some(m) if m == magic => Ok(()),
            Some(m) => Err(FormatError::MalformedHeader(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(m)
            ))),
            None => Err(FormatError::MalformedHeader("file shorter than magic".into())),
        }
    }

    fn header_u64(&mut self, field: &str) -> Result<u64, FormatError> {
        self.u64()
            .ok_or_else(|| FormatError::MalformedHeader(format!("truncated before field {field}")))
    }

    fn header_usize(&mut self, field: &str) -> Result<usize, FormatError> {
        let v = self.header_u64(field)?;
        usize::try_from(v)
            .map_err(|_| FormatError::MalformedHeader(format!("field {field}={v} too large")))
    }

    /// The rest of the file must be exactly `expected` bytes.
    fn expect_payload(&self, expected: Option<usize>) -> Result<(), FormatError> {
        let expected = expected.ok_or_else(|| {
            FormatError::MalformedHeader("declared dimensions overflow".into())
        })?;
        if self.remaining() != expected {
            return Err(FormatError::DimensionMismatch(format!(
                "header declares {expected} payload bytes, file has {}",
                self.remaining()
            )));
        }
        Ok(())
    }
}

fn truncated() -> FormatError {
    FormatError::DimensionMismatch("payload truncated".into())
}

fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_u64<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    w.write_all(&(v as u64).to_le_bytes())
}

// ---------------------------------------------------------------------------
// EMB1

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(EMB1_MAGIC)?;
    let n = r.header_usize("n")?;
    let d = r.header_usize("d")?;
    let count = n.checked_mul(d);
    r.expect_payload(count.and_then(|c| c.checked_mul(4)).and_then(|b| b.checked_add(n)))?;
    let values = r.f32s(n * d).ok_or_else(truncated)?;
    let labels = r.take(n).ok_or_else(truncated)?.to_vec();
    EmbeddingMatrix::new(n, d, values, labels)
}

pub fn encode_embeddings<W: Write>(m: &EmbeddingMatrix, w: &mut W) -> std::io::Result<()> {
    w.write_all(EMB1_MAGIC)?;
    write_u64(w, m.n)?;
    write_u64(w, m.d)?;
    write_f32s(w, &m.values)?;
    w.write_all(&m.labels)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, FormatError> {
    decode_embeddings(&read_file(path.as_ref())?)
}

pub fn save_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_embeddings(m, &mut w)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// LAY1

pub fn decode_layout(bytes: &[u8]) -> Result<FeatureLayout, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(LAY1_MAGIC)?;
    let grid_w = r.header_usize("grid_w")?;
    let grid_h = r.header_usize("grid_h")?;
    let d = r.header_usize("d")?;
    r.expect_payload(d.checked_mul(8).and_then(|b| b.checked_add(16)))?;
    let mut assignments = Vec::with_capacity(d);
    for _ in 0..d {
        let a = r.u64().ok_or_else(truncated)?;
        assignments.push(usize::try_from(a).map_err(|_| {
            FormatError::Invariant(format!("assignment {a} does not fit in memory"))
        })?);
    }
    let seed = r.u64().ok_or_else(truncated)?;
    let config_hash = r.u64().ok_or_else(truncated)?;
    FeatureLayout::new(grid_w, grid_h, assignments, Provenance { seed, config_hash })
}

pub fn encode_layout<W: Write>(l: &FeatureLayout, w: &mut W) -> std::io::Result<()> {
    w.write_all(LAY1_MAGIC)?;
    write_u64(w, l.grid_w)?;
    write_u64(w, l.grid_h)?;
    write_u64(w, l.assignments.len())?;
    for &a in &l.assignments {
        write_u64(w, a)?;
    }
    w.write_all(&l.provenance.seed.to_le_bytes())?;
    w.write_all(&l.provenance.config_hash.to_le_bytes())
}

pub fn load_layout(path: impl AsRef<Path>) -> Result<FeatureLayout, FormatError> {
    decode_layout(&read_file(path.as_ref())?)
}

pub fn save_layout(l: &FeatureLayout, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_layout(l, &mut w)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// IMG1

pub fn decode_images(bytes: &[u8]) -> Result<ImageDataset, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(IMG1_MAGIC)?;
    let n = r.header_usize("n")?;
    let grid_w = r.header_usize("grid_w")?;
    let grid_h = r.header_usize("grid_h")?;
    let has_stats = r
        .u8()
        .ok_or_else(|| FormatError::MalformedHeader("truncated before has_stats".into()))?;
    let stats = match has_stats {
        0 => None,
        1 => {
            let mut field = |name: &str| {
                r.f32().ok_or_else(|| {
                    FormatError::MalformedHeader(format!("truncated before stats field {name}"))
                })
            };
            let mu = field("mu")?;
            let sigma = field("sigma")?;
            let epsilon = field("epsilon")?;
            Some(NormalizationStats { mu, sigma, epsilon })
        }
        other => {
            return Err(FormatError::MalformedHeader(format!(
                "has_stats must be 0 or 1, got {other}"
            )))
        }
    };
    let count = n.checked_mul(grid_w).and_then(|v| v.checked_mul(grid_h));
    r.expect_payload(count.and_then(|c| c.checked_mul(4)).and_then(|b| b.checked_add(n)))?;
    let pixels = r.f32s(n * grid_w * grid_h).ok_or_else(truncated)?;
    let labels = r.take(n).ok_or_else(truncated)?.to_vec();
    let ds = ImageDataset::new(grid_w, grid_h, pixels, labels)?;
    match stats {
        Some(s) => ds.with_stats(s),
        None => Ok(ds),
    }
}

pub fn encode_images<W: Write>(ds: &ImageDataset, w: &mut W) -> std::io::Result<()> {
    w.write_all(IMG1_MAGIC)?;
    write_u64(w, ds.n)?;
    write_u64(w, ds.grid_w)?;
    write_u64(w, ds.grid_h)?;
    match ds.norm_stats {
        Some(s) => {
            w.write_all(&[1])?;
            write_f32s(w, &[s.mu, s.sigma, s.epsilon])?;
        }
        None => w.write_all(&[0])?,
    }
    write_f32s(w, &ds.pixels)?;
    w.write_all(&ds.labels)
}

pub fn load_images(path: impl AsRef<Path>) -> Result<ImageDataset, FormatError> {
    decode_images(&read_file(path.as_ref())?)
}

pub fn save_images(ds: &ImageDataset, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_images(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// TEN1

pub fn decode_tensors(bytes: &[u8]) -> Result<TensorStore, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(TEN1_MAGIC)?;
    let count = r.header_usize("count")?;
    let mut store = TensorStore::new();
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name_len = r.u64().ok_or_else(truncated)? as usize;
        let name_bytes = r.take(name_len).ok_or_else(truncated)?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| FormatError::MalformedHeader("tensor name is not UTF-8".into()))?
            .to_owned();
        if !seen.insert(name.clone()) {
            return Err(FormatError::DuplicateName(name));
        }
        let rank = r.u64().ok_or_else(truncated)? as usize;
        if rank > r.remaining() / 8 {
            return Err(truncated());
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64().ok_or_else(truncated)? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &s| acc.checked_mul(s))
            .ok_or_else(|| FormatError::DimensionMismatch(format!("shape {shape:?} overflows")))?;
        let data = r.f32s(numel).ok_or_else(truncated)?;
        store.insert(name, shape, data)?;
    }
    if r.remaining() != 0 {
        return Err(FormatError::DimensionMismatch(format!(
            "{} trailing bytes after {count} tensors",
            r.remaining()
        )));
    }
    Ok(store)
}

pub fn encode_tensors<W: Write>(store: &TensorStore, w: &mut W) -> std::io::Result<()> {
    w.write_all(TEN1_MAGIC)?;
    write_u64(w, store.entries.len())?;
    for e in &store.entries {
        write_u64(w, e.name.len())?;
        w.write_all(e.name.as_bytes())?;
        write_u64(w, e.shape.len())?;
        for &s in &e.shape {
            write_u64(w, s)?;
        }
        write_f32s(w, &e.data)?;
    }
    Ok(())
}

pub fn load_tensors(path: impl AsRef<Path>) -> Result<TensorStore, FormatError> {
    decode_tensors(&read_file(path.as_ref())?)
}

pub fn save_tensors(store: &TensorStore, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_tensors(store, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb_bytes(m: &EmbeddingMatrix) -> Vec<u8> {
        let mut buf = Vec::new();
        encode_embeddings(m, &mut buf).unwrap();
        buf
    }

    #[test]
    fn embeddings_three_by_two() {
        let m = EmbeddingMatrix::new(3, 2, vec![1., 2., 3., 4., 5., 6.], vec![0, 1, 1]).unwrap();
        let bytes = emb_bytes(&m);
        assert_eq!(bytes.len(), 4 + 16 + 24 + 3);
        let back = decode_embeddings(&bytes).unwrap();
        assert_eq!(back.n(), 3);
        assert_eq!(back.d(), 2);
        assert_eq!(back.row(2), &[5., 6.]);
        assert_eq!(back.labels(), &[0, 1, 1]);
    }

    #[test]
    fn truncated_payload_is_dimension_mismatch() {
        let m = EmbeddingMatrix::new(3, 2, vec![1.; 6], vec![0; 3]).unwrap();
        let bytes = emb_bytes(&m);
        let err = decode_embeddings(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(matches!(err, FormatError::DimensionMismatch(_)), "{err}");
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            decode_embeddings(&long).unwrap_err(),
            FormatError::DimensionMismatch(_)
        ));
    }

    #[test]
    fn short_header_is_malformed() {
        let m = EmbeddingMatrix::new(2, 2, vec![1.; 4], vec![0; 2]).unwrap();
        let bytes = emb_bytes(&m);
        assert!(matches!(
            decode_embeddings(&bytes[..10]).unwrap_err(),
            FormatError::MalformedHeader(_)
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_embeddings(&bad).unwrap_err(),
            FormatError::MalformedHeader(_)
        ));
    }

    #[test]
    fn nan_is_rejected() {
        let m = EmbeddingMatrix::new(3, 2, vec![1.; 6], vec![0; 3]).unwrap();
        let mut bytes = emb_bytes(&m);
        let off = 4 + 16 + 4 * 3;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_embeddings(&bytes).unwrap_err(),
            FormatError::NonFiniteValue { index: 3 }
        ));
    }

    #[test]
    fn bad_label_is_rejected() {
        let err = EmbeddingMatrix::new(2, 2, vec![0.; 4], vec![0, 2]).unwrap_err();
        assert!(matches!(err, FormatError::InvalidLabel { index: 1, value: 2 }));
    }

    #[test]
    fn tensor_store_roundtrip_and_duplicates() {
        let mut s = TensorStore::new();
        s.insert("conv1.w", vec![4, 3, 3, 3], (0..108).map(|i| i as f32 * 0.5).collect())
            .unwrap();
        s.insert("conv1.b", vec![4], vec![0.1, -0.2, 0.3, 0.0]).unwrap();
        let err = s.insert("conv1.w", vec![1], vec![0.0]).unwrap_err();
        assert!(matches!(err, FormatError::DuplicateName(ref n) if n == "conv1.w"));

        let mut buf = Vec::new();
        encode_tensors(&s, &mut buf).unwrap();
        assert_eq!(decode_tensors(&buf).unwrap(), s);
    }

    #[test]
    fn duplicate_name_on_disk_is_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(TEN1_MAGIC);
        buf.extend_from_slice(&2u64.to_le_bytes());
        for _ in 0..2 {
            buf.extend_from_slice(&7u64.to_le_bytes());
            buf.extend_from_slice(b"conv1.w");
            buf.extend_from_slice(&1u64.to_le_bytes());
            buf.extend_from_slice(&1u64.to_le_bytes());
            buf.extend_from_slice(&1.0f32.to_le_bytes());
        }
        assert!(matches!(
            decode_tensors(&buf).unwrap_err(),
            FormatError::DuplicateName(_)
        ));
    }

    #[test]
    fn layout_density_matches_assignments() {
        let l = FeatureLayout::new(2, 2, vec![0, 3, 3, 1], Provenance::default()).unwrap();
        assert_eq!(l.density(), &[1, 1, 0, 2]);
        assert!(FeatureLayout::new(2, 2, vec![4], Provenance::default()).is_err());
        let mut buf = Vec::new();
        encode_layout(&l, &mut buf).unwrap();
        assert_eq!(decode_layout(&buf).unwrap(), l);
    }

    #[test]
    fn images_with_stats_must_be_centered() {
        let ds = ImageDataset::new(2, 1, vec![1.0, 3.0], vec![1]).unwrap();
        let stats = NormalizationStats { mu: 2.0, sigma: 1.0, epsilon: 1e-8 };
        assert!(ds.clone().with_stats(stats).is_err());
        let centered = ImageDataset::new(2, 1, vec![-1.0, 1.0], vec![1]).unwrap();
        let centered = centered.with_stats(stats).unwrap();
        let mut buf = Vec::new();
        encode_images(&centered, &mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 24 + 1 + 12 + 8 + 1);
        assert_eq!(decode_images(&buf).unwrap(), centered);
    }
}
