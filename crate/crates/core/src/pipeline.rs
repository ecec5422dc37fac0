//! Command implementations behind the `emb2img` binary. Every command is a
//! pure function of its input files, flags and seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{convex_hull, min_area_rect, rotate_to_horizontal, GeometryError, Point2};
use crate::io::{self, EmbeddingMatrix, FeatureLayout, FormatError, ImageDataset, Provenance};
use crate::nn::{self, build_model, evaluate, train_epoch, Adam, AdamConfig, Extractor, Model, ModelSpec, NnError};
use crate::raster::{self, RasterError};
use crate::synthetic::{self, ClusterConfig};
use crate::tsne::{transpose_to_features, tsne_embed, TsneConfig, TsneError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Tsne(#[from] TsneError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error("image index {index} out of range for {n} images")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("png encoding failed: {0}")]
    Png(String),
}

impl PipelineError {
    /// Stable process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Format(e) => format_code(e),
            PipelineError::Tsne(e) => match e {
                TsneError::InvalidConfig(_) => 20,
                TsneError::BandwidthSearchFailed { .. } => 21,
                TsneError::NumericalDivergence { .. } => 22,
            },
            PipelineError::Geometry(GeometryError::DegenerateInput(_)) => 30,
            PipelineError::Raster(e) => match e {
                RasterError::ZeroExtent { .. } => 40,
                RasterError::LengthMismatch { .. } => 41,
                RasterError::InvalidGrid(_) => 42,
                RasterError::Format(f) => format_code(f),
            },
            PipelineError::Nn(e) => match e {
                NnError::ShapeMismatch(_) => 50,
                NnError::BatchTooSmall { .. } => 51,
                NnError::MissingWeight(_) => 52,
                NnError::NumericalDivergence(_) => 53,
                NnError::InvalidSpec(_) => 54,
                NnError::NoForwardCache => 55,
            },
            PipelineError::Usage(_) => 60,
            PipelineError::IndexOutOfRange { .. } => 61,
            PipelineError::Png(_) => 62,
        }
    }
}

fn format_code(e: &FormatError) -> i32 {
    match e {
        FormatError::Io(_) => 10,
        FormatError::MalformedHeader(_) => 11,
        FormatError::DimensionMismatch(_) => 12,
        FormatError::NonFiniteValue { .. } => 13,
        FormatError::InvalidLabel { .. } => 14,
        FormatError::DuplicateName(_) => 15,
        FormatError::Invariant(_) => 16,
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(FormatError::from)?))
}

/// First eight bytes of the SHA-256 of `value`'s JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> u64 {
    let json = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&json);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[derive(Debug, Clone, Args)]
pub struct TsneArgs {
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub n_iter: usize,
    #[arg(long, default_value_t = 200.0)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 12.0)]
    pub early_exaggeration: f64,
    #[arg(long, default_value_t = 250)]
    pub early_exaggeration_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl From<&TsneArgs> for TsneConfig {
    fn from(a: &TsneArgs) -> Self {
        TsneConfig {
            perplexity: a.perplexity,
            n_iter: a.n_iter,
            learning_rate: a.learning_rate,
            early_exaggeration_factor: a.early_exaggeration,
            early_exaggeration_iters: a.early_exaggeration_iters,
            momentum_switch_iter: a.early_exaggeration_iters,
            seed: a.seed,
            ..TsneConfig::default()
        }
    }
}

/// Transpose, embed the features with t-SNE, rotate the hull's minimum
/// rectangle upright and snap the points to the grid.
pub fn fit_layout(m: &EmbeddingMatrix, grid_w: usize, grid_h: usize, cfg: &TsneConfig) -> Result<FeatureLayout> {
    let features = transpose_to_features(m);
    let emb = tsne_embed(&features, cfg)?;
    let points: Vec<Point2> = emb.coords.iter().map(|&c| Point2::from(c)).collect();
    let hull = convex_hull(&points)?;
    let rect = min_area_rect(&hull);
    let (rotated, _) = rotate_to_horizontal(&points, &rect);
    let provenance = Provenance {
        seed: cfg.seed,
        config_hash: config_hash(&json!({ "grid_w": grid_w, "grid_h": grid_h, "tsne": cfg })),
    };
    Ok(raster::build_layout(&rotated, grid_w, grid_h, provenance)?)
}

fn log_density(l: &FeatureLayout) {
    let occupied = l.density().iter().filter(|&&c| c > 0).count();
    let max = l.density().iter().copied().max().unwrap_or(0);
    info!(
        "layout {}x{}: {} features on {occupied} of {} pixels, max density {max}",
        l.grid_w(),
        l.grid_h(),
        l.d(),
        l.grid_w() * l.grid_h()
    );
}

#[derive(Debug, Clone, Args)]
pub struct LayoutArgs {
    /// EMB1 embedding matrix
    pub embeddings: PathBuf,
    /// LAY1 output
    pub out: PathBuf,
    #[arg(long, default_value_t = raster::DEFAULT_GRID)]
    pub grid_w: usize,
    #[arg(long, default_value_t = raster::DEFAULT_GRID)]
    pub grid_h: usize,
    #[command(flatten)]
    pub tsne: TsneArgs,
}

pub fn cmd_layout(a: &LayoutArgs) -> Result<FeatureLayout> {
    let m = io::load_embeddings(&a.embeddings)?;
    let layout = fit_layout(&m, a.grid_w, a.grid_h, &TsneConfig::from(&a.tsne))?;
    log_density(&layout);
    io::save_layout(&layout, &a.out)?;
    Ok(layout)
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    pub embeddings: PathBuf,
    pub layout: PathBuf,
    /// IMG1 output
    pub out: PathBuf,
    /// Z-normalize over the whole pixel space
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, default_value_t = raster::DEFAULT_EPSILON)]
    pub epsilon: f32,
}

pub fn cmd_render(a: &RenderArgs) -> Result<ImageDataset> {
    let m = io::load_embeddings(&a.embeddings)?;
    let layout = io::load_layout(&a.layout)?;
    let mut ds = raster::render_dataset(&m, &layout)?;
    if a.normalize {
        ds = raster::z_normalize(&ds, a.epsilon)?;
        let s = ds.norm_stats().expect("stats attached");
        info!("normalized: mu {} sigma {}", s.mu, s.sigma);
    }
    io::save_images(&ds, &a.out)?;
    Ok(ds)
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Normalized IMG1 dataset
    pub images: PathBuf,
    /// TEN1 checkpoint output
    pub checkpoint: PathBuf,
    /// Line-delimited JSON metrics output
    pub metrics: PathBuf,
    /// Pretrained extractor slice (TEN1)
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Extractor: none, alexnet, resnet, resnext, shufflenet or vgg16
    #[arg(long, default_value = "none")]
    pub spec: Extractor,
    /// Autoencoder learning rate; defaults per extractor
    #[arg(long)]
    pub cae_lr: Option<f64>,
    /// Classifier learning rate; defaults per extractor
    #[arg(long)]
    pub lc_lr: Option<f64>,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Training fraction of the shuffled dataset
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub final_val_accuracy: f64,
}

/// Seeded shuffle of `0..n` cut at `round(split · n)`.
pub fn split_indices(n: usize, split: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(split > 0.0 && split < 1.0) {
        return Err(PipelineError::Usage(format!("split must be in (0, 1), got {split}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (n as f64 * split).round() as usize;
    if cut < 2 || cut >= n {
        return Err(PipelineError::Usage(format!("split {split} of {n} images leaves an empty side")));
    }
    let val = idx.split_off(cut);
    Ok((idx, val))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrainOptions {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub split: f64,
    pub seed: u64,
}

/// Split, build and train; `on_epoch` sees each metrics record.
pub fn train_model(
    ds: &ImageDataset,
    spec: &ModelSpec,
    weights: Option<&io::TensorStore>,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&serde_json::Value) -> Result<()>,
) -> Result<(Model, TrainSummary)> {
    if ds.norm_stats().is_none() {
        return Err(PipelineError::Usage("training needs a z-normalized dataset".into()));
    }
    let TrainOptions {
        adam,
        epochs,
        batch_size,
        split,
        seed,
    } = *opts;
    let (train_idx, val_idx) = split_indices(ds.n(), split, seed)?;
    let train = ds.subset(&train_idx)?;
    let val = ds.subset(&val_idx)?;
    let mut model = build_model(spec, weights, seed)?;
    let mut opt = Adam::new(&model, adam)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut summary = TrainSummary {
        train_loss: vec![],
        val_accuracy: vec![],
        final_val_accuracy: 0.0,
    };
    for epoch in 0..epochs {
        let m = train_epoch(&mut model, &train, &mut opt, batch_size, epoch, &mut rng)?;
        let acc = evaluate(&mut model, &val)?;
        info!("epoch {epoch}: loss {:.5} val acc {acc:.4}", m.train_loss);
        summary.train_loss.push(m.train_loss);
        summary.val_accuracy.push(acc);
        summary.final_val_accuracy = acc;
        on_epoch(&json!({
            "type": "epoch",
            "epoch": epoch,
            "train_loss": m.train_loss,
            "train_accuracy": m.train_accuracy,
            "val_accuracy": acc,
        }))?;
    }
    Ok((model, summary))
}

fn write_line(w: &mut impl Write, v: &serde_json::Value) -> Result<()> {
    serde_json::to_writer(&mut *w, v).map_err(|e| FormatError::Io(e.into()))?;
    w.write_all(b"\n").map_err(FormatError::from)?;
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainSummary> {
    if a.epochs == 0 {
        return Err(PipelineError::Usage("epochs must be positive".into()));
    }
    let ds = io::load_images(&a.images)?;
    let weights = a.weights.as_deref().map(io::load_tensors).transpose()?;
    let (cae_default, lc_default) = a.spec.default_learning_rates();
    let adam = AdamConfig::new(a.cae_lr.unwrap_or(cae_default), a.lc_lr.unwrap_or(lc_default));
    let opts = TrainOptions {
        adam,
        epochs: a.epochs,
        batch_size: a.batch_size,
        split: a.split,
        seed: a.seed,
    };
    let cfg = json!({ "spec": a.spec, "train": opts });
    let spec = ModelSpec::preset(a.spec, ds.grid_h(), ds.grid_w());
    let mut out = BufWriter::new(File::create(&a.metrics).map_err(FormatError::from)?);
    write_line(
        &mut out,
        &json!({
            "type": "config",
            "config": cfg,
            "config_hash": format!("{:016x}", config_hash(&cfg)),
            "images_sha256": file_hash(&a.images)?,
            "weights_sha256": a.weights.as_deref().map(file_hash).transpose()?,
            "model": {
                "autoencoder": "conv k3 s2 x2 (64, 32) + upsample conv k3 x2 (64, 16), batch norm + relu",
                "classifier": nn::spec::CLASSIFIER_WIDTHS,
                "loss": "cross_entropy",
            },
        }),
    )?;
    let (model, summary) = train_model(&ds, &spec, weights.as_ref(), &opts, |v| write_line(&mut out, v))?;
    io::save_tensors(&model.state(), &a.checkpoint)?;
    write_line(
        &mut out,
        &json!({
            "type": "final",
            "val_accuracy": summary.final_val_accuracy,
            "checkpoint_sha256": file_hash(&a.checkpoint)?,
        }),
    )?;
    out.flush().map_err(FormatError::from)?;
    Ok(summary)
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    pub images: PathBuf,
    pub checkpoint: PathBuf,
}

/// Accuracy of a checkpoint on every image of the dataset.
pub fn cmd_eval(a: &EvalArgs) -> Result<f64> {
    let ds = io::load_images(&a.images)?;
    let mut model = Model::from_checkpoint(&io::load_tensors(&a.checkpoint)?)?;
    Ok(evaluate(&mut model, &ds)?)
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    pub images: PathBuf,
    pub index: usize,
    /// PNG output
    pub out: PathBuf,
}

/// Min-max scale one image to 8-bit grey; a constant image maps to 0.
pub fn to_gray8(pixels: &[f32]) -> Vec<u8> {
    let lo = pixels.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = pixels.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if hi <= lo {
        return vec![0; pixels.len()];
    }
    let scale = 255.0 / (hi as f64 - lo as f64);
    pixels
        .iter()
        .map(|&v| ((v as f64 - lo as f64) * scale).round().clamp(0.0, 255.0) as u8)
        .collect()
}

pub fn cmd_inspect(a: &InspectArgs) -> Result<()> {
    let ds = io::load_images(&a.images)?;
    if a.index >= ds.n() {
        return Err(PipelineError::IndexOutOfRange { index: a.index, n: ds.n() });
    }
    let gray = to_gray8(ds.image(a.index));
    let file = File::create(&a.out).map_err(FormatError::from)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), ds.grid_w() as u32, ds.grid_h() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| PipelineError::Png(e.to_string());
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(&gray).map_err(png_err)?;
    w.finish().map_err(png_err)?;
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// EMB1 output with two Gaussian classes
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 256)]
    pub d: usize,
    /// Class mean shift in standard deviations
    #[arg(long, default_value_t = 2.0)]
    pub separation: f32,
    /// Fraction of features carrying the shift
    #[arg(long, default_value_t = 0.25)]
    pub informative: f32,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Also write random stand-in weights for this extractor
    #[arg(long)]
    pub weights_for: Option<Extractor>,
    #[arg(long)]
    pub weights_out: Option<PathBuf>,
    #[arg(long, default_value_t = raster::DEFAULT_GRID)]
    pub grid: usize,
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let m = synthetic::two_clusters(&ClusterConfig {
        n: a.n,
        d: a.d,
        separation: a.separation,
        informative: a.informative,
        seed: a.seed,
    })?;
    io::save_embeddings(&m, &a.out)?;
    match (a.weights_for, &a.weights_out) {
        (Some(e), Some(path)) => {
            let store = nn::model::synthetic_weights(&ModelSpec::preset(e, a.grid, a.grid), a.seed)?;
            io::save_tensors(&store, path)?;
        }
        (None, None) => {}
        _ => return Err(PipelineError::Usage("--weights-for and --weights-out go together".into())),
    }
    Ok(())
}
