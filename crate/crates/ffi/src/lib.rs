//! C ABI over the emb2img toolkit.
//!
//! Every fallible function returns an [`Emb2imgStatus`]; on failure a message
//! is stored per thread and can be read with [`emb2img_last_error`]. Objects
//! are opaque handles created by `*_load`, `*_fit`, `*_render` and friends and
//! released by the matching `*_free`. Out-pointers are written only on
//! success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use emb2img::io::{self, EmbeddingMatrix, FeatureLayout, FormatError, ImageDataset};
use emb2img::nn::{evaluate, AdamConfig, Extractor, Model, ModelSpec, NnError};
use emb2img::pipeline::{self, PipelineError, TrainOptions};
use emb2img::raster::{self, RasterError};
use emb2img::tsne::TsneConfig;

/// Result of every fallible call. Nonzero values match the `emb2img` CLI
/// exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Emb2imgStatus {
    Ok = 0,
    Io = 10,
    MalformedHeader = 11,
    DimensionMismatch = 12,
    NonFiniteValue = 13,
    InvalidLabel = 14,
    DuplicateName = 15,
    InvariantViolation = 16,
    TsneInvalidConfig = 20,
    BandwidthSearchFailed = 21,
    TsneDivergence = 22,
    DegenerateGeometry = 30,
    ZeroExtent = 40,
    LengthMismatch = 41,
    InvalidGrid = 42,
    ShapeMismatch = 50,
    BatchTooSmall = 51,
    MissingWeight = 52,
    TrainingDivergence = 53,
    InvalidSpec = 54,
    NoForwardCache = 55,
    Usage = 60,
    IndexOutOfRange = 61,
    Png = 62,
    NullArgument = 90,
    InvalidUtf8 = 91,
    Panic = 99,
}

impl Emb2imgStatus {
    fn of(e: &PipelineError) -> Self {
        use Emb2imgStatus::*;
        match e.exit_code() {
            10 => Io,
            11 => MalformedHeader,
            12 => DimensionMismatch,
            13 => NonFiniteValue,
            14 => InvalidLabel,
            15 => DuplicateName,
            16 => InvariantViolation,
            20 => TsneInvalidConfig,
            21 => BandwidthSearchFailed,
            22 => TsneDivergence,
            30 => DegenerateGeometry,
            40 => ZeroExtent,
            41 => LengthMismatch,
            42 => InvalidGrid,
            50 => ShapeMismatch,
            51 => BatchTooSmall,
            52 => MissingWeight,
            53 => TrainingDivergence,
            54 => InvalidSpec,
            55 => NoForwardCache,
            61 => IndexOutOfRange,
            62 => Png,
            _ => Usage,
        }
    }
}

/// Pretrained extractor placed in front of the trainable layers.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Emb2imgExtractor {
    None = 0,
    Alexnet = 1,
    Resnet = 2,
    Resnext = 3,
    Shufflenet = 4,
    Vgg16 = 5,
}

impl From<Emb2imgExtractor> for Extractor {
    fn from(e: Emb2imgExtractor) -> Self {
        match e {
            Emb2imgExtractor::None => Extractor::None,
            Emb2imgExtractor::Alexnet => Extractor::AlexNet,
            Emb2imgExtractor::Resnet => Extractor::ResNet,
            Emb2imgExtractor::Resnext => Extractor::ResNeXt,
            Emb2imgExtractor::Shufflenet => Extractor::ShuffleNet,
            Emb2imgExtractor::Vgg16 => Extractor::Vgg16,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct Emb2imgTsneConfig {
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

impl From<TsneConfig> for Emb2imgTsneConfig {
    fn from(c: TsneConfig) -> Self {
        Self {
            perplexity: c.perplexity,
            n_iter: c.n_iter,
            learning_rate: c.learning_rate,
            early_exaggeration_factor: c.early_exaggeration_factor,
            early_exaggeration_iters: c.early_exaggeration_iters,
            momentum_initial: c.momentum_initial,
            momentum_final: c.momentum_final,
            momentum_switch_iter: c.momentum_switch_iter,
            seed: c.seed,
        }
    }
}

impl From<Emb2imgTsneConfig> for TsneConfig {
    fn from(c: Emb2imgTsneConfig) -> Self {
        Self {
            perplexity: c.perplexity,
            n_iter: c.n_iter,
            learning_rate: c.learning_rate,
            early_exaggeration_factor: c.early_exaggeration_factor,
            early_exaggeration_iters: c.early_exaggeration_iters,
            momentum_initial: c.momentum_initial,
            momentum_final: c.momentum_final,
            momentum_switch_iter: c.momentum_switch_iter,
            seed: c.seed,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct Emb2imgTrainOptions {
    pub extractor: Emb2imgExtractor,
    pub cae_lr: f64,
    pub clf_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub split: f64,
    pub seed: u64,
}

pub struct Emb2imgEmbeddings(EmbeddingMatrix);
pub struct Emb2imgLayout(FeatureLayout);
pub struct Emb2imgImages(ImageDataset);
pub struct Emb2imgModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn emb2img_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

enum Failure {
    Pipeline(PipelineError),
    Status(Emb2imgStatus, String),
}

macro_rules! failure_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Pipeline(e.into())
            }
        }
    )*};
}

failure_from!(PipelineError, FormatError, RasterError, NnError);

type Outcome = Result<(), Failure>;

fn guard(f: impl FnOnce() -> Outcome) -> Emb2imgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Emb2imgStatus::Ok,
        Ok(Err(Failure::Pipeline(e))) => {
            set_error(e.to_string());
            Emb2imgStatus::of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            Emb2imgStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(Emb2imgStatus::NullArgument, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure::Status(Emb2imgStatus::InvalidUtf8, "path is not valid UTF-8".into()))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Outcome {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

// ---- embeddings ----

/// Copy an `n×d` row-major matrix and `n` labels into a new handle.
///
/// # Safety
/// `values` must point to `n*d` floats and `labels` to `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn emb2img_embeddings_new(
    n: usize,
    d: usize,
    values: *const f32,
    labels: *const u8,
    out: *mut *mut Emb2imgEmbeddings,
) -> Emb2imgStatus {
    guard(|| {
        if values.is_null() || labels.is_null() {
            return Err(null("values or labels"));
        }
        let len = n.checked_mul(d).ok_or_else(|| {
            Failure::Status(Emb2imgStatus::DimensionMismatch, "n*d overflows".into())
        })?;
        let v = std::slice::from_raw_parts(values, len).to_vec();
        let l = std::slice::from_raw_parts(labels, n).to_vec();
        put(out, Emb2imgEmbeddings(EmbeddingMatrix::new(n, d, v, l)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emb2img_embeddings_load(
    path: *const c_char,
    out: *mut *mut Emb2imgEmbeddings,
) -> Emb2imgStatus {
    guard(|| put(out, Emb2imgEmbeddings(io::load_embeddings(path_arg(path)?)?)))
}

/// # Safety
/// `m` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn emb2img_embeddings_save(m: *const Emb2imgEmbeddings, path: *const c_char) -> Emb2imgStatus {
    guard(|| Ok(io::save_embeddings(&obj(m, "embeddings")?.0, path_arg(path)?)?))
}

/// # Safety
/// `m` must be a live handle; `n` and `d` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn emb2img_embeddings_shape(
    m: *const Emb2imgEmbeddings,
    n: *mut usize,
    d: *mut usize,
) -> Emb2imgStatus {
    guard(|| {
        let m = &obj(m, "embeddings")?.0;
        if n.is_null() || d.is_null() {
            return Err(null("output pointer"));
        }
        *n = m.n();
        *d = m.d();
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn emb2img_embeddings_free(m: *mut Emb2imgEmbeddings) {
    free(m)
}

// ---- layout ----

#[no_mangle]
pub extern "C" fn emb2img_tsne_config_default() -> Emb2imgTsneConfig {
    TsneConfig::default().into()
}

/// Fit a feature layout: t-SNE on the features, minimum-area rectangle
/// alignment, and placement on a `grid_w×grid_h` grid.
///
/// # Safety
/// `m` must be a live handle; `cfg` null (defaults) or valid; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn emb2img_layout_fit(
    m: *const Emb2imgEmbeddings,
    grid_w: usize,
    grid_h: usize,
    cfg: *const Emb2imgTsneConfig,
    out: *mut *mut Emb2imgLayout,
) -> Emb2imgStatus {
    guard(|| {
        let m = &obj(m, "embeddings")?.0;
        let cfg = cfg.as_ref().map_or_else(TsneConfig::default, |c| (*c).into());
        put(out, Emb2imgLayout(pipeline::fit_layout(m, grid_w, grid_h, &cfg)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emb2img_layout_load(path: *const c_char, out: *mut *mut Emb2imgLayout) -> Emb2imgStatus {
    guard(|| put(out, Emb2imgLayout(io::load_layout(path_arg(path)?)?)))
}

/// # Safety
/// `l` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn emb2img_layout_save(l: *const Emb2imgLayout, path: *const c_char) -> Emb2imgStatus {
    guard(|| Ok(io::save_layout(&obj(l, "layout")?.0, path_arg(path)?)?))
}

/// Copy the row-major `grid_h×grid_w` feature counts into `buf`.
///
/// # Safety
/// `l` must be a live handle and `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn emb2img_layout_density(l: *const Emb2imgLayout, buf: *mut u32, len: usize) -> Emb2imgStatus {
    guard(|| copy_out(obj(l, "layout")?.0.density(), buf, len))
}

/// # Safety
/// `l` must be a live handle; `w` and `h` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn emb2img_layout_grid(l: *const Emb2imgLayout, w: *mut usize, h: *mut usize) -> Emb2imgStatus {
    guard(|| {
        let l = &obj(l, "layout")?.0;
        if w.is_null() || h.is_null() {
            return Err(null("output pointer"));
        }
        *w = l.grid_w();
        *h = l.grid_h();
        Ok(())
    })
}

/// # Safety
/// `l` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn emb2img_layout_free(l: *mut Emb2imgLayout) {
    free(l)
}

unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, len: usize) -> Outcome {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len != src.len() {
        return Err(Failure::Status(
            Emb2imgStatus::LengthMismatch,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), buf, len);
    Ok(())
}

// ---- images ----

/// # Safety
/// `m` and `l` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emb2img_images_render(
    m: *const Emb2imgEmbeddings,
    l: *const Emb2imgLayout,
    out: *mut *mut Emb2imgImages,
) -> Emb2imgStatus {
    guard(|| {
        let ds = raster::render_dataset(&obj(m, "embeddings")?.0, &obj(l, "layout")?.0)?;
        put(out, Emb2imgImages(ds))
    })
}

/// Z-normalize over all pixels of all images into a new handle.
///
/// # Safety
/// `ds` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emb2img_images_normalize(
    ds: *const Emb2imgImages,
    epsilon: f32,
    out: *mut *mut Emb2imgImages,
) -> Emb2imgStatus {
    guard(|| put(out, Emb2imgImages(raster::z_normalize(&obj(ds, "images")?.0, epsilon)?)))
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emb2img_images_load(path: *const c_char, out: *mut *mut Emb2imgImages) -> Emb2imgStatus {
    guard(|| put(out, Emb2imgImages(io::load_images(path_arg(path)?)?)))
}

/// # Safety
/// `ds` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn emb2img_images_save(ds: *const Emb2imgImages, path: *const c_char) -> Emb2imgStatus {
    guard(|| Ok(io::save_images(&obj(ds, "images")?.0, path_arg(path)?)?))
}

/// # Safety
/// `ds` must be a live handle; the out-pointers valid.
#[no_mangle]
pub unsafe extern "C" fn emb2img_images_shape(
    ds: *const Emb2imgImages,
    n: *mut usize,
    w: *mut usize,
    h: *mut usize,
) -> Emb2imgStatus {
    guard(|| {
        let ds = &obj(ds, "images")?.0;
        if n.is_null() || w.is_null() || h.is_null() {
            return Err(null("output pointer"));
        }
        *n = ds.n();
        *w = ds.grid_w();
        *h = ds.grid_h();
        Ok(())
    })
}

/// Copy all pixels, image-major then row-major, into `buf`.
///
/// # Safety
/// `ds` must be a live handle and `buf` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn emb2img_images_pixels(ds: *const Emb2imgImages, buf: *mut f32, len: usize) -> Emb2imgStatus {
    guard(|| copy_out(obj(ds, "images")?.0.pixels(), buf, len))
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn emb2img_images_free(ds: *mut Emb2imgImages) {
    free(ds)
}

// ---- model ----

#[no_mangle]
pub extern "C" fn emb2img_train_options_default() -> Emb2imgTrainOptions {
    let (cae_lr, clf_lr) = Extractor::None.default_learning_rates();
    Emb2imgTrainOptions {
        extractor: Emb2imgExtractor::None,
        cae_lr,
        clf_lr,
        epochs: 15,
        batch_size: 32,
        split: 0.8,
        seed: 0,
    }
}

/// Train on a normalized dataset. `weights_path` names a TEN1 file with the
/// extractor tensors and may be null when no extractor is used. The final
/// validation accuracy is written to `val_accuracy` when it is not null.
///
/// # Safety
/// `ds` must be a live handle, `opts` and `out` valid pointers, and
/// `weights_path` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn emb2img_model_train(
    ds: *const Emb2imgImages,
    opts: *const Emb2imgTrainOptions,
    weights_path: *const c_char,
    out: *mut *mut Emb2imgModel,
    val_accuracy: *mut f64,
) -> Emb2imgStatus {
    guard(|| {
        let ds = &obj(ds, "images")?.0;
        let o = *obj(opts, "options")?;
        let weights = if weights_path.is_null() {
            None
        } else {
            Some(io::load_tensors(path_arg(weights_path)?)?)
        };
        let spec = ModelSpec::preset(o.extractor.into(), ds.grid_h(), ds.grid_w());
        let train = TrainOptions {
            adam: AdamConfig::new(o.cae_lr, o.clf_lr),
            epochs: o.epochs,
            batch_size: o.batch_size,
            split: o.split,
            seed: o.seed,
        };
        let (model, summary) = pipeline::train_model(ds, &spec, weights.as_ref(), &train, |_| Ok(()))?;
        if !val_accuracy.is_null() {
            *val_accuracy = summary.final_val_accuracy;
        }
        put(out, Emb2imgModel(model))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emb2img_model_load(path: *const c_char, out: *mut *mut Emb2imgModel) -> Emb2imgStatus {
    guard(|| {
        let store = io::load_tensors(path_arg(path)?)?;
        put(out, Emb2imgModel(Model::from_checkpoint(&store)?))
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn emb2img_model_save(model: *const Emb2imgModel, path: *const c_char) -> Emb2imgStatus {
    guard(|| Ok(io::save_tensors(&obj(model, "model")?.0.state(), path_arg(path)?)?))
}

/// Classification accuracy of `model` on every image of `ds`.
///
/// # Safety
/// `model` and `ds` must be live handles; `accuracy` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn emb2img_model_evaluate(
    model: *mut Emb2imgModel,
    ds: *const Emb2imgImages,
    accuracy: *mut f64,
) -> Emb2imgStatus {
    guard(|| {
        let model = &mut model.as_mut().ok_or_else(|| null("model"))?.0;
        let ds = &obj(ds, "images")?.0;
        if accuracy.is_null() {
            return Err(null("accuracy"));
        }
        *accuracy = evaluate(model, ds)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn emb2img_model_free(model: *mut Emb2imgModel) {
    free(model)
}
