//! Stateful `f32` layers: parameters, running statistics and the caches a
//! backward pass needs.

use rand::Rng;

use super::ops::{self, BnCache, ConvGeom};
use super::spec::{LayerKind, LayerSpec};
use super::tensor::Tensor4;
use super::NnError;
use crate::io::TensorStore;

/// Trainable (or frozen) tensor with its last computed gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub frozen: bool,
}

/// Non-trainable state saved with the model (batch norm running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub name: String,
    pub value: Vec<f32>,
}

/// `(channels, height, width)` of the activation flowing between layers;
/// after a flatten it is `(features, 1, 1)`.
pub type Shape3 = [usize; 3];

/// Where initial values come from while building.
pub(crate) struct Init<'a, R: Rng> {
    pub rng: &'a mut R,
    pub store: Option<&'a TensorStore>,
    /// Initialise frozen tensors absent from `store` like trainable ones
    /// instead of failing.
    pub fill_missing: bool,
}

impl<R: Rng> Init<'_, R> {
    fn stored(&self, name: &str, shape: &[usize]) -> Result<Vec<f32>, NnError> {
        let entry = self
            .store
            .and_then(|s| s.get(name))
            .ok_or_else(|| NnError::MissingWeight(name.to_owned()))?;
        if entry.shape != shape {
            return Err(NnError::ShapeMismatch(format!(
                "weight {name:?} has shape {:?}, layer expects {shape:?}",
                entry.shape
            )));
        }
        Ok(entry.data.clone())
    }

    fn absent_ok(&self, name: &str) -> bool {
        self.fill_missing && self.store.is_none_or(|s| s.get(name).is_none())
    }

    fn param(
        &mut self,
        name: String,
        shape: Vec<usize>,
        frozen: bool,
        fresh: impl FnOnce(&mut R, usize) -> Vec<f32>,
    ) -> Result<Param, NnError> {
        let len = shape.iter().product();
        let value = if frozen && !self.absent_ok(&name) {
            self.stored(&name, &shape)?
        } else {
            fresh(self.rng, len)
        };
        Ok(Param {
            name,
            shape,
            grad: vec![0.0; len],
            value,
            frozen,
        })
    }

    fn buffer(&self, name: String, len: usize, frozen: bool, fill: f32) -> Result<Buffer, NnError> {
        let value = if frozen && !self.absent_ok(&name) {
            self.stored(&name, &[len])?
        } else {
            vec![fill; len]
        };
        Ok(Buffer { name, value })
    }
}

/// Uniform on `±sqrt(6 / fan_in)`.
fn kaiming_uniform<R: Rng>(rng: &mut R, len: usize, fan_in: usize) -> Vec<f32> {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weight: Param,
    pub bias: Option<Param>,
    pub geom: ConvGeom,
    cache: Option<Tensor4>,
}

impl ConvLayer {
    fn weight_tensor(&self) -> Tensor4 {
        let s = &self.weight.shape;
        Tensor4::new([s[0], s[1], s[2], s[3]], self.weight.value.clone()).expect("weight shape")
    }

    fn forward(&mut self, x: Tensor4, cache: bool) -> Result<Tensor4, NnError> {
        let y = ops::conv2d_forward(
            &x,
            &self.weight_tensor(),
            self.bias.as_ref().map(|b| b.value.as_slice()),
            self.geom,
        )?;
        self.cache = cache.then_some(x);
        Ok(y)
    }

    fn backward(&mut self, dy: Tensor4, need_dx: bool) -> Result<Option<Tensor4>, NnError> {
        let x = self.cache.take().ok_or(NnError::NoForwardCache)?;
        let g = ops::conv2d_backward(&x, &self.weight_tensor(), &dy, self.geom, need_dx)?;
        if !self.weight.frozen {
            self.weight.grad = g.dw.into_data();
        }
        if let Some(b) = self.bias.as_mut().filter(|b| !b.frozen) {
            b.grad = g.db;
        }
        Ok(g.dx)
    }
}

#[derive(Debug, Clone)]
enum BnState {
    Train(BnCache<f32>),
    Eval,
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Buffer,
    pub running_var: Buffer,
    pub momentum: f32,
    pub eps: f32,
    pub frozen: bool,
    cache: Option<BnState>,
}

impl BatchNormLayer {
    fn forward(&mut self, x: Tensor4, train: bool, cache: bool) -> Result<Tensor4, NnError> {
        if train && !self.frozen {
            let (y, c) = ops::batchnorm_forward_train(&x, &self.gamma.value, &self.beta.value, self.eps)?;
            let count = (x.n() * x.h() * x.w()) as f32;
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let m = self.momentum;
            for ch in 0..x.c() {
                let rm = &mut self.running_mean.value[ch];
                *rm = (1.0 - m) * *rm + m * c.mean[ch];
                let rv = &mut self.running_var.value[ch];
                *rv = (1.0 - m) * *rv + m * c.var[ch] * unbias;
            }
            self.cache = cache.then_some(BnState::Train(c));
            Ok(y)
        } else {
            let y = ops::batchnorm_forward_eval(
                &x,
                &self.gamma.value,
                &self.beta.value,
                &self.running_mean.value,
                &self.running_var.value,
                self.eps,
            )?;
            self.cache = cache.then_some(BnState::Eval);
            Ok(y)
        }
    }

    fn backward(&mut self, dy: Tensor4) -> Result<Option<Tensor4>, NnError> {
        match self.cache.take().ok_or(NnError::NoForwardCache)? {
            BnState::Train(c) => {
                let (dx, dg, db) = ops::batchnorm_backward_train(&dy, &c, &self.gamma.value)?;
                self.gamma.grad = dg;
                self.beta.grad = db;
                Ok(Some(dx))
            }
            BnState::Eval => Ok(Some(ops::batchnorm_backward_eval(
                &dy,
                &self.gamma.value,
                &self.running_var.value,
                self.eps,
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: Param,
    pub bias: Param,
    pub in_features: usize,
    pub out_features: usize,
    cache: Option<Tensor4>,
}

impl LinearLayer {
    fn forward(&mut self, x: Tensor4, cache: bool) -> Result<Tensor4, NnError> {
        let n = x.n();
        if x.item_len() != self.in_features {
            return Err(NnError::ShapeMismatch(format!(
                "linear layer {} expects {} features, got {}",
                self.weight.name,
                self.in_features,
                x.item_len()
            )));
        }
        let y = ops::linear_forward(
            x.data(),
            n,
            &self.weight.value,
            &self.bias.value,
            self.in_features,
            self.out_features,
        )?;
        self.cache = cache.then_some(x);
        Tensor4::new([n, self.out_features, 1, 1], y)
    }

    fn backward(&mut self, dy: Tensor4, need_dx: bool) -> Result<Option<Tensor4>, NnError> {
        let x = self.cache.take().ok_or(NnError::NoForwardCache)?;
        let (dx, dw, db) = ops::linear_backward(
            x.data(),
            x.n(),
            &self.weight.value,
            dy.data(),
            self.in_features,
            self.out_features,
            need_dx,
        )?;
        if !self.weight.frozen {
            self.weight.grad = dw;
            self.bias.grad = db;
        }
        dx.map(|d| Tensor4::new(x.dims(), d)).transpose()
    }
}

/// Residual bottleneck block, eval mode only.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    main: Vec<Layer>,
    shortcut: Vec<Layer>,
}

impl Bottleneck {
    fn forward(&mut self, x: Tensor4) -> Result<Tensor4, NnError> {
        let mut identity = x.clone();
        for l in self.shortcut.iter_mut() {
            identity = l.forward(identity, false, false)?;
        }
        let mut y = x;
        for l in self.main.iter_mut() {
            y = l.forward(y, false, false)?;
        }
        if y.dims() != identity.dims() {
            return Err(NnError::ShapeMismatch("bottleneck shortcut shape".into()));
        }
        for (v, &s) in y.data_mut().iter_mut().zip(identity.data()) {
            *v = (*v + s).max(0.0);
        }
        Ok(y)
    }
}

/// Channel split / shuffle unit, eval mode only.
#[derive(Debug, Clone)]
pub struct ShuffleUnit {
    stride: usize,
    branch1: Vec<Layer>,
    branch2: Vec<Layer>,
}

fn run(layers: &mut [Layer], mut x: Tensor4) -> Result<Tensor4, NnError> {
    for l in layers.iter_mut() {
        x = l.forward(x, false, false)?;
    }
    Ok(x)
}

/// Channels `[0, at)` and `[at, c)` of `x`.
pub fn split_channels(x: &Tensor4, at: usize) -> (Tensor4, Tensor4) {
    let [n, c, h, w] = x.dims();
    let pix = h * w;
    let mut a = Vec::with_capacity(n * at * pix);
    let mut b = Vec::with_capacity(n * (c - at) * pix);
    for i in 0..n {
        let item = x.item(i);
        a.extend_from_slice(&item[..at * pix]);
        b.extend_from_slice(&item[at * pix..]);
    }
    (
        Tensor4::new([n, at, h, w], a).unwrap(),
        Tensor4::new([n, c - at, h, w], b).unwrap(),
    )
}

pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4, NnError> {
    let [n, ca, h, w] = a.dims();
    let [nb, cb, hb, wb] = b.dims();
    if (n, h, w) != (nb, hb, wb) {
        return Err(NnError::ShapeMismatch("channel concat of mismatched tensors".into()));
    }
    let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
    for i in 0..n {
        data.extend_from_slice(a.item(i));
        data.extend_from_slice(b.item(i));
    }
    Tensor4::new([n, ca + cb, h, w], data)
}

/// View channels as `(groups, c/groups)`, transpose, flatten back.
pub fn channel_shuffle(x: &Tensor4, groups: usize) -> Tensor4 {
    let [n, c, h, w] = x.dims();
    let per = c / groups;
    let pix = h * w;
    let mut out = Tensor4::zeros(x.dims());
    for i in 0..n {
        let src = x.item(i);
        let dst = &mut out.data_mut()[i * c * pix..(i + 1) * c * pix];
        for g in 0..groups {
            for j in 0..per {
                let from = g * per + j;
                let to = j * groups + g;
                dst[to * pix..(to + 1) * pix].copy_from_slice(&src[from * pix..(from + 1) * pix]);
            }
        }
    }
    out
}

impl ShuffleUnit {
    fn forward(&mut self, x: Tensor4) -> Result<Tensor4, NnError> {
        let out = if self.stride == 1 {
            let half = x.c() / 2;
            let (x1, x2) = split_channels(&x, half);
            let b2 = run(&mut self.branch2, x2)?;
            concat_channels(&x1, &b2)?
        } else {
            let b1 = run(&mut self.branch1, x.clone())?;
            let b2 = run(&mut self.branch2, x)?;
            concat_channels(&b1, &b2)?
        };
        Ok(channel_shuffle(&out, 2))
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(ConvLayer),
    BatchNorm(BatchNormLayer),
    Relu { cache: Option<Tensor4> },
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
        cache: Option<(Vec<usize>, [usize; 4])>,
    },
    Upsample { factor: usize },
    Flatten { cache: Option<[usize; 4]> },
    Linear(LinearLayer),
    Bottleneck(Box<Bottleneck>),
    ShuffleUnit(Box<ShuffleUnit>),
}

impl Layer {
    /// Run forward. Batch norm uses batch statistics only when `train` and
    /// the layer is not frozen. Inputs needed by `backward` are kept when
    /// `cache` is set.
    pub fn forward(&mut self, x: Tensor4, train: bool, cache: bool) -> Result<Tensor4, NnError> {
        match self {
            Layer::Conv(c) => c.forward(x, cache),
            Layer::BatchNorm(b) => b.forward(x, train, cache),
            Layer::Relu { cache: c } => {
                let y = ops::relu_forward(&x);
                *c = cache.then(|| y.clone());
                Ok(y)
            }
            Layer::MaxPool {
                kernel,
                stride,
                padding,
                cache: c,
            } => {
                let (y, arg) = ops::maxpool_forward(&x, *kernel, *stride, *padding)?;
                *c = cache.then_some((arg, x.dims()));
                Ok(y)
            }
            Layer::Upsample { factor } => Ok(ops::upsample_forward(&x, *factor)),
            Layer::Flatten { cache: c } => {
                let dims = x.dims();
                *c = cache.then_some(dims);
                x.reshape([dims[0], dims[1] * dims[2] * dims[3], 1, 1])
            }
            Layer::Linear(l) => l.forward(x, cache),
            Layer::Bottleneck(b) => b.forward(x),
            Layer::ShuffleUnit(s) => s.forward(x),
        }
    }

    /// Propagate `dy`, storing parameter gradients. Returns the input
    /// gradient when `need_dx`.
    pub fn backward(&mut self, dy: Tensor4, need_dx: bool) -> Result<Option<Tensor4>, NnError> {
        match self {
            Layer::Conv(c) => c.backward(dy, need_dx),
            Layer::BatchNorm(b) => b.backward(dy),
            Layer::Relu { cache } => {
                let y = cache.take().ok_or(NnError::NoForwardCache)?;
                Ok(Some(ops::relu_backward(&y, &dy)))
            }
            Layer::MaxPool { cache, .. } => {
                let (arg, dims) = cache.take().ok_or(NnError::NoForwardCache)?;
                Ok(Some(ops::maxpool_backward(&dy, &arg, dims)))
            }
            Layer::Upsample { factor } => Ok(Some(ops::upsample_backward(&dy, *factor))),
            Layer::Flatten { cache } => {
                let dims = cache.take().ok_or(NnError::NoForwardCache)?;
                Ok(Some(dy.reshape(dims)?))
            }
            Layer::Linear(l) => l.backward(dy, need_dx),
            Layer::Bottleneck(_) | Layer::ShuffleUnit(_) => Err(NnError::InvalidSpec(
                "extractor blocks are forward-only".into(),
            )),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv(c) => std::iter::once(&c.weight).chain(c.bias.as_ref()).collect(),
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            Layer::Bottleneck(b) => b.main.iter().chain(&b.shortcut).flat_map(|l| l.params()).collect(),
            Layer::ShuffleUnit(s) => s.branch1.iter().chain(&s.branch2).flat_map(|l| l.params()).collect(),
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(c) => std::iter::once(&mut c.weight).chain(c.bias.as_mut()).collect(),
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Bottleneck(b) => b
                .main
                .iter_mut()
                .chain(b.shortcut.iter_mut())
                .flat_map(|l| l.params_mut())
                .collect(),
            Layer::ShuffleUnit(s) => s
                .branch1
                .iter_mut()
                .chain(s.branch2.iter_mut())
                .flat_map(|l| l.params_mut())
                .collect(),
            _ => vec![],
        }
    }

    pub fn buffers(&self) -> Vec<&Buffer> {
        match self {
            Layer::BatchNorm(b) => vec![&b.running_mean, &b.running_var],
            Layer::Bottleneck(b) => b.main.iter().chain(&b.shortcut).flat_map(|l| l.buffers()).collect(),
            Layer::ShuffleUnit(s) => s.branch1.iter().chain(&s.branch2).flat_map(|l| l.buffers()).collect(),
            _ => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        match self {
            Layer::BatchNorm(b) => vec![&mut b.running_mean, &mut b.running_var],
            Layer::Bottleneck(b) => b
                .main
                .iter_mut()
                .chain(b.shortcut.iter_mut())
                .flat_map(|l| l.buffers_mut())
                .collect(),
            Layer::ShuffleUnit(s) => s
                .branch1
                .iter_mut()
                .chain(s.branch2.iter_mut())
                .flat_map(|l| l.buffers_mut())
                .collect(),
            _ => vec![],
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.params().iter().any(|p| !p.frozen)
    }
}

fn spatial(flat: bool, what: &str) -> Result<(), NnError> {
    if flat {
        return Err(NnError::InvalidSpec(format!("{what} after flatten")));
    }
    Ok(())
}

/// Build one layer for an input of `shape`; returns the layer and its
/// output shape.
pub(crate) fn build_layer<R: Rng>(
    spec: &LayerSpec,
    shape: Shape3,
    flat: &mut bool,
    init: &mut Init<'_, R>,
) -> Result<(Layer, Shape3), NnError> {
    let frozen = spec.frozen;
    let [c, h, w] = shape;
    match &spec.kind {
        LayerKind::Conv {
            name,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
            bias,
        } => {
            spatial(*flat, "convolution")?;
            let (out, k) = (*out_channels, *kernel);
            if *groups == 0 || c % groups != 0 || out % groups != 0 {
                return Err(NnError::InvalidSpec(format!(
                    "conv {name}: channels {c}->{out} not divisible by {groups} groups"
                )));
            }
            let (Some(oh), Some(ow)) = (
                ops::conv_out_size(h, k, *stride, *padding),
                ops::conv_out_size(w, k, *stride, *padding),
            ) else {
                return Err(NnError::ShapeMismatch(format!(
                    "conv {name}: kernel {k} does not fit {h}x{w}"
                )));
            };
            let cg = c / groups;
            let fan_in = cg * k * k;
            let weight = init.param(format!("{name}.w"), vec![out, cg, k, k], frozen, |r, n| {
                kaiming_uniform(r, n, fan_in)
            })?;
            let bias = if *bias {
                Some(init.param(format!("{name}.b"), vec![out], frozen, |_, n| vec![0.0; n])?)
            } else {
                None
            };
            let geom = ConvGeom {
                stride: *stride,
                padding: *padding,
                groups: *groups,
            };
            Ok((
                Layer::Conv(ConvLayer {
                    weight,
                    bias,
                    geom,
                    cache: None,
                }),
                [out, oh, ow],
            ))
        }
        LayerKind::BatchNorm { name, momentum, eps } => {
            spatial(*flat, "batch norm")?;
            let gamma = init.param(format!("{name}.gamma"), vec![c], frozen, |_, n| vec![1.0; n])?;
            let beta = init.param(format!("{name}.beta"), vec![c], frozen, |_, n| vec![0.0; n])?;
            let running_mean = init.buffer(format!("{name}.running_mean"), c, frozen, 0.0)?;
            let running_var = init.buffer(format!("{name}.running_var"), c, frozen, 1.0)?;
            Ok((
                Layer::BatchNorm(BatchNormLayer {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    momentum: *momentum,
                    eps: *eps,
                    frozen,
                    cache: None,
                }),
                shape,
            ))
        }
        LayerKind::Relu => Ok((Layer::Relu { cache: None }, shape)),
        LayerKind::MaxPool {
            kernel,
            stride,
            padding,
        } => {
            spatial(*flat, "max pool")?;
            let (Some(oh), Some(ow)) = (
                ops::conv_out_size(h, *kernel, *stride, *padding),
                ops::conv_out_size(w, *kernel, *stride, *padding),
            ) else {
                return Err(NnError::ShapeMismatch(format!(
                    "max pool {kernel} does not fit {h}x{w}"
                )));
            };
            if *padding >= *kernel {
                return Err(NnError::InvalidSpec("pool padding must be smaller than kernel".into()));
            }
            Ok((
                Layer::MaxPool {
                    kernel: *kernel,
                    stride: *stride,
                    padding: *padding,
                    cache: None,
                },
                [c, oh, ow],
            ))
        }
        LayerKind::Upsample { factor } => {
            spatial(*flat, "upsample")?;
            if *factor == 0 {
                return Err(NnError::InvalidSpec("upsample factor must be positive".into()));
            }
            Ok((Layer::Upsample { factor: *factor }, [c, h * factor, w * factor]))
        }
        LayerKind::Flatten => {
            *flat = true;
            Ok((Layer::Flatten { cache: None }, [c * h * w, 1, 1]))
        }
        LayerKind::Linear { name, out_features } => {
            if !*flat {
                return Err(NnError::InvalidSpec(format!("linear {name} before flatten")));
            }
            let in_f = c;
            let out = *out_features;
            let weight = init.param(format!("{name}.w"), vec![out, in_f], frozen, |r, n| {
                kaiming_uniform(r, n, in_f)
            })?;
            let bias = init.param(format!("{name}.b"), vec![out], frozen, |_, n| vec![0.0; n])?;
            Ok((
                Layer::Linear(LinearLayer {
                    weight,
                    bias,
                    in_features: in_f,
                    out_features: out,
                    cache: None,
                }),
                [out, 1, 1],
            ))
        }
        LayerKind::Bottleneck {
            name,
            width,
            out_channels,
            stride,
            groups,
        } => {
            spatial(*flat, "bottleneck")?;
            let conv = |suffix: &str, out: usize, k: usize, s: usize, p: usize, g: usize| LayerKind::Conv {
                name: format!("{name}.{suffix}"),
                out_channels: out,
                kernel: k,
                stride: s,
                padding: p,
                groups: g,
                bias: false,
            };
            let bn = |suffix: &str| super::spec::batchnorm(&format!("{name}.{suffix}"));
            let main = [
                conv("conv1", *width, 1, 1, 0, 1),
                bn("bn1"),
                LayerKind::Relu,
                conv("conv2", *width, 3, *stride, 1, *groups),
                bn("bn2"),
                LayerKind::Relu,
                conv("conv3", *out_channels, 1, 1, 0, 1),
                bn("bn3"),
            ];
            let (main, out_shape) = build_chain(&main, shape, init)?;
            let shortcut = if *stride != 1 || c != *out_channels {
                let kinds = [
                    conv("downsample.0", *out_channels, 1, *stride, 0, 1),
                    bn("downsample.1"),
                ];
                build_chain(&kinds, shape, init)?.0
            } else {
                vec![]
            };
            Ok((Layer::Bottleneck(Box::new(Bottleneck { main, shortcut })), out_shape))
        }
        LayerKind::ShuffleUnit {
            name,
            out_channels,
            stride,
        } => {
            spatial(*flat, "shuffle unit")?;
            let oup = *out_channels;
            if oup % 2 != 0 {
                return Err(NnError::InvalidSpec(format!("shuffle unit {name}: odd output {oup}")));
            }
            let bf = oup / 2;
            if *stride == 1 && c != 2 * bf {
                return Err(NnError::InvalidSpec(format!(
                    "shuffle unit {name}: stride 1 needs {oup} input channels, got {c}"
                )));
            }
            let conv = |suffix: &str, out: usize, k: usize, s: usize, p: usize, g: usize| LayerKind::Conv {
                name: format!("{name}.{suffix}"),
                out_channels: out,
                kernel: k,
                stride: s,
                padding: p,
                groups: g,
                bias: false,
            };
            let bn = |suffix: &str| super::spec::batchnorm(&format!("{name}.{suffix}"));
            let branch1 = if *stride > 1 {
                let kinds = [
                    conv("branch1.0", c, 3, *stride, 1, c),
                    bn("branch1.1"),
                    conv("branch1.2", bf, 1, 1, 0, 1),
                    bn("branch1.3"),
                    LayerKind::Relu,
                ];
                build_chain(&kinds, shape, init)?.0
            } else {
                vec![]
            };
            let in2 = if *stride > 1 { c } else { bf };
            let kinds = [
                conv("branch2.0", bf, 1, 1, 0, 1),
                bn("branch2.1"),
                LayerKind::Relu,
                conv("branch2.3", bf, 3, *stride, 1, bf),
                bn("branch2.4"),
                conv("branch2.5", bf, 1, 1, 0, 1),
                bn("branch2.6"),
                LayerKind::Relu,
            ];
            let (branch2, [_, oh, ow]) = build_chain(&kinds, [in2, h, w], init)?;
            Ok((
                Layer::ShuffleUnit(Box::new(ShuffleUnit {
                    stride: *stride,
                    branch1,
                    branch2,
                })),
                [oup, oh, ow],
            ))
        }
    }
}

fn build_chain<R: Rng>(
    kinds: &[LayerKind],
    mut shape: Shape3,
    init: &mut Init<'_, R>,
) -> Result<(Vec<Layer>, Shape3), NnError> {
    let mut flat = false;
    let mut out = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let spec = LayerSpec {
            kind: kind.clone(),
            frozen: true,
        };
        let (layer, s) = build_layer(&spec, shape, &mut flat, init)?;
        out.push(layer);
        shape = s;
    }
    Ok((out, shape))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_interleaves_halves() {
        let x = Tensor4::new([1, 4, 1, 1], vec![0., 1., 2., 3.]).unwrap();
        assert_eq!(channel_shuffle(&x, 2).data(), &[0., 2., 1., 3.]);
    }

    #[test]
    fn split_then_concat_is_identity() {
        let x = Tensor4::new([2, 3, 1, 2], (0..12).map(|v| v as f32).collect()).unwrap();
        let (a, b) = split_channels(&x, 1);
        assert_eq!(a.dims(), [2, 1, 1, 2]);
        assert_eq!(concat_channels(&a, &b).unwrap(), x);
    }
}
