//! Declarative model descriptions and the built-in presets.
//!
//! Parameter names use the prefixes `ext.` (pretrained extractor), `cae.`
//! (convolutional autoencoder block) and `clf.` (dense classifier). A
//! convolution or linear layer named `N` owns `N.w` and `N.b`; a batch norm
//! named `N` owns `N.gamma`, `N.beta`, `N.running_mean` and `N.running_var`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        name: String,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    },
    BatchNorm {
        name: String,
        momentum: f32,
        eps: f32,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Upsample {
        factor: usize,
    },
    Flatten,
    Linear {
        name: String,
        out_features: usize,
    },
    /// Residual bottleneck: 1×1 → 3×3 (grouped) → 1×1, each followed by batch
    /// norm, with a projected shortcut when the shape changes. Forward only.
    Bottleneck {
        name: String,
        width: usize,
        out_channels: usize,
        stride: usize,
        groups: usize,
    },
    /// Channel-split / shuffle unit with depthwise 3×3 convolutions. Forward only.
    ShuffleUnit {
        name: String,
        out_channels: usize,
        stride: usize,
    },
}

impl LayerKind {
    /// Whether the layer can only run forward (frozen, eval-mode).
    pub fn forward_only(&self) -> bool {
        matches!(self, LayerKind::Bottleneck { .. } | LayerKind::ShuffleUnit { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Channels the first layer consumes. Single-channel images are
    /// replicated to this count.
    pub input_channels: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub layers: Vec<LayerSpec>,
}

/// Which pretrained slice, if any, sits in front of the trainable block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extractor {
    None,
    AlexNet,
    ResNet,
    ResNeXt,
    ShuffleNet,
    Vgg16,
}

pub const EXTRACTORS: [Extractor; 6] = [
    Extractor::None,
    Extractor::AlexNet,
    Extractor::ResNet,
    Extractor::ResNeXt,
    Extractor::ShuffleNet,
    Extractor::Vgg16,
];

impl Extractor {
    pub fn as_str(self) -> &'static str {
        match self {
            Extractor::None => "none",
            Extractor::AlexNet => "alexnet",
            Extractor::ResNet => "resnet",
            Extractor::ResNeXt => "resnext",
            Extractor::ShuffleNet => "shufflenet",
            Extractor::Vgg16 => "vgg16",
        }
    }

    /// Stable numeric code stored in checkpoints.
    pub fn code(self) -> u32 {
        EXTRACTORS.iter().position(|&e| e == self).unwrap() as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        EXTRACTORS.get(code as usize).copied()
    }

    /// Feature maps the extractor emits (`1` without an extractor).
    pub fn feature_maps(self) -> usize {
        match self {
            Extractor::None => 1,
            Extractor::AlexNet => 192,
            Extractor::ResNet | Extractor::ResNeXt | Extractor::Vgg16 => 256,
            Extractor::ShuffleNet => 116,
        }
    }

    /// Default `(autoencoder, classifier)` learning rates.
    pub fn default_learning_rates(self) -> (f64, f64) {
        match self {
            Extractor::None => (1e-4, 1e-3),
            Extractor::AlexNet => (1e-5, 5e-4),
            Extractor::ResNet => (5e-5, 1e-4),
            Extractor::ResNeXt => (5e-5, 1e-3),
            Extractor::ShuffleNet => (5e-4, 1e-3),
            Extractor::Vgg16 => (5e-5, 1e-3),
        }
    }

    fn input_channels(self) -> usize {
        match self {
            Extractor::None => 1,
            _ => 3,
        }
    }

    /// Frozen extractor layers.
    pub fn layers(self) -> Vec<LayerSpec> {
        let kinds = match self {
            Extractor::None => vec![],
            Extractor::AlexNet => vec![
                conv("ext.conv1", 64, 11, 4, 2, true),
                LayerKind::Relu,
                maxpool(3, 2, 0),
                conv("ext.conv2", 192, 5, 1, 2, true),
                LayerKind::Relu,
            ],
            Extractor::Vgg16 => vec![
                conv("ext.conv1_1", 64, 3, 1, 1, true),
                LayerKind::Relu,
                conv("ext.conv1_2", 64, 3, 1, 1, true),
                LayerKind::Relu,
                maxpool(2, 2, 0),
                conv("ext.conv2_1", 128, 3, 1, 1, true),
                LayerKind::Relu,
                conv("ext.conv2_2", 128, 3, 1, 1, true),
                LayerKind::Relu,
                maxpool(2, 2, 0),
                conv("ext.conv3_1", 256, 3, 1, 1, true),
                LayerKind::Relu,
            ],
            Extractor::ResNet | Extractor::ResNeXt => {
                let groups = if self == Extractor::ResNeXt { 32 } else { 1 };
                let mut v = vec![
                    conv("ext.conv1", 64, 7, 2, 3, false),
                    batchnorm("ext.bn1"),
                    LayerKind::Relu,
                    maxpool(3, 2, 1),
                ];
                v.extend((0..3).map(|i| LayerKind::Bottleneck {
                    name: format!("ext.layer1.{i}"),
                    width: 128,
                    out_channels: 256,
                    stride: 1,
                    groups,
                }));
                v
            }
            Extractor::ShuffleNet => {
                let mut v = vec![
                    conv("ext.conv1", 24, 3, 2, 1, false),
                    batchnorm("ext.bn1"),
                    LayerKind::Relu,
                    maxpool(3, 2, 1),
                ];
                v.extend((0..4).map(|i| LayerKind::ShuffleUnit {
                    name: format!("ext.stage2.{i}"),
                    out_channels: 116,
                    stride: if i == 0 { 2 } else { 1 },
                }));
                v
            }
        };
        kinds
            .into_iter()
            .map(|kind| LayerSpec { kind, frozen: true })
            .collect()
    }
}

impl fmt::Display for Extractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Extractor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EXTRACTORS
            .iter()
            .copied()
            .find(|e| e.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                format!(
                    "unknown extractor {s:?}; expected one of {}",
                    EXTRACTORS.map(|e| e.as_str()).join(", ")
                )
            })
    }
}

pub const BN_MOMENTUM: f32 = 0.1;
pub const BN_EPS: f32 = 1e-5;
/// Output channels of the last decoder convolution.
pub const CAE_OUT_CHANNELS: usize = 16;
pub const CLASSIFIER_WIDTHS: [usize; 2] = [256, 64];
pub const NUM_CLASSES: usize = 2;

pub(crate) fn conv(name: &str, out: usize, k: usize, s: usize, p: usize, bias: bool) -> LayerKind {
    LayerKind::Conv {
        name: name.into(),
        out_channels: out,
        kernel: k,
        stride: s,
        padding: p,
        groups: 1,
        bias,
    }
}

pub(crate) fn batchnorm(name: &str) -> LayerKind {
    LayerKind::BatchNorm {
        name: name.into(),
        momentum: BN_MOMENTUM,
        eps: BN_EPS,
    }
}

fn maxpool(kernel: usize, stride: usize, padding: usize) -> LayerKind {
    LayerKind::MaxPool {
        kernel,
        stride,
        padding,
    }
}

/// Encoder (two stride-2 convolutions) and decoder (two upsample +
/// convolution stages), every convolution followed by batch norm and ReLU.
pub fn autoencoder_layers() -> Vec<LayerSpec> {
    let mut v = Vec::new();
    let mut block = |name: &str, out: usize, stride: usize, upsample: bool| {
        if upsample {
            v.push(LayerKind::Upsample { factor: 2 });
        }
        v.push(conv(name, out, 3, stride, 1, true));
        v.push(batchnorm(&format!("{name}_bn")));
        v.push(LayerKind::Relu);
    };
    block("cae.enc1", 64, 2, false);
    block("cae.enc2", 32, 2, false);
    block("cae.dec1", 64, 1, true);
    block("cae.dec2", CAE_OUT_CHANNELS, 1, true);
    v.into_iter()
        .map(|kind| LayerSpec { kind, frozen: false })
        .collect()
}

/// Flatten followed by three linear layers with ReLU between them.
pub fn classifier_layers() -> Vec<LayerSpec> {
    let [w1, w2] = CLASSIFIER_WIDTHS;
    [
        LayerKind::Flatten,
        LayerKind::Linear { name: "clf.fc1".into(), out_features: w1 },
        LayerKind::Relu,
        LayerKind::Linear { name: "clf.fc2".into(), out_features: w2 },
        LayerKind::Relu,
        LayerKind::Linear { name: "clf.fc3".into(), out_features: NUM_CLASSES },
    ]
    .into_iter()
    .map(|kind| LayerSpec { kind, frozen: false })
    .collect()
}

impl ModelSpec {
    /// Extractor → autoencoder → classifier for `grid_h × grid_w` images.
    pub fn preset(extractor: Extractor, grid_h: usize, grid_w: usize) -> Self {
        let mut layers = extractor.layers();
        layers.extend(autoencoder_layers());
        layers.extend(classifier_layers());
        Self {
            name: extractor.as_str().into(),
            input_channels: extractor.input_channels(),
            grid_h,
            grid_w,
            layers,
        }
    }
}
