//! Turn sample×feature embedding matrices into grayscale image datasets and
//! classify those images with a small convolutional network.
//!
//! The transformation fits a [`FeatureLayout`] once per dataset:
//!
//! 1. transpose the `n×d` embedding matrix so each feature becomes a point,
//! 2. embed the `d` feature points in 2D with exact t-SNE ([`tsne`]),
//! 3. take the convex hull, its minimum-area enclosing rectangle, and rotate
//!    the cloud so that rectangle lies flat ([`geometry`]),
//! 4. scale the rotated coordinates onto a pixel grid ([`raster`]).
//!
//! Every sample is then rendered by averaging the features that land on the
//! same pixel, and the whole pixel space is z-normalized. The [`nn`] module
//! holds the classifier: an optional frozen pretrained extractor, a
//! convolutional autoencoder block and a three-layer dense head.

pub mod geometry;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod synthetic;
pub mod tsne;

pub use io::{
    EmbeddingMatrix, FeatureLayout, FormatError, ImageDataset, NormalizationStats, Provenance,
    TensorEntry, TensorStore,
};
