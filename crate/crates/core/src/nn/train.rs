use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::Model;
use super::optim::Adam;
use super::tensor::Tensor4;
use super::NnError;
use crate::io::ImageDataset;

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Sample-weighted mean loss over the batches seen.
    pub train_loss: f64,
    /// Accuracy of the training-mode predictions made during the epoch.
    pub train_accuracy: f64,
    pub batches: usize,
}

/// Stack images `indices` of `ds` into an `(n, 1, h, w)` tensor.
pub fn batch_tensor(ds: &ImageDataset, indices: &[usize]) -> (Tensor4, Vec<u8>) {
    let mut data = Vec::with_capacity(indices.len() * ds.pixels_per_image());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        data.extend_from_slice(ds.image(i));
        labels.push(ds.labels()[i]);
    }
    let t = Tensor4::new([indices.len(), 1, ds.grid_h(), ds.grid_w()], data).expect("image size");
    (t, labels)
}

fn argmax_matches(logits: &Tensor4, labels: &[u8]) -> usize {
    logits
        .data()
        .chunks(logits.item_len())
        .zip(labels)
        .filter(|(row, &l)| {
            let pred = row
                .iter()
                .enumerate()
                .fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
            pred == l as usize
        })
        .count()
}

/// One pass over `ds` in shuffled mini-batches. A trailing batch of a
/// single sample is dropped because batch norm cannot normalise it.
pub fn train_epoch<R: Rng>(
    model: &mut Model,
    ds: &ImageDataset,
    opt: &mut Adam,
    batch_size: usize,
    epoch: usize,
    rng: &mut R,
) -> Result<EpochMetrics, NnError> {
    if batch_size < 2 {
        return Err(NnError::BatchTooSmall { batch: batch_size });
    }
    let mut order: Vec<usize> = (0..ds.n()).collect();
    order.shuffle(rng);
    let (mut loss_sum, mut correct, mut seen, mut batches) = (0.0f64, 0usize, 0usize, 0usize);
    for chunk in order.chunks(batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let (x, labels) = batch_tensor(ds, chunk);
        let (loss, logits) = model.loss_and_backward(&x, &labels)?;
        opt.step(model)?;
        loss_sum += loss as f64 * chunk.len() as f64;
        correct += argmax_matches(&logits, &labels);
        seen += chunk.len();
        batches += 1;
    }
    if seen == 0 {
        return Err(NnError::BatchTooSmall { batch: ds.n() });
    }
    Ok(EpochMetrics {
        epoch,
        train_loss: loss_sum / seen as f64,
        train_accuracy: correct as f64 / seen as f64,
        batches,
    })
}

/// Eval-mode logits for every image, `(n, 2)` flattened.
pub fn predict(model: &mut Model, ds: &ImageDataset) -> Result<Vec<f32>, NnError> {
    let mut out = Vec::with_capacity(ds.n() * 2);
    let all: Vec<usize> = (0..ds.n()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let (x, _) = batch_tensor(ds, chunk);
        out.extend_from_slice(model.forward(&x, false)?.data());
    }
    Ok(out)
}

/// Fraction of `ds` whose eval-mode argmax matches the label.
pub fn evaluate(model: &mut Model, ds: &ImageDataset) -> Result<f64, NnError> {
    if ds.n() == 0 {
        return Err(NnError::ShapeMismatch("empty dataset".into()));
    }
    let logits = predict(model, ds)?;
    let t = Tensor4::new([ds.n(), 2, 1, 1], logits)?;
    Ok(argmax_matches(&t, ds.labels()) as f64 / ds.n() as f64)
}
