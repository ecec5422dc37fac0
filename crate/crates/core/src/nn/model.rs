use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{build_layer, Buffer, Init, Layer, Param, Shape3};
use super::ops;
use super::spec::{Extractor, ModelSpec, NUM_CLASSES};
use super::tensor::Tensor4;
use super::NnError;
use crate::io::TensorStore;

const META_ARCH: &str = "meta.arch";
const META_GRID: &str = "meta.grid";

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
    shapes: Vec<Shape3>,
    /// Index of the first layer backward has to reach.
    floor: usize,
}

/// Build `spec`. Frozen layers take their values from `weights`; trainable
/// ones are initialised from `seed`.
pub fn build_model(spec: &ModelSpec, weights: Option<&TensorStore>, seed: u64) -> Result<Model, NnError> {
    build(spec, weights, seed, false)
}

/// Randomly initialised stand-ins for every frozen tensor of `spec`, in the
/// layout pretrained weight files use. For tests and offline runs.
pub fn synthetic_weights(spec: &ModelSpec, seed: u64) -> Result<TensorStore, NnError> {
    let model = build(spec, None, seed, true)?;
    let mut store = TensorStore::new();
    for l in model.layers.iter().filter(|l| !l.is_trainable()) {
        for p in l.params() {
            store.insert(p.name.clone(), p.shape.clone(), p.value.clone()).expect("unique");
        }
        for b in l.buffers() {
            store.insert(b.name.clone(), vec![b.value.len()], b.value.clone()).expect("unique");
        }
    }
    Ok(store)
}

fn build(spec: &ModelSpec, weights: Option<&TensorStore>, seed: u64, fill_missing: bool) -> Result<Model, NnError> {
    if spec.input_channels == 0 || spec.grid_h == 0 || spec.grid_w == 0 {
        return Err(NnError::InvalidSpec("input shape must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = Init {
        rng: &mut rng,
        store: weights,
        fill_missing,
    };
    let mut shape = [spec.input_channels, spec.grid_h, spec.grid_w];
    let mut flat = false;
    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut shapes = Vec::with_capacity(spec.layers.len());
    let mut floor = None;
    for (i, ls) in spec.layers.iter().enumerate() {
        if ls.kind.forward_only() && !ls.frozen {
            return Err(NnError::InvalidSpec(format!("layer {i}: composite blocks must be frozen")));
        }
        if ls.kind.forward_only() && floor.is_some() {
            return Err(NnError::InvalidSpec(format!(
                "layer {i}: composite blocks must precede every trainable layer"
            )));
        }
        let (layer, out) = build_layer(ls, shape, &mut flat, &mut init)?;
        for p in layer.params() {
            let group_ok = p.name.starts_with("cae.") || p.name.starts_with("clf.");
            if !p.frozen && !group_ok {
                return Err(NnError::InvalidSpec(format!(
                    "trainable parameter {:?} must be named cae.* or clf.*",
                    p.name
                )));
            }
        }
        if floor.is_none() && layer.is_trainable() {
            floor = Some(i);
        }
        layers.push(layer);
        shapes.push(out);
        shape = out;
    }
    if !flat || shape != [NUM_CLASSES, 1, 1] {
        return Err(NnError::InvalidSpec(format!(
            "model must end in {NUM_CLASSES} flat logits, got {shape:?}"
        )));
    }
    let mut seen = std::collections::HashSet::new();
    let params = layers.iter().flat_map(|l| l.params()).map(|p| &p.name);
    let buffers = layers.iter().flat_map(|l| l.buffers()).map(|b| &b.name);
    for name in params.chain(buffers) {
        if !seen.insert(name.clone()) {
            return Err(NnError::InvalidSpec(format!("duplicate tensor name {name:?}")));
        }
    }
    Ok(Model {
        spec: spec.clone(),
        floor: floor.unwrap_or(layers.len()),
        layers,
        shapes,
    })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Output `(channels, height, width)` of every layer.
    pub fn layer_shapes(&self) -> &[Shape3] {
        &self.shapes
    }

    /// Number of leading layers that are never trained.
    pub fn frozen_prefix(&self) -> usize {
        self.floor
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn buffers(&self) -> Vec<&Buffer> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    /// Bring `x` to the input channel count: single-channel images are
    /// replicated.
    fn adapt(&self, x: &Tensor4) -> Result<Tensor4, NnError> {
        let [n, c, h, w] = x.dims();
        if h != self.spec.grid_h || w != self.spec.grid_w {
            return Err(NnError::ShapeMismatch(format!(
                "model expects {}x{} images, got {h}x{w}",
                self.spec.grid_h, self.spec.grid_w
            )));
        }
        let want = self.spec.input_channels;
        if c == want {
            return Ok(x.clone());
        }
        if c != 1 {
            return Err(NnError::ShapeMismatch(format!("model expects {want} channels, got {c}")));
        }
        let mut data = Vec::with_capacity(n * want * h * w);
        for i in 0..n {
            for _ in 0..want {
                data.extend_from_slice(x.item(i));
            }
        }
        Tensor4::new([n, want, h, w], data)
    }

    /// Run the first `count` layers in eval mode.
    pub fn forward_prefix(&mut self, x: &Tensor4, count: usize) -> Result<Tensor4, NnError> {
        let mut y = self.adapt(x)?;
        for l in self.layers.iter_mut().take(count) {
            y = l.forward(y, false, false)?;
        }
        Ok(y)
    }

    /// Logits `(n, 2, 1, 1)`. With `train`, trainable batch norms use batch
    /// statistics and the activations backward needs are kept.
    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Result<Tensor4, NnError> {
        let mut y = self.adapt(x)?;
        let floor = self.floor;
        for (i, l) in self.layers.iter_mut().enumerate() {
            let keep = train && i >= floor;
            y = l.forward(y, train, keep)?;
        }
        Ok(y)
    }

    /// Backpropagate logit gradients down to the first trainable layer.
    pub fn backward(&mut self, dlogits: Tensor4) -> Result<(), NnError> {
        let floor = self.floor;
        let mut dy = dlogits;
        for i in (floor..self.layers.len()).rev() {
            match self.layers[i].backward(dy, i > floor)? {
                Some(d) => dy = d,
                None => break,
            }
        }
        Ok(())
    }

    /// Mean cross-entropy of a training-mode forward, gradients stored on
    /// the parameters. Returns `(loss, logits)`.
    pub fn loss_and_backward(&mut self, x: &Tensor4, labels: &[u8]) -> Result<(f32, Tensor4), NnError> {
        let logits = self.forward(x, true)?;
        let (loss, grad) = ops::cross_entropy(logits.data(), logits.n(), NUM_CLASSES, labels)?;
        if !loss.is_finite() {
            return Err(NnError::NumericalDivergence(format!("loss is {loss}")));
        }
        self.backward(Tensor4::new(logits.dims(), grad)?)?;
        Ok((loss, logits))
    }

    /// Every parameter and buffer, plus the architecture tag for presets.
    pub fn state(&self) -> TensorStore {
        let mut store = TensorStore::new();
        if let Ok(e) = self.spec.name.parse::<Extractor>() {
            if ModelSpec::preset(e, self.spec.grid_h, self.spec.grid_w) == self.spec {
                store
                    .insert(META_ARCH, vec![1], vec![e.code() as f32])
                    .expect("fresh store");
                store
                    .insert(
                        META_GRID,
                        vec![2],
                        vec![self.spec.grid_h as f32, self.spec.grid_w as f32],
                    )
                    .expect("fresh store");
            }
        }
        for p in self.params() {
            store
                .insert(p.name.clone(), p.shape.clone(), p.value.clone())
                .expect("names are unique and values finite");
        }
        for b in self.buffers() {
            store
                .insert(b.name.clone(), vec![b.value.len()], b.value.clone())
                .expect("names are unique and values finite");
        }
        store
    }

    /// Overwrite every parameter and buffer from `store`.
    pub fn load_state(&mut self, store: &TensorStore) -> Result<(), NnError> {
        let lookup = |name: &str, len: usize| -> Result<Vec<f32>, NnError> {
            let e = store.get(name).ok_or_else(|| NnError::MissingWeight(name.into()))?;
            if e.data.len() != len {
                return Err(NnError::ShapeMismatch(format!(
                    "{name:?} holds {} values, expected {len}",
                    e.data.len()
                )));
            }
            Ok(e.data.clone())
        };
        let mut updates = Vec::new();
        for l in self.layers.iter() {
            for p in l.params() {
                updates.push(lookup(&p.name, p.value.len())?);
            }
            for b in l.buffers() {
                updates.push(lookup(&b.name, b.value.len())?);
            }
        }
        let mut it = updates.into_iter();
        for l in self.layers.iter_mut() {
            for p in l.params_mut() {
                p.value = it.next().unwrap();
            }
            for b in l.buffers_mut() {
                b.value = it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Rebuild a preset model from a checkpoint written by [`Model::state`].
    pub fn from_checkpoint(store: &TensorStore) -> Result<Model, NnError> {
        let arch = store
            .get(META_ARCH)
            .and_then(|e| e.data.first().copied())
            .ok_or_else(|| NnError::MissingWeight(META_ARCH.into()))?;
        let extractor = Extractor::from_code(arch as u32)
            .filter(|_| arch >= 0.0 && arch.fract() == 0.0)
            .ok_or_else(|| NnError::InvalidSpec(format!("unknown architecture code {arch}")))?;
        let grid = store
            .get(META_GRID)
            .filter(|e| e.data.len() == 2)
            .ok_or_else(|| NnError::MissingWeight(META_GRID.into()))?;
        let (h, w) = (grid.data[0] as usize, grid.data[1] as usize);
        let spec = ModelSpec::preset(extractor, h, w);
        let mut model = build_model(&spec, Some(store), 0)?;
        model.load_state(store)?;
        Ok(model)
    }
}
