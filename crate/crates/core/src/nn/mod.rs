//! Layers, losses and backpropagation at every precision mode.
//!
//! Activations and gradients move between layers as binary32 carriers that
//! already sit on the storage grid of the model's tag. Under `Pure16` every
//! elementary step inside a layer is rounded to binary16; under `Mixed` a
//! layer computes in binary32 and its outputs are narrowed to binary16.

mod layers;
mod loss;

pub use layers::{Layer, LayerKind, Param};
pub use loss::{cross_entropy, softmax, ProbVector};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::b16::quantize;
use crate::error::{Error, Result};
use crate::tensor::{Arith, NumericEvents, Precision, Tensor};
use layers::Extra;

/// Clamp floor applied to the true-class probability before the log.
pub const CE_CLAMP: f32 = 6.103_515_6e-5; // 2^-14

/// BatchNorm variance offset and running-statistics momentum.
pub const BN_EPSILON: f32 = 1e-3;
pub const BN_MOMENTUM: f32 = 0.9;

/// How a precision tag is carried out inside a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Mode {
    pub arith: Arith,
    pub narrow_store: bool,
}

impl Mode {
    pub fn of(p: Precision) -> Mode {
        Mode { arith: p.arith(), narrow_store: p.stores_half() }
    }

    /// Round a constant into the arithmetic format.
    pub fn constant(self, x: f32) -> f32 {
        self.arith.round(x)
    }

    pub fn store(self, v: &mut [f32]) {
        if self.narrow_store {
            for x in v {
                *x = quantize(*x);
            }
        }
    }
}

/// A dense activation: shape plus row-major binary32 carriers.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Act {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Act {
    pub fn batch(&self) -> usize {
        self.shape[0]
    }
}

/// Ordered layer stack with a precision tag and the seed that initialized it.
#[derive(Clone, Debug)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    precision: Precision,
    seed: u64,
    // Bumped on every parameter change so stale caches are detected.
    version: u64,
}

/// Per-layer state retained by a training forward pass.
#[derive(Clone, Debug)]
pub struct Cache {
    version: u64,
    inputs: Vec<Act>,
    extras: Vec<Extra>,
    output: Act,
}

/// Result of a forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Network output `[N, classes]` (probabilities when the last layer is Softmax).
    pub output: Tensor,
    pub cache: Cache,
    pub events: NumericEvents,
}

/// Shape of each layer output given a per-sample input shape (batch axis omitted).
pub fn infer_shapes(input_shape: &[usize], kinds: &[LayerKind]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = Vec::with_capacity(kinds.len());
    let mut cur = input_shape.to_vec();
    for (i, kind) in kinds.iter().enumerate() {
        cur = kind.output_shape(&cur).map_err(|e| Error::Config(format!("layer {i} ({}): {e}", kind.name())))?;
        shapes.push(cur.clone());
    }
    Ok(shapes)
}

impl Model {
    /// Build a model and initialize its parameters from `seed`.
    pub fn new(input_shape: &[usize], kinds: &[LayerKind], precision: Precision, seed: u64) -> Result<Model> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Config(format!("invalid input shape {input_shape:?}")));
        }
        infer_shapes(input_shape, kinds)?;
        if let Some(pos) = kinds.iter().position(|k| matches!(k, LayerKind::Softmax)) {
            if pos + 1 != kinds.len() {
                return Err(Error::Config("Softmax may only appear as the last layer".into()));
            }
        }
        let layers = kinds.iter().map(|&k| Layer::new(k)).collect();
        let mut m = Model { input_shape: input_shape.to_vec(), layers, precision, seed, version: 0 };
        m.init_params(seed);
        Ok(m)
    }

    /// Rebuild from stored parameters (used by the model file loader).
    pub(crate) fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer>, precision: Precision, seed: u64) -> Model {
        Model { input_shape, layers, precision, seed, version: 0 }
    }

    /// Glorot-uniform weights drawn at binary32 from a ChaCha8 stream per
    /// layer, rounded to the storage width; zero biases; BatchNorm identity.
    pub fn init_params(&mut self, seed: u64) {
        self.seed = seed;
        let narrow = self.precision == Precision::Pure16;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            layer.init(&mut rng, narrow);
        }
        self.version += 1;
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(|l| l.kind()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(|p| p.len()).sum()
    }

    /// Fraction of parameter scalars that are not finite.
    pub fn non_finite_fraction(&self) -> f64 {
        let total = self.param_count();
        if total == 0 {
            return 0.0;
        }
        let bad: usize = self
            .layers
            .iter()
            .flat_map(|l| l.params())
            .map(|p| p.values().iter().filter(|v| !v.is_finite()).count())
            .sum();
        bad as f64 / total as f64
    }

    /// Same architecture and parameter values under another tag.
    ///
    /// Narrowing rounds every parameter to binary16; `Mixed` keeps binary32
    /// masters.
    pub fn cast(&self, precision: Precision) -> Model {
        let narrow = precision == Precision::Pure16;
        let mut layers = self.layers.clone();
        for l in &mut layers {
            for p in l.params_mut() {
                if narrow {
                    p.values_mut().iter_mut().for_each(|v| *v = quantize(*v));
                }
                p.zero_grad();
            }
        }
        Model { input_shape: self.input_shape.clone(), layers, precision, seed: self.seed, version: 0 }
    }

    fn check_input(&self, x: &Tensor) -> Result<Act> {
        let s = x.shape();
        if s.len() != self.input_shape.len() + 1 || s[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch { op: "forward", left: s.to_vec(), right: self.input_shape.clone() });
        }
        if x.precision() != self.precision {
            return Err(Error::PrecisionMismatch { op: "forward" });
        }
        Ok(Act { shape: s.to_vec(), data: x.to_vec() })
    }

    fn run(
        &self,
        x: Act,
        training: bool,
    ) -> Result<(Act, Vec<Act>, Vec<Extra>, Vec<Option<layers::Running>>, NumericEvents)> {
        let mode = Mode::of(self.precision);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut extras = Vec::with_capacity(self.layers.len());
        let mut running = Vec::with_capacity(self.layers.len());
        let mut events = NumericEvents::default();
        let mut cur = x;
        for layer in &self.layers {
            let (y, extra, upd, ev) = layer.forward(mode, &cur, training)?;
            events += ev;
            if training {
                inputs.push(cur);
                extras.push(extra);
            }
            running.push(upd);
            cur = y;
        }
        Ok((cur, inputs, extras, running, events))
    }

    /// Training-mode forward: batch statistics in BatchNorm (running
    /// statistics are updated), caches kept for [`Model::backward`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Forward> {
        let act = self.check_input(x)?;
        let (out, inputs, extras, running, events) = self.run(act, true)?;
        let mode = Mode::of(self.precision);
        let mut touched = false;
        for (layer, upd) in self.layers.iter_mut().zip(running) {
            if let Some(r) = upd {
                layer.apply_running(mode, r);
                touched = true;
            }
        }
        if touched {
            self.version += 1;
        }
        let output = Tensor::from_carriers(out.shape.clone(), out.data.clone(), self.precision);
        let cache = Cache { version: self.version, inputs, extras, output: out };
        Ok(Forward { output, cache, events })
    }

    /// Inference-mode forward (BatchNorm uses running statistics).
    pub fn predict(&self, x: &Tensor) -> Result<(Tensor, NumericEvents)> {
        let act = self.check_input(x)?;
        let (out, _, _, _, events) = self.run(act, false)?;
        Ok((Tensor::from_carriers(out.shape, out.data, self.precision), events))
    }

    /// Fill every parameter gradient from the fused softmax/cross-entropy
    /// gradient `(p - onehot) / N`. Requires a Softmax last layer.
    pub fn backward(&mut self, cache: &Cache, labels: &[usize]) -> Result<NumericEvents> {
        if cache.version != self.version {
            return Err(Error::contract("forward cache is stale (parameters changed since forward)"));
        }
        if !matches!(self.layers.last().map(|l| l.kind()), Some(LayerKind::Softmax)) {
            return Err(Error::contract("backward needs a Softmax output layer"));
        }
        let p = &cache.output;
        let (n, classes) = (p.shape[0], p.shape[1]);
        if labels.len() != n {
            return Err(Error::contract(format!("{} labels for a batch of {n}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::contract(format!("label {bad} out of range for {classes} classes")));
        }
        let mode = Mode::of(self.precision);
        let a = mode.arith;
        let nb = mode.constant(n as f32);
        let mut grad = p.data.clone();
        for (row, &label) in grad.chunks_mut(classes).zip(labels) {
            for (j, g) in row.iter_mut().enumerate() {
                let t = if j == label { a.sub(*g, 1.0) } else { *g };
                *g = a.div(t, nb);
            }
        }
        mode.store(&mut grad);
        let mut dy = Act { shape: p.shape.clone(), data: grad };
        let mut events = NumericEvents::scan(&dy.data);
        let last = self.layers.len() - 1;
        for i in (0..last).rev() {
            let (dx, ev) = self.layers[i].backward(mode, &cache.inputs[i], &cache.extras[i], &dy, i > 0)?;
            events += ev;
            dy = dx;
        }
        Ok(events)
    }

    /// Mean cross-entropy and events for a labelled batch (training-mode
    /// forward followed by backward); convenience for training loops.
    pub fn train_step_gradients(&mut self, x: &Tensor, labels: &[usize]) -> Result<(Tensor, f32, NumericEvents)> {
        let fwd = self.forward(x)?;
        let (loss, lev) = cross_entropy(&fwd.output, labels)?;
        let bev = self.backward(&fwd.cache, labels)?;
        Ok((fwd.output, loss, fwd.events + lev + bev))
    }
}

/// Per-layer shapes and a compact description, for reports.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LayerSummary {
    pub kind: LayerKind,
    pub output_shape: Vec<usize>,
    pub param_shapes: Vec<Vec<usize>>,
}

impl Model {
    pub fn summary(&self) -> Vec<LayerSummary> {
        let shapes = infer_shapes(&self.input_shape, &self.kinds()).unwrap_or_default();
        self.layers
            .iter()
            .zip(shapes)
            .map(|(l, s)| LayerSummary {
                kind: l.kind(),
                output_shape: s,
                param_shapes: l.params().iter().map(|p| p.shape().to_vec()).collect(),
            })
            .collect()
    }
}
