//! Convolutional classifier built from scratch.
//!
//! Two presets share the same layer kinds: `full` reproduces the AlexNet-style
//! plan (five conv layers with 96/256/384/384/256 kernels, three FC layers of
//! 4096/4096/N units) on a 3x227x227 input, `mini` is a scaled-down variant
//! for desk-scale training on 3x257x32 range-Doppler tensors.
//!
//! Networks are generic over the scalar type: `Network<f32>` is the standard
//! precision used for training, `Network<f64>` the high-precision mode used by
//! gradient checks.

mod gradcheck;
mod layers;
pub mod ops;
mod sgd;
mod weights;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::class::VehicleClass;
use crate::dataset::derive_seed;
use crate::error::{Error, Result};
use crate::spectrogram::RdTensor;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use layers::{ForwardCache, Gradients};
pub use ops::Real;
pub use sgd::{sgd_step, Sgd, TrainConfig};
pub use weights::{load_weights, save_weights, LoadOptions, LoadReport, WEIGHTS_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Mini,
}

impl Preset {
    /// Input shape the preset is designed for.
    pub fn default_input(self) -> [usize; 3] {
        match self {
            Preset::Full => [3, 227, 227],
            Preset::Mini => [3, 257, 32],
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Full => "full",
            Preset::Mini => "mini",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Standard,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    /// Across-channel response normalization.
    ResponseNorm {
        size: usize,
        k: f64,
        alpha: f64,
        beta: f64,
    },
    FullyConnected {
        units: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv { .. } | LayerKind::FullyConnected { .. }
        )
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, [c, h, w]: [usize; 3]) -> Result<[usize; 3]> {
        let fail = |reason: String| Error::Layer {
            layer: self.name.clone(),
            reason,
        };
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if in_channels != c {
                    return Err(fail(format!(
                        "receptive field depth {in_channels} does not match {c} input channels"
                    )));
                }
                if kernel == 0 || stride == 0 || h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(fail(format!("kernel {kernel} does not fit input {h}x{w}")));
                }
                Ok([
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerKind::MaxPool { kernel, stride } => {
                if kernel == 0 || stride == 0 || h < kernel || w < kernel {
                    return Err(fail(format!("pool {kernel}x{kernel} does not fit input {h}x{w}")));
                }
                Ok([c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            LayerKind::FullyConnected { units } => {
                if units == 0 {
                    return Err(fail("zero units".into()));
                }
                Ok([units, 1, 1])
            }
            LayerKind::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(fail(format!("dropout rate {rate} outside [0, 1)")))
            }
            _ => Ok([c, h, w]),
        }
    }
}

/// Weights and biases of one parametric layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub weight: Vec<T>,
    pub weight_shape: Vec<usize>,
    pub bias: Vec<T>,
}

impl<T: Real> Param<T> {
    fn zeros_like<U>(other: &Param<U>) -> Self {
        Self {
            weight: vec![T::zero(); other.weight.len()],
            weight_shape: other.weight_shape.clone(),
            bias: vec![T::zero(); other.bias.len()],
        }
    }

    fn cast<U: Real>(&self) -> Param<U> {
        Param {
            weight: self.weight.iter().map(|v| U::of(v.as_f64())).collect(),
            weight_shape: self.weight_shape.clone(),
            bias: self.bias.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<LayerSpec>,
    /// `shapes[i]` is the input of layer `i`; the last entry is the output.
    shapes: Vec<[usize; 3]>,
    params: Vec<Option<Param<T>>>,
    version: u64,
}

pub(crate) fn preset_layers(preset: Preset, input: [usize; 3], num_classes: usize) -> Vec<LayerSpec> {
    use LayerKind::*;
    let conv = |name: &str, i, o, k, s, p| {
        LayerSpec::new(
            name,
            Conv {
                in_channels: i,
                out_channels: o,
                kernel: k,
                stride: s,
                padding: p,
            },
        )
    };
    let pool = |name: &str| LayerSpec::new(name, MaxPool { kernel: 3, stride: 2 });
    let norm = |name: &str| {
        LayerSpec::new(
            name,
            ResponseNorm {
                size: 5,
                k: 2.0,
                alpha: 1e-4,
                beta: 0.75,
            },
        )
    };
    let relu = |name: &str| LayerSpec::new(name, Relu);
    let fc = |name: &str, units| LayerSpec::new(name, FullyConnected { units });
    let drop = |name: &str| LayerSpec::new(name, Dropout { rate: 0.5 });
    let c0 = input[0];
    match preset {
        Preset::Full => vec![
            conv("conv1", c0, 96, 11, 4, 0),
            relu("relu1"),
            pool("pool1"),
            norm("norm1"),
            conv("conv2", 96, 256, 5, 1, 2),
            relu("relu2"),
            pool("pool2"),
            norm("norm2"),
            conv("conv3", 256, 384, 3, 1, 1),
            relu("relu3"),
            conv("conv4", 384, 384, 3, 1, 1),
            relu("relu4"),
            conv("conv5", 384, 256, 3, 1, 1),
            relu("relu5"),
            pool("pool5"),
            fc("fc6", 4096),
            relu("relu6"),
            drop("drop6"),
            fc("fc7", 4096),
            relu("relu7"),
            drop("drop7"),
            fc("fc8", num_classes),
            LayerSpec::new("prob", Softmax),
        ],
        Preset::Mini => vec![
            conv("conv1", c0, 16, 5, 2, 2),
            relu("relu1"),
            pool("pool1"),
            norm("norm1"),
            conv("conv2", 16, 32, 3, 1, 1),
            relu("relu2"),
            pool("pool2"),
            norm("norm2"),
            conv("conv3", 32, 32, 3, 1, 1),
            relu("relu3"),
            pool("pool3"),
            fc("fc4", 128),
            relu("relu4"),
            drop("drop4"),
            fc("fc5", num_classes),
            LayerSpec::new("prob", Softmax),
        ],
    }
}

/// Layer plan of a preset paired with each layer's output shape, without
/// allocating parameters.
pub fn preset_plan(preset: Preset, input_shape: [usize; 3], num_classes: usize) -> Result<Vec<(LayerSpec, [usize; 3])>> {
    let layers = preset_layers(preset, input_shape, num_classes);
    let shapes = shape_chain(&layers, input_shape)?;
    Ok(layers.into_iter().zip(shapes.into_iter().skip(1)).collect())
}

/// Input shape of every layer followed by the network output shape.
pub fn shape_chain(layers: &[LayerSpec], input_shape: [usize; 3]) -> Result<Vec<[usize; 3]>> {
    let mut shapes = vec![input_shape];
    for (i, layer) in layers.iter().enumerate() {
        if matches!(layer.kind, LayerKind::Softmax) && i + 1 != layers.len() {
            return Err(Error::Layer {
                layer: layer.name.clone(),
                reason: "softmax must be the last layer".into(),
            });
        }
        let next = layer.output_shape(*shapes.last().unwrap())?;
        shapes.push(next);
    }
    if !matches!(layers.last().map(|l| &l.kind), Some(LayerKind::Softmax)) {
        return Err(Error::Layer {
            layer: layers.last().map_or("<empty>".into(), |l| l.name.clone()),
            reason: "network must end with a softmax".into(),
        });
    }
    Ok(shapes)
}

/// Builds a preset network with freshly initialized parameters.
pub fn build_network<T: Real>(
    preset: Preset,
    input_shape: [usize; 3],
    num_classes: usize,
    seed: u64,
) -> Result<Network<T>> {
    if input_shape[0] != 3 {
        return Err(Error::shape([3, input_shape[1], input_shape[2]], input_shape));
    }
    if preset == Preset::Full && input_shape != [3, 227, 227] {
        return Err(Error::shape([3, 227, 227], input_shape));
    }
    Network::from_layers(preset_layers(preset, input_shape, num_classes), input_shape, seed)
}

impl<T: Real> Network<T> {
    /// Validates the shape chain and initializes parameters.
    ///
    /// Weights are zero-mean Gaussian with std `sqrt(2 / fan_in)` for layers
    /// feeding a ReLU and `sqrt(1 / fan_in)` otherwise; biases start at zero.
    pub fn from_layers(layers: Vec<LayerSpec>, input_shape: [usize; 3], seed: u64) -> Result<Self> {
        let shapes = shape_chain(&layers, input_shape)?;

        let mut params = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            let [c, h, w] = shapes[i];
            let (weight_shape, bias_len) = match layer.kind {
                LayerKind::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => (vec![out_channels, in_channels, kernel, kernel], out_channels),
                LayerKind::FullyConnected { units } => (vec![units, c * h * w], units),
                _ => {
                    params.push(None);
                    continue;
                }
            };
            let fan_in: usize = weight_shape[1..].iter().product();
            let feeds_relu = matches!(layers.get(i + 1).map(|l| &l.kind), Some(LayerKind::Relu));
            let gain = if feeds_relu { 2.0 } else { 1.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let count: usize = weight_shape.iter().product();
            let weight = (0..count).map(|_| T::of(normal.sample(&mut rng))).collect();
            params.push(Some(Param {
                weight,
                weight_shape,
                bias: vec![T::zero(); bias_len],
            }));
        }
        Ok(Self {
            layers,
            shapes,
            params,
            version: 0,
        })
    }

    pub fn precision(&self) -> Precision {
        if T::BITS >= 64 {
            Precision::High
        } else {
            Precision::Standard
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.shapes[0]
    }

    /// Output shape of every layer, in order.
    pub fn layer_output_shapes(&self) -> impl Iterator<Item = (&str, [usize; 3])> {
        self.layers
            .iter()
            .zip(&self.shapes[1..])
            .map(|(l, &s)| (l.name.as_str(), s))
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    pub fn params(&self) -> &[Option<Param<T>>] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// Bumped whenever parameters change; caches from older versions are stale.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mutable access to parameters. Invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [Option<Param<T>>] {
        self.version += 1;
        &mut self.params
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        for layer in &mut self.layers {
            if let LayerKind::Dropout { rate: r } = &mut layer.kind {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Layer {
                        layer: layer.name.clone(),
                        reason: format!("dropout rate {rate} outside [0, 1)"),
                    });
                }
                *r = rate;
            }
        }
        Ok(())
    }

    /// Re-initializes the fully connected layers with a new seed.
    pub fn reinit_fully_connected(&mut self, seed: u64) {
        let fresh = Network::<T>::from_layers(self.layers.clone(), self.shapes[0], seed)
            .expect("layer plan already validated");
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer.kind, LayerKind::FullyConnected { .. }) {
                self.params[i] = fresh.params[i].clone();
            }
        }
        self.version += 1;
    }

    /// Same network in another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            params: self.params.iter().map(|p| p.as_ref().map(Param::cast)).collect(),
            version: 0,
        }
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            params: self
                .params
                .iter()
                .map(|p| p.as_ref().map(Param::zeros_like))
                .collect(),
        }
    }

    fn check_input(&self, shape: [usize; 3], len: usize) -> Result<()> {
        if shape != self.shapes[0] || len != shape.iter().product::<usize>() {
            return Err(Error::shape(self.shapes[0], shape));
        }
        Ok(())
    }

    /// Runs the network on a tensor; returns class probabilities and the
    /// cache needed by [`Network::backward`].
    pub fn forward(&self, tensor: &RdTensor, mode: Mode, seed: u64) -> Result<(Vec<T>, ForwardCache<T>)> {
        self.check_input(tensor.shape(), tensor.data.len())?;
        let input: Vec<T> = tensor.data.iter().map(|&v| T::of(v as f64)).collect();
        self.forward_raw(input, mode, seed)
    }

    pub fn forward_raw(&self, input: Vec<T>, mode: Mode, seed: u64) -> Result<(Vec<T>, ForwardCache<T>)> {
        self.check_input(self.shapes[0], input.len())?;
        let cache = layers::forward(self, input, mode, seed);
        Ok((cache.probs.clone(), cache))
    }

    /// Reverse pass from the logit gradient to every parameter gradient.
    pub fn backward(&self, cache: &ForwardCache<T>, d_logits: &[T]) -> Result<Gradients<T>> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                network: self.version,
                cache: cache.version,
            });
        }
        if d_logits.len() != self.num_classes() {
            return Err(Error::LengthMismatch(d_logits.len(), self.num_classes()));
        }
        Ok(layers::backward(self, cache, d_logits))
    }

    /// Predicted class and scores in evaluation mode.
    pub fn predict(&self, tensor: &RdTensor) -> Result<(VehicleClass, Vec<f64>)> {
        let (probs, _) = self.forward(tensor, Mode::Eval, 0)?;
        let scores: Vec<f64> = probs.iter().map(|p| p.as_f64()).collect();
        let best = argmax(&scores);
        let class = VehicleClass::from_index(best).ok_or_else(|| Error::Layer {
            layer: "prob".into(),
            reason: format!("output {best} has no vehicle class"),
        })?;
        Ok((class, scores))
    }

    /// Loss and gradients of one labelled sample.
    pub fn sample_gradients(&self, tensor: &RdTensor, class: usize, mode: Mode, seed: u64) -> Result<(f64, Gradients<T>)> {
        let (probs, cache) = self.forward(tensor, mode, seed)?;
        let (loss, d_logits) = loss_and_grad(&probs, class);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss}")));
        }
        Ok((loss, self.backward(&cache, &d_logits)?))
    }
}

/// Mean loss and summed gradient over a batch of labelled samples.
///
/// The batch objective is the sum of per-sample cross-entropies, so its
/// gradient is the sum of per-sample gradients. Samples run in parallel; sample `j` uses dropout seed
/// `derive_seed(seed, j)` and per-sample gradients are summed in batch order,
/// so the result does not depend on thread scheduling.
pub fn batch_gradients<T: Real>(
    net: &Network<T>,
    batch: &[(&RdTensor, usize)],
    mode: Mode,
    seed: u64,
) -> Result<(f64, Gradients<T>)> {
    use rayon::prelude::*;
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let per_sample: Vec<(f64, Gradients<T>)> = batch
        .par_iter()
        .enumerate()
        .map(|(j, (t, class))| net.sample_gradients(t, *class, mode, derive_seed(seed, j as u64)))
        .collect::<Result<_>>()?;
    let mut iter = per_sample.into_iter();
    let (mut loss, mut total) = iter.next().unwrap();
    for (l, g) in iter {
        loss += l;
        total.add_assign(&g);
    }
    Ok((loss / batch.len() as f64, total))
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy of class probabilities against a true class, and its
/// gradient with respect to the logits (`p - onehot`).
pub fn loss_and_grad<T: Real>(probs: &[T], true_class: usize) -> (f64, Vec<T>) {
    let p = probs[true_class].as_f64().max(1e-12);
    let mut grad = probs.to_vec();
    grad[true_class] -= T::one();
    (-p.ln(), grad)
}

#[cfg(test)]
mod tests;
