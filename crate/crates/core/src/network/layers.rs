//! Forward and backward passes over a layer plan.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{self, ConvGeom, Real};
use super::{LayerKind, Mode, Network, Param};
use crate::dataset::derive_seed;

/// Per-layer state kept by a forward pass for the backward pass.
#[derive(Debug, Clone)]
enum Aux<T> {
    None,
    Pool(Vec<u32>),
    Norm(Vec<T>),
    /// Inverted-dropout multipliers (`0` or `1 / (1 - rate)`).
    Dropout(Vec<T>),
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub(super) version: u64,
    /// Input of every layer.
    inputs: Vec<Vec<T>>,
    aux: Vec<Aux<T>>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

/// Parameter gradients, laid out like [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub params: Vec<Option<Param<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if let (Some(a), Some(b)) = (a, b) {
                for (x, &y) in a.weight.iter_mut().zip(&b.weight) {
                    *x += y;
                }
                for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                    *x += y;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for p in self.params.iter_mut().flatten() {
            p.weight.iter_mut().for_each(|x| *x *= factor);
            p.bias.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// All gradient values, weights before biases, layer by layer.
    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.params
            .iter()
            .flatten()
            .flat_map(|p| p.weight.iter().chain(&p.bias).copied())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

fn conv_geom(kind: &LayerKind, [c, h, w]: [usize; 3], [_, oh, ow]: [usize; 3]) -> ConvGeom {
    match *kind {
        LayerKind::Conv {
            kernel,
            stride,
            padding,
            ..
        } => ConvGeom {
            in_channels: c,
            height: h,
            width: w,
            kernel,
            stride,
            padding,
            out_height: oh,
            out_width: ow,
        },
        _ => unreachable!("not a conv layer"),
    }
}

pub(super) fn forward<T: Real>(net: &Network<T>, input: Vec<T>, mode: Mode, seed: u64) -> ForwardCache<T> {
    let n = net.layers.len();
    let mut inputs = Vec::with_capacity(n);
    let mut aux = Vec::with_capacity(n);
    let mut x = input;
    let mut logits = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        let in_shape = net.shapes[i];
        let out_shape = net.shapes[i + 1];
        let out_len: usize = out_shape.iter().product();
        let (y, a) = match layer.kind {
            LayerKind::Conv { .. } => {
                let p = net.params[i].as_ref().expect("conv parameters");
                let g = conv_geom(&layer.kind, in_shape, out_shape);
                let mut y = vec![T::zero(); out_len];
                ops::conv_forward(&x, &g, &p.weight, &p.bias, &mut y);
                (y, Aux::None)
            }
            LayerKind::FullyConnected { .. } => {
                let p = net.params[i].as_ref().expect("fc parameters");
                let mut y = vec![T::zero(); out_len];
                ops::fc_forward(&x, &p.weight, &p.bias, &mut y);
                (y, Aux::None)
            }
            LayerKind::MaxPool { kernel, stride } => {
                let mut y = vec![T::zero(); out_len];
                let mut arg = vec![0u32; out_len];
                ops::maxpool_forward(&x, in_shape, kernel, stride, &mut y, &mut arg);
                (y, Aux::Pool(arg))
            }
            LayerKind::ResponseNorm { size, k, alpha, beta } => {
                let mut y = vec![T::zero(); out_len];
                let s = ops::lrn_forward(&x, in_shape, size, T::of(k), T::of(alpha), T::of(beta), &mut y);
                (y, Aux::Norm(s))
            }
            LayerKind::Relu => (x.iter().map(|&v| v.max(T::zero())).collect(), Aux::None),
            LayerKind::Dropout { rate } => {
                if mode == Mode::Eval || rate == 0.0 {
                    (x.clone(), Aux::None)
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
                    let keep = T::of(1.0 / (1.0 - rate));
                    let mask: Vec<T> = (0..x.len())
                        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                        .collect();
                    let y = x.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                    (y, Aux::Dropout(mask))
                }
            }
            LayerKind::Softmax => {
                logits = x.clone();
                (ops::softmax(&x), Aux::None)
            }
        };
        inputs.push(std::mem::replace(&mut x, y));
        aux.push(a);
    }
    ForwardCache {
        version: net.version,
        inputs,
        aux,
        logits,
        probs: x,
    }
}

pub(super) fn backward<T: Real>(net: &Network<T>, cache: &ForwardCache<T>, d_logits: &[T]) -> Gradients<T> {
    let mut grads = net.zero_gradients();
    let n = net.layers.len();
    // The softmax layer is folded into the logit gradient.
    let mut g = d_logits.to_vec();
    for i in (0..n - 1).rev() {
        let layer = &net.layers[i];
        let x = &cache.inputs[i];
        let in_shape = net.shapes[i];
        g = match (&layer.kind, &cache.aux[i]) {
            (LayerKind::Conv { .. }, _) => {
                let p = net.params[i].as_ref().expect("conv parameters");
                let gp = grads.params[i].as_mut().expect("conv gradients");
                let geom = conv_geom(&layer.kind, in_shape, net.shapes[i + 1]);
                ops::conv_backward(x, &geom, &p.weight, &g, &mut gp.weight, &mut gp.bias)
            }
            (LayerKind::FullyConnected { .. }, _) => {
                let p = net.params[i].as_ref().expect("fc parameters");
                let gp = grads.params[i].as_mut().expect("fc gradients");
                ops::fc_backward(x, &p.weight, &g, &mut gp.weight, &mut gp.bias)
            }
            (LayerKind::MaxPool { .. }, Aux::Pool(arg)) => {
                let mut gi = vec![T::zero(); x.len()];
                ops::maxpool_backward(&g, arg, &mut gi);
                gi
            }
            (LayerKind::ResponseNorm { size, alpha, beta, .. }, Aux::Norm(s)) => {
                ops::lrn_backward(x, s, &g, in_shape, *size, T::of(*alpha), T::of(*beta))
            }
            (LayerKind::Relu, _) => g
                .iter()
                .zip(x)
                .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                .collect(),
            (LayerKind::Dropout { .. }, Aux::Dropout(mask)) => {
                g.iter().zip(mask).map(|(&d, &m)| d * m).collect()
            }
            (LayerKind::Dropout { .. }, _) => g,
            (kind, _) => unreachable!("no backward rule for {kind:?}"),
        };
    }
    grads
}

impl<T: Real> ForwardCache<T> {
    /// Which ReLU units were active and which pool inputs won. Two passes with
    /// equal signatures lie on the same smooth piece of the loss surface.
    pub(super) fn kink_signature(&self, net: &Network<T>) -> Vec<u32> {
        let mut sig = Vec::new();
        for ((layer, x), a) in net.layers.iter().zip(&self.inputs).zip(&self.aux) {
            match (&layer.kind, a) {
                (LayerKind::Relu, _) => sig.extend(x.iter().map(|&v| u32::from(v > T::zero()))),
                (_, Aux::Pool(arg)) => sig.extend_from_slice(arg),
                _ => {}
            }
        }
        sig
    }
}

impl<T> ForwardCache<T> {
    /// Input of layer `i`, i.e. the output of layer `i - 1`.
    pub fn layer_input(&self, i: usize) -> &[T] {
        &self.inputs[i]
    }
}
