//! The toy CNN used by the controlled experiments.
//!
//! | layer   | operation                       | output          |
//! |---------|---------------------------------|-----------------|
//! | conv1   | 5×5 conv, 3→10, stride 1, pad 2 | 64×64×10 (ReLU) |
//! | avgpool | 2×2 average, stride 2           | 32×32×10        |
//! | flatten |                                 | 10240           |
//! | linear1 | dense                           | 1000 (ReLU)     |
//! | linear2 | dense                           | 20 (ReLU)       |
//! | linear3 | dense                           | num_classes     |
//!
//! Tensors are `ndarray` arrays generic over [`Real`], so the same code runs
//! in `f32` for training and in `f64` for gradient checks. Backprop is
//! written out by hand for this one architecture.

mod io;
mod network;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, NdFloat};
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

pub use self::io::{decode_params, encode_params, load_params, load_params_expecting, save_params};
pub use self::network::{
    backward, cross_entropy, forward, images_to_batch, ForwardCache, INPUT_SIZE,
};
pub use self::train::{
    activations, evaluate, extract_representation, finetune_frozen, loss_and_gradients,
    predict, train_classifier, train_supcon, Adam, Evaluation, LossKind, TrainConfig,
    TrainReport,
};

pub const CONV_KERNEL: usize = 5;
pub const CONV_PADDING: usize = 2;
pub const CONV_CHANNELS: usize = 10;
pub const POOLED_SIZE: usize = 32;
pub const FLAT_DIM: usize = POOLED_SIZE * POOLED_SIZE * CONV_CHANNELS;
pub const HIDDEN1: usize = 1000;
pub const HIDDEN2: usize = 20;
/// Length of one im2col patch: 5·5·3.
pub const PATCH_LEN: usize = CONV_KERNEL * CONV_KERNEL * 3;

/// Floating-point element type of network tensors.
pub trait Real: NdFloat + Default {
    /// Tag stored in parameter files.
    const DTYPE: u8;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: u8 = 4;

    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        f64::from(self)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: u8 = 8;

    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Named stages of the network. Only conv1 and the linear layers carry
/// parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Layer {
    Conv1,
    AvgPool,
    Flatten,
    Linear1,
    Linear2,
    Linear3,
}

impl Layer {
    pub const ALL: [Layer; 6] = [
        Layer::Conv1,
        Layer::AvgPool,
        Layer::Flatten,
        Layer::Linear1,
        Layer::Linear2,
        Layer::Linear3,
    ];

    pub const PARAMETRIC: [Layer; 4] = [Layer::Conv1, Layer::Linear1, Layer::Linear2, Layer::Linear3];

    pub fn name(self) -> &'static str {
        match self {
            Layer::Conv1 => "conv1",
            Layer::AvgPool => "avgpool",
            Layer::Flatten => "flatten",
            Layer::Linear1 => "linear1",
            Layer::Linear2 => "linear2",
            Layer::Linear3 => "linear3",
        }
    }

    pub fn has_params(self) -> bool {
        Self::PARAMETRIC.contains(&self)
    }

    fn param_index(self) -> Option<usize> {
        Self::PARAMETRIC.iter().position(|&l| l == self)
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Layer::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::UnknownLayer(s.to_owned()))
    }
}

/// The layer table with a variable output width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub num_classes: usize,
}

impl NetworkConfig {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be at least 1".into()));
        }
        Ok(NetworkConfig { num_classes })
    }

    /// `(fan_in, fan_out)` of each parametric layer, in forward order.
    pub fn param_shapes(&self) -> [(usize, usize); 4] {
        [
            (PATCH_LEN, CONV_CHANNELS),
            (FLAT_DIM, HIDDEN1),
            (HIDDEN1, HIDDEN2),
            (HIDDEN2, self.num_classes),
        ]
    }

    /// Width of the per-image activation row at `layer`.
    pub fn activation_width(&self, layer: Layer) -> usize {
        match layer {
            Layer::Conv1 => INPUT_SIZE * INPUT_SIZE * CONV_CHANNELS,
            Layer::AvgPool | Layer::Flatten => FLAT_DIM,
            Layer::Linear1 => HIDDEN1,
            Layer::Linear2 => HIDDEN2,
            Layer::Linear3 => self.num_classes,
        }
    }
}

/// Weight matrix `(fan_in, fan_out)` and bias of one layer. The conv1
/// weight is stored in im2col form: row `(ky·5 + kx)·3 + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamPair<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> ParamPair<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        ParamPair {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view order: weight entries row-major, then bias.
    pub fn get_flat(&self, i: usize) -> T {
        let w = self.weight.len();
        if i < w {
            self.weight.as_slice().expect("standard layout")[i]
        } else {
            self.bias[i - w]
        }
    }

    pub fn set_flat(&mut self, i: usize, v: T) {
        let w = self.weight.len();
        if i < w {
            self.weight.as_slice_mut().expect("standard layout")[i] = v;
        } else {
            self.bias[i - w] = v;
        }
    }

    fn cast<U: Real>(&self) -> ParamPair<U> {
        ParamPair {
            weight: self.weight.mapv(|v| U::of(v.as_f64())),
            bias: self.bias.mapv(|v| U::of(v.as_f64())),
        }
    }
}

/// All learnable tensors plus per-layer freeze flags.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    config: NetworkConfig,
    layers: [ParamPair<T>; 4],
    frozen: [bool; 4],
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(config: NetworkConfig) -> Self {
        let shapes = config.param_shapes();
        ModelParams {
            config,
            layers: shapes.map(|(i, o)| ParamPair::zeros(i, o)),
            frozen: [false; 4],
        }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` init of weights and
    /// biases.
    pub fn init(config: NetworkConfig, seed: u64) -> Self {
        let mut params = Self::zeros(config);
        for (k, layer) in params.layers.iter_mut().enumerate() {
            let mut rng = seed::rng_for(seed, &[0x1417, k as u64]);
            let bound = 1.0 / (layer.weight.nrows() as f64).sqrt();
            layer
                .weight
                .mapv_inplace(|_| T::of(rng.random_range(-bound..bound)));
            layer
                .bias
                .mapv_inplace(|_| T::of(rng.random_range(-bound..bound)));
        }
        params
    }

    pub fn from_layers(
        config: NetworkConfig,
        layers: [ParamPair<T>; 4],
        frozen: [bool; 4],
    ) -> Result<Self> {
        for ((layer, pair), (i, o)) in Layer::PARAMETRIC
            .iter()
            .zip(&layers)
            .zip(config.param_shapes())
        {
            if pair.weight.dim() != (i, o) || pair.bias.len() != o {
                return Err(Error::Shape(format!(
                    "{layer}: expected weight {i}x{o} and bias {o}, got {:?} and {}",
                    pair.weight.dim(),
                    pair.bias.len()
                )));
            }
        }
        Ok(ModelParams {
            config,
            layers: layers.map(|p| ParamPair {
                weight: p.weight.as_standard_layout().into_owned(),
                bias: p.bias,
            }),
            frozen,
        })
    }

    pub fn config(&self) -> NetworkConfig {
        self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn index(layer: Layer) -> usize {
        layer
            .param_index()
            .unwrap_or_else(|| panic!("{layer} has no parameters"))
    }

    /// Panics for layers without parameters.
    pub fn layer(&self, layer: Layer) -> &ParamPair<T> {
        &self.layers[Self::index(layer)]
    }

    pub fn layer_mut(&mut self, layer: Layer) -> &mut ParamPair<T> {
        &mut self.layers[Self::index(layer)]
    }

    pub fn is_frozen(&self, layer: Layer) -> bool {
        layer.param_index().is_none_or(|i| self.frozen[i])
    }

    pub fn set_frozen(&mut self, layer: Layer, frozen: bool) {
        self.frozen[Self::index(layer)] = frozen;
    }

    /// Freezes every parametric layer up to and including `last`, and
    /// unfreezes the rest.
    pub fn freeze_until(&mut self, last: Layer) -> Result<()> {
        if !last.has_params() {
            return Err(Error::UnknownLayer(format!(
                "{last} has no parameters to freeze"
            )));
        }
        for layer in Layer::PARAMETRIC {
            self.set_frozen(layer, layer <= last);
        }
        Ok(())
    }

    pub fn frozen_flags(&self) -> [bool; 4] {
        self.frozen
    }

    pub fn layers(&self) -> impl Iterator<Item = (Layer, &ParamPair<T>)> + '_ {
        Layer::PARAMETRIC.into_iter().zip(self.layers.iter())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(ParamPair::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            layers: [
                self.layers[0].cast(),
                self.layers[1].cast(),
                self.layers[2].cast(),
                self.layers[3].cast(),
            ],
            frozen: self.frozen,
        }
    }
}

/// Gradient tensors keyed by layer. Frozen layers have no entry.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    pub entries: BTreeMap<Layer, ParamPair<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, layer: Layer) -> Option<&ParamPair<T>> {
        self.entries.get(&layer)
    }

    pub fn contains(&self, layer: Layer) -> bool {
        self.entries.contains_key(&layer)
    }
}
