//! Network parameters and their initialization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// One dense layer: `weights` is `out_dim × in_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        LayerParams {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn weight_row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.in_dim..(j + 1) * self.in_dim]
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.in_dim * self.out_dim {
            return Err(Error::dim(
                "layer weights",
                self.in_dim * self.out_dim,
                self.weights.len(),
            ));
        }
        if self.bias.len() != self.out_dim {
            return Err(Error::dim("layer bias", self.out_dim, self.bias.len()));
        }
        Ok(())
    }
}

/// Ordered layer parameters of a binary classifier MLP.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
}

impl ModelParams {
    /// Validates layer shapes, chaining and the single-logit head.
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a model needs at least one layer".into()));
        }
        for (l, layer) in layers.iter().enumerate() {
            layer.check()?;
            if l > 0 && layer.in_dim != layers[l - 1].out_dim {
                return Err(Error::dim("layer chaining", layers[l - 1].out_dim, layer.in_dim));
            }
        }
        let head = layers.last().map_or(0, |l| l.out_dim);
        if head != 1 {
            return Err(Error::dim("output layer", 1, head));
        }
        Ok(ModelParams { layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }

    pub(crate) fn ensure_same_shape(&self, other: &ModelParams, context: &'static str) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::dim(context, self.layers.len(), other.layers.len()));
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if a.in_dim != b.in_dim {
                return Err(Error::dim(context, a.in_dim, b.in_dim));
            }
            if a.out_dim != b.out_dim {
                return Err(Error::dim(context, a.out_dim, b.out_dim));
            }
        }
        Ok(())
    }

    /// Every parameter in layer order: weights then bias, per layer.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.values_mut().for_each(|v| *v *= k);
        out
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.values()
            .zip(other.values())
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetConfig {
    /// Input dimension, hidden widths, then 1.
    pub layer_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub seed: u64,
}

impl NetConfig {
    /// `[input_dim, 64, 64, 1]` with ReLU hidden layers.
    pub fn with_input(input_dim: usize, seed: u64) -> Self {
        NetConfig {
            layer_dims: vec![input_dim, 64, 64, 1],
            hidden_activation: Activation::Relu,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Config(format!(
                "layer_dims needs at least an input and an output size, got {:?}",
                self.layer_dims
            )));
        }
        if let Some(pos) = self.layer_dims.iter().position(|&d| d == 0) {
            return Err(Error::Config(format!("layer_dims[{pos}] is zero")));
        }
        if self.layer_dims.last() != Some(&1) {
            return Err(Error::Config(format!(
                "the last layer dimension must be 1, got {:?}",
                self.layer_dims
            )));
        }
        Ok(())
    }
}

/// Weights uniform in `±1/√in_dim`, biases zero.
pub fn init_params(cfg: &NetConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = rng::derived_stream(cfg.seed, &[rng::tag::INIT]);
    let layers = cfg
        .layer_dims
        .windows(2)
        .map(|w| {
            let (in_dim, out_dim) = (w[0], w[1]);
            let bound = 1.0 / libm::sqrt(in_dim as f64);
            let mut layer = LayerParams::zeros(in_dim, out_dim);
            for v in layer.weights.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
            layer
        })
        .collect();
    ModelParams::new(layers)
}
