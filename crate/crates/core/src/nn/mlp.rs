use alloc::format;
use alloc::vec::Vec;
use num_traits::Float;

use super::matrix::matmul_nt_acc;
use super::params::{Layer, ParamTree};
use super::tape::{Tape, TreeId, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y = act(x)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Glorot-uniform weights, zero bias.
pub fn glorot_layer<R: rand::Rng + ?Sized>(
    name: impl Into<alloc::string::String>,
    fan_out: usize,
    fan_in: usize,
    rng: &mut R,
) -> Layer {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let weight = (0..fan_out * fan_in)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Layer {
        name: name.into(),
        rows: fan_out,
        cols: fan_in,
        weight,
        bias: alloc::vec![0.0; fan_out],
    }
}

/// Plain multi-layer perceptron: activation on every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    params: ParamTree,
    activation: Activation,
}

impl Mlp {
    /// Wraps an existing parameter tree after checking that consecutive layers chain.
    pub fn from_params(params: ParamTree, activation: Activation) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Config("MLP needs at least one layer".into()));
        }
        for w in params.layers().windows(2) {
            if w[1].cols != w[0].rows {
                return Err(Error::Config(format!(
                    "layer '{}' expects {} inputs but '{}' produces {}",
                    w[1].name, w[1].cols, w[0].name, w[0].rows
                )));
            }
        }
        Ok(Mlp { params, activation })
    }

    /// Glorot-initialised network with the given layer widths (`[in, h1, ..., out]`).
    pub fn init<R: rand::Rng + ?Sized>(prefix: &str, widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid MLP widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| glorot_layer(format!("{prefix}.{i}"), w[1], w[0], rng))
            .collect();
        Mlp::from_params(ParamTree::new(layers), activation)
    }

    pub fn params(&self) -> &ParamTree {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamTree {
        &mut self.params
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.params.layer(0).cols
    }

    pub fn output_dim(&self) -> usize {
        self.params.layer(self.params.len() - 1).rows
    }

    /// Width of the last hidden layer (the input width of the output layer).
    pub fn last_hidden_dim(&self) -> usize {
        self.params.layer(self.params.len() - 1).cols
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        mlp_forward(&self.params, x, self.activation)
    }

    /// Records the network on `tape`; returns (output, last hidden activations).
    /// For a single-layer network the "last hidden" is the input itself.
    pub fn record(&self, tape: &mut Tape<'_>, tree: TreeId, x: Var) -> Result<(Var, Var)> {
        let n = self.params.len();
        let mut h = x;
        for i in 0..n - 1 {
            let a = tape.affine(h, tree, i)?;
            h = tape.activate(a, self.activation);
        }
        let out = tape.affine(h, tree, n - 1)?;
        Ok((out, h))
    }
}

/// `act(W_L … act(W_1 x + b_1) … + b_L)` with a linear final layer.
pub fn mlp_forward(params: &ParamTree, x: &[f64], activation: Activation) -> Result<Vec<f64>> {
    let n = params.len();
    if n == 0 {
        return Err(Error::Config("MLP needs at least one layer".into()));
    }
    let mut h: Vec<f64> = x.to_vec();
    for (i, layer) in params.layers().iter().enumerate() {
        if h.len() != layer.cols {
            return Err(Error::dim("mlp_forward input", layer.cols, h.len()));
        }
        let mut out = layer.bias.clone();
        matmul_nt_acc(&h, 1, layer.cols, &layer.weight, layer.rows, &mut out);
        if i + 1 < n {
            for v in &mut out {
                *v = activation.apply(*v);
            }
        }
        h = out;
    }
    Ok(h)
}
