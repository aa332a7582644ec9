use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{ensure_len, Result};

/// One dense layer: weight `rows × cols` (out × in), bias of length `rows`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        ensure_len("layer weight", rows * cols, weight.len())?;
        ensure_len("layer bias", rows, bias.len())?;
        Ok(Layer {
            name: name.into(),
            rows,
            cols,
            weight,
            bias,
        })
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Layer {
            name: name.into(),
            rows,
            cols,
            weight: alloc::vec![0.0; rows * cols],
            bias: alloc::vec![0.0; rows],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Ordered collection of named layers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamTree {
    layers: Vec<Layer>,
}

impl ParamTree {
    pub fn new(layers: Vec<Layer>) -> Self {
        ParamTree { layers }
    }

    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer(&self, i: usize) -> &Layer {
        &self.layers[i]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn zeros_like(&self) -> ParamTree {
        ParamTree {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.name.clone(), l.rows, l.cols))
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &ParamTree) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.rows == b.rows && a.cols == b.cols)
    }

    /// All entries in layer order, weight before bias.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// FNV-1a over the bit patterns of every entry and every shape.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for l in &self.layers {
            feed(l.rows as u64);
            feed(l.cols as u64);
            for v in l.weight.iter().chain(&l.bias) {
                feed(v.to_bits());
            }
        }
        h
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamTree) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += alpha * b;
        }
    }
}
