//! Minimal numeric kernel for the networks in this crate.
//!
//! Everything is `f64`. Matrices are row-major with one sample per row;
//! weights are stored `out × in` so a dense layer computes `x Wᵀ + b`.

mod adam;
mod fourier;
mod matrix;
mod mlp;
mod params;
mod schedule;
pub mod tape;

pub use adam::{Adam, AdamConfig};
pub use fourier::FourierFeatureMap;
pub use matrix::Mat;
pub use mlp::{glorot_layer, mlp_forward, Activation, Mlp};
pub use params::{Layer, ParamTree};
pub use schedule::LrSchedule;
pub use tape::{grad_scalar, Gradients, Tape, TreeId, Var};
