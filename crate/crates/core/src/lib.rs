//! Epistemic operator networks for composite Bayesian optimization.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only pure numerics:
//!
//! - [`nn`]: dense layers, Fourier features, a small reverse-mode tape, Adam.
//! - [`operator`]: encoder/decoder operator network (Concat and Split decoders).
//! - [`epinet`]: EpiNet head (learnable + frozen prior) and the NEON assembly,
//!   plus a deep-ensemble baseline.
//! - [`training`]: datasets, normalization, relative-L2 training loop.
//! - [`acquisition`]: Monte-Carlo EI, L-EI, LCB and q-LEI over a composite surrogate.
//! - [`acq_opt`]: box-constrained L-BFGS with multi-restart.
//! - [`bo`]: the outer composite BO loop.
//! - [`benchmarks`]: ground-truth maps and objective functionals.
//!
//! File formats, parallel execution and the command-line driver live in the
//! companion `neon` crate.
#![no_std]
// float methods resolve through num_traits or inherently, depending on the build graph
#![allow(unused_imports)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod acq_opt;
pub mod acquisition;
pub mod benchmarks;
pub mod bo;
pub mod domain;
pub mod epinet;
mod error;
pub mod nn;
pub mod operator;
pub mod seed;
pub mod training;

pub use domain::{BoxDomain, Field, Grid};
pub use error::{Error, Result};
