use alloc::vec::Vec;
use core::f64::consts::PI;
use num_traits::Float;
use rand_distr::{Distribution, Normal};

use super::matrix::Mat;
use crate::error::{ensure_len, Error, Result};

/// Random Fourier features `y ↦ (cos 2πBy, sin 2πBy)`.
///
/// `B` is drawn once at construction and never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierFeatureMap {
    frequencies: Mat,
    scale: f64,
}

impl FourierFeatureMap {
    pub fn sample<R: rand::Rng + ?Sized>(n_freq: usize, input_dim: usize, scale: f64, rng: &mut R) -> Result<Self> {
        if n_freq == 0 || input_dim == 0 {
            return Err(Error::Config("Fourier map needs n_freq ≥ 1 and d_y ≥ 1".into()));
        }
        let normal = Normal::new(0.0, scale)
            .map_err(|_| Error::Config(alloc::format!("invalid Fourier scale {scale}")))?;
        if scale <= 0.0 {
            return Err(Error::Config(alloc::format!("invalid Fourier scale {scale}")));
        }
        let data = (0..n_freq * input_dim).map(|_| normal.sample(rng)).collect();
        Ok(FourierFeatureMap {
            frequencies: Mat::from_vec(n_freq, input_dim, data)?,
            scale,
        })
    }

    pub fn from_matrix(frequencies: Mat, scale: f64) -> Self {
        FourierFeatureMap { frequencies, scale }
    }

    pub fn frequencies(&self) -> &Mat {
        &self.frequencies
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn n_freq(&self) -> usize {
        self.frequencies.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.frequencies.cols()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.n_freq()
    }

    pub fn encode(&self, y: &[f64]) -> Result<Vec<f64>> {
        ensure_len("fourier_encode", self.input_dim(), y.len())?;
        let n = self.n_freq();
        let mut out = alloc::vec![0.0; 2 * n];
        for f in 0..n {
            let arg = 2.0 * PI * super::matrix::dot(self.frequencies.row(f), y);
            out[f] = arg.cos();
            out[n + f] = arg.sin();
        }
        Ok(out)
    }

    pub fn encode_rows(&self, ys: &Mat) -> Result<Mat> {
        let mut out = Mat::zeros(ys.rows(), self.output_dim());
        for r in 0..ys.rows() {
            let e = self.encode(ys.row(r))?;
            out.row_mut(r).copy_from_slice(&e);
        }
        Ok(out)
    }
}
