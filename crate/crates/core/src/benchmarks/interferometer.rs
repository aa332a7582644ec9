//! Fringe visibility of 16 interference images on `[0,1]²`:
//! `g = (I_max − I_min) / (I_max + I_min)` with `I_max = LSE(Intensity)`,
//! `I_min = −LSE(−Intensity)` and `Intensity_t` the Gaussian-windowed
//! integral of image `t`.

use alloc::format;
use alloc::vec::Vec;
use num_traits::Float;

use super::Functional;
use crate::domain::{Field, Grid};
use crate::error::{ensure_len, Error, Result};

pub const CHANNELS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Visibility {
    /// Quadrature weight times window, per grid point.
    window: Vec<f64>,
}

impl Visibility {
    pub fn new(grid: &Grid) -> Result<Self> {
        ensure_len("interferometer grid dimension", 2, grid.dim())?;
        let w = grid.cell_weight();
        let window = (0..grid.len())
            .map(|r| {
                let p = grid.points().row(r);
                w * (-(p[0] - 0.5).powi(2) - (p[1] - 0.5).powi(2)).exp()
            })
            .collect();
        Ok(Visibility { window })
    }

    pub fn intensities(&self, field: &Field) -> Result<Vec<f64>> {
        ensure_len("interferometer channels", CHANNELS, field.channels())?;
        ensure_len("interferometer grid", self.window.len(), field.points())?;
        let mut out = alloc::vec![0.0; CHANNELS];
        for (p, w) in self.window.iter().enumerate() {
            for (t, o) in out.iter_mut().enumerate() {
                *o += w * field.get(p, t);
            }
        }
        Ok(out)
    }
}

/// `(LSE(x), softmax(x))`.
fn log_sum_exp(x: &[f64]) -> (f64, Vec<f64>) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    (m + s.ln(), e.into_iter().map(|v| v / s).collect())
}

pub fn visibility(field: &Field, grid: &Grid) -> Result<f64> {
    Visibility::new(grid)?.value(field)
}

impl Functional for Visibility {
    fn channels(&self) -> usize {
        CHANNELS
    }

    fn value_and_grad(&self, field: &Field) -> Result<(f64, Vec<f64>)> {
        let int = self.intensities(field)?;
        let (imax, pmax) = log_sum_exp(&int);
        let neg: Vec<f64> = int.iter().map(|v| -v).collect();
        let (lse_neg, pmin) = log_sum_exp(&neg);
        let imin = -lse_neg;
        let den = imax + imin;
        if !(den > 0.0) || !den.is_finite() {
            return Err(Error::NonFinite(format!("visibility denominator I_max + I_min = {den}")));
        }
        let g = (imax - imin) / den;
        let dmax = 2.0 * imin / (den * den);
        let dmin = -2.0 * imax / (den * den);
        // ∂I_max/∂Int = softmax(Int), ∂I_min/∂Int = softmax(−Int)
        let dint: Vec<f64> = (0..CHANNELS).map(|t| dmax * pmax[t] + dmin * pmin[t]).collect();
        let mut grad = alloc::vec![0.0; field.values().len()];
        for (p, w) in self.window.iter().enumerate() {
            for t in 0..CHANNELS {
                grad[p * CHANNELS + t] = w * dint[t];
            }
        }
        Ok((g, grad))
    }
}
