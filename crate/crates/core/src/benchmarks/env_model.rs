//! Two pollutant spills in a narrow river.
//!
//! `u = (M, D, L, τ)`: spill mass, diffusion rate, position and time of the
//! second spill. Concentrations are observed at `s ∈ {0, 1, 2.5}`,
//! `t ∈ {15, 30, 45, 60}`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_traits::Float;

use super::{FieldProvider, Functional};
use crate::domain::{BoxDomain, Field, Grid};
use crate::error::{ensure_len, Error, Result};

pub const LOWER: [f64; 4] = [7.0, 0.02, 0.01, 30.01];
pub const UPPER: [f64; 4] = [13.0, 0.12, 3.0, 30.295];
pub const U_TRUE: [f64; 4] = [10.0, 0.07, 1.505, 30.1525];
pub const POSITIONS: [f64; 3] = [0.0, 1.0, 2.5];
pub const TIMES: [f64; 4] = [15.0, 30.0, 45.0, 60.0];

/// The 3 × 4 observation grid (time varies fastest).
pub fn grid() -> Grid {
    Grid::tensor(
        &[POSITIONS.to_vec(), TIMES.to_vec()],
        BoxDomain::new(alloc::vec![0.0, 15.0], alloc::vec![2.5, 60.0]).expect("static bounds"),
    )
    .expect("static grid")
}

fn plume(m: f64, d: f64, s: f64, t: f64) -> f64 {
    m / (2.0 * (PI * d * t).sqrt()) * (-(s * s) / (4.0 * d * t)).exp()
}

/// Concentration `h(u)(s, t)`.
pub fn env_model_field(u: &[f64], s: f64, t: f64) -> Result<f64> {
    ensure_len("env_model design", 4, u.len())?;
    if !(t > 0.0) {
        return Err(Error::Domain(format!("env_model needs t > 0, got {t}")));
    }
    let (m, d, l, tau) = (u[0], u[1], u[2], u[3]);
    let mut c = plume(m, d, s, t);
    if t > tau {
        c += plume(m, d, s - l, t - tau);
    }
    Ok(c)
}

/// `h(u)` on every point of `grid` (columns `s`, `t`).
pub fn field_on(u: &[f64], grid: &Grid) -> Result<Field> {
    ensure_len("env_model grid dimension", 2, grid.dim())?;
    let values = (0..grid.len())
        .map(|r| {
            let p = grid.points().row(r);
            env_model_field(u, p[0], p[1])
        })
        .collect::<Result<Vec<_>>>()?;
    Field::new(grid.len(), 1, values)
}

pub fn true_field(grid: &Grid) -> Result<Field> {
    field_on(&U_TRUE, grid)
}

/// `g(S) = −Σ (S − S_true)²`, maximal (zero) at the true field.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvObjective {
    truth: Field,
}

impl EnvObjective {
    pub fn new(truth: Field) -> Self {
        EnvObjective { truth }
    }

    pub fn truth(&self) -> &Field {
        &self.truth
    }
}

pub fn env_model_objective(field: &Field, truth: &Field) -> Result<f64> {
    EnvObjective::new(truth.clone()).value(field)
}

impl Functional for EnvObjective {
    fn channels(&self) -> usize {
        1
    }

    fn value_and_grad(&self, field: &Field) -> Result<(f64, Vec<f64>)> {
        ensure_len("env_model field", self.truth.values().len(), field.values().len())?;
        let diff: Vec<f64> = field.values().iter().zip(self.truth.values()).map(|(a, b)| a - b).collect();
        let v = 0.0 - diff.iter().map(|d| d * d).sum::<f64>();
        Ok((v, diff.iter().map(|d| -2.0 * d).collect()))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EnvModelProvider;

impl FieldProvider for EnvModelProvider {
    fn evaluate(&self, u: &[f64]) -> Result<Field> {
        field_on(u, &grid())
    }
}
