//! Design space, query grids and discretized output fields.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{ensure_len, Error, Result};
use crate::nn::Mat;

/// Axis-aligned box `[lower, upper]` in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        ensure_len("box bounds", lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::Config("box domain needs at least one axis".into()));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "axis {i}: invalid bounds ({lo}, {hi})"
                )));
            }
        }
        Ok(BoxDomain { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.dim()
            && u
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }

    pub fn project(&self, u: &mut [f64]) {
        for (x, (lo, hi)) in u.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(*lo, *hi);
        }
    }

    pub fn sample_uniform<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }

    /// The `q`-fold product box, used for joint optimization of a batch of points.
    pub fn power(&self, q: usize) -> BoxDomain {
        let mut lower = Vec::with_capacity(q * self.dim());
        let mut upper = Vec::with_capacity(q * self.dim());
        for _ in 0..q {
            lower.extend_from_slice(&self.lower);
            upper.extend_from_slice(&self.upper);
        }
        BoxDomain { lower, upper }
    }

    /// Affine map of `u` into `[0,1]^d`.
    pub fn to_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| (x - lo) / (hi - lo))
            .collect()
    }

    pub fn from_unit(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| lo + x * (hi - lo))
            .collect()
    }
}

/// Fixed query grid `y_1..y_m` with the bounds used to rescale it.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Mat,
    bounds: BoxDomain,
}

impl Grid {
    pub fn new(points: Mat, bounds: BoxDomain) -> Result<Self> {
        ensure_len("grid dimension", bounds.dim(), points.cols())?;
        if points.rows() == 0 {
            return Err(Error::Config("grid has no points".into()));
        }
        Ok(Grid { points, bounds })
    }

    /// Tensor-product grid; the last axis varies fastest.
    pub fn tensor(axes: &[Vec<f64>], bounds: BoxDomain) -> Result<Self> {
        ensure_len("grid axes", bounds.dim(), axes.len())?;
        let m: usize = axes.iter().map(Vec::len).product();
        let d = axes.len();
        let mut data = Vec::with_capacity(m * d);
        let mut idx = alloc::vec![0usize; d];
        for _ in 0..m {
            for (a, &i) in idx.iter().enumerate() {
                data.push(axes[a][i]);
            }
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < axes[a].len() {
                    break;
                }
                idx[a] = 0;
            }
        }
        Grid::new(Mat::from_vec(m, d, data)?, bounds)
    }

    /// `n × n` cell-centred grid on the square `[lo, hi]^2`.
    pub fn cell_centred_square(n: usize, lo: f64, hi: f64) -> Result<Self> {
        let h = (hi - lo) / n as f64;
        let axis: Vec<f64> = (0..n).map(|i| lo + (i as f64 + 0.5) * h).collect();
        Grid::tensor(
            &[axis.clone(), axis],
            BoxDomain::new(alloc::vec![lo, lo], alloc::vec![hi, hi])?,
        )
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &Mat {
        &self.points
    }

    pub fn bounds(&self) -> &BoxDomain {
        &self.bounds
    }

    /// Grid points rescaled into `[0,1]^{d_y}` using the declared bounds.
    pub fn unit_points(&self) -> Mat {
        let mut out = self.points.clone();
        for r in 0..out.rows() {
            let row = self.bounds.to_unit(self.points.row(r));
            out.row_mut(r).copy_from_slice(&row);
        }
        out
    }

    /// Uniform cell-area quadrature weight (domain area / number of points).
    pub fn cell_weight(&self) -> f64 {
        let vol: f64 = self
            .bounds
            .lower()
            .iter()
            .zip(self.bounds.upper())
            .map(|(lo, hi)| hi - lo)
            .product();
        vol / self.len() as f64
    }
}

/// An output function sampled on a grid: `points × channels`, point-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    points: usize,
    channels: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn new(points: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        ensure_len("field values", points * channels, values.len())?;
        Ok(Field {
            points,
            channels,
            values,
        })
    }

    pub fn zeros(points: usize, channels: usize) -> Self {
        Field {
            points,
            channels,
            values: alloc::vec![0.0; points * channels],
        }
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, point: usize, channel: usize) -> f64 {
        self.values[point * self.channels + channel]
    }

    pub fn channel(&self, channel: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(channel).step_by(self.channels).copied()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}
