//! Brusselator reaction-diffusion system on the periodic unit square,
//!
//! ```text
//! ∂t u = D0 ∇²u + a − (1 + b) u + u² v
//! ∂t v = D1 ∇²v + b u − u² v
//! ```
//!
//! integrated to `T = 20` from `u ≡ a`, `v ≡ b/a + noise`. The noise is a
//! seeded function of the parameters, piecewise constant on a fixed
//! `noise_resolution²` cell partition, so the initial condition is the same
//! function of space at every grid resolution.
//!
//! Two schemes share the 5-point Laplacian and explicit reaction terms:
//! Peaceman–Rachford ADI (implicit diffusion, the default) and explicit Euler
//! with a diffusion-limited step.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand_distr::{Distribution, StandardNormal};

use super::{FieldProvider, Functional};
use crate::domain::{Field, Grid};
use crate::error::{ensure_len, Error, Result};
use crate::seed::{self, purpose};

pub const LOWER: [f64; 4] = [0.1, 0.1, 0.01, 0.01];
pub const UPPER: [f64; 4] = [5.0, 5.0, 5.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Adi,
    ExplicitEuler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrusselatorSpec {
    /// Cells per side.
    pub n: usize,
    pub horizon: f64,
    /// Fraction of the explicit diffusion stability limit (explicit scheme).
    pub safety: f64,
    pub max_dt: f64,
    pub noise: f64,
    pub noise_resolution: usize,
    pub scheme: Scheme,
    pub seed: u64,
}

impl Default for BrusselatorSpec {
    fn default() -> Self {
        BrusselatorSpec {
            n: 64,
            horizon: 20.0,
            safety: 0.2,
            max_dt: 1e-3,
            noise: 0.1,
            noise_resolution: 64,
            scheme: Scheme::Adi,
            seed: 0,
        }
    }
}

impl BrusselatorSpec {
    pub fn grid(&self) -> Result<Grid> {
        Grid::cell_centred_square(self.n, 0.0, 1.0)
    }

    fn validate(&self) -> Result<()> {
        if self.n < 3 || self.noise_resolution == 0 {
            return Err(Error::Config("brusselator grid needs at least 3 cells per side".into()));
        }
        if !(self.horizon > 0.0 && self.max_dt > 0.0 && self.safety > 0.0) {
            return Err(Error::Config("brusselator horizon, max_dt and safety must be positive".into()));
        }
        Ok(())
    }

    /// Step size and count; the step divides the horizon exactly.
    pub fn time_step(&self, d0: f64, d1: f64) -> (f64, usize) {
        let h = 1.0 / self.n as f64;
        let limit = match self.scheme {
            Scheme::Adi => self.max_dt,
            Scheme::ExplicitEuler => self.max_dt.min(self.safety * h * h / (4.0 * d0.max(d1))),
        };
        let steps = (self.horizon / limit).ceil().max(1.0) as usize;
        (self.horizon / steps as f64, steps)
    }
}

/// Reaction terms `(f_u, f_v)`.
#[inline]
pub fn reaction(a: f64, b: f64, u: f64, v: f64) -> (f64, f64) {
    let uuv = u * u * v;
    (a - (1.0 + b) * u + uuv, b * u - uuv)
}

/// Initial fields `(u, v)`, row-major with the first coordinate slowest.
pub fn initial_state(a: f64, b: f64, d0: f64, d1: f64, spec: &BrusselatorSpec) -> (Vec<f64>, Vec<f64>) {
    let n = spec.n;
    let r = spec.noise_resolution;
    let mut rng = seed::rng_for(seed::derive_from_reals(spec.seed, &[a, b, d0, d1]), &[purpose::SOLVER_NOISE]);
    let coarse: Vec<f64> = (0..r * r).map(|_| StandardNormal.sample(&mut rng)).collect();
    let parent = |i: usize| (((i as f64 + 0.5) * r as f64 / n as f64) as usize).min(r - 1);
    let u = vec![a; n * n];
    let mut v = vec![b / a; n * n];
    for i in 0..n {
        for j in 0..n {
            v[i * n + j] += spec.noise * coarse[parent(i) * r + parent(j)];
        }
    }
    (u, v)
}

/// Periodic 5-point Laplacian (times h²).
fn laplacian_into(x: &[f64], n: usize, out: &mut [f64]) {
    for i in 0..n {
        let up = if i == 0 { n - 1 } else { i - 1 };
        let dn = if i + 1 == n { 0 } else { i + 1 };
        for j in 0..n {
            let lf = if j == 0 { n - 1 } else { j - 1 };
            let rt = if j + 1 == n { 0 } else { j + 1 };
            out[i * n + j] = x[up * n + j] + x[dn * n + j] + x[i * n + lf] + x[i * n + rt] - 4.0 * x[i * n + j];
        }
    }
}

/// Solver for the periodic system `(1 + 2r) x_i − r (x_{i−1} + x_{i+1}) = d_i`,
/// by Sherman–Morrison on a tridiagonal factorisation.
#[derive(Debug, Clone)]
pub(crate) struct CyclicSolver {
    r: f64,
    cp: Vec<f64>,
    minv: Vec<f64>,
    z: Vec<f64>,
    gamma: f64,
    zden: f64,
}

impl CyclicSolver {
    pub(crate) fn new(n: usize, r: f64) -> Self {
        let b = 1.0 + 2.0 * r;
        let (sub, sup) = (-r, -r);
        let gamma = -b;
        let mut diag = vec![b; n];
        diag[0] = b - gamma;
        diag[n - 1] = b - sub * sup / gamma;
        let mut cp = vec![0.0; n];
        let mut minv = vec![0.0; n];
        for i in 0..n {
            let m = if i == 0 { diag[0] } else { diag[i] - sub * cp[i - 1] };
            minv[i] = 1.0 / m;
            cp[i] = sup * minv[i];
        }
        let mut s = CyclicSolver {
            r,
            cp,
            minv,
            z: Vec::new(),
            gamma,
            zden: 0.0,
        };
        let mut z = vec![0.0; n];
        z[0] = gamma;
        z[n - 1] = sub;
        s.thomas(&mut z);
        s.zden = 1.0 + z[0] + sup * z[n - 1] / gamma;
        s.z = z;
        s
    }

    fn thomas(&self, d: &mut [f64]) {
        let n = d.len();
        let sub = -self.r;
        d[0] *= self.minv[0];
        for i in 1..n {
            d[i] = (d[i] - sub * d[i - 1]) * self.minv[i];
        }
        for i in (0..n - 1).rev() {
            d[i] -= self.cp[i] * d[i + 1];
        }
    }

    /// Solves every column of the row-major `n × n` block `d` at once.
    pub(crate) fn solve_columns(&self, d: &mut [f64], n: usize, fact: &mut [f64]) {
        let sub = -self.r;
        let sup = -self.r;
        for x in &mut d[..n] {
            *x *= self.minv[0];
        }
        for i in 1..n {
            let (prev, cur) = d[(i - 1) * n..(i + 1) * n].split_at_mut(n);
            let mi = self.minv[i];
            for (c, p) in cur.iter_mut().zip(prev.iter()) {
                *c = (*c - sub * *p) * mi;
            }
        }
        for i in (0..n - 1).rev() {
            let (cur, next) = d[i * n..(i + 2) * n].split_at_mut(n);
            let ci = self.cp[i];
            for (c, x) in cur.iter_mut().zip(next.iter()) {
                *c -= ci * *x;
            }
        }
        for j in 0..n {
            fact[j] = (d[j] + sup * d[(n - 1) * n + j] / self.gamma) / self.zden;
        }
        for i in 0..n {
            let zi = self.z[i];
            for (x, f) in d[i * n..(i + 1) * n].iter_mut().zip(fact.iter()) {
                *x -= f * zi;
            }
        }
    }

    pub(crate) fn solve(&self, d: &mut [f64]) {
        let n = d.len();
        self.thomas(d);
        let sup = -self.r;
        let fact = (d[0] + sup * d[n - 1] / self.gamma) / self.zden;
        for (x, z) in d.iter_mut().zip(&self.z) {
            *x -= fact * z;
        }
    }
}

struct Workspace {
    lu: Vec<f64>,
    lv: Vec<f64>,
    line: Vec<f64>,
}

fn adi_half(
    (u, v): (&mut [f64], &mut [f64]),
    (a, b): (f64, f64),
    (ru, rv): (f64, f64),
    (su, sv): (&CyclicSolver, &CyclicSolver),
    dt: f64,
    n: usize,
    implicit_rows: bool,
    ws: &mut Workspace,
) {
    // explicit second differences along the direction not solved implicitly
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            let (p, q) = if implicit_rows {
                // implicit along i, explicit along j
                let lf = if j == 0 { n - 1 } else { j - 1 };
                let rt = if j + 1 == n { 0 } else { j + 1 };
                (i * n + lf, i * n + rt)
            } else {
                let up = if i == 0 { n - 1 } else { i - 1 };
                let dn = if i + 1 == n { 0 } else { i + 1 };
                (up * n + j, dn * n + j)
            };
            let (fu, fv) = reaction(a, b, u[k], v[k]);
            ws.lu[k] = u[k] + ru * (u[p] + u[q] - 2.0 * u[k]) + 0.5 * dt * fu;
            ws.lv[k] = v[k] + rv * (v[p] + v[q] - 2.0 * v[k]) + 0.5 * dt * fv;
        }
    }
    for (rhs, out, solver) in [(&ws.lu, &mut *u, su), (&ws.lv, &mut *v, sv)] {
        out.copy_from_slice(rhs);
        if implicit_rows {
            solver.solve_columns(out, n, &mut ws.line);
        } else {
            for row in out.chunks_exact_mut(n) {
                solver.solve(row);
            }
        }
    }
}

/// Solves to the horizon and returns the `(u, v)` field on the spec grid.
pub fn brusselator_solve(a: f64, b: f64, d0: f64, d1: f64, spec: &BrusselatorSpec) -> Result<Field> {
    spec.validate()?;
    if !(a > 0.0 && b > 0.0 && d0 > 0.0 && d1 > 0.0) || ![a, b, d0, d1].iter().all(|x| x.is_finite()) {
        return Err(Error::Domain(format!("brusselator parameters must be positive, got {:?}", [a, b, d0, d1])));
    }
    let n = spec.n;
    let (mut u, mut v) = initial_state(a, b, d0, d1, spec);
    let (dt, steps) = spec.time_step(d0, d1);
    let inv_h2 = (n * n) as f64;
    match spec.scheme {
        Scheme::ExplicitEuler => {
            let mut lu = vec![0.0; n * n];
            let mut lv = vec![0.0; n * n];
            for _ in 0..steps {
                laplacian_into(&u, n, &mut lu);
                laplacian_into(&v, n, &mut lv);
                for k in 0..n * n {
                    let (fu, fv) = reaction(a, b, u[k], v[k]);
                    u[k] += dt * (d0 * inv_h2 * lu[k] + fu);
                    v[k] += dt * (d1 * inv_h2 * lv[k] + fv);
                }
            }
        }
        Scheme::Adi => {
            let ru = 0.5 * dt * d0 * inv_h2;
            let rv = 0.5 * dt * d1 * inv_h2;
            let su = CyclicSolver::new(n, ru);
            let sv = CyclicSolver::new(n, rv);
            let mut ws = Workspace {
                lu: vec![0.0; n * n],
                lv: vec![0.0; n * n],
                line: vec![0.0; n],
            };
            for _ in 0..steps {
                adi_half((&mut u, &mut v), (a, b), (ru, rv), (&su, &sv), dt, n, true, &mut ws);
                adi_half((&mut u, &mut v), (a, b), (ru, rv), (&su, &sv), dt, n, false, &mut ws);
            }
        }
    }
    if !u.iter().chain(&v).all(|x| x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "brusselator state diverged for (a, b, D0, D1) = {:?} with dt = {dt}",
            [a, b, d0, d1]
        )));
    }
    let mut values = Vec::with_capacity(2 * n * n);
    for (x, y) in u.iter().zip(&v) {
        values.push(*x);
        values.push(*y);
    }
    Field::new(n * n, 2, values)
}

#[derive(Debug, Clone)]
pub struct BrusselatorProvider {
    spec: BrusselatorSpec,
}

impl BrusselatorProvider {
    pub fn new(spec: BrusselatorSpec) -> Self {
        BrusselatorProvider { spec }
    }

    pub fn spec(&self) -> &BrusselatorSpec {
        &self.spec
    }
}

impl FieldProvider for BrusselatorProvider {
    fn evaluate(&self, u: &[f64]) -> Result<Field> {
        ensure_len("brusselator design", 4, u.len())?;
        brusselator_solve(u[0], u[1], u[2], u[3], &self.spec)
    }
}

/// `w_u Var(u) + w_v Var(v)` with population variances over the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedVariance {
    pub w_u: f64,
    pub w_v: f64,
}

impl Default for WeightedVariance {
    fn default() -> Self {
        WeightedVariance { w_u: 1.0, w_v: 1.0 }
    }
}

pub fn weighted_variance(field: &Field, w_u: f64, w_v: f64) -> Result<f64> {
    WeightedVariance { w_u, w_v }.value(field)
}

impl Functional for WeightedVariance {
    fn channels(&self) -> usize {
        2
    }

    fn value_and_grad(&self, field: &Field) -> Result<(f64, Vec<f64>)> {
        ensure_len("weighted variance channels", 2, field.channels())?;
        let m = field.points() as f64;
        let mut grad = vec![0.0; field.values().len()];
        let mut total = 0.0;
        for (c, w) in [(0, self.w_u), (1, self.w_v)] {
            let mean = field.channel(c).sum::<f64>() / m;
            let var = field.channel(c).map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
            total += w * var;
            for (p, x) in field.channel(c).enumerate() {
                grad[p * 2 + c] = 2.0 * w * (x - mean) / m;
            }
        }
        Ok((total, grad))
    }
}
