//! Monte-Carlo acquisition functions over an epistemic surrogate
//! `G(u, z) = g(ĥ(u, ·, z))`.
//!
//! A surrogate is any [`EpistemicObjective`]: it evaluates `G(u_i, z_j)` for a
//! fixed batch of indices `z_1..z_k` (common random numbers) and returns
//! vector-Jacobian products. Acquisition values are pure functions of that
//! `q × k` value matrix, so each one reports its value together with the
//! weights `∂α/∂G_ij` needed for the gradient.

use alloc::format;
use alloc::vec::Vec;
use num_traits::Float;

use crate::benchmarks::Functional;
use crate::domain::Grid;
use crate::epinet::{sample_indices, NeonModel};
use crate::error::{ensure_len, Error, Result};
use crate::nn::{Mat, Tape};
use crate::operator::OperatorNet;
use crate::training::Normalizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spread {
    Std,
    MeanAbsDev,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AcquisitionKind {
    Ei,
    Lei { delta: f64 },
    Lcb { beta: f64, spread: Spread },
    Qlei { delta: f64, q: usize },
}

impl AcquisitionKind {
    /// Number of designs acquired jointly.
    pub fn batch(&self) -> usize {
        match self {
            AcquisitionKind::Qlei { q, .. } => *q,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionSpec {
    pub kind: AcquisitionKind,
    /// Monte-Carlo index samples.
    pub k: usize,
    /// Best observed (internal, maximized) objective.
    pub incumbent: f64,
}

impl AcquisitionSpec {
    pub fn new(kind: AcquisitionKind, k: usize, incumbent: f64) -> Result<Self> {
        let s = AcquisitionSpec { kind, k, incumbent };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("Monte-Carlo sample count k must be ≥ 1".into()));
        }
        match self.kind {
            AcquisitionKind::Lei { delta } | AcquisitionKind::Qlei { delta, .. } if !(delta > 0.0) => {
                Err(Error::Config(format!("leak δ must be > 0, got {delta}")))
            }
            AcquisitionKind::Qlei { q: 0, .. } => Err(Error::Config("q must be ≥ 1".into())),
            AcquisitionKind::Lcb { beta, .. } if !(beta > 0.0) => Err(Error::Config(format!("LCB β must be > 0, got {beta}"))),
            _ if !self.incumbent.is_finite() && self.incumbent != f64::NEG_INFINITY => {
                Err(Error::NonFinite("incumbent".into()))
            }
            _ => Ok(()),
        }
    }
}

/// `max(0, v − y*)`.
pub fn ei_point(v: f64, incumbent: f64) -> f64 {
    (v - incumbent).max(0.0)
}

/// `v − y*` above the incumbent, `δ (v − y*)` below.
pub fn lei_point(v: f64, incumbent: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Config(format!("leak δ must be > 0, got {delta}")));
    }
    Ok(leaky(v - incumbent, delta))
}

#[inline]
fn leaky(d: f64, delta: f64) -> f64 {
    if d >= 0.0 {
        d
    } else {
        delta * d
    }
}

/// Acquisition value of a `q × k` matrix of surrogate draws, with
/// `∂α/∂G_ij` in the same layout.
pub fn acquisition_value(spec: &AcquisitionSpec, values: &Mat) -> Result<(f64, Mat)> {
    spec.validate()?;
    ensure_len("acquisition batch", spec.kind.batch(), values.rows())?;
    let k = values.cols();
    if k == 0 {
        return Err(Error::Config("empty index batch".into()));
    }
    let y = spec.incumbent;
    let kf = k as f64;
    let mut w = Mat::zeros(values.rows(), k);
    let value = match spec.kind {
        AcquisitionKind::Ei => {
            let mut s = 0.0;
            for (j, &v) in values.row(0).iter().enumerate() {
                s += ei_point(v, y);
                w.set(0, j, if v > y { 1.0 / kf } else { 0.0 });
            }
            s / kf
        }
        AcquisitionKind::Lei { delta } => {
            let mut s = 0.0;
            for (j, &v) in values.row(0).iter().enumerate() {
                s += leaky(v - y, delta);
                // at v = y* the value is 0 either way; take the leaky slope as q-LEI does
                w.set(0, j, if v - y > 0.0 { 1.0 / kf } else { delta / kf });
            }
            s / kf
        }
        AcquisitionKind::Lcb { beta, spread } => {
            let row = values.row(0);
            let mean = row.iter().sum::<f64>() / kf;
            match spread {
                Spread::Std => {
                    let sd = (row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / kf).sqrt();
                    for (j, &v) in row.iter().enumerate() {
                        let dsd = if sd > 0.0 { (v - mean) / (kf * sd) } else { 0.0 };
                        w.set(0, j, 1.0 / kf + beta * dsd);
                    }
                    mean + beta * sd
                }
                Spread::MeanAbsDev => {
                    let mad = row.iter().map(|v| (v - mean).abs()).sum::<f64>() / kf;
                    let sign = |v: f64| if v > mean { 1.0 } else if v < mean { -1.0 } else { 0.0 };
                    let mean_sign = row.iter().map(|&v| sign(v)).sum::<f64>() / kf;
                    for (j, &v) in row.iter().enumerate() {
                        w.set(0, j, 1.0 / kf + beta * (sign(v) - mean_sign) / kf);
                    }
                    mean + beta * mad
                }
            }
        }
        AcquisitionKind::Qlei { delta, q } => {
            let mut s = 0.0;
            for j in 0..k {
                let mut best = 0;
                for i in 1..q {
                    if values.get(i, j) > values.get(best, j) {
                        best = i;
                    }
                }
                for i in 0..q {
                    let d = values.get(i, j) - y;
                    let wi = if i == best && d > 0.0 { 1.0 } else { delta };
                    s += wi * d;
                    w.set(i, j, wi / kf);
                }
            }
            s / kf
        }
    };
    Ok((value, w))
}

/// q-LEI of a `q × k` value matrix.
pub fn qlei(values: &Mat, incumbent: f64, delta: f64) -> Result<f64> {
    let spec = AcquisitionSpec::new(AcquisitionKind::Qlei { delta, q: values.rows() }, values.cols().max(1), incumbent)?;
    Ok(acquisition_value(&spec, values)?.0)
}

/// Callback turning a `q × k` value matrix into weights `W` for the
/// gradient `Σ_ij W_ij ∂G(u_i, z_j)/∂u_i`.
pub type WeightFn<'a> = dyn FnMut(&Mat) -> Result<Mat> + 'a;

/// A surrogate `G(u, z_j)` over a frozen index batch.
pub trait EpistemicObjective: Sync {
    fn dim(&self) -> usize;

    fn num_indices(&self) -> usize;

    /// `G(u_i, z_j)` for the `q = us.len() / dim` stacked designs.
    fn evaluate(&self, us: &[f64]) -> Result<Mat>;

    /// Values and the weighted gradient with respect to the stacked designs.
    fn evaluate_with_grad(&self, us: &[f64], weights: &mut WeightFn<'_>) -> Result<(Mat, Vec<f64>)>;
}

/// Acquisition value of stacked designs.
pub fn mc_acquisition(spec: &AcquisitionSpec, surrogate: &dyn EpistemicObjective, us: &[f64]) -> Result<f64> {
    let v = surrogate.evaluate(us)?;
    Ok(acquisition_value(spec, &v)?.0)
}

/// Acquisition value and its gradient with respect to the stacked designs.
pub fn grad_acquisition(spec: &AcquisitionSpec, surrogate: &dyn EpistemicObjective, us: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut value = 0.0;
    let (_, grad) = surrogate.evaluate_with_grad(us, &mut |m: &Mat| {
        let (v, w) = acquisition_value(spec, m)?;
        value = v;
        Ok(w)
    })?;
    Ok((value, grad))
}

fn split_designs(us: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || us.is_empty() || us.len() % dim != 0 {
        return Err(Error::dim("stacked designs", dim, us.len()));
    }
    Ok(us.len() / dim)
}

/// `G(u, z) = sign · g(denormalize(ĥ(u, ·, z)))` for a trained NEON model.
pub struct CompositeSurrogate<'a> {
    model: &'a NeonModel,
    norm: &'a Normalizer,
    functional: &'a dyn Functional,
    sign: f64,
    qfeat: Mat,
    queries: Mat,
    zs: Vec<Vec<f64>>,
}

impl<'a> CompositeSurrogate<'a> {
    /// `sign` is `+1` for maximized and `−1` for minimized objectives.
    pub fn new(
        model: &'a NeonModel,
        norm: &'a Normalizer,
        functional: &'a dyn Functional,
        grid: &Grid,
        sign: f64,
        zs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if zs.is_empty() {
            return Err(Error::Config("surrogate needs at least one index".into()));
        }
        for z in &zs {
            ensure_len("epistemic index", model.index_dim(), z.len())?;
        }
        ensure_len("functional channels", functional.channels(), model.output_dim())?;
        let queries = norm.queries(grid);
        let qfeat = model.base().query_features(&queries)?;
        Ok(CompositeSurrogate {
            model,
            norm,
            functional,
            sign,
            qfeat,
            queries,
            zs,
        })
    }

    /// Draws `k` indices from `rng` for one acquisition episode.
    pub fn sample<R: rand::Rng + ?Sized>(
        model: &'a NeonModel,
        norm: &'a Normalizer,
        functional: &'a dyn Functional,
        grid: &Grid,
        sign: f64,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let zs = sample_indices(model.index_dim(), k, rng).into_iter().map(|z| z.0).collect();
        Self::new(model, norm, functional, grid, sign, zs)
    }

    pub fn indices(&self) -> &[Vec<f64>] {
        &self.zs
    }

    /// `G(u, z)` for a single design and index.
    pub fn objective(&self, u: &[f64], z: &[f64]) -> Result<f64> {
        ensure_len("epistemic index", self.model.index_dim(), z.len())?;
        let single = CompositeSurrogate {
            model: self.model,
            norm: self.norm,
            functional: self.functional,
            sign: self.sign,
            qfeat: self.qfeat.clone(),
            queries: self.queries.clone(),
            zs: alloc::vec![z.to_vec()],
        };
        Ok(single.evaluate(u)?.get(0, 0))
    }

    fn run(&self, us: &[f64], weights: Option<&mut WeightFn<'_>>) -> Result<(Mat, Option<Vec<f64>>)> {
        let d = self.model.base().input_dim();
        let q = split_designs(us, d)?;
        let m = self.queries.rows();
        let ds = self.model.output_dim();
        let dz = self.model.index_dim();
        let alpha = self.model.prior_scale();
        let mut unit = Mat::zeros(q, d);
        for i in 0..q {
            unit.row_mut(i).copy_from_slice(&self.norm.input(&us[i * d..(i + 1) * d]));
        }
        let design: Vec<usize> = (0..q * m).map(|r| r / m).collect();
        let mut tape = Tape::new();
        let trees = self.model.register(&mut tape, false);
        let uv = if weights.is_some() { tape.input(unit) } else { tape.constant(unit) };
        let qf = tape.constant(self.qfeat.tile_rows(q));
        let qv = tape.constant(self.queries.tile_rows(q));
        let g = self.model.record(&mut tape, trees, uv, &design, qf, qv, false)?;
        let mu = tape.value(g.base.prediction);
        let lm = tape.value(g.learnable);
        let pm = tape.value(g.prior);
        let k = self.zs.len();
        let mut values = Mat::zeros(q, k);
        // ∂G_ij/∂prediction, kept for the backward pass
        let mut dpred: Vec<Vec<f64>> = Vec::with_capacity(if weights.is_some() { q * k } else { 0 });
        let mut field = crate::domain::Field::zeros(m, ds);
        for i in 0..q {
            for (j, z) in self.zs.iter().enumerate() {
                for p in 0..m {
                    let r = i * m + p;
                    let (mr, lr, pr) = (mu.row(r), lm.row(r), pm.row(r));
                    for s in 0..ds {
                        let mut h = mr[s];
                        let mut l = 0.0;
                        let mut pp = 0.0;
                        for kk in 0..dz {
                            l += lr[kk * ds + s] * z[kk];
                            pp += pr[kk * ds + s] * z[kk];
                        }
                        h += l + alpha * pp;
                        field.values_mut()[p * ds + s] = self.norm.target_inverse_value(s, h);
                    }
                }
                if weights.is_some() {
                    let (v, gr) = self.functional.value_and_grad(&field)?;
                    values.set(i, j, self.sign * v);
                    let std = self.norm.std();
                    dpred.push(gr.iter().enumerate().map(|(t, gv)| self.sign * gv * std[t % ds]).collect());
                } else {
                    values.set(i, j, self.sign * self.functional.value(&field)?);
                }
            }
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("surrogate objective".into()));
        }
        let Some(weights) = weights else {
            return Ok((values, None));
        };
        let w = weights(&values)?;
        if w.rows() != q || w.cols() != k {
            return Err(Error::dim("acquisition weights", q * k, w.data().len()));
        }
        let mut seed_mu = Mat::zeros(q * m, ds);
        let mut seed_l = Mat::zeros(q * m, dz * ds);
        for i in 0..q {
            for (j, z) in self.zs.iter().enumerate() {
                let wij = w.get(i, j);
                if wij == 0.0 {
                    continue;
                }
                let dp = &dpred[i * k + j];
                for p in 0..m {
                    let r = i * m + p;
                    for s in 0..ds {
                        let gsv = wij * dp[p * ds + s];
                        seed_mu.data_mut()[r * ds + s] += gsv;
                        let row = seed_l.row_mut(r);
                        for kk in 0..dz {
                            row[kk * ds + s] += gsv * z[kk];
                        }
                    }
                }
            }
        }
        let mut seed_p = seed_l.clone();
        seed_p.data_mut().iter_mut().for_each(|v| *v *= alpha);
        let grads = tape.backward(&[(g.base.prediction, seed_mu), (g.learnable, seed_l), (g.prior, seed_p)])?;
        let gu = grads.wrt(uv).cloned().unwrap_or_else(|| Mat::zeros(q, d));
        let (lo, hi) = (self.norm.domain().lower(), self.norm.domain().upper());
        let grad: Vec<f64> = gu.data().iter().enumerate().map(|(t, g)| g / (hi[t % d] - lo[t % d])).collect();
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("acquisition gradient".into()));
        }
        Ok((values, Some(grad)))
    }
}

impl EpistemicObjective for CompositeSurrogate<'_> {
    fn dim(&self) -> usize {
        self.model.base().input_dim()
    }

    fn num_indices(&self) -> usize {
        self.zs.len()
    }

    fn evaluate(&self, us: &[f64]) -> Result<Mat> {
        Ok(self.run(us, None)?.0)
    }

    fn evaluate_with_grad(&self, us: &[f64], weights: &mut WeightFn<'_>) -> Result<(Mat, Vec<f64>)> {
        let (v, g) = self.run(us, Some(weights))?;
        Ok((v, g.expect("gradient requested")))
    }
}

/// Deep-ensemble surrogate: index `j` selects member `j`.
pub struct EnsembleSurrogate<'a> {
    members: &'a [OperatorNet],
    norm: &'a Normalizer,
    functional: &'a dyn Functional,
    sign: f64,
    qfeat: Vec<Mat>,
    m: usize,
}

impl<'a> EnsembleSurrogate<'a> {
    pub fn new(members: &'a [OperatorNet], norm: &'a Normalizer, functional: &'a dyn Functional, grid: &Grid, sign: f64) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("empty ensemble".into()));
        }
        let queries = norm.queries(grid);
        let qfeat = members.iter().map(|n| n.query_features(&queries)).collect::<Result<Vec<_>>>()?;
        Ok(EnsembleSurrogate {
            members,
            norm,
            functional,
            sign,
            qfeat,
            m: grid.len(),
        })
    }

    fn run(&self, us: &[f64], weights: Option<&mut WeightFn<'_>>) -> Result<(Mat, Option<Vec<f64>>)> {
        let d = self.members[0].input_dim();
        let q = split_designs(us, d)?;
        let m = self.m;
        let k = self.members.len();
        let ds = self.members[0].output_dim();
        let mut unit = Mat::zeros(q, d);
        for i in 0..q {
            unit.row_mut(i).copy_from_slice(&self.norm.input(&us[i * d..(i + 1) * d]));
        }
        let design: Vec<usize> = (0..q * m).map(|r| r / m).collect();
        let grad_needed = weights.is_some();
        let mut tape = Tape::new();
        let uv = if grad_needed { tape.input(unit) } else { tape.constant(unit) };
        let mut preds = Vec::with_capacity(k);
        for (net, qf) in self.members.iter().zip(&self.qfeat) {
            let enc = tape.register(net.encoder().params(), false);
            let dec = tape.register(net.decoder(), false);
            let qv = tape.constant(qf.tile_rows(q));
            preds.push(net.record(&mut tape, enc, dec, uv, &design, qv)?.prediction);
        }
        let mut values = Mat::zeros(q, k);
        let mut dpred = Vec::new();
        for i in 0..q {
            for (j, &pv) in preds.iter().enumerate() {
                let pm = tape.value(pv);
                let vals: Vec<f64> = (0..m * ds)
                    .map(|t| self.norm.target_inverse_value(t % ds, pm.data()[i * m * ds + t]))
                    .collect();
                let field = crate::domain::Field::new(m, ds, vals)?;
                let (v, gr) = self.functional.value_and_grad(&field)?;
                values.set(i, j, self.sign * v);
                if grad_needed {
                    let std = self.norm.std();
                    dpred.push(gr.iter().enumerate().map(|(t, gv)| self.sign * gv * std[t % ds]).collect::<Vec<_>>());
                }
            }
        }
        let Some(weights) = weights else {
            return Ok((values, None));
        };
        let w = weights(&values)?;
        let mut seeds = Vec::with_capacity(k);
        for (j, &pv) in preds.iter().enumerate() {
            let mut s = Mat::zeros(q * m, ds);
            for i in 0..q {
                let wij = w.get(i, j);
                for (t, g) in dpred[i * k + j].iter().enumerate() {
                    s.data_mut()[i * m * ds + t] = wij * g;
                }
            }
            seeds.push((pv, s));
        }
        let grads = tape.backward(&seeds)?;
        let gu = grads.wrt(uv).cloned().unwrap_or_else(|| Mat::zeros(q, d));
        let (lo, hi) = (self.norm.domain().lower(), self.norm.domain().upper());
        Ok((values, Some(gu.data().iter().enumerate().map(|(t, g)| g / (hi[t % d] - lo[t % d])).collect())))
    }
}

impl EpistemicObjective for EnsembleSurrogate<'_> {
    fn dim(&self) -> usize {
        self.members[0].input_dim()
    }

    fn num_indices(&self) -> usize {
        self.members.len()
    }

    fn evaluate(&self, us: &[f64]) -> Result<Mat> {
        Ok(self.run(us, None)?.0)
    }

    fn evaluate_with_grad(&self, us: &[f64], weights: &mut WeightFn<'_>) -> Result<(Mat, Vec<f64>)> {
        let (v, g) = self.run(us, Some(weights))?;
        Ok((v, g.expect("gradient requested")))
    }
}

/// Surrogate given by a closure `G(u, j)` with gradient; used in tests and
/// for analytic toy problems.
pub struct FnSurrogate<F> {
    dim: usize,
    k: usize,
    f: F,
}

impl<F> FnSurrogate<F>
where
    F: Fn(&[f64], usize) -> (f64, Vec<f64>) + Sync,
{
    pub fn new(dim: usize, k: usize, f: F) -> Self {
        FnSurrogate { dim, k, f }
    }
}

impl<F> EpistemicObjective for FnSurrogate<F>
where
    F: Fn(&[f64], usize) -> (f64, Vec<f64>) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_indices(&self) -> usize {
        self.k
    }

    fn evaluate(&self, us: &[f64]) -> Result<Mat> {
        let q = split_designs(us, self.dim)?;
        let mut v = Mat::zeros(q, self.k);
        for i in 0..q {
            for j in 0..self.k {
                v.set(i, j, (self.f)(&us[i * self.dim..(i + 1) * self.dim], j).0);
            }
        }
        Ok(v)
    }

    fn evaluate_with_grad(&self, us: &[f64], weights: &mut WeightFn<'_>) -> Result<(Mat, Vec<f64>)> {
        let v = self.evaluate(us)?;
        let w = weights(&v)?;
        let q = v.rows();
        let mut grad = alloc::vec![0.0; us.len()];
        for i in 0..q {
            for j in 0..self.k {
                let (_, g) = (self.f)(&us[i * self.dim..(i + 1) * self.dim], j);
                for (t, gv) in g.iter().enumerate() {
                    grad[i * self.dim + t] += w.get(i, j) * gv;
                }
            }
        }
        Ok((v, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::env_model;
    use crate::domain::{BoxDomain, Field};
    use crate::epinet::{EpinetConfig, NeonConfig};
    use crate::operator::{DecoderConfig, DecoderKind, EncoderConfig, FourierConfig};
    use crate::seed;
    use crate::training::Dataset;
    use alloc::boxed::Box;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn spec(kind: AcquisitionKind, k: usize, y: f64) -> AcquisitionSpec {
        AcquisitionSpec::new(kind, k, y).unwrap()
    }

    fn row(v: &[f64]) -> Mat {
        Mat::row_vector(v.to_vec())
    }

    #[test]
    fn point_functions() {
        assert_eq!(ei_point(5.0, 3.0), 2.0);
        assert_eq!(ei_point(2.0, 3.0), 0.0);
        assert_eq!(ei_point(3.0, 3.0), 0.0);
        assert_eq!(lei_point(2.0, 3.0, 0.01).unwrap(), -0.01);
        assert_eq!(lei_point(6.0, 3.0, 0.7).unwrap(), 3.0);
        assert_eq!(lei_point(6.0, 3.0, 0.01).unwrap(), ei_point(6.0, 3.0));
        assert!(lei_point(1.0, 0.0, 0.0).is_err());
        assert!(lei_point(1.0, 0.0, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn improvement_functions_are_monotone(v in -50.0f64..50.0, dv in 0.0f64..10.0, y in -20.0f64..20.0, delta in 1e-4f64..1.0) {
            prop_assert!(ei_point(v + dv, y) >= ei_point(v, y));
            prop_assert!(lei_point(v + dv, y, delta).unwrap() >= lei_point(v, y, delta).unwrap());
            let (l, e) = (lei_point(v, y, delta).unwrap(), ei_point(v, y));
            prop_assert!(l <= e);
            prop_assert_eq!(l == e, v >= y);
        }

        #[test]
        fn qlei_has_at_most_one_unit_weight_per_index(seed in any::<u64>(), q in 1usize..5, k in 1usize..8) {
            let mut rng = seed::rng(seed);
            let mut v = Mat::zeros(q, k);
            v.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            let s = spec(AcquisitionKind::Qlei { delta: 0.01, q }, k, 0.2);
            let (_, w) = acquisition_value(&s, &v).unwrap();
            for j in 0..k {
                let units = (0..q).filter(|&i| w.get(i, j) == 1.0 / k as f64).count();
                prop_assert!(units <= 1);
            }
        }
    }

    #[test]
    fn single_sample_is_the_pointwise_value() {
        let v = row(&[1.7]);
        for (kind, want) in [
            (AcquisitionKind::Ei, ei_point(1.7, 1.0)),
            (AcquisitionKind::Lei { delta: 0.01 }, lei_point(1.7, 1.0, 0.01).unwrap()),
        ] {
            assert_eq!(acquisition_value(&spec(kind, 1, 1.0), &v).unwrap().0, want);
        }
        let below = row(&[0.5]);
        assert_eq!(acquisition_value(&spec(AcquisitionKind::Lei { delta: 0.01 }, 1, 1.0), &below).unwrap().0, lei_point(0.5, 1.0, 0.01).unwrap());
    }

    #[test]
    fn lcb_without_spread_is_the_mean() {
        for spread in [Spread::Std, Spread::MeanAbsDev] {
            let s = spec(AcquisitionKind::Lcb { beta: 3.0, spread }, 4, 0.0);
            assert_eq!(acquisition_value(&s, &row(&[2.5; 4])).unwrap().0, 2.5);
        }
        let s = spec(AcquisitionKind::Lcb { beta: 2.0, spread: Spread::Std }, 2, 0.0);
        assert_eq!(acquisition_value(&s, &row(&[1.0, 3.0])).unwrap().0, 2.0 + 2.0 * 1.0);
        let s = spec(AcquisitionKind::Lcb { beta: 2.0, spread: Spread::MeanAbsDev }, 3, 0.0);
        // mean 2, deviations 1, 1, 2 → mad 4/3
        let got = acquisition_value(&s, &row(&[1.0, 1.0, 4.0])).unwrap().0;
        assert!((got - (2.0 + 2.0 * 4.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn ei_estimate_matches_exhaustive_average_over_discrete_indices() {
        let outcomes = [-1.0, 0.5, 2.0, 3.5];
        let sur = FnSurrogate::new(1, 1000, |u: &[f64], j| (u[0] + outcomes[j % 4], vec![1.0]));
        let s = spec(AcquisitionKind::Ei, 1000, 1.0);
        let got = mc_acquisition(&s, &sur, &[0.25]).unwrap();
        let exact = outcomes.iter().map(|o| ei_point(0.25 + o, 1.0)).sum::<f64>() / 4.0;
        assert!((got - exact).abs() < 1e-12);
    }

    #[test]
    fn qlei_cases() {
        let delta = 0.05;
        let s1 = spec(AcquisitionKind::Qlei { delta, q: 1 }, 5, 0.3);
        let l = spec(AcquisitionKind::Lei { delta }, 5, 0.3);
        let mut rng = seed::rng(2);
        for _ in 0..100 {
            let v = row(&(0..5).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
            let a = acquisition_value(&s1, &v).unwrap();
            let b = acquisition_value(&l, &v).unwrap();
            assert_eq!(a.0.to_bits(), b.0.to_bits());
            assert_eq!(a.1, b.1);
        }
        // all below the incumbent
        let v = Mat::from_vec(2, 1, vec![-1.0, -2.0]).unwrap();
        assert!((qlei(&v, 0.0, delta).unwrap() - delta * (-3.0)).abs() < 1e-15);
        // one above and maximal
        let v = Mat::from_vec(3, 1, vec![0.5, 2.0, -1.0]).unwrap();
        let want = delta * 0.5 + 2.0 + delta * -1.0;
        assert!((qlei(&v, 0.0, delta).unwrap() - want).abs() < 1e-15);
        // ties go to the lowest index
        let v = Mat::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        let s = spec(AcquisitionKind::Qlei { delta, q: 2 }, 1, 0.0);
        let (_, w) = acquisition_value(&s, &v).unwrap();
        assert_eq!((w.get(0, 0), w.get(1, 0)), (1.0, delta));
    }

    #[test]
    fn spec_validation() {
        assert!(AcquisitionSpec::new(AcquisitionKind::Lei { delta: 0.0 }, 4, 0.0).is_err());
        assert!(AcquisitionSpec::new(AcquisitionKind::Ei, 0, 0.0).is_err());
        assert!(AcquisitionSpec::new(AcquisitionKind::Qlei { delta: 0.1, q: 0 }, 4, 0.0).is_err());
        assert!(AcquisitionSpec::new(AcquisitionKind::Lcb { beta: -1.0, spread: Spread::Std }, 4, 0.0).is_err());
        assert!(AcquisitionSpec::new(AcquisitionKind::Ei, 4, f64::NEG_INFINITY).is_ok());
    }

    #[test]
    fn theorem_one_bound() {
        let (a, b) = (-2.0, 3.0);
        let m = b - a;
        let mut rng = seed::rng(11);
        for eps in [1e-1, 1e-3] {
            let delta = eps / (2.0 * m);
            let mut worst: f64 = 0.0;
            for _ in 0..1000 {
                let g = rng.random_range(a..=b);
                let y = rng.random_range(a..=b);
                worst = worst.max((lei_point(g, y, delta).unwrap() - ei_point(g, y)).abs());
            }
            for (g, y) in [(a, b), (b, a), (a, a)] {
                worst = worst.max((lei_point(g, y, delta).unwrap() - ei_point(g, y)).abs());
            }
            assert!(worst <= delta * m && delta * m < eps);
        }
    }

    fn env_fixture(kind: DecoderKind, alpha: f64, seed: u64) -> (NeonModel, Normalizer, Box<dyn Functional>, Grid) {
        let cfg = NeonConfig {
            encoder: EncoderConfig {
                input_dim: 4,
                hidden: vec![12],
                latent_dim: 8,
            },
            decoder: DecoderConfig {
                kind,
                hidden: vec![10, 10],
                query_dim: 2,
                output_dim: 1,
                fourier: Some(FourierConfig { n_freq: 6, scale: 1.0 }),
            },
            epinet: EpinetConfig {
                hidden: vec![8],
                index_dim: 4,
                prior_hidden: vec![3, 3],
                prior_scale: alpha,
            },
        };
        let mut model = NeonModel::init(&cfg, seed).unwrap();
        // give the learnable head nonzero output so every path is exercised
        let mut rng = seed::rng(seed ^ 77);
        for v in model.head_mut().learnable_mut().params_mut().values_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        let grid = env_model::grid();
        let domain = BoxDomain::new(env_model::LOWER.to_vec(), env_model::UPPER.to_vec()).unwrap();
        let mut data = Dataset::new(grid.clone());
        for _ in 0..5 {
            let u = domain.sample_uniform(&mut rng);
            data.push(u.clone(), env_model::field_on(&u, &grid).unwrap()).unwrap();
        }
        let norm = Normalizer::fit(&domain, &data).unwrap();
        let g = crate::benchmarks::BenchmarkId::EnvModel.functional(&grid).unwrap();
        (model, norm, g, grid)
    }

    #[test]
    fn surrogate_matches_composition_by_hand() {
        let (model, norm, g, grid) = env_fixture(DecoderKind::Split, 0.75, 3);
        let mut rng = seed::rng(1);
        let sur = CompositeSurrogate::sample(&model, &norm, g.as_ref(), &grid, 1.0, 3, &mut rng).unwrap();
        let u = [9.0, 0.05, 1.0, 30.1];
        let vals = sur.evaluate(&u).unwrap();
        for (j, z) in sur.indices().iter().enumerate() {
            let field = crate::training::predict_field(&model, &norm, &grid, &u, z).unwrap();
            let want = g.value(&field).unwrap();
            assert!((vals.get(0, j) - want).abs() < 1e-12 * want.abs().max(1.0));
            assert_eq!(sur.objective(&u, z).unwrap(), vals.get(0, j));
        }
        // two stacked designs are evaluated independently
        let u2 = [12.0, 0.1, 2.0, 30.2];
        let mut both = u.to_vec();
        both.extend(u2);
        let v2 = sur.evaluate(&both).unwrap();
        assert_eq!(v2.row(0), vals.row(0));
        assert_eq!(v2.row(1), sur.evaluate(&u2).unwrap().row(0));
    }

    struct MeanChannel;

    impl Functional for MeanChannel {
        fn channels(&self) -> usize {
            1
        }

        fn value_and_grad(&self, field: &Field) -> Result<(f64, Vec<f64>)> {
            let m = field.points() as f64;
            Ok((field.channel(0).sum::<f64>() / m, vec![1.0 / m; field.points()]))
        }
    }

    #[test]
    fn constant_model_gives_constant_objective_and_zero_gradient() {
        let (mut model, _, _, grid) = env_fixture(DecoderKind::Concat, 0.0, 5);
        for v in model.head_mut().learnable_mut().params_mut().values_mut() {
            *v = 0.0;
        }
        let dec = model.base_mut().decoder_mut();
        let last = dec.len() - 1;
        let layer = &mut dec.layers_mut()[last];
        layer.weight.iter_mut().for_each(|w| *w = 0.0);
        layer.bias[0] = 1.25;
        let domain = BoxDomain::new(env_model::LOWER.to_vec(), env_model::UPPER.to_vec()).unwrap();
        let norm = Normalizer::from_parts(domain, grid.bounds().clone(), vec![0.0], vec![1.0]).unwrap();
        let sur = CompositeSurrogate::sample(&model, &norm, &MeanChannel, &grid, 1.0, 4, &mut seed::rng(0)).unwrap();
        let u = [10.0, 0.1, 0.5, 30.1];
        assert!(sur.evaluate(&u).unwrap().data().iter().all(|&v| (v - 1.25).abs() < 1e-15));
        let s = spec(AcquisitionKind::Lei { delta: 0.01 }, 4, 0.0);
        let (_, grad) = grad_acquisition(&s, &sur, &u).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    fn fd_check(s: &AcquisitionSpec, sur: &dyn EpistemicObjective, u: &[f64], scale: &[f64]) {
        let (_, grad) = grad_acquisition(s, sur, u).unwrap();
        for i in 0..u.len() {
            let h = 1e-5 * scale[i % scale.len()];
            let mut p = u.to_vec();
            let mut m = u.to_vec();
            p[i] += h;
            m[i] -= h;
            let fd = (mc_acquisition(s, sur, &p).unwrap() - mc_acquisition(s, sur, &m).unwrap()) / (2.0 * h);
            let g = grad[i];
            if g.abs() < 1e-8 && fd.abs() < 1e-8 {
                continue;
            }
            let rel = (fd - g).abs() / g.abs().max(fd.abs());
            assert!(rel < 1e-4, "{:?} coord {i}: analytic {g} vs fd {fd}", s.kind);
        }
    }

    #[test]
    fn acquisition_gradients_match_differences() {
        let scale: Vec<f64> = env_model::UPPER.iter().zip(env_model::LOWER).map(|(h, l)| h - l).collect();
        for (t, kind) in [DecoderKind::Split, DecoderKind::Concat].into_iter().enumerate() {
            let (model, norm, g, grid) = env_fixture(kind, 0.75, 10 + t as u64);
            let domain = norm.domain().clone();
            let mut rng = seed::rng(t as u64);
            let sur = CompositeSurrogate::sample(&model, &norm, g.as_ref(), &grid, 1.0, 6, &mut rng).unwrap();
            let u = domain.sample_uniform(&mut rng);
            let vals = sur.evaluate(&u).unwrap();
            let mid = vals.data().iter().sum::<f64>() / 6.0;
            for kind in [
                AcquisitionKind::Ei,
                AcquisitionKind::Lei { delta: 0.01 },
                AcquisitionKind::Lcb { beta: 1.5, spread: Spread::Std },
                AcquisitionKind::Lcb { beta: 1.5, spread: Spread::MeanAbsDev },
            ] {
                fd_check(&spec(kind, 6, mid), &sur, &u, &scale);
            }
            let mut two = u.clone();
            two.extend(domain.sample_uniform(&mut rng));
            fd_check(&spec(AcquisitionKind::Qlei { delta: 0.01, q: 2 }, 6, mid), &sur, &two, &scale);
        }
    }

    #[test]
    fn leaky_branch_gradient_is_scaled_objective_gradient() {
        let (model, norm, g, grid) = env_fixture(DecoderKind::Split, 0.5, 21);
        let sur = CompositeSurrogate::sample(&model, &norm, g.as_ref(), &grid, 1.0, 1, &mut seed::rng(3)).unwrap();
        let u = [10.5, 0.08, 1.2, 30.2];
        let v = sur.evaluate(&u).unwrap().get(0, 0);
        let delta = 0.03;
        let (_, gl) = grad_acquisition(&spec(AcquisitionKind::Lei { delta }, 1, v + 10.0), &sur, &u).unwrap();
        let (_, gm) = grad_acquisition(&spec(AcquisitionKind::Lcb { beta: 1.0, spread: Spread::Std }, 1, 0.0), &sur, &u).unwrap();
        for (a, b) in gl.iter().zip(&gm) {
            assert!((a - delta * b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn ensemble_surrogate_gradients() {
        let (model, norm, g, grid) = env_fixture(DecoderKind::Split, 0.0, 4);
        let members = vec![model.base().clone(), env_fixture(DecoderKind::Split, 0.0, 8).0.base().clone()];
        let sur = EnsembleSurrogate::new(&members, &norm, g.as_ref(), &grid, 1.0).unwrap();
        let u = [9.5, 0.06, 0.8, 30.1];
        let v = sur.evaluate(&u).unwrap();
        assert_eq!(v.cols(), 2);
        let field = crate::training::predict_field(&model, &norm, &grid, &u, &[0.0; 4]).unwrap();
        assert!((v.get(0, 0) - g.value(&field).unwrap()).abs() < 1e-12 * v.get(0, 0).abs().max(1.0));
        let scale: Vec<f64> = env_model::UPPER.iter().zip(env_model::LOWER).map(|(h, l)| h - l).collect();
        let mid = (v.get(0, 0) + v.get(0, 1)) / 2.0;
        fd_check(&spec(AcquisitionKind::Lcb { beta: 1.0, spread: Spread::Std }, 2, mid), &sur, &u, &scale);
        fd_check(&spec(AcquisitionKind::Lei { delta: 0.01 }, 2, mid), &sur, &u, &scale);
    }
}
