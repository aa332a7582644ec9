//! Fitting a [`NeonModel`] to observed fields by minimizing the mean relative
//! L2 error with Adam.
//!
//! The model always works in normalized coordinates: designs are mapped to the
//! unit box, query points to the unit grid box, and targets are standardized
//! per channel. [`Normalizer`] converts in both directions.

use alloc::format;
use alloc::vec::Vec;
use num_traits::Float;
use rand::seq::index;

use crate::domain::{BoxDomain, Field, Grid};
use crate::epinet::{sample_indices, NeonModel};
use crate::error::{ensure_len, Error, Result};
use crate::nn::{Adam, AdamConfig, LrSchedule, Mat, ParamTree, Tape};
use crate::operator::OperatorNet;
use crate::seed::{self, purpose};

/// Guard added to target norms in the relative loss.
pub const REL_EPS: f64 = 1e-8;

/// Designs `u_i` with their fields `S_i` observed on one shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    grid: Grid,
    targets: Vec<Field>,
}

impl Dataset {
    pub fn new(grid: Grid) -> Self {
        Dataset {
            inputs: Vec::new(),
            grid,
            targets: Vec::new(),
        }
    }

    pub fn from_parts(inputs: Vec<Vec<f64>>, grid: Grid, targets: Vec<Field>) -> Result<Self> {
        let mut d = Dataset {
            inputs: Vec::new(),
            grid,
            targets: Vec::new(),
        };
        for (u, s) in inputs.into_iter().zip(targets) {
            d.push(u, s)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, u: Vec<f64>, field: Field) -> Result<()> {
        ensure_len("field points", self.grid.len(), field.points())?;
        if let Some(first) = self.inputs.first() {
            ensure_len("design dimension", first.len(), u.len())?;
            ensure_len("field channels", self.targets[0].channels(), field.channels())?;
        }
        if !u.iter().all(|v| v.is_finite()) || !field.values().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dataset entry".into()));
        }
        self.inputs.push(u);
        self.targets.push(field);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Field] {
        &self.targets
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.targets.first().map_or(0, Field::channels)
    }
}

/// Affine maps between physical and model coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    domain: BoxDomain,
    grid_bounds: BoxDomain,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Normalizer {
    /// Per-channel mean and (population) standard deviation over all
    /// instances and grid points. A zero deviation is replaced by 1.
    pub fn fit(domain: &BoxDomain, data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Config("cannot normalize an empty dataset".into()));
        }
        let c = data.channels();
        let mut mean = alloc::vec![0.0; c];
        let mut count = 0usize;
        for f in data.targets() {
            for p in 0..f.points() {
                for (k, m) in mean.iter_mut().enumerate() {
                    *m += f.get(p, k);
                }
                count += 1;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = alloc::vec![0.0; c];
        for f in data.targets() {
            for p in 0..f.points() {
                for k in 0..c {
                    let d = f.get(p, k) - mean[k];
                    var[k] += d * d;
                }
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / count as f64).sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Normalizer {
            domain: domain.clone(),
            grid_bounds: data.grid().bounds().clone(),
            mean,
            std,
        })
    }

    pub fn from_parts(domain: BoxDomain, grid_bounds: BoxDomain, mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        ensure_len("normalizer std", mean.len(), std.len())?;
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("normalizer std must be positive".into()));
        }
        Ok(Normalizer {
            domain,
            grid_bounds,
            mean,
            std,
        })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn grid_bounds(&self) -> &BoxDomain {
        &self.grid_bounds
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn input(&self, u: &[f64]) -> Vec<f64> {
        self.domain.to_unit(u)
    }

    pub fn input_inverse(&self, v: &[f64]) -> Vec<f64> {
        self.domain.from_unit(v)
    }

    /// Grid points in unit coordinates, one row each.
    pub fn queries(&self, grid: &Grid) -> Mat {
        let mut out = grid.points().clone();
        for r in 0..out.rows() {
            let unit = self.grid_bounds.to_unit(out.row(r));
            out.row_mut(r).copy_from_slice(&unit);
        }
        out
    }

    /// Standardized field as a `points × channels` matrix.
    pub fn target(&self, field: &Field) -> Result<Mat> {
        ensure_len("field channels", self.channels(), field.channels())?;
        let c = self.channels();
        let data = field
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % c]) / self.std[i % c])
            .collect();
        Mat::from_vec(field.points(), c, data)
    }

    pub fn target_inverse_value(&self, channel: usize, v: f64) -> f64 {
        v * self.std[channel] + self.mean[channel]
    }

    /// Physical field from a standardized `points × channels` matrix.
    pub fn target_inverse(&self, m: &Mat) -> Result<Field> {
        ensure_len("prediction channels", self.channels(), m.cols())?;
        let c = self.channels();
        let data = m
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| self.target_inverse_value(i % c, *v))
            .collect();
        Field::new(m.rows(), c, data)
    }
}

/// `‖pred − target‖ / (‖target‖ + ε)` over all entries of one instance.
pub fn relative_l2_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    ensure_len("relative loss", target.len(), pred.len())?;
    let num: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    let den: f64 = target.iter().map(|t| t * t).sum();
    Ok(num.sqrt() / (den.sqrt() + REL_EPS))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Number of (instance, grid point) pairs per step.
    pub batch_size: usize,
    /// Epistemic indices averaged per step.
    pub k_train: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 12_000,
            batch_size: 256,
            k_train: 8,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.k_train == 0 {
            return Err(Error::Config("steps, batch size and k_train must be ≥ 1".into()));
        }
        if !(self.schedule.rate(0) > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Normalized training tensors, laid out instance-major.
struct Prepared {
    u: Mat,
    qfeat: Mat,
    queries: Mat,
    targets: Mat,
    points: usize,
}

impl Prepared {
    fn new(net: &OperatorNet, data: &Dataset, norm: &Normalizer) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Config("training needs at least one instance".into()));
        }
        ensure_len("model input dimension", net.input_dim(), data.inputs()[0].len())?;
        ensure_len("model output dimension", net.output_dim(), data.channels())?;
        let n = data.len();
        let d = net.input_dim();
        let mut u = Mat::zeros(n, d);
        for (i, x) in data.inputs().iter().enumerate() {
            u.row_mut(i).copy_from_slice(&norm.input(x));
        }
        let queries = norm.queries(data.grid());
        let qfeat = net.query_features(&queries)?;
        let m = data.grid().len();
        let c = data.channels();
        let mut targets = Mat::zeros(n * m, c);
        for (i, f) in data.targets().iter().enumerate() {
            let t = norm.target(f)?;
            targets.data_mut()[i * m * c..(i + 1) * m * c].copy_from_slice(t.data());
        }
        Ok(Prepared {
            u,
            qfeat,
            queries,
            targets,
            points: m,
        })
    }

    fn total(&self) -> usize {
        self.targets.rows()
    }
}

struct Batch {
    design: Vec<usize>,
    qfeat: Mat,
    queries: Mat,
    targets: Mat,
}

impl Batch {
    fn new(p: &Prepared, rows: &[usize]) -> Self {
        let point: Vec<usize> = rows.iter().map(|r| r % p.points).collect();
        Batch {
            design: rows.iter().map(|r| r / p.points).collect(),
            qfeat: p.qfeat.select_rows(&point),
            queries: p.queries.select_rows(&point),
            targets: p.targets.select_rows(rows),
        }
    }
}

fn sample_rows<R: rand::Rng + ?Sized>(total: usize, batch: usize, rng: &mut R) -> Vec<usize> {
    if batch >= total {
        (0..total).collect()
    } else {
        let mut rows = index::sample(rng, total, batch).into_vec();
        rows.sort_unstable();
        rows
    }
}

/// Mean over `zs` of the batch relative loss, with gradients for the three
/// trainable trees.
fn neon_loss(
    model: &NeonModel,
    u: &Mat,
    batch: &Batch,
    zs: &[Vec<f64>],
    grad: bool,
    stop_gradient: bool,
) -> Result<(f64, Option<[ParamTree; 3]>)> {
    let mut tape = Tape::new();
    let trees = model.register(&mut tape, grad);
    let uv = tape.constant(u.clone());
    let qf = tape.constant(batch.qfeat.clone());
    let q = tape.constant(batch.queries.clone());
    let g = model.record(&mut tape, trees, uv, &batch.design, qf, q, stop_gradient)?;
    let mut total = None;
    for z in zs {
        let pred = model.record_prediction(&mut tape, &g, z)?;
        let l = tape.relative_l2(pred, &batch.targets, &batch.design, REL_EPS)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    let total = total.ok_or_else(|| Error::Config("no epistemic indices".into()))?;
    let loss = tape.scale(total, 1.0 / zs.len() as f64);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss {value}")));
    }
    if !grad {
        return Ok((value, None));
    }
    let mut gr = tape.backward_scalar(loss)?;
    let out = [
        gr.take_param(trees.encoder).expect("trainable"),
        gr.take_param(trees.decoder).expect("trainable"),
        gr.take_param(trees.learnable).expect("trainable"),
    ];
    if out.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("training gradient".into()));
    }
    Ok((value, Some(out)))
}

/// Loss on the full dataset for fixed indices `zs` (model unchanged).
pub fn dataset_loss(model: &NeonModel, data: &Dataset, norm: &Normalizer, zs: &[Vec<f64>]) -> Result<f64> {
    let p = Prepared::new(model.base(), data, norm)?;
    let rows: Vec<usize> = (0..p.total()).collect();
    Ok(neon_loss(model, &p.u, &Batch::new(&p, &rows), zs, false, true)?.0)
}

/// Full-dataset loss for fixed `zs` with gradients for the encoder, decoder
/// and learnable-head trees (in that order).
///
/// With `stop_gradient` the base gradients are the training ones, which skip
/// the head's path through the features; without it they are the exact
/// derivative of the loss.
pub fn dataset_loss_and_grad(
    model: &NeonModel,
    data: &Dataset,
    norm: &Normalizer,
    zs: &[Vec<f64>],
    stop_gradient: bool,
) -> Result<(f64, [ParamTree; 3])> {
    let p = Prepared::new(model.base(), data, norm)?;
    let rows: Vec<usize> = (0..p.total()).collect();
    let (loss, grads) = neon_loss(model, &p.u, &Batch::new(&p, &rows), zs, true, stop_gradient)?;
    Ok((loss, grads.expect("requested")))
}

/// Trains `model` in place and returns the loss recorded before each update.
///
/// Each step draws its point batch and then `k_train` indices from one
/// stream seeded by `cfg.seed`.
pub fn fit(model: &mut NeonModel, data: &Dataset, norm: &Normalizer, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let p = Prepared::new(model.base(), data, norm)?;
    let mut rng = seed::rng_for(cfg.seed, &[purpose::TRAINING]);
    let mut adam = Adam::new(cfg.adam, &model.trainable_trees());
    let dz = model.index_dim();
    let full = cfg.batch_size >= p.total();
    let full_batch = full.then(|| Batch::new(&p, &(0..p.total()).collect::<Vec<_>>()));
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let owned;
        let batch = match &full_batch {
            Some(b) => b,
            None => {
                owned = Batch::new(&p, &sample_rows(p.total(), cfg.batch_size, &mut rng));
                &owned
            }
        };
        let zs: Vec<Vec<f64>> = sample_indices(dz, cfg.k_train, &mut rng).into_iter().map(|z| z.0).collect();
        let (loss, grads) = neon_loss(model, &p.u, batch, &zs, true, true).map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("{msg} at step {step}")),
            other => other,
        })?;
        let grads = grads.expect("requested");
        history.push(loss);
        let mut trees = model.trainable_trees_mut();
        adam.step(&mut trees, &[&grads[0], &grads[1], &grads[2]], &cfg.schedule);
    }
    Ok(history)
}

/// Trains a plain operator network (no epistemic head) on the same loss.
pub fn fit_operator(net: &mut OperatorNet, data: &Dataset, norm: &Normalizer, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let p = Prepared::new(net, data, norm)?;
    let mut rng = seed::rng_for(cfg.seed, &[purpose::TRAINING]);
    let mut adam = Adam::new(cfg.adam, &[net.encoder().params(), net.decoder()]);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = Batch::new(&p, &sample_rows(p.total(), cfg.batch_size, &mut rng));
        let (loss, ge, gd) = {
            let mut tape = Tape::new();
            let enc = tape.register(net.encoder().params(), true);
            let dec = tape.register(net.decoder(), true);
            let uv = tape.constant(p.u.clone());
            let qf = tape.constant(batch.qfeat.clone());
            let g = net.record(&mut tape, enc, dec, uv, &batch.design, qf)?;
            let l = tape.relative_l2(g.prediction, &batch.targets, &batch.design, REL_EPS)?;
            let value = tape.scalar(l);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training loss {value} at step {step}")));
            }
            let mut gr = tape.backward_scalar(l)?;
            (value, gr.take_param(enc).expect("trainable"), gr.take_param(dec).expect("trainable"))
        };
        history.push(loss);
        let (e, d) = net.trees_mut();
        adam.step(&mut [e, d], &[&ge, &gd], &cfg.schedule);
    }
    Ok(history)
}

/// Trains every ensemble member with its own seed stream.
pub fn fit_ensemble(members: &mut [OperatorNet], data: &Dataset, norm: &Normalizer, cfg: &TrainConfig) -> Result<Vec<Vec<f64>>> {
    members
        .iter_mut()
        .enumerate()
        .map(|(i, m)| {
            let c = TrainConfig {
                seed: seed::derive(cfg.seed, &[i as u64]),
                ..cfg.clone()
            };
            fit_operator(m, data, norm, &c)
        })
        .collect()
}

/// Denormalized prediction of `model` on every grid point for one index.
pub fn predict_field(model: &NeonModel, norm: &Normalizer, grid: &Grid, u: &[f64], z: &[f64]) -> Result<Field> {
    let queries = norm.queries(grid);
    let qf = model.base().query_features(&queries)?;
    let mut tape = Tape::new();
    let trees = model.register(&mut tape, false);
    let uv = tape.constant(Mat::row_vector(norm.input(u)));
    let qf = tape.constant(qf);
    let q = tape.constant(queries);
    let design = alloc::vec![0; grid.len()];
    let g = model.record(&mut tape, trees, uv, &design, qf, q, true)?;
    let out = model.record_prediction(&mut tape, &g, z)?;
    norm.target_inverse(tape.value(out))
}
