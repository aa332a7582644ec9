//! The composite BO outer loop.
//!
//! Every iteration trains a fresh NEON surrogate on all data seen so far,
//! maximizes a Monte-Carlo acquisition over `G(u, z) = g(ĥ(u, ·, z))` with
//! multi-restart L-BFGS and evaluates the true `g(h(u))` at the winner.
//! Internally everything is maximized; minimized problems are negated at the
//! [`Problem`] boundary and logged in their own sense.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::acq_opt::{multi_restart_maximize, AcquisitionObjective, RestartExecutor, RestartPlan};
use crate::acquisition::{acquisition_value, AcquisitionKind, AcquisitionSpec, CompositeSurrogate, EpistemicObjective};
use crate::benchmarks::{BenchmarkId, Problem, Sense};
use crate::domain::{BoxDomain, Field};
use crate::epinet::{sample_indices, EpinetConfig, NeonConfig, NeonModel};
use crate::error::{Error, Result};
use crate::nn::LrSchedule;
use crate::operator::{DecoderConfig, DecoderKind, EncoderConfig, FourierConfig};
use crate::seed::{self, purpose};
use crate::training::{fit, Dataset, Normalizer, TrainConfig};

/// Source of wall-clock time in seconds.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Always reports zero, which keeps logs byte-reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

/// Scrambled van der Corput points: per axis a random digital shift of the
/// base-2 radical inverse plus an independent permutation of point order.
pub fn initial_design(domain: &BoxDomain, n0: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::seq::SliceRandom;
    use rand::Rng as _;
    let mut rng = seed::rng_for(seed, &[purpose::DESIGN]);
    let d = domain.dim();
    let mut columns = Vec::with_capacity(d);
    for _ in 0..d {
        let shift: u64 = rng.random::<u64>() >> 11;
        let mut col: Vec<f64> = (0..n0 as u64)
            .map(|i| {
                let bits = (i.reverse_bits() >> 11) ^ shift;
                bits as f64 / (1u64 << 53) as f64
            })
            .collect();
        col.shuffle(&mut rng);
        columns.push(col);
    }
    (0..n0)
        .map(|i| {
            let v: Vec<f64> = columns.iter().map(|c| c[i]).collect();
            domain.from_unit(&v)
        })
        .collect()
}

/// `n0` distinct candidates in a seeded random order.
pub fn candidate_design(candidates: &[Vec<f64>], n0: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if candidates.len() < n0 {
        return Err(Error::Config(format!("initial design of {n0} points from {} candidates", candidates.len())));
    }
    let mut rng = seed::rng_for(seed, &[purpose::DESIGN]);
    let mut idx = rand::seq::index::sample(&mut rng, candidates.len(), n0).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| candidates[i].clone()).collect())
}

/// `max(5, 2·d_u)`.
pub fn default_initial_points(dim: usize) -> usize {
    (2 * dim).max(5)
}

/// Architecture and training settings of the surrogate; the problem fills in
/// input, query and output dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateConfig {
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_kind: DecoderKind,
    pub decoder_hidden: Vec<usize>,
    pub fourier: Option<FourierConfig>,
    pub epinet: EpinetConfig,
    pub train: TrainConfig,
}

impl SurrogateConfig {
    /// Batch size that always selects every training point.
    pub const FULL_BATCH: usize = u32::MAX as usize;

    pub fn preset(id: BenchmarkId) -> Self {
        let epinet = |hidden: Vec<usize>, prior_width: usize, prior_scale: f64| EpinetConfig {
            hidden,
            index_dim: 16,
            prior_hidden: vec![prior_width; 2],
            prior_scale,
        };
        let exp = LrSchedule::exponential(1e-3, 0.9, 1000.0);
        let cosine = |total: usize| LrSchedule::WarmupCosine {
            base: 1e-3,
            warmup: total / 20,
            total,
        };
        let train = |steps: usize, batch_size: usize, schedule: LrSchedule| TrainConfig {
            steps,
            batch_size,
            schedule,
            ..TrainConfig::default()
        };
        match id {
            BenchmarkId::EnvModel => SurrogateConfig {
                encoder_hidden: vec![64, 64],
                latent_dim: 64,
                decoder_kind: DecoderKind::Split,
                decoder_hidden: vec![64, 64],
                fourier: Some(FourierConfig { n_freq: 16, scale: 1.0 }),
                epinet: epinet(vec![32, 32], 5, 0.75),
                train: train(12_000, 256, exp),
            },
            BenchmarkId::Brusselator => SurrogateConfig {
                encoder_hidden: vec![64, 64],
                latent_dim: 96,
                decoder_kind: DecoderKind::Split,
                decoder_hidden: vec![64, 64, 64],
                fourier: Some(FourierConfig { n_freq: 32, scale: 5.0 }),
                epinet: epinet(vec![32, 32], 5, 1.0),
                train: train(4_000, Self::FULL_BATCH, exp),
            },
            BenchmarkId::Interferometer => SurrogateConfig {
                encoder_hidden: vec![64; 4],
                latent_dim: 96,
                decoder_kind: DecoderKind::Split,
                decoder_hidden: vec![128; 6],
                fourier: Some(FourierConfig { n_freq: 32, scale: 10.0 }),
                epinet: epinet(vec![64; 3], 8, 1.0),
                train: train(15_000, 16_384, cosine(15_000)),
            },
            BenchmarkId::CellTowers => SurrogateConfig {
                encoder_hidden: vec![64],
                latent_dim: 192,
                decoder_kind: DecoderKind::Split,
                decoder_hidden: vec![64; 6],
                fourier: Some(FourierConfig { n_freq: 32, scale: 15.0 }),
                epinet: epinet(vec![64; 3], 5, 0.5),
                train: train(12_000, 2_500, cosine(12_000)),
            },
        }
    }

    pub fn neon(&self, input_dim: usize, query_dim: usize, output_dim: usize) -> NeonConfig {
        NeonConfig {
            encoder: EncoderConfig {
                input_dim,
                hidden: self.encoder_hidden.clone(),
                latent_dim: self.latent_dim,
            },
            decoder: DecoderConfig {
                kind: self.decoder_kind,
                hidden: self.decoder_hidden.clone(),
                query_dim,
                output_dim,
                fourier: self.fourier,
            },
            epinet: self.epinet.clone(),
        }
    }

    pub fn neon_for(&self, problem: &Problem) -> NeonConfig {
        self.neon(problem.domain.dim(), problem.grid.dim(), problem.functional.channels())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoConfig {
    pub surrogate: SurrogateConfig,
    /// Acquisition used when one point is acquired per iteration; `run_bo_parallel`
    /// replaces it by q-LEI with the same δ.
    pub acquisition: AcquisitionKind,
    pub k: usize,
    pub restarts: RestartPlan,
    /// Acquisition iterations after the initial design.
    pub budget: usize,
    /// Initial design size; `None` means [`default_initial_points`].
    pub n0: Option<usize>,
    pub seed: u64,
}

impl BoConfig {
    pub fn preset(id: BenchmarkId) -> Self {
        BoConfig {
            surrogate: SurrogateConfig::preset(id),
            acquisition: AcquisitionKind::Lei { delta: 0.01 },
            k: 64,
            restarts: RestartPlan::default(),
            budget: 30,
            n0: None,
            seed: 0,
        }
    }

    pub fn initial_points(&self, dim: usize) -> usize {
        self.n0.unwrap_or_else(|| default_initial_points(dim))
    }

    pub fn validate(&self) -> Result<()> {
        self.surrogate.train.validate()?;
        AcquisitionSpec::new(self.acquisition, self.k, 0.0)?;
        if self.restarts.n_reset == 0 {
            return Err(Error::Config("n_reset must be ≥ 1".into()));
        }
        if self.n0 == Some(0) {
            return Err(Error::Config("n0 must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Seeds of the streams used in one acquisition iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IterationSeeds {
    pub model: u64,
    pub training: u64,
    pub index: u64,
    pub restarts: u64,
}

impl IterationSeeds {
    pub fn derive(seed: u64, iteration: usize) -> Self {
        let it = iteration as u64;
        IterationSeeds {
            model: seed::derive(seed, &[it, purpose::MODEL_INIT]),
            training: seed::derive(seed, &[it, purpose::TRAINING]),
            index: seed::derive(seed, &[it, purpose::INDEX_BATCH]),
            restarts: seed::derive(seed, &[it, purpose::RESTARTS]),
        }
    }
}

/// One ground-truth evaluation. Iteration 0 is the initial design.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub iteration: usize,
    pub u: Vec<f64>,
    /// Objective in the problem's own sense.
    pub f: f64,
    pub best_so_far: f64,
    pub acquisition: Option<f64>,
    pub train_loss: Option<f64>,
    /// Seconds since the start of the run.
    pub wall_seconds: f64,
    pub seeds: Option<IterationSeeds>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub problem: String,
    pub sense: Sense,
    pub seed: u64,
    pub n0: usize,
    pub q: usize,
    pub records: Vec<EvalRecord>,
    /// Set when the run stopped early.
    pub error: Option<String>,
}

/// One row of the summary table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub iteration: usize,
    pub points_evaluated: usize,
    pub best_so_far: f64,
    /// Best objective among the points acquired in this iteration.
    pub acquired_f: f64,
    pub wall_seconds: f64,
}

impl RunLog {
    /// Number of completed acquisition iterations.
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iteration)
    }

    pub fn best(&self) -> Option<f64> {
        self.records.last().map(|r| r.best_so_far)
    }

    pub fn best_record(&self) -> Option<&EvalRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EvalRecord>, r| match best {
                Some(b) if self.sense.internal(b.f) >= self.sense.internal(r.f) => Some(b),
                _ => Some(r),
            })
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows: Vec<SummaryRow> = Vec::new();
        for (i, r) in self.records.iter().enumerate() {
            match rows.last_mut() {
                Some(row) if row.iteration == r.iteration => {
                    row.points_evaluated = i + 1;
                    row.best_so_far = r.best_so_far;
                    if self.sense.internal(r.f) > self.sense.internal(row.acquired_f) {
                        row.acquired_f = r.f;
                    }
                    row.wall_seconds = r.wall_seconds;
                }
                _ => rows.push(SummaryRow {
                    iteration: r.iteration,
                    points_evaluated: i + 1,
                    best_so_far: r.best_so_far,
                    acquired_f: r.f,
                    wall_seconds: r.wall_seconds,
                }),
            }
        }
        rows
    }
}

struct Recorder<'a> {
    problem: &'a Problem,
    data: Dataset,
    log: RunLog,
    best_internal: f64,
    clock: &'a dyn Clock,
    start: f64,
}

impl<'a> Recorder<'a> {
    fn new(problem: &'a Problem, seed: u64, n0: usize, q: usize, clock: &'a dyn Clock) -> Self {
        Recorder {
            problem,
            data: Dataset::new(problem.grid.clone()),
            log: RunLog {
                problem: problem.name.clone(),
                sense: problem.sense,
                seed,
                n0,
                q,
                records: Vec::new(),
                error: None,
            },
            best_internal: f64::NEG_INFINITY,
            clock,
            start: clock.now(),
        }
    }

    fn evaluate(&mut self, iteration: usize, u: Vec<f64>, extra: (Option<f64>, Option<f64>, Option<IterationSeeds>)) -> Result<()> {
        let (f, field): (f64, Field) = self.problem.objective(&u)?;
        let v = self.problem.sense.internal(f);
        if v > self.best_internal {
            self.best_internal = v;
        }
        self.data.push(u.clone(), field)?;
        self.log.records.push(EvalRecord {
            iteration,
            u,
            f,
            best_so_far: self.problem.sense.external(self.best_internal),
            acquisition: extra.0,
            train_loss: extra.1,
            wall_seconds: self.clock.now() - self.start,
            seeds: extra.2,
        });
        Ok(())
    }

    fn fail(mut self, iteration: usize, e: Error) -> RunLog {
        self.log.error = Some(format!("iteration {iteration}: {e}"));
        self.log
    }
}

/// Trains a fresh surrogate on `data` with the iteration's seeds.
pub fn train_surrogate(
    problem: &Problem,
    cfg: &SurrogateConfig,
    data: &Dataset,
    seeds: &IterationSeeds,
) -> Result<(NeonModel, Normalizer, f64)> {
    let mut model = NeonModel::init(&cfg.neon_for(problem), seeds.model)?;
    let norm = Normalizer::fit(&problem.domain, data)?;
    let train = TrainConfig {
        seed: seeds.training,
        ..cfg.train.clone()
    };
    let history = fit(&mut model, data, &norm, &train)?;
    let last = history.last().copied().unwrap_or(f64::NAN);
    Ok((model, norm, last))
}

fn acquire(
    problem: &Problem,
    cfg: &BoConfig,
    kind: AcquisitionKind,
    data: &Dataset,
    incumbent: f64,
    seeds: &IterationSeeds,
    exec: &dyn RestartExecutor,
) -> Result<(Vec<Vec<f64>>, f64, f64)> {
    let (model, norm, loss) = train_surrogate(problem, &cfg.surrogate, data, seeds)?;
    let sign = problem.sense.internal(1.0);
    let zs = sample_indices(model.index_dim(), cfg.k, &mut seed::rng(seeds.index))
        .into_iter()
        .map(|z| z.0)
        .collect();
    let surrogate = CompositeSurrogate::new(&model, &norm, problem.functional.as_ref(), &problem.grid, sign, zs)?;
    let spec = AcquisitionSpec::new(kind, cfg.k, incumbent)?;
    let q = kind.batch();
    let d = problem.domain.dim();
    let (stacked, value) = match problem.provider.candidates() {
        Some(cands) => greedy_candidates(&spec, &surrogate, cands, data.inputs(), q)?,
        None => {
            let obj = AcquisitionObjective {
                spec,
                surrogate: &surrogate,
            };
            let out = multi_restart_maximize(&obj, &problem.domain.power(q), &cfg.restarts, seeds.restarts, exec)?;
            (out.best.x, out.best.f)
        }
    };
    Ok((stacked.chunks(d).map(|c| c.to_vec()).collect(), value, loss))
}

/// Candidate-set acquisition for tabulated providers: the batch is grown one
/// point at a time, each time adding the unevaluated candidate that maximizes
/// the joint acquisition of the points chosen so far.
fn greedy_candidates(
    spec: &AcquisitionSpec,
    surrogate: &dyn EpistemicObjective,
    candidates: &[Vec<f64>],
    seen: &[Vec<f64>],
    q: usize,
) -> Result<(Vec<f64>, f64)> {
    let bits = |u: &[f64]| u.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let seen: Vec<Vec<u64>> = seen.iter().map(|u| bits(u)).collect();
    let mut open: Vec<&Vec<f64>> = candidates.iter().filter(|c| !seen.contains(&bits(c))).collect();
    if open.len() < q {
        return Err(Error::Lookup(format!("only {} unevaluated candidates left, need {q}", open.len())));
    }
    let mut chosen: Vec<f64> = Vec::new();
    let mut value = f64::NEG_INFINITY;
    for j in 1..=q {
        let partial = AcquisitionSpec {
            kind: match spec.kind {
                AcquisitionKind::Qlei { delta, .. } => AcquisitionKind::Qlei { delta, q: j },
                k => k,
            },
            ..*spec
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in open.iter().enumerate() {
            let mut us = chosen.clone();
            us.extend_from_slice(c);
            let v = acquisition_value(&partial, &surrogate.evaluate(&us)?)?.0;
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        let (i, v) = best.expect("open candidates are nonempty");
        chosen.extend_from_slice(open.remove(i));
        value = v;
    }
    Ok((chosen, value))
}

fn run(problem: &Problem, cfg: &BoConfig, kind: AcquisitionKind, exec: &dyn RestartExecutor, clock: &dyn Clock) -> Result<RunLog> {
    cfg.validate()?;
    let q = kind.batch();
    let n0 = cfg.initial_points(problem.domain.dim());
    let mut rec = Recorder::new(problem, cfg.seed, n0, q, clock);
    let design = match problem.provider.candidates() {
        Some(cands) => candidate_design(cands, n0, cfg.seed)?,
        None => initial_design(&problem.domain, n0, cfg.seed),
    };
    for u in design {
        if let Err(e) = rec.evaluate(0, u, (None, None, None)) {
            return Ok(rec.fail(0, e));
        }
    }
    for t in 1..=cfg.budget {
        let seeds = IterationSeeds::derive(cfg.seed, t);
        let acquired = acquire(problem, cfg, kind, &rec.data, rec.best_internal, &seeds, exec);
        let (points, value, loss) = match acquired {
            Ok(x) => x,
            Err(e) => return Ok(rec.fail(t, e)),
        };
        for u in points {
            if let Err(e) = rec.evaluate(t, u, (Some(value), Some(loss), Some(seeds))) {
                return Ok(rec.fail(t, e));
            }
        }
    }
    Ok(rec.log)
}

/// Sequential composite BO with `cfg.acquisition`.
///
/// Configuration errors are returned; failures during the run truncate the
/// log and set [`RunLog::error`].
pub fn run_bo(problem: &Problem, cfg: &BoConfig, exec: &dyn RestartExecutor, clock: &dyn Clock) -> Result<RunLog> {
    if let AcquisitionKind::Qlei { q, .. } = cfg.acquisition {
        if q != 1 {
            return Err(Error::Config("run_bo acquires one point per iteration; use run_bo_parallel".into()));
        }
    }
    run(problem, cfg, cfg.acquisition, exec, clock)
}

/// Batch BO acquiring `q` points per iteration with q-LEI, taking δ from
/// `cfg.acquisition` (which must be L-EI or q-LEI).
pub fn run_bo_parallel(problem: &Problem, cfg: &BoConfig, q: usize, exec: &dyn RestartExecutor, clock: &dyn Clock) -> Result<RunLog> {
    if q == 0 {
        return Err(Error::Config("q must be ≥ 1".into()));
    }
    let delta = match cfg.acquisition {
        AcquisitionKind::Lei { delta } | AcquisitionKind::Qlei { delta, .. } => delta,
        other => return Err(Error::Config(format!("parallel acquisition needs a leaky δ, got {other:?}"))),
    };
    run(problem, cfg, AcquisitionKind::Qlei { delta, q }, exec, clock)
}

/// Uniform random search with `n` evaluations, logged like a BO run with
/// every point in its own iteration.
pub fn run_random_search(problem: &Problem, n: usize, seed: u64, clock: &dyn Clock) -> RunLog {
    let mut rng = seed::rng_for(seed, &[purpose::RANDOM_SEARCH]);
    let mut rec = Recorder::new(problem, seed, 0, 1, clock);
    for i in 0..n {
        let u = problem.domain.sample_uniform(&mut rng);
        if let Err(e) = rec.evaluate(i + 1, u, (None, None, None)) {
            return rec.fail(i + 1, e);
        }
    }
    rec.log
}

impl core::fmt::Display for RunLog {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "{} seed {}: {} evaluations, best {}",
            self.problem,
            self.seed,
            self.records.len(),
            self.best().map_or_else(|| "n/a".to_string(), |b| format!("{b:.6e}"))
        )
    }
}
