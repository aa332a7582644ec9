//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Numeric arguments select criteria, e.g.
//! `cargo test -p neon --test acceptance -- 1 4`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use neon_core::acquisition::{
    ei_point, grad_acquisition, lei_point, mc_acquisition, qlei, AcquisitionKind, AcquisitionSpec, CompositeSurrogate,
    EpistemicObjective, FnSurrogate, Spread,
};
use neon_core::benchmarks::brusselator::{
    brusselator_solve, initial_state, reaction, weighted_variance, BrusselatorSpec,
};
use neon_core::benchmarks::{env_model, BenchmarkId, Functional, Problem};
use neon_core::bo::{run_bo, run_bo_parallel, run_random_search, BoConfig, NoClock, RunLog, SurrogateConfig};
use neon_core::epinet::{sample_index, sample_indices, EpinetConfig, EpistemicIndex, NeonConfig, NeonModel};
use neon_core::nn::{Mat, ParamTree, Tape};
use neon_core::operator::{DecoderConfig, DecoderKind, EncoderConfig, FourierConfig};
use neon_core::seed::rng;
use neon_core::training::{dataset_loss, dataset_loss_and_grad, fit, Dataset, Normalizer, REL_EPS};
use neon_core::{BoxDomain, Field, Grid};
use rand::Rng;

use neon::cli::main_with;
use neon::exec::RayonExecutor;

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// `Σ_c w_c Σ_p field(p, c)²` over the grid, a smooth nonlinear functional
/// for any channel count.
struct SquaredNorm(usize);

impl Functional for SquaredNorm {
    fn channels(&self) -> usize {
        self.0
    }

    fn value_and_grad(&self, field: &Field) -> neon_core::Result<(f64, Vec<f64>)> {
        let c = self.0;
        let w = |i: usize| 1.0 + (i % c) as f64 * 0.5;
        let v = field.values().iter().enumerate().map(|(i, x)| w(i) * x * x).sum();
        Ok((v, field.values().iter().enumerate().map(|(i, x)| 2.0 * w(i) * x).collect()))
    }
}

/// Mean of channel 0 over the grid.
struct MeanChannel;

impl Functional for MeanChannel {
    fn channels(&self) -> usize {
        1
    }

    fn value_and_grad(&self, field: &Field) -> neon_core::Result<(f64, Vec<f64>)> {
        let m = field.points() as f64;
        Ok((field.channel(0).sum::<f64>() / m, vec![1.0 / m; field.points()]))
    }
}

/// A randomly shaped NEON with random data on a random grid.
struct Instance {
    model: NeonModel,
    norm: Normalizer,
    data: Dataset,
    domain: BoxDomain,
}

fn random_instance(index: u64, kind: DecoderKind) -> Instance {
    let mut r = rng(1000 + index);
    let d = r.random_range(1..=3);
    let qd = r.random_range(1..=2);
    let c = r.random_range(1..=2);
    let n_hidden = r.random_range(1..=2);
    let latent = 2 * r.random_range(2..=3);
    let cfg = NeonConfig {
        encoder: EncoderConfig {
            input_dim: d,
            hidden: vec![r.random_range(3..=6)],
            latent_dim: latent,
        },
        decoder: DecoderConfig {
            kind,
            hidden: vec![r.random_range(3..=5); n_hidden],
            query_dim: qd,
            output_dim: c,
            fourier: (index % 3 == 0).then_some(FourierConfig { n_freq: 3, scale: 1.0 }),
        },
        epinet: EpinetConfig {
            hidden: vec![4],
            index_dim: 3,
            prior_hidden: vec![3],
            prior_scale: r.random_range(0.25..1.0),
        },
    };
    let mut model = NeonModel::init(&cfg, index).unwrap();
    // the learnable output layer starts at zero; move it so every path is live
    for v in model.head_mut().learnable_mut().params_mut().values_mut() {
        *v += r.random_range(-0.2..0.2);
    }
    let lower: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..0.0)).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + r.random_range(0.5..3.0)).collect();
    let domain = BoxDomain::new(lower, upper).unwrap();
    let m = 4;
    let points = Mat::from_vec(m, qd, (0..m * qd).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
    let grid = Grid::new(points, BoxDomain::new(vec![0.0; qd], vec![1.0; qd]).unwrap()).unwrap();
    let mut data = Dataset::new(grid);
    for _ in 0..3 {
        let u = domain.sample_uniform(&mut r);
        let vals = (0..m * c).map(|_| r.random_range(-1.0..2.0)).collect();
        data.push(u, Field::new(m, c, vals).unwrap()).unwrap();
    }
    let norm = Normalizer::fit(&domain, &data).unwrap();
    Instance { model, norm, data, domain }
}

/// Fourth-order central difference.
fn diff4(f: &mut dyn FnMut(f64) -> f64, h: f64) -> f64 {
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

fn rel_err(g: f64, fd: f64) -> f64 {
    (g - fd).abs() / g.abs().max(fd.abs())
}

fn criterion_1() -> Check {
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for i in 0..20u64 {
        let kind = if i % 2 == 0 { DecoderKind::Split } else { DecoderKind::Concat };
        let inst = random_instance(i, kind);
        let mut r = rng(2000 + i);
        let zs: Vec<Vec<f64>> = sample_indices(3, 2, &mut r).into_iter().map(|z| z.0).collect();
        let (_, exact) = dataset_loss_and_grad(&inst.model, &inst.data, &inst.norm, &zs, false).unwrap();
        let (_, trained) = dataset_loss_and_grad(&inst.model, &inst.data, &inst.norm, &zs, true).unwrap();
        for t in 0..3 {
            for (e, g) in exact[t].values().enumerate() {
                let mut loss = |h: f64| {
                    let mut m = inst.model.clone();
                    *m.trainable_trees_mut()[t].values_mut().nth(e).unwrap() += h;
                    dataset_loss(&m, &inst.data, &inst.norm, &zs).unwrap()
                };
                let fd = diff4(&mut loss, 1e-4);
                if g.abs() < 1e-8 {
                    continue;
                }
                let err = rel_err(g, fd);
                worst = worst.max(err);
                checked += 1;
                ensure!(err < 1e-4, "instance {i} ({kind:?}) tree {t} entry {e}: analytic {g} vs fd {fd}");
                // the head never sees the stop-gradient
                if t == 2 {
                    ensure!(trained[2].values().nth(e).unwrap() == g, "head gradient depends on stop-gradient");
                }
            }
        }

        let functional = SquaredNorm(inst.model.output_dim());
        let sign = if i % 4 < 2 { 1.0 } else { -1.0 };
        let sur = CompositeSurrogate::sample(&inst.model, &inst.norm, &functional, inst.data.grid(), sign, 5, &mut r).unwrap();
        let u = inst.domain.sample_uniform(&mut r);
        let mut two = u.clone();
        two.extend(inst.domain.sample_uniform(&mut r));
        let vals = sur.evaluate(&u).unwrap();
        let mid = vals.data().iter().sum::<f64>() / vals.cols() as f64;
        let widths: Vec<f64> = inst.domain.upper().iter().zip(inst.domain.lower()).map(|(h, l)| h - l).collect();
        let kinds = [
            AcquisitionKind::Ei,
            AcquisitionKind::Lei { delta: 0.01 },
            AcquisitionKind::Lcb { beta: 1.5, spread: Spread::Std },
            AcquisitionKind::Lcb { beta: 1.5, spread: Spread::MeanAbsDev },
            AcquisitionKind::Qlei { delta: 0.01, q: 2 },
        ];
        for kind in kinds {
            let spec = AcquisitionSpec::new(kind, 5, mid).unwrap();
            let x = if kind.batch() == 2 { &two } else { &u };
            let (_, grad) = grad_acquisition(&spec, &sur, x).unwrap();
            for (j, &g) in grad.iter().enumerate() {
                let h = 1e-4 * widths[j % widths.len()];
                let mut acq = |s: f64| {
                    let mut p = x.clone();
                    p[j] += s;
                    mc_acquisition(&spec, &sur, &p).unwrap()
                };
                let fd = diff4(&mut acq, h);
                if g.abs() < 1e-8 {
                    continue;
                }
                let err = rel_err(g, fd);
                worst = worst.max(err);
                checked += 1;
                ensure!(err < 1e-4, "instance {i} {kind:?} coordinate {j}: analytic {g} vs fd {fd}");
            }
        }
    }
    Ok(format!("{checked} entries, worst relative error {worst:.2e}"))
}

/// A small untrained surrogate on the Environment Model grid.
fn env_surrogate_parts(seed: u64) -> (NeonModel, Normalizer, Grid) {
    let grid = env_model::grid();
    let domain = BenchmarkId::EnvModel.domain();
    let mut cfg = SurrogateConfig::preset(BenchmarkId::EnvModel);
    cfg.encoder_hidden = vec![16];
    cfg.latent_dim = 16;
    cfg.decoder_hidden = vec![16, 16];
    cfg.epinet.hidden = vec![8];
    cfg.epinet.index_dim = 4;
    let mut model = NeonModel::init(&cfg.neon(4, 2, 1), seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for v in model.head_mut().learnable_mut().params_mut().values_mut() {
        *v += r.random_range(-0.1..0.1);
    }
    let mut data = Dataset::new(grid.clone());
    for _ in 0..6 {
        let u = domain.sample_uniform(&mut r);
        data.push(u.clone(), env_model::field_on(&u, &grid).unwrap()).unwrap();
    }
    let norm = Normalizer::fit(&domain, &data).unwrap();
    (model, norm, grid)
}

fn criterion_2() -> Check {
    let (model, norm, grid) = env_surrogate_parts(7);
    let g = BenchmarkId::EnvModel.functional(&grid).unwrap();
    let sur = CompositeSurrogate::new(&model, &norm, g.as_ref(), &grid, 1.0, vec![vec![0.0; 4]]).unwrap();
    let domain = BenchmarkId::EnvModel.domain();
    let mut r = rng(31);
    let raw: Vec<f64> = (0..1000)
        .map(|_| {
            let u = domain.sample_uniform(&mut r);
            let z = sample_index(4, &mut r);
            sur.objective(&u, z.as_slice()).unwrap()
        })
        .collect();
    // clamp range fixed from the central 90% of the raw outputs
    let mut sorted = raw.clone();
    sorted.sort_by(f64::total_cmp);
    let (a, b) = (sorted[50], sorted[949]);
    let m = b - a;
    let mut report = Vec::new();
    for eps in [1e-1, 1e-3] {
        let delta = eps / (2.0 * m);
        let mut worst: f64 = 0.0;
        for &v in &raw {
            let v = v.clamp(a, b);
            let y = r.random_range(a..=b);
            worst = worst.max((lei_point(v, y, delta).unwrap() - ei_point(v, y)).abs());
        }
        for (v, y) in [(a, b), (b, a), (a, a), (b, b)] {
            worst = worst.max((lei_point(v, y, delta).unwrap() - ei_point(v, y)).abs());
        }
        ensure!(worst <= delta * m, "ε={eps}: worst gap {worst} exceeds δM = {}", delta * m);
        ensure!(delta * m < eps, "ε={eps}: δM = {} is not below ε", delta * m);
        report.push(format!("ε={eps}: max gap {worst:.3e} ≤ δM={:.3e}", delta * m));
    }
    Ok(report.join("; "))
}

/// Gradient of the loss for the base trees with the head output added as a
/// constant, i.e. with the head's contribution analytically removed.
fn base_gradient_with_constant_head(inst: &Instance, zs: &[Vec<f64>]) -> [ParamTree; 2] {
    let model = &inst.model;
    let base = model.base();
    let data = &inst.data;
    let n = data.len();
    let m = data.grid().len();
    let c = data.channels();
    let mut u = Mat::zeros(n, base.input_dim());
    for (i, x) in data.inputs().iter().enumerate() {
        u.row_mut(i).copy_from_slice(&inst.norm.input(x));
    }
    let design: Vec<usize> = (0..n * m).map(|r| r / m).collect();
    let point: Vec<usize> = (0..n * m).map(|r| r % m).collect();
    let queries = inst.norm.queries(data.grid()).select_rows(&point);
    let qfeat = base.query_features(&inst.norm.queries(data.grid())).unwrap().select_rows(&point);
    let mut targets = Mat::zeros(n * m, c);
    for (i, f) in data.targets().iter().enumerate() {
        let t = inst.norm.target(f).unwrap();
        targets.data_mut()[i * m * c..(i + 1) * m * c].copy_from_slice(t.data());
    }

    // head outputs per index, read off a frozen tape
    let heads: Vec<Mat> = {
        let mut tape = Tape::new();
        let trees = model.register(&mut tape, false);
        let uv = tape.constant(u.clone());
        let qf = tape.constant(qfeat.clone());
        let q = tape.constant(queries.clone());
        let g = model.record(&mut tape, trees, uv, &design, qf, q, true).unwrap();
        zs.iter()
            .map(|z| {
                let l = tape.contract(g.learnable, z).unwrap();
                let p = tape.contract(g.prior, z).unwrap();
                let p = tape.scale(p, model.prior_scale());
                let h = tape.add(l, p).unwrap();
                tape.value(h).clone()
            })
            .collect()
    };

    let mut tape = Tape::new();
    let enc = tape.register(base.encoder().params(), true);
    let dec = tape.register(base.decoder(), true);
    let uv = tape.constant(u);
    let qf = tape.constant(qfeat);
    let g = base.record(&mut tape, enc, dec, uv, &design, qf).unwrap();
    let mut total = None;
    for h in heads {
        let hv = tape.constant(h);
        let pred = tape.add(g.prediction, hv).unwrap();
        let l = tape.relative_l2(pred, &targets, &design, REL_EPS).unwrap();
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l).unwrap(),
        });
    }
    let loss = tape.scale(total.unwrap(), 1.0 / zs.len() as f64);
    let mut gr = tape.backward_scalar(loss).unwrap();
    [gr.take_param(enc).unwrap(), gr.take_param(dec).unwrap()]
}

fn max_rel_diff(a: &ParamTree, b: &ParamTree) -> f64 {
    let scale = a.values().map(f64::abs).fold(0.0, f64::max).max(1e-300);
    a.values().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn criterion_3() -> Check {
    let mut notes = Vec::new();

    // stop-gradient: base gradients equal those with the head held constant
    let mut worst_sg: f64 = 0.0;
    for i in 0..6u64 {
        let kind = if i % 2 == 0 { DecoderKind::Split } else { DecoderKind::Concat };
        let inst = random_instance(100 + i, kind);
        let zs: Vec<Vec<f64>> = sample_indices(3, 3, &mut rng(i)).into_iter().map(|z| z.0).collect();
        let (_, sg) = dataset_loss_and_grad(&inst.model, &inst.data, &inst.norm, &zs, true).unwrap();
        let (_, full) = dataset_loss_and_grad(&inst.model, &inst.data, &inst.norm, &zs, false).unwrap();
        let oracle = base_gradient_with_constant_head(&inst, &zs);
        for t in 0..2 {
            let d = max_rel_diff(&oracle[t], &sg[t]);
            worst_sg = worst_sg.max(d);
            ensure!(d < 1e-12, "instance {i} tree {t}: stop-gradient base gradient differs from oracle by {d:.2e}");
            ensure!(max_rel_diff(&oracle[t], &full[t]) > 1e-6, "instance {i}: oracle does not separate the two paths");
        }
    }
    notes.push(format!("stop-gradient max rel diff {worst_sg:.1e}"));

    // z-linearity of both head terms
    let (model, _, _) = env_surrogate_parts(3);
    let head = model.head();
    let mut r = rng(17);
    let mut worst_lin: f64 = 0.0;
    for _ in 0..50 {
        let x: Vec<f64> = (0..head.feature_dim()).map(|_| r.random_range(-2.0..2.0)).collect();
        let z1 = sample_index(4, &mut r);
        let z2 = sample_index(4, &mut r);
        let (a, b) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        let mix = EpistemicIndex(z1.0.iter().zip(&z2.0).map(|(p, q)| a * p + b * q).collect());
        type HeadFn<'h> = Box<dyn Fn(&[f64], &EpistemicIndex) -> neon_core::Result<Vec<f64>> + 'h>;
        let terms: [HeadFn; 2] = [Box::new(|x, z| head.prior_forward(x, z)), Box::new(|x, z| head.learnable_forward(x, z))];
        for f in &terms {
            let lhs = f(&x, &mix).unwrap();
            let (p, q) = (f(&x, &z1).unwrap(), f(&x, &z2).unwrap());
            for k in 0..lhs.len() {
                let rhs = a * p[k] + b * q[k];
                let scale = (a * p[k]).abs().max((b * q[k]).abs()).max(1.0);
                worst_lin = worst_lin.max((lhs[k] - rhs).abs() / scale);
            }
        }
        ensure!(head.prior_forward(&x, &EpistemicIndex(vec![0.0; 4])).unwrap().iter().all(|v| *v == 0.0), "prior at z = 0");
    }
    ensure!(worst_lin <= 1e-12, "z-linearity error {worst_lin:.2e}");
    notes.push(format!("z-linearity error {worst_lin:.1e}"));

    // prior checksum and variance contraction on 60 Environment Model points
    let problem = Problem::builtin(BenchmarkId::EnvModel).unwrap();
    let mut cfg = SurrogateConfig::preset(BenchmarkId::EnvModel);
    cfg.train.steps = 1000;
    cfg.train.seed = 5;
    let mut model = NeonModel::init(&cfg.neon_for(&problem), 11).unwrap();
    let mut data = Dataset::new(problem.grid.clone());
    let mut r = rng(23);
    for _ in 0..60 {
        let u = problem.domain.sample_uniform(&mut r);
        let (_, field) = problem.objective(&u).unwrap();
        data.push(u, field).unwrap();
    }
    let norm = Normalizer::fit(&problem.domain, &data).unwrap();
    let zs: Vec<Vec<f64>> = sample_indices(model.index_dim(), 100, &mut rng(29)).into_iter().map(|z| z.0).collect();
    let median_var = |model: &NeonModel| {
        let sur = CompositeSurrogate::new(model, &norm, problem.functional.as_ref(), &problem.grid, 1.0, zs.clone()).unwrap();
        let vars: Vec<f64> = data
            .inputs()
            .iter()
            .map(|u| {
                let v = sur.evaluate(u).unwrap();
                let mean = v.data().iter().sum::<f64>() / 100.0;
                v.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 100.0
            })
            .collect();
        median(&vars)
    };
    let before = median_var(&model);
    let prior_sum = model.head().prior().checksum();
    fit(&mut model, &data, &norm, &cfg.train).unwrap();
    ensure!(model.head().prior().checksum() == prior_sum, "prior parameters changed during training");
    let after = median_var(&model);
    ensure!(after < before, "median Var_z did not contract: {before:.4e} -> {after:.4e}");
    notes.push(format!("prior checksum {prior_sum:016x} unchanged; median Var_z {before:.3e} -> {after:.3e}"));
    Ok(notes.join("; "))
}

fn criterion_4() -> Check {
    // pointwise functions
    ensure!(ei_point(2.5, 0.5) == 2.0, "EI(v - y = 2)");
    ensure!(ei_point(-0.5, 0.5) == 0.0, "EI(v - y = -1)");
    ensure!(ei_point(0.5, 0.5) == 0.0, "EI(v = y)");
    ensure!(lei_point(-0.5, 0.5, 0.01).unwrap() == -0.01, "L-EI(v - y = -1, δ = 0.01)");
    for delta in [1e-4, 0.01, 0.5, 3.0] {
        ensure!(lei_point(3.5, 0.5, delta).unwrap() == 3.0, "L-EI positive branch with δ = {delta}");
    }
    ensure!(lei_point(0.0, 1.0, 0.0).is_err() && lei_point(0.0, 1.0, -1.0).is_err(), "δ ≤ 0 accepted");
    let mut r = rng(41);
    for _ in 0..1000 {
        let (v, y) = (r.random_range(-5.0..5.0), r.random_range(-5.0..5.0));
        let (l, e) = (lei_point(v, y, 0.01).unwrap(), ei_point(v, y));
        ensure!(if v >= y { l == e } else { l < e }, "L-EI vs EI ordering at v={v}, y={y}");
    }

    // Monte-Carlo estimators on closed-form surrogates
    let single = FnSurrogate::new(1, 1, |u: &[f64], _| (u[0] * u[0], vec![2.0 * u[0]]));
    let ei1 = AcquisitionSpec::new(AcquisitionKind::Ei, 1, 1.0).unwrap();
    ensure!(mc_acquisition(&ei1, &single, &[1.5]).unwrap() == ei_point(2.25, 1.0), "k = 1 EI");
    let flat = FnSurrogate::new(2, 7, |u: &[f64], _| (u[0] - u[1], vec![1.0, -1.0]));
    for spread in [Spread::Std, Spread::MeanAbsDev] {
        let s = AcquisitionSpec::new(AcquisitionKind::Lcb { beta: 2.7, spread }, 7, 0.0).unwrap();
        ensure!(mc_acquisition(&s, &flat, &[0.75, 0.25]).unwrap() == 0.5, "LCB of a z-constant surrogate ({spread:?})");
    }
    let outcomes = [-1.0, 0.25, 0.75, 2.0];
    let discrete = FnSurrogate::new(1, 1000, move |u: &[f64], j| (u[0] + outcomes[j % 4], vec![1.0]));
    let ei = AcquisitionSpec::new(AcquisitionKind::Ei, 1000, 0.5).unwrap();
    let exhaustive = outcomes.iter().map(|o| ei_point(0.1 + o, 0.5)).sum::<f64>() / 4.0;
    let mc = mc_acquisition(&ei, &discrete, &[0.1]).unwrap();
    ensure!((mc - exhaustive).abs() < 1e-14, "discrete EI {mc} vs exhaustive {exhaustive}");

    // q-LEI cases on dyadic values so every sum is exact
    let below = Mat::from_vec(3, 2, vec![-1.0, -0.5, -2.0, -0.25, -0.75, -1.5]).unwrap();
    let want = (0.25 * (-2.0 - 3.0 - 1.75) + 0.25 * (-1.5 - 1.25 - 2.5)) / 2.0;
    ensure!(qlei(&below, 1.0, 0.25).unwrap() == want, "q-LEI with every value below y*");
    let one_up = Mat::from_vec(3, 1, vec![0.5, 3.0, 2.0]).unwrap();
    ensure!(qlei(&one_up, 1.0, 0.25).unwrap() == 0.25 * -0.5 + 2.0 + 0.25 * 1.0, "q-LEI with one maximal value above y*");
    let tie = Mat::from_vec(2, 1, vec![3.0, 3.0]).unwrap();
    ensure!(qlei(&tie, 1.0, 0.25).unwrap() == 2.0 + 0.25 * 2.0, "q-LEI tie goes to the lowest index");

    // gradients
    let constant = FnSurrogate::new(3, 4, |_: &[f64], _| (1.25, vec![0.0; 3]));
    let lei = AcquisitionSpec::new(AcquisitionKind::Lei { delta: 0.01 }, 4, 0.0).unwrap();
    ensure!(grad_acquisition(&lei, &constant, &[0.1, 0.2, 0.3]).unwrap().1.iter().all(|g| *g == 0.0), "constant surrogate gradient");
    let linear = FnSurrogate::new(2, 1, |u: &[f64], _| (3.0 * u[0] - 2.0 * u[1], vec![3.0, -2.0]));
    let neg = AcquisitionSpec::new(AcquisitionKind::Lei { delta: 0.125 }, 1, 100.0).unwrap();
    ensure!(grad_acquisition(&neg, &linear, &[1.0, 1.0]).unwrap().1 == vec![0.375, -0.25], "negative-branch gradient is δ∇G");

    // NEON surrogates: constant output, linearity in the index, q = 1 ≡ L-EI
    let (mut model, norm, grid) = env_surrogate_parts(9);
    let sur_lin = CompositeSurrogate::sample(&model, &norm, &MeanChannel, &grid, 1.0, 3, &mut rng(1)).unwrap();
    let u = [10.0, 0.08, 1.0, 30.1];
    let zs = sur_lin.indices().to_vec();
    let mix: Vec<f64> = zs[0].iter().zip(&zs[1]).map(|(a, b)| 0.3 * a + 0.7 * b).collect();
    let lhs = sur_lin.objective(&u, &mix).unwrap();
    let rhs = 0.3 * sur_lin.objective(&u, &zs[0]).unwrap() + 0.7 * sur_lin.objective(&u, &zs[1]).unwrap();
    ensure!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0), "linear g does not give G linear in the model output");

    let g = BenchmarkId::EnvModel.functional(&grid).unwrap();
    let domain = BenchmarkId::EnvModel.domain();
    let mut r = rng(43);
    let sur = CompositeSurrogate::sample(&model, &norm, g.as_ref(), &grid, 1.0, 16, &mut r).unwrap();
    for t in 0..50 {
        let u = domain.sample_uniform(&mut r);
        let y = sur.evaluate(&u).unwrap().data()[t % 16];
        let lei = AcquisitionSpec::new(AcquisitionKind::Lei { delta: 0.01 }, 16, y).unwrap();
        let q1 = AcquisitionSpec::new(AcquisitionKind::Qlei { delta: 0.01, q: 1 }, 16, y).unwrap();
        let (a, ga) = grad_acquisition(&lei, &sur, &u).unwrap();
        let (b, gb) = grad_acquisition(&q1, &sur, &u).unwrap();
        ensure!(a.to_bits() == b.to_bits(), "q-LEI(q=1) {b} differs from L-EI {a}");
        ensure!(ga.iter().zip(&gb).all(|(x, y)| x.to_bits() == y.to_bits()), "q-LEI(q=1) gradient differs from L-EI");
        ensure!(mc_acquisition(&lei, &sur, &u).unwrap().to_bits() == a.to_bits(), "value and gradient paths disagree");
    }

    for v in model.head_mut().learnable_mut().params_mut().values_mut() {
        *v = 0.0;
    }
    let dec = model.base_mut().decoder_mut();
    let last = dec.len() - 1;
    let layer = &mut dec.layers_mut()[last];
    layer.weight.iter_mut().for_each(|w| *w = 0.0);
    layer.bias[0] = 0.75;
    let unit = Normalizer::from_parts(domain, grid.bounds().clone(), vec![0.0], vec![1.0]).unwrap();
    let zero_prior = {
        let mut m = model.clone();
        let (base, head) = (m.base().clone(), m.head().clone());
        let head = neon_core::epinet::EpinetHead::from_parts(head.learnable().clone(), head.prior().clone(), 4, 1, 0.0).unwrap();
        m = NeonModel::from_parts(base, head).unwrap();
        m
    };
    let sur_c = CompositeSurrogate::sample(&zero_prior, &unit, &MeanChannel, &grid, 1.0, 4, &mut rng(2)).unwrap();
    ensure!(sur_c.evaluate(&[10.0, 0.1, 0.5, 30.1]).unwrap().data().iter().all(|v| (v - 0.75).abs() < 1e-15), "constant model");
    Ok("pointwise, Monte-Carlo, q-LEI and gradient cases exact; q-LEI(q=1) bitwise equal to L-EI on 50 designs".into())
}

fn criterion_5() -> Check {
    let mut notes = Vec::new();

    let quiet = BrusselatorSpec { noise: 0.0, ..BrusselatorSpec::default() };
    let (a, b) = (1.5, 2.0);
    let (fu, fv) = reaction(a, b, a, b / a);
    ensure!(fu.abs() < 1e-12 && fv.abs() < 1e-12, "reaction residual at the fixed point: {fu}, {fv}");
    let field = brusselator_solve(a, b, 0.1, 0.2, &quiet).map_err(|e| e.to_string())?;
    let drift = (0..field.points())
        .map(|p| (field.get(p, 0) - a).abs().max((field.get(p, 1) - b / a).abs()))
        .fold(0.0, f64::max);
    ensure!(drift < 1e-8, "fixed-point drift {drift:e}");
    notes.push(format!("drift {drift:.1e}"));

    let spec = BrusselatorSpec::default();
    let (a, b, d0, d1) = (2.0, 3.0, 0.05, 0.1);
    let energy = |u: &[f64], v: &[f64]| -> f64 {
        u.iter().map(|x| (x - a).powi(2)).sum::<f64>() + v.iter().map(|x| (x - b / a).powi(2)).sum::<f64>()
    };
    let (u0, v0) = initial_state(a, b, d0, d1, &spec);
    let e0 = energy(&u0, &v0);
    let field = brusselator_solve(a, b, d0, d1, &spec).map_err(|e| e.to_string())?;
    let (u1, v1): (Vec<f64>, Vec<f64>) = (field.channel(0).collect(), field.channel(1).collect());
    let e1 = energy(&u1, &v1);
    ensure!(e0 > 0.0 && e1 < e0, "perturbation energy {e0:e} -> {e1:e}");
    notes.push(format!("energy {e0:.3e} -> {e1:.3e}"));

    let (a, b, d0, d1) = (1.0, 3.0, 0.01, 0.1);
    let coarse = weighted_variance(&brusselator_solve(a, b, d0, d1, &spec).map_err(|e| e.to_string())?, 1.0, 1.0).unwrap();
    let fine_spec = BrusselatorSpec { n: 2 * spec.n, ..spec.clone() };
    let fine = weighted_variance(&brusselator_solve(a, b, d0, d1, &fine_spec).map_err(|e| e.to_string())?, 1.0, 1.0).unwrap();
    let change = (fine - coarse).abs() / coarse.abs();
    ensure!(change < 0.05, "refinement changes the objective by {:.2}%", 100.0 * change);
    notes.push(format!("refinement change {:.3}%", 100.0 * change));
    Ok(notes.join("; "))
}

const BO_SEEDS: u64 = 10;
const BO_ITERATIONS: usize = 30;
const TRAIN_STEPS: usize = 300;

fn acceptance_bo_config() -> BoConfig {
    let mut cfg = BoConfig::preset(BenchmarkId::EnvModel);
    cfg.n0 = Some(8);
    cfg.budget = BO_ITERATIONS;
    cfg.acquisition = AcquisitionKind::Lei { delta: 0.01 };
    cfg.k = 64;
    cfg.restarts.n_reset = 100;
    // the default 12,000 steps per iteration do not fit the time budget on one core
    cfg.surrogate.train.steps = TRAIN_STEPS;
    cfg
}

fn monotone(log: &RunLog) -> bool {
    log.records.windows(2).all(|w| w[1].best_so_far >= w[0].best_so_far)
}

fn criterion_6(q1_finals: &mut Vec<f64>) -> Check {
    let problem = Problem::builtin(BenchmarkId::EnvModel).unwrap();
    let exec = RayonExecutor::from_env().map_err(|e| e.to_string())?;
    let total = 8 + BO_ITERATIONS;
    let mut neon = Vec::new();
    let mut random = Vec::new();
    for seed in 0..BO_SEEDS {
        let mut cfg = acceptance_bo_config();
        cfg.seed = seed;
        let log = run_bo(&problem, &cfg, &exec, &NoClock).map_err(|e| e.to_string())?;
        ensure!(log.error.is_none(), "seed {seed} failed: {:?}", log.error);
        ensure!(log.records.len() == total, "seed {seed}: {} evaluations", log.records.len());
        ensure!(monotone(&log), "seed {seed}: best-so-far not monotone");
        neon.push(log.best().unwrap());
        let rs = run_random_search(&problem, total, seed, &NoClock);
        ensure!(monotone(&rs), "random seed {seed}: best-so-far not monotone");
        random.push(rs.best().unwrap());
    }
    *q1_finals = neon.clone();
    let m_neon = median(&neon.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let m_rand = median(&random.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let detail = format!("median |f_best| NEON {m_neon:.3e}, random {m_rand:.3e}, ratio {:.3}", m_neon / m_rand);
    ensure!(m_neon <= 0.2 * m_rand, "{detail}");
    Ok(detail)
}

fn criterion_7() -> Check {
    let problem = Problem::builtin(BenchmarkId::EnvModel).unwrap();
    let cfg = SurrogateConfig::preset(BenchmarkId::EnvModel);
    let n = NeonModel::init(&cfg.neon_for(&problem), 0).unwrap().num_trainable_params();
    let table = 27_746.0;
    let ratio = n as f64 / table;
    let detail = format!("{n} trainable parameters, {ratio:.3}× the reference {table}");
    ensure!((0.5..=2.0).contains(&ratio), "{detail}");
    Ok(detail)
}

fn criterion_8(q1_finals: &[f64]) -> Check {
    let problem = Problem::builtin(BenchmarkId::EnvModel).unwrap();
    let exec = RayonExecutor::from_env().map_err(|e| e.to_string())?;
    let seeds = 5;
    let mut q1 = q1_finals.iter().copied().take(seeds).collect::<Vec<_>>();
    for seed in q1.len() as u64..seeds as u64 {
        let mut cfg = acceptance_bo_config();
        cfg.seed = seed;
        q1.push(run_bo(&problem, &cfg, &exec, &NoClock).map_err(|e| e.to_string())?.best().unwrap());
    }
    let mut q2 = Vec::new();
    for seed in 0..seeds as u64 {
        let mut cfg = acceptance_bo_config();
        cfg.seed = seed;
        cfg.budget = BO_ITERATIONS / 2;
        let log = run_bo_parallel(&problem, &cfg, 2, &exec, &NoClock).map_err(|e| e.to_string())?;
        ensure!(log.error.is_none(), "seed {seed} failed: {:?}", log.error);
        ensure!(log.records.len() == 8 + BO_ITERATIONS, "seed {seed}: {} evaluations", log.records.len());
        q2.push(log.best().unwrap());
    }
    let (m1, m2) = (median(&q1), median(&q2));
    // objective is maximized with optimum 0; within 10% means |m2| ≤ 1.1 |m1|
    let show = |v: &[f64]| v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" ");
    let detail = format!("median best q=1 {m1:.3e}, q=2 {m2:.3e}; seeds q=1 [{}], q=2 [{}]", show(&q1), show(&q2));
    ensure!(m2 >= m1 - 0.1 * m1.abs(), "{detail}");
    Ok(detail)
}

fn criterion_9() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = tmp.path().join("config.toml");
    std::fs::write(
        &cfg,
        r#"
[problem]
id = "env_model"
[model]
encoder_hidden = [16]
latent_dim = 16
decoder_hidden = [16, 16]
epinet_hidden = [8]
index_dim = 4
[training]
steps = 60
[acquisition]
kind = "lei"
k = 16
[run]
budget = 3
n_reset = 5
max_iter = 30
seeds = [0, 1]
output_dir = "out"
"#,
    )
    .map_err(|e| e.to_string())?;
    let cfg = cfg.to_str().unwrap();
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        for cmd in ["run", "train"] {
            let (mut out, mut err) = (Vec::new(), Vec::new());
            let code = main_with(["neon", cmd, cfg], &mut out, &mut err);
            ensure!(code == 0, "`neon {cmd}` exited {code}: {}", String::from_utf8_lossy(&err));
        }
        let mut files = Vec::new();
        for seed in [0, 1] {
            for name in ["summary.csv", "log.jsonl", "model.neon", "train_loss.csv"] {
                let p = tmp.path().join(format!("out/seed_{seed}/{name}"));
                files.push((p.clone(), std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()))?));
            }
        }
        snapshots.push(files);
    }
    for ((path, a), (_, b)) in snapshots[0].iter().zip(&snapshots[1]) {
        ensure!(a == b, "{} differs between reruns", path.display());
    }
    Ok(format!("{} output files byte-identical across reruns", snapshots[0].len()))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut q1_finals = Vec::new();
    let mut failed = 0;
    let names = [
        "gradient suite",
        "L-EI/EI gap bound",
        "EpiNet structure",
        "acquisition unit suite",
        "Brusselator solver",
        "BO beats random search",
        "parameter count",
        "parallel acquisition",
        "CLI determinism",
    ];
    for (i, name) in names.iter().enumerate() {
        let n = i + 1;
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(&mut q1_finals),
            7 => criterion_7(),
            8 => criterion_8(&q1_finals),
            _ => criterion_9(),
        }))
        .unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
