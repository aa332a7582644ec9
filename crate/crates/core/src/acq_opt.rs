//! Box-constrained L-BFGS maximization with independent restarts.
//!
//! The optimizer minimizes `−f`. Bound constraints are handled by gradient
//! projection: coordinates pinned at a bound with the gradient pushing outward
//! are frozen for the step, the quasi-Newton direction is computed on the
//! rest, and steps that would leave the box use a projected backtracking
//! search instead of the strong-Wolfe search.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::acquisition::{grad_acquisition, AcquisitionSpec, EpistemicObjective};
use crate::domain::BoxDomain;
use crate::error::{ensure_len, Error, Result};
use crate::seed::{self, purpose};

/// A differentiable function to maximize.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Adapts a closure returning `(f, ∇f)`.
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnObjective { dim, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.f)(x))
    }
}

/// Monte-Carlo acquisition over stacked designs as an [`Objective`].
pub struct AcquisitionObjective<'a> {
    pub spec: AcquisitionSpec,
    pub surrogate: &'a dyn EpistemicObjective,
}

impl Objective for AcquisitionObjective<'_> {
    fn dim(&self) -> usize {
        self.surrogate.dim() * self.spec.kind.batch()
    }

    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        grad_acquisition(&self.spec, self.surrogate, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Infinity norm of the projected gradient.
    pub pgtol: f64,
    /// Relative reduction of the objective.
    pub ftol: f64,
    /// Infinity norm of the step.
    pub xtol: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iter: 200,
            pgtol: 1e-8,
            ftol: 2.220446049250313e-9,
            xtol: 1e-12,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ProjectedGradient,
    RelativeReduction,
    StepSize,
    MaxIterations,
    LineSearch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

struct Minimizer<'a> {
    obj: &'a dyn Objective,
    evals: usize,
}

impl Minimizer<'_> {
    /// `(−f, −∇f)`; non-finite values are reported as `None`.
    fn eval(&mut self, x: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
        self.evals += 1;
        let (f, g) = self.obj.value_and_grad(x)?;
        if !f.is_finite() || !g.iter().all(|v| v.is_finite()) {
            return Ok(None);
        }
        Ok(Some((-f, g.into_iter().map(|v| -v).collect())))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn at_step(x: &[f64], d: &[f64], a: f64) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + a * di).collect()
}

/// Largest step keeping `x + a d` in the box.
fn max_feasible_step(x: &[f64], d: &[f64], domain: &BoxDomain) -> f64 {
    let mut amax = f64::INFINITY;
    for i in 0..x.len() {
        if d[i] > 0.0 {
            amax = amax.min((domain.upper()[i] - x[i]) / d[i]);
        } else if d[i] < 0.0 {
            amax = amax.min((domain.lower()[i] - x[i]) / d[i]);
        }
    }
    amax.max(0.0)
}

struct Trial {
    a: f64,
    f: f64,
    g: Vec<f64>,
    x: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn strong_wolfe(
    m: &mut Minimizer<'_>,
    x: &[f64],
    d: &[f64],
    f0: f64,
    gd0: f64,
    amax: f64,
    cfg: &LbfgsConfig,
) -> Result<Option<Trial>> {
    let armijo = |a: f64, f: f64| f <= f0 + cfg.c1 * a * gd0;
    let curvature = |gd: f64| gd.abs() <= -cfg.c2 * gd0;
    let mut lo = Trial {
        a: 0.0,
        f: f0,
        g: Vec::new(),
        x: x.to_vec(),
    };
    let mut gd_lo = gd0;
    let mut hi_a;
    let mut hi_f = f64::INFINITY;
    let mut a = amax.min(1.0);
    let mut i = 0;
    loop {
        let xt = at_step(x, d, a);
        let Some((f, g)) = m.eval(&xt)? else {
            hi_a = a;
            break;
        };
        hi_f = f;
        let gd = dot(&g, d);
        if !armijo(a, f) || (i > 0 && f >= lo.f) {
            hi_a = a;
            break;
        }
        if curvature(gd) {
            return Ok(Some(Trial { a, f, g, x: xt }));
        }
        if gd >= 0.0 {
            hi_a = lo.a;
            hi_f = lo.f;
            lo = Trial { a, f, g, x: xt };
            gd_lo = gd;
            break;
        }
        lo = Trial { a, f, g, x: xt };
        gd_lo = gd;
        if a >= amax || i >= 20 {
            return Ok(Some(lo));
        }
        a = (2.0 * a).min(amax);
        i += 1;
    }
    // zoom between lo (Armijo, lowest so far) and hi
    for _ in 0..40 {
        let (l, h) = (lo.a, hi_a);
        let width = (h - l).abs();
        if width < 1e-16 * l.abs().max(1.0) {
            break;
        }
        // minimizer of the quadratic through (l, f_l, gd_l) and (h, f_h), else bisection
        let mut t = l + 0.5 * (h - l);
        let dh = h - l;
        let curv = hi_f - lo.f - gd_lo * dh;
        if hi_f.is_finite() && curv > 0.0 {
            let cand = l - gd_lo * dh * dh / (2.0 * curv);
            let (a_min, a_max) = if l < h { (l, h) } else { (h, l) };
            let margin = 0.1 * width;
            if cand.is_finite() && cand > a_min + margin && cand < a_max - margin {
                t = cand;
            }
        }
        let xt = at_step(x, d, t);
        match m.eval(&xt)? {
            None => {
                hi_a = t;
                hi_f = f64::INFINITY;
            }
            Some((f, g)) => {
                let gd = dot(&g, d);
                if !armijo(t, f) || f >= lo.f {
                    hi_a = t;
                    hi_f = f;
                } else {
                    if curvature(gd) {
                        return Ok(Some(Trial { a: t, f, g, x: xt }));
                    }
                    if gd * (hi_a - lo.a) >= 0.0 {
                        hi_a = lo.a;
                        hi_f = lo.f;
                    }
                    lo = Trial { a: t, f, g, x: xt };
                    gd_lo = gd;
                }
            }
        }
    }
    Ok(if lo.a > 0.0 { Some(lo) } else { None })
}

fn projected_backtracking(
    m: &mut Minimizer<'_>,
    x: &[f64],
    d: &[f64],
    f0: f64,
    g0: &[f64],
    domain: &BoxDomain,
    cfg: &LbfgsConfig,
) -> Result<Option<Trial>> {
    let mut a = 1.0;
    for _ in 0..40 {
        let mut xt = at_step(x, d, a);
        domain.project(&mut xt);
        let s: Vec<f64> = xt.iter().zip(x).map(|(p, q)| p - q).collect();
        let decrease = dot(g0, &s);
        if inf_norm(&s) == 0.0 {
            return Ok(None);
        }
        if let Some((f, g)) = m.eval(&xt)? {
            if f <= f0 + cfg.c1 * decrease && f < f0 {
                return Ok(Some(Trial { a, f, g, x: xt }));
            }
        }
        a *= 0.5;
    }
    Ok(None)
}

/// Maximizes `obj` over `domain` from `x0` (projected into the box first).
pub fn lbfgs_box_maximize(obj: &dyn Objective, x0: &[f64], domain: &BoxDomain, cfg: &LbfgsConfig) -> Result<LbfgsResult> {
    ensure_len("optimizer start", domain.dim(), x0.len())?;
    ensure_len("objective dimension", domain.dim(), obj.dim())?;
    let n = x0.len();
    let mut m = Minimizer { obj, evals: 0 };
    let mut x = x0.to_vec();
    domain.project(&mut x);
    let Some((mut f, mut g)) = m.eval(&x)? else {
        return Err(Error::NonFinite(format!("objective at restart start {x:?}")));
    };
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;
    let termination = loop {
        // projected gradient and active set
        let mut free = vec![true; n];
        let mut pg = 0.0f64;
        for i in 0..n {
            let p = (x[i] - g[i]).clamp(domain.lower()[i], domain.upper()[i]) - x[i];
            pg = pg.max(p.abs());
            if (x[i] <= domain.lower()[i] && g[i] > 0.0) || (x[i] >= domain.upper()[i] && g[i] < 0.0) {
                free[i] = false;
            }
        }
        if pg <= cfg.pgtol {
            break Termination::ProjectedGradient;
        }
        if iterations >= cfg.max_iter {
            break Termination::MaxIterations;
        }
        // two-loop recursion on the free coordinates
        let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(&free).map(|(a, &f)| if f { *a } else { 0.0 }).collect() };
        let mut d = mask(&g);
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(&mask(s), &d);
            for (di, yi) in d.iter_mut().zip(mask(y)) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = mem.back() {
            let (sm, ym) = (mask(s), mask(y));
            let yy = dot(&ym, &ym);
            let sy = dot(&sm, &ym);
            if yy > 0.0 && sy > 0.0 {
                d.iter_mut().for_each(|v| *v *= sy / yy);
            }
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(&mask(y), &d);
            for (di, si) in d.iter_mut().zip(mask(s)) {
                *di += (a - b) * si;
            }
        }
        d.iter_mut().for_each(|v| *v = -*v);
        let mut gd = dot(&g, &d);
        if !(gd < 0.0) {
            mem.clear();
            d = mask(&g).into_iter().map(|v| -v).collect();
            gd = dot(&g, &d);
            if !(gd < 0.0) {
                break Termination::ProjectedGradient;
            }
        }
        if mem.is_empty() {
            // first step: unit length in the infinity norm
            let scale = 1.0 / inf_norm(&d).max(1.0);
            d.iter_mut().for_each(|v| *v *= scale);
            gd *= scale;
        }
        let amax = max_feasible_step(&x, &d, domain);
        let trial = if amax >= 1.0 {
            strong_wolfe(&mut m, &x, &d, f, gd, amax, cfg)?
        } else {
            projected_backtracking(&mut m, &x, &d, f, &g, domain, cfg)?
        };
        let Some(mut t) = trial else {
            if !mem.is_empty() {
                mem.clear();
                iterations += 1;
                continue;
            }
            break Termination::LineSearch;
        };
        domain.project(&mut t.x);
        iterations += 1;
        let s: Vec<f64> = t.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = t.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y) && sy > 0.0 {
            if mem.len() == cfg.memory {
                mem.pop_front();
            }
            mem.push_back((s.clone(), y, 1.0 / sy));
        }
        let f_old = f;
        x = t.x;
        f = t.f;
        g = t.g;
        if (f_old - f) <= cfg.ftol * f_old.abs().max(f.abs()).max(1.0) {
            break Termination::RelativeReduction;
        }
        if inf_norm(&s) <= cfg.xtol {
            break Termination::StepSize;
        }
    };
    Ok(LbfgsResult {
        x,
        f: -f,
        iterations,
        evaluations: m.evals,
        termination,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestartPlan {
    pub n_reset: usize,
    pub lbfgs: LbfgsConfig,
}

impl Default for RestartPlan {
    fn default() -> Self {
        RestartPlan {
            n_reset: 500,
            lbfgs: LbfgsConfig::default(),
        }
    }
}

/// Start of restart `index`: uniform in the box from its own stream.
pub fn restart_start(domain: &BoxDomain, seed: u64, index: usize) -> Vec<f64> {
    domain.sample_uniform(&mut seed::rng_for(seed, &[purpose::RESTARTS, index as u64]))
}

pub type RestartTask<'a> = dyn Fn(usize) -> Result<LbfgsResult> + Sync + 'a;

/// Runs restart tasks `0..n`; results must come back in index order.
pub trait RestartExecutor: Sync {
    fn run(&self, n: usize, task: &RestartTask<'_>) -> Vec<Result<LbfgsResult>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl RestartExecutor for Serial {
    fn run(&self, n: usize, task: &RestartTask<'_>) -> Vec<Result<LbfgsResult>> {
        (0..n).map(task).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RestartOutcome {
    pub best: LbfgsResult,
    pub best_index: usize,
    /// Final value of every restart (`None` for failed restarts).
    pub finals: Vec<Option<f64>>,
    pub failures: Vec<(usize, Error)>,
}

/// Best of `plan.n_reset` independent L-BFGS runs (ties go to the lowest
/// restart index). Fails only when every restart fails.
pub fn multi_restart_maximize(
    obj: &dyn Objective,
    domain: &BoxDomain,
    plan: &RestartPlan,
    seed: u64,
    exec: &dyn RestartExecutor,
) -> Result<RestartOutcome> {
    if plan.n_reset == 0 {
        return Err(Error::Config("n_reset must be ≥ 1".into()));
    }
    let task = |i: usize| lbfgs_box_maximize(obj, &restart_start(domain, seed, i), domain, &plan.lbfgs);
    let results = exec.run(plan.n_reset, &task);
    let mut best: Option<(usize, LbfgsResult)> = None;
    let mut finals = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(res) => {
                finals.push(Some(res.f));
                if best.as_ref().is_none_or(|(_, b)| res.f > b.f) {
                    best = Some((i, res));
                }
            }
            Err(e) => {
                finals.push(None);
                failures.push((i, e));
            }
        }
    }
    match best {
        Some((best_index, best)) => Ok(RestartOutcome {
            best,
            best_index,
            finals,
            failures,
        }),
        None => Err(Error::Optimization(format!(
            "all {} restarts failed; first error: {}",
            plan.n_reset,
            failures.first().map(|(_, e)| format!("{e}")).unwrap_or_default()
        ))),
    }
}
