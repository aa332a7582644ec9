//! Command-line driver.
//!
//! ```text
//! neon run <config>                  BO runs, one per seed
//! neon train <config>                fit a surrogate on the initial design
//! neon eval <problem> <u.csv>        print f(u) for every row
//! neon plot <summary.csv>... -o out.svg
//! ```
//!
//! Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use neon_core::acq_opt::RestartExecutor;
use neon_core::benchmarks::{BenchmarkId, Problem};
use neon_core::bo::{candidate_design, initial_design, run_bo, run_bo_parallel, Clock, IterationSeeds, NoClock, RunLog};
use neon_core::epinet::NeonModel;
use neon_core::training::{fit, Dataset, Normalizer, TrainConfig};

use crate::checkpoint::save_model;
use crate::config::{ResolvedRun, RunConfig};
use crate::error::{Error, Result};
use crate::exec::{RayonExecutor, WallClock};
use crate::fields::load_field_provider;
use crate::plot::{render_svg, Curve};
use crate::runlog::{load_summary, write_jsonl, write_summary};

#[derive(Debug, Parser)]
#[command(name = "neon", version, about = "Composite Bayesian optimization with epistemic operator networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run BO for every seed in the config.
    Run { config: PathBuf },
    /// Fit a surrogate on the initial design of every seed and save it.
    Train {
        config: PathBuf,
        /// Only report the trainable-parameter count.
        #[arg(long)]
        params_only: bool,
    },
    /// Evaluate f(u) for each row of a CSV of designs.
    Eval {
        problem: String,
        designs: PathBuf,
        /// Field table for problems without a built-in simulator.
        #[arg(long)]
        fields: Option<PathBuf>,
    },
    /// Plot best-so-far curves (mean ± 0.2 std across the given runs).
    Plot {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value = "best so far")]
        title: String,
        /// Legend label; all summaries are averaged into one curve.
        #[arg(long, default_value = "NEON")]
        label: String,
    },
}

/// Runs the CLI with explicit arguments and streams; returns the exit status.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Run { config } => cmd_run(&config, out, err),
        Command::Train { config, params_only } => cmd_train(&config, params_only, out),
        Command::Eval { problem, designs, fields } => cmd_eval(&problem, &designs, fields.as_deref(), out, err),
        Command::Plot {
            summaries,
            output,
            title,
            label,
        } => cmd_plot(&summaries, &output, &title, &label, err),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: &Path) -> Result<(RunConfig, ResolvedRun)> {
    let cfg = RunConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolved = cfg.resolve(base)?;
    Ok((cfg, resolved))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Directory holding everything written for one seed.
pub fn seed_dir(output_dir: &Path, seed: u64) -> PathBuf {
    output_dir.join(format!("seed_{seed}"))
}

/// Runs one seed of a resolved config.
pub fn run_seed(run: &ResolvedRun, seed: u64, exec: &dyn RestartExecutor, clock: &dyn Clock) -> Result<RunLog> {
    let mut bo = run.bo.clone();
    bo.seed = seed;
    let log = if run.q > 1 {
        run_bo_parallel(&run.problem, &bo, run.q, exec, clock)?
    } else {
        run_bo(&run.problem, &bo, exec, clock)?
    };
    Ok(log)
}

fn cmd_run(config: &Path, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let (cfg, run) = load_config(config)?;
    let exec = RayonExecutor::from_env()?;
    create_dir(&run.output_dir)?;
    write_file(&run.output_dir.join("config.toml"), |w| {
        w.write_all(cfg.to_toml()?.as_bytes()).map_err(|e| Error::io("config.toml", e))
    })?;
    let mut failed = 0;
    for &seed in &run.seeds {
        let wall = WallClock::default();
        let clock: &dyn Clock = if run.record_timing { &wall } else { &NoClock };
        let log = run_seed(&run, seed, &exec, clock)?;
        let dir = seed_dir(&run.output_dir, seed);
        create_dir(&dir)?;
        write_file(&dir.join("log.jsonl"), |w| write_jsonl(w, &log))?;
        write_file(&dir.join("summary.csv"), |w| write_summary(w, &log.summary()))?;
        let _ = writeln!(out, "{log}");
        if let Some(e) = &log.error {
            failed += 1;
            let _ = writeln!(err, "seed {seed} failed: {e}");
        }
    }
    Ok(if failed > 0 { 1 } else { 0 })
}

/// Trainable parameters of the surrogate a config describes.
pub fn parameter_count(run: &ResolvedRun) -> Result<usize> {
    let model = NeonModel::init(&run.bo.surrogate.neon_for(&run.problem), 0)?;
    Ok(model.num_trainable_params())
}

/// Training data of `train`: the initial design of `seed` evaluated on the
/// problem (the candidate table itself for tabulated problems).
pub fn initial_dataset(problem: &Problem, n0: usize, seed: u64) -> Result<Dataset> {
    let design = match problem.provider.candidates() {
        Some(c) => c.to_vec(),
        None => initial_design(&problem.domain, n0, seed),
    };
    let design = if design.len() < n0 { candidate_design(&design, design.len(), seed)? } else { design };
    let mut data = Dataset::new(problem.grid.clone());
    for u in design {
        let (_, field) = problem.objective(&u)?;
        data.push(u, field)?;
    }
    Ok(data)
}

fn cmd_train(config: &Path, params_only: bool, out: &mut dyn Write) -> Result<i32> {
    let (_, run) = load_config(config)?;
    let _ = writeln!(out, "trainable parameters: {}", parameter_count(&run)?);
    if params_only {
        return Ok(0);
    }
    create_dir(&run.output_dir)?;
    for &seed in &run.seeds {
        let n0 = run.bo.initial_points(run.problem.domain.dim());
        let data = initial_dataset(&run.problem, n0, seed)?;
        let seeds = IterationSeeds::derive(seed, 0);
        let mut model = NeonModel::init(&run.bo.surrogate.neon_for(&run.problem), seeds.model)?;
        let norm = Normalizer::fit(&run.problem.domain, &data)?;
        let train = TrainConfig {
            seed: seeds.training,
            ..run.bo.surrogate.train.clone()
        };
        let history = fit(&mut model, &data, &norm, &train)?;
        let dir = seed_dir(&run.output_dir, seed);
        create_dir(&dir)?;
        save_model(&dir.join("model.neon"), &model)?;
        write_file(&dir.join("train_loss.csv"), |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["step", "loss"])?;
            for (i, l) in history.iter().enumerate() {
                c.write_record([i.to_string(), l.to_string()])?;
            }
            c.flush().map_err(|e| Error::io("train_loss.csv", e))
        })?;
        let _ = writeln!(
            out,
            "seed {seed}: {} instances, final loss {:.6e}",
            data.len(),
            history.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(0)
}

fn eval_problem(id: &str, fields: Option<&Path>) -> Result<Problem> {
    let id: BenchmarkId = id.parse().map_err(|_| Error::Config(format!("unknown problem id {id:?}")))?;
    match fields {
        Some(p) => load_field_provider(p, id),
        None => Problem::builtin(id).map_err(|e| Error::Config(e.to_string())),
    }
}

fn cmd_eval(id: &str, designs: &Path, fields: Option<&Path>, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let problem = eval_problem(id, fields)?;
    let file = std::fs::File::open(designs).map_err(|e| Error::io(designs, e))?;
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let d = problem.domain.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=d).map(|i| format!("u_{i}")).collect();
    header.push("f".into());
    w.write_record(&header)?;
    let mut failed = false;
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let outcome = match parsed {
            Ok(u) if u.len() == d => problem.objective(&u).map(|(f, _)| f).map_err(|e| e.to_string()),
            Ok(u) => Err(format!("expected {d} values, got {}", u.len())),
            Err(e) => Err(format!("not a number ({e})")),
        };
        let mut row: Vec<String> = rec.iter().map(str::to_string).collect();
        match outcome {
            Ok(f) => row.push(f.to_string()),
            Err(e) => {
                failed = true;
                row.push("ERROR".into());
                let _ = writeln!(err, "row {}: {e}", i + 1);
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<stdout>", e))?;
    Ok(if failed { 1 } else { 0 })
}

fn cmd_plot(summaries: &[PathBuf], output: &Path, title: &str, label: &str, err: &mut dyn Write) -> Result<i32> {
    let runs = summaries.iter().map(|p| load_summary(p)).collect::<Result<Vec<_>>>()?;
    let curve = Curve::from_runs(&runs)?;
    if let Some(n) = curve.truncated_from {
        let _ = writeln!(err, "warning: runs have different lengths; truncated from {n} to {} iterations", curve.mean.len());
    }
    let svg = render_svg(&[(label.to_string(), curve)], title);
    std::fs::write(output, svg).map_err(|e| Error::io(output, e))?;
    Ok(0)
}
