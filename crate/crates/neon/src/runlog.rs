//! Run logs on disk: one JSON object per line for every evaluation (plus a
//! final error record when the run stopped early) and a summary CSV with
//! one row per iteration.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use neon_core::bo::{EvalRecord, IterationSeeds, RunLog, SummaryRow};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedsJson {
    pub model: u64,
    pub training: u64,
    pub index: u64,
    pub restarts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordJson {
    pub problem: String,
    pub run_seed: u64,
    pub iteration: usize,
    pub u: Vec<f64>,
    pub f: f64,
    pub best_so_far: f64,
    pub acquisition: Option<f64>,
    pub train_loss: Option<f64>,
    pub wall_seconds: f64,
    pub seeds: Option<SeedsJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorJson {
    pub problem: String,
    pub run_seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogLine {
    Record(RecordJson),
    Error(ErrorJson),
}

fn record_json(log: &RunLog, r: &EvalRecord) -> RecordJson {
    RecordJson {
        problem: log.problem.clone(),
        run_seed: log.seed,
        iteration: r.iteration,
        u: r.u.clone(),
        f: r.f,
        best_so_far: r.best_so_far,
        acquisition: r.acquisition,
        train_loss: r.train_loss,
        wall_seconds: r.wall_seconds,
        seeds: r.seeds.map(|s: IterationSeeds| SeedsJson {
            model: s.model,
            training: s.training,
            index: s.index,
            restarts: s.restarts,
        }),
    }
}

pub fn write_jsonl(mut w: impl Write, log: &RunLog) -> Result<()> {
    let io = |e| Error::io("<run log>", e);
    for r in &log.records {
        serde_json::to_writer(&mut w, &record_json(log, r))?;
        w.write_all(b"\n").map_err(io)?;
    }
    if let Some(e) = &log.error {
        let line = ErrorJson {
            problem: log.problem.clone(),
            run_seed: log.seed,
            error: e.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_jsonl(r: impl BufRead) -> Result<Vec<LogLine>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::io("<run log>", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub const SUMMARY_HEADER: [&str; 5] = ["iteration", "points_evaluated", "best_so_far", "acquired_f", "wall_seconds"];

pub fn write_summary(w: impl Write, rows: &[SummaryRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    for r in rows {
        out.write_record([
            r.iteration.to_string(),
            r.points_evaluated.to_string(),
            r.best_so_far.to_string(),
            r.acquired_f.to_string(),
            r.wall_seconds.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<summary>", e))
}

pub fn read_summary(r: impl std::io::Read) -> Result<Vec<SummaryRow>> {
    let mut rd = csv::Reader::from_reader(r);
    if rd.headers()?.iter().collect::<Vec<_>>() != SUMMARY_HEADER {
        return Err(Error::Format(format!("summary header must be {}", SUMMARY_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Format(format!("bad number {:?} in summary", &rec[i])))
        };
        let int = |i: usize| -> Result<usize> {
            rec[i]
                .parse()
                .map_err(|_| Error::Format(format!("bad integer {:?} in summary", &rec[i])))
        };
        rows.push(SummaryRow {
            iteration: int(0)?,
            points_evaluated: int(1)?,
            best_so_far: num(2)?,
            acquired_f: num(3)?,
            wall_seconds: num(4)?,
        });
    }
    Ok(rows)
}

pub fn load_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_summary(std::io::BufReader::new(f))
}
