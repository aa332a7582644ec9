//! Field tables in the dataset CSV layout: a header
//! `id,u_1..u_du,y_1..y_dy,s_1..s_ds` and one row per (instance, grid point).
//! Floats are written in shortest round-trip form, so writing and reading
//! back reproduces every value bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use neon_core::benchmarks::{BenchmarkId, Problem, TableProvider};
use neon_core::nn::Mat;
use neon_core::training::Dataset;
use neon_core::{BoxDomain, Field, Grid};

use crate::error::{Error, Result};

/// Instances `(u_i, field_i)` on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTable {
    pub grid: Grid,
    pub inputs: Vec<Vec<f64>>,
    pub fields: Vec<Field>,
}

impl FieldTable {
    pub fn from_dataset(data: &Dataset) -> Self {
        FieldTable {
            grid: data.grid().clone(),
            inputs: data.inputs().to_vec(),
            fields: data.targets().to_vec(),
        }
    }

    pub fn into_dataset(self) -> Result<Dataset> {
        Ok(Dataset::from_parts(self.inputs, self.grid, self.fields)?)
    }

    pub fn into_provider(self) -> Result<TableProvider> {
        Ok(TableProvider::new(self.grid, self.inputs, self.fields)?)
    }
}

pub fn write_table(w: impl Write, table: &FieldTable) -> Result<()> {
    let du = table.inputs.first().map_or(0, Vec::len);
    let dy = table.grid.dim();
    let ds = table.fields.first().map_or(0, Field::channels);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string()];
    header.extend((1..=du).map(|i| format!("u_{i}")));
    header.extend((1..=dy).map(|i| format!("y_{i}")));
    header.extend((1..=ds).map(|i| format!("s_{i}")));
    out.write_record(&header)?;
    let pts = table.grid.points();
    for (id, (u, f)) in table.inputs.iter().zip(&table.fields).enumerate() {
        for p in 0..table.grid.len() {
            let mut row = vec![id.to_string()];
            row.extend(u.iter().map(f64::to_string));
            row.extend(pts.row(p).iter().map(f64::to_string));
            row.extend((0..ds).map(|c| f.get(p, c).to_string()));
            out.write_record(&row)?;
        }
    }
    out.flush().map_err(|e| Error::io("<field table>", e))?;
    Ok(())
}

fn column_counts(header: &csv::StringRecord) -> Result<(usize, usize, usize)> {
    if header.get(0) != Some("id") {
        return Err(Error::Format("first column must be `id`".into()));
    }
    let mut counts = [0usize; 3];
    let mut stage = 0;
    for name in header.iter().skip(1) {
        let (prefix, idx) = name
            .split_once('_')
            .ok_or_else(|| Error::Format(format!("unexpected column {name:?}")))?;
        let s = match prefix {
            "u" => 0,
            "y" => 1,
            "s" => 2,
            _ => return Err(Error::Format(format!("unexpected column {name:?}"))),
        };
        if s < stage {
            return Err(Error::Format("columns must be ordered u_*, y_*, s_*".into()));
        }
        stage = s;
        counts[s] += 1;
        if idx.parse::<usize>().ok() != Some(counts[s]) {
            return Err(Error::Format(format!("column {name:?} out of sequence")));
        }
    }
    if counts.contains(&0) {
        return Err(Error::Format("need at least one u_, y_ and s_ column".into()));
    }
    Ok((counts[0], counts[1], counts[2]))
}

/// Reads a table; `grid_bounds` defaults to the bounding box of the grid.
pub fn read_table(r: impl Read, grid_bounds: Option<BoxDomain>) -> Result<FieldTable> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let (du, dy, ds) = column_counts(rd.headers()?)?;
    let mut ids: Vec<u64> = Vec::new();
    let mut inputs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut vals: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let at = |what: &str| format!("row {} {what}", line + 2);
        let id: u64 = rec[0].parse().map_err(|_| Error::Format(at("has a non-integer id")))?;
        let nums = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|_| Error::Format(at(&format!("has a non-numeric value {s:?}")))))
            .collect::<Result<Vec<f64>>>()?;
        let (u, rest) = nums.split_at(du);
        let (y, s) = rest.split_at(dy);
        match ids.last() {
            Some(&last) if last == id => {
                if inputs.last().map(Vec::as_slice) != Some(u) {
                    return Err(Error::Format(at("changes u inside an instance")));
                }
            }
            _ => {
                if ids.contains(&id) {
                    return Err(Error::Format(at(&format!("repeats instance id {id} out of order"))));
                }
                ids.push(id);
                inputs.push(u.to_vec());
                ys.push(Vec::new());
                vals.push(Vec::new());
            }
        }
        ys.last_mut().expect("pushed").push(y.to_vec());
        vals.last_mut().expect("pushed").extend_from_slice(s);
    }
    let Some(first) = ys.first() else {
        return Err(Error::Format("table has no rows".into()));
    };
    if ys.iter().any(|g| g != first) {
        return Err(Error::Format("instances do not share one query grid".into()));
    }
    let m = first.len();
    let points = Mat::from_vec(m, dy, first.concat())?;
    let bounds = match grid_bounds {
        Some(b) => b,
        None => {
            let lo = (0..dy).map(|j| (0..m).map(|i| points.get(i, j)).fold(f64::INFINITY, f64::min)).collect();
            let hi = (0..dy).map(|j| (0..m).map(|i| points.get(i, j)).fold(f64::NEG_INFINITY, f64::max)).collect();
            BoxDomain::new(lo, hi)?
        }
    };
    let grid = Grid::new(points, bounds)?;
    let fields = vals
        .into_iter()
        .map(|v| Field::new(m, ds, v).map_err(Error::from))
        .collect::<Result<Vec<_>>>()?;
    Ok(FieldTable { grid, inputs, fields })
}

pub fn save_table(path: &Path, table: &FieldTable) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_table(std::io::BufWriter::new(f), table)
}

pub fn load_table(path: &Path, grid_bounds: Option<BoxDomain>) -> Result<FieldTable> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_table(std::io::BufReader::new(f), grid_bounds)
}

/// A problem whose ground truth is looked up in the table at `path`.
pub fn load_field_provider(path: &Path, id: BenchmarkId) -> Result<Problem> {
    let table = load_table(path, Some(id.grid_bounds()))?;
    Ok(Problem::tabulated(id, table.into_provider()?)?)
}
