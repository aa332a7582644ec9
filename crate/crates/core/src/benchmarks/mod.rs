//! Ground-truth field maps `h` and objective functionals `g`.
//!
//! `env_model` and `brusselator` come with built-in providers. The
//! interferometer and cell-tower problems only implement `g`; their fields are
//! tabulated elsewhere and served through [`TableProvider`].

pub mod brusselator;
pub mod cell_towers;
pub mod env_model;
pub mod interferometer;

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use num_traits::Float;

use crate::domain::{BoxDomain, Field, Grid};
use crate::error::{ensure_len, Error, Result};

/// A known, cheap functional `g` on grid fields.
pub trait Functional: Send + Sync {
    fn channels(&self) -> usize;

    fn value(&self, field: &Field) -> Result<f64> {
        Ok(self.value_and_grad(field)?.0)
    }

    /// `g` and `∂g/∂field` laid out like `field.values()`.
    fn value_and_grad(&self, field: &Field) -> Result<(f64, Vec<f64>)>;
}

/// The expensive map `h`, answering on a fixed grid.
pub trait FieldProvider: Send + Sync {
    fn evaluate(&self, u: &[f64]) -> Result<Field>;

    /// Designs the provider can answer, when it is restricted to a finite set.
    fn candidates(&self) -> Option<&[Vec<f64>]> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

impl Sense {
    /// Converts a user-facing objective into the maximized internal value.
    pub fn internal(self, f: f64) -> f64 {
        match self {
            Sense::Maximize => f,
            Sense::Minimize => -f,
        }
    }

    pub fn external(self, v: f64) -> f64 {
        self.internal(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchmarkId {
    EnvModel,
    Brusselator,
    Interferometer,
    CellTowers,
}

impl BenchmarkId {
    pub const ALL: [BenchmarkId; 4] = [
        BenchmarkId::EnvModel,
        BenchmarkId::Brusselator,
        BenchmarkId::Interferometer,
        BenchmarkId::CellTowers,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkId::EnvModel => "env_model",
            BenchmarkId::Brusselator => "brusselator",
            BenchmarkId::Interferometer => "interferometer_g",
            BenchmarkId::CellTowers => "cell_towers_g",
        }
    }

    pub fn sense(self) -> Sense {
        match self {
            BenchmarkId::Brusselator => Sense::Minimize,
            _ => Sense::Maximize,
        }
    }

    pub fn domain(self) -> BoxDomain {
        let (lo, hi) = match self {
            BenchmarkId::EnvModel => (env_model::LOWER.to_vec(), env_model::UPPER.to_vec()),
            BenchmarkId::Brusselator => (brusselator::LOWER.to_vec(), brusselator::UPPER.to_vec()),
            BenchmarkId::Interferometer => (alloc::vec![-1.0; 4], alloc::vec![1.0; 4]),
            BenchmarkId::CellTowers => {
                let mut lo = alloc::vec![0.0; 15];
                lo.extend([30.0; 15]);
                let mut hi = alloc::vec![10.0; 15];
                hi.extend([50.0; 15]);
                (lo, hi)
            }
        };
        BoxDomain::new(lo, hi).expect("static bounds")
    }

    /// Bounds of the query domain, used to rescale query points.
    pub fn grid_bounds(self) -> BoxDomain {
        match self {
            BenchmarkId::EnvModel => env_model::grid().bounds().clone(),
            BenchmarkId::Brusselator | BenchmarkId::Interferometer => {
                BoxDomain::new(alloc::vec![0.0, 0.0], alloc::vec![1.0, 1.0]).expect("static bounds")
            }
            BenchmarkId::CellTowers => BoxDomain::new(alloc::vec![0.0, 0.0], alloc::vec![50.0, 50.0]).expect("static bounds"),
        }
    }

    pub fn channels(self) -> usize {
        match self {
            BenchmarkId::EnvModel => 1,
            BenchmarkId::Brusselator | BenchmarkId::CellTowers => 2,
            BenchmarkId::Interferometer => 16,
        }
    }

    pub fn has_builtin_provider(self) -> bool {
        matches!(self, BenchmarkId::EnvModel | BenchmarkId::Brusselator)
    }

    /// Functional `g` for fields on `grid`.
    pub fn functional(self, grid: &Grid) -> Result<Box<dyn Functional>> {
        Ok(match self {
            BenchmarkId::EnvModel => {
                ensure_len("env_model grid", 12, grid.len())?;
                Box::new(env_model::EnvObjective::new(env_model::true_field(grid)?))
            }
            BenchmarkId::Brusselator => Box::new(brusselator::WeightedVariance::default()),
            BenchmarkId::Interferometer => Box::new(interferometer::Visibility::new(grid)?),
            BenchmarkId::CellTowers => Box::new(cell_towers::Coverage::new(grid, cell_towers::CoverageSpec::default())?),
        })
    }
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchmarkId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Lookup(format!("unknown problem id `{s}`")))
    }
}

/// A complete composite problem `f = g ∘ h` on a box.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub domain: BoxDomain,
    pub grid: Grid,
    pub provider: Arc<dyn FieldProvider>,
    pub functional: Arc<dyn Functional>,
    pub sense: Sense,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("grid_points", &self.grid.len())
            .field("sense", &self.sense)
            .finish()
    }
}

impl Problem {
    /// User-facing objective `g(h(u))`.
    pub fn objective(&self, u: &[f64]) -> Result<(f64, Field)> {
        if !self.domain.contains(u) {
            return Err(Error::Domain(format!("design {u:?} outside the box")));
        }
        let field = self.provider.evaluate(u)?;
        ensure_len("provider field points", self.grid.len(), field.points())?;
        let f = self.functional.value(&field)?;
        if !f.is_finite() {
            return Err(Error::NonFinite(format!("objective at {u:?}")));
        }
        Ok((f, field))
    }

    /// Problem with a built-in provider.
    pub fn builtin(id: BenchmarkId) -> Result<Self> {
        match id {
            BenchmarkId::EnvModel => {
                let grid = env_model::grid();
                Ok(Problem {
                    name: id.to_string(),
                    domain: id.domain(),
                    functional: Arc::from(id.functional(&grid)?),
                    grid,
                    provider: Arc::new(env_model::EnvModelProvider),
                    sense: id.sense(),
                })
            }
            BenchmarkId::Brusselator => {
                let spec = brusselator::BrusselatorSpec::default();
                let grid = spec.grid()?;
                Ok(Problem {
                    name: id.to_string(),
                    domain: id.domain(),
                    functional: Arc::from(id.functional(&grid)?),
                    grid,
                    provider: Arc::new(brusselator::BrusselatorProvider::new(spec)),
                    sense: id.sense(),
                })
            }
            _ => Err(Error::Config(format!("{id} has no built-in field provider; supply a field table"))),
        }
    }

    /// Problem whose fields come from a table.
    pub fn tabulated(id: BenchmarkId, table: TableProvider) -> Result<Self> {
        let grid = table.grid().clone();
        ensure_len("table channels", id.channels(), table.channels())?;
        Ok(Problem {
            name: id.to_string(),
            domain: id.domain(),
            functional: Arc::from(id.functional(&grid)?),
            grid,
            provider: Arc::new(table),
            sense: id.sense(),
        })
    }
}

/// Fields looked up by exact (bitwise) match of the design.
#[derive(Debug, Clone, PartialEq)]
pub struct TableProvider {
    grid: Grid,
    inputs: Vec<Vec<f64>>,
    fields: Vec<Field>,
}

impl TableProvider {
    pub fn new(grid: Grid, inputs: Vec<Vec<f64>>, fields: Vec<Field>) -> Result<Self> {
        ensure_len("table rows", inputs.len(), fields.len())?;
        if inputs.is_empty() {
            return Err(Error::Config("field table is empty".into()));
        }
        let c = fields[0].channels();
        for (u, f) in inputs.iter().zip(&fields) {
            ensure_len("table design dimension", inputs[0].len(), u.len())?;
            ensure_len("table field points", grid.len(), f.points())?;
            ensure_len("table field channels", c, f.channels())?;
        }
        Ok(TableProvider { grid, inputs, fields })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.fields[0].channels()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

impl FieldProvider for TableProvider {
    fn evaluate(&self, u: &[f64]) -> Result<Field> {
        self.inputs
            .iter()
            .position(|x| same_bits(x, u))
            .map(|i| self.fields[i].clone())
            .ok_or_else(|| Error::Lookup(format!("no tabulated field for design {u:?}")))
    }

    fn candidates(&self) -> Option<&[Vec<f64>]> {
        Some(&self.inputs)
    }
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
