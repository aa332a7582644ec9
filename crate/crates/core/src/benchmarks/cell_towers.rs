//! Continuous coverage objective for cell-tower signal (`R`) and
//! interference (`I`) maps:
//!
//! ```text
//! F    = ∫ s(T_w − R)
//! A    = s(R − T_w) s(I + T_s − R)
//! G    = ∫ s(I A + T_w − R A)
//! Obj  = 0.25 F + 0.75 G
//! ```

use alloc::vec::Vec;

use super::{sigmoid, Functional};
use crate::domain::{Field, Grid};
use crate::error::{ensure_len, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageSpec {
    pub weak_threshold: f64,
    pub strong_threshold: f64,
    pub mix: f64,
}

impl Default for CoverageSpec {
    fn default() -> Self {
        CoverageSpec {
            weak_threshold: -80.0,
            strong_threshold: 6.0,
            mix: 0.25,
        }
    }
}

/// The two coverage integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageTerms {
    pub strong: f64,
    pub weak: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    spec: CoverageSpec,
    weight: f64,
    points: usize,
}

fn dsigmoid(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

impl Coverage {
    pub fn new(grid: &Grid, spec: CoverageSpec) -> Result<Self> {
        Ok(Coverage {
            spec,
            weight: grid.cell_weight(),
            points: grid.len(),
        })
    }

    pub fn terms(&self, field: &Field) -> Result<CoverageTerms> {
        ensure_len("coverage channels", 2, field.channels())?;
        ensure_len("coverage grid", self.points, field.points())?;
        let (tw, ts) = (self.spec.weak_threshold, self.spec.strong_threshold);
        let mut t = CoverageTerms { strong: 0.0, weak: 0.0 };
        for p in 0..field.points() {
            let (r, i) = (field.get(p, 0), field.get(p, 1));
            let area = sigmoid(r - tw) * sigmoid(i + ts - r);
            t.strong += self.weight * sigmoid(tw - r);
            t.weak += self.weight * sigmoid(i * area + tw - r * area);
        }
        Ok(t)
    }
}

pub fn cell_coverage_objective(field: &Field, grid: &Grid, spec: CoverageSpec) -> Result<f64> {
    Coverage::new(grid, spec)?.value(field)
}

impl Functional for Coverage {
    fn channels(&self) -> usize {
        2
    }

    fn value(&self, field: &Field) -> Result<f64> {
        let t = self.terms(field)?;
        Ok(self.spec.mix * t.strong + (1.0 - self.spec.mix) * t.weak)
    }

    fn value_and_grad(&self, field: &Field) -> Result<(f64, Vec<f64>)> {
        let value = self.value(field)?;
        let (tw, ts, mix) = (self.spec.weak_threshold, self.spec.strong_threshold, self.spec.mix);
        let mut grad = alloc::vec![0.0; field.values().len()];
        for p in 0..field.points() {
            let (r, i) = (field.get(p, 0), field.get(p, 1));
            let (s1, s2) = (sigmoid(r - tw), sigmoid(i + ts - r));
            let area = s1 * s2;
            let da_dr = dsigmoid(r - tw) * s2 - s1 * dsigmoid(i + ts - r);
            let da_di = s1 * dsigmoid(i + ts - r);
            let q = i * area + tw - r * area;
            let dq = dsigmoid(q);
            let dr = -mix * dsigmoid(tw - r) + (1.0 - mix) * dq * (-area + (i - r) * da_dr);
            let di = (1.0 - mix) * dq * (area + (i - r) * da_di);
            grad[2 * p] = self.weight * dr;
            grad[2 * p + 1] = self.weight * di;
        }
        Ok((value, grad))
    }
}
