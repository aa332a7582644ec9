use alloc::vec::Vec;
use num_traits::Float;

use super::params::ParamTree;
use super::schedule::LrSchedule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over a group of parameter trees sharing one step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<ParamTree>,
    second: Vec<ParamTree>,
    step: usize,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&ParamTree]) -> Self {
        Adam {
            config,
            first: params.iter().map(|p| p.zeros_like()).collect(),
            second: params.iter().map(|p| p.zeros_like()).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One bias-corrected update with rate `schedule.rate(step)`.
    pub fn step(&mut self, params: &mut [&mut ParamTree], grads: &[&ParamTree], schedule: &LrSchedule) {
        debug_assert_eq!(params.len(), self.first.len());
        let AdamConfig { beta1, beta2, eps } = self.config;
        let rate = schedule.rate(self.step);
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((pi, gi), mi), vi) in p
                .values_mut()
                .zip(g.values())
                .zip(m.values_mut())
                .zip(v.values_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= rate * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
