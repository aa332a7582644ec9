use core::f64::consts::PI;
use num_traits::Float;

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    /// `base · decay_rate^(step / decay_steps)`.
    Exponential {
        base: f64,
        decay_rate: f64,
        decay_steps: f64,
    },
    /// Linear ramp to `base` over `warmup` steps, then cosine decay to zero at `total`.
    WarmupCosine { base: f64, warmup: usize, total: usize },
}

impl LrSchedule {
    pub fn exponential(base: f64, decay_rate: f64, decay_steps: f64) -> Self {
        LrSchedule::Exponential {
            base,
            decay_rate,
            decay_steps,
        }
    }

    pub fn base(&self) -> f64 {
        match *self {
            LrSchedule::Exponential { base, .. } | LrSchedule::WarmupCosine { base, .. } => base,
        }
    }

    pub fn rate(&self, step: usize) -> f64 {
        match *self {
            LrSchedule::Exponential {
                base,
                decay_rate,
                decay_steps,
            } => base * decay_rate.powf(step as f64 / decay_steps),
            LrSchedule::WarmupCosine { base, warmup, total } => {
                if step < warmup {
                    base * (step + 1) as f64 / warmup as f64
                } else {
                    let span = total.saturating_sub(warmup).max(1) as f64;
                    let progress = ((step - warmup) as f64 / span).min(1.0);
                    base * 0.5 * (1.0 + (PI * progress).cos())
                }
            }
        }
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::exponential(1e-3, 0.9, 1000.0)
    }
}
