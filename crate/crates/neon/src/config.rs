//! Run configuration files.
//!
//! A config is a sectioned key-value (TOML) file. Only `[problem] id`,
//! `[run] budget`, `seeds` and `output_dir` are required; every other key
//! falls back to the problem's preset.
//!
//! ```toml
//! [problem]
//! id = "env_model"
//!
//! [model]
//! prior_scale = 0.75
//!
//! [training]
//! steps = 300
//!
//! [acquisition]
//! kind = "lei"
//! delta = 0.01
//! k = 64
//!
//! [run]
//! budget = 30
//! n_reset = 100
//! seeds = [0, 1, 2]
//! output_dir = "out/env"
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use neon_core::acquisition::{AcquisitionKind, Spread};
use neon_core::benchmarks::{BenchmarkId, Problem};
use neon_core::bo::BoConfig;
use neon_core::nn::LrSchedule;
use neon_core::operator::{DecoderKind, FourierConfig};

use crate::error::{Error, Result};
use crate::fields::load_field_provider;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub acquisition: AcquisitionSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub id: String,
    /// Field table backing problems without a built-in simulator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderName {
    Split,
    Concat,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder: Option<DecoderName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder_hidden: Option<Vec<usize>>,
    /// Number of Fourier frequencies; 0 feeds raw query coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fourier_features: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fourier_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epinet_hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    Exponential,
    WarmupCosine,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_steps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionName {
    Ei,
    Lei,
    Lcb,
    Qlei,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadName {
    Std,
    MeanAbsDev,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<AcquisitionName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<SpreadName>,
    /// Monte-Carlo index samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Points per iteration (q-LEI when above 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_reset: Option<usize>,
    /// L-BFGS iteration cap per restart.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Log real wall-clock times; off by default so reruns are byte-identical.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub record_timing: bool,
}

/// A config resolved against its problem preset.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub problem: Problem,
    /// Template for every seed (`seed` is overwritten per run).
    pub bo: BoConfig,
    pub q: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub record_timing: bool,
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        text.parse()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn benchmark(&self) -> Result<BenchmarkId> {
        self.problem
            .id
            .parse()
            .map_err(|_| Error::Config(format!("unknown problem id {:?}", self.problem.id)))
    }

    /// Resolves presets; relative paths are taken relative to `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedRun> {
        let id = self.benchmark()?;
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        let problem = match &self.problem.fields {
            Some(p) => load_field_provider(&base_dir.join(p), id)?,
            None => Problem::builtin(id).map_err(|e| Error::Config(e.to_string()))?,
        };
        let mut bo = BoConfig::preset(id);
        let m = &self.model;
        let s = &mut bo.surrogate;
        if let Some(v) = &m.encoder_hidden {
            s.encoder_hidden = v.clone();
        }
        if let Some(v) = m.latent_dim {
            s.latent_dim = v;
        }
        if let Some(v) = m.decoder {
            s.decoder_kind = match v {
                DecoderName::Split => DecoderKind::Split,
                DecoderName::Concat => DecoderKind::Concat,
            };
        }
        if let Some(v) = &m.decoder_hidden {
            s.decoder_hidden = v.clone();
        }
        match (m.fourier_features, m.fourier_scale) {
            (Some(0), _) => s.fourier = None,
            (n, scale) if n.is_some() || scale.is_some() => {
                let base = s.fourier.unwrap_or_default();
                s.fourier = Some(FourierConfig {
                    n_freq: n.unwrap_or(base.n_freq),
                    scale: scale.unwrap_or(base.scale),
                });
            }
            _ => {}
        }
        if let Some(v) = &m.epinet_hidden {
            s.epinet.hidden = v.clone();
        }
        if let Some(v) = m.index_dim {
            s.epinet.index_dim = v;
        }
        if let Some(v) = &m.prior_hidden {
            s.epinet.prior_hidden = v.clone();
        }
        if let Some(v) = m.prior_scale {
            s.epinet.prior_scale = v;
        }

        let t = &self.training;
        let tc = &mut s.train;
        if let Some(v) = t.steps {
            tc.steps = v;
        }
        if let Some(v) = t.batch_size {
            tc.batch_size = v;
        }
        if let Some(v) = t.k_train {
            tc.k_train = v;
        }
        let kind = t.schedule.unwrap_or(match tc.schedule {
            LrSchedule::Exponential { .. } => ScheduleName::Exponential,
            LrSchedule::WarmupCosine { .. } => ScheduleName::WarmupCosine,
        });
        let base = t.learning_rate.unwrap_or(tc.schedule.base());
        tc.schedule = match (kind, tc.schedule) {
            (ScheduleName::Exponential, prev) => {
                let (rate, steps) = match prev {
                    LrSchedule::Exponential {
                        decay_rate,
                        decay_steps,
                        ..
                    } => (decay_rate, decay_steps),
                    _ => (0.9, 1000.0),
                };
                LrSchedule::exponential(base, t.decay_rate.unwrap_or(rate), t.decay_steps.unwrap_or(steps))
            }
            (ScheduleName::WarmupCosine, prev) => {
                let warmup = match prev {
                    LrSchedule::WarmupCosine { warmup, .. } if t.steps.is_none() => warmup,
                    _ => tc.steps / 20,
                };
                LrSchedule::WarmupCosine {
                    base,
                    warmup: t.warmup.unwrap_or(warmup),
                    total: tc.steps,
                }
            }
        };

        let a = &self.acquisition;
        let q = a.q.unwrap_or(1);
        let delta = a.delta.unwrap_or(0.01);
        let name = a.kind.unwrap_or(if q > 1 { AcquisitionName::Qlei } else { AcquisitionName::Lei });
        bo.acquisition = match name {
            AcquisitionName::Ei => AcquisitionKind::Ei,
            AcquisitionName::Lei => AcquisitionKind::Lei { delta },
            AcquisitionName::Qlei => AcquisitionKind::Lei { delta },
            AcquisitionName::Lcb => AcquisitionKind::Lcb {
                beta: a.beta.unwrap_or(2.0),
                spread: match a.spread.unwrap_or(SpreadName::Std) {
                    SpreadName::Std => Spread::Std,
                    SpreadName::MeanAbsDev => Spread::MeanAbsDev,
                },
            },
        };
        if q == 0 {
            return Err(Error::Config("acquisition.q must be ≥ 1".into()));
        }
        if q > 1 && !matches!(name, AcquisitionName::Lei | AcquisitionName::Qlei) {
            return Err(Error::Config("q > 1 requires the q-LEI acquisition".into()));
        }
        if let Some(k) = a.k {
            bo.k = k;
        }
        bo.budget = self.run.budget;
        bo.n0 = self.run.n0;
        if let Some(n) = self.run.n_reset {
            bo.restarts.n_reset = n;
        }
        if let Some(n) = self.run.max_iter {
            bo.restarts.lbfgs.max_iter = n;
        }
        bo.validate().map_err(|e| Error::Config(e.to_string()))?;
        let q = if matches!(name, AcquisitionName::Lei | AcquisitionName::Qlei) { q } else { 1 };
        Ok(ResolvedRun {
            problem,
            bo,
            q,
            seeds: self.run.seeds.clone(),
            output_dir: base_dir.join(&self.run.output_dir),
            record_timing: self.run.record_timing,
        })
    }
}
