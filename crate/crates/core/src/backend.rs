//! Metric evaluators selectable by name.

use crate::channel::ChannelStats;
use crate::codebook::Codebook;
use crate::error::Result;
use crate::metrics::{self, EvalOptions, MetricsReport};
use crate::noisy::{self, FeedbackNoise};
use crate::registry::Registry;

pub trait MetricBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn evaluate(&self, cb: &Codebook, stats: &ChannelStats) -> Result<MetricsReport>;
}

/// Construction parameters shared by every backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackendParams {
    pub opts: EvalOptions,
    pub noise: FeedbackNoise,
}

impl Default for BackendParams {
    fn default() -> Self {
        Self {
            opts: EvalOptions::default(),
            noise: FeedbackNoise::noiseless(),
        }
    }
}

pub struct ErrorFree {
    pub opts: EvalOptions,
}

impl MetricBackend for ErrorFree {
    fn name(&self) -> &'static str {
        "error-free"
    }

    fn evaluate(&self, cb: &Codebook, stats: &ChannelStats) -> Result<MetricsReport> {
        cb.ensure_valid()?;
        stats.validate()?;
        Ok(metrics::evaluate(cb, stats, &self.opts))
    }
}

pub struct Noisy {
    pub opts: EvalOptions,
    pub noise: FeedbackNoise,
}

impl MetricBackend for Noisy {
    fn name(&self) -> &'static str {
        "noisy"
    }

    fn evaluate(&self, cb: &Codebook, stats: &ChannelStats) -> Result<MetricsReport> {
        cb.ensure_valid()?;
        stats.validate()?;
        noisy::evaluate(cb, stats, &self.noise, &self.opts)
    }
}

pub fn registry() -> Registry<dyn MetricBackend, BackendParams> {
    let mut r: Registry<dyn MetricBackend, BackendParams> = Registry::new("metric backend");
    r.register("error-free", |p: &BackendParams| {
        Ok(Box::new(ErrorFree { opts: p.opts }) as Box<dyn MetricBackend>)
    });
    r.register("noisy", |p: &BackendParams| {
        p.noise.validate()?;
        Ok(Box::new(Noisy {
            opts: p.opts,
            noise: p.noise,
        }) as Box<dyn MetricBackend>)
    });
    r
}
