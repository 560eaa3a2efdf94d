//! Brute-force simulation of the feedback protocol.
//!
//! Each sample draws the six gains, quantizes the two direct links, passes
//! the indices through the (optionally noisy) feedback channel, applies the
//! decoded codewords and checks the reliability and secrecy events directly
//! on the instantaneous capacities. Nothing here reuses the analytic
//! evaluators, so the two sides are independent.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{stream_rng, ChannelSample, ChannelStats, Link};
use crate::codebook::{region_index, Codebook, RegionZero};
use crate::error::{domain, Result};
use crate::metrics::{capacity, secrecy_capacity, EffectiveGainSpec};
use crate::noisy::{label_bits, FeedbackNoise};

/// Streams below this offset are reserved for scenario construction.
const STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub n_samples: u64,
    /// Number of equal batches used for the batch-means standard error.
    pub batches: u64,
    pub seed: u64,
    /// Half-width of the agreement band, in standard errors.
    pub confidence: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_samples: 1_000_000,
            batches: 100,
            seed: 1,
            confidence: 3.0,
        }
    }
}

impl McConfig {
    pub fn new(n_samples: u64, seed: u64) -> Self {
        Self {
            n_samples,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 1000 {
            return domain(format!(
                "mc: n_samples must be >= 1000, got {}",
                self.n_samples
            ));
        }
        if self.batches < 2 || self.batches > self.n_samples {
            return domain(format!(
                "mc: batches must lie in [2, n_samples], got {}",
                self.batches
            ));
        }
        if !(self.confidence > 0.0) {
            return domain("mc: confidence multiplier must be positive");
        }
        Ok(())
    }

    fn batch_len(&self, b: u64) -> u64 {
        let base = self.n_samples / self.batches;
        base + u64::from(b < self.n_samples % self.batches)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub n_samples: u64,
}

impl McEstimate {
    /// Whether `x` lies within `k` standard errors plus an absolute floor.
    pub fn agrees(&self, x: f64, k: f64, floor: f64) -> bool {
        (x - self.value).abs() <= k * self.standard_error + floor
    }
}

/// Samples a non-negative gain from an arbitrary law.
pub trait GainLaw: Send + Sync {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64;
}

#[derive(Clone)]
pub enum LinkLaw {
    Exponential(f64),
    Custom(Arc<dyn GainLaw>),
}

impl LinkLaw {
    #[inline]
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            LinkLaw::Exponential(mean) => {
                let e: f64 = rng.sample(Exp1);
                e * mean
            }
            LinkLaw::Custom(law) => law.sample(rng),
        }
    }
}

/// Joint law of the six independent gains.
#[derive(Clone)]
pub struct ChannelLaw {
    links: [LinkLaw; 6],
}

impl ChannelLaw {
    pub fn exponential(stats: &ChannelStats) -> Self {
        Self {
            links: stats.to_array().map(LinkLaw::Exponential),
        }
    }

    pub fn with_link(mut self, link: Link, law: LinkLaw) -> Self {
        self.links[link.index()] = law;
        self
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> ChannelSample {
        let [bc, bd, dd, dc, be, de] = &self.links;
        ChannelSample {
            h_bc: bc.sample(rng),
            h_bd: bd.sample(rng),
            h_dd: dd.sample(rng),
            h_dc: dc.sample(rng),
            h_be: be.sample(rng),
            h_de: de.sample(rng),
        }
    }
}

/// Monte Carlo counterpart of [`crate::metrics::MetricsReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub avg_power_c: McEstimate,
    pub avg_power_d: McEstimate,
    pub avg_secrecy_rate_c: McEstimate,
    pub avg_rate_d: McEstimate,
    pub outage_codebook: McEstimate,
}

impl McReport {
    pub const METRICS: [&'static str; 5] = [
        "avg_power_c",
        "avg_power_d",
        "avg_secrecy_rate_c",
        "avg_rate_d",
        "outage_codebook",
    ];

    pub fn estimates(&self) -> [McEstimate; 5] {
        [
            self.avg_power_c,
            self.avg_power_d,
            self.avg_secrecy_rate_c,
            self.avg_rate_d,
            self.outage_codebook,
        ]
    }

    /// `metric,value,se,n` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,se,n\n");
        for (name, e) in Self::METRICS.iter().zip(self.estimates()) {
            let _ = writeln!(
                out,
                "{name},{},{},{}",
                e.value, e.standard_error, e.n_samples
            );
        }
        out
    }
}

// Per-codeword quantities resolved once before sampling.
struct Tables {
    bc_bounds: Vec<f64>,
    dd_bounds: Vec<f64>,
    p_bc: Vec<f64>,
    r_bc: Vec<f64>,
    rs: Vec<f64>,
    r_e: Vec<f64>,
    p_dd: Vec<f64>,
    r_dd: Vec<f64>,
    bits_c: u32,
    bits_d: u32,
}

impl Tables {
    fn new(cb: &Codebook, noise: Option<&FeedbackNoise>) -> Result<Self> {
        let (bits_c, bits_d) = match noise {
            Some(_) => (label_bits(cb.m())?, label_bits(cb.n())?),
            None => (0, 0),
        };
        let m = cb.m();
        let n = cb.n();
        Ok(Self {
            bc_bounds: cb.bc_boundaries.clone(),
            dd_bounds: cb.dd_boundaries.clone(),
            p_bc: (0..m).map(|k| cb.bc_power(k)).collect(),
            r_bc: (0..m).map(|k| cb.bc_rate(k)).collect(),
            rs: (0..m).map(|k| cb.bc_secrecy_rate(k)).collect(),
            r_e: (0..m).map(|k| cb.equivocation(k)).collect(),
            p_dd: (0..n).map(|k| cb.dd_power(k)).collect(),
            r_dd: (0..n).map(|k| cb.dd_rate(k)).collect(),
            bits_c,
            bits_d,
        })
    }
}

#[inline]
fn flip_bits(rng: &mut ChaCha8Rng, index: usize, bits: u32, q: f64) -> usize {
    let mut out = index;
    for bit in 0..bits {
        if rng.random::<f64>() < q {
            out ^= 1 << bit;
        }
    }
    out
}

#[derive(Clone, Copy, Default)]
struct Sums {
    values: [f64; 5],
}

fn simulate_batch(
    tables: &Tables,
    law: &ChannelLaw,
    noise: Option<&FeedbackNoise>,
    first: usize,
    len: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Sums> {
    let t = tables;
    let mut s = Sums::default();
    for _ in 0..len {
        let h = law.sample(rng);
        let true_m = region_index(&t.bc_bounds, h.h_bc)?;
        let true_n = region_index(&t.dd_bounds, h.h_dd)?;
        let (m, n) = match noise {
            Some(q) => (
                flip_bits(rng, true_m, t.bits_c, q.q_c),
                flip_bits(rng, true_n, t.bits_d, q.q_d),
            ),
            None => (true_m, true_n),
        };
        let cell_on = true_m >= first && m >= first;
        let d2d_on = true_n >= first && n >= first;
        let p = t.p_bc[m];
        let pd = t.p_dd[n];
        if cell_on {
            s.values[0] += p;
        }
        if d2d_on {
            s.values[1] += pd;
        }
        if !cell_on || m == 0 {
            if cell_on && d2d_on && n >= 1 {
                s.values[3] += d2d_success(t, &h, m, n);
            }
            continue;
        }
        // Cellular link alone: reliable and secret.
        if t.r_bc[m] <= capacity(h.h_bc, p) && t.rs[m] <= secrecy_capacity(h.h_bc, h.h_be, p) {
            s.values[2] += t.rs[m];
        }
        if d2d_on {
            let h_bc_eff = h.h_bc / (1.0 + h.h_dc * pd);
            let h_be_eff = h.h_be / (1.0 + h.h_de * pd);
            let reliable = t.r_bc[m] <= capacity(h_bc_eff, p);
            let secure = capacity(h_be_eff, p) <= t.r_e[m];
            if !(reliable && secure) {
                s.values[4] += 1.0;
            }
            if n >= 1 {
                s.values[3] += d2d_success(t, &h, m, n);
            }
        }
    }
    Ok(s)
}

#[inline]
fn d2d_success(t: &Tables, h: &ChannelSample, m: usize, n: usize) -> f64 {
    let h_dd_eff = h.h_dd / (1.0 + h.h_bd * t.p_bc[m]);
    if t.r_dd[n] <= capacity(h_dd_eff, t.p_dd[n]) {
        t.r_dd[n]
    } else {
        0.0
    }
}

fn batch_estimates(batches: &[(u64, [f64; 5])], total: u64) -> [McEstimate; 5] {
    let k = batches.len() as f64;
    std::array::from_fn(|i| {
        let sum: f64 = batches.iter().map(|(_, v)| v[i]).sum();
        let value = sum / total as f64;
        let var = batches
            .iter()
            .map(|(len, v)| {
                let d = v[i] / *len as f64 - value;
                d * d
            })
            .sum::<f64>()
            / (k - 1.0);
        McEstimate {
            value,
            standard_error: (var / k).sqrt(),
            n_samples: total,
        }
    })
}

/// Simulates every metric with exponential gains.
pub fn simulate_metrics(
    cb: &Codebook,
    stats: &ChannelStats,
    noise: Option<&FeedbackNoise>,
    region0: RegionZero,
    mc: &McConfig,
) -> Result<McReport> {
    stats.validate()?;
    simulate_metrics_with_law(cb, &ChannelLaw::exponential(stats), noise, region0, mc)
}

/// Simulates every metric under an arbitrary joint law of the gains.
pub fn simulate_metrics_with_law(
    cb: &Codebook,
    law: &ChannelLaw,
    noise: Option<&FeedbackNoise>,
    region0: RegionZero,
    mc: &McConfig,
) -> Result<McReport> {
    mc.validate()?;
    cb.ensure_valid()?;
    if let Some(q) = noise {
        q.validate()?;
    }
    let tables = Tables::new(cb, noise)?;
    let first = region0.first();
    let sums: Vec<(u64, [f64; 5])> = (0..mc.batches)
        .into_par_iter()
        .map(|b| {
            let len = mc.batch_len(b);
            let mut rng = stream_rng(mc.seed, STREAM_BASE + b);
            simulate_batch(&tables, law, noise, first, len, &mut rng).map(|s| (len, s.values))
        })
        .collect::<Result<_>>()?;
    let [avg_power_c, avg_power_d, avg_secrecy_rate_c, avg_rate_d, outage_codebook] =
        batch_estimates(&sums, mc.n_samples);
    Ok(McReport {
        avg_power_c,
        avg_power_d,
        avg_secrecy_rate_c,
        avg_rate_d,
        outage_codebook,
    })
}

/// Empirical conditional CDF of `h / (1 + g p)` given `h` in the region,
/// with binomial standard errors. `mc.n_samples` counts accepted draws.
pub fn simulate_conditional_cdf(
    spec: &EffectiveGainSpec,
    x_grid: &[f64],
    mc: &McConfig,
) -> Result<Vec<McEstimate>> {
    mc.validate()?;
    let mass = spec.region_mass();
    if !(mass >= 1e-9) {
        return domain(format!(
            "conditioning region has probability {mass:e}; rejection sampling is impractical"
        ));
    }
    let counts: Vec<Vec<u64>> = (0..mc.batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(mc.seed, STREAM_BASE + b);
            let mut hits = vec![0u64; x_grid.len()];
            let mut accepted = 0;
            let len = mc.batch_len(b);
            while accepted < len {
                let e: f64 = rng.sample(Exp1);
                let h = e * spec.direct_mean;
                if h < spec.lo || h >= spec.hi {
                    continue;
                }
                accepted += 1;
                let g: f64 = rng.sample(Exp1);
                let eff = h / (1.0 + g * spec.interferer_mean * spec.interferer_power);
                for (slot, &x) in hits.iter_mut().zip(x_grid) {
                    if eff <= x {
                        *slot += 1;
                    }
                }
            }
            hits
        })
        .collect();
    let n = mc.n_samples as f64;
    Ok((0..x_grid.len())
        .map(|i| {
            let k: u64 = counts.iter().map(|c| c[i]).sum();
            let f = k as f64 / n;
            McEstimate {
                value: f,
                standard_error: (f * (1.0 - f) / n).sqrt(),
                n_samples: mc.n_samples,
            }
        })
        .collect())
}
