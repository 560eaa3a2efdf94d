//! Metrics when region indices are fed back over binary symmetric channels.
//!
//! The transmitter decodes index `m` while the channel is in region `m'`
//! with probability `rho[m][m'] = q^d (1 - q)^(b - d)`, `d` being the Hamming
//! distance between the `b`-bit labels. Feedback noise therefore needs
//! power-of-two codebook sizes.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelStats;
use crate::codebook::{region_mass, Codebook};
use crate::error::{domain, Result};
use crate::metrics::{
    cell_success_mass, d2d_success_mass, secrecy_mass, EvalOptions, MetricsReport,
};

/// Crossover probabilities of the cellular and D2D feedback links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackNoise {
    pub q_c: f64,
    pub q_d: f64,
}

impl FeedbackNoise {
    pub fn new(q_c: f64, q_d: f64) -> Result<Self> {
        let n = Self { q_c, q_d };
        n.validate()?;
        Ok(n)
    }

    pub fn noiseless() -> Self {
        Self { q_c: 0.0, q_d: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, q) in [("q_c", self.q_c), ("q_d", self.q_d)] {
            if !(0.0..=1.0).contains(&q) {
                return domain(format!("{name} must lie in [0, 1], got {q}"));
            }
        }
        Ok(())
    }
}

/// Number of label bits for a codebook of `size` regions.
pub fn label_bits(size: usize) -> Result<u32> {
    if size < 2 || !size.is_power_of_two() {
        return domain(format!(
            "feedback noise needs a power-of-two codebook size, got {size}"
        ));
    }
    Ok(size.trailing_zeros())
}

pub fn hamming(a: usize, b: usize) -> u32 {
    (a ^ b).count_ones()
}

/// Row-stochastic matrix of decoded-given-true probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    size: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    /// `q^d (1 - q)^(b - d)` for every pair of labels of a `size`-region codebook.
    pub fn new(q: f64, size: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return domain(format!("crossover probability must lie in [0, 1], got {q}"));
        }
        let bits = label_bits(size)?;
        let mut data = Vec::with_capacity(size * size);
        for decoded in 0..size {
            for actual in 0..size {
                let d = hamming(decoded, actual);
                data.push(q.powi(d as i32) * (1.0 - q).powi((bits - d) as i32));
            }
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Probability of decoding `decoded` when the true index is `actual`.
    #[inline]
    pub fn get(&self, decoded: usize, actual: usize) -> f64 {
        self.data[decoded * self.size + actual]
    }
}

/// Transition matrix of a `bits`-bit label sent over a binary symmetric
/// channel with crossover `q`.
pub fn transition_matrix(q: f64, bits: u32) -> Result<TransitionMatrix> {
    if !(1..=16).contains(&bits) {
        return domain(format!("label width must lie in 1..=16 bits, got {bits}"));
    }
    TransitionMatrix::new(q, 1 << bits)
}

/// Full evaluation under feedback noise.
pub fn evaluate(
    cb: &Codebook,
    stats: &ChannelStats,
    noise: &FeedbackNoise,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    noise.validate()?;
    let rho_c = TransitionMatrix::new(noise.q_c, cb.m())?;
    let rho_d = TransitionMatrix::new(noise.q_d, cb.n())?;
    let first = opts.region0.first();
    let tol = opts.tol;
    let g_c: Vec<f64> = (0..cb.m())
        .map(|k| {
            let (lo, hi) = cb.bc_region(k);
            region_mass(stats.mean_bc, lo, hi)
        })
        .collect();
    let g_d: Vec<f64> = (0..cb.n())
        .map(|k| {
            let (lo, hi) = cb.dd_region(k);
            region_mass(stats.mean_dd, lo, hi)
        })
        .collect();
    // Probability that the decoded index is m (resp. n) and the true index
    // participates.
    let u: Vec<f64> = (0..cb.m())
        .map(|m| (first..cb.m()).map(|a| rho_c.get(m, a) * g_c[a]).sum())
        .collect();
    let w: Vec<f64> = (0..cb.n())
        .map(|n| (first..cb.n()).map(|a| rho_d.get(n, a) * g_d[a]).sum())
        .collect();

    let power_c_by_region: Vec<f64> = (0..cb.m()).map(|m| u[m] * cb.bc_power(m)).collect();
    let power_d_by_region: Vec<f64> = (0..cb.n()).map(|n| w[n] * cb.dd_power(n)).collect();

    let mut secrecy_rate_by_region = vec![0.0; cb.m()];
    for (m, slot) in secrecy_rate_by_region.iter_mut().enumerate().skip(1) {
        let rs = cb.bc_secrecy_rate(m);
        if rs <= 0.0 {
            continue;
        }
        let p = cb.bc_power(m);
        let reliable_from = cb.bc_threshold(m);
        let mut acc = 0.0;
        for a in first..cb.m() {
            let (lo, hi) = cb.bc_region(a);
            let lo = lo.max(reliable_from);
            if lo < hi {
                acc += rho_c.get(m, a) * secrecy_mass(stats, lo, hi, p, rs, tol);
            }
        }
        *slot = acc * rs;
    }

    let mut rate_d_by_region = vec![0.0; cb.n()];
    for m in first..cb.m() {
        let weight_m = u[m];
        if weight_m == 0.0 {
            continue;
        }
        for (n, slot) in rate_d_by_region.iter_mut().enumerate().skip(1) {
            let r = cb.dd_rate(n);
            if r <= 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for a in first..cb.n() {
                let rho = rho_d.get(n, a);
                if rho > 0.0 {
                    acc += rho * d2d_success_mass(cb, stats, m, a, n, tol);
                }
            }
            *slot += weight_m * acc * r;
        }
    }

    let mut outage_by_region = vec![0.0; cb.m()];
    for (m, slot) in outage_by_region.iter_mut().enumerate().skip(1) {
        let mut acc = 0.0;
        for a in first..cb.m() {
            let rho = rho_c.get(m, a);
            if rho == 0.0 {
                continue;
            }
            for n in first..cb.n() {
                if w[n] == 0.0 {
                    continue;
                }
                let success = cell_success_mass(cb, stats, a, m, n, tol);
                acc += rho * w[n] * (g_c[a] - success).max(0.0);
            }
        }
        *slot = acc;
    }

    Ok(MetricsReport {
        avg_power_c: power_c_by_region.iter().sum(),
        avg_power_d: power_d_by_region.iter().sum(),
        avg_secrecy_rate_c: secrecy_rate_by_region.iter().sum(),
        avg_rate_d: rate_d_by_region.iter().sum(),
        outage_codebook: outage_by_region.iter().sum(),
        power_c_by_region,
        power_d_by_region,
        secrecy_rate_by_region,
        rate_d_by_region,
        outage_by_region,
        region0: opts.region0,
        q_c: Some(noise.q_c),
        q_d: Some(noise.q_d),
    })
}
