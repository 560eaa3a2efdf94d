//! Closed-form (quadrature based) evaluation of the error-free metrics.
//!
//! Every probability here is a region-restricted integral over one
//! exponential gain whose inner integral, over the independent interferer or
//! eavesdropper gain, is an exponential tail in closed form. The outer
//! integral goes through [`crate::quad::integrate`].

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelStats;
use crate::codebook::{region_mass, Codebook, Constraints, RegionZero};
use crate::error::{domain, Result};
use crate::quad::{integrate, Tolerance};

/// Conditional tail mass left beyond a truncated semi-infinite region.
pub const TAIL_MASS: f64 = 1e-12;

/// `log2(1 + h p)`.
#[inline]
pub fn capacity(h: f64, p: f64) -> f64 {
    (h * p).ln_1p() / LN_2
}

/// `[log2(1 + h_main p) - log2(1 + h_eve p)]^+`.
#[inline]
pub fn secrecy_capacity(h_main: f64, h_eve: f64, p: f64) -> f64 {
    (capacity(h_main, p) - capacity(h_eve, p)).max(0.0)
}

/// Evaluation settings shared by the error-free and noisy evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalOptions {
    pub region0: RegionZero,
    pub tol: Tolerance,
}

/// Distribution of `h / (1 + g * p)` restricted to `h` in `[lo, hi)`,
/// with `h` and `g` independent exponentials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveGainSpec {
    pub direct_mean: f64,
    pub interferer_mean: f64,
    pub interferer_power: f64,
    pub lo: f64,
    pub hi: f64,
}

impl EffectiveGainSpec {
    pub fn new(
        direct_mean: f64,
        interferer_mean: f64,
        interferer_power: f64,
        lo: f64,
        hi: f64,
    ) -> Result<Self> {
        if !(direct_mean > 0.0) || !(interferer_mean > 0.0) {
            return domain("effective gain: means must be positive");
        }
        if !(interferer_power >= 0.0) {
            return domain("effective gain: interferer power must be non-negative");
        }
        if !(lo >= 0.0) || !(lo < hi) {
            return domain(format!("effective gain: invalid region [{lo}, {hi})"));
        }
        Ok(Self {
            direct_mean,
            interferer_mean,
            interferer_power,
            lo,
            hi,
        })
    }

    /// Probability of the conditioning region.
    pub fn region_mass(&self) -> f64 {
        region_mass(self.direct_mean, self.lo, self.hi)
    }

    /// Joint probability `Pr(h in [lo, hi), h / (1 + g p) >= threshold)`.
    ///
    /// This is the reliability event `rate(threshold) <= capacity` for a
    /// codeword designed at `threshold` and interfered with at power `p`.
    pub fn reliable_mass(&self, threshold: f64, tol: Tolerance) -> f64 {
        let start = self.lo.max(threshold);
        if start >= self.hi {
            return 0.0;
        }
        let mean = self.direct_mean;
        let p = self.interferer_power;
        if p == 0.0 || threshold == 0.0 {
            return region_mass(mean, start, self.hi);
        }
        let end = truncate(mean, start, self.hi);
        // Inner: Pr(g <= (h/t - 1)/p) = 1 - exp(-(h - t) / (t p g_mean)).
        let k = 1.0 / (threshold * p * self.interferer_mean);
        let integral = integrate(
            |h| -(-(h - threshold) * k).exp_m1() * (-h / mean).exp() / mean,
            start,
            end,
            tol,
        );
        integral.value.max(0.0)
    }
}

/// Finite stand-in for `hi`: the `1 - TAIL_MASS` quantile of the
/// exponential conditioned on exceeding `start`.
fn truncate(mean: f64, start: f64, hi: f64) -> f64 {
    hi.min(start + mean * (1.0 / TAIL_MASS).ln())
}

/// Conditional CDF `Pr(h / (1 + g p) <= x | h in [lo, hi))`.
pub fn cdf_eff_bc(spec: &EffectiveGainSpec, x: f64, tol: Tolerance) -> Result<f64> {
    if !(x >= 0.0) {
        return domain(format!("cdf_eff_bc: x must be non-negative, got {x}"));
    }
    let mass = spec.region_mass();
    if !(mass > 0.0) {
        return domain("cdf_eff_bc: conditioning region has zero probability");
    }
    let mean = spec.direct_mean;
    let p = spec.interferer_power;
    if p == 0.0 {
        let top = x.clamp(spec.lo, spec.hi);
        return Ok((region_mass(mean, spec.lo, top) / mass).min(1.0));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    // For h <= x the event holds for every interferer draw.
    let below = region_mass(mean, spec.lo, x.min(spec.hi));
    let start = spec.lo.max(x);
    let above = if start < spec.hi {
        let k = 1.0 / (x * p * spec.interferer_mean);
        integrate(
            |h| (-(h - x) * k).exp() * (-h / mean).exp() / mean,
            start,
            truncate(mean, start, spec.hi),
            tol,
        )
        .value
    } else {
        0.0
    };
    Ok(((below + above) / mass).clamp(0.0, 1.0))
}

/// CDF of `h_be / (1 + h_de p_dd)` at `x`.
pub fn cdf_eff_be(mean_be: f64, mean_de: f64, p_dd: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    1.0 - mean_be / (mean_be + mean_de * p_dd * x) * (-x / mean_be).exp()
}

/// `Pr(log2(1 + h_be_eff p_bc) <= r_e)` for cellular codeword `m` under D2D
/// interference at power `p_dd`.
pub fn eavesdropper_safe(cb: &Codebook, stats: &ChannelStats, m: usize, p_dd: f64) -> f64 {
    let p = cb.bc_power(m);
    if p == 0.0 {
        return 1.0;
    }
    let threshold = (cb.equivocation(m).max(0.0) * LN_2).exp_m1() / p;
    cdf_eff_be(stats.mean_be, stats.mean_de, p_dd, threshold)
}

fn bc_spec(cb: &Codebook, stats: &ChannelStats, region: usize, p_dd: f64) -> EffectiveGainSpec {
    let (lo, hi) = cb.bc_region(region);
    EffectiveGainSpec {
        direct_mean: stats.mean_bc,
        interferer_mean: stats.mean_dc,
        interferer_power: p_dd,
        lo,
        hi,
    }
}

fn dd_spec(cb: &Codebook, stats: &ChannelStats, region: usize, p_bc: f64) -> EffectiveGainSpec {
    let (lo, hi) = cb.dd_region(region);
    EffectiveGainSpec {
        direct_mean: stats.mean_dd,
        interferer_mean: stats.mean_bd,
        interferer_power: p_bc,
        lo,
        hi,
    }
}

/// Joint `Pr(h_bc in R_true, reliable and secure with codewords m, n)`.
pub(crate) fn cell_success_mass(
    cb: &Codebook,
    stats: &ChannelStats,
    true_region: usize,
    m: usize,
    n: usize,
    tol: Tolerance,
) -> f64 {
    let p_dd = cb.dd_power(n);
    let reliable = bc_spec(cb, stats, true_region, p_dd).reliable_mass(cb.bc_threshold(m), tol);
    if reliable == 0.0 {
        return 0.0;
    }
    reliable * eavesdropper_safe(cb, stats, m, p_dd)
}

/// Joint `Pr(h_dd in R_true, D2D codeword n decodable under cellular power of m)`.
pub(crate) fn d2d_success_mass(
    cb: &Codebook,
    stats: &ChannelStats,
    m: usize,
    true_region: usize,
    n: usize,
    tol: Tolerance,
) -> f64 {
    dd_spec(cb, stats, true_region, cb.bc_power(m)).reliable_mass(cb.dd_threshold(n), tol)
}

/// Joint `Pr(h_bc in [lo, hi), r_s <= C_S)` for a codeword with power `p` and
/// secrecy rate `rs`, evaluated in the variables `x = 1 + h_bc p`,
/// `y = 1 + h_be p`.
pub fn secrecy_mass(
    stats: &ChannelStats,
    lo: f64,
    hi: f64,
    p: f64,
    rs: f64,
    tol: Tolerance,
) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if rs <= 0.0 {
        return region_mass(stats.mean_bc, lo, hi);
    }
    if p == 0.0 {
        return 0.0;
    }
    let scale = (-rs * LN_2).exp();
    // y <= 2^-rs x needs x > 2^rs.
    let h_start = lo.max((rs * LN_2).exp_m1() / p);
    if h_start >= hi {
        return 0.0;
    }
    let h_end = truncate(stats.mean_bc, h_start, hi);
    let (x_lo, x_hi) = (1.0 + h_start * p, 1.0 + h_end * p);
    let bx = p * stats.mean_bc;
    let by = p * stats.mean_be;
    let outer = integrate(
        |x| {
            let f_x = (-(x - 1.0) / bx).exp() / bx;
            let cdf_y = -(-(scale * x - 1.0) / by).exp_m1();
            cdf_y.max(0.0) * f_x
        },
        x_lo,
        x_hi,
        tol,
    );
    outer.value.max(0.0)
}

/// Conditional success probability of cellular codeword `m` while the D2D
/// pair uses codeword `n`.
pub fn success_prob_cell(
    cb: &Codebook,
    stats: &ChannelStats,
    m: usize,
    n: usize,
    tol: Tolerance,
) -> Result<f64> {
    if m == 0 || m >= cb.m() || n >= cb.n() {
        return domain(format!("success_prob_cell: invalid indices m={m}, n={n}"));
    }
    if cb.equivocation(m) < 0.0 {
        return domain(format!(
            "success_prob_cell: negative equivocation rate at m={m}"
        ));
    }
    let mass = bc_spec(cb, stats, m, 0.0).region_mass();
    if !(mass > 0.0) {
        return domain(format!(
            "success_prob_cell: region {m} has zero probability"
        ));
    }
    Ok((cell_success_mass(cb, stats, m, m, n, tol) / mass).clamp(0.0, 1.0))
}

/// Average performance of a codebook.
///
/// The `*_by_region` vectors hold additive contributions indexed by the
/// (decoded) region, so each sums to its headline value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub avg_power_c: f64,
    pub avg_power_d: f64,
    pub avg_secrecy_rate_c: f64,
    pub avg_rate_d: f64,
    pub outage_codebook: f64,
    pub power_c_by_region: Vec<f64>,
    pub power_d_by_region: Vec<f64>,
    pub secrecy_rate_by_region: Vec<f64>,
    pub rate_d_by_region: Vec<f64>,
    pub outage_by_region: Vec<f64>,
    pub region0: RegionZero,
    /// Feedback crossover probabilities, when evaluated with noise.
    pub q_c: Option<f64>,
    pub q_d: Option<f64>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "avg_power_c,avg_power_d,avg_secrecy_rate_c,avg_rate_d,outage_codebook,qc,qd";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.avg_power_c,
            self.avg_power_d,
            self.avg_secrecy_rate_c,
            self.avg_rate_d,
            self.outage_codebook,
            opt(self.q_c),
            opt(self.q_d)
        )
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn slacks(&self, c: &Constraints) -> Slacks {
        Slacks {
            rate: self.avg_secrecy_rate_c - c.r_s_c_min,
            outage: c.outage_max - self.outage_codebook,
            power_c: c.p_c_max - self.avg_power_c,
            power_d: c.p_d_max - self.avg_power_d,
        }
    }
}

/// Constraint slacks; negative means violated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slacks {
    pub rate: f64,
    pub outage: f64,
    pub power_c: f64,
    pub power_d: f64,
}

impl Slacks {
    pub fn feasible(&self, tol: f64) -> bool {
        self.min() >= -tol
    }

    pub fn min(&self) -> f64 {
        self.rate
            .min(self.outage)
            .min(self.power_c)
            .min(self.power_d)
    }
}

pub fn avg_power_c(cb: &Codebook, stats: &ChannelStats) -> f64 {
    (1..cb.m())
        .map(|m| bc_spec(cb, stats, m, 0.0).region_mass() * cb.bc_power(m))
        .sum()
}

pub fn avg_power_d(cb: &Codebook, stats: &ChannelStats) -> f64 {
    (1..cb.n())
        .map(|n| dd_spec(cb, stats, n, 0.0).region_mass() * cb.dd_power(n))
        .sum()
}

/// Average cellular secrecy rate with the D2D pair absent.
pub fn avg_secrecy_rate_c(cb: &Codebook, stats: &ChannelStats, tol: Tolerance) -> f64 {
    secrecy_rate_terms(cb, stats, tol).iter().sum()
}

fn secrecy_rate_terms(cb: &Codebook, stats: &ChannelStats, tol: Tolerance) -> Vec<f64> {
    let mut out = vec![0.0; cb.m()];
    for (m, slot) in out.iter_mut().enumerate().skip(1) {
        let (lo, hi) = cb.bc_region(m);
        let rs = cb.bc_secrecy_rate(m);
        if rs > 0.0 {
            *slot = secrecy_mass(stats, lo, hi, cb.bc_power(m), rs, tol) * rs;
        }
    }
    out
}

/// Cellular codebook outage with the D2D pair present.
pub fn outage_codebook(cb: &Codebook, stats: &ChannelStats, opts: &EvalOptions) -> f64 {
    outage_terms(cb, stats, opts).iter().sum()
}

fn outage_terms(cb: &Codebook, stats: &ChannelStats, opts: &EvalOptions) -> Vec<f64> {
    let first = opts.region0.first();
    let mut out = vec![0.0; cb.m()];
    for (m, slot) in out.iter_mut().enumerate().skip(1) {
        let g_m = bc_spec(cb, stats, m, 0.0).region_mass();
        let mut acc = 0.0;
        for n in first..cb.n() {
            let g_n = dd_spec(cb, stats, n, 0.0).region_mass();
            let success = cell_success_mass(cb, stats, m, m, n, opts.tol);
            acc += g_n * (g_m - success).max(0.0);
        }
        *slot = acc;
    }
    out
}

/// Average D2D rate with the cellular link present.
pub fn avg_rate_d(cb: &Codebook, stats: &ChannelStats, opts: &EvalOptions) -> f64 {
    rate_d_terms(cb, stats, opts).iter().sum()
}

fn rate_d_terms(cb: &Codebook, stats: &ChannelStats, opts: &EvalOptions) -> Vec<f64> {
    let mut out = vec![0.0; cb.n()];
    for m in opts.region0.first()..cb.m() {
        let g_m = bc_spec(cb, stats, m, 0.0).region_mass();
        for (n, slot) in out.iter_mut().enumerate().skip(1) {
            let r = cb.dd_rate(n);
            if r > 0.0 {
                *slot += g_m * d2d_success_mass(cb, stats, m, n, n, opts.tol) * r;
            }
        }
    }
    out
}

/// Full error-free evaluation.
pub fn evaluate(cb: &Codebook, stats: &ChannelStats, opts: &EvalOptions) -> MetricsReport {
    let power_c_by_region: Vec<f64> = (0..cb.m())
        .map(|m| {
            if m == 0 {
                0.0
            } else {
                bc_spec(cb, stats, m, 0.0).region_mass() * cb.bc_power(m)
            }
        })
        .collect();
    let power_d_by_region: Vec<f64> = (0..cb.n())
        .map(|n| {
            if n == 0 {
                0.0
            } else {
                dd_spec(cb, stats, n, 0.0).region_mass() * cb.dd_power(n)
            }
        })
        .collect();
    let secrecy_rate_by_region = secrecy_rate_terms(cb, stats, opts.tol);
    let rate_d_by_region = rate_d_terms(cb, stats, opts);
    let outage_by_region = outage_terms(cb, stats, opts);
    MetricsReport {
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
        q_c: None,
        q_d: None,
    }
}
