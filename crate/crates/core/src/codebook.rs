//! Quantization boundaries and per-region transmission codewords.
//!
//! Regions are 0-based. With boundaries `b[0] < b[1] < ... < b[M-2]` the
//! cellular gain axis splits into `M` regions, region `m` being
//! `[b[m-1], b[m])` with `b[-1] = 0` and `b[M-1] = inf`. Region 0 is silent:
//! it carries no codeword, so `bc_words[k]` belongs to region `k + 1`. The
//! D2D axis follows the same layout.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellularCodeword {
    /// Transmit power (linear).
    pub p: f64,
    /// Secrecy rate in bits/s/Hz.
    pub rs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct D2DCodeword {
    pub p: f64,
}

/// How the uncoded lowest region enters the averages.
///
/// `Silent` drops every sample whose true or decoded index is 0 on either
/// link from all averages. `Counted` keeps region 0 as a real zero-power
/// state: a silent D2D pair still counts in the cellular outage, and a
/// silent base station still counts in the D2D rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionZero {
    #[default]
    Silent,
    Counted,
}

impl RegionZero {
    /// First index that participates in the sums.
    pub fn first(self) -> usize {
        match self {
            RegionZero::Silent => 1,
            RegionZero::Counted => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionZero::Silent => "silent",
            RegionZero::Counted => "counted",
        }
    }
}

/// Index of the region containing `h`, with left-closed regions.
pub fn region_index(boundaries: &[f64], h: f64) -> Result<usize> {
    if h.is_nan() {
        return domain("region_index: NaN gain");
    }
    if h < 0.0 {
        return domain(format!("region_index: negative gain {h}"));
    }
    Ok(boundaries.partition_point(|&b| b <= h))
}

/// `Pr(lo <= h < hi)` for an exponential gain with the given mean.
pub fn region_probability(mean: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(mean > 0.0) {
        return domain(format!(
            "region_probability: mean must be positive, got {mean}"
        ));
    }
    if !(lo >= 0.0) || !(lo < hi) {
        return domain(format!(
            "region_probability: need 0 <= lo < hi, got [{lo}, {hi})"
        ));
    }
    Ok(region_mass(mean, lo, hi))
}

// Unchecked variant; expm1 keeps narrow regions accurate.
#[inline]
pub(crate) fn region_mass(mean: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let head = (-lo / mean).exp();
    if hi.is_infinite() {
        head
    } else {
        -head * (-(hi - lo) / mean).exp_m1()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Codebook {
    pub bc_boundaries: Vec<f64>,
    pub dd_boundaries: Vec<f64>,
    pub bc_words: Vec<CellularCodeword>,
    pub dd_words: Vec<D2DCodeword>,
}

impl Codebook {
    /// Builds a codebook and rejects it if any invariant fails.
    pub fn new(
        bc_boundaries: Vec<f64>,
        dd_boundaries: Vec<f64>,
        bc_words: Vec<CellularCodeword>,
        dd_words: Vec<D2DCodeword>,
    ) -> Result<Self> {
        let cb = Self {
            bc_boundaries,
            dd_boundaries,
            bc_words,
            dd_words,
        };
        cb.ensure_valid()?;
        Ok(cb)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = validate(self, f64::INFINITY);
        if violations.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidCodebook(msgs.join("; ")))
        }
    }

    /// Number of cellular regions `M`.
    pub fn m(&self) -> usize {
        self.bc_boundaries.len() + 1
    }

    /// Number of D2D regions `N`.
    pub fn n(&self) -> usize {
        self.dd_boundaries.len() + 1
    }

    pub fn bc_region(&self, m: usize) -> (f64, f64) {
        bounds(&self.bc_boundaries, m)
    }

    pub fn dd_region(&self, n: usize) -> (f64, f64) {
        bounds(&self.dd_boundaries, n)
    }

    /// Lower boundary of cellular region `m` (0 for region 0).
    pub fn bc_threshold(&self, m: usize) -> f64 {
        self.bc_region(m).0
    }

    pub fn dd_threshold(&self, n: usize) -> f64 {
        self.dd_region(n).0
    }

    pub fn bc_power(&self, m: usize) -> f64 {
        if m == 0 {
            0.0
        } else {
            self.bc_words[m - 1].p
        }
    }

    pub fn bc_secrecy_rate(&self, m: usize) -> f64 {
        if m == 0 {
            0.0
        } else {
            self.bc_words[m - 1].rs
        }
    }

    /// Transmission rate `log2(1 + lower_boundary * p)` of cellular codeword `m`.
    pub fn bc_rate(&self, m: usize) -> f64 {
        (self.bc_threshold(m) * self.bc_power(m)).ln_1p() / std::f64::consts::LN_2
    }

    /// Equivocation rate left to the eavesdropper, `r_bc - r_s`.
    pub fn equivocation(&self, m: usize) -> f64 {
        self.bc_rate(m) - self.bc_secrecy_rate(m)
    }

    pub fn dd_power(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.dd_words[n - 1].p
        }
    }

    pub fn dd_rate(&self, n: usize) -> f64 {
        (self.dd_threshold(n) * self.dd_power(n)).ln_1p() / std::f64::consts::LN_2
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("codebook serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cb: Codebook =
            toml::from_str(text).map_err(|e| Error::Config(format!("codebook: {e}")))?;
        cb.ensure_valid()?;
        Ok(cb)
    }
}

fn bounds(boundaries: &[f64], k: usize) -> (f64, f64) {
    let lo = if k == 0 { 0.0 } else { boundaries[k - 1] };
    let hi = boundaries.get(k).copied().unwrap_or(f64::INFINITY);
    (lo, hi)
}

/// Design constraints of the optimization problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    /// Minimum average cellular secrecy rate (bits/s/Hz).
    pub r_s_c_min: f64,
    /// Maximum cellular codebook outage probability.
    pub outage_max: f64,
    /// Average power budgets (linear).
    pub p_c_max: f64,
    pub p_d_max: f64,
}

impl Constraints {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.outage_max) {
            return domain(format!(
                "outage_max must lie in [0, 1], got {}",
                self.outage_max
            ));
        }
        if !(self.r_s_c_min >= 0.0) || !(self.p_c_max >= 0.0) || !(self.p_d_max >= 0.0) {
            return domain("rate and power limits must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NonPositiveBoundary,
    NonIncreasingBoundary,
    NonFiniteBoundary,
    WordCount,
    NegativePower,
    NegativeSecrecyRate,
    NegativeEquivocation,
    RateGuard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Cellular,
    D2d,
}

/// One failed invariant, with the offending axis and index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub axis: Axis,
    pub index: usize,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let axis = match self.axis {
            Axis::Cellular => "bc",
            Axis::D2d => "dd",
        };
        let what = match self.kind {
            ViolationKind::NonPositiveBoundary => "non-positive boundary at index",
            ViolationKind::NonIncreasingBoundary => "non-increasing boundary at index",
            ViolationKind::NonFiniteBoundary => "non-finite boundary at index",
            ViolationKind::WordCount => "codeword count mismatch, expected",
            ViolationKind::NegativePower => "negative power at m",
            ViolationKind::NegativeSecrecyRate => "negative secrecy rate at m",
            ViolationKind::NegativeEquivocation => "negative equivocation rate at m",
            ViolationKind::RateGuard => "secrecy rate above guard at m",
        };
        write!(f, "{axis}: {what} {}", self.index)
    }
}

/// Checks every codebook invariant and lists what fails.
///
/// Word indices in the report are region indices (`m = 1..M-1`).
pub fn validate(cb: &Codebook, max_rate_guard: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    check_boundaries(&cb.bc_boundaries, Axis::Cellular, &mut out);
    check_boundaries(&cb.dd_boundaries, Axis::D2d, &mut out);
    if cb.bc_words.len() != cb.bc_boundaries.len() {
        out.push(Violation {
            kind: ViolationKind::WordCount,
            axis: Axis::Cellular,
            index: cb.bc_boundaries.len(),
        });
    }
    if cb.dd_words.len() != cb.dd_boundaries.len() {
        out.push(Violation {
            kind: ViolationKind::WordCount,
            axis: Axis::D2d,
            index: cb.dd_boundaries.len(),
        });
    }
    if !out.is_empty() {
        return out;
    }
    let mut push = |kind, axis, index| out.push(Violation { kind, axis, index });
    for m in 1..cb.m() {
        let w = cb.bc_words[m - 1];
        if !(w.p >= 0.0) || !w.p.is_finite() {
            push(ViolationKind::NegativePower, Axis::Cellular, m);
            continue;
        }
        if !(w.rs >= 0.0) {
            push(ViolationKind::NegativeSecrecyRate, Axis::Cellular, m);
        } else if w.rs > max_rate_guard {
            push(ViolationKind::RateGuard, Axis::Cellular, m);
        }
        if cb.equivocation(m) < 0.0 {
            push(ViolationKind::NegativeEquivocation, Axis::Cellular, m);
        }
    }
    for n in 1..cb.n() {
        let w = cb.dd_words[n - 1];
        if !(w.p >= 0.0) || !w.p.is_finite() {
            push(ViolationKind::NegativePower, Axis::D2d, n);
        }
    }
    out
}

fn check_boundaries(b: &[f64], axis: Axis, out: &mut Vec<Violation>) {
    for (i, &x) in b.iter().enumerate() {
        let kind = if !x.is_finite() {
            Some(ViolationKind::NonFiniteBoundary)
        } else if !(x > 0.0) {
            Some(ViolationKind::NonPositiveBoundary)
        } else if i > 0 && !(x > b[i - 1]) {
            Some(ViolationKind::NonIncreasingBoundary)
        } else {
            None
        };
        if let Some(kind) = kind {
            out.push(Violation {
                kind,
                axis,
                index: i,
            });
        }
    }
}
