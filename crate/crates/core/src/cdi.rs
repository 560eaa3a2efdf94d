//! Channel distribution information: perfect, mean-perturbed, or estimated
//! from (possibly contaminated) gain samples with a plain or robust kernel
//! density estimate.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backend::MetricBackend;
use crate::channel::{stream_rng, ChannelStats, Link};
use crate::codebook::{Codebook, RegionZero};
use crate::error::{domain, Error, Result};
use crate::montecarlo::{simulate_metrics_with_law, ChannelLaw, GainLaw, LinkLaw, McConfig};
use crate::noisy::FeedbackNoise;
use crate::registry::Registry;

/// First RNG stream used for sample generation; link `i` uses `base + i`.
const SAMPLE_STREAM_BASE: u64 = 16;

/// `(1 - delta) * mean`.
pub fn perturb_mean(mean: f64, delta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return domain(format!(
            "perturb_mean: delta must lie in [0, 1), got {delta}"
        ));
    }
    Ok((1.0 - delta) * mean)
}

/// Nominal exponential draws plus uniform outliers.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub nominal: Vec<f64>,
    pub outliers: Vec<f64>,
}

impl SampleSet {
    /// `l` exponential draws with the given mean and `kappa` outliers uniform
    /// on `[0, outlier_scale * mean]`.
    pub fn generate(
        mean: f64,
        l: usize,
        kappa: usize,
        outlier_scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if l == 0 {
            return domain("sample set needs at least one nominal sample");
        }
        if !(mean > 0.0) || !(outlier_scale > 0.0) {
            return domain("sample set: mean and outlier scale must be positive");
        }
        let nominal = (0..l)
            .map(|_| {
                let e: f64 = rng.sample(Exp1);
                e * mean
            })
            .collect();
        let outliers = (0..kappa)
            .map(|_| rng.random::<f64>() * outlier_scale * mean)
            .collect();
        Ok(Self { nominal, outliers })
    }

    /// Reads one non-negative number per line; blank lines and `#` comments
    /// are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut nominal = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| {
                Error::Config(format!(
                    "{}:{}: not a number: {line}",
                    path.display(),
                    i + 1
                ))
            })?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{}:{}: gain samples must be finite and non-negative",
                    path.display(),
                    i + 1
                )));
            }
            nominal.push(v);
        }
        if nominal.is_empty() {
            return Err(Error::Config(format!("{}: no samples", path.display())));
        }
        Ok(Self {
            nominal,
            outliers: Vec::new(),
        })
    }

    pub fn all(&self) -> Vec<f64> {
        self.nominal.iter().chain(&self.outliers).copied().collect()
    }
}

/// Median distance from each sample to its nearest neighbour.
pub fn bandwidth_median_nn(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::DegenerateBandwidth(
            "need at least two samples".into(),
        ));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut nn: Vec<f64> = (0..n)
        .map(|i| {
            let left = if i > 0 {
                sorted[i] - sorted[i - 1]
            } else {
                f64::INFINITY
            };
            let right = if i + 1 < n {
                sorted[i + 1] - sorted[i]
            } else {
                f64::INFINITY
            };
            left.min(right)
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        nn[n / 2]
    } else {
        0.5 * (nn[n / 2 - 1] + nn[n / 2])
    };
    if !(median > 0.0) {
        return Err(Error::DegenerateBandwidth(
            "median nearest-neighbour distance is zero".into(),
        ));
    }
    Ok(median)
}

/// Weighted mixture of Gaussian kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDensity {
    pub centers: Vec<f64>,
    pub bandwidth: f64,
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    cumulative: Vec<f64>,
}

#[inline]
fn gaussian(d: f64, bandwidth: f64) -> f64 {
    (-0.5 * (d / bandwidth).powi(2)).exp() / ((2.0 * PI).sqrt() * bandwidth)
}

impl KernelDensity {
    fn new(
        centers: Vec<f64>,
        bandwidth: f64,
        weights: Vec<f64>,
        iterations: usize,
        converged: bool,
    ) -> Self {
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self {
            centers,
            bandwidth,
            weights,
            iterations,
            converged,
            cumulative,
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.centers
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * gaussian(x - c, self.bandwidth))
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.centers
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * 0.5 * libm::erfc(-(x - c) / (self.bandwidth * SQRT_2)))
            .sum()
    }

    /// Density of the mixture truncated to `[0, inf)` and renormalized.
    pub fn truncated_pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            self.pdf(x) / (1.0 - self.cdf(0.0))
        }
    }

    /// Mean of the truncated density.
    pub fn truncated_mean(&self) -> f64 {
        let mass = 1.0 - self.cdf(0.0);
        let s = self.bandwidth;
        self.centers
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| {
                let tail = 0.5 * libm::erfc(-c / (s * SQRT_2));
                w * (c * tail + s * s * gaussian(*c, s))
            })
            .sum::<f64>()
            / mass
    }
}

impl GainLaw for KernelDensity {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let total = *self.cumulative.last().unwrap_or(&1.0);
        loop {
            let u = rng.random::<f64>() * total;
            let i = self
                .cumulative
                .partition_point(|&c| c <= u)
                .min(self.centers.len() - 1);
            let z: f64 = rng.sample(StandardNormal);
            let x = self.centers[i] + self.bandwidth * z;
            if x >= 0.0 {
                return x;
            }
        }
    }
}

pub fn kde_fit(samples: &[f64], bandwidth: f64) -> Result<KernelDensity> {
    if samples.is_empty() {
        return domain("kde_fit: no samples");
    }
    if !(bandwidth > 0.0) {
        return domain(format!(
            "kde_fit: bandwidth must be positive, got {bandwidth}"
        ));
    }
    let l = samples.len();
    Ok(KernelDensity::new(
        samples.to_vec(),
        bandwidth,
        vec![1.0 / l as f64; l],
        0,
        true,
    ))
}

/// Weight function `psi(e) / e` of an M-estimation loss, already calibrated
/// to a set of kernel-space residuals.
pub trait RobustLoss: Send + Sync {
    fn name(&self) -> &'static str;
    fn weight(&self, e: f64) -> f64;
}

/// Calibration input for loss factories.
#[derive(Debug, Clone, PartialEq)]
pub struct LossParams {
    /// Residuals of the unweighted estimate.
    pub residuals: Vec<f64>,
    /// Percentiles (in `[0, 1]`) that place the loss knots.
    pub percentiles: [f64; 3],
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

impl LossParams {
    fn knots(&self) -> Result<[f64; 3]> {
        let [a, b, c] = self.percentiles;
        if !(0.0 <= a && a < b && b < c && c <= 1.0) {
            return domain(format!(
                "loss percentiles must satisfy 0 <= a < b < c <= 1, got {a}, {b}, {c}"
            ));
        }
        if self.residuals.is_empty() {
            return domain("loss calibration needs residuals");
        }
        let mut sorted = self.residuals.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(self.percentiles.map(|q| percentile(&sorted, q)))
    }
}

/// `psi(e) = e`: every sample keeps the same weight.
pub struct Identity;

impl RobustLoss for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn weight(&self, _e: f64) -> f64 {
        1.0
    }
}

pub struct Huber {
    pub a: f64,
}

impl RobustLoss for Huber {
    fn name(&self) -> &'static str {
        "huber"
    }

    fn weight(&self, e: f64) -> f64 {
        if e <= self.a {
            1.0
        } else {
            self.a / e
        }
    }
}

/// Three-part redescending loss.
pub struct Hampel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl RobustLoss for Hampel {
    fn name(&self) -> &'static str {
        "hampel"
    }

    fn weight(&self, e: f64) -> f64 {
        if e < self.a {
            1.0
        } else if e < self.b {
            self.a / e
        } else if e < self.c {
            self.a * (self.c - e) / ((self.c - self.b) * e)
        } else {
            0.0
        }
    }
}

pub fn loss_registry() -> Registry<dyn RobustLoss, LossParams> {
    let mut r: Registry<dyn RobustLoss, LossParams> = Registry::new("robust loss");
    r.register(
        "identity",
        |_| Ok(Box::new(Identity) as Box<dyn RobustLoss>),
    );
    r.register("huber", |p: &LossParams| {
        let [a, _, _] = p.knots()?;
        Ok(Box::new(Huber { a }) as Box<dyn RobustLoss>)
    });
    r.register("hampel", |p: &LossParams| {
        let [a, b, c] = p.knots()?;
        Ok(Box::new(Hampel { a, b, c }) as Box<dyn RobustLoss>)
    });
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IrwlsConfig {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for IrwlsConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

/// Loss selection for the robust estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSpec {
    pub name: String,
    pub percentiles: [f64; 3],
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            name: "hampel".into(),
            percentiles: [0.5, 0.85, 0.95],
        }
    }
}

// Squared RKHS distance of each feature map to the weighted mixture.
fn residuals(gram: &[f64], weights: &[f64]) -> Vec<f64> {
    let l = weights.len();
    let kw: Vec<f64> = (0..l)
        .map(|i| (0..l).map(|j| gram[i * l + j] * weights[j]).sum())
        .collect();
    let wkw: f64 = weights.iter().zip(&kw).map(|(w, k)| w * k).sum();
    (0..l)
        .map(|i| (gram[i * l + i] - 2.0 * kw[i] + wkw).max(0.0).sqrt())
        .collect()
}

/// Robust kernel density estimate by iteratively reweighted least squares.
///
/// Knots of the loss are calibrated once, on the residuals of the plain
/// estimate; each iteration then sets `w_i` proportional to `psi(e_i)/e_i`.
pub fn rkde_fit(
    samples: &[f64],
    bandwidth: f64,
    loss: &LossSpec,
    irwls: &IrwlsConfig,
) -> Result<KernelDensity> {
    let start = kde_fit(samples, bandwidth)?;
    let l = samples.len();
    let gram: Vec<f64> = samples
        .iter()
        .flat_map(|&x| samples.iter().map(move |&y| gaussian(x - y, bandwidth)))
        .collect();
    let mut weights = start.weights;
    let params = LossParams {
        residuals: residuals(&gram, &weights),
        percentiles: loss.percentiles,
    };
    let rho = loss_registry().create(&loss.name, &params)?;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < irwls.max_iters {
        iterations += 1;
        let e = residuals(&gram, &weights);
        let raw: Vec<f64> = e.iter().map(|&e| rho.weight(e)).collect();
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return domain("rkde_fit: every sample was rejected by the loss");
        }
        let next: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let change = next
            .iter()
            .zip(&weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        weights = next;
        if change < irwls.tol {
            converged = true;
            break;
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    debug_assert_eq!(weights.len(), l);
    Ok(KernelDensity::new(
        samples.to_vec(),
        bandwidth,
        weights,
        iterations,
        converged,
    ))
}

/// What an estimator believes about one link.
#[derive(Clone)]
pub enum EstimatedLaw {
    Exponential(f64),
    Density(Arc<KernelDensity>),
}

/// Per-link estimates for the whole scenario.
#[derive(Clone)]
pub struct EstimatedChannel {
    pub links: [EstimatedLaw; 6],
}

impl EstimatedChannel {
    /// Exponential means, when every link is still exponential.
    pub fn exponential_stats(&self) -> Option<ChannelStats> {
        let mut means = [0.0; 6];
        for (slot, law) in means.iter_mut().zip(&self.links) {
            match law {
                EstimatedLaw::Exponential(m) => *slot = *m,
                EstimatedLaw::Density(_) => return None,
            }
        }
        ChannelStats::new(means).ok()
    }

    pub fn law(&self) -> ChannelLaw {
        let mut law = ChannelLaw::exponential(&ChannelStats::unit());
        for (link, est) in Link::ALL.iter().zip(&self.links) {
            let l = match est {
                EstimatedLaw::Exponential(m) => LinkLaw::Exponential(*m),
                EstimatedLaw::Density(d) => LinkLaw::Custom(d.clone() as Arc<dyn GainLaw>),
            };
            law = law.with_link(*link, l);
        }
        law
    }
}

pub trait CdiEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    /// Estimate of a link whose true gain is exponential with `true_mean`.
    fn estimate_link(&self, true_mean: f64, rng: &mut ChaCha8Rng) -> Result<EstimatedLaw>;
    /// Estimate from externally supplied gain samples.
    fn fit_samples(&self, samples: &[f64]) -> Result<EstimatedLaw>;
}

/// Estimates all six links; link `i` draws from its own stream of `seed`.
pub fn estimate_channel(
    estimator: &dyn CdiEstimator,
    stats: &ChannelStats,
    seed: u64,
) -> Result<EstimatedChannel> {
    estimate_channel_with(estimator, stats, seed, &BTreeMap::new())
}

/// Like [`estimate_channel`], but links present in `samples` are fitted to
/// the given data instead of generated draws.
pub fn estimate_channel_with(
    estimator: &dyn CdiEstimator,
    stats: &ChannelStats,
    seed: u64,
    samples: &BTreeMap<Link, Vec<f64>>,
) -> Result<EstimatedChannel> {
    let mut out = Vec::with_capacity(6);
    for link in Link::ALL {
        let law = match samples.get(&link) {
            Some(xs) => estimator.fit_samples(xs)?,
            None => {
                let mut rng = stream_rng(seed, SAMPLE_STREAM_BASE + link.index() as u64);
                estimator.estimate_link(stats.mean(link), &mut rng)?
            }
        };
        out.push(law);
    }
    let links: [EstimatedLaw; 6] = out.try_into().ok().expect("six links");
    Ok(EstimatedChannel { links })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdiParams {
    pub delta: f64,
    pub l: usize,
    pub kappa: usize,
    pub outlier_scale: f64,
    pub loss: LossSpec,
    pub irwls: IrwlsConfig,
}

impl Default for CdiParams {
    fn default() -> Self {
        Self {
            delta: 0.2,
            l: 200,
            kappa: 10,
            outlier_scale: 10.0,
            loss: LossSpec::default(),
            irwls: IrwlsConfig::default(),
        }
    }
}

pub struct Perfect;

impl CdiEstimator for Perfect {
    fn name(&self) -> &'static str {
        "perfect"
    }

    fn estimate_link(&self, true_mean: f64, _rng: &mut ChaCha8Rng) -> Result<EstimatedLaw> {
        Ok(EstimatedLaw::Exponential(true_mean))
    }

    fn fit_samples(&self, _samples: &[f64]) -> Result<EstimatedLaw> {
        Err(Error::Config(
            "cdi mode `perfect` does not take sample files".into(),
        ))
    }
}

pub struct Parametric {
    pub delta: f64,
}

impl CdiEstimator for Parametric {
    fn name(&self) -> &'static str {
        "parametric"
    }

    fn estimate_link(&self, true_mean: f64, _rng: &mut ChaCha8Rng) -> Result<EstimatedLaw> {
        Ok(EstimatedLaw::Exponential(perturb_mean(
            true_mean, self.delta,
        )?))
    }

    /// Exponential fit by the sample mean.
    fn fit_samples(&self, samples: &[f64]) -> Result<EstimatedLaw> {
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        if !(mean > 0.0) {
            return domain("parametric fit: sample mean must be positive");
        }
        Ok(EstimatedLaw::Exponential(mean))
    }
}

pub struct Kde {
    pub params: CdiParams,
}

impl CdiEstimator for Kde {
    fn name(&self) -> &'static str {
        "kde"
    }

    fn estimate_link(&self, true_mean: f64, rng: &mut ChaCha8Rng) -> Result<EstimatedLaw> {
        let p = &self.params;
        let set = SampleSet::generate(true_mean, p.l, p.kappa, p.outlier_scale, rng)?;
        self.fit_samples(&set.all())
    }

    fn fit_samples(&self, xs: &[f64]) -> Result<EstimatedLaw> {
        let density = kde_fit(xs, bandwidth_median_nn(xs)?)?;
        Ok(EstimatedLaw::Density(Arc::new(density)))
    }
}

pub struct Rkde {
    pub params: CdiParams,
}

impl CdiEstimator for Rkde {
    fn name(&self) -> &'static str {
        "rkde"
    }

    fn estimate_link(&self, true_mean: f64, rng: &mut ChaCha8Rng) -> Result<EstimatedLaw> {
        let p = &self.params;
        let set = SampleSet::generate(true_mean, p.l, p.kappa, p.outlier_scale, rng)?;
        self.fit_samples(&set.all())
    }

    fn fit_samples(&self, xs: &[f64]) -> Result<EstimatedLaw> {
        let p = &self.params;
        let density = rkde_fit(xs, bandwidth_median_nn(xs)?, &p.loss, &p.irwls)?;
        Ok(EstimatedLaw::Density(Arc::new(density)))
    }
}

pub fn estimator_registry() -> Registry<dyn CdiEstimator, CdiParams> {
    let mut r: Registry<dyn CdiEstimator, CdiParams> = Registry::new("CDI estimator");
    r.register(
        "perfect",
        |_| Ok(Box::new(Perfect) as Box<dyn CdiEstimator>),
    );
    r.register("parametric", |p: &CdiParams| {
        perturb_mean(1.0, p.delta)?;
        Ok(Box::new(Parametric { delta: p.delta }) as Box<dyn CdiEstimator>)
    });
    r.register("kde", |p: &CdiParams| {
        Ok(Box::new(Kde { params: p.clone() }) as Box<dyn CdiEstimator>)
    });
    r.register("rkde", |p: &CdiParams| {
        loss_registry().create(
            &p.loss.name,
            &LossParams {
                residuals: vec![1.0],
                percentiles: p.loss.percentiles,
            },
        )?;
        Ok(Box::new(Rkde { params: p.clone() }) as Box<dyn CdiEstimator>)
    });
    r
}

/// D2D average rate of `cb` under an estimated channel. Exponential
/// estimates go through `backend`; densities are simulated.
pub fn rate_under(
    cb: &Codebook,
    estimate: &EstimatedChannel,
    backend: &dyn MetricBackend,
    noise: Option<&FeedbackNoise>,
    region0: RegionZero,
    mc: &McConfig,
) -> Result<f64> {
    match estimate.exponential_stats() {
        Some(stats) => Ok(backend.evaluate(cb, &stats)?.avg_rate_d),
        None => Ok(
            simulate_metrics_with_law(cb, &estimate.law(), noise, region0, mc)?
                .avg_rate_d
                .value,
        ),
    }
}

/// `|r_true - r_est| / r_true` for the same codebook.
pub fn rate_gap(
    cb: &Codebook,
    true_stats: &ChannelStats,
    estimate: &EstimatedChannel,
    backend: &dyn MetricBackend,
    noise: Option<&FeedbackNoise>,
    region0: RegionZero,
    mc: &McConfig,
) -> Result<f64> {
    let r_true = backend.evaluate(cb, true_stats)?.avg_rate_d;
    if !(r_true > 0.0) {
        return domain("rate_gap: true D2D rate is zero");
    }
    let r_est = rate_under(cb, estimate, backend, noise, region0, mc)?;
    Ok((r_true - r_est).abs() / r_true)
}
