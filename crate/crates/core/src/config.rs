//! Experiment configuration file.
//!
//! Sections: `scenario`, `constraints`, `codebook_dims`, `pso`, `mc`,
//! `noise`, `cdi`, `sweep`. Every section is optional and falls back to the
//! default operating point. Powers may be given linearly or in dB with a
//! `_db` suffix. A `[run]` table, as written into run manifests, is accepted
//! and ignored so manifests can be fed back in.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{self, BackendParams, MetricBackend};
use crate::cdi::{self, CdiEstimator, CdiParams, IrwlsConfig, LossSpec, SampleSet};
use crate::channel::{ChannelStats, Link, Placement, ScenarioGeometry};
use crate::codebook::{Constraints, RegionZero};
use crate::error::{Error, Result};
use crate::metrics::EvalOptions;
use crate::montecarlo::McConfig;
use crate::noisy::FeedbackNoise;
use crate::pso::PsoConfig;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Means {
    pub bc: f64,
    pub bd: f64,
    pub dd: f64,
    pub dc: f64,
    pub be: f64,
    pub de: f64,
}

impl Default for Means {
    fn default() -> Self {
        Self {
            bc: 1.0,
            bd: 0.2,
            dd: 2.0,
            dc: 0.2,
            be: 0.05,
            de: 0.5,
        }
    }
}

impl From<ChannelStats> for Means {
    fn from(s: ChannelStats) -> Self {
        Self {
            bc: s.mean_bc,
            bd: s.mean_bd,
            dd: s.mean_dd,
            dc: s.mean_dc,
            be: s.mean_be,
            de: s.mean_de,
        }
    }
}

/// Exactly one of `means`, `geometry` or `placement`; `means` by default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub means: Option<Means>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<ScenarioGeometry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<Placement>,
    /// Seed for shadowing and placement draws.
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn stats(&self) -> Result<ChannelStats> {
        let given = [
            self.means.is_some(),
            self.geometry.is_some(),
            self.placement.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        if given > 1 {
            return Err(Error::Config(
                "scenario: give only one of `means`, `geometry`, `placement`".into(),
            ));
        }
        if let Some(g) = &self.geometry {
            return g.draw_stats(self.seed);
        }
        if let Some(p) = &self.placement {
            return p.draw_geometry(self.seed)?.draw_stats(self.seed);
        }
        let m = self.means.unwrap_or_default();
        ChannelStats::new([m.bc, m.bd, m.dd, m.dc, m.be, m.de])
            .map_err(|e| Error::Config(format!("scenario.means: {e}")))
    }
}

/// Constraint limits; powers linear or in dB but not both.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_s_c_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outage_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_c_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_c_max_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_d_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_d_max_db: Option<f64>,
}

fn power(name: &str, linear: Option<f64>, db: Option<f64>, default_db: f64) -> Result<f64> {
    match (linear, db) {
        (Some(_), Some(_)) => Err(Error::Config(format!(
            "constraints: give `{name}` or `{name}_db`, not both"
        ))),
        (Some(x), None) => Ok(x),
        (None, Some(d)) => Ok(db_to_linear(d)),
        (None, None) => Ok(db_to_linear(default_db)),
    }
}

impl ConstraintsConfig {
    pub fn resolve(&self) -> Result<Constraints> {
        let c = Constraints {
            r_s_c_min: self.r_s_c_min.unwrap_or(0.1),
            outage_max: self.outage_max.unwrap_or(0.1),
            p_c_max: power("p_c_max", self.p_c_max, self.p_c_max_db, 5.0)?,
            p_d_max: power("p_d_max", self.p_d_max, self.p_d_max_db, 10.0)?,
        };
        c.validate()
            .map_err(|e| Error::Config(format!("constraints: {e}")))?;
        Ok(c)
    }

    fn from_resolved(c: &Constraints) -> Self {
        Self {
            r_s_c_min: Some(c.r_s_c_min),
            outage_max: Some(c.outage_max),
            p_c_max: Some(c.p_c_max),
            p_d_max: Some(c.p_d_max),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodebookDims {
    pub m: usize,
    pub n: usize,
    pub region0: RegionZero,
}

impl Default for CodebookDims {
    fn default() -> Self {
        Self {
            m: 4,
            n: 4,
            region0: RegionZero::Counted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    #[default]
    ErrorFree,
    Noisy,
}

impl NoiseMode {
    pub fn backend_name(self) -> &'static str {
        match self {
            NoiseMode::ErrorFree => "error-free",
            NoiseMode::Noisy => "noisy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub mode: NoiseMode,
    pub q_c: f64,
    pub q_d: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mode: NoiseMode::ErrorFree,
            q_c: 0.25,
            q_d: 0.25,
        }
    }
}

impl NoiseConfig {
    pub fn feedback(&self) -> Option<FeedbackNoise> {
        match self.mode {
            NoiseMode::ErrorFree => None,
            NoiseMode::Noisy => Some(FeedbackNoise {
                q_c: self.q_c,
                q_d: self.q_d,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CdiConfig {
    /// Registered estimator name: perfect, parametric, kde or rkde.
    pub mode: String,
    pub delta: f64,
    #[serde(rename = "L", alias = "l")]
    pub l: usize,
    pub kappa: usize,
    /// Outliers are uniform on `[0, outlier_scale * mean]`.
    pub outlier_scale: f64,
    pub loss: LossSpec,
    pub irwls: IrwlsConfig,
    /// Optional one-column sample files per link (`bc`, `dd`, ...); they
    /// replace the generated nominal samples of that link.
    pub samples: BTreeMap<String, PathBuf>,
}

impl Default for CdiConfig {
    fn default() -> Self {
        let p = CdiParams::default();
        Self {
            mode: "perfect".into(),
            delta: p.delta,
            l: p.l,
            kappa: p.kappa,
            outlier_scale: p.outlier_scale,
            loss: p.loss,
            irwls: p.irwls,
            samples: BTreeMap::new(),
        }
    }
}

impl CdiConfig {
    pub fn params(&self) -> CdiParams {
        CdiParams {
            delta: self.delta,
            l: self.l,
            kappa: self.kappa,
            outlier_scale: self.outlier_scale,
            loss: self.loss.clone(),
            irwls: self.irwls.clone(),
        }
    }

    pub fn estimator(&self) -> Result<Box<dyn CdiEstimator>> {
        for key in self.samples.keys() {
            if Link::from_name(key).is_none() {
                return Err(Error::Config(format!("cdi.samples: unknown link `{key}`")));
            }
        }
        cdi::estimator_registry().create(&self.mode, &self.params())
    }

    /// Loads the configured sample files; relative paths resolve against
    /// `base`.
    pub fn load_samples(&self, base: &Path) -> Result<BTreeMap<Link, Vec<f64>>> {
        let mut out = BTreeMap::new();
        for (key, path) in &self.samples {
            let link = Link::from_name(key)
                .ok_or_else(|| Error::Config(format!("cdi.samples: unknown link `{key}`")))?;
            let path = if path.is_relative() {
                base.join(path)
            } else {
                path.clone()
            };
            out.insert(link, SampleSet::load(&path)?.nominal);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "p_d_max")]
    PdMax,
    #[serde(rename = "p_d_max_db")]
    PdMaxDb,
    #[serde(rename = "outage_max")]
    OutageMax,
    #[serde(rename = "r_s_c_min")]
    RsMin,
    #[serde(rename = "q")]
    Q,
    #[serde(rename = "bits")]
    Bits,
    #[serde(rename = "L", alias = "l")]
    L,
    #[serde(rename = "kappa")]
    Kappa,
    #[serde(rename = "delta")]
    Delta,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::PdMax => "p_d_max",
            SweepAxis::PdMaxDb => "p_d_max_db",
            SweepAxis::OutageMax => "outage_max",
            SweepAxis::RsMin => "r_s_c_min",
            SweepAxis::Q => "q",
            SweepAxis::Bits => "bits",
            SweepAxis::L => "L",
            SweepAxis::Kappa => "kappa",
            SweepAxis::Delta => "delta",
        }
    }

    /// Whether the axis only changes how CDI is estimated, not the design.
    pub fn is_cdi(self) -> bool {
        matches!(self, SweepAxis::L | SweepAxis::Kappa | SweepAxis::Delta)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<SweepAxis>,
    #[serde(default)]
    pub values: Vec<f64>,
    /// Seeds of the optimizer (and of the Monte Carlo and CDI draws).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
}

/// Provenance block written into manifests.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunInfo {
    pub version: String,
    pub input_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub constraints: ConstraintsConfig,
    #[serde(default)]
    pub codebook_dims: CodebookDims,
    #[serde(default)]
    pub pso: PsoConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub cdi: CdiConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunInfo>,
}

impl Config {
    /// Parses and validates; errors carry the offending line and key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let wrap =
            |section: &str, r: Result<()>| r.map_err(|e| Error::Config(format!("{section}: {e}")));
        self.scenario.stats()?;
        self.constraints.resolve()?;
        let d = &self.codebook_dims;
        if d.m < 2 || d.n < 2 {
            return Err(Error::Config(
                "codebook_dims: m and n must be at least 2".into(),
            ));
        }
        wrap("pso", self.pso.validate())?;
        wrap("mc", self.mc.validate())?;
        if let Some(noise) = self.noise.feedback() {
            wrap("noise", noise.validate())?;
            crate::noisy::label_bits(d.m)
                .and_then(|_| crate::noisy::label_bits(d.n))
                .map_err(|e| Error::Config(format!("codebook_dims: {e}")))?;
        }
        self.cdi
            .estimator()
            .map_err(|e| Error::Config(format!("cdi: {e}")))?;
        let s = &self.sweep;
        match s.axis {
            None if !s.values.is_empty() => {
                return Err(Error::Config("sweep: `values` given without `axis`".into()))
            }
            Some(axis) => {
                if s.values.is_empty() {
                    return Err(Error::Config("sweep: `values` must not be empty".into()));
                }
                for &v in &s.values {
                    let mut probe = self.clone();
                    probe.sweep = SweepConfig::default();
                    probe.apply(axis, v)?;
                    probe.validate().map_err(|e| {
                        Error::Config(format!("sweep: value {v} for `{}`: {e}", axis.name()))
                    })?;
                }
            }
            None => {}
        }
        Ok(())
    }

    /// Sets one sweep coordinate.
    pub fn apply(&mut self, axis: SweepAxis, value: f64) -> Result<()> {
        let whole = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < 64.0 * 1024.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!(
                    "sweep: `{}` needs whole numbers, got {v}",
                    axis.name()
                )))
            }
        };
        let c = &mut self.constraints;
        match axis {
            SweepAxis::PdMax => {
                c.p_d_max = Some(value);
                c.p_d_max_db = None;
            }
            SweepAxis::PdMaxDb => {
                c.p_d_max = None;
                c.p_d_max_db = Some(value);
            }
            SweepAxis::OutageMax => c.outage_max = Some(value),
            SweepAxis::RsMin => c.r_s_c_min = Some(value),
            SweepAxis::Q => {
                self.noise.q_c = value;
                self.noise.q_d = value;
            }
            SweepAxis::Bits => {
                let b = whole(value)?;
                if !(1..=10).contains(&b) {
                    return Err(Error::Config(format!(
                        "sweep: bits must lie in 1..=10, got {b}"
                    )));
                }
                self.codebook_dims.m = 1 << b;
                self.codebook_dims.n = 1 << b;
            }
            SweepAxis::L => self.cdi.l = whole(value)?,
            SweepAxis::Kappa => self.cdi.kappa = whole(value)?,
            SweepAxis::Delta => self.cdi.delta = value,
        }
        Ok(())
    }

    /// Copy with constraints in linear form and no sweep or run block.
    pub fn resolved(&self) -> Result<Self> {
        let mut out = self.clone();
        out.constraints = ConstraintsConfig::from_resolved(&self.constraints.resolve()?);
        out.run = None;
        Ok(out)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            region0: self.codebook_dims.region0,
            ..EvalOptions::default()
        }
    }

    pub fn backend(&self) -> Result<Box<dyn MetricBackend>> {
        let params = BackendParams {
            opts: self.eval_options(),
            noise: self.noise.feedback().unwrap_or(FeedbackNoise::noiseless()),
        };
        backend::registry().create(self.noise.mode.backend_name(), &params)
    }
}
