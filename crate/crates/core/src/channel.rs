//! Six-link Rayleigh block-fading model.
//!
//! Every link carries a noise-normalized power gain that is exponentially
//! distributed. Means are either given directly or derived from geometry
//! (path loss plus one log-normal shadowing draw per link).

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// The six links of the scenario, in the canonical order used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Link {
    /// base station to cellular user
    Bc,
    /// base station to D2D receiver
    Bd,
    /// D2D transmitter to D2D receiver
    Dd,
    /// D2D transmitter to cellular user
    Dc,
    /// base station to eavesdropper
    Be,
    /// D2D transmitter to eavesdropper
    De,
}

impl Link {
    pub const ALL: [Link; 6] = [Link::Bc, Link::Bd, Link::Dd, Link::Dc, Link::Be, Link::De];

    pub fn name(self) -> &'static str {
        match self {
            Link::Bc => "bc",
            Link::Bd => "bd",
            Link::Dd => "dd",
            Link::Dc => "dc",
            Link::Be => "be",
            Link::De => "de",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == name)
    }
}

/// Distance-dependent path loss with log-normal shadowing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkGeometry {
    pub d: f64,
    pub d0: f64,
    pub gamma: f64,
    #[serde(default)]
    pub shadow_sigma_db: f64,
}

impl LinkGeometry {
    pub fn new(d: f64, d0: f64, gamma: f64, shadow_sigma_db: f64) -> Result<Self> {
        let geo = Self {
            d,
            d0,
            gamma,
            shadow_sigma_db,
        };
        geo.validate()?;
        Ok(geo)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0 && self.d.is_finite()) || !(self.d0 > 0.0 && self.d0.is_finite()) {
            return domain(format!(
                "distances must be positive (d={}, d0={})",
                self.d, self.d0
            ));
        }
        if !(self.gamma >= 0.0) || !(self.shadow_sigma_db >= 0.0) {
            return domain("path-loss exponent and shadowing sigma must be non-negative");
        }
        Ok(())
    }
}

/// Mean gain `s * (d/d0)^(-gamma)` with `s = 10^(shadowing_db/10)`.
pub fn mean_from_geometry(geo: &LinkGeometry, shadowing_draw_db: f64) -> f64 {
    let s = 10f64.powf(shadowing_draw_db / 10.0);
    s * (geo.d / geo.d0).powf(-geo.gamma)
}

/// Exponential density with the given mean.
pub fn exp_pdf(h: f64, mean: f64) -> Result<f64> {
    if !(mean > 0.0) || !mean.is_finite() {
        return domain(format!("exponential mean must be positive, got {mean}"));
    }
    if h < 0.0 {
        return Ok(0.0);
    }
    Ok((-h / mean).exp() / mean)
}

/// Mean channel power gains of the six links (linear, noise normalized).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelStats {
    pub mean_bc: f64,
    pub mean_bd: f64,
    pub mean_dd: f64,
    pub mean_dc: f64,
    pub mean_be: f64,
    pub mean_de: f64,
}

impl ChannelStats {
    pub fn new(means: [f64; 6]) -> Result<Self> {
        let stats = Self::from_array(means);
        stats.validate()?;
        Ok(stats)
    }

    /// Unit mean on every link.
    pub fn unit() -> Self {
        Self::from_array([1.0; 6])
    }

    fn from_array(m: [f64; 6]) -> Self {
        Self {
            mean_bc: m[0],
            mean_bd: m[1],
            mean_dd: m[2],
            mean_dc: m[3],
            mean_be: m[4],
            mean_de: m[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.mean_bc,
            self.mean_bd,
            self.mean_dd,
            self.mean_dc,
            self.mean_be,
            self.mean_de,
        ]
    }

    pub fn mean(&self, link: Link) -> f64 {
        self.to_array()[link.index()]
    }

    pub fn validate(&self) -> Result<()> {
        for link in Link::ALL {
            let m = self.mean(link);
            if !(m > 0.0 && m.is_finite()) {
                return domain(format!(
                    "mean_{} must be positive and finite, got {m}",
                    link.name()
                ));
            }
        }
        Ok(())
    }

    /// Applies `f` to every mean.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_array(self.to_array().map(f))
    }

    /// Six independent exponential draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelSample {
        let mut draw = |mean: f64| -> f64 {
            let e: f64 = rng.sample(Exp1);
            e * mean
        };
        ChannelSample {
            h_bc: draw(self.mean_bc),
            h_bd: draw(self.mean_bd),
            h_dd: draw(self.mean_dd),
            h_dc: draw(self.mean_dc),
            h_be: draw(self.mean_be),
            h_de: draw(self.mean_de),
        }
    }
}

/// One block of instantaneous gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSample {
    pub h_bc: f64,
    pub h_bd: f64,
    pub h_dd: f64,
    pub h_dc: f64,
    pub h_be: f64,
    pub h_de: f64,
}

/// Deterministic RNG stream `stream` derived from a 64-bit master seed.
///
/// ChaCha is counter based, so streams are independent and cheap to split.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Geometry per link, plus a shared path-loss model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioGeometry {
    pub bc: LinkGeometry,
    pub bd: LinkGeometry,
    pub dd: LinkGeometry,
    pub dc: LinkGeometry,
    pub be: LinkGeometry,
    pub de: LinkGeometry,
}

impl ScenarioGeometry {
    pub fn links(&self) -> [&LinkGeometry; 6] {
        [&self.bc, &self.bd, &self.dd, &self.dc, &self.be, &self.de]
    }

    /// Means with one shadowing draw per link from stream 0 of `seed`.
    pub fn draw_stats(&self, seed: u64) -> Result<ChannelStats> {
        let mut rng = stream_rng(seed, 0);
        let mut means = [0.0; 6];
        for (slot, geo) in means.iter_mut().zip(self.links()) {
            geo.validate()?;
            let z: f64 = rng.sample(StandardNormal);
            *slot = mean_from_geometry(geo, z * geo.shadow_sigma_db);
        }
        ChannelStats::new(means)
    }
}

/// Random node placement in a disc around the base station.
///
/// The cellular user, both D2D terminals and the eavesdropper are dropped
/// uniformly in the disc; the eavesdropper is treated like any other user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub radius: f64,
    pub d0: f64,
    pub gamma: f64,
    pub shadow_sigma_db: f64,
    /// Distances are floored here so no link sits on top of its transmitter.
    #[serde(default = "Placement::default_min_distance")]
    pub min_distance: f64,
}

impl Placement {
    fn default_min_distance() -> f64 {
        1.0
    }

    fn drop_point(&self, rng: &mut dyn RngCore) -> (f64, f64) {
        let r = self.radius * rng.random::<f64>().sqrt();
        let theta = 2.0 * std::f64::consts::PI * rng.random::<f64>();
        (r * theta.cos(), r * theta.sin())
    }

    /// Draws positions and returns the implied per-link geometry.
    pub fn draw_geometry(&self, seed: u64) -> Result<ScenarioGeometry> {
        let mut rng = stream_rng(seed, 1);
        let bs = (0.0, 0.0);
        let cu = self.drop_point(&mut rng);
        let td = self.drop_point(&mut rng);
        let rd = self.drop_point(&mut rng);
        let eve = self.drop_point(&mut rng);
        let link = |a: (f64, f64), b: (f64, f64)| {
            let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2))
                .sqrt()
                .max(self.min_distance);
            LinkGeometry::new(d, self.d0, self.gamma, self.shadow_sigma_db)
        };
        Ok(ScenarioGeometry {
            bc: link(bs, cu)?,
            bd: link(bs, rd)?,
            dd: link(td, rd)?,
            dc: link(td, cu)?,
            be: link(bs, eve)?,
            de: link(td, eve)?,
        })
    }
}
