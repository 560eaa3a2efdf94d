//! Experiment orchestration: single designs, parameter sweeps, codebook
//! verification and stand-alone Monte Carlo runs, with their file outputs.
//!
//! A run writes into its output directory:
//! - `results.csv`: one row per (axis value, seed) in axis-then-seed order,
//!   columns [`RESULTS_HEADER`];
//! - `trace_<k>.csv`: `iter,gbest_cost` for row `k`;
//! - `codebook_<k>.toml`: the codebook of row `k`;
//! - `timing.csv`: wall-clock seconds per row (kept apart so `results.csv`
//!   is reproducible byte for byte);
//! - `manifest.toml`: the fully resolved configuration plus a content hash
//!   of the inputs. Feeding it back to `sweep` reproduces `results.csv`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::cdi;
use crate::channel::{ChannelStats, Link};
use crate::codebook::Codebook;
use crate::config::{Config, RunInfo, SweepAxis};
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, Slacks};
use crate::montecarlo::{simulate_metrics, McReport};
use crate::pso::{self, Layout, PsoResult, FEASIBILITY_TOL};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "D2DSEC_WORKERS";

/// Column order of `results.csv`.
pub const RESULTS_HEADER: &str = "point,axis,value,seed,m,n,n_pop,noise,q_c,q_d,cdi,\
avg_rate_d,avg_power_c,avg_power_d,avg_secrecy_rate_c,outage_codebook,\
slack_rate,slack_outage,slack_power_c,slack_power_d,feasible,\
gbest_cost,mc_avg_rate_d,mc_avg_rate_d_se,mc_agree,rate_gap";

/// Absolute allowance added to the standard-error band when comparing
/// analytic values with simulation.
pub const AGREEMENT_FLOOR: f64 = 1e-6;

/// One point of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub index: usize,
    pub value: Option<f64>,
    pub seed: u64,
    pub config: Config,
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: usize,
    pub axis: Option<SweepAxis>,
    pub value: Option<f64>,
    pub seed: u64,
    pub m: usize,
    pub n: usize,
    pub n_pop: usize,
    pub noise: &'static str,
    pub q_c: f64,
    pub q_d: f64,
    pub cdi: String,
    pub report: MetricsReport,
    pub slacks: Slacks,
    pub feasible: bool,
    pub gbest_cost: f64,
    pub mc: McReport,
    /// Every simulated metric agrees with its analytic value.
    pub mc_agree: bool,
    pub rate_gap: f64,
    pub design_seconds: f64,
    pub verify_seconds: f64,
}

impl SweepRow {
    pub fn csv_row(&self) -> String {
        let s = &self.slacks;
        let r = &self.report;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.point,
            self.axis.map(|a| a.name()).unwrap_or(""),
            self.value.map(|v| v.to_string()).unwrap_or_default(),
            self.seed,
            self.m,
            self.n,
            self.n_pop,
            self.noise,
            self.q_c,
            self.q_d,
            self.cdi,
            r.avg_rate_d,
            r.avg_power_c,
            r.avg_power_d,
            r.avg_secrecy_rate_c,
            r.outage_codebook,
            s.rate,
            s.outage,
            s.power_c,
            s.power_d,
            self.feasible,
            self.gbest_cost,
            self.mc.avg_rate_d.value,
            self.mc.avg_rate_d.standard_error,
            self.mc_agree,
            self.rate_gap,
        )
    }
}

/// Rows plus the per-row design artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<SweepRow>,
    pub codebooks: Vec<Codebook>,
    pub traces: Vec<Vec<f64>>,
    pub manifest: Config,
}

impl RunOutput {
    pub fn results_csv(&self) -> String {
        let mut out = String::from(RESULTS_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("point,design_seconds,verify_seconds\n");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.3},{:.3}",
                row.point, row.design_seconds, row.verify_seconds
            );
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("results.csv"), self.results_csv())?;
        fs::write(dir.join("timing.csv"), self.timing_csv())?;
        for (k, (cb, trace)) in self.codebooks.iter().zip(&self.traces).enumerate() {
            fs::write(dir.join(format!("codebook_{k}.toml")), cb.to_toml())?;
            fs::write(dir.join(format!("trace_{k}.csv")), trace_csv(trace))?;
        }
        fs::write(dir.join("manifest.toml"), self.manifest.to_toml())?;
        Ok(())
    }
}

pub fn trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("iter,gbest_cost\n");
    for (i, c) in trace.iter().enumerate() {
        let _ = writeln!(out, "{i},{c}");
    }
    out
}

/// Hex SHA-256 of a git-style blob header followed by `bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Resolves seeds, constraint units and sample paths so the result is a
/// self-contained description of the run.
pub fn resolve(cfg: &Config, base_dir: &Path) -> Result<Config> {
    let mut out = cfg.resolved()?;
    if out.sweep.seeds.is_empty() {
        out.sweep.seeds = vec![out.pso.seed];
    }
    for path in out.cdi.samples.values_mut() {
        if path.is_relative() {
            *path = base_dir.join(&*path);
        }
        *path = path
            .canonicalize()
            .map_err(|e| Error::Config(format!("cdi.samples: {}: {e}", path.display())))?;
    }
    out.validate()?;
    Ok(out)
}

/// Expands a resolved configuration into its points, axis value major.
pub fn points(cfg: &Config) -> Result<Vec<Point>> {
    let values: Vec<Option<f64>> = match cfg.sweep.axis {
        Some(_) => cfg.sweep.values.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut out = Vec::new();
    for value in values {
        for &seed in &cfg.sweep.seeds {
            let mut c = cfg.clone();
            if let (Some(axis), Some(v)) = (cfg.sweep.axis, value) {
                c.apply(axis, v)?;
            }
            c.pso.seed = seed;
            c.mc.seed = seed;
            out.push(Point {
                index: out.len(),
                value,
                seed,
                config: c,
            });
        }
    }
    Ok(out)
}

// Everything that influences the optimizer; points sharing a key share a
// design.
fn design_key(cfg: &Config) -> String {
    let mut c = cfg.clone();
    c.cdi = Default::default();
    c.mc = Default::default();
    c.sweep = Default::default();
    c.run = None;
    c.to_toml()
}

/// Runs the optimizer for one configuration.
pub fn design_one(cfg: &Config) -> Result<PsoResult> {
    let stats = cfg.scenario.stats()?;
    let constraints = cfg.constraints.resolve()?;
    let layout = Layout::new(cfg.codebook_dims.m, cfg.codebook_dims.n)?;
    let backend = cfg.backend()?;
    pso::optimize(backend.as_ref(), &stats, &constraints, layout, &cfg.pso)
}

/// Analytic metrics next to simulated ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub analytic: MetricsReport,
    pub mc: McReport,
    pub agree: [bool; 5],
    pub slacks: Slacks,
    pub feasible: bool,
}

impl Verification {
    pub fn all_agree(&self) -> bool {
        self.agree.iter().all(|a| *a)
    }

    /// `metric,analytic,mc,se,n,agree` table followed by constraint lines.
    pub fn to_csv(&self) -> String {
        let a = &self.analytic;
        let analytic = [
            a.avg_power_c,
            a.avg_power_d,
            a.avg_secrecy_rate_c,
            a.avg_rate_d,
            a.outage_codebook,
        ];
        let mut out = String::from("metric,analytic,mc,se,n,agree\n");
        for (((name, x), e), ok) in McReport::METRICS
            .iter()
            .zip(analytic)
            .zip(self.mc.estimates())
            .zip(self.agree)
        {
            let _ = writeln!(
                out,
                "{name},{x},{},{},{},{}",
                e.value,
                e.standard_error,
                e.n_samples,
                if ok { "pass" } else { "fail" }
            );
        }
        out
    }

    pub fn constraints_csv(&self) -> String {
        let s = &self.slacks;
        let mut out = String::from("constraint,slack,satisfied\n");
        for (name, v) in [
            ("r_s_c_min", s.rate),
            ("outage_max", s.outage),
            ("p_c_max", s.power_c),
            ("p_d_max", s.power_d),
        ] {
            let _ = writeln!(out, "{name},{v},{}", v >= -FEASIBILITY_TOL);
        }
        out
    }
}

/// Evaluates `cb` analytically and by simulation under `cfg`.
pub fn verify(cb: &Codebook, cfg: &Config) -> Result<Verification> {
    let stats = cfg.scenario.stats()?;
    let constraints = cfg.constraints.resolve()?;
    verify_with(cb, cfg, &stats, &constraints)
}

fn verify_with(
    cb: &Codebook,
    cfg: &Config,
    stats: &ChannelStats,
    constraints: &crate::codebook::Constraints,
) -> Result<Verification> {
    let analytic = cfg.backend()?.evaluate(cb, stats)?;
    let noise = cfg.noise.feedback();
    let mc = simulate_metrics(
        cb,
        stats,
        noise.as_ref(),
        cfg.codebook_dims.region0,
        &cfg.mc,
    )?;
    let a = &analytic;
    let values = [
        a.avg_power_c,
        a.avg_power_d,
        a.avg_secrecy_rate_c,
        a.avg_rate_d,
        a.outage_codebook,
    ];
    let est = mc.estimates();
    let agree =
        std::array::from_fn(|i| est[i].agrees(values[i], cfg.mc.confidence, AGREEMENT_FLOOR));
    let slacks = analytic.slacks(constraints);
    Ok(Verification {
        feasible: slacks.feasible(FEASIBILITY_TOL),
        analytic,
        mc,
        agree,
        slacks,
    })
}

/// `|r_true - r_est| / r_true` of `cb` under the point's CDI estimate.
pub fn point_rate_gap(
    cb: &Codebook,
    cfg: &Config,
    stats: &ChannelStats,
    samples: &BTreeMap<Link, Vec<f64>>,
) -> Result<f64> {
    let estimator = cfg.cdi.estimator()?;
    let estimate = cdi::estimate_channel_with(estimator.as_ref(), stats, cfg.pso.seed, samples)?;
    let backend = cfg.backend()?;
    cdi::rate_gap(
        cb,
        stats,
        &estimate,
        backend.as_ref(),
        cfg.noise.feedback().as_ref(),
        cfg.codebook_dims.region0,
        &cfg.mc,
    )
}

fn evaluate_point(
    p: &Point,
    design: &(PsoResult, f64),
    samples: &BTreeMap<Link, Vec<f64>>,
) -> Result<SweepRow> {
    let cfg = &p.config;
    let (result, design_seconds) = design;
    let started = Instant::now();
    let stats = cfg.scenario.stats()?;
    let constraints = cfg.constraints.resolve()?;
    let check = verify_with(&result.codebook, cfg, &stats, &constraints)?;
    let rate_gap = if check.analytic.avg_rate_d > 0.0 {
        point_rate_gap(&result.codebook, cfg, &stats, samples)?
    } else {
        f64::NAN
    };
    Ok(SweepRow {
        point: p.index,
        axis: cfg.sweep.axis,
        value: p.value,
        seed: p.seed,
        m: cfg.codebook_dims.m,
        n: cfg.codebook_dims.n,
        n_pop: cfg.pso.n_pop,
        noise: cfg.noise.mode.backend_name(),
        q_c: cfg.noise.q_c,
        q_d: cfg.noise.q_d,
        cdi: cfg.cdi.mode.clone(),
        slacks: check.slacks,
        feasible: result.feasible && check.feasible,
        gbest_cost: result.gbest_cost,
        mc_agree: check.all_agree(),
        mc: check.mc,
        report: check.analytic,
        rate_gap,
        design_seconds: *design_seconds,
        verify_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Optimizes and verifies every point of `cfg`. Sample file paths are
/// resolved against `base_dir`.
pub fn run(cfg: &Config, base_dir: &Path) -> Result<RunOutput> {
    let resolved = resolve(cfg, base_dir)?;
    let samples = resolved.cdi.load_samples(base_dir)?;
    let pts = points(&resolved)?;

    let mut key_of = Vec::with_capacity(pts.len());
    let mut unique: Vec<&Config> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for p in &pts {
        let key = design_key(&p.config);
        let slot = *seen.entry(key).or_insert_with(|| {
            unique.push(&p.config);
            unique.len() - 1
        });
        key_of.push(slot);
    }
    let designs: Vec<(PsoResult, f64)> = unique
        .par_iter()
        .map(|c| {
            let started = Instant::now();
            design_one(c).map(|r| (r, started.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<SweepRow> = pts
        .par_iter()
        .zip(&key_of)
        .map(|(p, &k)| evaluate_point(p, &designs[k], &samples))
        .collect::<Result<_>>()?;

    let codebooks = key_of
        .iter()
        .map(|&k| designs[k].0.codebook.clone())
        .collect();
    let traces = key_of.iter().map(|&k| designs[k].0.trace.clone()).collect();
    let mut manifest = resolved.clone();
    manifest.run = Some(RunInfo {
        version: env!("CARGO_PKG_VERSION").to_string(),
        input_sha256: input_hash(&resolved)?,
        codebook_sha256: None,
    });
    Ok(RunOutput {
        rows,
        codebooks,
        traces,
        manifest,
    })
}

/// Hash over the resolved configuration and every sample file it names.
pub fn input_hash(resolved: &Config) -> Result<String> {
    let mut bytes = resolved.to_toml().into_bytes();
    for path in resolved.cdi.samples.values() {
        bytes.extend(content_hash(&fs::read(path)?).into_bytes());
    }
    Ok(content_hash(&bytes))
}

/// A single design: the sweep section is ignored and only the optimizer
/// seed is used.
pub fn design(cfg: &Config, base_dir: &Path) -> Result<RunOutput> {
    let mut c = cfg.clone();
    c.sweep = Default::default();
    run(&c, base_dir)
}

/// Stand-alone simulation of a codebook, or of a fresh design when none is
/// given. Returns the codebook used and the simulated metrics.
pub fn monte_carlo(cfg: &Config, codebook: Option<Codebook>) -> Result<(Codebook, McReport)> {
    cfg.validate()?;
    let cb = match codebook {
        Some(cb) => cb,
        None => design_one(cfg)?.codebook,
    };
    let stats = cfg.scenario.stats()?;
    let noise = cfg.noise.feedback();
    let report = simulate_metrics(
        &cb,
        &stats,
        noise.as_ref(),
        cfg.codebook_dims.region0,
        &cfg.mc,
    )?;
    Ok((cb, report))
}

/// Worker count from the flag, else the environment, else all cores.
pub fn worker_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("{WORKERS_ENV}: not a worker count: {v}"))),
        Err(_) => Ok(None),
    }
}

/// Runs `f` on a dedicated pool of `workers` threads (all cores if `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == Some(0) {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Where a run reads its relative paths from.
pub fn base_dir_of(config_path: &Path) -> PathBuf {
    config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}
