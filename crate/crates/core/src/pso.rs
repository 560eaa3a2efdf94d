//! Constrained particle swarm search over quantization boundaries and
//! codewords.
//!
//! A particle position is the flattened design vector
//! `[h_bc (M-1) | p_bc (M-1) | r_s (M-1) | h_dd (N-1) | p_dd (N-1)]`.
//! Constraints enter the cost as exterior quadratic penalties.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::MetricBackend;
use crate::channel::{stream_rng, ChannelStats};
use crate::codebook::{CellularCodeword, Codebook, Constraints, D2DCodeword};
use crate::error::{domain, Error, Result};
use crate::metrics::MetricsReport;

/// Slack below which a constraint counts as violated.
pub const FEASIBILITY_TOL: f64 = 1e-6;

const PSO_STREAM: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Penalties {
    pub rate: f64,
    pub outage: f64,
    pub power_c: f64,
    pub power_d: f64,
}

impl Default for Penalties {
    fn default() -> Self {
        Self {
            rate: 1e6,
            outage: 1e6,
            power_c: 1e6,
            power_d: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsoConfig {
    pub n_pop: usize,
    pub max_it: usize,
    pub w: f64,
    pub c1: f64,
    pub c2: f64,
    /// Velocity clamp as a fraction of each coordinate's box width.
    pub v_frac: f64,
    pub seed: u64,
    /// Upper end of the secrecy-rate search range.
    pub rs_guard: f64,
    /// Boundaries are searched up to this quantile of the gain.
    pub boundary_quantile: f64,
    /// Scale codeword powers down onto the average power limits before
    /// scoring a position.
    pub power_repair: bool,
    pub penalties: Penalties,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            n_pop: 100,
            max_it: 1000,
            w: 0.729,
            c1: 1.496,
            c2: 1.496,
            v_frac: 0.2,
            seed: 1,
            rs_guard: 20.0,
            boundary_quantile: 0.999,
            power_repair: true,
            penalties: Penalties::default(),
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pop < 2 || self.max_it < 1 {
            return domain("pso: need n_pop >= 2 and max_it >= 1");
        }
        if !(self.v_frac > 0.0 && self.v_frac <= 1.0) {
            return domain(format!(
                "pso: v_frac must lie in (0, 1], got {}",
                self.v_frac
            ));
        }
        for (name, v) in [("w", self.w), ("c1", self.c1), ("c2", self.c2)] {
            if !(v >= 0.0) {
                return domain(format!("pso: {name} must be non-negative"));
            }
        }
        let p = self.penalties;
        if [p.rate, p.outage, p.power_c, p.power_d]
            .iter()
            .any(|l| !(*l >= 0.0))
        {
            return domain("pso: penalty weights must be non-negative");
        }
        if !(self.rs_guard > 0.0) || !(self.boundary_quantile > 0.0 && self.boundary_quantile < 1.0)
        {
            return domain("pso: rs_guard must be positive and boundary_quantile in (0, 1)");
        }
        Ok(())
    }
}

/// Shape of the design vector for an `M x N` codebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub m: usize,
    pub n: usize,
}

impl Layout {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m < 2 || n < 2 {
            return domain(format!(
                "codebook needs at least two regions per link, got M={m}, N={n}"
            ));
        }
        Ok(Self { m, n })
    }

    pub fn dim(&self) -> usize {
        3 * (self.m - 1) + 2 * (self.n - 1)
    }

    fn blocks(&self) -> [std::ops::Range<usize>; 5] {
        let a = self.m - 1;
        let b = self.n - 1;
        [
            0..a,
            a..2 * a,
            2 * a..3 * a,
            3 * a..3 * a + b,
            3 * a + b..3 * a + 2 * b,
        ]
    }

    pub fn encode(&self, cb: &Codebook) -> Result<Vec<f64>> {
        if cb.m() != self.m {
            return Err(Error::Dimension {
                expected: self.m,
                actual: cb.m(),
            });
        }
        if cb.n() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                actual: cb.n(),
            });
        }
        let mut x = Vec::with_capacity(self.dim());
        x.extend(&cb.bc_boundaries);
        x.extend(cb.bc_words.iter().map(|w| w.p));
        x.extend(cb.bc_words.iter().map(|w| w.rs));
        x.extend(&cb.dd_boundaries);
        x.extend(cb.dd_words.iter().map(|w| w.p));
        Ok(x)
    }

    /// Builds a valid codebook from any finite position: boundary blocks are
    /// sorted and made strictly increasing and positive, powers are clipped
    /// at zero and secrecy rates are clamped to `[0, r_bc]`.
    pub fn decode(&self, x: &[f64]) -> Result<Codebook> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return domain("decode: non-finite coordinate");
        }
        let [hb, pb, rb, hd, pd] = self.blocks();
        let bc_boundaries = repair_boundaries(&x[hb]);
        let dd_boundaries = repair_boundaries(&x[hd]);
        let bc_words = x[pb]
            .iter()
            .zip(&x[rb])
            .zip(&bc_boundaries)
            .map(|((&p, &rs), &h)| {
                let p = p.max(0.0);
                let r_bc = (h * p).ln_1p() / std::f64::consts::LN_2;
                CellularCodeword {
                    p,
                    rs: rs.clamp(0.0, r_bc),
                }
            })
            .collect();
        let dd_words = x[pd]
            .iter()
            .map(|&p| D2DCodeword { p: p.max(0.0) })
            .collect();
        Codebook::new(bc_boundaries, dd_boundaries, bc_words, dd_words)
    }
}

fn repair_boundaries(raw: &[f64]) -> Vec<f64> {
    let mut b: Vec<f64> = raw.to_vec();
    b.sort_by(f64::total_cmp);
    let mut prev = 0.0f64;
    for v in b.iter_mut() {
        if !(*v > prev) {
            *v = next_up(prev);
        }
        prev = *v;
    }
    b
}

fn next_up(x: f64) -> f64 {
    if x <= 0.0 {
        f64::MIN_POSITIVE
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}

/// Per-coordinate search box.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SearchBox {
    pub fn new(
        layout: &Layout,
        stats: &ChannelStats,
        constraints: &Constraints,
        cfg: &PsoConfig,
    ) -> Self {
        let q = -(1.0 - cfg.boundary_quantile).ln();
        let a = layout.m - 1;
        let b = layout.n - 1;
        let mut hi = Vec::with_capacity(layout.dim());
        hi.extend(std::iter::repeat_n(q * stats.mean_bc, a));
        hi.extend(std::iter::repeat_n(
            constraints.p_c_max * layout.m as f64,
            a,
        ));
        hi.extend(std::iter::repeat_n(cfg.rs_guard, a));
        hi.extend(std::iter::repeat_n(q * stats.mean_dd, b));
        hi.extend(std::iter::repeat_n(
            constraints.p_d_max * layout.n as f64,
            b,
        ));
        Self {
            lo: vec![0.0; hi.len()],
            hi,
        }
    }

    pub fn width(&self, j: usize) -> f64 {
        self.hi[j] - self.lo[j]
    }
}

/// Rate minus quadratic penalties on the four average constraints.
pub fn penalized_cost(
    report: &MetricsReport,
    constraints: &Constraints,
    lambda: &Penalties,
) -> f64 {
    let s = report.slacks(constraints);
    let sq = |slack: f64| {
        let v = (-slack).max(0.0);
        v * v
    };
    report.avg_rate_d
        - lambda.rate * sq(s.rate)
        - lambda.outage * sq(s.outage)
        - lambda.power_c * sq(s.power_c)
        - lambda.power_d * sq(s.power_d)
}

/// Scales the cellular and D2D powers by a common factor per link so the
/// average powers do not exceed their limits, re-clamping secrecy rates to
/// the reduced rates. Returns `None` when both limits already hold.
pub fn repair_powers(
    cb: &Codebook,
    report: &MetricsReport,
    constraints: &Constraints,
) -> Option<Codebook> {
    let fc = constraints.p_c_max / report.avg_power_c;
    let fd = constraints.p_d_max / report.avg_power_d;
    if !(fc < 1.0) && !(fd < 1.0) {
        return None;
    }
    let mut out = cb.clone();
    if fc < 1.0 {
        for (w, &h) in out.bc_words.iter_mut().zip(&cb.bc_boundaries) {
            w.p *= fc;
            let r_bc = (h * w.p).ln_1p() / std::f64::consts::LN_2;
            w.rs = w.rs.min(r_bc);
        }
    }
    if fd < 1.0 {
        for w in out.dd_words.iter_mut() {
            w.p *= fd;
        }
    }
    Some(out)
}

/// Decoded (and optionally power-repaired) codebook, its metrics and its
/// penalized cost.
pub fn scored(
    x: &[f64],
    layout: &Layout,
    stats: &ChannelStats,
    constraints: &Constraints,
    backend: &dyn MetricBackend,
    cfg: &PsoConfig,
) -> Result<(f64, Codebook, MetricsReport)> {
    let mut cb = layout.decode(x)?;
    let mut report = backend.evaluate(&cb, stats)?;
    if cfg.power_repair {
        if let Some(fixed) = repair_powers(&cb, &report, constraints) {
            report = backend.evaluate(&fixed, stats)?;
            cb = fixed;
        }
    }
    let cost = penalized_cost(&report, constraints, &cfg.penalties);
    if cost.is_nan() {
        return domain("fitness: NaN cost");
    }
    Ok((cost, cb, report))
}

/// Decoded codebook, its metrics and its penalized cost.
pub fn fitness(
    x: &[f64],
    layout: &Layout,
    stats: &ChannelStats,
    constraints: &Constraints,
    backend: &dyn MetricBackend,
    lambda: &Penalties,
) -> Result<(f64, MetricsReport)> {
    let cb = layout.decode(x)?;
    let report = backend.evaluate(&cb, stats)?;
    let cost = penalized_cost(&report, constraints, lambda);
    if cost.is_nan() {
        return domain("fitness: NaN cost");
    }
    Ok((cost, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub best_x: Vec<f64>,
    pub best_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub particles: Vec<Particle>,
    pub gbest_x: Vec<f64>,
    pub gbest_cost: f64,
    pub iteration: usize,
    pub trace: Vec<f64>,
    /// Best objective among positions that met every constraint.
    pub feasible_best: Option<(Vec<f64>, f64)>,
}

/// Outcome of evaluating one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub cost: f64,
    /// Objective value when every constraint holds.
    pub feasible_rate: Option<f64>,
}

impl Evaluation {
    pub fn failed() -> Self {
        Self {
            cost: f64::NEG_INFINITY,
            feasible_rate: None,
        }
    }
}

fn evaluate_all<F>(positions: &[&[f64]], eval: &F) -> Vec<Evaluation>
where
    F: Fn(&[f64]) -> Evaluation + Sync,
{
    positions.par_iter().map(|x| eval(x)).collect()
}

impl SwarmState {
    /// Uniform positions in the box, zero velocities.
    pub fn init<F>(bounds: &SearchBox, n_pop: usize, rng: &mut ChaCha8Rng, eval: &F) -> Self
    where
        F: Fn(&[f64]) -> Evaluation + Sync,
    {
        let dim = bounds.lo.len();
        let xs: Vec<Vec<f64>> = (0..n_pop)
            .map(|_| {
                (0..dim)
                    .map(|j| bounds.lo[j] + rng.random::<f64>() * bounds.width(j))
                    .collect()
            })
            .collect();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let evals = evaluate_all(&refs, eval);
        let particles: Vec<Particle> = xs
            .into_iter()
            .zip(&evals)
            .map(|(x, e)| Particle {
                v: vec![0.0; dim],
                best_x: x.clone(),
                best_cost: e.cost,
                x,
            })
            .collect();
        let mut state = Self {
            gbest_x: particles[0].x.clone(),
            gbest_cost: f64::NEG_INFINITY,
            particles,
            iteration: 0,
            trace: Vec::new(),
            feasible_best: None,
        };
        for i in 0..state.particles.len() {
            state.absorb(i, &evals[i]);
            if state.particles[i].best_cost > state.gbest_cost {
                state.gbest_cost = state.particles[i].best_cost;
                state.gbest_x = state.particles[i].best_x.clone();
            }
        }
        state.trace.push(state.gbest_cost);
        state
    }

    fn absorb(&mut self, i: usize, e: &Evaluation) {
        if let Some(rate) = e.feasible_rate {
            if self.feasible_best.as_ref().is_none_or(|(_, r)| rate > *r) {
                self.feasible_best = Some((self.particles[i].x.clone(), rate));
            }
        }
    }

    /// One synchronous iteration: move every particle, evaluate all new
    /// positions, then update personal and global bests in particle order.
    pub fn step<F>(&mut self, cfg: &PsoConfig, bounds: &SearchBox, rng: &mut ChaCha8Rng, eval: &F)
    where
        F: Fn(&[f64]) -> Evaluation + Sync,
    {
        let dim = bounds.lo.len();
        let draws: Vec<(f64, f64)> = (0..self.particles.len() * dim)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        for (i, p) in self.particles.iter_mut().enumerate() {
            for j in 0..dim {
                let (r1, r2) = draws[i * dim + j];
                let vmax = cfg.v_frac * bounds.width(j);
                let v = cfg.w * p.v[j]
                    + cfg.c1 * r1 * (p.best_x[j] - p.x[j])
                    + cfg.c2 * r2 * (self.gbest_x[j] - p.x[j]);
                let mut v = v.clamp(-vmax, vmax);
                let mut x = p.x[j] + v;
                if x > bounds.hi[j] {
                    x = 2.0 * bounds.hi[j] - x;
                    v = -v;
                } else if x < bounds.lo[j] {
                    x = 2.0 * bounds.lo[j] - x;
                    v = -v;
                }
                p.x[j] = x.clamp(bounds.lo[j], bounds.hi[j]);
                p.v[j] = v;
            }
        }
        let refs: Vec<&[f64]> = self.particles.iter().map(|p| p.x.as_slice()).collect();
        let evals = evaluate_all(&refs, eval);
        for (i, e) in evals.iter().enumerate() {
            self.absorb(i, e);
            let p = &mut self.particles[i];
            if e.cost > p.best_cost {
                p.best_cost = e.cost;
                p.best_x = p.x.clone();
            }
            if p.best_cost > self.gbest_cost {
                self.gbest_cost = p.best_cost;
                self.gbest_x = p.best_x.clone();
            }
        }
        self.iteration += 1;
        self.trace.push(self.gbest_cost);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult {
    pub codebook: Codebook,
    pub report: MetricsReport,
    /// Penalized cost of the swarm's global best.
    pub gbest_cost: f64,
    pub feasible: bool,
    /// `gbest_cost` after initialization and after every iteration.
    pub trace: Vec<f64>,
    /// Particles whose evaluation failed.
    pub failures: usize,
    pub first_failure: Option<String>,
}

/// Runs the swarm and returns the best feasible codebook seen, or the global
/// best (flagged infeasible) when no position met every constraint.
pub fn optimize(
    backend: &dyn MetricBackend,
    stats: &ChannelStats,
    constraints: &Constraints,
    layout: Layout,
    cfg: &PsoConfig,
) -> Result<PsoResult> {
    cfg.validate()?;
    constraints.validate()?;
    stats.validate()?;
    let bounds = SearchBox::new(&layout, stats, constraints, cfg);
    let failures = std::sync::atomic::AtomicUsize::new(0);
    let first_failure = std::sync::Mutex::new(None::<String>);
    let eval = |x: &[f64]| -> Evaluation {
        match scored(x, &layout, stats, constraints, backend, cfg) {
            Ok((cost, _, report)) => Evaluation {
                cost,
                feasible_rate: report
                    .slacks(constraints)
                    .feasible(FEASIBILITY_TOL)
                    .then_some(report.avg_rate_d),
            },
            Err(e) => {
                failures.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let mut slot = first_failure.lock().expect("failure slot");
                if slot.is_none() {
                    *slot = Some(e.to_string());
                }
                Evaluation::failed()
            }
        }
    };
    let mut rng = stream_rng(cfg.seed, PSO_STREAM);
    let mut state = SwarmState::init(&bounds, cfg.n_pop, &mut rng, &eval);
    if state.gbest_cost == f64::NEG_INFINITY {
        let msg = first_failure
            .lock()
            .expect("failure slot")
            .clone()
            .unwrap_or_default();
        return domain(format!("every initial particle failed to evaluate: {msg}"));
    }
    for _ in 0..cfg.max_it {
        state.step(cfg, &bounds, &mut rng, &eval);
    }
    let (x, feasible) = match &state.feasible_best {
        Some((x, _)) => (x.clone(), true),
        None => (state.gbest_x.clone(), false),
    };
    let (_, codebook, report) = scored(&x, &layout, stats, constraints, backend, cfg)?;
    let first_failure = first_failure.into_inner().expect("failure slot");
    Ok(PsoResult {
        feasible: feasible && report.slacks(constraints).feasible(FEASIBILITY_TOL),
        codebook,
        report,
        gbest_cost: state.gbest_cost,
        trace: state.trace,
        failures: failures.into_inner(),
        first_failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{registry, BackendParams, ErrorFree};
    use crate::metrics::{self, EvalOptions};
    use crate::noisy::FeedbackNoise;
    use proptest::prelude::*;

    fn stats() -> ChannelStats {
        ChannelStats::new([1.0, 0.2, 2.0, 0.2, 0.5, 0.5]).unwrap()
    }

    fn constraints() -> Constraints {
        Constraints {
            r_s_c_min: 0.1,
            outage_max: 0.1,
            p_c_max: 10f64.powf(0.5),
            p_d_max: 10.0,
        }
    }

    fn backend() -> ErrorFree {
        ErrorFree {
            opts: EvalOptions::default(),
        }
    }

    fn codebook() -> Codebook {
        Codebook::new(
            vec![0.4, 1.5],
            vec![1.0],
            vec![
                CellularCodeword { p: 2.0, rs: 0.2 },
                CellularCodeword { p: 1.0, rs: 0.5 },
            ],
            vec![D2DCodeword { p: 4.0 }],
        )
        .unwrap()
    }

    #[test]
    fn encode_decode_round_trip() {
        let cb = codebook();
        let layout = Layout::new(3, 2).unwrap();
        let x = layout.encode(&cb).unwrap();
        assert_eq!(x.len(), layout.dim());
        assert_eq!(layout.decode(&x).unwrap(), cb);
    }

    #[test]
    fn decode_rejects_wrong_length() {
        let layout = Layout::new(3, 2).unwrap();
        assert!(matches!(
            layout.decode(&[1.0; 4]),
            Err(Error::Dimension {
                expected: 8,
                actual: 4
            })
        ));
        assert!(Layout::new(1, 2).is_err());
    }

    #[test]
    fn decode_sorts_boundaries() {
        let layout = Layout::new(4, 3).unwrap();
        let mut x = vec![1.0; layout.dim()];
        x[0..3].copy_from_slice(&[3.0, 1.0, 2.0]);
        x[9..11].copy_from_slice(&[0.9, 0.2]);
        let cb = layout.decode(&x).unwrap();
        assert_eq!(cb.bc_boundaries, vec![1.0, 2.0, 3.0]);
        assert_eq!(cb.dd_boundaries, vec![0.2, 0.9]);
    }

    #[test]
    fn decode_separates_tied_and_zero_boundaries() {
        let layout = Layout::new(4, 2).unwrap();
        let mut x = vec![1.0; layout.dim()];
        x[0..3].copy_from_slice(&[0.0, 0.5, 0.5]);
        let cb = layout.decode(&x).unwrap();
        let b = &cb.bc_boundaries;
        assert!(b[0] > 0.0 && b[0] < b[1] && b[1] < b[2]);
        assert_eq!(b[1], 0.5);
    }

    #[test]
    fn decode_clamps_secrecy_rate() {
        let layout = Layout::new(2, 2).unwrap();
        // [h_bc, p_bc, rs, h_dd, p_dd]
        let cb = layout.decode(&[1.0, 3.0, 7.0, 1.0, 1.0]).unwrap();
        assert_eq!(cb.bc_words[0].rs, 2.0);
        let cb = layout.decode(&[1.0, -3.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(cb.bc_words[0].p, 0.0);
        assert_eq!(cb.bc_words[0].rs, 0.0);
        assert_eq!(cb.dd_words[0].p, 0.0);
    }

    #[test]
    fn feasible_point_costs_its_rate() {
        let cb = codebook();
        let s = stats();
        let report = backend().evaluate(&cb, &s).unwrap();
        let c = Constraints {
            r_s_c_min: report.avg_secrecy_rate_c / 2.0,
            outage_max: 1.0,
            p_c_max: 100.0,
            p_d_max: 100.0,
        };
        let layout = Layout::new(3, 2).unwrap();
        let x = layout.encode(&cb).unwrap();
        let (cost, r) = fitness(&x, &layout, &s, &c, &backend(), &Penalties::default()).unwrap();
        assert_eq!(cost, report.avg_rate_d);
        assert_eq!(r, report);
    }

    #[test]
    fn unit_power_violation_costs_lambda() {
        let cb = codebook();
        let s = stats();
        let report = backend().evaluate(&cb, &s).unwrap();
        let c = Constraints {
            r_s_c_min: report.avg_secrecy_rate_c / 2.0,
            outage_max: 1.0,
            p_c_max: 100.0,
            p_d_max: report.avg_power_d - 1.0,
        };
        let lambda = Penalties {
            power_d: 10.0,
            ..Penalties::default()
        };
        let layout = Layout::new(3, 2).unwrap();
        let x = layout.encode(&cb).unwrap();
        let (cost, _) = fitness(&x, &layout, &s, &c, &backend(), &lambda).unwrap();
        assert!((cost - (report.avg_rate_d - 10.0)).abs() < 1e-12);
    }

    #[test]
    fn fitness_matches_metrics_module() {
        let cb = Codebook::new(
            vec![0.8],
            vec![1.2],
            vec![CellularCodeword { p: 1.5, rs: 0.3 }],
            vec![D2DCodeword { p: 5.0 }],
        )
        .unwrap();
        let s = stats();
        let opts = EvalOptions::default();
        let c = Constraints {
            r_s_c_min: 0.01,
            outage_max: 1.0,
            p_c_max: 10.0,
            p_d_max: 10.0,
        };
        let layout = Layout::new(2, 2).unwrap();
        let x = layout.encode(&cb).unwrap();
        let (cost, _) = fitness(
            &x,
            &layout,
            &s,
            &c,
            &ErrorFree { opts },
            &Penalties::default(),
        )
        .unwrap();
        let independent = metrics::avg_rate_d(&cb, &s, &opts);
        assert!((cost - independent).abs() < 1e-12);
    }

    #[test]
    fn repair_powers_lands_on_the_limits() {
        let cb = Codebook::new(
            vec![0.5, 1.5],
            vec![1.0, 2.0],
            vec![
                CellularCodeword { p: 20.0, rs: 3.0 },
                CellularCodeword { p: 30.0, rs: 5.5 },
            ],
            vec![D2DCodeword { p: 40.0 }, D2DCodeword { p: 50.0 }],
        )
        .unwrap();
        let s = stats();
        let c = constraints();
        let b = backend();
        let before = b.evaluate(&cb, &s).unwrap();
        let fixed = repair_powers(&cb, &before, &c).unwrap();
        fixed.ensure_valid().unwrap();
        let after = b.evaluate(&fixed, &s).unwrap();
        assert!((after.avg_power_c - c.p_c_max).abs() < 1e-9);
        assert!((after.avg_power_d - c.p_d_max).abs() < 1e-9);
        for (k, w) in fixed.bc_words.iter().enumerate() {
            assert!(w.rs <= fixed.bc_rate(k + 1) + 1e-15);
        }
        assert!(repair_powers(
            &fixed,
            &after,
            &Constraints {
                p_c_max: 1e3,
                p_d_max: 1e3,
                ..c
            }
        )
        .is_none());
    }

    fn small_cfg(seed: u64) -> PsoConfig {
        PsoConfig {
            n_pop: 12,
            max_it: 30,
            seed,
            ..PsoConfig::default()
        }
    }

    fn run(cfg: &PsoConfig) -> PsoResult {
        optimize(
            &backend(),
            &stats(),
            &constraints(),
            Layout::new(2, 2).unwrap(),
            cfg,
        )
        .unwrap()
    }

    #[test]
    fn same_seed_same_result() {
        let a = run(&small_cfg(5));
        let b = run(&small_cfg(5));
        assert_eq!(a, b);
        assert_ne!(a.trace, run(&small_cfg(6)).trace);
    }

    #[test]
    fn trace_is_monotone_and_complete() {
        let r = run(&small_cfg(3));
        assert_eq!(r.trace.len(), 31);
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(*r.trace.last().unwrap(), r.gbest_cost);
    }

    #[test]
    fn feasible_result_holds_under_reevaluation() {
        let r = run(&PsoConfig {
            n_pop: 20,
            max_it: 60,
            ..PsoConfig::default()
        });
        assert!(r.feasible);
        let again = backend().evaluate(&r.codebook, &stats()).unwrap();
        assert!(again.slacks(&constraints()).feasible(FEASIBILITY_TOL));
        assert_eq!(again, r.report);
    }

    #[test]
    fn unreachable_constraints_flag_infeasible() {
        let c = Constraints {
            r_s_c_min: 15.0,
            ..constraints()
        };
        let r = optimize(
            &backend(),
            &stats(),
            &c,
            Layout::new(2, 2).unwrap(),
            &small_cfg(1),
        )
        .unwrap();
        assert!(!r.feasible);
        assert!(r.report.avg_secrecy_rate_c < 15.0);
    }

    fn swarm(dim: usize) -> (SearchBox, SwarmState) {
        let bounds = SearchBox {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        };
        let eval = |x: &[f64]| Evaluation {
            cost: -x.iter().map(|v| (v - 0.3).powi(2)).sum::<f64>(),
            feasible_rate: None,
        };
        let mut rng = stream_rng(4, PSO_STREAM);
        let state = SwarmState::init(&bounds, 8, &mut rng, &eval);
        (bounds, state)
    }

    #[test]
    fn zero_coefficients_freeze_positions() {
        let (bounds, mut state) = swarm(3);
        let eval = |x: &[f64]| Evaluation {
            cost: x[0],
            feasible_rate: None,
        };
        let cfg = PsoConfig {
            w: 0.0,
            c1: 0.0,
            c2: 0.0,
            ..PsoConfig::default()
        };
        let before: Vec<Vec<f64>> = state.particles.iter().map(|p| p.x.clone()).collect();
        let mut rng = stream_rng(9, PSO_STREAM);
        for _ in 0..5 {
            state.step(&cfg, &bounds, &mut rng, &eval);
        }
        let after: Vec<Vec<f64>> = state.particles.iter().map(|p| p.x.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn particle_at_the_optimum_stays() {
        let (bounds, mut state) = swarm(2);
        let eval = |_: &[f64]| Evaluation {
            cost: 0.0,
            feasible_rate: None,
        };
        let at = vec![0.25, 0.75];
        state.gbest_x = at.clone();
        for p in state.particles.iter_mut() {
            p.x = at.clone();
            p.best_x = at.clone();
            p.v = vec![0.0; 2];
        }
        let mut rng = stream_rng(2, PSO_STREAM);
        state.step(&PsoConfig::default(), &bounds, &mut rng, &eval);
        assert!(state.particles.iter().all(|p| p.x == at));
    }

    #[test]
    fn failed_evaluations_cost_minus_infinity() {
        let layout = Layout::new(2, 2).unwrap();
        let bounds = SearchBox::new(&layout, &stats(), &constraints(), &PsoConfig::default());
        let mut rng = stream_rng(1, PSO_STREAM);
        let eval = |_: &[f64]| Evaluation::failed();
        let state = SwarmState::init(&bounds, 4, &mut rng, &eval);
        assert!(state
            .particles
            .iter()
            .all(|p| p.best_cost == f64::NEG_INFINITY));
    }

    #[test]
    fn noisy_backend_runs_through_registry() {
        let params = BackendParams {
            noise: FeedbackNoise::new(0.1, 0.1).unwrap(),
            ..BackendParams::default()
        };
        let b = registry().create("noisy", &params).unwrap();
        let r = optimize(
            b.as_ref(),
            &stats(),
            &constraints(),
            Layout::new(2, 2).unwrap(),
            &small_cfg(2),
        )
        .unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(r.report.q_c, Some(0.1));
    }

    #[test]
    fn invalid_config_is_rejected() {
        for cfg in [
            PsoConfig {
                n_pop: 1,
                ..PsoConfig::default()
            },
            PsoConfig {
                v_frac: 0.0,
                ..PsoConfig::default()
            },
            PsoConfig {
                w: -1.0,
                ..PsoConfig::default()
            },
            PsoConfig {
                boundary_quantile: 1.0,
                ..PsoConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn steps_stay_in_the_box(seed in 0u64..1000, v_frac in 0.05f64..1.0) {
            let (bounds, mut state) = swarm(4);
            let eval = |x: &[f64]| Evaluation { cost: -x.iter().map(|v| (v - 0.9).powi(2)).sum::<f64>(), feasible_rate: None };
            let cfg = PsoConfig { v_frac, ..PsoConfig::default() };
            let mut rng = stream_rng(seed, PSO_STREAM);
            for _ in 0..10 {
                let before = state.gbest_cost;
                state.step(&cfg, &bounds, &mut rng, &eval);
                prop_assert!(state.gbest_cost >= before);
                for p in &state.particles {
                    for j in 0..4 {
                        prop_assert!(p.x[j] >= bounds.lo[j] && p.x[j] <= bounds.hi[j]);
                        prop_assert!(p.v[j].abs() <= v_frac * bounds.width(j) + 1e-15);
                    }
                }
            }
        }

        #[test]
        fn any_position_decodes_valid(xs in proptest::collection::vec(-5.0f64..25.0, 8)) {
            let layout = Layout::new(3, 2).unwrap();
            let cb = layout.decode(&xs).unwrap();
            prop_assert!(cb.ensure_valid().is_ok());
        }
    }
}
