//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line straight to stdout (visible without `--nocapture`) and then asserts.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use d2dsec::backend::{ErrorFree, MetricBackend, Noisy};
use d2dsec::cdi::{self, CdiParams, Kde, Parametric, Rkde};
use d2dsec::channel::ChannelStats;
use d2dsec::codebook::{region_probability, Codebook, RegionZero};
use d2dsec::config::Config;
use d2dsec::metrics::{
    self, cdf_eff_bc, cdf_eff_be, EffectiveGainSpec, EvalOptions, MetricsReport,
};
use d2dsec::montecarlo::{simulate_conditional_cdf, simulate_metrics, McConfig, McReport};
use d2dsec::noisy::{self, transition_matrix, FeedbackNoise};
use d2dsec::quad::Tolerance;
use d2dsec::runner::{self, RunOutput, SweepRow};

fn report(n: u32, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n} ({title}): {verdict}; {detail}");
}

fn corpus(name: &str) -> Codebook {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/corpus")
        .join(format!("{name}.toml"));
    Codebook::from_toml(&fs::read_to_string(path).unwrap()).unwrap()
}

const ERROR_FREE_CORPUS: [&str; 5] = ["cb1", "cb2", "cb3", "cb4", "cb5"];
const NOISY_CORPUS: [&str; 5] = ["nb1", "nb2", "nb3", "nb4", "nb5"];

fn scenarios() -> [ChannelStats; 3] {
    [
        ChannelStats::new([1.0, 0.2, 2.0, 0.2, 0.5, 0.5]).unwrap(),
        ChannelStats::new([2.0, 0.5, 1.0, 0.8, 1.0, 0.3]).unwrap(),
        ChannelStats::new([0.5, 0.1, 3.0, 0.4, 0.2, 1.5]).unwrap(),
    ]
}

fn headline(r: &MetricsReport) -> [f64; 5] {
    [
        r.avg_power_c,
        r.avg_power_d,
        r.avg_secrecy_rate_c,
        r.avg_rate_d,
        r.outage_codebook,
    ]
}

/// Largest |analytic - mc| in units of SE (floored) over the five metrics.
fn worst_z(analytic: &MetricsReport, mc: &McReport) -> f64 {
    headline(analytic)
        .iter()
        .zip(mc.estimates())
        .map(|(x, e)| (x - e.value).abs() / (e.standard_error + 1e-6 / 3.0))
        .fold(0.0, f64::max)
}

#[test]
fn criterion_1_oracle_equivalence() {
    let mc = McConfig::new(10_000_000, 101);
    let mut checks = 0;
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let mut record = |label: String, z: f64| {
        checks += 1;
        worst = worst.max(z);
        if z > 3.0 {
            failures.push(format!("{label} at {z:.2} SE"));
        }
    };
    for (s, stats) in scenarios().iter().enumerate() {
        for name in ERROR_FREE_CORPUS {
            let cb = corpus(name);
            for region0 in [RegionZero::Silent, RegionZero::Counted] {
                let opts = EvalOptions {
                    region0,
                    ..EvalOptions::default()
                };
                let analytic = metrics::evaluate(&cb, stats, &opts);
                let sim = simulate_metrics(&cb, stats, None, region0, &mc).unwrap();
                record(
                    format!("{name}/s{s}/{}", region0.name()),
                    worst_z(&analytic, &sim),
                );
            }
        }
        for name in NOISY_CORPUS {
            let cb = corpus(name);
            for (q_c, q_d) in [(0.1, 0.25), (0.25, 0.05)] {
                let noise = FeedbackNoise::new(q_c, q_d).unwrap();
                let region0 = if s % 2 == 0 {
                    RegionZero::Silent
                } else {
                    RegionZero::Counted
                };
                let opts = EvalOptions {
                    region0,
                    ..EvalOptions::default()
                };
                let analytic = noisy::evaluate(&cb, stats, &noise, &opts).unwrap();
                let sim = simulate_metrics(&cb, stats, Some(&noise), region0, &mc).unwrap();
                record(
                    format!("{name}/s{s}/q{q_c},{q_d}"),
                    worst_z(&analytic, &sim),
                );
            }
        }
        // Conditional effective-gain CDF of the cellular link, first corpus
        // codebook's regions, D2D power 3.
        let cb = corpus("cb4");
        let grid = [0.1, 0.3, 0.8, 1.5, 3.0];
        for m in 0..cb.m() {
            let (lo, hi) = cb.bc_region(m);
            let spec = EffectiveGainSpec::new(stats.mean_bc, stats.mean_dc, 3.0, lo, hi).unwrap();
            if spec.region_mass() < 1e-4 {
                continue;
            }
            let sim = simulate_conditional_cdf(&spec, &grid, &McConfig::new(1_000_000, 7)).unwrap();
            for (x, e) in grid.iter().zip(sim) {
                let f = cdf_eff_bc(&spec, *x, Tolerance::default()).unwrap();
                record(
                    format!("cdf_eff_bc/s{s}/m{m}/x{x}"),
                    (f - e.value).abs() / (e.standard_error + 1e-6 / 3.0),
                );
            }
        }
    }
    let pass = failures.is_empty();
    report(
        1,
        "oracle equivalence",
        pass,
        &format!("{checks} comparisons at 1e7 samples, worst {worst:.2} SE {failures:?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_zero_crossover_collapse() {
    let zero = FeedbackNoise::new(0.0, 0.0).unwrap();
    let mut worst: f64 = 0.0;
    for stats in scenarios() {
        for name in NOISY_CORPUS {
            let cb = corpus(name);
            for region0 in [RegionZero::Silent, RegionZero::Counted] {
                let opts = EvalOptions {
                    region0,
                    ..EvalOptions::default()
                };
                let a = headline(&metrics::evaluate(&cb, &stats, &opts));
                let b = headline(&noisy::evaluate(&cb, &stats, &zero, &opts).unwrap());
                for (x, y) in a.iter().zip(b) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    let pass = worst <= 1e-6;
    report(
        2,
        "q=0 collapse",
        pass,
        &format!("max |noisy - error-free| = {worst:.3e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_3_closed_form_spot_values() {
    let mut notes = Vec::new();
    let be = cdf_eff_be(1.0, 1.0, 1.0, 1.0);
    let be_ok = (be - (1.0 - (-1.0f64).exp() / 2.0)).abs() <= 1e-12;
    notes.push(format!(
        "cdf_eff_be err {:.1e}",
        (be - (1.0 - (-1.0f64).exp() / 2.0)).abs()
    ));

    let t = transition_matrix(0.25, 2).unwrap();
    let expected = |i: usize, j: usize| match (i ^ j).count_ones() {
        0 => 0.5625,
        1 => 0.1875,
        _ => 0.0625,
    };
    let mut matrix_ok = true;
    for i in 0..4 {
        for j in 0..4 {
            matrix_ok &= t.get(i, j) == expected(i, j);
        }
    }
    notes.push(format!("transition matrix exact {matrix_ok}"));

    let mut worst: f64 = 0.0;
    for stats in scenarios() {
        for name in ERROR_FREE_CORPUS.iter().chain(&NOISY_CORPUS) {
            let cb = corpus(name);
            let bc: f64 = (0..cb.m())
                .map(|k| {
                    let (lo, hi) = cb.bc_region(k);
                    region_probability(stats.mean_bc, lo, hi).unwrap()
                })
                .sum();
            let dd: f64 = (0..cb.n())
                .map(|k| {
                    let (lo, hi) = cb.dd_region(k);
                    region_probability(stats.mean_dd, lo, hi).unwrap()
                })
                .sum();
            worst = worst.max((bc - 1.0).abs()).max((dd - 1.0).abs());
        }
    }
    let sum_ok = worst <= 1e-12;
    notes.push(format!("region probability sums within {worst:.1e}"));
    let pass = be_ok && matrix_ok && sum_ok;
    report(3, "closed-form spot values", pass, &notes.join(", "));
    assert!(pass);
}

#[test]
fn criterion_4_pso_convergence() {
    let mut finals = Vec::new();
    let mut flat = Vec::new();
    let mut monotone = true;
    for seed in 1..=10u64 {
        let mut cfg = Config::default();
        cfg.codebook_dims.m = 8;
        cfg.codebook_dims.n = 8;
        cfg.pso.seed = seed;
        let r = runner::design_one(&cfg).unwrap();
        let t = &r.trace;
        monotone &= t.windows(2).all(|w| w[1] >= w[0]);
        let last = t[t.len() - 1];
        finals.push(last);
        flat.push((last - t[t.len() - 101]) / last.abs());
    }
    let hi = finals.iter().cloned().fold(f64::MIN, f64::max);
    let lo = finals.iter().cloned().fold(f64::MAX, f64::min);
    let spread = (hi - lo) / hi.abs();
    let worst_flat = flat.iter().cloned().fold(0.0, f64::max);
    let pass = monotone && spread < 0.05 && worst_flat < 1e-3;
    report(
        4,
        "PSO behaviour",
        pass,
        &format!(
            "M=N=8, 10 seeds: monotone {monotone}, final gbest in [{lo:.4}, {hi:.4}], spread {:.2}%, worst last-100 gain {:.3}%",
            100.0 * spread,
            100.0 * worst_flat
        ),
    );
    assert!(pass);
}

const TREND_SEEDS: [u64; 3] = [1, 2, 3];
const TREND_MC: &str = "[mc]\nn_samples = 100000\n";

struct Trend {
    label: &'static str,
    /// +1 for non-decreasing, -1 for non-increasing.
    direction: f64,
    out: RunOutput,
}

fn sweep(extra: &str) -> RunOutput {
    let seeds = TREND_SEEDS
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    let text = format!("{TREND_MC}{extra}\nseeds = [{seeds}]\n");
    runner::run(&Config::from_toml(&text).unwrap(), Path::new(".")).unwrap()
}

fn trends() -> &'static [Trend] {
    static CELL: OnceLock<Vec<Trend>> = OnceLock::new();
    CELL.get_or_init(|| {
        vec![
            Trend {
                label: "(a) P_D^max {0,4,8,12} dB, M=N=4",
                direction: 1.0,
                out: sweep("[sweep]\naxis = \"p_d_max_db\"\nvalues = [0.0, 4.0, 8.0, 12.0]"),
            },
            Trend {
                label: "(a) P_D^max {0,4,8,12} dB, M=N=2",
                direction: 1.0,
                out: sweep("[codebook_dims]\nm = 2\nn = 2\n[sweep]\naxis = \"p_d_max_db\"\nvalues = [0.0, 4.0, 8.0, 12.0]"),
            },
            Trend {
                label: "(a) P_D^max {0,4,8,12} dB, M=N=2, noisy q=0.25",
                direction: 1.0,
                out: sweep(
                    "[codebook_dims]\nm = 2\nn = 2\n[noise]\nmode = \"noisy\"\n\
                     [sweep]\naxis = \"p_d_max_db\"\nvalues = [0.0, 4.0, 8.0, 12.0]",
                ),
            },
            Trend {
                label: "(b) outage_max {0.02,0.05,0.1,0.2}",
                direction: 1.0,
                out: sweep("[sweep]\naxis = \"outage_max\"\nvalues = [0.02, 0.05, 0.1, 0.2]"),
            },
            Trend {
                label: "(c) R_S^Cmin {0.05,0.1,0.2,0.4}",
                direction: -1.0,
                out: sweep("[sweep]\naxis = \"r_s_c_min\"\nvalues = [0.05, 0.1, 0.2, 0.4]"),
            },
            Trend {
                label: "(d) q {0,0.1,0.25}, M=N=2",
                direction: -1.0,
                out: sweep(
                    "[codebook_dims]\nm = 2\nn = 2\n[noise]\nmode = \"noisy\"\n\
                     [sweep]\naxis = \"q\"\nvalues = [0.0, 0.1, 0.25]",
                ),
            },
            Trend {
                label: "(e) bits M=N {2,4,8}",
                direction: 1.0,
                out: sweep("[sweep]\naxis = \"bits\"\nvalues = [1.0, 2.0, 3.0]"),
            },
        ]
    })
}

fn series(rows: &[SweepRow], seed: u64) -> Vec<&SweepRow> {
    rows.iter().filter(|r| r.seed == seed).collect()
}

#[test]
fn criterion_5_trends() {
    let mut pass = true;
    let mut lines = Vec::new();
    let mut flattened = false;
    for t in trends() {
        let mut ok = true;
        for seed in TREND_SEEDS {
            let rates: Vec<f64> = series(&t.out.rows, seed)
                .iter()
                .map(|r| r.report.avg_rate_d)
                .collect();
            for w in rates.windows(2) {
                let step = t.direction * (w[1] - w[0]);
                ok &= step >= -0.01 * w[0].abs().max(w[1].abs());
            }
            if t.label.starts_with("(a)") {
                let n = rates.len();
                flattened |= (rates[n - 1] - rates[n - 2]) < 0.01 * rates[n - 2];
            }
            let shown: Vec<String> = rates.iter().map(|r| format!("{r:.4}")).collect();
            lines.push(format!("{} seed {seed}: [{}]", t.label, shown.join(", ")));
        }
        pass &= ok;
        if !ok {
            lines.push(format!("{} violates its trend", t.label));
        }
    }
    pass &= flattened;
    let mut out = std::io::stdout().lock();
    for l in &lines {
        let _ = writeln!(out, "    {l}");
    }
    drop(out);
    report(
        5,
        "trend reproduction",
        pass,
        &format!("1% slack, flattening seen {flattened}"),
    );
    assert!(pass);
}

#[test]
fn criterion_6_feasibility_reevaluation() {
    let mut checked = 0;
    let mut bad = Vec::new();
    for t in trends() {
        for (row, cb) in t
            .out
            .rows
            .iter()
            .zip(&t.out.codebooks)
            .filter(|(r, _)| r.feasible)
        {
            let cfg = point_config(&t.out.manifest, row);
            let stats = cfg.scenario.stats().unwrap();
            let c = cfg.constraints.resolve().unwrap();
            let opts = EvalOptions {
                region0: cfg.codebook_dims.region0,
                ..EvalOptions::default()
            };
            let noise = cfg.noise.feedback();
            let backend: Box<dyn MetricBackend> = match noise {
                Some(noise) => Box::new(Noisy { opts, noise }),
                None => Box::new(ErrorFree { opts }),
            };
            let analytic = backend.evaluate(cb, &stats).unwrap();
            let s = analytic.slacks(&c);
            let analytic_ok =
                s.rate >= -1e-6 && s.outage >= -1e-6 && s.power_c >= -1e-6 && s.power_d >= -1e-6;
            let sim = simulate_metrics(
                cb,
                &stats,
                noise.as_ref(),
                opts.region0,
                &McConfig::new(1_000_000, 900 + row.seed),
            )
            .unwrap();
            let k = 3.0;
            let mc_ok = sim.avg_secrecy_rate_c.value + k * sim.avg_secrecy_rate_c.standard_error
                >= c.r_s_c_min - 1e-6
                && sim.outage_codebook.value - k * sim.outage_codebook.standard_error
                    <= c.outage_max + 1e-6
                && sim.avg_power_c.value - k * sim.avg_power_c.standard_error <= c.p_c_max + 1e-6
                && sim.avg_power_d.value - k * sim.avg_power_d.standard_error <= c.p_d_max + 1e-6;
            checked += 1;
            if !(analytic_ok && mc_ok) {
                bad.push(format!("{} point {}", t.label, row.point));
            }
        }
    }
    let pass = bad.is_empty() && checked > 0;
    report(6, "constraint feasibility", pass, &format!("{checked} feasible designs re-evaluated analytically and with 1e6 samples; violations {bad:?}"));
    assert!(pass);
}

fn point_config(manifest: &Config, row: &SweepRow) -> Config {
    let mut cfg = manifest.clone();
    if let (Some(axis), Some(v)) = (cfg.sweep.axis, row.value) {
        cfg.apply(axis, v).unwrap();
    }
    cfg.pso.seed = row.seed;
    cfg
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[test]
fn criterion_7_cdi_estimation() {
    let cfg = Config::default();
    let stats = cfg.scenario.stats().unwrap();
    let design = runner::design_one(&cfg).unwrap();
    let cb = &design.codebook;
    let backend = cfg.backend().unwrap();
    let mc = McConfig::new(200_000, 5);
    let seeds: Vec<u64> = (1..=20).collect();
    let gap = |est: &dyn cdi::CdiEstimator, seed: u64| {
        let e = cdi::estimate_channel(est, &stats, seed).unwrap();
        cdi::rate_gap(
            cb,
            &stats,
            &e,
            backend.as_ref(),
            None,
            cfg.codebook_dims.region0,
            &McConfig { seed, ..mc },
        )
        .unwrap()
    };
    let params = |l: usize, kappa: usize| CdiParams {
        l,
        kappa,
        ..CdiParams::default()
    };
    let median_gap =
        |est: &dyn cdi::CdiEstimator| median(seeds.iter().map(|&s| gap(est, s)).collect());

    let mut notes = Vec::new();
    let mut pass = true;
    for name in ["kde", "rkde"] {
        let medians: Vec<f64> = [10, 50, 100, 200]
            .iter()
            .map(|&l| {
                let p = params(l, 10);
                if name == "kde" {
                    median_gap(&Kde { params: p })
                } else {
                    median_gap(&Rkde { params: p })
                }
            })
            .collect();
        let ok = medians.windows(2).all(|w| w[1] <= w[0]);
        pass &= ok;
        notes.push(format!(
            "{name} median gap over L=10,50,100,200: {:?}",
            medians
                .iter()
                .map(|m| format!("{m:.4}"))
                .collect::<Vec<_>>()
        ));
    }
    for kappa in [20, 40] {
        let k = median_gap(&Kde {
            params: params(200, kappa),
        });
        let r = median_gap(&Rkde {
            params: params(200, kappa),
        });
        pass &= r <= k;
        notes.push(format!("L=200 kappa={kappa}: rkde {r:.4} vs kde {k:.4}"));
    }
    let small = median_gap(&Parametric { delta: 0.05 });
    let large = median_gap(&Parametric { delta: 0.2 });
    pass &= large > small;
    notes.push(format!(
        "parametric delta 0.05 -> {small:.4}, 0.2 -> {large:.4}"
    ));
    let mut out = std::io::stdout().lock();
    for n in &notes {
        let _ = writeln!(out, "    {n}");
    }
    drop(out);
    report(
        7,
        "CDI estimation trends",
        pass,
        "median rate_gap over 20 seeds",
    );
    assert!(pass);
}

#[test]
fn criterion_8_manifest_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    fs::write(
        &cfg,
        "[codebook_dims]\nm = 2\nn = 2\n[pso]\nn_pop = 20\nmax_it = 200\n[mc]\nn_samples = 100000\n\
         [cdi]\nmode = \"rkde\"\nL = 50\n[sweep]\naxis = \"p_d_max_db\"\nvalues = [4.0, 10.0]\nseeds = [1, 2]\n",
    )
    .unwrap();
    let run = |config: &Path, out: &PathBuf| {
        let o = Command::new(env!("CARGO_BIN_EXE_d2dsec"))
            .args([
                "sweep",
                config.to_str().unwrap(),
                "--workers",
                "2",
                "--out-dir",
                out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    run(&cfg, &first);
    run(&first.join("manifest.toml"), &second);
    let a = fs::read(first.join("results.csv")).unwrap();
    let b = fs::read(second.join("results.csv")).unwrap();
    let mut same_artifacts = true;
    for k in 0..4 {
        for name in [format!("trace_{k}.csv"), format!("codebook_{k}.toml")] {
            same_artifacts &=
                fs::read(first.join(&name)).unwrap() == fs::read(second.join(&name)).unwrap();
        }
    }
    let pass = a == b && same_artifacts;
    report(8, "determinism", pass, &format!("results.csv {} bytes, rerun from manifest identical {}, artifacts identical {same_artifacts}", a.len(), a == b));
    assert!(pass);
}
