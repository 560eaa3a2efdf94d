use d2dsec::config::Config;
use d2dsec::pso::Penalties;
use d2dsec::runner;

// The oracle corpus scenarios.
const SCENARIOS: [&str; 3] = [
    "[scenario.means]\nbc = 1.0\nbd = 0.2\ndd = 2.0\ndc = 0.2\nbe = 0.5\nde = 0.5\n",
    "[scenario.means]\nbc = 2.0\nbd = 0.5\ndd = 1.0\ndc = 0.8\nbe = 1.0\nde = 0.3\n",
    "[scenario.means]\nbc = 0.5\nbd = 0.1\ndd = 3.0\ndc = 0.4\nbe = 0.2\nde = 1.5\n",
];

fn violation(cfg: &Config) -> f64 {
    let r = runner::design_one(cfg).unwrap();
    let s = r.report.slacks(&cfg.constraints.resolve().unwrap());
    [s.rate, s.outage, s.power_c, s.power_d]
        .iter()
        .map(|v| (-v).max(0.0))
        .sum()
}

#[test]
fn larger_penalties_never_increase_violation() {
    for (k, scenario) in SCENARIOS.iter().enumerate() {
        let text = format!(
            "{scenario}[codebook_dims]\nm = 2\nn = 2\n[pso]\nn_pop = 40\nmax_it = 300\npower_repair = false\n"
        );
        let mut cfg = Config::from_toml(&text).unwrap();
        let mut per_lambda = Vec::new();
        for lambda in [1.0, 10.0, 100.0] {
            cfg.pso.penalties = Penalties {
                rate: lambda,
                outage: lambda,
                power_c: lambda,
                power_d: lambda,
            };
            per_lambda.push(violation(&cfg));
        }
        println!("scenario {k}: violation at lambda 1, 10, 100 = {per_lambda:?}");
        for w in per_lambda.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "scenario {k}: {per_lambda:?}");
        }
    }
}
