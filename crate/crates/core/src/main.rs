use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use d2dsec::codebook::Codebook;
use d2dsec::config::Config;
use d2dsec::runner::{self, RunOutput, WORKERS_ENV};
use d2dsec::Error;

#[derive(Parser)]
#[command(
    name = "d2dsec",
    version,
    about = "Limited-feedback codebook design for secure D2D underlay links"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Override the optimizer, simulation and sample seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = WORKERS_ENV)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one codebook and verify it.
    Design { config: PathBuf },
    /// Run the sweep described in the config.
    Sweep { config: PathBuf },
    /// Compare analytic and simulated metrics of a codebook file.
    Verify { codebook: PathBuf, config: PathBuf },
    /// Simulate the metrics of a codebook (designed on the fly if not given).
    Mc {
        config: PathBuf,
        #[arg(long)]
        codebook: Option<PathBuf>,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<Config, Error> {
    let mut cfg = Config::load(path)?;
    if let Some(s) = seed {
        cfg.pso.seed = s;
        cfg.mc.seed = s;
        cfg.sweep.seeds = vec![s];
    }
    Ok(cfg)
}

fn load_codebook(path: &Path) -> Result<Codebook, Error> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Codebook::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn report_run(out: &RunOutput, dir: &Path) -> Result<(), Error> {
    out.write(dir)?;
    let feasible = out.rows.iter().filter(|r| r.feasible).count();
    println!(
        "{} point(s), {feasible} feasible; results in {}",
        out.rows.len(),
        dir.join("results.csv").display()
    );
    for row in &out.rows {
        println!(
            "  point {}: avg_rate_d {:.6} feasible {} mc_agree {}",
            row.point, row.report.avg_rate_d, row.feasible, row.mc_agree
        );
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Error> {
    let c = &cli.common;
    let workers = runner::worker_count(c.workers)?;
    match &cli.command {
        Command::Design { config } => {
            let cfg = load_config(config, c.seed)?;
            let base = runner::base_dir_of(config);
            let out = runner::with_workers(workers, || runner::design(&cfg, &base))??;
            report_run(&out, &c.out_dir)
        }
        Command::Sweep { config } => {
            let cfg = load_config(config, c.seed)?;
            let base = runner::base_dir_of(config);
            let out = runner::with_workers(workers, || runner::run(&cfg, &base))??;
            report_run(&out, &c.out_dir)
        }
        Command::Verify { codebook, config } => {
            let cb = load_codebook(codebook)?;
            let cfg = load_config(config, c.seed)?;
            let v = runner::with_workers(workers, || runner::verify(&cb, &cfg))??;
            fs::create_dir_all(&c.out_dir)?;
            fs::write(c.out_dir.join("verify.csv"), v.to_csv())?;
            fs::write(c.out_dir.join("constraints.csv"), v.constraints_csv())?;
            print!("{}\n{}", v.to_csv(), v.constraints_csv());
            println!(
                "metrics {}; constraints {}",
                if v.all_agree() { "pass" } else { "fail" },
                if v.feasible { "satisfied" } else { "violated" }
            );
            Ok(())
        }
        Command::Mc { config, codebook } => {
            let cb = codebook.as_deref().map(load_codebook).transpose()?;
            let cfg = load_config(config, c.seed)?;
            let (cb, report) = runner::with_workers(workers, || runner::monte_carlo(&cfg, cb))??;
            fs::create_dir_all(&c.out_dir)?;
            fs::write(c.out_dir.join("mc.csv"), report.to_csv())?;
            fs::write(c.out_dir.join("codebook.toml"), cb.to_toml())?;
            print!("{}", report.to_csv());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // Bad input (configuration, codebook or sample files) exits with 2.
            match e {
                Error::Config(_) | Error::UnknownStrategy { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
