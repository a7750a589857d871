//! `fedcost`: estimate the bound ratio, choose `(K, E)`, and run FedAvg
//! simulations, sweeps and γ trade-offs from a TOML experiment config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedcost::estimator::estimate_ratio;
use fedcost::harness::{samples_artifact, simulate_artifacts, Artifact, EstimateOutcome, Experiment, ExperimentConfig};
use fedcost::Error;

const EXIT_OTHER: u8 = 1;
const EXIT_SCHEMA: u8 = 2;
const EXIT_UNREACHABLE: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "fedcost", version, about = "Cost-aware choice of participants and local iterations for FedAvg")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the base seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Override the cost weight (for `tradeoff`: run this single weight).
    #[arg(long, global = true, value_name = "F")]
    gamma: Option<f64>,
    /// Output directory for CSV (and JSON) files.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Also write a JSON mirror of every CSV.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the estimation probes and estimate rho = A0/B0.
    Estimate,
    /// Choose (K*, E*) by alternate convex search.
    Optimize {
        /// Bound ratio; defaults to `optimizer.rho`.
        #[arg(long)]
        rho: Option<f64>,
    },
    /// One seeded FedAvg run to the target loss.
    Simulate {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        e: Option<usize>,
    },
    /// Realized cost to target over a (K, E) grid.
    Sweep,
    /// Optimize and measure the proposed point for each cost weight.
    Tradeoff {
        /// Bound ratio; defaults to the probe estimate or `optimizer.rho`.
        #[arg(long)]
        rho: Option<f64>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::KOutOfRange { .. } | Error::EOutOfRange(_) | Error::Parse(_) => {
            EXIT_SCHEMA
        }
        Error::UnreachableLoss { .. } | Error::IncompleteRun => EXIT_UNREACHABLE,
        _ => EXIT_OTHER,
    }
}

fn load_config(cli: &Cli) -> fedcost::Result<ExperimentConfig> {
    let mut cfg = match &cli.common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let c = &cli.common;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = c.workers {
        cfg.workers = workers;
    }
    if let Some(dir) = &c.output {
        cfg.output_dir = dir.clone();
    }
    if let Some(g) = c.gamma {
        cfg.cost.gamma = g;
        cfg.cost.gammas = vec![g];
    }
    if let Command::Simulate { k, e } = cli.command {
        cfg.simulate.k = k.unwrap_or(cfg.simulate.k);
        cfg.simulate.e = e.unwrap_or(cfg.simulate.e);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_artifacts(dir: &Path, artifacts: &[Artifact], json: bool) -> fedcost::Result<()> {
    std::fs::create_dir_all(dir)?;
    for a in artifacts {
        let path = dir.join(format!("{}.csv", a.name));
        std::fs::write(&path, &a.csv)?;
        eprintln!("wrote {}", path.display());
        if json {
            let path = dir.join(format!("{}.json", a.name));
            std::fs::write(&path, &a.json)?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> fedcost::Result<u8> {
    let cfg = load_config(cli)?;
    let out = cfg.output_dir.clone();
    let json = cli.common.json;
    let exp = Experiment::build(cfg)?;
    let cfg = exp.config();
    match cli.command {
        Command::Estimate => {
            let samples = exp.probe()?;
            for s in &samples {
                println!("probe K={} E={}: R_a={} R_b={}", s.k_i, s.e_i, s.rounds_to_fa, s.rounds_to_fb);
            }
            let report = match estimate_ratio(&samples, cfg.population.n) {
                Ok(r) => r,
                Err(e) => {
                    write_artifacts(&out, &[samples_artifact(&samples)?], json)?;
                    return Err(e);
                }
            };
            println!(
                "rho = {} ({} pairs used, {} discarded)",
                report.ratio_rho,
                report.pair_estimates.len(),
                report.discarded_pairs
            );
            println!("overhead_iterations = {}", report.overhead_iterations);
            let o = EstimateOutcome { samples, report };
            write_artifacts(&out, &o.artifacts()?, json)?;
            Ok(0)
        }
        Command::Optimize { rho } => {
            let o = exp.optimize(cfg.cost.gamma, rho.unwrap_or(cfg.optimizer.rho))?;
            println!("K* = {}, E* = {}", o.k_star, o.e_star);
            println!("grid argmin: K = {}, E = {}", o.grid_k, o.grid_e);
            write_artifacts(&out, &o.artifacts()?, json)?;
            if o.converged {
                Ok(0)
            } else {
                eprintln!("alternate convex search did not converge in {} iterations", o.iterations);
                Ok(EXIT_NOT_CONVERGED)
            }
        }
        Command::Simulate { .. } => {
            let rec = exp.simulate(cfg.simulate.k, cfg.simulate.e)?;
            println!(
                "K={} E={} rounds={} complete={} loss={} time_s={} energy_j={}",
                rec.k,
                rec.e,
                rec.rounds_executed(),
                rec.complete,
                rec.final_loss().unwrap_or(f64::NAN),
                rec.total_time(),
                rec.total_energy()
            );
            write_artifacts(&out, &simulate_artifacts(&rec)?, json)?;
            if rec.complete {
                Ok(0)
            } else {
                eprintln!("target loss {} not reached", rec.target_loss);
                Ok(EXIT_UNREACHABLE)
            }
        }
        Command::Sweep => {
            let o = exp.sweep(cfg.cost.gamma)?;
            match o.best() {
                Some(b) => println!("argmin: K={} E={} mean_cost={}", b.k, b.e, b.mean_cost),
                None => println!("no cell reached the target loss"),
            }
            write_artifacts(&out, &o.artifacts()?, json)?;
            Ok(0)
        }
        Command::Tradeoff { rho } => {
            let o = exp.tradeoff(rho)?;
            println!("rho = {}{}", o.rho, if o.rho_estimated { " (estimated)" } else { "" });
            for r in &o.rows {
                match (&r.stats, &r.error) {
                    (Some(s), _) => println!(
                        "gamma={} K*={} E*={} time_s={} energy_j={} completed={}/{}",
                        r.gamma, s.k, s.e, s.mean_time, s.mean_energy, s.completed, s.runs
                    ),
                    (None, err) => println!("gamma={} failed: {}", r.gamma, err.as_deref().unwrap_or("unknown")),
                }
            }
            write_artifacts(&out, &o.artifacts()?, json)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
