//! Seeded pipelines over one experiment configuration.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{estimate_ratio, planted_rounds, probe_pair, write_samples_csv, EstimationReport, EstimationSample};
use crate::harness::config::{DatasetSpec, ExperimentConfig, PlantedBound};
use crate::model::{build_population, draw_heterogeneous_population, ControlPoint, CostWeights, Population, RngSeed};
use crate::optimizer::{AcsTrace, P3Problem};
use crate::sim::{generate_synthetic, partition_by_label, CountSpec, FedRunRecord, FedSimulator, LabeledPool};

/// One named output, serialized as CSV and as JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub csv: Vec<u8>,
    pub json: String,
}

impl Artifact {
    fn new(name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>, json: &impl Serialize) -> Result<Self> {
        let mut csv = Vec::new();
        write(&mut csv)?;
        let json = serde_json::to_string_pretty(json).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(Self {
            name: name.to_string(),
            csv,
            json,
        })
    }
}

/// Outcome of a single realized run, independent of `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSummary {
    pub rounds: usize,
    pub time: f64,
    pub energy: f64,
    pub complete: bool,
}

impl From<&FedRunRecord> for RunSummary {
    fn from(r: &FedRunRecord) -> Self {
        Self {
            rounds: r.rounds_executed(),
            time: r.total_time(),
            energy: r.total_energy(),
            complete: r.complete,
        }
    }
}

/// Means over the replicates of one `(K, E)` point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointStats {
    pub k: usize,
    pub e: usize,
    pub runs: usize,
    pub completed: usize,
    pub mean_rounds: f64,
    pub mean_time: f64,
    pub mean_energy: f64,
    /// `(1−γ)·mean_time + γ·mean_energy`
    pub mean_cost: f64,
}

impl PointStats {
    fn new(k: usize, e: usize, runs: &[RunSummary], weights: CostWeights) -> Self {
        let m = runs.len() as f64;
        let mean = |f: &dyn Fn(&RunSummary) -> f64| runs.iter().map(f).sum::<f64>() / m;
        let (mean_time, mean_energy) = (mean(&|r| r.time), mean(&|r| r.energy));
        Self {
            k,
            e,
            runs: runs.len(),
            completed: runs.iter().filter(|r| r.complete).count(),
            mean_rounds: mean(&|r| r.rounds as f64),
            mean_time,
            mean_energy,
            mean_cost: weights.blend(mean_time, mean_energy),
        }
    }

    /// Every replicate reached the target loss.
    pub fn complete(&self) -> bool {
        self.completed == self.runs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateOutcome {
    pub samples: Vec<EstimationSample>,
    pub report: EstimationReport,
}

impl EstimateOutcome {
    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        let report = Artifact::new(
            "estimate_report",
            |out| {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(["ratio_rho", "pairs_used", "discarded_pairs", "overhead_iterations"])?;
                w.write_record([
                    self.report.ratio_rho.to_string(),
                    self.report.pair_estimates.len().to_string(),
                    self.report.discarded_pairs.to_string(),
                    self.report.overhead_iterations.to_string(),
                ])?;
                w.flush()?;
                Ok(())
            },
            &self.report,
        )?;
        Ok(vec![samples_artifact(&self.samples)?, report])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeOutcome {
    pub gamma: f64,
    pub rho: f64,
    pub k_star: usize,
    pub e_star: usize,
    /// Relative objective at `(K*, E*)`.
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Exhaustive integer argmin of the same objective.
    pub grid_k: usize,
    pub grid_e: usize,
    pub grid_objective: f64,
    #[serde(skip)]
    pub trace: AcsTrace,
    #[serde(skip)]
    problem: Option<P3Problem>,
}

impl OptimizeOutcome {
    pub fn point(&self) -> ControlPoint {
        ControlPoint::integer(self.k_star, self.e_star)
    }

    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        let problem = self.problem.expect("set by Experiment::optimize");
        let trace = Artifact::new(
            "optimize_trace",
            |out| self.trace.write_csv(&problem, out),
            &self.trace,
        )?;
        let summary = Artifact::new(
            "optimize_summary",
            |out| {
                let mut w = csv::Writer::from_writer(out);
                w.write_record([
                    "gamma",
                    "rho",
                    "k_star",
                    "e_star",
                    "objective",
                    "converged",
                    "iterations",
                    "grid_k",
                    "grid_e",
                    "grid_objective",
                ])?;
                w.write_record([
                    self.gamma.to_string(),
                    self.rho.to_string(),
                    self.k_star.to_string(),
                    self.e_star.to_string(),
                    self.objective.to_string(),
                    self.converged.to_string(),
                    self.iterations.to_string(),
                    self.grid_k.to_string(),
                    self.grid_e.to_string(),
                    self.grid_objective.to_string(),
                ])?;
                w.flush()?;
                Ok(())
            },
            self,
        )?;
        Ok(vec![trace, summary])
    }
}

pub fn samples_artifact(samples: &[EstimationSample]) -> Result<Artifact> {
    Artifact::new("estimate_samples", |out| write_samples_csv(samples, out), &samples)
}

pub fn simulate_artifacts(record: &FedRunRecord) -> Result<Vec<Artifact>> {
    Ok(vec![Artifact::new("simulate_run", |out| record.write_csv(out), record)?])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutcome {
    pub gamma: f64,
    /// Row-major over `ks × es`.
    pub cells: Vec<PointStats>,
    /// Index of the cheapest complete cell.
    pub argmin: Option<usize>,
}

impl SweepOutcome {
    fn new(gamma: f64, cells: Vec<PointStats>) -> Self {
        let mut argmin: Option<usize> = None;
        for (i, c) in cells.iter().enumerate() {
            if c.complete() && argmin.is_none_or(|b| c.mean_cost < cells[b].mean_cost) {
                argmin = Some(i);
            }
        }
        Self { gamma, cells, argmin }
    }

    pub fn best(&self) -> Option<&PointStats> {
        self.argmin.map(|i| &self.cells[i])
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "k",
            "e",
            "seeds",
            "completed",
            "mean_rounds",
            "mean_time_s",
            "mean_energy_j",
            "mean_cost",
            "incomplete",
            "argmin",
        ])?;
        for (i, c) in self.cells.iter().enumerate() {
            w.write_record([
                c.k.to_string(),
                c.e.to_string(),
                c.runs.to_string(),
                c.completed.to_string(),
                c.mean_rounds.to_string(),
                c.mean_time.to_string(),
                c.mean_energy.to_string(),
                c.mean_cost.to_string(),
                (!c.complete()).to_string(),
                (self.argmin == Some(i)).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        Ok(vec![Artifact::new("sweep", |out| self.write_csv(out), self)?])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub gamma: f64,
    pub k_star: Option<usize>,
    pub e_star: Option<usize>,
    pub stats: Option<PointStats>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffOutcome {
    pub rho: f64,
    pub rho_estimated: bool,
    pub rows: Vec<TradeoffRow>,
}

impl TradeoffOutcome {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "gamma",
            "k_star",
            "e_star",
            "mean_time_s",
            "mean_energy_j",
            "mean_cost",
            "seeds",
            "completed",
            "error",
        ])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for r in &self.rows {
            let s = r.stats.as_ref();
            w.write_record([
                r.gamma.to_string(),
                opt(r.k_star.map(|v| v.to_string())),
                opt(r.e_star.map(|v| v.to_string())),
                opt(s.map(|s| s.mean_time.to_string())),
                opt(s.map(|s| s.mean_energy.to_string())),
                opt(s.map(|s| s.mean_cost.to_string())),
                opt(s.map(|s| s.runs.to_string())),
                opt(s.map(|s| s.completed.to_string())),
                opt(r.error.clone()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        Ok(vec![Artifact::new("tradeoff", |out| self.write_csv(out), self)?])
    }
}

/// A built experiment: population, dataset, simulator, worker pool and a
/// cache of realized runs keyed by `(K, E, replicate)`.
pub struct Experiment {
    config: ExperimentConfig,
    sim: FedSimulator,
    pool: rayon::ThreadPool,
    cache: Mutex<HashMap<(usize, usize, u64), RunSummary>>,
}

impl Experiment {
    pub fn build(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let n = config.population.n;
        let seed = config.seed;
        let dataset = match config.dataset {
            DatasetSpec::Synthetic {
                alpha,
                beta,
                count_mean,
                count_std,
                count_min,
            } => {
                let counts = CountSpec {
                    mean: count_mean,
                    std: count_std,
                    min: count_min,
                };
                generate_synthetic(alpha, beta, n, &counts, &RngSeed::new(seed, "data"))?
            }
            DatasetSpec::Partition {
                labels_per_client,
                samples_per_client,
                pool_size,
            } => {
                let counts = CountSpec {
                    mean: pool_size as f64,
                    std: 0.0,
                    min: 1,
                };
                let iid = generate_synthetic(0.0, 0.0, 1, &counts, &RngSeed::new(seed, "pool"))?;
                let pool = LabeledPool::from_dataset(&iid);
                partition_by_label(labels_per_client, samples_per_client, &pool, n, &RngSeed::new(seed, "data"))?
            }
        };
        let pop = match &config.population.profiles {
            Some(profiles) => build_population(profiles.clone(), &dataset.sample_counts())?,
            None => draw_heterogeneous_population(
                n,
                config.population.means,
                config.population.rel_std,
                &RngSeed::new(seed, "costs"),
            )?,
        };
        let sim = FedSimulator::new(&pop, dataset, config.training)?;
        let mut builder = rayon::ThreadPoolBuilder::new();
        if config.workers > 0 {
            builder = builder.num_threads(config.workers);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(Self {
            config,
            sim,
            pool,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn simulator(&self) -> &FedSimulator {
        &self.sim
    }

    /// Cost population with data weights from the dataset.
    pub fn population(&self) -> &Population {
        self.sim.population()
    }

    /// Seed of replicate `rep`; shared by every `(K, E)` so comparisons use
    /// common random numbers.
    pub fn run_seed(&self, rep: u64) -> RngSeed {
        RngSeed::new(self.config.seed, format!("run{rep}"))
    }

    /// Estimation samples: probe runs, or planted counts in test mode.
    pub fn probe(&self) -> Result<Vec<EstimationSample>> {
        let est = &self.config.estimation;
        if est.probes.is_empty() {
            return Err(Error::Config("estimation.probes is empty".into()));
        }
        let n = self.config.population.n;
        match est.planted {
            Some(plant) => est
                .probes
                .iter()
                .map(|&[k, e]| planted_sample(&plant, n, k, e, self.config.seed))
                .collect(),
            None => {
                let seed = RngSeed::new(self.config.seed, "probe");
                self.pool.install(|| {
                    est.probes
                        .par_iter()
                        .map(|&[k, e]| probe_pair(&self.sim, k, e, est.f_a, est.f_b, est.max_rounds, &seed))
                        .collect()
                })
            }
        }
    }

    pub fn estimate(&self) -> Result<EstimateOutcome> {
        let samples = self.probe()?;
        let report = estimate_ratio(&samples, self.config.population.n)?;
        Ok(EstimateOutcome { samples, report })
    }

    pub fn optimize(&self, gamma: f64, rho: f64) -> Result<OptimizeOutcome> {
        let opt = &self.config.optimizer;
        let n = self.config.population.n;
        let problem = P3Problem::new(self.population(), CostWeights::new(gamma)?, rho)?;
        let init = ControlPoint::new(opt.init_k.unwrap_or(n as f64), opt.init_e);
        let trace = problem.acs(init, opt.eps0, opt.max_iters)?;
        let (k_star, e_star) = trace.final_integer_point.as_usize();
        let (grid, grid_objective) = problem.grid_argmin(1..=n, opt.grid_e[0]..=opt.grid_e[1])?;
        let (grid_k, grid_e) = grid.as_usize();
        Ok(OptimizeOutcome {
            gamma,
            rho,
            k_star,
            e_star,
            objective: trace.objective_at_final,
            converged: trace.converged,
            iterations: trace.iterates.len() - 1,
            grid_k,
            grid_e,
            grid_objective,
            trace,
            problem: Some(problem),
        })
    }

    /// One run at `(k, e)` for the configured replicate.
    pub fn simulate(&self, k: usize, e: usize) -> Result<FedRunRecord> {
        let seed = self.run_seed(self.config.simulate.replicate);
        self.pool.install(|| self.sim.run(k, e, &seed))
    }

    /// Realized runs for every point and replicates `0..reps`, in point order.
    /// Runs already in the cache are reused.
    pub fn runs(&self, points: &[(usize, usize)], reps: usize) -> Result<Vec<Vec<RunSummary>>> {
        let mut jobs: Vec<(usize, usize, u64)> = Vec::new();
        {
            let cache = self.cache.lock().expect("cache lock");
            for &(k, e) in points {
                for rep in 0..reps as u64 {
                    let key = (k, e, rep);
                    if !cache.contains_key(&key) && !jobs.contains(&key) {
                        jobs.push(key);
                    }
                }
            }
        }
        let done: Vec<((usize, usize, u64), RunSummary)> = self.pool.install(|| {
            jobs.par_iter()
                .map(|&(k, e, rep)| {
                    let rec = self.sim.run(k, e, &self.run_seed(rep))?;
                    Ok(((k, e, rep), RunSummary::from(&rec)))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut cache = self.cache.lock().expect("cache lock");
        cache.extend(done);
        Ok(points
            .iter()
            .map(|&(k, e)| (0..reps as u64).map(|rep| cache[&(k, e, rep)]).collect())
            .collect())
    }

    fn sweep_points(&self) -> Vec<(usize, usize)> {
        let s = &self.config.sweep;
        s.ks.iter().flat_map(|&k| s.es.iter().map(move |&e| (k, e))).collect()
    }

    pub fn sweep(&self, gamma: f64) -> Result<SweepOutcome> {
        Ok(self.sweep_many(&[gamma])?.remove(0))
    }

    /// Sweeps for several weights over the same realized runs.
    pub fn sweep_many(&self, gammas: &[f64]) -> Result<Vec<SweepOutcome>> {
        let points = self.sweep_points();
        let runs = self.runs(&points, self.config.sweep.seeds)?;
        gammas
            .iter()
            .map(|&g| {
                let w = CostWeights::new(g)?;
                let cells = points
                    .iter()
                    .zip(&runs)
                    .map(|(&(k, e), r)| PointStats::new(k, e, r, w))
                    .collect();
                Ok(SweepOutcome::new(g, cells))
            })
            .collect()
    }

    /// Optimize at every configured weight and measure each proposed point.
    /// `rho = None` uses the probe estimate when `tradeoff.estimate_rho` is
    /// set and `optimizer.rho` otherwise. A failing weight yields a row with
    /// an error and does not stop the others.
    pub fn tradeoff(&self, rho: Option<f64>) -> Result<TradeoffOutcome> {
        let (rho, rho_estimated) = match rho {
            Some(r) => (r, false),
            None if self.config.tradeoff.estimate_rho => (self.estimate()?.report.ratio_rho, true),
            None => (self.config.optimizer.rho, false),
        };
        let proposals: Vec<(f64, Result<OptimizeOutcome>)> = self
            .config
            .cost
            .gammas
            .iter()
            .map(|&g| (g, self.optimize(g, rho)))
            .collect();
        let points: Vec<(usize, usize)> = proposals
            .iter()
            .filter_map(|(_, p)| p.as_ref().ok().map(|o| (o.k_star, o.e_star)))
            .collect();
        let runs = self.runs(&points, self.config.tradeoff.seeds);
        let mut by_point: HashMap<(usize, usize), Vec<RunSummary>> = HashMap::new();
        let run_error = match runs {
            Ok(runs) => {
                by_point.extend(points.iter().copied().zip(runs));
                None
            }
            Err(e) => Some(e.to_string()),
        };
        let rows = proposals
            .into_iter()
            .map(|(gamma, p)| match p {
                Err(e) => TradeoffRow {
                    gamma,
                    k_star: None,
                    e_star: None,
                    stats: None,
                    error: Some(e.to_string()),
                },
                Ok(o) => {
                    let stats = by_point.get(&(o.k_star, o.e_star)).map(|r| {
                        PointStats::new(o.k_star, o.e_star, r, CostWeights::new(gamma).expect("validated"))
                    });
                    TradeoffRow {
                        gamma,
                        k_star: Some(o.k_star),
                        e_star: Some(o.e_star),
                        error: if stats.is_none() { run_error.clone() } else { None },
                        stats,
                    }
                }
            })
            .collect();
        Ok(TradeoffOutcome {
            rho,
            rho_estimated,
            rows,
        })
    }
}

fn planted_sample(plant: &PlantedBound, n: usize, k: usize, e: usize, seed: u64) -> Result<EstimationSample> {
    let count = |gap: f64| -> Result<usize> {
        let r = planted_rounds(plant.a0, plant.b0, plant.d, n, k, e, gap);
        let rounded = r.round();
        if (r - rounded).abs() > 1e-9 * r.max(1.0) || rounded < 1.0 {
            return Err(Error::Config(format!(
                "planted bound gives non-integral round count {r} at K = {k}, E = {e}"
            )));
        }
        Ok(rounded as usize)
    };
    Ok(EstimationSample {
        k_i: k,
        e_i: e,
        rounds_to_fa: count(plant.gap_a)?,
        rounds_to_fb: count(plant.gap_b)?,
        seed,
    })
}
