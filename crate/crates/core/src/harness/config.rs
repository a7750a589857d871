//! Experiment configuration. Every field has a default, and the defaults
//! describe the N = 100 logistic-regression simulation on Synthetic(1, 1).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DeviceProfile;
use crate::sim::TrainingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base seed for the population, dataset, probes and runs.
    pub seed: u64,
    /// Worker threads for probes, sweep cells and trade-off points; 0 uses all cores.
    pub workers: usize,
    pub output_dir: PathBuf,
    pub population: PopulationSpec,
    pub dataset: DatasetSpec,
    pub training: TrainingConfig,
    pub cost: CostSpec,
    pub estimation: EstimationSpec,
    pub optimizer: OptimizerSpec,
    pub simulate: SimulateSpec,
    pub sweep: SweepSpec,
    pub tradeoff: TradeoffSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 0,
            output_dir: PathBuf::from("out"),
            population: PopulationSpec::default(),
            dataset: DatasetSpec::default(),
            training: TrainingConfig::default(),
            cost: CostSpec::default(),
            estimation: EstimationSpec::default(),
            optimizer: OptimizerSpec::default(),
            simulate: SimulateSpec::default(),
            sweep: SweepSpec::default(),
            tradeoff: TradeoffSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSpec {
    pub n: usize,
    /// Mean unit costs; each device draws its own around these.
    pub means: DeviceProfile,
    pub rel_std: f64,
    /// Explicit per-device profiles; overrides `means`/`rel_std` when set.
    pub profiles: Option<Vec<DeviceProfile>>,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n: 100,
            means: DeviceProfile {
                t_p_unit: 0.1,
                t_m_unit: 2.0,
                e_p_unit: 1e-3,
                e_m_unit: 2e-2,
            },
            rel_std: 1.0 / 3.0,
            profiles: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        alpha: f64,
        beta: f64,
        count_mean: f64,
        count_std: f64,
        count_min: usize,
    },
    /// Label-skew split of an i.i.d. synthetic pool.
    Partition {
        labels_per_client: usize,
        samples_per_client: usize,
        pool_size: usize,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            alpha: 1.0,
            beta: 1.0,
            count_mean: 245.0,
            count_std: 362.0,
            count_min: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSpec {
    /// Weight used by `optimize`, `simulate` and `sweep`.
    pub gamma: f64,
    /// Weights visited by `tradeoff`.
    pub gammas: Vec<f64>,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            gammas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

/// Bound-generated round counts `R(F) = (A0 + B0(1+φ)E²)/((F − F*)·E) + d`
/// used instead of training runs. Each probe must give integral counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedBound {
    pub a0: f64,
    pub b0: f64,
    #[serde(default)]
    pub d: f64,
    /// `F_a − F*`
    pub gap_a: f64,
    /// `F_b − F*`
    pub gap_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSpec {
    /// `(K, E)` probes.
    pub probes: Vec<[usize; 2]>,
    pub f_a: f64,
    pub f_b: f64,
    pub max_rounds: usize,
    pub planted: Option<PlantedBound>,
}

impl Default for EstimationSpec {
    fn default() -> Self {
        Self {
            probes: vec![[10, 10], [20, 20], [30, 30], [40, 40], [50, 50], [60, 60], [80, 80]],
            f_a: 1.5,
            f_b: 1.3,
            max_rounds: 2000,
            planted: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    /// `ρ = A0/B0` used when no estimate is run.
    pub rho: f64,
    pub eps0: f64,
    pub max_iters: usize,
    /// Starting `K`; defaults to `N`.
    pub init_k: Option<f64>,
    pub init_e: f64,
    /// Inclusive `E` range of the exhaustive grid oracle (`K` spans `1..=N`).
    pub grid_e: [usize; 2],
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            rho: 3750.0,
            eps0: crate::optimizer::DEFAULT_EPS0,
            max_iters: crate::optimizer::DEFAULT_MAX_ITERS,
            init_k: None,
            init_e: crate::optimizer::DEFAULT_INIT_E,
            grid_e: [1, 200],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSpec {
    pub k: usize,
    pub e: usize,
    /// Replicate index; runs are seeded by `(seed, replicate)`.
    pub replicate: u64,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            k: 10,
            e: 20,
            replicate: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub ks: Vec<usize>,
    pub es: Vec<usize>,
    /// Replicates per cell.
    pub seeds: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            ks: vec![1, 2, 4, 7, 10, 20, 50, 100],
            es: vec![10, 20, 30, 40, 60],
            seeds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradeoffSpec {
    /// Replicates per proposed point.
    pub seeds: usize,
    /// Estimate `ρ` from the probes instead of using `optimizer.rho`.
    pub estimate_rho: bool,
}

impl Default for TradeoffSpec {
    fn default() -> Self {
        Self {
            seeds: 20,
            estimate_rho: false,
        }
    }
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn check_point(what: &str, k: usize, e: usize, n: usize) -> Result<()> {
    if k < 1 || k > n {
        return Err(schema(format!("{what}: K = {k} outside [1, {n}]")));
    }
    if e < 1 {
        return Err(schema(format!("{what}: E = {e} must be >= 1")));
    }
    Ok(())
}

fn check_gamma(what: &str, g: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&g) {
        return Err(schema(format!("{what}: gamma = {g} outside [0, 1]")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| schema(e.to_string()))
    }

    /// Consistency checks run before any computation.
    pub fn validate(&self) -> Result<()> {
        let n = self.population.n;
        if n == 0 {
            return Err(schema("population.n must be >= 1"));
        }
        self.population
            .means
            .validate()
            .map_err(|e| schema(format!("population.means: {e}")))?;
        if !(0.0..1.0).contains(&self.population.rel_std) {
            return Err(schema(format!(
                "population.rel_std = {} outside [0, 1)",
                self.population.rel_std
            )));
        }
        if let Some(p) = &self.population.profiles {
            if p.len() != n {
                return Err(schema(format!("population.profiles has {} entries, n = {n}", p.len())));
            }
            for d in p {
                d.validate().map_err(|e| schema(format!("population.profiles: {e}")))?;
            }
        }
        match self.dataset {
            DatasetSpec::Synthetic {
                alpha,
                beta,
                count_mean,
                count_std,
                ..
            } => {
                if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
                    return Err(schema("dataset: alpha and beta must be nonnegative"));
                }
                if !(count_mean >= 1.0 && count_std >= 0.0) {
                    return Err(schema("dataset: count_mean >= 1 and count_std >= 0 required"));
                }
            }
            DatasetSpec::Partition {
                labels_per_client,
                samples_per_client,
                pool_size,
            } => {
                if labels_per_client == 0 || samples_per_client < labels_per_client || pool_size == 0 {
                    return Err(schema(
                        "dataset: need labels_per_client >= 1, samples_per_client >= labels_per_client, pool_size >= 1",
                    ));
                }
            }
        }
        self.training
            .validate()
            .map_err(|e| schema(format!("training: {e}")))?;
        if !(self.training.target_loss.is_finite()) {
            return Err(schema("training.target_loss must be finite"));
        }

        check_gamma("cost.gamma", self.cost.gamma)?;
        for &g in &self.cost.gammas {
            check_gamma("cost.gammas", g)?;
        }

        let est = &self.estimation;
        for &[k, e] in &est.probes {
            check_point("estimation.probes", k, e, n)?;
        }
        if !(est.f_b < est.f_a) || !est.f_b.is_finite() {
            return Err(schema(format!(
                "estimation: need f_b < f_a, got f_a = {}, f_b = {}",
                est.f_a, est.f_b
            )));
        }
        if est.max_rounds == 0 {
            return Err(schema("estimation.max_rounds must be >= 1"));
        }
        if let Some(p) = est.planted {
            let ok = p.a0 > 0.0 && p.b0 > 0.0 && p.d >= 0.0 && p.gap_a > 0.0 && p.gap_b > 0.0;
            if !ok || !(p.gap_b < p.gap_a) {
                return Err(schema("estimation.planted: need a0, b0, gaps > 0, d >= 0 and gap_b < gap_a"));
            }
        }

        let opt = &self.optimizer;
        if !(opt.rho.is_finite() && opt.rho > 0.0) {
            return Err(schema(format!("optimizer.rho = {} must be positive", opt.rho)));
        }
        if !(opt.eps0 > 0.0) || opt.max_iters == 0 {
            return Err(schema("optimizer: eps0 > 0 and max_iters >= 1 required"));
        }
        if let Some(k) = opt.init_k {
            if !(1.0..=n as f64).contains(&k) {
                return Err(schema(format!("optimizer.init_k = {k} outside [1, {n}]")));
            }
        }
        if !(opt.init_e >= 1.0 && opt.init_e.is_finite()) {
            return Err(schema("optimizer.init_e must be >= 1"));
        }
        if opt.grid_e[0] < 1 || opt.grid_e[1] < opt.grid_e[0] {
            return Err(schema("optimizer.grid_e must be a range [lo, hi] with 1 <= lo <= hi"));
        }

        check_point("simulate", self.simulate.k, self.simulate.e, n)?;

        if self.sweep.ks.is_empty() || self.sweep.es.is_empty() {
            return Err(schema("sweep.ks and sweep.es must be nonempty"));
        }
        for &k in &self.sweep.ks {
            for &e in &self.sweep.es {
                check_point("sweep", k, e, n)?;
            }
        }
        if self.sweep.seeds == 0 || self.tradeoff.seeds == 0 {
            return Err(schema("sweep.seeds and tradeoff.seeds must be >= 1"));
        }
        Ok(())
    }
}
