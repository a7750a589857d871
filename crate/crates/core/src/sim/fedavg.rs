//! Synchronous federated averaging with simulated per-client time and energy.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::CostBreakdown;
use crate::error::{invalid, Error, Result};
use crate::model::{check_k, CostWeights, Population, RngSeed};
use crate::sim::data::SyntheticDataset;
use crate::sim::logreg::{global_loss, local_sgd, ModelState, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    pub sampled: Vec<usize>,
    /// Global training loss after aggregation.
    pub loss: f64,
    /// Straggler time of this round.
    pub round_time: f64,
    /// Sum of sampled clients' energy this round.
    pub round_energy: f64,
    pub cum_time: f64,
    pub cum_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedRunRecord {
    pub k: usize,
    pub e: usize,
    pub target_loss: f64,
    pub rounds: Vec<RoundRecord>,
    /// Whether the target loss was reached.
    pub complete: bool,
}

impl FedRunRecord {
    pub fn rounds_executed(&self) -> usize {
        self.rounds.len()
    }

    pub fn total_time(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.cum_time)
    }

    pub fn total_energy(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.cum_energy)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.loss)
    }

    /// Columns `round,loss,round_time_s,round_energy_j,cum_time_s,cum_energy_j,sampled`
    /// with sampled client ids joined by `;`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "round",
            "loss",
            "round_time_s",
            "round_energy_j",
            "cum_time_s",
            "cum_energy_j",
            "sampled",
        ])?;
        for r in &self.rounds {
            let sampled: Vec<String> = r.sampled.iter().map(usize::to_string).collect();
            w.write_record([
                r.round.to_string(),
                r.loss.to_string(),
                r.round_time.to_string(),
                r.round_energy.to_string(),
                r.cum_time.to_string(),
                r.cum_energy.to_string(),
                sampled.join(";"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Population, dataset and training configuration for repeated runs.
#[derive(Debug, Clone)]
pub struct FedSimulator {
    pop: Population,
    dataset: SyntheticDataset,
    config: TrainingConfig,
}

impl FedSimulator {
    /// The population's data weights are replaced by the dataset's `n_k / n`.
    pub fn new(pop: &Population, dataset: SyntheticDataset, config: TrainingConfig) -> Result<Self> {
        dataset.validate()?;
        config.validate()?;
        if pop.len() != dataset.num_clients() {
            return invalid(format!(
                "population has {} devices, dataset {} clients",
                pop.len(),
                dataset.num_clients()
            ));
        }
        let pop = pop.with_sample_counts(&dataset.sample_counts())?;
        Ok(Self { pop, dataset, config })
    }

    pub fn population(&self) -> &Population {
        &self.pop
    }

    pub fn dataset(&self) -> &SyntheticDataset {
        &self.dataset
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn global_loss(&self, model: &ModelState) -> f64 {
        global_loss(model, &self.dataset, self.pop.data_weights(), self.config.l2)
    }

    /// Run until the configured target loss or `max_rounds`.
    pub fn run(&self, k: usize, e: usize, seed: &RngSeed) -> Result<FedRunRecord> {
        let target = self.config.target_loss;
        self.run_until(k, e, seed, self.config.max_rounds, target, |_, loss| loss <= target)
    }

    /// Run from `w_0 = 0` until `stop(round, loss)` returns true (the record is
    /// then complete) or `max_rounds` rounds have executed.
    pub fn run_until(
        &self,
        k: usize,
        e: usize,
        seed: &RngSeed,
        max_rounds: usize,
        target_loss: f64,
        mut stop: impl FnMut(usize, f64) -> bool,
    ) -> Result<FedRunRecord> {
        let n = self.pop.len();
        check_k(k as f64, n)?;
        if e == 0 {
            return Err(Error::EOutOfRange(0.0));
        }
        let mut sampling = seed.relabel(format!("{}/sampling", seed.stream_label)).rng();
        let sgd = seed.relabel(format!("{}/sgd", seed.stream_label));
        let weights = self.pop.data_weights();
        let devices = self.pop.devices();
        let ef = e as f64;

        let mut model = ModelState::for_dataset(&self.dataset);
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rounds = Vec::new();
        let (mut cum_time, mut cum_energy) = (0.0, 0.0);
        let mut complete = false;
        for r in 0..max_rounds {
            for j in 0..k {
                let pick = sampling.gen_range(j..n);
                idx.swap(j, pick);
            }
            let mut sampled = idx[..k].to_vec();
            sampled.sort_unstable();

            let locals: Vec<ModelState> = sampled
                .par_iter()
                .map(|&c| {
                    let mut rng = sgd.rng_at(&[r as u64, c as u64]);
                    local_sgd(&model, &self.dataset.clients[c], e, &self.config, r, &mut rng)
                })
                .collect();

            let mass: f64 = sampled.iter().map(|&c| weights[c]).sum();
            let mut agg = vec![0.0; model.weights.len()];
            for (&c, local) in sampled.iter().zip(&locals) {
                let coeff = weights[c] / mass;
                for (a, w) in agg.iter_mut().zip(&local.weights) {
                    *a += coeff * w;
                }
            }
            model.weights = agg;

            let loss = self.global_loss(&model);
            let round_time = sampled
                .iter()
                .map(|&c| devices[c].round_time(ef))
                .fold(f64::NEG_INFINITY, f64::max);
            let round_energy: f64 = sampled.iter().map(|&c| devices[c].round_energy(ef)).sum();
            cum_time += round_time;
            cum_energy += round_energy;
            rounds.push(RoundRecord {
                round: r + 1,
                sampled,
                loss,
                round_time,
                round_energy,
                cum_time,
                cum_energy,
            });
            if !loss.is_finite() {
                break;
            }
            if stop(r + 1, loss) {
                complete = true;
                break;
            }
        }
        Ok(FedRunRecord {
            k,
            e,
            target_loss,
            rounds,
            complete,
        })
    }
}

/// Convenience wrapper: one seeded run to the configured target loss.
pub fn fedavg_run(
    pop: &Population,
    dataset: &SyntheticDataset,
    k: usize,
    e: usize,
    config: &TrainingConfig,
    seed: &RngSeed,
) -> Result<FedRunRecord> {
    FedSimulator::new(pop, dataset.clone(), *config)?.run(k, e, seed)
}

/// Realized total time, energy and their blend for a completed run.
pub fn measure_cost_to_target(record: &FedRunRecord, weights: CostWeights) -> Result<CostBreakdown> {
    if !record.complete {
        return Err(Error::IncompleteRun);
    }
    Ok(CostBreakdown::new(record.total_time(), record.total_energy(), weights))
}
