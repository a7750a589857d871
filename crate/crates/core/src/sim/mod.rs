//! Federated averaging simulator: synthetic non-i.i.d. data, multinomial
//! logistic regression and per-round cost accounting.

pub mod data;
pub mod fedavg;
pub mod logreg;

pub use data::{generate_synthetic, partition_by_label, ClientData, CountSpec, LabeledPool, SyntheticDataset};
pub use fedavg::{fedavg_run, measure_cost_to_target, FedRunRecord, FedSimulator, RoundRecord};
pub use logreg::{local_sgd, LrSchedule, ModelState, TrainingConfig};
