//! L2-regularized multinomial logistic regression trained by mini-batch SGD.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::sim::data::{ClientData, SyntheticDataset};

/// Row-major `classes × (dim + 1)` weights; the last column of each row is the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub classes: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
}

impl ModelState {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            weights: vec![0.0; classes * (dim + 1)],
        }
    }

    pub fn for_dataset(ds: &SyntheticDataset) -> Self {
        Self::zeros(ds.classes, ds.dim)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    #[inline]
    fn stride(&self) -> usize {
        self.dim + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// `η0 / (1 + r)`.
    InverseRound,
    /// `η0 · decay^r`.
    Exponential { decay: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub eta0: f64,
    pub schedule: LrSchedule,
    pub l2: f64,
    pub target_loss: f64,
    pub max_rounds: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            eta0: 0.1,
            schedule: LrSchedule::InverseRound,
            l2: 1e-4,
            target_loss: 1.05,
            max_rounds: 2000,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return invalid("batch size must be >= 1");
        }
        if !(self.eta0.is_finite() && self.eta0 >= 0.0) {
            return invalid(format!("eta0 = {} must be nonnegative", self.eta0));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return invalid(format!("l2 = {} must be nonnegative", self.l2));
        }
        if let LrSchedule::Exponential { decay } = self.schedule {
            if !(decay > 0.0 && decay <= 1.0) {
                return invalid(format!("decay = {decay} must lie in (0, 1]"));
            }
        }
        if self.max_rounds == 0 {
            return invalid("max_rounds must be >= 1");
        }
        Ok(())
    }

    /// Learning rate in round `r` (zero-based).
    pub fn learning_rate(&self, r: usize) -> f64 {
        match self.schedule {
            LrSchedule::InverseRound => self.eta0 / (1.0 + r as f64),
            LrSchedule::Exponential { decay } => self.eta0 * decay.powi(r as i32),
        }
    }
}

/// Cross-entropy of one sample; writes softmax probabilities into `probs`.
#[inline]
fn sample_loss(w: &[f64], stride: usize, x: &[f64], y: usize, probs: &mut [f64]) -> f64 {
    let dim = stride - 1;
    let mut max = f64::NEG_INFINITY;
    for (c, p) in probs.iter_mut().enumerate() {
        let row = &w[c * stride..(c + 1) * stride];
        let z = row[dim] + dot(&row[..dim], x);
        *p = z;
        max = max.max(z);
    }
    let z_y = probs[y];
    let mut sum = 0.0;
    for p in probs.iter_mut() {
        *p = (*p - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    max + sum.ln() - z_y
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent accumulators so the loop vectorizes
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn l2_term(w: &[f64], l2: f64) -> f64 {
    0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Mean cross-entropy of a client's samples plus `λ/2·‖w‖²`.
pub fn client_loss(model: &ModelState, data: &ClientData, l2: f64) -> f64 {
    let mut probs = vec![0.0; model.classes];
    let stride = model.stride();
    let total: f64 = (0..data.len())
        .map(|i| sample_loss(&model.weights, stride, data.row(i, model.dim), data.labels[i] as usize, &mut probs))
        .sum();
    total / data.len() as f64 + l2_term(&model.weights, l2)
}

/// Global objective `Σ_k p_k F_k(w)`.
pub fn global_loss(model: &ModelState, ds: &SyntheticDataset, data_weights: &[f64], l2: f64) -> f64 {
    let reg = l2_term(&model.weights, l2);
    ds.clients
        .iter()
        .zip(data_weights)
        .map(|(c, p)| p * (client_loss(model, c, 0.0) + reg))
        .sum()
}

/// Regularized loss on the selected rows and its gradient (overwrites `grad`).
pub fn batch_loss_grad(model: &ModelState, data: &ClientData, rows: &[usize], l2: f64, grad: &mut [f64]) -> f64 {
    let stride = model.stride();
    let dim = model.dim;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut probs = vec![0.0; model.classes];
    let mut loss = 0.0;
    for &i in rows {
        let x = data.row(i, dim);
        let y = data.labels[i] as usize;
        loss += sample_loss(&model.weights, stride, x, y, &mut probs);
        for (c, p) in probs.iter().enumerate() {
            let coeff = p - if c == y { 1.0 } else { 0.0 };
            let g = &mut grad[c * stride..(c + 1) * stride];
            for (gj, xj) in g[..dim].iter_mut().zip(x) {
                *gj += coeff * xj;
            }
            g[dim] += coeff;
        }
    }
    let inv = 1.0 / rows.len() as f64;
    for (g, w) in grad.iter_mut().zip(&model.weights) {
        *g = *g * inv + l2 * w;
    }
    loss * inv + l2_term(&model.weights, l2)
}

/// `steps` mini-batch SGD steps on one client's data at round `round`'s
/// learning rate. Batches of `batch_size` rows are drawn without replacement;
/// clients with fewer rows use all of them.
pub fn local_sgd<R: Rng>(
    model: &ModelState,
    data: &ClientData,
    steps: usize,
    config: &TrainingConfig,
    round: usize,
    rng: &mut R,
) -> ModelState {
    let mut out = model.clone();
    let eta = config.learning_rate(round);
    let mut grad = vec![0.0; out.weights.len()];
    let n = data.len();
    let all: Vec<usize> = (0..n).collect();
    for _ in 0..steps {
        let sampled;
        let rows: &[usize] = if n <= config.batch_size {
            &all
        } else {
            sampled = index::sample(rng, n, config.batch_size).into_vec();
            &sampled
        };
        batch_loss_grad(&out, data, rows, config.l2, &mut grad);
        for (w, g) in out.weights.iter_mut().zip(&grad) {
            *w -= eta * g;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_data(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> ClientData {
        ClientData {
            features: (0..n * dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            labels: (0..n).map(|_| rng.gen_range(0..classes as u32)).collect(),
        }
    }

    /// Independent per-sample gradient: ∂/∂w_c = (softmax_c − 1{c=y})·[x, 1] + λw_c.
    fn analytic_single_sample_grad(w: &[f64], x: &[f64], y: usize, classes: usize, l2: f64) -> Vec<f64> {
        let dim = x.len();
        let logits: Vec<f64> = (0..classes)
            .map(|c| {
                let row = &w[c * (dim + 1)..(c + 1) * (dim + 1)];
                row[dim] + row[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let mut g = Vec::with_capacity(w.len());
        for c in 0..classes {
            let p = logits[c].exp() / z;
            let coeff = p - if c == y { 1.0 } else { 0.0 };
            for j in 0..dim {
                g.push(coeff * x[j] + l2 * w[c * (dim + 1) + j]);
            }
            g.push(coeff + l2 * w[c * (dim + 1) + dim]);
        }
        g
    }

    #[test]
    fn single_sample_sgd_step_matches_analytic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = toy_data(&mut rng, 1, 5, 3);
        let mut model = ModelState::zeros(3, 5);
        model.weights.iter_mut().for_each(|w| *w = rng.gen_range(-0.5..0.5));
        let cfg = TrainingConfig {
            batch_size: 1,
            eta0: 0.3,
            l2: 0.0,
            ..TrainingConfig::default()
        };
        let mut expect = model.weights.clone();
        for _ in 0..4 {
            let g = analytic_single_sample_grad(&expect, data.row(0, 5), data.labels[0] as usize, 3, 0.0);
            for (w, g) in expect.iter_mut().zip(&g) {
                *w -= 0.3 * g;
            }
        }
        let got = local_sgd(&model, &data, 4, &cfg, 0, &mut rng);
        for (a, b) in got.weights.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        assert_eq!(model.weights.len(), got.weights.len());
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = toy_data(&mut rng, 100, 4, 3);
        let mut model = ModelState::zeros(3, 4);
        model.weights[2] = 0.7;
        let cfg = TrainingConfig {
            eta0: 0.0,
            batch_size: 8,
            ..TrainingConfig::default()
        };
        let out = local_sgd(&model, &data, 10, &cfg, 3, &mut rng);
        assert_eq!(out, model);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = toy_data(&mut rng, 30, 6, 4);
        let rows: Vec<usize> = (0..30).collect();
        for _ in 0..20 {
            let mut model = ModelState::zeros(4, 6);
            model.weights.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
            let mut grad = vec![0.0; model.weights.len()];
            batch_loss_grad(&model, &data, &rows, 1e-2, &mut grad);
            let h = 1e-5;
            let mut scratch = vec![0.0; grad.len()];
            for j in 0..model.weights.len() {
                let mut plus = model.clone();
                plus.weights[j] += h;
                let mut minus = model.clone();
                minus.weights[j] -= h;
                let fd = (batch_loss_grad(&plus, &data, &rows, 1e-2, &mut scratch)
                    - batch_loss_grad(&minus, &data, &rows, 1e-2, &mut scratch))
                    / (2.0 * h);
                let rel = (fd - grad[j]).abs() / grad[j].abs().max(1e-8);
                assert!(rel < 1e-5 || (fd - grad[j]).abs() < 1e-9, "j={j}: {fd} vs {}", grad[j]);
            }
        }
    }

    #[test]
    fn zero_model_loss_is_log_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = toy_data(&mut rng, 10, 3, 10);
        let model = ModelState::zeros(10, 3);
        assert!((client_loss(&model, &data, 1.0) - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn schedules() {
        let mut cfg = TrainingConfig::default();
        assert_eq!(cfg.learning_rate(0), 0.1);
        assert_eq!(cfg.learning_rate(4), 0.02);
        cfg.schedule = LrSchedule::Exponential { decay: 0.5 };
        cfg.eta0 = 0.01;
        assert_eq!(cfg.learning_rate(2), 0.0025);
        assert!(TrainingConfig { batch_size: 0, ..cfg }.validate().is_err());
        assert!(TrainingConfig { eta0: -1.0, ..cfg }.validate().is_err());
        assert!(TrainingConfig { l2: -1.0, ..cfg }.validate().is_err());
    }
}
