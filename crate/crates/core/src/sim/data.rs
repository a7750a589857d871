//! Non-i.i.d. synthetic classification data and label-skew partitioning.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::RngSeed;

pub const FEATURE_DIM: usize = 60;
pub const NUM_CLASSES: usize = 10;

/// Samples held by one client: row-major features (`len × dim`) and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientData {
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
}

impl ClientData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize, dim: usize) -> &[f64] {
        &self.features[i * dim..(i + 1) * dim]
    }
}

/// Per-client labelled samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub dim: usize,
    pub classes: usize,
    pub clients: Vec<ClientData>,
}

impl SyntheticDataset {
    pub fn new(dim: usize, classes: usize, clients: Vec<ClientData>) -> Result<Self> {
        let ds = Self { dim, classes, clients };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients.is_empty() {
            return invalid("dataset has no clients");
        }
        for (k, c) in self.clients.iter().enumerate() {
            if c.is_empty() {
                return invalid(format!("client {k} holds no samples"));
            }
            if c.features.len() != c.len() * self.dim {
                return invalid(format!("client {k}: feature buffer does not match {} rows", c.len()));
            }
            if let Some(l) = c.labels.iter().find(|&&l| l as usize >= self.classes) {
                return invalid(format!("client {k}: label {l} outside [0, {})", self.classes));
            }
            if c.features.iter().any(|v| !v.is_finite()) {
                return invalid(format!("client {k}: non-finite feature"));
            }
        }
        Ok(())
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        self.clients.iter().map(ClientData::len).collect()
    }

    pub fn total_samples(&self) -> usize {
        self.clients.iter().map(ClientData::len).sum()
    }

    /// Rows of `client_id,label,x_1..x_dim`, no header.
    pub fn write_text<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        let mut rec = Vec::with_capacity(self.dim + 2);
        for (k, c) in self.clients.iter().enumerate() {
            for i in 0..c.len() {
                rec.clear();
                rec.push(k.to_string());
                rec.push(c.labels[i].to_string());
                rec.extend(c.row(i, self.dim).iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`Self::write_text`]. Client ids must be `0..N` and every
    /// client must appear at least once.
    pub fn read_text<R: BufRead>(input: R, classes: usize) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
        let mut clients: BTreeMap<usize, ClientData> = BTreeMap::new();
        let mut dim = None;
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse_err = |what: &str| Error::Parse(format!("line {}: bad {what}", line + 1));
            if rec.len() < 3 {
                return Err(parse_err("row length"));
            }
            let d = rec.len() - 2;
            if *dim.get_or_insert(d) != d {
                return Err(parse_err("feature count"));
            }
            let k: usize = rec[0].trim().parse().map_err(|_| parse_err("client id"))?;
            let label: u32 = rec[1].trim().parse().map_err(|_| parse_err("label"))?;
            let entry = clients.entry(k).or_insert_with(|| ClientData {
                features: Vec::new(),
                labels: Vec::new(),
            });
            entry.labels.push(label);
            for f in rec.iter().skip(2) {
                entry.features.push(f.trim().parse().map_err(|_| parse_err("feature"))?);
            }
        }
        let n = clients.len();
        if clients.keys().copied().ne(0..n) {
            return Err(Error::Parse("client ids must be contiguous from 0".into()));
        }
        Self::new(dim.unwrap_or(0), classes, clients.into_values().collect())
    }
}

/// Target distribution of per-client sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountSpec {
    pub mean: f64,
    pub std: f64,
    /// Floor on any client's count.
    pub min: usize,
}

impl CountSpec {
    /// Realized counts from a heavy-tailed (log-normal) draw, affinely matched
    /// to `mean` and `std` and floored at `min`.
    pub fn draw<R: Rng>(&self, n_clients: usize, rng: &mut R) -> Vec<usize> {
        let floor = self.min.max(1);
        if self.std <= 0.0 || n_clients == 1 {
            return vec![(self.mean.round() as usize).max(floor); n_clients];
        }
        let cv = self.std / self.mean;
        let sigma = (1.0 + cv * cv).ln().sqrt();
        let raw: Vec<f64> = (0..n_clients)
            .map(|_| (sigma * rng.sample::<f64, _>(StandardNormal)).exp())
            .collect();
        let (m, s) = mean_std(&raw);
        raw.iter()
            .map(|x| {
                let v = self.mean + self.std * (x - m) / s;
                (v.round().max(0.0) as usize).max(floor)
            })
            .collect()
    }
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, v.sqrt())
}

/// Synthetic(α, β): per-client softmax ground-truth models and feature
/// distributions.
///
/// For client `k`, a scalar `u_k ~ N(0, α)` shifts the model entries and
/// `B_k ~ N(0, β)` shifts the feature means. Model entries are
/// `u_k + √(1−a)·ω + √a·ξ_k` with `a = min(α, 1)`, `ω` shared by all clients and
/// `ξ_k` private, so every entry has unit variance around `u_k`; feature means
/// are built the same way from `B_k` and `b = min(β, 1)`. `α = β = 0` is the
/// i.i.d. limit (one shared model and feature distribution); for `α, β ≥ 1` the
/// clients are fully independent. Features are `x ~ N(v_k, Σ)` with
/// `Σ_jj = j^{−1.2}`, labels are the argmax of the client model's logits.
pub fn generate_synthetic(
    alpha: f64,
    beta: f64,
    n_clients: usize,
    counts: &CountSpec,
    seed: &RngSeed,
) -> Result<SyntheticDataset> {
    if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
        return invalid(format!("alpha = {alpha}, beta = {beta} must be nonnegative"));
    }
    if n_clients == 0 {
        return invalid("n_clients must be >= 1");
    }
    if !(counts.mean >= 1.0 && counts.std >= 0.0) {
        return invalid("count spec needs mean >= 1 and std >= 0");
    }
    let (dim, classes) = (FEATURE_DIM, NUM_CLASSES);
    let mut shared_rng = seed.rng_at(&[u64::MAX]);
    let shared_model: Vec<f64> = normals(&mut shared_rng, classes * (dim + 1));
    let shared_mean: Vec<f64> = normals(&mut shared_rng, dim);
    let sizes = counts.draw(n_clients, &mut seed.rng_at(&[u64::MAX - 1]));

    let sd: Vec<f64> = (1..=dim).map(|j| (j as f64).powf(-0.6)).collect();
    let (a, b) = (alpha.min(1.0), beta.min(1.0));
    let clients = sizes
        .iter()
        .enumerate()
        .map(|(k, &size)| {
            let mut rng = seed.rng_at(&[k as u64]);
            let u: f64 = alpha * rng.sample::<f64, _>(StandardNormal);
            let big_b: f64 = beta * rng.sample::<f64, _>(StandardNormal);
            let model: Vec<f64> = shared_model
                .iter()
                .map(|w| u + (1.0 - a).sqrt() * w + a.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let v: Vec<f64> = shared_mean
                .iter()
                .map(|m| big_b + (1.0 - b).sqrt() * m + b.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut features = Vec::with_capacity(size * dim);
            let mut labels = Vec::with_capacity(size);
            for _ in 0..size {
                let start = features.len();
                for j in 0..dim {
                    features.push(v[j] + sd[j] * rng.sample::<f64, _>(StandardNormal));
                }
                labels.push(argmax_logit(&model, &features[start..], dim, classes));
            }
            ClientData { features, labels }
        })
        .collect();
    SyntheticDataset::new(dim, classes, clients)
}

fn normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn argmax_logit(model: &[f64], x: &[f64], dim: usize, classes: usize) -> u32 {
    let mut best = (f64::NEG_INFINITY, 0u32);
    for c in 0..classes {
        let row = &model[c * (dim + 1)..(c + 1) * (dim + 1)];
        let z = row[dim] + row[..dim].iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        if z > best.0 {
            best = (z, c as u32);
        }
    }
    best.1
}

/// Flat labelled sample pool to be split among clients.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool {
    pub dim: usize,
    pub classes: usize,
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
}

impl LabeledPool {
    /// All samples of a dataset, client boundaries dropped.
    pub fn from_dataset(ds: &SyntheticDataset) -> Self {
        let mut features = Vec::with_capacity(ds.total_samples() * ds.dim);
        let mut labels = Vec::with_capacity(ds.total_samples());
        for c in &ds.clients {
            features.extend_from_slice(&c.features);
            labels.extend_from_slice(&c.labels);
        }
        Self {
            dim: ds.dim,
            classes: ds.classes,
            features,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Label-skew split: each client receives exactly `samples_per_client`
/// samples from exactly `labels_per_client` distinct labels (spread as evenly
/// as possible over its labels). Labels are assigned cyclically over a seeded
/// permutation so every label is used about equally often.
pub fn partition_by_label(
    labels_per_client: usize,
    samples_per_client: usize,
    pool: &LabeledPool,
    n_clients: usize,
    seed: &RngSeed,
) -> Result<SyntheticDataset> {
    if labels_per_client == 0 || labels_per_client > pool.classes {
        return invalid(format!(
            "labels_per_client = {labels_per_client} must lie in [1, {}]",
            pool.classes
        ));
    }
    if n_clients == 0 || samples_per_client < labels_per_client {
        return invalid("need n_clients >= 1 and samples_per_client >= labels_per_client");
    }
    let mut rng = seed.rng();
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); pool.classes];
    for (i, &l) in pool.labels.iter().enumerate() {
        by_label[l as usize].push(i);
    }
    for idx in by_label.iter_mut() {
        idx.shuffle(&mut rng);
    }
    let mut order: Vec<usize> = (0..pool.classes).collect();
    order.shuffle(&mut rng);

    let mut clients = Vec::with_capacity(n_clients);
    let mut slot = 0usize;
    for k in 0..n_clients {
        let mut features = Vec::with_capacity(samples_per_client * pool.dim);
        let mut labels = Vec::with_capacity(samples_per_client);
        for j in 0..labels_per_client {
            let label = order[slot % pool.classes];
            slot += 1;
            let take = samples_per_client / labels_per_client
                + usize::from(j < samples_per_client % labels_per_client);
            let avail = &mut by_label[label];
            if avail.len() < take {
                return invalid(format!(
                    "insufficient pool: client {k} needs {take} samples of label {label}, {} left",
                    avail.len()
                ));
            }
            for i in avail.split_off(avail.len() - take) {
                features.extend_from_slice(&pool.features[i * pool.dim..(i + 1) * pool.dim]);
                labels.push(pool.labels[i]);
            }
        }
        clients.push(ClientData { features, labels });
    }
    SyntheticDataset::new(pool.dim, pool.classes, clients)
}
