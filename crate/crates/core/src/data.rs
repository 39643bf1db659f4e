//! Synthetic data and non-IID, unbalanced partitioning across clients.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::models::{ModelKind, Sample};
use crate::params::ParamVector;
use crate::rng::{Purpose, SeedTree};

/// `K` client shards `P_1..P_K` with sample counts `n_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset {
    shards: Vec<Vec<Sample>>,
    total: usize,
    weights: Vec<f64>,
}

impl FederatedDataset {
    pub fn new(shards: Vec<Vec<Sample>>) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::Empty("dataset has no clients"));
        }
        if let Some(k) = shards.iter().position(|s| s.is_empty()) {
            return Err(Error::invalid(format!("client {k} has an empty shard")));
        }
        let total: usize = shards.iter().map(Vec::len).sum();
        let weights = shards
            .iter()
            .map(|s| s.len() as f64 / total as f64)
            .collect();
        Ok(Self {
            shards,
            total,
            weights,
        })
    }

    pub fn client_count(&self) -> usize {
        self.shards.len()
    }

    pub fn shards(&self) -> &[Vec<Sample>] {
        &self.shards
    }

    pub fn shard(&self, k: usize) -> &[Sample] {
        &self.shards[k]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }

    /// `n = Σ n_k`.
    pub fn total(&self) -> usize {
        self.total
    }

    /// `n_k / n` for every client.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// All samples in client order.
    pub fn pooled(&self) -> Vec<Sample> {
        self.shards.iter().flatten().cloned().collect()
    }
}

/// How a pooled sample list is split into client shards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    /// Shuffled, balanced split.
    Iid,
    /// Sort by label, cut into `K·shards_per_client` contiguous shards, deal
    /// `shards_per_client` shards to each client.
    LabelShards { shards_per_client: usize },
    /// Shuffled, with `n_k ∝ k^(−exponent)` and `n_k ≥ min_size`.
    PowerLaw { exponent: f64, min_size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub scheme: Scheme,
    pub clients: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::invalid("partition needs at least one client"));
        }
        match self.scheme {
            Scheme::Iid => {}
            Scheme::LabelShards { shards_per_client } => {
                if shards_per_client == 0 {
                    return Err(Error::invalid("shards_per_client must be >= 1"));
                }
            }
            Scheme::PowerLaw { exponent, min_size } => {
                if !(exponent > 0.0) || !exponent.is_finite() {
                    return Err(Error::invalid(format!(
                        "power-law exponent must be > 0, got {exponent}"
                    )));
                }
                if min_size == 0 {
                    return Err(Error::invalid("minimum shard size must be >= 1"));
                }
            }
        }
        Ok(())
    }
}

/// Parameters of the synthetic generators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisSpec {
    pub kind: ModelKind,
    pub n_total: usize,
    pub input_dim: usize,
    /// Additive target noise for regression targets.
    pub noise_std: f64,
    /// Probability of flipping a logistic label.
    pub label_noise: f64,
    /// Minimum `|w_plantedᵀx| / ‖w_planted‖` for logistic samples.
    pub margin: f64,
    pub seed: u64,
}

impl SynthesisSpec {
    pub fn new(kind: ModelKind, n_total: usize, input_dim: usize, seed: u64) -> Self {
        Self {
            kind,
            n_total,
            input_dim,
            noise_std: 0.1,
            label_noise: 0.0,
            margin: 0.0,
            seed,
        }
    }
}

/// Deterministic synthetic samples with default noise settings.
pub fn generate_synthetic(
    kind: ModelKind,
    n_total: usize,
    input_dim: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    Ok(generate_planted(&SynthesisSpec::new(kind, n_total, input_dim, seed))?.0)
}

/// Synthetic samples plus the planted weight vector that generated them.
///
/// Features are standard normal. Logistic labels are `sign(w_plantedᵀx)`
/// (optionally flipped); quadratic targets are `w_plantedᵀx + N(0, σ²)`;
/// mlp1 targets are `tanh(w_plantedᵀx/√p) + N(0, σ²)`.
pub fn generate_planted(spec: &SynthesisSpec) -> Result<(Vec<Sample>, ParamVector)> {
    if spec.n_total == 0 || spec.input_dim == 0 {
        return Err(Error::invalid("n_total and input_dim must be >= 1"));
    }
    if !(0.0..=0.5).contains(&spec.label_noise) {
        return Err(Error::invalid("label_noise must lie in [0, 0.5]"));
    }
    if !(spec.noise_std >= 0.0) || !(spec.margin >= 0.0) {
        return Err(Error::invalid("noise_std and margin must be nonnegative"));
    }
    let mut rng = SeedTree::new(spec.seed).stream(Purpose::Synthesis, 0, 0);
    let d = spec.input_dim;
    let planted: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let planted_norm = planted
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;

    let mut samples = Vec::with_capacity(spec.n_total);
    while samples.len() < spec.n_total {
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let score: f64 = planted.iter().zip(&x).map(|(a, b)| a * b).sum();
        let target = match spec.kind {
            ModelKind::Logistic => {
                if score.abs() / planted_norm < spec.margin {
                    continue;
                }
                let y = if score >= 0.0 { 1.0 } else { -1.0 };
                if rng.random::<f64>() < spec.label_noise {
                    -y
                } else {
                    y
                }
            }
            ModelKind::Quadratic => score + noise.sample(&mut rng),
            ModelKind::Mlp1 => (score / (d as f64).sqrt()).tanh() + noise.sample(&mut rng),
        };
        samples.push(Sample::new(x, target));
    }
    Ok((samples, ParamVector::new(planted)))
}

/// Sizes of `parts` nearly equal pieces of `n` (first `n mod parts` get one more).
fn balanced_sizes(n: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| n / parts + usize::from(i < n % parts))
        .collect()
}

fn split_by_sizes(samples: Vec<Sample>, sizes: &[usize]) -> Vec<Vec<Sample>> {
    let mut it = samples.into_iter();
    sizes
        .iter()
        .map(|&s| it.by_ref().take(s).collect())
        .collect()
}

/// Power-law shard sizes `n_k ∝ (k+1)^(−exponent)` summing to `n`, each at
/// least `min_size`. Deficits are taken from the largest shard.
pub fn powerlaw_sizes(
    n: usize,
    clients: usize,
    exponent: f64,
    min_size: usize,
) -> Result<Vec<usize>> {
    if clients == 0 {
        return Err(Error::invalid("power-law sizes need at least one client"));
    }
    if n < clients * min_size {
        return Err(Error::invalid(format!(
            "{n} samples cannot give {clients} clients at least {min_size} each"
        )));
    }
    let raw: Vec<f64> = (0..clients)
        .map(|k| ((k + 1) as f64).powf(-exponent))
        .collect();
    let z: f64 = raw.iter().sum();
    let exact: Vec<f64> = raw.iter().map(|r| n as f64 * r / z).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..clients).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let assigned: usize = sizes.iter().sum();
    for &k in order.iter().take(n - assigned) {
        sizes[k] += 1;
    }
    for k in 0..clients {
        while sizes[k] < min_size {
            let donor = (0..clients)
                .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
                .expect("clients >= 1");
            sizes[donor] -= 1;
            sizes[k] += 1;
        }
    }
    Ok(sizes)
}

/// Coefficient of variation of the unrounded power-law shares for `clients`.
fn powerlaw_cv(clients: usize, exponent: f64) -> f64 {
    let raw: Vec<f64> = (0..clients)
        .map(|k| ((k + 1) as f64).powf(-exponent))
        .collect();
    let mean = raw.iter().sum::<f64>() / clients as f64;
    let var = raw.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / clients as f64;
    var.sqrt() / mean
}

/// Exponent whose power-law sizes have the requested stddev/mean ratio,
/// found by bisection.
pub fn fit_powerlaw_exponent(clients: usize, target_cv: f64) -> Result<f64> {
    if clients < 2 || !(target_cv > 0.0) {
        return Err(Error::invalid(
            "need >= 2 clients and a positive target ratio",
        ));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while powerlaw_cv(clients, hi) < target_cv {
        hi *= 2.0;
        if hi > 64.0 {
            return Err(Error::invalid(format!(
                "ratio {target_cv} unreachable with {clients} clients"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if powerlaw_cv(clients, mid) < target_cv {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Splits `samples` into client shards according to `spec`.
pub fn partition(samples: Vec<Sample>, spec: &PartitionSpec) -> Result<FederatedDataset> {
    spec.validate()?;
    let n = samples.len();
    let k = spec.clients;
    if n < k {
        return Err(Error::invalid(format!(
            "{n} samples cannot cover {k} clients"
        )));
    }
    let mut rng = SeedTree::new(spec.seed).stream(Purpose::Partition, 0, 0);
    let shards = match spec.scheme {
        Scheme::Iid => {
            let mut samples = samples;
            samples.shuffle(&mut rng);
            split_by_sizes(samples, &balanced_sizes(n, k))
        }
        Scheme::LabelShards { shards_per_client } => {
            let pieces = k * shards_per_client;
            if pieces > n {
                return Err(Error::invalid(format!(
                    "{k} clients × {shards_per_client} shards exceeds {n} samples"
                )));
            }
            let mut samples = samples;
            samples.sort_by(|a, b| a.target.total_cmp(&b.target));
            let mut slices = split_by_sizes(samples, &balanced_sizes(n, pieces));
            let mut ids: Vec<usize> = (0..pieces).collect();
            ids.shuffle(&mut rng);
            ids.chunks(shards_per_client)
                .map(|chunk| {
                    let mut shard = Vec::new();
                    for &id in chunk {
                        shard.append(&mut slices[id]);
                    }
                    shard
                })
                .collect()
        }
        Scheme::PowerLaw { exponent, min_size } => {
            let sizes = powerlaw_sizes(n, k, exponent, min_size)?;
            let mut samples = samples;
            samples.shuffle(&mut rng);
            split_by_sizes(samples, &sizes)
        }
    };
    FederatedDataset::new(shards)
}

/// Mean and population standard deviation of the client sample counts.
pub fn partition_stats(dataset: &FederatedDataset) -> (f64, f64) {
    let counts = dataset.counts();
    let k = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / k;
    let var = counts
        .iter()
        .map(|&c| (c as f64 - mean).powi(2))
        .sum::<f64>()
        / k;
    (mean, var.sqrt())
}

/// Reads samples from CSV: a header row, then feature columns followed by a
/// final label/target column. Errors carry the 1-based file line.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(|e| Error::Io(e.to_string()))?;
    let header_len = reader
        .headers()
        .map_err(|e| Error::Csv {
            row: 1,
            message: e.to_string(),
        })?
        .len();
    if header_len < 2 {
        return Err(Error::Csv {
            row: 1,
            message: "need at least one feature column and a target column".into(),
        });
    }
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let values = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Csv {
                row,
                message: e.to_string(),
            })?;
        let (target, features) = values.split_last().expect("header_len >= 2");
        samples.push(Sample::new(features.to_vec(), *target));
    }
    if samples.is_empty() {
        return Err(Error::Empty("csv has no data rows"));
    }
    Ok(samples)
}
