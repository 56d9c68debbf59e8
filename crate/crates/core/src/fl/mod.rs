//! The learning stack: data partitioning, local training, quantized
//! aggregation and evaluation.

pub mod data;
pub mod mlp;
pub mod optim;

pub use data::{load_mnist_dir, synthetic_blobs, DataError, Dataset, SyntheticSpec};
pub use mlp::{evaluate_batch, loss_and_gradient, MlpShape};
pub use optim::{LearningRate, Optimizer};

use crate::quant::{dequantize, QuantizedUpdate};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One user's slice of the training data, as indices into a shared
/// [`Dataset`]. Shards across users are disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataShard {
    pub owner: usize,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Iid,
    NonIid { labels_per_user: usize },
}

#[derive(Debug, Error)]
pub enum FlError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("non-finite loss or gradient during local training (user {user}, step {step})")]
    NonFiniteTraining { user: usize, step: u32 },
    #[error("update length {got} does not match model dimension {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("batch size {batch} exceeds shard size {shard}")]
    BatchTooLarge { batch: usize, shard: usize },
    #[error("samples per user ({samples}) not divisible by labels per user ({labels})")]
    IndivisibleShard { samples: usize, labels: usize },
}

/// Splits a dataset into `n_users` disjoint shards of `samples_per_user`.
///
/// IID mode draws uniformly at random; non-IID mode gives user `u` the
/// cyclic label block `{u, u+1, ..., u+labels_per_user-1} mod K`, drawing
/// `samples_per_user / labels_per_user` samples of each label, so every
/// shard holds exactly `labels_per_user` distinct labels.
pub fn partition<R: Rng + ?Sized>(
    dataset: &Dataset,
    n_users: usize,
    samples_per_user: usize,
    mode: PartitionMode,
    rng: &mut R,
) -> Result<Vec<DataShard>, FlError> {
    let total = n_users * samples_per_user;
    if total > dataset.len() {
        return Err(DataError::TooSmall {
            need: total,
            have: dataset.len(),
        }
        .into());
    }
    match mode {
        PartitionMode::Iid => {
            let mut all: Vec<usize> = (0..dataset.len()).collect();
            all.shuffle(rng);
            Ok((0..n_users)
                .map(|u| DataShard {
                    owner: u,
                    indices: all[u * samples_per_user..(u + 1) * samples_per_user].to_vec(),
                })
                .collect())
        }
        PartitionMode::NonIid { labels_per_user } => {
            if samples_per_user % labels_per_user != 0 {
                return Err(FlError::IndivisibleShard {
                    samples: samples_per_user,
                    labels: labels_per_user,
                });
            }
            let per_label = samples_per_user / labels_per_user;
            let k = dataset.num_classes;
            let mut pools: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (i, &l) in dataset.labels.iter().enumerate() {
                pools[l as usize].push(i);
            }
            for pool in &mut pools {
                pool.shuffle(rng);
            }
            let mut cursors = vec![0usize; k];
            let mut shards = Vec::with_capacity(n_users);
            for u in 0..n_users {
                let mut indices = Vec::with_capacity(samples_per_user);
                for j in 0..labels_per_user {
                    let label = (u + j) % k;
                    let start = cursors[label];
                    let end = start + per_label;
                    if end > pools[label].len() {
                        return Err(DataError::TooSmall {
                            need: end,
                            have: pools[label].len(),
                        }
                        .into());
                    }
                    indices.extend_from_slice(&pools[label][start..end]);
                    cursors[label] = end;
                }
                shards.push(DataShard { owner: u, indices });
            }
            Ok(shards)
        }
    }
}

/// Local training configuration shared by all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    /// Local optimizer steps per round (`tau`).
    pub local_steps: u32,
    pub batch_size: usize,
    #[serde(rename = "optimizer")]
    pub optimizer_kind: OptimizerKind,
    pub learning_rate: LearningRate,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            local_steps: 2,
            batch_size: 50,
            optimizer_kind: OptimizerKind::Adam,
            learning_rate: LearningRate::Constant { value: 1e-3 },
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

/// Result of one user's local round.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    /// Weight differential after the local steps.
    pub delta_w: Vec<f64>,
    /// Quantization-error scale `sqrt(d)/2 * (max|dw| - min|dw|)`.
    pub delta_scale: f64,
    /// Mean training loss over the sampled batches.
    pub train_loss: f64,
}

/// Per-user trainer holding the shard, optimizer state (persistent across
/// rounds) and a private random stream.
#[derive(Debug)]
pub struct LocalTrainer<R: Rng> {
    pub shard: DataShard,
    cfg: TrainerConfig,
    optimizer: Optimizer,
    rng: R,
}

impl<R: Rng> LocalTrainer<R> {
    pub fn new(shard: DataShard, cfg: TrainerConfig, model_dim: usize, rng: R) -> Self {
        let optimizer = match cfg.optimizer_kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(optim::AdamState::new(
                model_dim,
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_epsilon,
            )),
        };
        Self {
            shard,
            cfg,
            optimizer,
            rng,
        }
    }

    /// Runs `tau` optimizer steps on mini-batches sampled uniformly from the
    /// shard (fresh batch per step, no repeats within a batch) and returns
    /// the weight differential.
    pub fn local_update(
        &mut self,
        global: &[f64],
        shape: &MlpShape,
        dataset: &Dataset,
        round: u64,
    ) -> Result<LocalUpdate, FlError> {
        let batch_size = self.cfg.batch_size.min(self.shard.indices.len());
        if batch_size == 0 {
            return Err(FlError::BatchTooLarge {
                batch: self.cfg.batch_size,
                shard: 0,
            });
        }
        let lr = self.cfg.learning_rate.at(round);
        let mut w = global.to_vec();
        let mut loss_sum = 0.0;
        for step in 0..self.cfg.local_steps {
            let picks = rand::seq::index::sample(&mut self.rng, self.shard.indices.len(), batch_size);
            let batch: Vec<(&[f64], u8)> = picks
                .iter()
                .map(|i| dataset.sample(self.shard.indices[i]))
                .collect();
            let (loss, grad) = loss_and_gradient(shape, &w, &batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(FlError::NonFiniteTraining {
                    user: self.shard.owner,
                    step,
                });
            }
            self.optimizer.step(&mut w, &grad, lr);
            loss_sum += loss;
        }
        let delta_w: Vec<f64> = w.iter().zip(global).map(|(a, b)| a - b).collect();
        let delta_scale = delta_scale_of(&delta_w);
        Ok(LocalUpdate {
            delta_w,
            delta_scale,
            train_loss: loss_sum / f64::from(self.cfg.local_steps),
        })
    }
}

/// `sqrt(d)/2 * (max|dw| - min|dw|)`, the range-based scale of the
/// quantization error.
pub fn delta_scale_of(delta_w: &[f64]) -> f64 {
    let max = delta_w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = delta_w.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    (delta_w.len() as f64).sqrt() / 2.0 * (max - min)
}

/// Server-side aggregation: `w' = w + sum_n p_n * dequantize(update_n)`.
pub fn aggregate(
    w: &[f64],
    updates: &[QuantizedUpdate],
    weights: &[f64],
) -> Result<Vec<f64>, FlError> {
    let mut out = w.to_vec();
    for (q, &p) in updates.iter().zip(weights) {
        if q.len() != w.len() {
            return Err(FlError::LengthMismatch {
                got: q.len(),
                expected: w.len(),
            });
        }
        for (o, v) in out.iter_mut().zip(dequantize(q)) {
            *o += p * v;
        }
    }
    Ok(out)
}

/// Lossless aggregation of raw differentials (the quantization-free path).
pub fn aggregate_raw(w: &[f64], updates: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>, FlError> {
    let mut out = w.to_vec();
    for (dw, &p) in updates.iter().zip(weights) {
        if dw.len() != w.len() {
            return Err(FlError::LengthMismatch {
                got: dw.len(),
                expected: w.len(),
            });
        }
        for (o, &v) in out.iter_mut().zip(dw) {
            *o += p * v;
        }
    }
    Ok(out)
}

/// Forward-pass evaluation over a whole dataset: mean cross-entropy and
/// top-1 accuracy.
pub fn evaluate(shape: &MlpShape, w: &[f64], dataset: &Dataset) -> (f64, f64) {
    let samples: Vec<(&[f64], u8)> = (0..dataset.len()).map(|i| dataset.sample(i)).collect();
    evaluate_batch(shape, w, &samples)
}

/// Per-round quantization-error tolerance schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonSchedule {
    Constant(f64),
    /// `eps(i) = eps0 * rate^i` with `0 < rate <= 1`.
    Geometric { eps0: f64, rate: f64 },
}

impl EpsilonSchedule {
    /// Geometric decay hitting `eps_final` exactly at the last of `rounds`
    /// rounds: `rate = (eps_final/eps0)^(1/(rounds-1))`.
    pub fn decay_to(eps0: f64, eps_final: f64, rounds: u64) -> Self {
        if rounds <= 1 || eps0 == eps_final {
            return EpsilonSchedule::Constant(eps0);
        }
        let rate = (eps_final / eps0).powf(1.0 / (rounds as f64 - 1.0));
        EpsilonSchedule::Geometric { eps0, rate }
    }

    pub fn value(&self, round: u64) -> f64 {
        match *self {
            EpsilonSchedule::Constant(e) => e,
            EpsilonSchedule::Geometric { eps0, rate } => eps0 * rate.powi(round as i32),
        }
    }
}

/// Random model initialization: small uniform weights.
pub fn init_params<R: Rng + ?Sized>(shape: &MlpShape, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..shape.param_count())
        .map(|_| rng.gen_range(-scale..scale))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::quantize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn toy_dataset(n: usize, classes: usize) -> Dataset {
        let spec = SyntheticSpec {
            train_size: n,
            test_size: 1,
            feature_dim: 6,
            num_classes: classes,
            ..SyntheticSpec::default()
        };
        synthetic_blobs(&spec, &mut ChaCha8Rng::seed_from_u64(3)).0
    }

    #[test]
    fn iid_partition_is_disjoint() {
        let ds = toy_dataset(2500, 10);
        let shards = partition(&ds, 10, 200, PartitionMode::Iid, &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        let union: HashSet<usize> = shards.iter().flat_map(|s| s.indices.iter().copied()).collect();
        assert_eq!(union.len(), 2000);
        for s in &shards {
            assert_eq!(s.indices.len(), 200);
        }
    }

    #[test]
    fn noniid_partition_caps_labels() {
        let ds = toy_dataset(2500, 10);
        let shards = partition(
            &ds,
            10,
            200,
            PartitionMode::NonIid { labels_per_user: 5 },
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let mut union_hist = vec![0usize; 10];
        let mut union: HashSet<usize> = HashSet::new();
        for s in &shards {
            let labels: HashSet<u8> = s.indices.iter().map(|&i| ds.labels[i]).collect();
            assert!(labels.len() <= 5, "shard has {} labels", labels.len());
            assert_eq!(labels.len(), 5);
            for &i in &s.indices {
                union_hist[ds.labels[i] as usize] += 1;
                union.insert(i);
            }
        }
        assert_eq!(union.len(), 2000, "shards overlap");
        // conservation: selected-label histogram matches the union histogram
        let mut selected = vec![0usize; 10];
        for &i in &union {
            selected[ds.labels[i] as usize] += 1;
        }
        assert_eq!(union_hist, selected);
    }

    #[test]
    fn partition_rejects_small_dataset() {
        let ds = toy_dataset(100, 10);
        assert!(partition(&ds, 10, 200, PartitionMode::Iid, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn zero_learning_rate_freezes_the_model() {
        let ds = toy_dataset(300, 10);
        let shape = MlpShape {
            input_dim: 6,
            hidden_dim: 4,
            output_dim: 10,
        };
        let shard = DataShard {
            owner: 0,
            indices: (0..100).collect(),
        };
        let cfg = TrainerConfig {
            optimizer_kind: OptimizerKind::Sgd,
            learning_rate: LearningRate::Constant { value: 0.0 },
            ..TrainerConfig::default()
        };
        let mut trainer = LocalTrainer::new(shard, cfg, shape.param_count(), ChaCha8Rng::seed_from_u64(6));
        let w = init_params(&shape, 0.1, &mut ChaCha8Rng::seed_from_u64(7));
        let up = trainer.local_update(&w, &shape, &ds, 0).unwrap();
        assert!(up.delta_w.iter().all(|&v| v == 0.0));
        assert_eq!(up.delta_scale, 0.0);
    }

    #[test]
    fn single_sgd_step_is_explicit_gradient_descent() {
        // against the hand-computed linear-softmax gradient on a fixed sample
        let shape = MlpShape {
            input_dim: 2,
            hidden_dim: 0,
            output_dim: 2,
        };
        let ds = Dataset {
            features: vec![1.5, -0.7],
            labels: vec![0],
            feature_dim: 2,
            num_classes: 2,
        };
        let shard = DataShard {
            owner: 0,
            indices: vec![0],
        };
        let cfg = TrainerConfig {
            local_steps: 1,
            batch_size: 1,
            optimizer_kind: OptimizerKind::Sgd,
            learning_rate: LearningRate::Constant { value: 0.2 },
            ..TrainerConfig::default()
        };
        let mut trainer = LocalTrainer::new(shard, cfg, shape.param_count(), ChaCha8Rng::seed_from_u64(8));
        let w = vec![0.3, -0.2, 0.1, 0.4, 0.05, -0.05];
        let up = trainer.local_update(&w, &shape, &ds, 0).unwrap();
        let (_, grad) = loss_and_gradient(&shape, &w, &[(&ds.features[..], 0)]);
        for (d, g) in up.delta_w.iter().zip(&grad) {
            assert!((d + 0.2 * g).abs() < 1e-12, "delta {d} vs -eta*grad {}", -0.2 * g);
        }
    }

    #[test]
    fn aggregation_identity_and_lossless_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // zero updates leave the model unchanged
        let zero = quantize(&vec![0.0; 200], 4, 64, &mut rng).unwrap();
        let out = aggregate(&w, &[zero], &[1.0]).unwrap();
        assert_eq!(out, w);

        // 32-bit quantization matches the raw update to 1e-6 per coordinate
        let dw_a: Vec<f64> = (0..200).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let dw_b: Vec<f64> = (0..200).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let qa = quantize(&dw_a, 32, 64, &mut rng).unwrap();
        let qb = quantize(&dw_b, 32, 64, &mut rng).unwrap();
        let quantized = aggregate(&w, &[qa, qb], &[0.5, 0.5]).unwrap();
        let raw = aggregate_raw(&w, &[dw_a, dw_b], &[0.5, 0.5]).unwrap();
        for (a, b) in quantized.iter().zip(&raw) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn aggregate_rejects_length_mismatch() {
        let w = vec![0.0; 5];
        let q = quantize(&[1.0, 2.0], 2, 64, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(
            aggregate(&w, &[q], &[1.0]),
            Err(FlError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn untrained_model_sits_at_chance_accuracy() {
        let ds = toy_dataset(3000, 10);
        let shape = MlpShape {
            input_dim: 6,
            hidden_dim: 0,
            output_dim: 10,
        };
        let w = vec![0.0; shape.param_count()];
        let (_, acc) = evaluate(&shape, &w, &ds);
        assert!((acc - 0.1).abs() <= 0.03, "chance-level accuracy, got {acc}");
    }

    #[test]
    fn epsilon_schedules() {
        let c = EpsilonSchedule::Constant(0.01);
        assert_eq!(c.value(0), 0.01);
        assert_eq!(c.value(100), 0.01);

        // eps0 = 0.1, rate = 10^(-1/224): eps(224) = 0.01
        let s = EpsilonSchedule::Geometric {
            eps0: 0.1,
            rate: 10f64.powf(-1.0 / 224.0),
        };
        assert!((s.value(224) - 0.01).abs() < 1e-12);

        let d = EpsilonSchedule::decay_to(0.1, 0.01, 225);
        assert!((d.value(0) - 0.1).abs() < 1e-15);
        assert!((d.value(224) - 0.01).abs() < 1e-12);

        // equal endpoints degenerate to a constant schedule
        let flat = EpsilonSchedule::decay_to(0.05, 0.05, 100);
        assert_eq!(flat.value(57), 0.05);
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let ds = toy_dataset(300, 10);
        let shape = MlpShape {
            input_dim: 6,
            hidden_dim: 4,
            output_dim: 10,
        };
        let run = || {
            let shard = DataShard {
                owner: 0,
                indices: (0..200).collect(),
            };
            let mut t = LocalTrainer::new(
                shard,
                TrainerConfig::default(),
                shape.param_count(),
                ChaCha8Rng::seed_from_u64(42),
            );
            let w = init_params(&shape, 0.1, &mut ChaCha8Rng::seed_from_u64(1));
            t.local_update(&w, &shape, &ds, 0).unwrap().delta_w
        };
        assert_eq!(run(), run());
    }
}
