//! The global-round loop: channel sampling, local training, per-round
//! resource allocation, quantized upload and aggregation, all on a
//! simulated wall clock.
//!
//! Randomness is split into independent streams keyed off the master seed
//! (placement, fading, model init, data, per-user training, per-user
//! quantization), so sweep legs that share a seed see identical channels
//! and identical data regardless of how much randomness each leg's scheme
//! consumes elsewhere.

use crate::channel::{sample_channels, PhysicsConfig, UserProfile};
use crate::config::{DatasetSpec, Scheme, SimConfig};
use crate::fl::{
    aggregate, aggregate_raw, evaluate, init_params, load_mnist_dir, partition, synthetic_blobs,
    Dataset, EpsilonSchedule, FlError, LocalTrainer, MlpShape, SyntheticSpec,
};
use crate::quant::quantize;
use crate::roundopt::{
    baseline_equal_energy, baseline_equal_slots, baseline_fixed_bits, kkt_residuals,
    quantization_error, round_and_resolve, solve_round_continuous, RoundAllocation, RoundProblem,
    SolveError,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Payload bit width charged by the lossless scheme.
pub const LOSSLESS_BITS: u32 = 32;

// Stream ids carved out of the master seed.
const STREAM_PLACEMENT: u64 = 1;
const STREAM_FADING: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_DATA: u64 = 4;
const STREAM_TRAIN_BASE: u64 = 1_000;
const STREAM_QUANT_BASE: u64 = 2_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("round {round} infeasible: {source}")]
    InfeasibleRound { round: u64, source: SolveError },
    #[error("round {round}: allocation violates a constraint: {detail}")]
    InvalidAllocation { round: u64, detail: String },
    #[error(transparent)]
    Learning(#[from] FlError),
    #[error(transparent)]
    Quantization(#[from] crate::quant::QuantError),
    #[error("dataset directory not configured; set dataset.dir or {}", crate::config::DATA_DIR_ENV)]
    MissingDataDir,
    #[error("cannot write {path}: {source}")]
    Output {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// One row of the per-round log.
#[derive(Debug, Clone, Serialize)]
pub struct RoundMetrics {
    pub round: u64,
    /// Cumulative simulated seconds after this round.
    pub sim_time: f64,
    pub epsilon: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub compute_time: f64,
    pub round_latency: f64,
    /// Tolerance minus realized weighted quantization error (nonnegative).
    pub c3_slack: f64,
    pub bits: Vec<u32>,
    pub slots: Vec<f64>,
    pub energies: Vec<f64>,
    pub frequencies: Vec<f64>,
}

/// Per-round solver diagnostic, one JSON line each.
#[derive(Debug, Clone, Serialize)]
struct RoundDiagnostic<'a> {
    round: u64,
    epsilon: f64,
    gains: &'a [f64],
    deltas: &'a [f64],
    allocation: &'a RoundAllocation,
    #[serde(skip_serializing_if = "Option::is_none")]
    multipliers: Option<&'a crate::roundopt::Multipliers>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kkt_max_residual: Option<f64>,
    /// Relative gap of the integer allocation against the brute-force
    /// oracle, when the oracle check is enabled.
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    pub users: usize,
    pub final_accuracy: f64,
    pub final_train_loss: f64,
    pub total_sim_time: f64,
    pub avg_round_latency: f64,
    /// Mean assigned bits per user per round.
    pub avg_bits: f64,
}

/// Samples the static user population from the config's distributions.
pub fn build_users(cfg: &SimConfig, rng: &mut impl Rng) -> Vec<UserProfile> {
    let n = cfg.users.count;
    (0..n)
        .map(|id| UserProfile {
            id,
            cycles_per_bit: rng.gen_range(cfg.users.cycles_per_bit_min..cfg.users.cycles_per_bit_max),
            workload_bits: cfg.users.workload_bits,
            f_max: cfg.users.f_max_hz,
            e_max: cfg.users.e_max_j,
            weight: 1.0 / n as f64,
            // distances below a meter are clamped to keep the path loss finite
            distance_m: rng.gen_range(0.0..cfg.users.max_distance_m).max(1.0),
        })
        .collect()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn load_dataset(cfg: &SimConfig) -> Result<(Dataset, Dataset), SimError> {
    match &cfg.dataset {
        DatasetSpec::Synthetic {
            train_size,
            test_size,
            center_scale,
            noise_std,
        } => {
            let spec = SyntheticSpec {
                train_size: *train_size,
                test_size: *test_size,
                feature_dim: cfg.model.input_dim,
                num_classes: cfg.model.output_dim,
                center_scale: *center_scale,
                noise_std: *noise_std,
            };
            let mut rng = stream(cfg.seed, STREAM_DATA);
            Ok(synthetic_blobs(&spec, &mut rng))
        }
        DatasetSpec::Mnist {
            train_subset,
            test_subset,
            ..
        } => {
            let dir = cfg.dataset_dir().ok_or(SimError::MissingDataDir)?;
            let (mut train, mut test) = load_mnist_dir(&dir).map_err(FlError::Data)?;
            let mut rng = stream(cfg.seed, STREAM_DATA);
            if *train_subset > 0 && *train_subset < train.len() {
                train = train.balanced_subset(*train_subset, &mut rng).map_err(FlError::Data)?;
            }
            if *test_subset > 0 && *test_subset < test.len() {
                test = test.balanced_subset(*test_subset, &mut rng).map_err(FlError::Data)?;
            }
            Ok((train, test))
        }
    }
}

/// Solves one round under the configured scheme.
fn allocate_round(
    cfg: &SimConfig,
    problem: &RoundProblem,
    diag: Option<&mut Vec<String>>,
    round: u64,
) -> Result<RoundAllocation, SolveError> {
    let (alloc, mult, kkt) = match cfg.scheme {
        Scheme::Proposed => {
            let (cont, mult) = solve_round_continuous(problem)?;
            let kkt = kkt_residuals(problem, &cont, &mult);
            let alloc = round_and_resolve(problem, &cont)?;
            (alloc, Some(mult), Some(kkt.max_violation()))
        }
        Scheme::FixedBits => (baseline_fixed_bits(cfg.fixed_bits, problem)?, None, None),
        Scheme::EqualSlots => (baseline_equal_slots(problem)?, None, None),
        Scheme::EqualEnergy => (baseline_equal_energy(problem)?, None, None),
        Scheme::Lossless => (baseline_fixed_bits(LOSSLESS_BITS, problem)?, None, None),
    };
    if let Some(lines) = diag {
        let oracle_gap = (cfg.output.oracle_check && problem.user_count() <= 2)
            .then(|| {
                crate::roundopt::oracle::integer_grid_oracle(problem)
                    .ok()
                    .map(|o| (alloc.round_latency - o.objective) / o.objective)
            })
            .flatten();
        let record = RoundDiagnostic {
            round,
            epsilon: problem.epsilon,
            gains: problem.gains,
            deltas: problem.deltas,
            allocation: &alloc,
            multipliers: mult.as_ref(),
            kkt_max_residual: kkt,
            oracle_gap,
        };
        lines.push(serde_json::to_string(&record).expect("diagnostic serializes"));
    }
    Ok(alloc)
}

/// Runs the configured experiment and returns the per-round metrics.
/// Deterministic for a fixed config and seed.
pub fn run_experiment(cfg: &SimConfig) -> Result<RunOutput, SimError> {
    let physics: PhysicsConfig = cfg.physics.to_physics();
    let shape: MlpShape = cfg.model;
    let dim = shape.param_count();

    let profiles = build_users(cfg, &mut stream(cfg.seed, STREAM_PLACEMENT));
    let (train, test) = load_dataset(cfg)?;
    let shards = partition(
        &train,
        cfg.users.count,
        cfg.partition.samples_per_user,
        cfg.partition.to_mode(),
        &mut stream(cfg.seed, STREAM_DATA.wrapping_add(100)),
    )?;

    let trainer_cfg = cfg.trainer.to_trainer(cfg.physics.local_steps);
    let mut trainers: Vec<LocalTrainer<ChaCha8Rng>> = shards
        .into_iter()
        .map(|shard| {
            let user = shard.owner as u64;
            LocalTrainer::new(
                shard,
                trainer_cfg.clone(),
                dim,
                stream(cfg.seed, STREAM_TRAIN_BASE + user),
            )
        })
        .collect();
    let mut quant_rngs: Vec<ChaCha8Rng> = (0..cfg.users.count)
        .map(|u| stream(cfg.seed, STREAM_QUANT_BASE + u as u64))
        .collect();
    let mut fading_rng = stream(cfg.seed, STREAM_FADING);

    let mut w = init_params(&shape, cfg.trainer.init_scale, &mut stream(cfg.seed, STREAM_INIT));
    let schedule: EpsilonSchedule = cfg.epsilon.to_schedule(cfg.rounds);
    let weights: Vec<f64> = profiles.iter().map(|p| p.weight).collect();

    let mut metrics = Vec::with_capacity(cfg.rounds as usize);
    let mut diagnostics: Vec<String> = Vec::new();
    let want_diag = cfg.output.diagnostics_jsonl.is_some();
    let mut sim_time = 0.0;

    for round in 0..cfg.rounds {
        let epsilon = schedule.value(round);
        let realization = sample_channels(&profiles, &physics, round, &mut fading_rng);

        let mut updates = Vec::with_capacity(cfg.users.count);
        for trainer in trainers.iter_mut() {
            updates.push(trainer.local_update(&w, &shape, &train, round)?);
        }
        let deltas: Vec<f64> = updates.iter().map(|u| u.delta_scale).collect();
        let train_loss_local =
            updates.iter().zip(&weights).map(|(u, &p)| p * u.train_loss).sum::<f64>();

        let mut problem = RoundProblem::new(
            &profiles,
            &realization.gains,
            &deltas,
            epsilon,
            dim as u64,
            &physics,
        );
        problem.bits_cap = cfg.bits_cap;
        let alloc = allocate_round(
            cfg,
            &problem,
            want_diag.then_some(&mut diagnostics),
            round,
        )
        .map_err(|source| SimError::InfeasibleRound { round, source })?;
        crate::roundopt::verify_allocation(&problem, &alloc)
            .map_err(|detail| SimError::InvalidAllocation { round, detail })?;

        w = if cfg.scheme == Scheme::Lossless {
            let raw: Vec<Vec<f64>> = updates.into_iter().map(|u| u.delta_w).collect();
            aggregate_raw(&w, &raw, &weights)?
        } else {
            let mut quantized = Vec::with_capacity(cfg.users.count);
            for (u, update) in updates.iter().enumerate() {
                let q = quantize(
                    &update.delta_w,
                    alloc.bits[u],
                    physics.header_bits,
                    &mut quant_rngs[u],
                )?;
                quantized.push(q);
            }
            aggregate(&w, &quantized, &weights)?
        };

        sim_time += alloc.round_latency;
        let (test_loss, test_accuracy) = evaluate(&shape, &w, &test);
        let real_bits: Vec<f64> = alloc.bits.iter().map(|&b| f64::from(b)).collect();
        let c3_slack = epsilon - quantization_error(&real_bits, &deltas, &weights);
        metrics.push(RoundMetrics {
            round,
            sim_time,
            epsilon,
            train_loss: train_loss_local,
            test_loss,
            test_accuracy,
            compute_time: alloc.compute_time,
            round_latency: alloc.round_latency,
            c3_slack,
            bits: alloc.bits.clone(),
            slots: alloc.slots.clone(),
            energies: alloc.energies.clone(),
            frequencies: alloc.frequencies.clone(),
        });
    }

    let output = summarize(metrics, cfg.users.count);
    if let Some(path) = &cfg.output.metrics_csv {
        write_text(path, &metrics_csv(&output))?;
    }
    if let Some(path) = &cfg.output.diagnostics_jsonl {
        let mut text = diagnostics.join("\n");
        text.push('\n');
        write_text(path, &text)?;
    }
    Ok(output)
}

fn summarize(metrics: Vec<RoundMetrics>, users: usize) -> RunOutput {
    let rounds = metrics.len().max(1) as f64;
    let total_sim_time = metrics.last().map_or(0.0, |m| m.sim_time);
    let avg_round_latency = metrics.iter().map(|m| m.round_latency).sum::<f64>() / rounds;
    let avg_bits = metrics
        .iter()
        .flat_map(|m| m.bits.iter())
        .map(|&b| f64::from(b))
        .sum::<f64>()
        / (rounds * users.max(1) as f64);
    RunOutput {
        final_accuracy: metrics.last().map_or(0.0, |m| m.test_accuracy),
        final_train_loss: metrics.last().map_or(f64::NAN, |m| m.train_loss),
        total_sim_time,
        avg_round_latency,
        avg_bits,
        users,
        metrics,
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), SimError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| SimError::Output {
                path: path.to_path_buf(),
                source,
            })?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|source| SimError::Output {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(text.as_bytes()).map_err(|source| SimError::Output {
        path: path.to_path_buf(),
        source,
    })
}

/// Fixed-column CSV: one row per round, per-user fields as indexed columns.
pub fn metrics_csv(out: &RunOutput) -> String {
    let n = out.users;
    let mut s = String::new();
    s.push_str("round,sim_time,epsilon,train_loss,test_loss,test_accuracy,compute_time,round_latency,c3_slack");
    for prefix in ["bits", "slot", "energy", "freq"] {
        for u in 0..n {
            s.push_str(&format!(",{prefix}_{u}"));
        }
    }
    s.push('\n');
    for m in &out.metrics {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}",
            m.round,
            m.sim_time,
            m.epsilon,
            m.train_loss,
            m.test_loss,
            m.test_accuracy,
            m.compute_time,
            m.round_latency,
            m.c3_slack
        ));
        for u in 0..n {
            s.push_str(&format!(",{}", m.bits[u]));
        }
        for u in 0..n {
            s.push_str(&format!(",{}", m.slots[u]));
        }
        for u in 0..n {
            s.push_str(&format!(",{}", m.energies[u]));
        }
        for u in 0..n {
            s.push_str(&format!(",{}", m.frequencies[u]));
        }
        s.push('\n');
    }
    s
}

/// One leg of a sweep: a label and its run.
#[derive(Debug, Clone)]
pub struct SweepLeg {
    pub label: String,
    pub config: SimConfig,
    pub output: RunOutput,
}

/// Runs several configs sharing the base seed so per-round channels and
/// data are paired across legs.
pub fn run_sweep(legs: Vec<(String, SimConfig)>) -> Result<Vec<SweepLeg>, SimError> {
    let mut out = Vec::with_capacity(legs.len());
    for (label, config) in legs {
        let output = run_experiment(&config)?;
        out.push(SweepLeg {
            label,
            config,
            output,
        });
    }
    Ok(out)
}

/// Epsilon-axis sweep legs from a base config.
pub fn epsilon_legs(base: &SimConfig, values: &[f64]) -> Vec<(String, SimConfig)> {
    values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            cfg.epsilon = crate::config::EpsilonSpec::Constant { value: v };
            cfg.output = Default::default();
            (format!("eps_{v}"), cfg)
        })
        .collect()
}

/// Scheme-axis sweep legs from a base config.
pub fn scheme_legs(base: &SimConfig, schemes: &[Scheme]) -> Vec<(String, SimConfig)> {
    schemes
        .iter()
        .map(|&s| {
            let mut cfg = base.clone();
            cfg.scheme = s;
            cfg.output = Default::default();
            (s.to_string(), cfg)
        })
        .collect()
}

/// Combined CSV across sweep legs (a leading `leg` column).
pub fn sweep_csv(legs: &[SweepLeg]) -> String {
    let mut s = String::new();
    for (i, leg) in legs.iter().enumerate() {
        let body = metrics_csv(&leg.output);
        let mut lines = body.lines();
        if i == 0 {
            s.push_str("leg,");
            s.push_str(lines.next().unwrap_or(""));
            s.push('\n');
        } else {
            lines.next();
        }
        for line in lines {
            s.push_str(&leg.label);
            s.push(',');
            s.push_str(line);
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimConfig {
        let mut cfg = SimConfig::table1();
        cfg.seed = 33;
        cfg.rounds = 3;
        cfg.users.count = 4;
        cfg.partition.samples_per_user = 100;
        cfg.model = MlpShape {
            input_dim: 20,
            hidden_dim: 8,
            output_dim: 10,
        };
        cfg.dataset = DatasetSpec::Synthetic {
            train_size: 600,
            test_size: 200,
            center_scale: 0.4,
            noise_std: 0.3,
        };
        cfg.trainer.learning_rate = crate::fl::LearningRate::Constant { value: 0.01 };
        cfg
    }

    #[test]
    fn identical_seeds_reproduce_csv_bytes() {
        let cfg = small_cfg();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(metrics_csv(&a), metrics_csv(&b));
    }

    #[test]
    fn sim_time_accumulates_round_latency() {
        let out = run_experiment(&small_cfg()).unwrap();
        let mut acc = 0.0;
        for m in &out.metrics {
            acc += m.round_latency;
            assert!((m.sim_time - acc).abs() < 1e-12);
            assert!(
                (m.round_latency - m.compute_time - m.slots.iter().sum::<f64>()).abs() < 1e-9,
                "latency must equal compute plus slots"
            );
            assert!(m.c3_slack >= -1e-12, "negative tolerance slack");
        }
        assert_eq!(out.metrics.len(), 3);
    }

    #[test]
    fn paired_sweep_legs_share_channels() {
        let cfg = small_cfg();
        let legs = run_sweep(epsilon_legs(&cfg, &[0.01, 1.0])).unwrap();
        // same master seed, different epsilon: identical user placement
        // means identical compute floors; pairing shows up as identical
        // frequencies per round
        for (a, b) in legs[0].output.metrics.iter().zip(&legs[1].output.metrics) {
            assert_eq!(a.frequencies, b.frequencies);
        }
    }

    #[test]
    fn lossless_matches_high_precision_quantized_run() {
        let mut cfg = small_cfg();
        cfg.rounds = 5;
        cfg.scheme = Scheme::Lossless;
        let lossless = run_experiment(&cfg).unwrap();

        // 32-bit fixed quantization: same payload airtime, near-identical model
        let mut cfg32 = cfg.clone();
        cfg32.scheme = Scheme::FixedBits;
        cfg32.fixed_bits = 32;
        let fixed = run_experiment(&cfg32).unwrap();
        for (a, b) in lossless.metrics.iter().zip(&fixed.metrics) {
            assert_eq!(a.bits, b.bits);
            assert!((a.round_latency - b.round_latency).abs() <= 1e-9 * b.round_latency);
            assert!(
                (a.test_accuracy - b.test_accuracy).abs() <= 1e-6,
                "round {}: lossless acc {} vs 32-bit acc {}",
                a.round,
                a.test_accuracy,
                b.test_accuracy
            );
        }
    }

    #[test]
    fn sweep_csv_collates_legs() {
        let cfg = small_cfg();
        let legs = run_sweep(epsilon_legs(&cfg, &[0.1, 0.5])).unwrap();
        let csv = sweep_csv(&legs);
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("leg,round,"));
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert!(lines[1].starts_with("eps_0.1,"));
        assert!(lines[4].starts_with("eps_0.5,"));
    }
}
