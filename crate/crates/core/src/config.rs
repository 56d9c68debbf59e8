//! Experiment configuration: a TOML key/value tree with reference defaults
//! (0.3 MHz bandwidth, -174 dBm/Hz noise, 10 users in a 1000 m cell, 0.3 J
//! per-round budgets, 64 header bits) that individual files or CLI flags
//! override.

use crate::channel::{dbm_per_hz_to_w_per_hz, PhysicsConfig};
use crate::fl::{EpsilonSchedule, LearningRate, MlpShape, OptimizerKind, PartitionMode, TrainerConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Environment variable consulted for the IDX dataset directory when the
/// config does not name one.
pub const DATA_DIR_ENV: &str = "QFL_MNIST_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Resource-allocation scheme driving each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Joint optimization of compute duration, energies, slots and bits.
    Proposed,
    /// Bits pre-assigned (`fixed_bits`, reference value 16), rest optimized.
    FixedBits,
    /// Proposed allocation with a uniform slot duration.
    EqualSlots,
    /// Half the budget to computation, half to transmission.
    EqualEnergy,
    /// No quantization; airtime charged for 32-bit payloads.
    Lossless,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scheme::Proposed => "proposed",
            Scheme::FixedBits => "fixed_bits",
            Scheme::EqualSlots => "equal_slots",
            Scheme::EqualEnergy => "equal_energy",
            Scheme::Lossless => "lossless",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(Scheme::Proposed),
            "fixed_bits" => Ok(Scheme::FixedBits),
            "equal_slots" => Ok(Scheme::EqualSlots),
            "equal_energy" => Ok(Scheme::EqualEnergy),
            "lossless" => Ok(Scheme::Lossless),
            other => Err(format!("unknown scheme '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsSpec {
    pub bandwidth_hz: f64,
    pub noise_dbm_per_hz: f64,
    pub zeta: f64,
    /// Local steps per round (`tau`), shared by compute model and trainer.
    pub local_steps: u32,
    pub header_bits: u64,
    pub pathloss_exp: f64,
}

impl Default for PhysicsSpec {
    fn default() -> Self {
        Self {
            bandwidth_hz: 0.3e6,
            noise_dbm_per_hz: -174.0,
            zeta: 1e-27,
            local_steps: 2,
            header_bits: 64,
            pathloss_exp: 3.75,
        }
    }
}

impl PhysicsSpec {
    pub fn to_physics(&self) -> PhysicsConfig {
        PhysicsConfig {
            bandwidth_hz: self.bandwidth_hz,
            noise_w_per_hz: dbm_per_hz_to_w_per_hz(self.noise_dbm_per_hz),
            zeta: self.zeta,
            local_steps: self.local_steps,
            header_bits: self.header_bits,
            pathloss_exp: self.pathloss_exp,
        }
    }
}

/// Population parameters from which user profiles are sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UserSpec {
    pub count: usize,
    pub e_max_j: f64,
    pub f_max_hz: f64,
    pub workload_bits: f64,
    pub cycles_per_bit_min: f64,
    pub cycles_per_bit_max: f64,
    pub max_distance_m: f64,
}

impl Default for UserSpec {
    fn default() -> Self {
        Self {
            count: 10,
            e_max_j: 0.3,
            f_max_hz: 1.5e9,
            workload_bits: 1e6,
            cycles_per_bit_min: 10.0,
            cycles_per_bit_max: 40.0,
            max_distance_m: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerSpec {
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: LearningRate,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Uniform weight scale of the initial model.
    pub init_scale: f64,
}

impl Default for TrainerSpec {
    fn default() -> Self {
        Self {
            batch_size: 50,
            optimizer: OptimizerKind::Adam,
            learning_rate: LearningRate::Constant { value: 1e-3 },
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            init_scale: 0.05,
        }
    }
}

impl TrainerSpec {
    pub fn to_trainer(&self, local_steps: u32) -> TrainerConfig {
        TrainerConfig {
            local_steps,
            batch_size: self.batch_size,
            optimizer_kind: self.optimizer,
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpsilonSpec {
    Constant {
        value: f64,
    },
    /// Geometric decay from `start` to `final` across the run.
    Decay {
        start: f64,
        #[serde(rename = "final")]
        end: f64,
    },
    /// Geometric decay with an explicit per-round factor.
    Rate {
        start: f64,
        rate: f64,
    },
}

impl Default for EpsilonSpec {
    fn default() -> Self {
        EpsilonSpec::Constant { value: 0.01 }
    }
}

impl EpsilonSpec {
    pub fn to_schedule(&self, rounds: u64) -> EpsilonSchedule {
        match *self {
            EpsilonSpec::Constant { value } => EpsilonSchedule::Constant(value),
            EpsilonSpec::Decay { start, end } => EpsilonSchedule::decay_to(start, end, rounds),
            EpsilonSpec::Rate { start, rate } => EpsilonSchedule::Geometric { eps0: start, rate },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic {
        #[serde(default = "default_train_size")]
        train_size: usize,
        #[serde(default = "default_test_size")]
        test_size: usize,
        #[serde(default = "default_center_scale")]
        center_scale: f64,
        #[serde(default = "default_noise_std")]
        noise_std: f64,
    },
    /// IDX files on disk; `dir` falls back to the `QFL_MNIST_DIR`
    /// environment variable.
    Mnist {
        #[serde(default)]
        dir: Option<PathBuf>,
        /// Label-balanced training subset size; 0 keeps everything.
        #[serde(default = "default_train_size")]
        train_subset: usize,
        /// Test subset size; 0 keeps everything.
        #[serde(default)]
        test_subset: usize,
    },
}

fn default_train_size() -> usize {
    2000
}
fn default_test_size() -> usize {
    1000
}
fn default_center_scale() -> f64 {
    0.12
}
fn default_noise_std() -> f64 {
    0.25
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            train_size: default_train_size(),
            test_size: default_test_size(),
            center_scale: default_center_scale(),
            noise_std: default_noise_std(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Iid,
    NonIid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionSpec {
    pub mode: PartitionKind,
    pub labels_per_user: usize,
    pub samples_per_user: usize,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self {
            mode: PartitionKind::Iid,
            labels_per_user: 5,
            samples_per_user: 200,
        }
    }
}

impl PartitionSpec {
    pub fn to_mode(&self) -> PartitionMode {
        match self.mode {
            PartitionKind::Iid => PartitionMode::Iid,
            PartitionKind::NonIid => PartitionMode::NonIid {
                labels_per_user: self.labels_per_user,
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSpec {
    pub metrics_csv: Option<PathBuf>,
    pub diagnostics_jsonl: Option<PathBuf>,
    /// Compare each round's allocation against the brute-force oracle and
    /// record the relative gap in the diagnostics (two users at most).
    pub oracle_check: bool,
}

/// Complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub rounds: u64,
    pub scheme: Scheme,
    /// Bit count used by the fixed-bits scheme.
    pub fixed_bits: u32,
    /// Hard cap on per-user bits in the optimizer.
    pub bits_cap: u32,
    pub users: UserSpec,
    pub physics: PhysicsSpec,
    pub trainer: TrainerSpec,
    pub epsilon: EpsilonSpec,
    pub dataset: DatasetSpec,
    pub partition: PartitionSpec,
    #[serde(default = "MlpShape::mnist")]
    pub model: MlpShape,
    pub output: OutputSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            rounds: 20,
            scheme: Scheme::Proposed,
            fixed_bits: 16,
            bits_cap: crate::roundopt::DEFAULT_BITS_CAP,
            users: UserSpec::default(),
            physics: PhysicsSpec::default(),
            trainer: TrainerSpec::default(),
            epsilon: EpsilonSpec::default(),
            dataset: DatasetSpec::default(),
            partition: PartitionSpec::default(),
            model: MlpShape::mnist(),
            output: OutputSpec::default(),
        }
    }
}

impl SimConfig {
    /// The reference parameter set (all documented defaults).
    pub fn table1() -> Self {
        Self::default()
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rounds == 0 {
            return Err(ConfigError::Invalid("rounds must be at least 1".into()));
        }
        if self.users.count == 0 {
            return Err(ConfigError::Invalid("users.count must be at least 1".into()));
        }
        if self.fixed_bits == 0 {
            return Err(ConfigError::Invalid("fixed_bits must be at least 1".into()));
        }
        if self.physics.local_steps == 0 {
            return Err(ConfigError::Invalid("physics.local_steps must be at least 1".into()));
        }
        if let EpsilonSpec::Constant { value } = self.epsilon {
            if value <= 0.0 {
                return Err(ConfigError::Invalid("epsilon.value must be positive".into()));
            }
        }
        if self.trainer.batch_size == 0 {
            return Err(ConfigError::Invalid("trainer.batch_size must be at least 1".into()));
        }
        if let PartitionKind::NonIid = self.partition.mode {
            if self.partition.labels_per_user == 0
                || self.partition.labels_per_user > self.model.output_dim
            {
                return Err(ConfigError::Invalid(
                    "partition.labels_per_user must be in [1, classes]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Directory holding the IDX files, from config or environment.
    pub fn dataset_dir(&self) -> Option<PathBuf> {
        if let DatasetSpec::Mnist { dir: Some(d), .. } = &self.dataset {
            return Some(d.clone());
        }
        std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
    }
}
