//! Simulator for federated learning over a wireless TDMA uplink with
//! stochastic quantization of local weight differentials.
//!
//! The crate is organized around the per-round resource allocation problem:
//! each global round, users train locally, report the scale of their weight
//! differential, and a joint optimizer picks the shared compute duration,
//! per-user transmit energies, uplink slot durations and quantization bit
//! counts that minimize round latency subject to energy budgets and a
//! quantization-error tolerance.
//!
//! Module map:
//! - [`quant`] — stochastic quantization of weight differentials, payload
//!   sizing and the quantization-variance bound.
//! - [`channel`] — wireless and computation physics: fading, uplink rate and
//!   energy relations, minimal-slot inversion.
//! - [`roundopt`] — the per-round joint optimizer, KKT diagnostics, integer
//!   rounding, baseline allocators and brute-force oracles.
//! - [`fl`] — the learning stack: datasets, partitioning, the MLP model,
//!   local training and quantized aggregation.
//! - [`bound`] — evaluator for the convergence upper bound.
//! - [`config`] / [`sim`] — experiment configuration and the global-round
//!   simulation loop with metric logging.

pub mod bound;
pub mod channel;
pub mod config;
pub mod fl;
pub mod lambertw;
pub mod quant;
pub mod roundopt;
pub mod sim;

pub use channel::{ChannelRealization, PhysicsConfig, UserProfile};
pub use quant::QuantizedUpdate;
pub use roundopt::{ContinuousAllocation, Multipliers, RoundAllocation};
