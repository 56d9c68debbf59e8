//! Per-round joint optimizer for compute duration, transmit energies,
//! uplink slot durations and quantization bit counts.
//!
//! The round problem minimizes `l_c + sum_n l_up_n` subject to
//! - C1: each user's slot delivers its quantized payload,
//! - C2: compute plus transmit energy stays within the per-round budget,
//! - C3: the weighted quantization error `sum_n p_n * delta_n^2/(2^B_n-1)^2`
//!   stays within the round tolerance `epsilon`,
//! - C4: the shared compute duration admits every user at or below its
//!   maximum CPU frequency (`l_c >= a1`),
//! - C5: at least one quantization bit per user.
//!
//! At the continuous optimum C1, C2 and C3 hold with equality and all users
//! finish computing simultaneously at `f_n = tau*c_n*D_n/l_c`. The solver
//! exploits this: an outer one-dimensional search over `l_c` (the value
//! function is convex) wraps an inner exact solve that takes energies from
//! tight C2 and picks bit counts on the C3-tight manifold via a scalar
//! multiplier bisection. Multipliers for the full KKT system are recovered
//! algebraically afterwards and checked by [`kkt_residuals`].

mod baselines;
mod kkt;
pub mod oracle;
mod solver;

pub use baselines::{baseline_equal_energy, baseline_equal_slots, baseline_fixed_bits};
pub use kkt::{kkt_residuals, KktReport};
pub use solver::{round_and_resolve, solve_given_bits, solve_round_continuous};

pub use crate::lambertw::lambert_w0;

use crate::channel::{PhysicsConfig, UserProfile};
use serde::Serialize;
use thiserror::Error;

/// Hard cap on quantization bits considered by searches.
pub const DEFAULT_BITS_CAP: u32 = 40;

/// One round's optimization inputs.
#[derive(Debug, Clone)]
pub struct RoundProblem<'a> {
    pub profiles: &'a [UserProfile],
    /// Linear channel gains for this round.
    pub gains: &'a [f64],
    /// Quantization-error scales `delta_n = sqrt(d)/2 * (max|dw| - min|dw|)`.
    pub deltas: &'a [f64],
    /// Quantization-error tolerance for this round.
    pub epsilon: f64,
    /// Model dimension `d` (elements per payload).
    pub dim: u64,
    pub physics: &'a PhysicsConfig,
    /// Upper limit on per-user bits; hitting it is reported distinctly.
    pub bits_cap: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    /// Some user's minimum payload exceeds its capacity cap even with the
    /// whole energy budget spent on transmission.
    #[error("user {user}: minimum payload exceeds the capacity cap at full energy")]
    Infeasible { user: usize },
    /// The configured bits cap prevents meeting the error tolerance.
    #[error("error tolerance unreachable under the configured bits cap")]
    EpsilonUnreachable,
    #[error("invalid round inputs: {0}")]
    BadInput(String),
}

/// Continuous-relaxation solution with real-valued bit counts.
#[derive(Debug, Clone, Serialize)]
pub struct ContinuousAllocation {
    /// Shared local-computation duration `l_c` in seconds.
    pub compute_time: f64,
    /// Per-user CPU frequencies in Hz.
    pub frequencies: Vec<f64>,
    /// Per-user transmit energies in Joule.
    pub energies: Vec<f64>,
    /// Per-user uplink slot durations in seconds.
    pub slots: Vec<f64>,
    /// Real-valued quantization bits.
    pub bits: Vec<f64>,
    /// `l_c + sum(slots)`.
    pub round_latency: f64,
}

/// Final allocation with integral bit counts.
#[derive(Debug, Clone, Serialize)]
pub struct RoundAllocation {
    pub compute_time: f64,
    pub frequencies: Vec<f64>,
    pub energies: Vec<f64>,
    pub slots: Vec<f64>,
    pub bits: Vec<u32>,
    pub round_latency: f64,
    /// Whether the allocation satisfies every round constraint.
    pub feasible: bool,
}

/// Lagrange multipliers of the round problem, one per constraint family.
#[derive(Debug, Clone, Serialize)]
pub struct Multipliers {
    /// Payload-delivery constraints (C1), one per user.
    pub lambda1: Vec<f64>,
    /// Energy budgets (C2), one per user.
    pub lambda2: Vec<f64>,
    /// Error tolerance (C3).
    pub lambda3: f64,
    /// Compute-duration floor (C4).
    pub lambda4: f64,
    /// Bit floors (C5), one per user.
    pub lambda5: Vec<f64>,
}

impl<'a> RoundProblem<'a> {
    pub fn new(
        profiles: &'a [UserProfile],
        gains: &'a [f64],
        deltas: &'a [f64],
        epsilon: f64,
        dim: u64,
        physics: &'a PhysicsConfig,
    ) -> Self {
        Self {
            profiles,
            gains,
            deltas,
            epsilon,
            dim,
            physics,
            bits_cap: DEFAULT_BITS_CAP,
        }
    }

    pub fn user_count(&self) -> usize {
        self.profiles.len()
    }

    /// Payload size for a real-valued bit count.
    pub fn payload(&self, bits: f64) -> f64 {
        self.dim as f64 * (bits + 1.0) + self.physics.header_bits as f64
    }

    /// Energy constant `zeta * tau^3 * c^3 * D^3`; tight C2 reads
    /// `E_n = e_max - k_n / l_c^2`.
    pub fn energy_constant(&self, user: usize) -> f64 {
        let p = &self.profiles[user];
        let tau = f64::from(self.physics.local_steps);
        let cd = p.cycles_per_bit * p.workload_bits;
        self.physics.zeta * tau.powi(3) * cd.powi(3)
    }

    /// Transmit energy left after computing for `l_c` seconds, per user.
    pub fn transmit_energy(&self, user: usize, l_c: f64) -> f64 {
        self.profiles[user].e_max - self.energy_constant(user) / (l_c * l_c)
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let n = self.profiles.len();
        if n == 0 {
            return Err(SolveError::BadInput("no users".into()));
        }
        if self.gains.len() != n || self.deltas.len() != n {
            return Err(SolveError::BadInput(
                "gains/deltas length does not match user count".into(),
            ));
        }
        if !(self.epsilon > 0.0) {
            return Err(SolveError::BadInput("epsilon must be positive".into()));
        }
        if self.dim == 0 {
            return Err(SolveError::BadInput("model dimension must be positive".into()));
        }
        if self.bits_cap == 0 {
            return Err(SolveError::BadInput("bits cap must be positive".into()));
        }
        if self.gains.iter().any(|&g| !(g > 0.0)) {
            return Err(SolveError::BadInput("gains must be strictly positive".into()));
        }
        if self.deltas.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
            return Err(SolveError::BadInput("deltas must be finite and nonnegative".into()));
        }
        let weight_sum: f64 = self.profiles.iter().map(|p| p.weight).sum();
        if (weight_sum - 1.0).abs() > 1e-6 {
            return Err(SolveError::BadInput(format!(
                "aggregation weights sum to {weight_sum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Minimum admissible shared compute duration
/// `a1 = max_n tau * c_n * D_n / f_max_n`.
pub fn min_compute_time(profiles: &[UserProfile], cfg: &PhysicsConfig) -> f64 {
    let tau = f64::from(cfg.local_steps);
    profiles
        .iter()
        .map(|p| tau * p.cycles_per_bit * p.workload_bits / p.f_max)
        .fold(0.0, f64::max)
}

/// CPU frequencies making every user finish local computation exactly at
/// `l_c`; requires `l_c >= a1` so no user exceeds its maximum frequency.
pub fn cpu_frequencies(
    l_c: f64,
    profiles: &[UserProfile],
    cfg: &PhysicsConfig,
) -> Result<Vec<f64>, SolveError> {
    let a1 = min_compute_time(profiles, cfg);
    if l_c < a1 * (1.0 - 1e-12) {
        return Err(SolveError::BadInput(format!(
            "compute duration {l_c} below the admissible floor {a1}"
        )));
    }
    let tau = f64::from(cfg.local_steps);
    Ok(profiles
        .iter()
        .map(|p| (tau * p.cycles_per_bit * p.workload_bits / l_c).min(p.f_max))
        .collect())
}

/// Weighted quantization error `sum_n p_n * delta_n^2 / (2^B_n - 1)^2`
/// for real-valued bits; users with `delta_n = 0` contribute nothing.
pub fn quantization_error(bits: &[f64], deltas: &[f64], weights: &[f64]) -> f64 {
    bits.iter()
        .zip(deltas)
        .zip(weights)
        .filter(|((_, &d), _)| d > 0.0)
        .map(|((&b, &d), &p)| {
            let levels = b.exp2() - 1.0;
            p * d * d / (levels * levels)
        })
        .sum()
}

/// Checks every round constraint on a final allocation: payload delivery
/// (C1), energy budgets (C2), the error tolerance (C3), the compute-
/// duration floor and frequency caps (C4), the bit floor (C5), and the
/// latency bookkeeping. Returns the first violation found.
pub fn verify_allocation(
    problem: &RoundProblem,
    alloc: &RoundAllocation,
) -> Result<(), String> {
    use crate::channel::{compute_energy, uplink_bits};
    let n = problem.user_count();
    let cfg = problem.physics;
    let tau = f64::from(cfg.local_steps);
    if alloc.bits.len() != n
        || alloc.slots.len() != n
        || alloc.energies.len() != n
        || alloc.frequencies.len() != n
    {
        return Err("allocation arrays do not match the user count".into());
    }

    for u in 0..n {
        let p = &problem.profiles[u];
        let b = alloc.bits[u];
        if b < 1 {
            return Err(format!("user {u}: bit count below the floor"));
        }
        let payload = problem.payload(f64::from(b));
        let delivered = uplink_bits(alloc.slots[u], alloc.energies[u], problem.gains[u], cfg);
        if delivered < payload * (1.0 - 1e-6) {
            return Err(format!(
                "user {u}: slot delivers {delivered} of {payload} payload bits"
            ));
        }
        let e_total = compute_energy(p, alloc.frequencies[u], cfg) + alloc.energies[u];
        if e_total > p.e_max * (1.0 + 1e-9) {
            return Err(format!(
                "user {u}: energy {e_total} exceeds the {} budget",
                p.e_max
            ));
        }
        if alloc.frequencies[u] > p.f_max * (1.0 + 1e-9) {
            return Err(format!("user {u}: frequency above the hardware cap"));
        }
        let needed = tau * p.cycles_per_bit * p.workload_bits / alloc.frequencies[u];
        if needed > alloc.compute_time * (1.0 + 1e-9) {
            return Err(format!(
                "user {u}: local computation ({needed}s) overruns the shared window"
            ));
        }
    }

    let real: Vec<f64> = alloc.bits.iter().map(|&b| f64::from(b)).collect();
    let weights: Vec<f64> = problem.profiles.iter().map(|p| p.weight).collect();
    let err = quantization_error(&real, problem.deltas, &weights);
    if err > problem.epsilon * (1.0 + 1e-9) {
        return Err(format!(
            "quantization error {err} exceeds the tolerance {}",
            problem.epsilon
        ));
    }

    let latency = alloc.compute_time + alloc.slots.iter().sum::<f64>();
    if (latency - alloc.round_latency).abs() > 1e-9 * latency.max(1e-300) {
        return Err("round latency does not equal compute time plus slots".into());
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn profile(id: usize, c: f64, weight: f64) -> UserProfile {
        UserProfile {
            id,
            cycles_per_bit: c,
            workload_bits: 1e6,
            f_max: 1.5e9,
            e_max: 0.3,
            weight,
            distance_m: 500.0,
        }
    }

    pub const DIM: u64 = 23_860;
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn min_compute_time_is_bottleneck() {
        let cfg = PhysicsConfig::default();
        let profiles = vec![profile(0, 20.0, 0.5), profile(1, 30.0, 0.5)];
        let a1 = min_compute_time(&profiles, &cfg);
        assert!((a1 - 2.0 * 30.0 * 1e6 / 1.5e9).abs() < 1e-15);
    }

    #[test]
    fn cpu_frequencies_symmetry_and_bottleneck() {
        let cfg = PhysicsConfig::default();
        let profiles = vec![profile(0, 25.0, 0.5), profile(1, 25.0, 0.5)];
        let a1 = min_compute_time(&profiles, &cfg);
        let f = cpu_frequencies(a1, &profiles, &cfg).unwrap();
        assert_eq!(f[0], f[1]);
        assert!((f[0] - 1.5e9).abs() < 1e-3, "bottleneck should run at f_max");

        // tau=2, c=25, D=1e6, l_c=0.05 -> 1 GHz
        let f = cpu_frequencies(0.05, &profiles, &cfg).unwrap();
        assert!((f[0] - 1e9).abs() < 1e-6);

        assert!(cpu_frequencies(a1 * 0.5, &profiles, &cfg).is_err());
    }

    #[test]
    fn quantization_error_skips_zero_deltas() {
        let e = quantization_error(&[2.0, 5.0], &[1.0, 0.0], &[0.5, 0.5]);
        assert!((e - 0.5 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn verifier_accepts_solver_output_and_rejects_corruption() {
        let cfg = PhysicsConfig::default();
        let profiles = vec![profile(0, 20.0, 0.5), profile(1, 30.0, 0.5)];
        let gains = [10f64.powf(-11.25), 10f64.powf(-11.0)];
        let deltas = [1.0, 1.0];
        let p = RoundProblem::new(&profiles, &gains, &deltas, 0.01, DIM, &cfg);
        let (cont, _) = solve_round_continuous(&p).unwrap();
        let alloc = round_and_resolve(&p, &cont).unwrap();
        assert_eq!(verify_allocation(&p, &alloc), Ok(()));

        let mut short_slot = alloc.clone();
        short_slot.slots[0] *= 0.5;
        short_slot.round_latency -= alloc.slots[0] * 0.5;
        assert!(verify_allocation(&p, &short_slot)
            .unwrap_err()
            .contains("payload"));

        let mut greedy = alloc.clone();
        greedy.energies[1] = profiles[1].e_max * 1.5;
        assert!(verify_allocation(&p, &greedy).unwrap_err().contains("budget"));

        let mut coarse = alloc.clone();
        for b in &mut coarse.bits {
            *b = 1;
        }
        assert!(verify_allocation(&p, &coarse).is_err());
    }

    #[test]
    fn validation_catches_bad_weights() {
        let cfg = PhysicsConfig::default();
        let profiles = vec![profile(0, 20.0, 0.7), profile(1, 30.0, 0.7)];
        let gains = [1e-11, 1e-11];
        let deltas = [1.0, 1.0];
        let p = RoundProblem::new(&profiles, &gains, &deltas, 0.01, DIM, &cfg);
        assert!(matches!(p.validate(), Err(SolveError::BadInput(_))));
    }
}
