//! Baseline allocators. Each produces a feasible point of the round
//! problem, so the joint optimizer's latency never exceeds any of them.

use super::solver::{bits_on_tolerance_manifold, solve_given_bits, weights};
use super::{
    min_compute_time, quantization_error, round_and_resolve, solve_round_continuous,
    RoundAllocation, RoundProblem, SolveError,
};
use crate::channel::min_uplink_time;

/// Pre-assigns the same bit count to every user (reference value 16) and
/// optimizes the remaining variables.
pub fn baseline_fixed_bits(
    bits: u32,
    problem: &RoundProblem,
) -> Result<RoundAllocation, SolveError> {
    let fixed = vec![bits; problem.user_count()];
    solve_given_bits(problem, &fixed)
}

/// Runs the joint optimizer, then assigns every user the same slot
/// duration: the largest per-user minimum slot. C1 keeps holding because
/// deliverable bits grow with slot duration.
pub fn baseline_equal_slots(problem: &RoundProblem) -> Result<RoundAllocation, SolveError> {
    let (cont, _) = solve_round_continuous(problem)?;
    let base = round_and_resolve(problem, &cont)?;
    let slot = base.slots.iter().fold(0.0f64, |a, &s| a.max(s));
    let n = base.slots.len();
    let round_latency = base.compute_time + slot * n as f64;
    Ok(RoundAllocation {
        slots: vec![slot; n],
        round_latency,
        ..base
    })
}

/// Splits each user's budget evenly between computation and transmission:
/// the compute duration comes from the compute-energy equality of the
/// bottleneck user, transmit energies are fixed at half budget, and bit
/// counts follow the tolerance-manifold rule of the joint optimizer.
pub fn baseline_equal_energy(problem: &RoundProblem) -> Result<RoundAllocation, SolveError> {
    problem.validate()?;
    let cfg = problem.physics;
    let n = problem.user_count();

    let a1 = min_compute_time(problem.profiles, cfg);
    let mut l_c = a1;
    for u in 0..n {
        let half = problem.profiles[u].e_max / 2.0;
        l_c = l_c.max((problem.energy_constant(u) / half).sqrt());
    }
    let energies: Vec<f64> = problem.profiles.iter().map(|p| p.e_max / 2.0).collect();

    let (real_bits, _) = bits_on_tolerance_manifold(problem, &energies)
        .ok_or(SolveError::Infeasible { user: 0 })?;
    let bits: Vec<u32> = real_bits
        .iter()
        .map(|&b| ((b - 1e-9).ceil().max(1.0) as u32).min(problem.bits_cap))
        .collect();

    let mut slots = Vec::with_capacity(n);
    for u in 0..n {
        let payload = problem.payload(f64::from(bits[u]));
        let slot = min_uplink_time(payload, energies[u], problem.gains[u], cfg)
            .map_err(|_| SolveError::Infeasible { user: u })?;
        slots.push(slot);
    }

    let tau = f64::from(cfg.local_steps);
    let frequencies = problem
        .profiles
        .iter()
        .map(|p| (tau * p.cycles_per_bit * p.workload_bits / l_c).min(p.f_max))
        .collect();
    let round_latency = l_c + slots.iter().sum::<f64>();
    let real: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
    let feasible = quantization_error(&real, problem.deltas, &weights(problem))
        <= problem.epsilon * (1.0 + 1e-9);
    Ok(RoundAllocation {
        compute_time: l_c,
        frequencies,
        energies,
        slots,
        bits,
        round_latency,
        feasible,
    })
}
