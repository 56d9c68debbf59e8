//! Stationarity and complementary-slackness diagnostics for converged
//! continuous solutions.
//!
//! Each identity is evaluated as a relative residual so a converged
//! allocation/multiplier pair reports values near machine precision while
//! a perturbed primal reports residuals of the perturbation's order.

use super::{min_compute_time, ContinuousAllocation, Multipliers, RoundProblem};
use crate::lambertw::lambert_w0;
use serde::Serialize;
use std::f64::consts::LN_2;

/// Relative residuals of the optimality system; identities involving one
/// value per user report the worst user.
#[derive(Debug, Clone, Serialize)]
pub struct KktReport {
    /// Compute duration vs its closed form in the energy multipliers.
    pub compute_time_stationarity: f64,
    /// Transmit energy vs its closed form in `lambda1/lambda2`.
    pub energy_identity: f64,
    /// Slot duration vs the Lambert-function closed form.
    pub slot_identity: f64,
    /// Bit count vs capacity equality (payload exactly delivered).
    pub bits_capacity_identity: f64,
    /// Bit-count stationarity linking `lambda1`, `lambda3`, `lambda5`.
    pub bits_stationarity: f64,
    /// Most negative multiplier, normalized (zero when all nonnegative).
    pub multiplier_nonnegativity: f64,
    /// Complementary slackness of the compute-duration floor.
    pub comp_slack_compute_floor: f64,
    /// Complementary slackness of the bit floors.
    pub comp_slack_bits_floor: f64,
}

impl KktReport {
    /// Largest residual across all identities and conditions.
    pub fn max_violation(&self) -> f64 {
        [
            self.compute_time_stationarity,
            self.energy_identity,
            self.slot_identity,
            self.bits_capacity_identity,
            self.bits_stationarity,
            self.multiplier_nonnegativity,
            self.comp_slack_compute_floor,
            self.comp_slack_bits_floor,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Evaluates the KKT identities at `(alloc, mult)`.
pub fn kkt_residuals(
    problem: &RoundProblem,
    alloc: &ContinuousAllocation,
    mult: &Multipliers,
) -> KktReport {
    let cfg = problem.physics;
    let n = problem.user_count();
    let w_hz = cfg.bandwidth_hz;
    let n0 = cfg.noise_w_per_hz;
    let d = problem.dim as f64;
    let m = cfg.header_bits as f64;
    let tau = f64::from(cfg.local_steps);

    // l_c = cbrt(2 zeta tau^3 sum(lambda2 c^3 D^3) / (1 - lambda4))
    let compute_time_stationarity = if mult.lambda4 < 1.0 {
        let sum: f64 = (0..n)
            .map(|u| {
                let p = &problem.profiles[u];
                mult.lambda2[u] * (p.cycles_per_bit * p.workload_bits).powi(3)
            })
            .sum();
        let pred = (2.0 * cfg.zeta * tau.powi(3) * sum / (1.0 - mult.lambda4)).cbrt();
        (alloc.compute_time - pred).abs() / alloc.compute_time
    } else {
        f64::INFINITY
    };

    let mut energy_identity = 0.0f64;
    let mut slot_identity = 0.0f64;
    let mut bits_capacity_identity = 0.0f64;
    let mut bits_stationarity = 0.0f64;
    let mut comp_slack_bits_floor = 0.0f64;
    for u in 0..n {
        let g = problem.gains[u];
        let e = alloc.energies[u];
        let l = alloc.slots[u];
        let b = alloc.bits[u];
        let l1 = mult.lambda1[u];
        let l2 = mult.lambda2[u];
        let l5 = mult.lambda5[u];
        let x = g * e / (l * w_hz * n0);

        // E = l W (lambda1/(lambda2 ln2) - N0/g)
        let e_pred = l * w_hz * (l1 / (l2 * LN_2) - n0 / g);
        energy_identity = energy_identity.max((e - e_pred).abs() / e);

        // l = -gE / (W N0 (1 + 1/W0(psi))), psi = -2^(-1/(W lambda1)) / e
        let psi = -(-LN_2 / (w_hz * l1)).exp() / std::f64::consts::E;
        let slot_res = match lambert_w0(psi) {
            Ok(w0) if w0 != 0.0 => {
                let l_pred = -g * e / (w_hz * n0 * (1.0 + 1.0 / w0));
                (l - l_pred).abs() / l
            }
            _ => f64::INFINITY,
        };
        slot_identity = slot_identity.max(slot_res);

        // B from tight payload delivery
        let b_pred = l * w_hz / d * x.ln_1p() / LN_2 - m / d - 1.0;
        bits_capacity_identity =
            bits_capacity_identity.max((b - b_pred).abs() / b.abs().max(1.0));

        // (2^B - 1)^3 (d lambda1 - lambda5) = 2 lambda3 ln2 p delta^2 2^B
        let delta = problem.deltas[u];
        let p_n = problem.profiles[u].weight;
        let two_b = b.exp2();
        let levels = two_b - 1.0;
        let lhs = levels.powi(3) * (d * l1 - l5);
        let rhs = 2.0 * mult.lambda3 * LN_2 * p_n * delta * delta * two_b;
        let scale = levels.powi(3) * d * l1;
        bits_stationarity = bits_stationarity.max((lhs - rhs).abs() / scale);

        comp_slack_bits_floor =
            comp_slack_bits_floor.max((l5 * (b - 1.0)).abs() / (d * l1 * b.abs().max(1.0)));
    }

    let neg = mult
        .lambda1
        .iter()
        .chain(&mult.lambda2)
        .chain(&mult.lambda5)
        .chain([&mult.lambda3, &mult.lambda4])
        .fold(0.0f64, |acc, &lam| acc.max(-lam / (1.0 + lam.abs())));

    let a1 = min_compute_time(problem.profiles, cfg);
    let comp_slack_compute_floor =
        (mult.lambda4 * (alloc.compute_time - a1)).abs() / alloc.compute_time;

    KktReport {
        compute_time_stationarity,
        energy_identity,
        slot_identity,
        bits_capacity_identity,
        bits_stationarity,
        multiplier_nonnegativity: neg.max(0.0),
        comp_slack_compute_floor,
        comp_slack_bits_floor,
    }
}
