//! Brute-force reference optimizers for one- and two-user rounds.
//!
//! These deliberately avoid the production solver's machinery: slot
//! durations come from a bracketed bisection on the rate condition, the
//! compute duration is scanned on a log grid with one refinement pass, and
//! bit counts are swept on the tolerance-tight manifold (the second user's
//! bits follow in closed form from the first's). Used by tests and the
//! `oracle` CLI command to bound the solver's optimality gap.

use super::{min_compute_time, RoundProblem, SolveError};
use crate::channel::{uplink_bits, PhysicsConfig};
use std::f64::consts::LN_2;

/// Reference optimum found by exhaustive search.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub objective: f64,
    pub compute_time: f64,
    pub bits: Vec<f64>,
}

const LC_POINTS: usize = 500;
const BITS_POINTS: usize = 120;

/// Independent slot inversion: doubling bracket, then bisection to 1e-12
/// relative width.
fn bisect_slot(s: f64, e: f64, g: f64, cfg: &PhysicsConfig) -> Option<f64> {
    if s <= 0.0 {
        return Some(0.0);
    }
    if e <= 0.0 || s >= g * e / (cfg.noise_w_per_hz * LN_2) {
        return None;
    }
    let mut hi = 1e-9;
    let mut grow = 0;
    while uplink_bits(hi, e, g, cfg) < s {
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return None;
        }
    }
    let mut lo = if grow == 0 { 0.0 } else { hi / 2.0 };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if uplink_bits(mid, e, g, cfg) < s {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Some(hi)
}

fn payload(problem: &RoundProblem, bits: f64) -> f64 {
    problem.dim as f64 * (bits + 1.0) + problem.physics.header_bits as f64
}

/// Bits solving `p * delta^2 / (2^B - 1)^2 = budget`, clamped to the floor.
fn bits_for_error_budget(p: f64, delta: f64, budget: f64) -> Option<f64> {
    if delta <= 0.0 {
        return Some(1.0);
    }
    if budget <= 0.0 {
        return None;
    }
    let levels = (p * delta * delta / budget).sqrt();
    Some((levels + 1.0).log2().max(1.0))
}

/// Total slot time at a compute duration `l_c` for a candidate bit vector;
/// `None` when energy or capacity rules it out.
fn slot_total(problem: &RoundProblem, l_c: f64, bits: &[f64]) -> Option<f64> {
    let mut total = 0.0;
    for u in 0..problem.user_count() {
        let e = problem.transmit_energy(u, l_c);
        if e <= 0.0 {
            return None;
        }
        if bits[u] > f64::from(problem.bits_cap) + 1e-9 {
            return None;
        }
        total += bisect_slot(payload(problem, bits[u]), e, problem.gains[u], problem.physics)?;
    }
    Some(total)
}

/// Best objective at one compute duration, scanning the first user's bits
/// and deriving the rest from the tolerance budget.
fn best_at_compute_time(problem: &RoundProblem, l_c: f64) -> Option<(f64, Vec<f64>)> {
    let n = problem.user_count();
    let w: Vec<f64> = problem.profiles.iter().map(|p| p.weight).collect();
    let eps = problem.epsilon;
    let cap_bits = f64::from(problem.bits_cap);

    // Corner: every user at the floor with the tolerance slack.
    let floor = vec![1.0; n];
    let floor_err = super::quantization_error(&floor, problem.deltas, &w);
    let mut best: Option<(f64, Vec<f64>)> = None;
    if floor_err <= eps {
        if let Some(t) = slot_total(problem, l_c, &floor) {
            best = Some((l_c + t, floor.clone()));
        }
    }

    match n {
        1 => {
            let b = bits_for_error_budget(w[0], problem.deltas[0], eps)?;
            if b <= cap_bits {
                if let Some(t) = slot_total(problem, l_c, &[b]) {
                    let obj = l_c + t;
                    if best.as_ref().map_or(true, |(o, _)| obj < *o) {
                        best = Some((obj, vec![b]));
                    }
                }
            }
        }
        2 => {
            let term = |b: f64, u: usize| {
                if problem.deltas[u] <= 0.0 {
                    0.0
                } else {
                    let lv = b.exp2() - 1.0;
                    w[u] * problem.deltas[u] * problem.deltas[u] / (lv * lv)
                }
            };
            let scan = |b1_lo: f64, b1_hi: f64, best: &mut Option<(f64, Vec<f64>)>| {
                for i in 0..=BITS_POINTS {
                    let b1 = b1_lo + (b1_hi - b1_lo) * i as f64 / BITS_POINTS as f64;
                    let rem = eps - term(b1, 0);
                    let Some(b2) = bits_for_error_budget(w[1], problem.deltas[1], rem) else {
                        continue;
                    };
                    if b2 > cap_bits {
                        continue;
                    }
                    let bits = vec![b1, b2];
                    if let Some(t) = slot_total(problem, l_c, &bits) {
                        let obj = l_c + t;
                        if best.as_ref().map_or(true, |(o, _)| obj < *o) {
                            *best = Some((obj, bits));
                        }
                    }
                }
            };
            scan(1.0, cap_bits, &mut best);
            if let Some((_, bits)) = best.clone() {
                let step = (cap_bits - 1.0) / BITS_POINTS as f64;
                scan(
                    (bits[0] - step).max(1.0),
                    (bits[0] + step).min(cap_bits),
                    &mut best,
                );
            }
        }
        _ => return None,
    }
    best
}

fn compute_time_grid(problem: &RoundProblem) -> (f64, f64) {
    let a1 = min_compute_time(problem.profiles, problem.physics);
    // keep clear of the energy-exhaustion pole
    let mut lo = a1;
    for u in 0..problem.user_count() {
        let e_req = payload(problem, 1.0) * problem.physics.noise_w_per_hz * LN_2
            / problem.gains[u];
        let headroom = problem.profiles[u].e_max - e_req;
        if headroom > 0.0 {
            lo = lo.max((problem.energy_constant(u) / headroom).sqrt() * (1.0 + 1e-9));
        }
    }
    (lo, lo * 100.0)
}

/// Exhaustive reference for the continuous relaxation (one or two users):
/// log grid over the compute duration crossed with a sweep of the
/// tolerance-tight bit manifold, refined once around the best cell.
pub fn continuous_grid_oracle(problem: &RoundProblem) -> Result<OracleResult, SolveError> {
    problem.validate()?;
    if problem.user_count() > 2 {
        return Err(SolveError::BadInput(
            "grid oracle supports at most two users".into(),
        ));
    }
    let (lo, hi) = compute_time_grid(problem);

    let scan = |lo: f64, hi: f64| -> Option<(f64, f64, Vec<f64>)> {
        let ratio = hi / lo;
        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        for i in 0..=LC_POINTS {
            let l_c = lo * ratio.powf(i as f64 / LC_POINTS as f64);
            if let Some((obj, bits)) = best_at_compute_time(problem, l_c) {
                if best.as_ref().map_or(true, |(o, _, _)| obj < *o) {
                    best = Some((obj, l_c, bits));
                }
            }
        }
        best
    };

    let first = scan(lo, hi).ok_or(SolveError::Infeasible { user: 0 })?;
    let ratio = (hi / lo).powf(1.0 / LC_POINTS as f64);
    let refined = scan((first.1 / ratio).max(lo), first.1 * ratio).unwrap_or(first);
    Ok(OracleResult {
        objective: refined.0,
        compute_time: refined.1,
        bits: refined.2,
    })
}

/// Exhaustive reference for the integer problem: every feasible integer
/// bit vector (up to two users) with a one-dimensional grid-with-refinement
/// search over the compute duration.
pub fn integer_grid_oracle(problem: &RoundProblem) -> Result<OracleResult, SolveError> {
    problem.validate()?;
    let n = problem.user_count();
    if n > 2 {
        return Err(SolveError::BadInput(
            "grid oracle supports at most two users".into(),
        ));
    }
    let w: Vec<f64> = problem.profiles.iter().map(|p| p.weight).collect();
    let cap = problem.bits_cap;
    let (lo, hi) = compute_time_grid(problem);

    let search_lc = |bits: &[f64]| -> Option<(f64, f64)> {
        let points = 200;
        let mut bracket = (lo, hi);
        let mut best: Option<(f64, f64)> = None;
        for _ in 0..3 {
            let ratio = bracket.1 / bracket.0;
            let mut local: Option<(f64, f64)> = None;
            for i in 0..=points {
                let l_c = bracket.0 * ratio.powf(i as f64 / points as f64);
                if let Some(t) = slot_total(problem, l_c, bits) {
                    let obj = l_c + t;
                    if local.as_ref().map_or(true, |(o, _)| obj < *o) {
                        local = Some((obj, l_c));
                    }
                }
            }
            let (obj, at) = local?;
            best = Some((obj, at));
            let step = ratio.powf(1.0 / points as f64);
            bracket = ((at / step).max(lo), at * step);
        }
        best
    };

    // Slot time is strictly increasing in every user's bits once the
    // tolerance holds, so of the full integer grid only the minimal
    // feasible corners (those where lowering any bit count violates the
    // tolerance) can win; scanning them is equivalent to the exhaustive
    // sweep.
    let feasible = |bits: &[f64]| {
        super::quantization_error(bits, problem.deltas, &w) <= problem.epsilon
    };
    let mut best: Option<OracleResult> = None;
    let combos: Vec<Vec<f64>> = if n == 1 {
        (1..=cap)
            .map(f64::from)
            .find(|&b| feasible(&[b]))
            .map(|b| vec![vec![b]])
            .unwrap_or_default()
    } else {
        let mut v = Vec::new();
        for b1 in 1..=cap {
            let b1 = f64::from(b1);
            if let Some(b2) = (1..=cap).map(f64::from).find(|&b2| feasible(&[b1, b2])) {
                v.push(vec![b1, b2]);
            }
        }
        v
    };
    for bits in combos {
        if let Some((obj, l_c)) = search_lc(&bits) {
            if best.as_ref().map_or(true, |b| obj < b.objective) {
                best = Some(OracleResult {
                    objective: obj,
                    compute_time: l_c,
                    bits,
                });
            }
        }
    }
    best.ok_or(SolveError::Infeasible { user: 0 })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::{round_and_resolve, solve_round_continuous, RoundProblem};
    use super::*;

    #[test]
    fn integer_stage_matches_integer_oracle() {
        let cfg = PhysicsConfig::default();
        let profiles = vec![profile(0, 20.0, 0.5), profile(1, 30.0, 0.5)];
        let gains = [10f64.powf(-11.25), 10f64.powf(-11.0)];
        let deltas = [1.0, 1.0];
        let p = RoundProblem::new(&profiles, &gains, &deltas, 0.01, DIM, &cfg);
        let (cont, _) = solve_round_continuous(&p).unwrap();
        let int = round_and_resolve(&p, &cont).unwrap();
        let oracle = integer_grid_oracle(&p).unwrap();
        assert!(
            int.round_latency >= cont.round_latency * (1.0 - 1e-9),
            "integer latency below the continuous optimum"
        );
        let rel = (int.round_latency - oracle.objective) / oracle.objective;
        assert!(
            rel <= 5e-3 && rel >= -5e-3,
            "integer stage {} vs oracle {} (rel {rel})",
            int.round_latency,
            oracle.objective
        );
    }

    #[test]
    fn single_user_oracle_agrees_with_solver() {
        let cfg = PhysicsConfig::default();
        let profiles = vec![profile(0, 25.0, 1.0)];
        let gains = [10f64.powf(-11.25)];
        let deltas = [0.8];
        let p = RoundProblem::new(&profiles, &gains, &deltas, 0.02, DIM, &cfg);
        let (alloc, _) = solve_round_continuous(&p).unwrap();
        let oracle = continuous_grid_oracle(&p).unwrap();
        let rel = (alloc.round_latency - oracle.objective).abs() / oracle.objective;
        assert!(rel <= 5e-3, "solver {} vs oracle {}", alloc.round_latency, oracle.objective);
    }
}
