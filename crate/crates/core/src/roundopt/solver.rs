//! Continuous round solver, integer re-solve, and multiplier recovery.

use super::{
    cpu_frequencies, min_compute_time, quantization_error, ContinuousAllocation, Multipliers,
    RoundAllocation, RoundProblem, SolveError,
};
use crate::channel::{capacity_cap, min_uplink_time, uplink_rate_slope};

use std::f64::consts::LN_2;

/// Relative tolerance of the outer search over the compute duration.
const LC_REL_TOL: f64 = 1e-9;
/// Absolute tolerance on bit-count roots in the per-user minimization.
const BITS_ABS_TOL: f64 = 1e-12;
/// Relative tolerance on the error-tolerance residual in the multiplier
/// bisection.
const C3_REL_TOL: f64 = 1e-10;
/// Safety margin keeping payloads strictly below capacity caps.
const CAP_MARGIN: f64 = 1e-9;

const GOLDEN_INV: f64 = 0.618_033_988_749_894_9;

/// Inner solution for one candidate compute duration.
struct InnerEval {
    objective: f64,
    bits: Vec<f64>,
    slots: Vec<f64>,
    energies: Vec<f64>,
    lambda3: f64,
}

/// Solves the continuous relaxation of the round problem.
///
/// Returns the latency-minimizing allocation with real-valued bits and the
/// multipliers recovered from the stationarity identities. Energies come
/// from tight C2, slot durations from tight C1, and bit counts sit on the
/// C3-tight manifold unless every user is clamped at the one-bit floor.
pub fn solve_round_continuous(
    problem: &RoundProblem,
) -> Result<(ContinuousAllocation, Multipliers), SolveError> {
    problem.validate()?;
    let n = problem.user_count();
    let cfg = problem.physics;

    // The bits cap alone must allow the tolerance to be met.
    let capped_bits = vec![f64::from(problem.bits_cap); n];
    if quantization_error(&capped_bits, problem.deltas, &weights(problem)) > problem.epsilon {
        return Err(SolveError::EpsilonUnreachable);
    }

    let a1 = min_compute_time(problem.profiles, cfg);
    let l_lo = lower_compute_bound(problem, &vec![1.0; n], a1)?;

    let mut best: Option<(f64, InnerEval)> = None;
    let eval = |l_c: f64, best: &mut Option<(f64, InnerEval)>| -> f64 {
        match inner_solve(problem, l_c) {
            Some(e) => {
                let obj = e.objective;
                if best.as_ref().map_or(true, |(_, b)| obj < b.objective) {
                    *best = Some((l_c, e));
                }
                obj
            }
            None => f64::INFINITY,
        }
    };

    // Expand the upper bracket until the objective turns upward.
    let mut hi = (100.0 * a1).max(2.0 * l_lo);
    let mut f_hi = eval(hi, &mut best);
    for _ in 0..80 {
        let next = 2.0 * hi;
        let f_next = eval(next, &mut best);
        if f_next >= f_hi && f_hi.is_finite() {
            break;
        }
        hi = next;
        f_hi = f_next;
    }
    if best.is_none() {
        // No finite objective anywhere in the bracket.
        return Err(SolveError::Infeasible { user: 0 });
    }

    golden_section(l_lo, hi, LC_REL_TOL, |l| eval(l, &mut best));

    let (l_c, inner) = best.expect("at least one feasible evaluation");
    let frequencies = cpu_frequencies(l_c, problem.profiles, cfg)?;
    let round_latency = l_c + inner.slots.iter().sum::<f64>();
    let alloc = ContinuousAllocation {
        compute_time: l_c,
        frequencies,
        energies: inner.energies,
        slots: inner.slots,
        bits: inner.bits,
        round_latency,
    };
    let mult = recover_multipliers(problem, &alloc, inner.lambda3, a1);
    Ok((alloc, mult))
}

/// Integer stage: bit counts start at the ceiling of the continuous
/// solution and the round is re-solved as a one-dimensional convex problem
/// in `l_c`; a descent over tolerance-feasible integer neighbors (lowering
/// one user's bits, optionally raising another's to restore the tolerance)
/// then removes the rounding slack that a plain ceiling can leave behind.
///
/// Every visited point keeps the error tolerance satisfied, so the final
/// allocation has nonnegative tolerance slack; when the continuous bits
/// are already integral no neighbor can improve and the continuous optimum
/// is reproduced.
pub fn round_and_resolve(
    problem: &RoundProblem,
    continuous: &ContinuousAllocation,
) -> Result<RoundAllocation, SolveError> {
    let n = problem.user_count();
    let w = weights(problem);
    let mut bits: Vec<u32> = continuous
        .bits
        .iter()
        .map(|&b| ((b - 1e-9).ceil().max(1.0) as u32).min(problem.bits_cap))
        .collect();
    let mut best = solve_given_bits(problem, &bits)?;

    let error_of = |bits: &[u32]| {
        let real: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
        quantization_error(&real, problem.deltas, &w)
    };

    for _ in 0..60 {
        let mut improved: Option<(Vec<u32>, RoundAllocation)> = None;
        let consider = |cand: Vec<u32>,
                        improved: &mut Option<(Vec<u32>, RoundAllocation)>| {
            if error_of(&cand) > problem.epsilon {
                return;
            }
            if let Ok(alloc) = solve_given_bits(problem, &cand) {
                let incumbent = improved
                    .as_ref()
                    .map_or(best.round_latency, |(_, a)| a.round_latency);
                if alloc.round_latency < incumbent * (1.0 - 1e-12) {
                    *improved = Some((cand, alloc));
                }
            }
        };

        for i in 0..n {
            if bits[i] <= 1 {
                continue;
            }
            let mut cand = bits.clone();
            cand[i] -= 1;
            consider(cand.clone(), &mut improved);
            // pair move: restore the tolerance by raising one other user
            for j in 0..n {
                if j == i {
                    continue;
                }
                let mut pair = cand.clone();
                while error_of(&pair) > problem.epsilon && pair[j] < problem.bits_cap {
                    pair[j] += 1;
                }
                if pair[j] > bits[j] {
                    consider(pair, &mut improved);
                }
            }
        }

        match improved {
            Some((cand, alloc)) => {
                bits = cand;
                best = alloc;
            }
            None => break,
        }
    }
    Ok(best)
}

/// Minimizes `l_c + sum(slots)` for a fixed integral bit vector: energies
/// from tight C2, slots from exact payload delivery.
pub fn solve_given_bits(problem: &RoundProblem, bits: &[u32]) -> Result<RoundAllocation, SolveError> {
    problem.validate()?;
    let n = problem.user_count();
    if bits.len() != n {
        return Err(SolveError::BadInput("bit vector length mismatch".into()));
    }
    let cfg = problem.physics;

    let real_bits: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
    let a1 = min_compute_time(problem.profiles, cfg);
    let l_lo = lower_compute_bound(problem, &real_bits, a1)?;

    let mut best: Option<(f64, Vec<f64>, Vec<f64>, f64)> = None;
    let eval = |l_c: f64, best: &mut Option<(f64, Vec<f64>, Vec<f64>, f64)>| -> f64 {
        match slots_for_bits(problem, l_c, &real_bits) {
            Some((slots, energies)) => {
                let obj = l_c + slots.iter().sum::<f64>();
                if best.as_ref().map_or(true, |(_, _, _, b)| obj < *b) {
                    *best = Some((l_c, slots, energies, obj));
                }
                obj
            }
            None => f64::INFINITY,
        }
    };

    let mut hi = (100.0 * a1).max(2.0 * l_lo);
    let mut f_hi = eval(hi, &mut best);
    for _ in 0..80 {
        let next = 2.0 * hi;
        let f_next = eval(next, &mut best);
        if f_next >= f_hi && f_hi.is_finite() {
            break;
        }
        hi = next;
        f_hi = f_next;
    }
    if best.is_none() {
        return Err(SolveError::Infeasible { user: 0 });
    }
    golden_section(l_lo, hi, LC_REL_TOL, |l| eval(l, &mut best));

    let (l_c, slots, energies, obj) = best.expect("at least one feasible evaluation");
    let frequencies = cpu_frequencies(l_c, problem.profiles, cfg)?;
    let feasible =
        quantization_error(&real_bits, problem.deltas, &weights(problem))
            <= problem.epsilon * (1.0 + 1e-9);
    Ok(RoundAllocation {
        compute_time: l_c,
        frequencies,
        energies,
        slots,
        bits: bits.to_vec(),
        round_latency: obj,
        feasible,
    })
}

pub(super) fn weights(problem: &RoundProblem) -> Vec<f64> {
    problem.profiles.iter().map(|p| p.weight).collect()
}

/// Smallest compute duration at which every user has positive transmit
/// energy and its payload (at the given bit counts) sits below the cap.
fn lower_compute_bound(
    problem: &RoundProblem,
    bits: &[f64],
    a1: f64,
) -> Result<f64, SolveError> {
    let cfg = problem.physics;
    let mut lo = a1;
    for u in 0..problem.user_count() {
        let payload = problem.payload(bits[u]);
        // capacity_cap(e_req) == payload
        let e_req = payload * cfg.noise_w_per_hz * LN_2 / problem.gains[u];
        let headroom = problem.profiles[u].e_max - e_req;
        if headroom <= 0.0 {
            return Err(SolveError::Infeasible { user: u });
        }
        let need = (problem.energy_constant(u) / headroom).sqrt() * (1.0 + 1e-12);
        lo = lo.max(need);
    }
    Ok(lo)
}

/// Slot durations and energies for a fixed compute duration and fixed
/// real-valued bits; `None` when some user runs out of energy or capacity.
fn slots_for_bits(
    problem: &RoundProblem,
    l_c: f64,
    bits: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let cfg = problem.physics;
    let n = problem.user_count();
    let mut slots = Vec::with_capacity(n);
    let mut energies = Vec::with_capacity(n);
    for u in 0..n {
        let e = problem.transmit_energy(u, l_c);
        if e <= 0.0 {
            return None;
        }
        let l = min_uplink_time(problem.payload(bits[u]), e, problem.gains[u], cfg).ok()?;
        slots.push(l);
        energies.push(e);
    }
    Some((slots, energies))
}

/// Exact inner solve for one compute duration: tight-C2 energies, then bit
/// counts on the C3-tight manifold via bisection over the error-tolerance
/// multiplier.
fn inner_solve(problem: &RoundProblem, l_c: f64) -> Option<InnerEval> {
    let n = problem.user_count();
    let mut energies = Vec::with_capacity(n);
    for u in 0..n {
        let e = problem.transmit_energy(u, l_c);
        if e <= 0.0 {
            return None;
        }
        energies.push(e);
    }
    let (bits, lambda3) = bits_on_tolerance_manifold(problem, &energies)?;
    finish_inner(problem, l_c, bits, energies, lambda3)
}

/// Picks real-valued bit counts minimizing total slot time subject to the
/// error tolerance, for fixed per-user transmit energies.
///
/// Returns the bits and the tolerance multiplier: zero with every user at
/// the one-bit floor when the tolerance is slack there, otherwise the
/// multiplier at which the weighted error meets the tolerance. `None` when
/// the energies cannot support the tolerance.
pub(super) fn bits_on_tolerance_manifold(
    problem: &RoundProblem,
    energies: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let cfg = problem.physics;
    let n = problem.user_count();

    // Per-user feasible bit ceiling at these energies.
    let mut bits_hi = Vec::with_capacity(n);
    for u in 0..n {
        let cap = capacity_cap(energies[u], problem.gains[u], cfg) * (1.0 - CAP_MARGIN);
        let b = (cap - cfg.header_bits as f64) / problem.dim as f64 - 1.0;
        let b = b.min(f64::from(problem.bits_cap));
        if b < 1.0 {
            return None;
        }
        bits_hi.push(b);
    }

    let w = weights(problem);
    let ones = vec![1.0; n];
    if quantization_error(&ones, problem.deltas, &w) <= problem.epsilon {
        // Tolerance already met at the bit floor; C3 is slack.
        return Some((ones, 0.0));
    }

    // Largest achievable accuracy at these energies.
    let err_min = quantization_error(&bits_hi, problem.deltas, &w);
    if err_min > problem.epsilon * (1.0 + 1e-12) {
        return None;
    }

    let bits_at = |lambda3: f64| -> Vec<f64> {
        (0..n)
            .map(|u| best_bits_for_user(problem, u, energies[u], bits_hi[u], lambda3))
            .collect()
    };
    let err_at = |bits: &[f64]| quantization_error(bits, problem.deltas, &w);

    // Bracket the multiplier: larger lambda3 buys more bits.
    let mut lam_hi = 1.0;
    let mut bits_hi_eval = bits_at(lam_hi);
    let mut grow = 0;
    while err_at(&bits_hi_eval) > problem.epsilon {
        lam_hi *= 8.0;
        bits_hi_eval = bits_at(lam_hi);
        grow += 1;
        if grow > 120 {
            // Asymptotically pinned at the ceilings.
            return if err_at(&bits_hi_eval) <= problem.epsilon * (1.0 + 1e-9) {
                Some((bits_hi_eval, lam_hi))
            } else {
                None
            };
        }
    }

    let mut lam_lo = 0.0;
    let mut bits_best = bits_hi_eval;
    let mut lam_best = lam_hi;
    for _ in 0..200 {
        let mid = 0.5 * (lam_lo + lam_hi);
        let bits_mid = bits_at(mid);
        let err = err_at(&bits_mid);
        if err > problem.epsilon {
            lam_lo = mid;
        } else {
            lam_hi = mid;
            bits_best = bits_mid;
            lam_best = mid;
            if (err / problem.epsilon - 1.0).abs() <= C3_REL_TOL {
                break;
            }
        }
        if (lam_hi - lam_lo) <= 1e-15 * lam_hi {
            break;
        }
    }
    Some((bits_best, lam_best))
}

fn finish_inner(
    problem: &RoundProblem,
    l_c: f64,
    bits: Vec<f64>,
    energies: Vec<f64>,
    lambda3: f64,
) -> Option<InnerEval> {
    let cfg = problem.physics;
    let mut slots = Vec::with_capacity(bits.len());
    for u in 0..bits.len() {
        let l = min_uplink_time(problem.payload(bits[u]), energies[u], problem.gains[u], cfg)
            .ok()?;
        slots.push(l);
    }
    Some(InnerEval {
        objective: l_c + slots.iter().sum::<f64>(),
        bits,
        slots,
        energies,
        lambda3,
    })
}

/// Minimizes `T_u(B) + lambda3 * p_u * delta_u^2 / (2^B - 1)^2` over
/// `B in [1, b_hi]` by bisecting the derivative; the slot term is convex
/// increasing in `B` and the error term convex decreasing, ties break
/// toward the smallest bit count.
fn best_bits_for_user(
    problem: &RoundProblem,
    user: usize,
    energy: f64,
    b_hi: f64,
    lambda3: f64,
) -> f64 {
    let delta = problem.deltas[user];
    if delta <= 0.0 || lambda3 == 0.0 {
        return 1.0;
    }
    let p = problem.profiles[user].weight;

    let deriv = |b: f64| -> f64 {
        let payload = problem.payload(b);
        let l = match min_uplink_time(payload, energy, problem.gains[user], problem.physics) {
            Ok(l) => l,
            Err(_) => return f64::INFINITY,
        };
        let slope = uplink_rate_slope(l, energy, problem.gains[user], problem.physics);
        let dt_db = problem.dim as f64 / slope;
        let two_b = b.exp2();
        let levels = two_b - 1.0;
        dt_db - lambda3 * p * delta * delta * 2.0 * LN_2 * two_b / (levels * levels * levels)
    };

    if deriv(1.0) >= 0.0 {
        return 1.0;
    }
    if deriv(b_hi) <= 0.0 {
        return b_hi;
    }
    let mut lo = 1.0;
    let mut hi = b_hi;
    while hi - lo > BITS_ABS_TOL {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Golden-section minimization on `[lo, hi]` to a relative interval width;
/// tolerates infinite values (infeasible edges of the bracket).
fn golden_section(mut lo: f64, mut hi: f64, rel_tol: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let mut x1 = hi - GOLDEN_INV * (hi - lo);
    let mut x2 = lo + GOLDEN_INV * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if (hi - lo) <= rel_tol * hi.abs().max(1e-300) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN_INV * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN_INV * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Recovers the multiplier vector from the stationarity identities at a
/// converged continuous solution.
///
/// Slot stationarity pins `lambda1` through the slot's SNR, energy
/// stationarity pins `lambda2`, the compute-duration identity pins
/// `lambda4` when the floor binds (zero otherwise, by complementary
/// slackness), and the bit floor pins `lambda5` for clamped users.
fn recover_multipliers(
    problem: &RoundProblem,
    alloc: &ContinuousAllocation,
    lambda3: f64,
    a1: f64,
) -> Multipliers {
    let cfg = problem.physics;
    let n = problem.user_count();
    let w_hz = cfg.bandwidth_hz;

    let mut lambda1 = Vec::with_capacity(n);
    let mut lambda2 = Vec::with_capacity(n);
    let mut lambda5 = Vec::with_capacity(n);
    for u in 0..n {
        let e = alloc.energies[u];
        let l = alloc.slots[u];
        let g = problem.gains[u];
        let x = g * e / (l * w_hz * cfg.noise_w_per_hz);
        let l1 = LN_2 * (1.0 + x) / (w_hz * ((1.0 + x) * x.ln_1p() - x));
        let l2 = l1 / (LN_2 * (e / (l * w_hz) + cfg.noise_w_per_hz / g));
        lambda1.push(l1);
        lambda2.push(l2);

        let b = alloc.bits[u];
        let l5 = if b <= 1.0 + 1e-9 {
            let two_b = b.exp2();
            let levels = two_b - 1.0;
            let d = problem.deltas[u];
            let p = problem.profiles[u].weight;
            (problem.dim as f64 * l1
                - 2.0 * lambda3 * LN_2 * p * d * d * two_b / (levels * levels * levels))
                .max(0.0)
        } else {
            0.0
        };
        lambda5.push(l5);
    }

    let lambda4 = if alloc.compute_time <= a1 * (1.0 + 1e-9) {
        let tau = f64::from(cfg.local_steps);
        let sum: f64 = (0..n)
            .map(|u| {
                let p = &problem.profiles[u];
                let cd = p.cycles_per_bit * p.workload_bits;
                lambda2[u] * cd.powi(3)
            })
            .sum();
        (1.0 - 2.0 * cfg.zeta * tau.powi(3) * sum / alloc.compute_time.powi(3)).max(0.0)
    } else {
        0.0
    };

    Multipliers {
        lambda1,
        lambda2,
        lambda3,
        lambda4,
        lambda5,
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::{oracle, RoundProblem};
    use super::*;
    use crate::channel::{uplink_bits, PhysicsConfig};

    fn table1() -> PhysicsConfig {
        PhysicsConfig::default()
    }

    fn spec_instance_profiles() -> Vec<crate::channel::UserProfile> {
        vec![profile(0, 20.0, 0.5), profile(1, 30.0, 0.5)]
    }

    #[test]
    fn zero_delta_pins_bits_and_compute_floor() {
        // With no quantization error to control and a strong channel the
        // optimum sits at the bit floor and the compute floor.
        let cfg = table1();
        let profiles = vec![profile(0, 25.0, 1.0)];
        let gains = [1e-9];
        let deltas = [0.0];
        let p = RoundProblem::new(&profiles, &gains, &deltas, 0.01, DIM, &cfg);
        let (alloc, mult) = solve_round_continuous(&p).unwrap();

        let a1 = min_compute_time(&profiles, &cfg);
        assert!((alloc.bits[0] - 1.0).abs() < 1e-9, "bits = {}", alloc.bits[0]);
        assert!(
            (alloc.compute_time - a1).abs() <= 1e-6 * a1,
            "l_c = {} vs a1 = {a1}",
            alloc.compute_time
        );
        // energy tight at the floor
        let e_expected = 0.3 - p.energy_constant(0) / (alloc.compute_time * alloc.compute_time);
        assert!((alloc.energies[0] - e_expected).abs() < 1e-9);
        // slot delivers exactly the two-bit payload
        let s = p.payload(1.0);
        let back = uplink_bits(alloc.slots[0], alloc.energies[0], gains[0], &cfg);
        assert!((back - s).abs() <= 1e-6 * s);
        assert_eq!(mult.lambda3, 0.0);
    }

    #[test]
    fn matches_grid_oracle_on_reference_instance() {
        let cfg = table1();
        let profiles = spec_instance_profiles();
        let gains = [10f64.powf(-11.25), 10f64.powf(-11.0)];
        let deltas = [1.0, 1.0];
        let p = RoundProblem::new(&profiles, &gains, &deltas, 0.01, DIM, &cfg);

        let (alloc, _) = solve_round_continuous(&p).unwrap();
        let oracle = oracle::continuous_grid_oracle(&p).unwrap();
        let rel = (alloc.round_latency - oracle.objective).abs() / oracle.objective;
        assert!(
            rel <= 5e-3,
            "solver {} vs oracle {} (rel {rel})",
            alloc.round_latency,
            oracle.objective
        );
        // C1/C2/C3 tight at the optimum
        let w = weights(&p);
        let c3 = quantization_error(&alloc.bits, &deltas, &w);
        assert!(
            (c3 / p.epsilon - 1.0).abs() <= 1e-6,
            "C3 slack: {c3} vs {}",
            p.epsilon
        );
        for u in 0..2 {
            let e_tight = p.transmit_energy(u, alloc.compute_time);
            assert!((alloc.energies[u] - e_tight).abs() <= 1e-9 * e_tight);
            let s = p.payload(alloc.bits[u]);
            let back = uplink_bits(alloc.slots[u], alloc.energies[u], gains[u], &cfg);
            assert!((back - s).abs() <= 1e-6 * s, "C1 not tight for user {u}");
        }
    }

    #[test]
    fn latency_non_increasing_in_budget_and_gain() {
        let cfg = table1();
        let deltas = [1.0, 1.0];
        let mut prev = f64::INFINITY;
        for e_max in [0.15, 0.2, 0.3, 0.5] {
            let mut profiles = spec_instance_profiles();
            for p in &mut profiles {
                p.e_max = e_max;
            }
            let gains = [10f64.powf(-11.25), 10f64.powf(-11.0)];
            let p = RoundProblem::new(&profiles, &gains, &deltas, 0.01, DIM, &cfg);
            let (alloc, _) = solve_round_continuous(&p).unwrap();
            assert!(
                alloc.round_latency <= prev * (1.0 + 1e-9),
                "latency increased with budget {e_max}"
            );
            prev = alloc.round_latency;
        }
        let profiles = spec_instance_profiles();
        let mut prev = f64::INFINITY;
        for scale in [0.5, 1.0, 2.0, 4.0] {
            let gains = [scale * 10f64.powf(-11.25), 10f64.powf(-11.0)];
            let p = RoundProblem::new(&profiles, &gains, &deltas, 0.01, DIM, &cfg);
            let (alloc, _) = solve_round_continuous(&p).unwrap();
            assert!(
                alloc.round_latency <= prev * (1.0 + 1e-9),
                "latency increased with gain scale {scale}"
            );
            prev = alloc.round_latency;
        }
    }

    #[test]
    fn latency_non_increasing_in_epsilon() {
        let cfg = table1();
        let profiles = spec_instance_profiles();
        let gains = [10f64.powf(-11.25), 10f64.powf(-11.0)];
        let deltas = [1.0, 1.0];
        let mut prev = f64::INFINITY;
        for eps in [0.01, 0.1, 1.0, 5.0] {
            let p = RoundProblem::new(&profiles, &gains, &deltas, eps, DIM, &cfg);
            let (alloc, _) = solve_round_continuous(&p).unwrap();
            assert!(
                alloc.round_latency <= prev * (1.0 + 1e-9),
                "latency increased at eps={eps}"
            );
            prev = alloc.round_latency;
        }
    }

    #[test]
    fn integral_bits_round_trip_keeps_latency() {
        // delta = 0 forces integral bits (the floor), so rounding changes
        // nothing and the re-solve reproduces the continuous optimum.
        let cfg = table1();
        let profiles = vec![profile(0, 25.0, 1.0)];
        let gains = [1e-9];
        let deltas = [0.0];
        let p = RoundProblem::new(&profiles, &gains, &deltas, 0.01, DIM, &cfg);
        let (cont, _) = solve_round_continuous(&p).unwrap();
        let int = round_and_resolve(&p, &cont).unwrap();
        assert_eq!(int.bits, vec![1]);
        let rel = (int.round_latency - cont.round_latency).abs() / cont.round_latency;
        assert!(rel <= 1e-6, "integer latency drifted by {rel}");
    }

    #[test]
    fn rounding_keeps_tolerance_slack() {
        use rand::{Rng, SeedableRng};
        let cfg = table1();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let profiles = vec![profile(0, rng.gen_range(10.0..40.0), 0.5), {
                let mut p1 = profile(1, rng.gen_range(10.0..40.0), 0.5);
                p1.distance_m = rng.gen_range(100.0..1000.0);
                p1
            }];
            let gains = [
                rng.gen_range(0.2..2.0) * 1e-11,
                rng.gen_range(0.2..2.0) * 1e-11,
            ];
            let deltas = [rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)];
            let eps = rng.gen_range(0.003..0.3);
            let p = RoundProblem::new(&profiles, &gains, &deltas, eps, DIM, &cfg);
            let (cont, _) = match solve_round_continuous(&p) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let int = round_and_resolve(&p, &cont).unwrap();
            let real: Vec<f64> = int.bits.iter().map(|&b| f64::from(b)).collect();
            let c3 = quantization_error(&real, &deltas, &weights(&p));
            assert!(
                c3 <= eps * (1.0 + 1e-9),
                "trial {trial}: tolerance violated after rounding ({c3} > {eps})"
            );
            assert!(int.feasible);
            assert!(int.round_latency >= cont.round_latency * (1.0 - 1e-9));
        }
    }

    #[test]
    fn infeasible_when_payload_beats_capacity() {
        let cfg = table1();
        let mut far = profile(0, 25.0, 1.0);
        far.e_max = 1e-6;
        let profiles = vec![far];
        let gains = [1e-13];
        let deltas = [1.0];
        let p = RoundProblem::new(&profiles, &gains, &deltas, 0.01, DIM, &cfg);
        assert!(matches!(
            solve_round_continuous(&p),
            Err(SolveError::Infeasible { user: 0 })
        ));
    }

    #[test]
    fn epsilon_unreachable_under_bits_cap() {
        let cfg = table1();
        let profiles = vec![profile(0, 25.0, 1.0)];
        let gains = [1e-9];
        let deltas = [1.0];
        let mut p = RoundProblem::new(&profiles, &gains, &deltas, 1e-30, DIM, &cfg);
        p.bits_cap = 8;
        assert_eq!(solve_round_continuous(&p).unwrap_err(), SolveError::EpsilonUnreachable);
    }
}
