//! Wireless and computation physics.
//!
//! Uplink transmission follows a Shannon-capacity condition: delivering `S`
//! bits in a slot of `l` seconds with transmit energy `E` over a channel
//! with linear power gain `g` requires
//! `l * W * log2(1 + g*E / (l*W*N0)) >= S`. The left side is zero at
//! `l = 0`, strictly increasing and concave in `l`, and approaches the
//! capacity cap `g*E / (N0*ln 2)` as `l -> infinity`; payloads at or above
//! the cap are undeliverable at any slot duration.
//!
//! Computation: `tau` local steps of a workload of `D` bits at `c` cycles
//! per bit take `tau*c*D/f` seconds and consume `tau*zeta*c*D*f^2` Joule at
//! CPU frequency `f`.

use crate::lambertw::lambert_wm1;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Static per-user parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: usize,
    /// CPU cycles per bit of workload (`c_n`).
    pub cycles_per_bit: f64,
    /// Bits of local-update workload (`D_n`).
    pub workload_bits: f64,
    /// Maximum CPU frequency in Hz.
    pub f_max: f64,
    /// Per-round energy budget in Joule.
    pub e_max: f64,
    /// Aggregation weight (`p_n`); weights over a user set sum to 1.
    pub weight: f64,
    /// Distance to the base station in meters.
    pub distance_m: f64,
}

/// One fading realization, constant within a round (quasi-static).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub round: u64,
    /// Linear power gains `g_n = |h_n|^2 * d_n^(-beta)`.
    pub gains: Vec<f64>,
}

/// Shared physical-layer and computation constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConfig {
    /// Uplink bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Noise spectral density in W/Hz.
    pub noise_w_per_hz: f64,
    /// Effective capacitance constant of the device hardware.
    pub zeta: f64,
    /// Local optimizer steps per round.
    pub local_steps: u32,
    /// Range-header bits added to each quantized payload.
    pub header_bits: u64,
    /// Path-loss exponent.
    pub pathloss_exp: f64,
}

impl Default for PhysicsConfig {
    /// Reference defaults: W = 0.3 MHz, N0 = -174 dBm/Hz, zeta = 1e-27,
    /// tau = 2, m = 64 bits, beta = 3.75.
    fn default() -> Self {
        Self {
            bandwidth_hz: 0.3e6,
            noise_w_per_hz: dbm_per_hz_to_w_per_hz(-174.0),
            zeta: 1e-27,
            local_steps: 2,
            header_bits: 64,
            pathloss_exp: 3.75,
        }
    }
}

/// Converts a noise spectral density from dBm/Hz to W/Hz.
pub fn dbm_per_hz_to_w_per_hz(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Large-scale attenuation `d^(-beta)`.
pub fn pathloss(distance_m: f64, beta: f64) -> f64 {
    distance_m.powf(-beta)
}

/// Samples one quasi-static channel realization: `|h_n|^2` is a unit-mean
/// exponential variate (Rayleigh power), scaled by the path loss.
pub fn sample_channels<R: Rng + ?Sized>(
    profiles: &[UserProfile],
    cfg: &PhysicsConfig,
    round: u64,
    rng: &mut R,
) -> ChannelRealization {
    let gains = profiles
        .iter()
        .map(|p| {
            let u: f64 = rng.gen();
            // floored away from an exactly dead channel (u = 0 draw)
            let h2 = (-(1.0 - u).ln()).max(1e-300);
            h2 * pathloss(p.distance_m, cfg.pathloss_exp)
        })
        .collect();
    ChannelRealization { round, gains }
}

/// Bits deliverable in a slot of `l` seconds with energy `e` over gain `g`.
/// Defined as 0 at `l = 0`.
pub fn uplink_bits(l: f64, e: f64, g: f64, cfg: &PhysicsConfig) -> f64 {
    if l <= 0.0 || e <= 0.0 {
        return 0.0;
    }
    let w = cfg.bandwidth_hz;
    let snr = g * e / (l * w * cfg.noise_w_per_hz);
    l * w * snr.ln_1p() / std::f64::consts::LN_2
}

/// Supremum of deliverable bits with energy `e`: `g*e / (N0*ln 2)`.
pub fn capacity_cap(e: f64, g: f64, cfg: &PhysicsConfig) -> f64 {
    g * e / (cfg.noise_w_per_hz * std::f64::consts::LN_2)
}

/// The payload exceeds the capacity cap for the given energy budget; no
/// slot duration can deliver it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("payload exceeds the capacity cap for the available energy")]
pub struct Infeasible;

/// Smallest slot duration `l` with `uplink_bits(l, e, g) >= s`.
///
/// Since the bit count is strictly increasing in `l` with supremum
/// [`capacity_cap`], the result is the unique root of
/// `uplink_bits(l) = s`, or `Infeasible` when `s` is at or above the cap.
pub fn min_uplink_time(s: f64, e: f64, g: f64, cfg: &PhysicsConfig) -> Result<f64, Infeasible> {
    if s <= 0.0 {
        return Ok(0.0);
    }
    if e <= 0.0 {
        return Err(Infeasible);
    }
    let cap = capacity_cap(e, g, cfg);
    if s >= cap {
        return Err(Infeasible);
    }

    // Substituting x = g*e/(l*W*N0) turns the root condition into
    // ln(1+x)/x = q with q = s/cap in (0,1), solved by the secondary
    // Lambert branch; a Newton polish removes the branch-evaluation error.
    let q = s / cap;
    let b = g * e / (cfg.bandwidth_hz * cfg.noise_w_per_hz);
    let arg = -q * (-q).exp();
    let mut l = match lambert_wm1(arg) {
        Ok(wm1) => {
            let x = -wm1 / q - 1.0;
            if x > 0.0 && x.is_finite() {
                b / x
            } else {
                return bisect_uplink_time(s, e, g, cfg);
            }
        }
        Err(_) => return bisect_uplink_time(s, e, g, cfg),
    };

    for _ in 0..8 {
        let f = uplink_bits(l, e, g, cfg) - s;
        if f.abs() <= 1e-13 * s {
            return Ok(l);
        }
        let d = uplink_bits_slope(l, b, cfg.bandwidth_hz);
        if !(d > 0.0) {
            return bisect_uplink_time(s, e, g, cfg);
        }
        let next = l - f / d;
        if !(next > 0.0) || !next.is_finite() {
            return bisect_uplink_time(s, e, g, cfg);
        }
        l = next;
    }
    if (uplink_bits(l, e, g, cfg) - s).abs() <= 1e-9 * s {
        Ok(l)
    } else {
        bisect_uplink_time(s, e, g, cfg)
    }
}

/// d(uplink_bits)/dl at slot duration `l`, with `b = g*e/(W*N0)`.
fn uplink_bits_slope(l: f64, b: f64, w: f64) -> f64 {
    let x = b / l;
    w * ((x.ln_1p()) - x / (1.0 + x)) / std::f64::consts::LN_2
}

/// Partial derivative of [`uplink_bits`] with respect to the slot duration.
pub(crate) fn uplink_rate_slope(l: f64, e: f64, g: f64, cfg: &PhysicsConfig) -> f64 {
    uplink_bits_slope(l, g * e / (cfg.bandwidth_hz * cfg.noise_w_per_hz), cfg.bandwidth_hz)
}

/// Fallback root finder: doubling bracket then bisection to 1e-12 relative.
fn bisect_uplink_time(s: f64, e: f64, g: f64, cfg: &PhysicsConfig) -> Result<f64, Infeasible> {
    let mut hi = 1e-9;
    let mut grow = 0;
    while uplink_bits(hi, e, g, cfg) < s {
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(Infeasible);
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
        if (hi - lo) <= 1e-12 * hi {
            break;
        }
    }
    Ok(hi)
}

/// Local computation latency: `tau * c * D / f`.
pub fn compute_time(profile: &UserProfile, f: f64, cfg: &PhysicsConfig) -> f64 {
    f64::from(cfg.local_steps) * profile.cycles_per_bit * profile.workload_bits / f
}

/// Local computation energy: `tau * zeta * c * D * f^2`.
pub fn compute_energy(profile: &UserProfile, f: f64, cfg: &PhysicsConfig) -> f64 {
    f64::from(cfg.local_steps) * cfg.zeta * profile.cycles_per_bit * profile.workload_bits * f * f
}
