//! Stochastic quantization of weight-differential vectors.
//!
//! A vector is quantized element-wise onto `2^B` magnitude levels spanning
//! `[w_min, w_max]`, where `w_min`/`w_max` are the smallest/largest absolute
//! entries. An element falling between two adjacent levels is rounded to one
//! of them with probabilities proportional to the opposite distances, which
//! makes the reconstruction an unbiased estimator of the input. The payload
//! of a quantized vector is `d*(B+1) + m` bits: `B` bits per level index,
//! one sign bit per element, and an `m`-bit header carrying the range.

use rand::Rng;
use thiserror::Error;

/// Header bits used to encode `(w_min, w_max)`; models two 32-bit reals.
pub const DEFAULT_HEADER_BITS: u64 = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error("input vector is empty")]
    EmptyInput,
    #[error("bit count must be at least 1")]
    ZeroBits,
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
}

/// Wire representation of a stochastically quantized vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedUpdate {
    /// Smallest absolute entry of the source vector (magnitude floor).
    pub w_min: f64,
    /// Largest absolute entry of the source vector (magnitude ceiling).
    pub w_max: f64,
    /// Quantization bits per element, `B >= 1`.
    pub bits: u32,
    /// Level indices, each in `[0, 2^B - 1]`.
    pub levels: Vec<u64>,
    /// Element signs, each `-1` or `+1`; zeros are stored as `+1`.
    pub signs: Vec<i8>,
    /// Total payload: `d*(B+1) + header` bits.
    pub payload_bits: u64,
}

impl QuantizedUpdate {
    /// Number of elements in the quantized vector.
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Payload size in bits for a `d`-element vector quantized with `bits`
/// bits per element plus an `m`-bit range header.
pub fn payload_bits(d: u64, bits: u32, m: u64) -> u64 {
    d * (u64::from(bits) + 1) + m
}

/// Upper bound `J^2` on the expected squared quantization error of a
/// `d`-element vector with magnitude range `[w_min, w_max]`:
/// `d*(w_max - w_min)^2 / (4*(2^B - 1)^2)`.
pub fn variance_bound(d: u64, w_min: f64, w_max: f64, bits: u32) -> f64 {
    let levels = (f64::from(bits)).exp2() - 1.0;
    let range = w_max - w_min;
    d as f64 * range * range / (4.0 * levels * levels)
}

/// Stochastically quantizes `delta` with `bits` bits per element and an
/// `header_bits`-bit range header.
///
/// Each `|delta_j|` lying in a grid interval `[s_k, s_{k+1}]` maps to the
/// lower level with probability `(s_{k+1} - |delta_j|) / (s_{k+1} - s_k)`
/// and to the upper level otherwise, so the reconstruction is unbiased.
/// A zero-range vector (all magnitudes equal) quantizes exactly with no
/// randomness.
pub fn quantize<R: Rng + ?Sized>(
    delta: &[f64],
    bits: u32,
    header_bits: u64,
    rng: &mut R,
) -> Result<QuantizedUpdate, QuantError> {
    if delta.is_empty() {
        return Err(QuantError::EmptyInput);
    }
    if bits == 0 {
        return Err(QuantError::ZeroBits);
    }
    if let Some(idx) = delta.iter().position(|v| !v.is_finite()) {
        return Err(QuantError::NonFinite(idx));
    }

    let w_min = delta.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let w_max = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let top = (f64::from(bits)).exp2() as u64 - 1;
    let step = (w_max - w_min) / top as f64;

    let mut levels = Vec::with_capacity(delta.len());
    let mut signs = Vec::with_capacity(delta.len());
    for &v in delta {
        signs.push(if v < 0.0 { -1 } else { 1 });
        if step == 0.0 {
            levels.push(0);
            continue;
        }
        let pos = (v.abs() - w_min) / step;
        let k = (pos.floor() as u64).min(top);
        if k == top {
            levels.push(top);
            continue;
        }
        let frac = pos - k as f64;
        let up = rng.gen::<f64>() < frac;
        levels.push(if up { k + 1 } else { k });
    }

    Ok(QuantizedUpdate {
        w_min,
        w_max,
        bits,
        payload_bits: payload_bits(delta.len() as u64, bits, header_bits),
        levels,
        signs,
    })
}

/// Deterministic reconstruction: element `j` is
/// `signs[j] * (w_min + levels[j] * (w_max - w_min)/(2^B - 1))`; the top
/// level is pinned to `w_max` exactly so no magnitude leaves the range.
pub fn dequantize(q: &QuantizedUpdate) -> Vec<f64> {
    let top = (f64::from(q.bits)).exp2() as u64 - 1;
    let step = (q.w_max - q.w_min) / top as f64;
    q.levels
        .iter()
        .zip(&q.signs)
        .map(|(&lvl, &s)| {
            let mag = if lvl == top {
                q.w_max
            } else {
                q.w_min + lvl as f64 * step
            };
            f64::from(s) * mag
        })
        .collect()
}
