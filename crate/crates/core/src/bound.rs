//! Evaluator for the convergence upper bound of quantized federated
//! averaging under a diminishing learning rate.
//!
//! The bound on the final-iterate optimality gap after `T` rounds splits
//! into a `1/(gamma+T)` term driven by gradient noise and heterogeneity,
//! plus a quantization-gap term that weights each round's quantization
//! error `J_n^2(j)` by the discount `prod_{i=j+1}^{T-1} (1 - 2/(gamma+i))`.
//! Early-round errors are discounted most, so the gap is dominated by late
//! rounds.

use thiserror::Error;

/// Problem constants feeding the bound. These are user-supplied; the
/// module does not estimate them from data.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundConstants {
    /// Smoothness constant `L`.
    pub smoothness: f64,
    /// Strong-convexity constant `mu`.
    pub strong_convexity: f64,
    /// Uniform bound `G^2` on expected squared stochastic-gradient norms.
    pub grad_norm_sq: f64,
    /// Per-user stochastic-gradient variance bounds `sigma_n^2`.
    pub grad_variance: Vec<f64>,
    /// Data-heterogeneity constant `Gamma`.
    pub heterogeneity: f64,
    /// Local steps per round `tau`.
    pub local_steps: u32,
    /// Learning-rate offset `gamma`; must exceed
    /// `max(2, 2/mu, L/mu)`.
    pub gamma: f64,
    /// Expected squared distance of the initial model from the optimum.
    pub initial_gap_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error("constants must satisfy L >= mu > 0 (got L={0}, mu={1})")]
    BadConvexity(f64, f64),
    #[error("gamma = {0} must exceed max(2, 2/mu, L/mu) = {1}")]
    GammaTooSmall(f64, f64),
    #[error("negative constant: {0}")]
    Negative(&'static str),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
}

impl BoundConstants {
    pub fn validate(&self) -> Result<(), BoundError> {
        let (l, mu) = (self.smoothness, self.strong_convexity);
        if !(mu > 0.0) || l < mu {
            return Err(BoundError::BadConvexity(l, mu));
        }
        let floor = 2f64.max(2.0 / mu).max(l / mu);
        if self.gamma <= floor {
            return Err(BoundError::GammaTooSmall(self.gamma, floor));
        }
        if self.grad_norm_sq < 0.0 {
            return Err(BoundError::Negative("grad_norm_sq"));
        }
        if self.heterogeneity < 0.0 {
            return Err(BoundError::Negative("heterogeneity"));
        }
        if self.initial_gap_sq < 0.0 {
            return Err(BoundError::Negative("initial_gap_sq"));
        }
        if self.grad_variance.iter().any(|&v| v < 0.0) {
            return Err(BoundError::Negative("grad_variance"));
        }
        Ok(())
    }
}

/// The local-drift and gradient-noise aggregate
/// `U = tau^2 * sum(sigma_n^2) + tau*G^2 + 2*L*tau^2*Gamma
///    + (mu+2) * tau*(tau-1)*(2*tau-1)/6 * G^2`.
pub fn compute_u(k: &BoundConstants) -> f64 {
    let tau = f64::from(k.local_steps);
    let sigma_sum: f64 = k.grad_variance.iter().sum();
    tau * tau * sigma_sum
        + tau * k.grad_norm_sq
        + 2.0 * k.smoothness * tau * tau * k.heterogeneity
        + (k.strong_convexity + 2.0) * tau * (tau - 1.0) * (2.0 * tau - 1.0) / 6.0
            * k.grad_norm_sq
}

/// Both terms of the bound after `T` rounds: the `1/(gamma+T)` part and
/// the quantization-gap part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundValue {
    pub first_term: f64,
    pub gap_term: f64,
}

impl BoundValue {
    pub fn total(&self) -> f64 {
        self.first_term + self.gap_term
    }
}

/// Evaluates the bound for horizon `rounds`, weights `p`, and a
/// per-round, per-user quantization error schedule `j2(round, user)`.
///
/// The discount products are accumulated in log space so long horizons do
/// not underflow.
pub fn convergence_bound<F>(
    rounds: u64,
    k: &BoundConstants,
    j2: F,
    p: &[f64],
) -> Result<BoundValue, BoundError>
where
    F: Fn(u64, usize) -> f64,
{
    k.validate()?;
    if rounds == 0 {
        return Err(BoundError::ZeroHorizon);
    }
    let l = k.smoothness;
    let mu = k.strong_convexity;
    let u = compute_u(k);
    let first_term =
        l / 2.0 / (k.gamma + rounds as f64) * (4.0 * u / (mu * mu) + k.gamma * k.initial_gap_sq);

    // log_tail[j] = sum_{i=j+1}^{T-1} ln(1 - 2/(gamma+i)), built backwards
    let t = rounds as usize;
    let mut gap = 0.0;
    let mut log_tail = 0.0;
    for j in (0..t).rev() {
        if j + 1 < t {
            log_tail += (1.0 - 2.0 / (k.gamma + (j + 1) as f64)).ln();
        }
        let round_err: f64 = p
            .iter()
            .enumerate()
            .map(|(n, &pn)| pn * j2(j as u64, n))
            .sum();
        gap += round_err * log_tail.exp();
    }
    Ok(BoundValue {
        first_term,
        gap_term: l / 2.0 * gap,
    })
}

/// Discount weight `prod_{i=j+1}^{T-1} (1 - 2/(gamma+i))` applied to the
/// round-`j` quantization error in a `T`-round bound.
pub fn discount_weight(j: u64, rounds: u64, gamma: f64) -> f64 {
    let mut log_p = 0.0;
    for i in (j + 1)..rounds {
        log_p += (1.0 - 2.0 / (gamma + i as f64)).ln();
    }
    log_p.exp()
}
