//! Real branches of the Lambert W function.
//!
//! `w = W(x)` solves `w * exp(w) = x`. The principal branch `W0` covers
//! `x >= -1/e` with `w >= -1`; the secondary branch `W-1` covers
//! `-1/e <= x < 0` with `w <= -1`. Both are computed with a branch-aware
//! initial guess followed by Halley iterations.

use thiserror::Error;

/// `-1/e`, the left edge of the real domain.
pub const BRANCH_POINT: f64 = -0.367_879_441_171_442_33;

/// Residual target for `|w*exp(w) - x|` (absolute for `|x| <= 1`,
/// relative otherwise).
const RESIDUAL_TOL: f64 = 1e-13;

const MAX_ITER: usize = 60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LambertError {
    #[error("argument {0} below -1/e is outside the real domain")]
    BelowBranchPoint(f64),
    #[error("argument {0} outside [-1/e, 0) for the secondary branch")]
    OutsideSecondaryDomain(f64),
}

/// Principal branch `W0(x)` for `x >= -1/e`.
///
/// The result satisfies `|w*exp(w) - x| <= 1e-12` (absolute for
/// `|x| <= 1`, relative otherwise).
pub fn lambert_w0(x: f64) -> Result<f64, LambertError> {
    if !x.is_finite() || x < BRANCH_POINT - 1e-12 {
        return Err(LambertError::BelowBranchPoint(x));
    }
    let x = x.max(BRANCH_POINT);
    if x == 0.0 {
        return Ok(0.0);
    }

    // Series in p = sqrt(2(e*x + 1)) around the branch point; for tiny p the
    // truncation error is already below double precision and Halley would
    // divide by (1 + w) ~ 0.
    let p2 = 2.0 * (std::f64::consts::E * x + 1.0);
    if p2 <= 0.0 {
        return Ok(-1.0);
    }
    let p = p2.sqrt();
    if p < 1e-4 {
        return Ok(branch_series(p));
    }

    let w0 = if x < -0.32 {
        branch_series(p)
    } else if x <= std::f64::consts::E {
        x.ln_1p()
    } else {
        let l = x.ln();
        l - l.ln()
    };
    Ok(halley(w0, x))
}

/// Secondary branch `W-1(x)` for `-1/e <= x < 0`.
pub fn lambert_wm1(x: f64) -> Result<f64, LambertError> {
    if !x.is_finite() || x < BRANCH_POINT - 1e-12 || x >= 0.0 {
        return Err(LambertError::OutsideSecondaryDomain(x));
    }
    let x = x.max(BRANCH_POINT);

    let p2 = 2.0 * (std::f64::consts::E * x + 1.0);
    if p2 <= 0.0 {
        return Ok(-1.0);
    }
    let p = p2.sqrt();
    if p < 1e-4 {
        return Ok(branch_series(-p));
    }

    let w0 = if x < -0.25 {
        branch_series(-p)
    } else {
        // x -> 0-: w ~ ln(-x) - ln(-ln(-x))
        let l = (-x).ln();
        l - (-l).ln()
    };
    Ok(halley(w0, x))
}

/// Branch-point expansion `w = -1 + p - p^2/3 + 11 p^3/72 - 43 p^4/540`;
/// the sign of `p` selects the branch.
fn branch_series(p: f64) -> f64 {
    -1.0 + p * (1.0 + p * (-1.0 / 3.0 + p * (11.0 / 72.0 - p * 43.0 / 540.0)))
}

fn halley(mut w: f64, x: f64) -> f64 {
    let tol = if x.abs() <= 1.0 {
        RESIDUAL_TOL
    } else {
        RESIDUAL_TOL * x.abs()
    };
    for _ in 0..MAX_ITER {
        let ew = w.exp();
        let f = w * ew - x;
        if f.abs() <= tol {
            break;
        }
        let denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * (w + 1.0));
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        w -= step;
        if step.abs() <= 1e-16 * w.abs().max(1.0) {
            break;
        }
    }
    w
}
