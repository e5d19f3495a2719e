//! Log Gaussian tail probability and the inverse Mills ratio.
//!
//! For moderate arguments both are computed from `erfc`. Beyond
//! [`CF_THRESHOLD`] the upper tail is rebuilt from the continued fraction
//!
//! ```text
//! phi(x) / Q(x) = x + r(x),   r(x) = 1 / (x + 2 / (x + 3 / (x + ...)))
//! ```
//!
//! so that neither quantity is ever formed as a ratio of underflowed numbers.
//! Keeping `r(x)` separate also gives `phi(x)/Q(x) - x` without cancellation,
//! which the curvature weights need.

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Above this the continued fraction replaces `erfc`.
const CF_THRESHOLD: f64 = 8.0;

/// Beyond this magnitude the inverse Mills ratio uses its asymptotic series.
pub const SATURATION: f64 = 200.0;

/// Below this, `1 - Q(-x)` rounds to one and `phi(x)/Q(x) = phi(x)`.
const LOWER_SHORTCUT: f64 = -9.0;

/// `ln Q(x)` where `Q(x) = P(N(0,1) > x)`.
pub fn log_q(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::InvalidInput("log_q of NaN".into()));
    }
    Ok(log_q_raw(x))
}

/// Inverse Mills ratio `phi(x) / Q(x)`.
pub fn mills(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::InvalidInput("inverse Mills ratio of NaN".into()));
    }
    Ok(mills_raw(x))
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `Q(x)` for any `x`.
pub fn q_function(x: f64) -> f64 {
    if x >= 0.0 {
        upper_tail(x)
    } else {
        1.0 - upper_tail(-x)
    }
}

#[inline]
pub(crate) fn log_q_raw(x: f64) -> f64 {
    if x < 0.0 {
        (-upper_tail(-x)).ln_1p()
    } else if x <= CF_THRESHOLD {
        (0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)).ln()
    } else if x.is_infinite() {
        f64::NEG_INFINITY
    } else {
        -0.5 * x * x - LN_SQRT_2PI - (x + mills_remainder(x)).ln()
    }
}

#[inline]
pub(crate) fn mills_raw(x: f64) -> f64 {
    if x > CF_THRESHOLD {
        x + mills_remainder(x)
    } else if x >= 0.0 {
        normal_pdf(x) / upper_tail(x)
    } else if x >= LOWER_SHORTCUT {
        normal_pdf(x) / (1.0 - upper_tail(-x))
    } else if x >= -SATURATION {
        normal_pdf(x)
    } else {
        0.0
    }
}

#[cfg(test)]
fn mills_excess_raw(x: f64) -> f64 {
    mills_with_excess(x).1
}

/// `(phi(x)/Q(x), phi(x)/Q(x) - x)`; the second entry is accurate where the
/// two terms nearly cancel.
#[inline]
pub(crate) fn mills_with_excess(x: f64) -> (f64, f64) {
    if x > CF_THRESHOLD {
        let r = mills_remainder(x);
        (x + r, r)
    } else {
        let lam = mills_raw(x);
        (lam, lam - x)
    }
}

// Q(x) for x >= 0.
#[inline]
fn upper_tail(x: f64) -> f64 {
    if x <= CF_THRESHOLD {
        0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
    } else {
        normal_pdf(x) / (x + mills_remainder(x))
    }
}

// r(x) = phi(x)/Q(x) - x for x > CF_THRESHOLD.
fn mills_remainder(x: f64) -> f64 {
    if x > SATURATION {
        // x + 1/x - 2/x^3 + 10/x^5 - 74/x^7 ...
        let inv = 1.0 / x;
        let inv2 = inv * inv;
        return inv * (1.0 - inv2 * (2.0 - inv2 * (10.0 - 74.0 * inv2)));
    }
    // Modified Lentz on x + 2/(x + 3/(x + ...)), then r = 1/that.
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 2..500 {
        let a = n as f64;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}
