//! Univariate standard normal helpers with tail-aware differences.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
#[inline]
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, exact at the infinities.
#[inline]
pub fn cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else if x == f64::INFINITY {
        1.0
    } else {
        0.5 * erfc(-x * FRAC_1_SQRT_2)
    }
}

/// Upper tail `1 - cdf(x)` without cancellation.
#[inline]
pub fn sf(x: f64) -> f64 {
    cdf(-x)
}

/// Standard normal quantile. Returns the infinities at 0 and 1.
#[inline]
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        -SQRT_2 * erfc_inv(2.0 * p)
    }
}

/// `ln cdf(x)`, accurate deep into the lower tail.
pub fn ln_cdf(x: f64) -> f64 {
    if x > -30.0 {
        cdf(x).ln()
    } else {
        // Asymptotic series of the Mills ratio.
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - LN_SQRT_2PI - (-x).ln() + series.ln()
    }
}

/// Probability of `(a, b)` under the standard normal, computed on whichever
/// side of the origin avoids cancellation.
#[inline]
pub fn interval_prob(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        (sf(a) - sf(b)).max(0.0)
    } else {
        (cdf(b) - cdf(a)).max(0.0)
    }
}

/// Log-probability of `(a, b)` under the standard normal.
pub fn ln_interval_prob(a: f64, b: f64) -> f64 {
    let p = interval_prob(a, b);
    if p > 1e-300 {
        return p.ln();
    }
    // Both ends in one far tail: reflect into the lower tail and use
    // ln(Phi(hi) - Phi(lo)) = ln Phi(hi) + ln(1 - exp(ln Phi(lo) - ln Phi(hi))).
    let (lo, hi) = if a > 0.0 { (-b, -a) } else { (a, b) };
    let lh = ln_cdf(hi);
    let ll = ln_cdf(lo);
    lh + (-(ll - lh).exp()).ln_1p()
}

/// Point at fraction `w` of the standard-normal mass of `(a, b)`.
///
/// Equivalent to `quantile(cdf(a) + w * (cdf(b) - cdf(a)))` but evaluated in
/// the upper tail when the interval lies right of the origin.
/// When both ends sit so far in one tail that the normal CDF underflows, the
/// truncated law is replaced by its exponential limit.
#[inline]
pub fn interval_quantile(a: f64, b: f64, w: f64) -> f64 {
    let x = if a > 0.0 {
        let sa = sf(a);
        let sb = sf(b);
        -quantile(sa - w * (sa - sb))
    } else {
        let ca = cdf(a);
        let cb = cdf(b);
        quantile(ca + w * (cb - ca))
    };
    if x.is_finite() && x >= a && x <= b {
        return x;
    }
    if a > 0.0 {
        exp_tail_quantile(a, b, w)
    } else if b < 0.0 {
        -exp_tail_quantile(-b, -a, 1.0 - w)
    } else {
        x.clamp(a, b)
    }
}

/// Quantile of the density proportional to `exp(-a (x - a))` on `(a, b)`.
fn exp_tail_quantile(a: f64, b: f64, w: f64) -> f64 {
    let span = if b.is_finite() { -(-a * (b - a)).exp_m1() } else { 1.0 };
    (a - (-w * span).ln_1p() / a).clamp(a, b)
}

/// Mean of the standard normal truncated to `(a, b)`.
pub fn truncated_mean(a: f64, b: f64) -> f64 {
    let p = interval_prob(a, b);
    let pa = if a.is_finite() { pdf(a) } else { 0.0 };
    let pb = if b.is_finite() { pdf(b) } else { 0.0 };
    if p > 1e-280 {
        return (pa - pb) / p;
    }
    // Degenerate mass: the truncated law concentrates at the end nearest the mode.
    if a >= 0.0 {
        a.max(f64::MIN)
    } else {
        b.min(f64::MAX)
    }
}
