//! Exact univariate truncated normal sampling.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Open01};

use super::normal::{interval_quantile, ln_interval_prob};
use crate::error::{Error, Result};

/// Standardized bounds beyond which the exponential-proposal sampler is used.
const TAIL_START: f64 = 6.0;

/// Draw from `N(mean, sd^2)` restricted to `(lower, upper)`.
pub fn sample_tn_1d<R: Rng + ?Sized>(
    lower: f64,
    upper: f64,
    mean: f64,
    sd: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "truncated normal needs finite mean and sd > 0, got mean={mean}, sd={sd}"
        )));
    }
    if lower.is_nan() || upper.is_nan() || !(lower < upper) {
        return Err(Error::InvalidParameter(format!(
            "truncated normal needs lower < upper, got ({lower}, {upper})"
        )));
    }
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    if !ln_interval_prob(a, b).is_finite() {
        return Err(Error::ZeroMassInterval {
            lower,
            upper,
            mean,
            sd,
        });
    }
    let z = sample_std(a, b, rng);
    Ok((mean + sd * z).clamp(lower, upper))
}

/// Standard normal truncated to `(a, b)`; caller guarantees positive mass.
pub(crate) fn sample_std<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a >= TAIL_START {
        tail_sample(a, b, rng)
    } else if b <= -TAIL_START {
        -tail_sample(-b, -a, rng)
    } else {
        // The bulk branch has mass at least sf(6); a non-finite quantile can
        // only come from rounding u onto an endpoint, so redraw.
        loop {
            let u: f64 = rng.sample(Open01);
            let z = interval_quantile(a, b, u);
            if z.is_finite() {
                return z.clamp(a, b);
            }
        }
    }
}

/// Sampler for `(a, b)` with `a >= 6`: uniform proposals for short intervals,
/// otherwise Robert's translated-exponential proposal.
fn tail_sample<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let width = b - a;
    if width * a < 1.0 {
        // Density ratio over the interval is at least exp(-width*a - width^2/2).
        loop {
            let u: f64 = rng.sample(Open01);
            let x = a + width * u;
            let v: f64 = rng.sample(Open01);
            if v.ln() <= -0.5 * (x * x - a * a) {
                return x;
            }
        }
    }
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let x = a + e / lambda;
        if x >= b {
            continue;
        }
        let v: f64 = rng.sample(Open01);
        if v.ln() <= -0.5 * (x - lambda) * (x - lambda) {
            return x;
        }
    }
}
