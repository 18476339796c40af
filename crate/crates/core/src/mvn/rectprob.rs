//! Gaussian rectangle probabilities.
//!
//! Dimension one is exact, dimension two uses the bivariate normal routine,
//! and higher dimensions use Genz's separation-of-variables transform with
//! variable reordering and randomized Richtmyer lattice points. All
//! estimates are accumulated on the log scale so that long constraint
//! histories do not underflow.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::sync::OnceLock;

use super::bvn::bvn_rect;
use super::normal::{cdf, interval_quantile, ln_interval_prob, quantile, sf, truncated_mean};
use super::{MvnParams, Rectangle};
use crate::error::{Error, Result};

/// Stopping rules for the quasi-Monte Carlo estimator.
#[derive(Debug, Clone)]
pub struct RectProbOptions {
    /// Stop once `3 * standard error` of the probability is below this.
    pub abs_tol: f64,
    /// Stop once `3 * standard error / estimate` is below this. This bounds
    /// the error of the log-probability.
    pub rel_tol: f64,
    /// Lattice points per randomization in the first round.
    pub min_points: usize,
    /// Cap on the total number of integrand evaluations.
    pub max_evals: usize,
    /// Number of independent random shifts. With a single shift no error
    /// estimate is available, but the estimate is still unbiased.
    pub shifts: usize,
}

impl Default for RectProbOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-4,
            rel_tol: 1e-3,
            min_points: 128,
            max_evals: 1 << 20,
            shifts: 8,
        }
    }
}

impl RectProbOptions {
    /// Absolute tolerance only.
    pub fn absolute(tol: f64) -> Self {
        Self {
            abs_tol: tol,
            rel_tol: 0.0,
            ..Self::default()
        }
    }

    /// Relative tolerance only, the right choice for log-likelihoods.
    pub fn relative(tol: f64) -> Self {
        Self {
            abs_tol: 0.0,
            rel_tol: tol,
            ..Self::default()
        }
    }

    /// A fixed-size single-shift estimate, unbiased for the probability.
    pub fn fixed(points: usize) -> Self {
        Self {
            abs_tol: 0.0,
            rel_tol: 0.0,
            min_points: points.max(1),
            max_evals: points.max(1),
            shifts: 1,
        }
    }
}

/// A rectangle probability on the log scale.
#[derive(Debug, Clone, Copy)]
pub struct RectProb {
    pub log_prob: f64,
    /// Three standard errors relative to the estimate (`NaN` when unknown,
    /// zero for exact evaluations).
    pub rel_err: f64,
}

impl RectProb {
    pub fn prob(&self) -> f64 {
        self.log_prob.exp()
    }

    /// Absolute error estimate on the probability scale.
    pub fn abs_err(&self) -> f64 {
        self.rel_err * self.prob()
    }

    fn exact(log_prob: f64) -> Self {
        Self {
            log_prob,
            rel_err: 0.0,
        }
    }
}

/// `P(X in rect)` with an absolute error estimate (three standard errors).
pub fn rect_prob<R: Rng + ?Sized>(
    rect: &Rectangle,
    p: &MvnParams,
    tol: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let r = rect_log_prob(rect, p, &RectProbOptions::absolute(tol), rng)?;
    let prob = r.prob().clamp(0.0, 1.0);
    let err = if r.rel_err.is_nan() { f64::NAN } else { r.rel_err * prob };
    Ok((prob, err))
}

/// `ln P(X in rect)` for `X ~ N(mean, cov)`.
pub fn rect_log_prob<R: Rng + ?Sized>(
    rect: &Rectangle,
    p: &MvnParams,
    opts: &RectProbOptions,
    rng: &mut R,
) -> Result<RectProb> {
    if rect.dim() != p.dim() {
        return Err(Error::Dimension(format!(
            "rectangle has dimension {}, distribution {}",
            rect.dim(),
            p.dim()
        )));
    }
    // Unbounded coordinates integrate out.
    let idx: Vec<usize> = (0..rect.dim())
        .filter(|&i| {
            let (a, b) = rect.interval(i);
            !(a == f64::NEG_INFINITY && b == f64::INFINITY)
        })
        .collect();
    let k = idx.len();
    let a: Vec<f64> = idx.iter().map(|&i| rect.lower()[i] - p.mean()[i]).collect();
    let b: Vec<f64> = idx.iter().map(|&i| rect.upper()[i] - p.mean()[i]).collect();
    let cov = DMatrix::from_fn(k, k, |r, c| p.cov()[(idx[r], idx[c])]);
    log_prob_centered(&a, &b, &cov, opts, rng)
}

/// Rectangle log-probability for a zero-mean normal with covariance `cov`.
pub(crate) fn log_prob_centered<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    cov: &DMatrix<f64>,
    opts: &RectProbOptions,
    rng: &mut R,
) -> Result<RectProb> {
    let k = a.len();
    match k {
        0 => return Ok(RectProb::exact(0.0)),
        1 => {
            let s = cov[(0, 0)].sqrt();
            return Ok(RectProb::exact(ln_interval_prob(a[0] / s, b[0] / s)));
        }
        2 => {
            let s = [cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt()];
            let r = (cov[(0, 1)] / (s[0] * s[1])).clamp(-1.0, 1.0);
            let pr = bvn_rect([a[0], a[1]], [b[0], b[1]], [0.0, 0.0], s, r);
            // Inclusion-exclusion loses relative accuracy for tiny masses.
            if pr > 1e-10 {
                return Ok(RectProb {
                    log_prob: pr.ln(),
                    rel_err: 1e-14 / pr,
                });
            }
        }
        _ => {}
    }
    let plan = SovPlan::new(a, b, cov)?;
    Ok(plan.estimate(opts, rng))
}

/// Reordered Cholesky factor and bounds for the separation-of-variables
/// integrand.
struct SovPlan {
    /// Cholesky factor, lower triangle packed by rows (row `i` starts at
    /// `i (i + 1) / 2`).
    l: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    /// Log-probability of the first (deterministic) factor.
    first: f64,
}

impl SovPlan {
    /// Genz–Bretz ordering: at each stage pick the remaining variable whose
    /// conditional interval has the smallest probability, conditioning on
    /// truncated means of the variables already placed.
    fn new(a: &[f64], b: &[f64], cov: &DMatrix<f64>) -> Result<Self> {
        let k = a.len();
        let mut c = cov.clone();
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        let mut l = DMatrix::<f64>::zeros(k, k);
        let mut y = vec![0.0; k];
        for i in 0..k {
            let mut best = i;
            let mut best_lp = f64::INFINITY;
            let mut best_s = 0.0;
            for j in i..k {
                let mut s2 = c[(j, j)];
                let mut mu = 0.0;
                for m in 0..i {
                    s2 -= l[(j, m)] * l[(j, m)];
                    mu += l[(j, m)] * y[m];
                }
                let s = s2.max(1e-14 * c[(j, j)]).sqrt();
                if !(s > 0.0) {
                    return Err(Error::NotPositiveDefinite(
                        "covariance has a zero variance".into(),
                    ));
                }
                let lp = ln_interval_prob((a[j] - mu) / s, (b[j] - mu) / s);
                if lp < best_lp || j == i && best_lp == f64::INFINITY {
                    best_lp = lp;
                    best = j;
                    best_s = s;
                }
            }
            if best != i {
                a.swap(i, best);
                b.swap(i, best);
                c.swap_rows(i, best);
                c.swap_columns(i, best);
                for m in 0..i {
                    l.swap((i, m), (best, m));
                }
            }
            l[(i, i)] = best_s;
            for r in (i + 1)..k {
                let mut v = c[(r, i)];
                for m in 0..i {
                    v -= l[(r, m)] * l[(i, m)];
                }
                l[(r, i)] = v / best_s;
            }
            let mut mu = 0.0;
            for m in 0..i {
                mu += l[(i, m)] * y[m];
            }
            let lo = (a[i] - mu) / best_s;
            let hi = (b[i] - mu) / best_s;
            y[i] = truncated_mean(lo, hi);
        }
        let s0 = l[(0, 0)];
        let first = ln_interval_prob(a[0] / s0, b[0] / s0);
        let packed = (0..k).flat_map(|i| (0..=i).map(move |m| (i, m))).map(|ix| l[ix]).collect();
        Ok(Self { l: packed, a, b, first })
    }

    /// Log of the integrand at one point of the unit cube (dimension k-1).
    fn log_integrand(&self, w: &[f64], y: &mut [f64]) -> f64 {
        let k = self.a.len();
        let s0 = self.l[0];
        let mut lp = self.first;
        y[0] = interval_quantile(self.a[0] / s0, self.b[0] / s0, w[0]);
        let mut row = 1;
        for i in 1..k {
            let li = &self.l[row..row + i + 1];
            row += i + 1;
            let mu: f64 = li[..i].iter().zip(&y[..i]).map(|(l, v)| l * v).sum();
            let s = li[i];
            let lo = (self.a[i] - mu) / s;
            let hi = (self.b[i] - mu) / s;
            // Shared tail probabilities for the mass and the quantile.
            let (pa, pb, upper) = if lo > 0.0 { (sf(lo), sf(hi), true) } else { (cdf(lo), cdf(hi), false) };
            let e = if upper { pa - pb } else { pb - pa };
            if e > 1e-300 {
                lp += e.ln();
            } else {
                lp += ln_interval_prob(lo, hi);
                if lp == f64::NEG_INFINITY {
                    return lp;
                }
            }
            if i + 1 < k {
                let x = if upper {
                    -quantile(pa - w[i] * (pa - pb))
                } else {
                    quantile(pa + w[i] * (pb - pa))
                };
                y[i] = if e > 1e-300 && x.is_finite() && x >= lo && x <= hi {
                    x
                } else {
                    interval_quantile(lo, hi, w[i])
                };
            }
        }
        lp
    }

    fn estimate<R: Rng + ?Sized>(&self, opts: &RectProbOptions, rng: &mut R) -> RectProb {
        let k = self.a.len();
        if self.first == f64::NEG_INFINITY {
            return RectProb::exact(f64::NEG_INFINITY);
        }
        let dim = k - 1;
        let gen: Vec<f64> = primes(dim).iter().map(|&p| (p as f64).sqrt().fract()).collect();
        let shifts = opts.shifts.max(1);
        let shift_vecs: Vec<Vec<f64>> = (0..shifts)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        // Running log-sum-exp per shift.
        let mut acc = vec![LogSum::default(); shifts];
        let mut w = vec![0.0; dim];
        let mut y = vec![0.0; k];
        let mut done = 0usize;
        let mut target = opts.min_points.max(1);
        loop {
            for (s, shift) in shift_vecs.iter().enumerate() {
                for n in (done + 1)..=target {
                    for j in 0..dim {
                        let x = (n as f64 * gen[j] + shift[j]).fract();
                        // Baker's transform keeps the periodized integrand continuous.
                        w[j] = (2.0 * x - 1.0).abs();
                    }
                    acc[s].push(self.log_integrand(&w, &mut y));
                }
            }
            done = target;
            let count = done as f64;
            let logs: Vec<f64> = acc.iter().map(|a| a.value() - count.ln()).collect();
            let (log_mean, rel_err) = combine(&logs);
            if log_mean == f64::NEG_INFINITY {
                return RectProb::exact(log_mean);
            }
            let abs_err = rel_err * log_mean.exp();
            let converged = rel_err <= opts.rel_tol || abs_err <= opts.abs_tol;
            if converged || done * shifts * 2 > opts.max_evals {
                return RectProb {
                    log_prob: log_mean,
                    rel_err,
                };
            }
            target = done * 2;
        }
    }
}

/// Log mean of per-shift estimates and three relative standard errors.
fn combine(logs: &[f64]) -> (f64, f64) {
    let k = logs.len();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return (m, 0.0);
    }
    let vals: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let mean = vals.iter().sum::<f64>() / k as f64;
    let log_mean = m + mean.ln();
    if k < 2 {
        return (log_mean, f64::NAN);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    let se = (var / k as f64).sqrt();
    (log_mean, 3.0 * se / mean)
}

#[derive(Debug, Clone, Copy)]
struct LogSum {
    max: f64,
    sum: f64,
}

impl Default for LogSum {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LogSum {
    fn push(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.sum += (v - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// The first `n` primes (cached).
fn primes(n: usize) -> Vec<u64> {
    static CACHE: OnceLock<Vec<u64>> = OnceLock::new();
    let cached = CACHE.get_or_init(|| sieve(2000));
    if n <= cached.len() {
        return cached[..n].to_vec();
    }
    let mut limit = 20_000;
    loop {
        let ps = sieve(limit);
        if ps.len() >= n {
            return ps[..n].to_vec();
        }
        limit *= 2;
    }
}

fn sieve(count: usize) -> Vec<u64> {
    // Upper bound for the count-th prime: n (ln n + ln ln n) for n >= 6.
    let n = count.max(6) as f64;
    let limit = (n * (n.ln() + n.ln().ln())).ceil() as usize + 1;
    let mut is_p = vec![true; limit + 1];
    is_p[0] = false;
    is_p[1] = false;
    let mut i = 2;
    while i * i <= limit {
        if is_p[i] {
            let mut j = i * i;
            while j <= limit {
                is_p[j] = false;
                j += i;
            }
        }
        i += 1;
    }
    is_p
        .iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .map(|(i, _)| i as u64)
        .take(count)
        .collect()
}

/// `E[X | X in rect]` for `X ~ N(mean, cov)`, computed from
/// `(d-1)`-dimensional rectangle probabilities (Tallis' formula).
pub fn truncated_mean_vector<R: Rng + ?Sized>(
    rect: &Rectangle,
    p: &MvnParams,
    opts: &RectProbOptions,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let d = p.dim();
    if rect.dim() != d {
        return Err(Error::Dimension(format!(
            "rectangle has dimension {}, distribution {d}",
            rect.dim()
        )));
    }
    let a: Vec<f64> = (0..d).map(|i| rect.lower()[i] - p.mean()[i]).collect();
    let b: Vec<f64> = (0..d).map(|i| rect.upper()[i] - p.mean()[i]).collect();
    let cov = p.cov();
    let total = rect_log_prob(rect, p, opts, rng)?.log_prob;
    if !total.is_finite() {
        return Err(Error::ZeroMass {
            log_mass: total,
            context: "truncated mean of a zero-mass rectangle".into(),
        });
    }
    // f[k] = F_k(a_k) - F_k(b_k) scaled by 1 / P(rect).
    let mut f = DVector::zeros(d);
    let others = |k: usize| -> Vec<usize> { (0..d).filter(|&j| j != k).collect() };
    for k in 0..d {
        let skk = cov[(k, k)];
        let rest = others(k);
        let cond_cov = DMatrix::from_fn(d - 1, d - 1, |r, c| {
            let (i, j) = (rest[r], rest[c]);
            cov[(i, j)] - cov[(i, k)] * cov[(k, j)] / skk
        });
        let mut term = |x: f64| -> Result<f64> {
            if !x.is_finite() {
                return Ok(0.0);
            }
            let log_dens = -0.5 * x * x / skk - 0.5 * skk.ln() - super::normal::LN_SQRT_2PI;
            let lo: Vec<f64> = rest.iter().map(|&i| a[i] - cov[(i, k)] * x / skk).collect();
            let hi: Vec<f64> = rest.iter().map(|&i| b[i] - cov[(i, k)] * x / skk).collect();
            let keep: Vec<usize> = (0..rest.len())
                .filter(|&r| !(lo[r] == f64::NEG_INFINITY && hi[r] == f64::INFINITY))
                .collect();
            let lo_k: Vec<f64> = keep.iter().map(|&r| lo[r]).collect();
            let hi_k: Vec<f64> = keep.iter().map(|&r| hi[r]).collect();
            let cc = DMatrix::from_fn(keep.len(), keep.len(), |r, c| cond_cov[(keep[r], keep[c])]);
            let lp = log_prob_centered(&lo_k, &hi_k, &cc, opts, rng)?.log_prob;
            Ok((log_dens + lp - total).exp())
        };
        f[k] = term(a[k])? - term(b[k])?;
    }
    Ok(p.mean() + cov * f)
}
