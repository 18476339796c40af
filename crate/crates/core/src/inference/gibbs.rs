//! Gibbs sampler: latent data, states by forward-filter backward-sample,
//! then variances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Gamma};

use super::filter::{check_dims, obs_rect};
use crate::dlm::DlmSystem;
use crate::error::{Error, Result};
use crate::linalg;
use crate::mvn::{sample_tn_1d, Rectangle};
use crate::series::CountSeries;
use crate::warp::Warp;

/// Default upper bound `A` of the uniform prior on standard deviations.
pub const DEFAULT_SD_UPPER: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub enum VariancePrior {
    /// Held at its current value.
    Fixed,
    /// Independent `Uniform(0, upper)` priors on each standard deviation in
    /// the block; the block is kept diagonal.
    UniformSd { upper: f64 },
    /// Inverse-Wishart with `df` degrees of freedom and scale matrix.
    InverseWishart { df: f64, scale: DMatrix<f64> },
}

/// A prior on the diagonal block `start..start + len` of `V` or `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceBlock {
    pub start: usize,
    pub len: usize,
    pub prior: VariancePrior,
}

impl VarianceBlock {
    pub fn new(start: usize, len: usize, prior: VariancePrior) -> Self {
        Self { start, len, prior }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GibbsPriors {
    pub v: Vec<VarianceBlock>,
    pub w: Vec<VarianceBlock>,
}

impl GibbsPriors {
    /// All variances fixed at the system's values.
    pub fn fixed() -> Self {
        Self::default()
    }

    /// Uniform priors on every standard deviation of `V` and `W`.
    pub fn uniform_sd(n: usize, p: usize, upper: f64) -> Self {
        Self {
            v: vec![VarianceBlock::new(0, n, VariancePrior::UniformSd { upper })],
            w: vec![VarianceBlock::new(0, p, VariancePrior::UniformSd { upper })],
        }
    }

    fn learns(&self) -> bool {
        self.v.iter().chain(&self.w).any(|b| b.prior != VariancePrior::Fixed)
    }

    fn validate(&self, n: usize, p: usize) -> Result<()> {
        for (blocks, d, name) in [(&self.v, n, "V"), (&self.w, p, "W")] {
            let mut used = vec![false; d];
            for b in blocks {
                if b.len == 0 || b.start + b.len > d {
                    return Err(Error::InvalidParameter(format!(
                        "{name} prior block {}..{} outside 0..{d}",
                        b.start,
                        b.start + b.len
                    )));
                }
                for u in &mut used[b.start..b.start + b.len] {
                    if *u {
                        return Err(Error::InvalidParameter(format!("{name} prior blocks overlap")));
                    }
                    *u = true;
                }
                match &b.prior {
                    VariancePrior::Fixed => {}
                    VariancePrior::UniformSd { upper } => {
                        if !(*upper > 0.0) {
                            return Err(Error::InvalidParameter(format!(
                                "{name} uniform sd prior needs a positive upper bound"
                            )));
                        }
                    }
                    VariancePrior::InverseWishart { df, scale } => {
                        linalg::check_square(scale, b.len, &format!("{name} inverse-Wishart scale"))?;
                        linalg::cholesky(scale)?;
                        if !(*df > (b.len as f64) - 1.0) {
                            return Err(Error::InvalidParameter(format!(
                                "{name} inverse-Wishart df must exceed {}",
                                b.len - 1
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GibbsOptions {
    pub niter: usize,
    pub burnin: usize,
    pub thin: usize,
    /// Store every retained draw of the full state path (memory `p x T`
    /// per draw). Posterior means and final-state draws are always kept.
    pub keep_states: bool,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        Self {
            niter: 2000,
            burnin: 500,
            thin: 1,
            keep_states: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GibbsOutput {
    /// Retained state paths (`p x T`), when requested.
    pub state_draws: Vec<DMatrix<f64>>,
    /// Posterior mean of the states (`p x T`).
    pub state_mean: DMatrix<f64>,
    /// Retained draws of `theta_T`.
    pub final_states: Vec<DVector<f64>>,
    pub v_draws: Vec<DMatrix<f64>>,
    pub w_draws: Vec<DMatrix<f64>>,
}

impl GibbsOutput {
    pub fn v_mean(&self) -> DMatrix<f64> {
        mean_matrix(&self.v_draws)
    }

    pub fn w_mean(&self) -> DMatrix<f64> {
        mean_matrix(&self.w_draws)
    }

    /// Draws of one state coordinate at 1-based time `t` (needs
    /// `keep_states`).
    pub fn state_trace(&self, coord: usize, t: usize) -> Vec<f64> {
        self.state_draws.iter().map(|s| s[(coord, t - 1)]).collect()
    }
}

fn mean_matrix(ms: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut acc = ms[0].clone() * 0.0;
    for m in ms {
        acc += m;
    }
    acc / ms.len() as f64
}

/// Run the sampler. Variance blocks with non-fixed priors require
/// time-invariant `V` and `W`.
pub fn gibbs<R: Rng + ?Sized>(
    sys: &DlmSystem,
    warp: &Warp,
    y: &CountSeries,
    priors: &GibbsPriors,
    opts: &GibbsOptions,
    rng: &mut R,
) -> Result<GibbsOutput> {
    check_dims(sys, warp, y)?;
    let (n, p) = (sys.n(), sys.p());
    let big_t = y.len();
    priors.validate(n, p)?;
    if big_t < 2 && priors.learns() {
        return Err(Error::InvalidParameter("variance learning needs at least two time points".into()));
    }
    if opts.niter <= opts.burnin {
        return Err(Error::InvalidParameter(format!(
            "niter ({}) must exceed burnin ({})",
            opts.niter, opts.burnin
        )));
    }
    let rects = (1..=big_t)
        .map(|t| obs_rect(warp, t, y.row(t)))
        .collect::<Result<Vec<_>>>()?;
    let mut cur = sys.clone();
    let mut z = DMatrix::from_fn(n, big_t, |i, t| start_value(&rects[t], i));
    let thin = opts.thin.max(1);

    let mut out = GibbsOutput {
        state_draws: Vec::new(),
        state_mean: DMatrix::zeros(p, big_t),
        final_states: Vec::new(),
        v_draws: Vec::new(),
        w_draws: Vec::new(),
    };
    let mut kept = 0usize;
    for it in 0..opts.niter {
        let theta = ffbs(&cur, &z, rng)?;
        if priors.learns() {
            let (v, w) = draw_variances(&cur, priors, &theta, &z, rng)?;
            cur = cur.with_variances(v, w)?;
        }
        draw_latent(&cur, &theta, &rects, &mut z, rng)?;
        if it >= opts.burnin && (it - opts.burnin) % thin == 0 {
            let path = theta.columns(1, big_t).into_owned();
            out.state_mean += &path;
            out.final_states.push(theta.column(big_t).into_owned());
            out.v_draws.push(cur.v(1).into_owned());
            out.w_draws.push(cur.w(1).into_owned());
            if opts.keep_states {
                out.state_draws.push(path);
            }
            kept += 1;
        }
    }
    out.state_mean /= kept as f64;
    Ok(out)
}

/// A point inside the interval for coordinate `i`, used to start the chain.
fn start_value(rect: &Rectangle, i: usize) -> f64 {
    match rect.interval(i) {
        (a, b) if a.is_finite() && b.is_finite() => 0.5 * (a + b),
        (a, _) if a.is_finite() => a + 0.5,
        (_, b) if b.is_finite() => b - 0.5,
        _ => 0.0,
    }
}

/// Forward-filter backward-sample `theta_{0:T}` given latent data
/// (`n x T`); returns `p x (T + 1)` with column 0 holding `theta_0`.
pub fn ffbs<R: Rng + ?Sized>(sys: &DlmSystem, z: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = sys.p();
    let big_t = z.ncols();
    let mut ms = Vec::with_capacity(big_t + 1);
    let mut cs = Vec::with_capacity(big_t + 1);
    let mut as_ = Vec::with_capacity(big_t + 1);
    let mut rs = Vec::with_capacity(big_t + 1);
    ms.push(sys.a0().clone());
    cs.push(sys.r0().clone());
    as_.push(DVector::zeros(p));
    rs.push(DMatrix::zeros(p, p));
    for t in 1..=big_t {
        let g = sys.g(t);
        let f = sys.f(t);
        let a = &*g * &ms[t - 1];
        let r = linalg::symmetrize(&(&*g * &cs[t - 1] * g.transpose() + &*sys.w(t)));
        let fr = &*f * &r;
        let q = linalg::symmetrize(&(&fr * f.transpose() + &*sys.v(t)));
        let lq = linalg::cholesky(&q)?;
        // K' = Q^-1 F R
        let kt = linalg::chol_solve(&lq, &fr);
        let e = z.column(t - 1) - &*f * &a;
        let m = &a + kt.transpose() * e;
        let c = linalg::symmetrize(&(&r - fr.transpose() * &kt));
        as_.push(a);
        rs.push(r);
        ms.push(m);
        cs.push(c);
    }
    let mut theta = DMatrix::zeros(p, big_t + 1);
    let last = linalg::sample_gaussian(&ms[big_t], &linalg::psd_factor(&cs[big_t])?, rng);
    theta.set_column(big_t, &last);
    for t in (0..big_t).rev() {
        let g = sys.g(t + 1);
        let cg = &cs[t] * g.transpose();
        // B = C_t G' R_{t+1}^-1, computed as (R^-1 G C_t)'.
        let lr = linalg::cholesky(&rs[t + 1])?;
        let bt = linalg::chol_solve(&lr, &cg.transpose());
        let next = theta.column(t + 1).into_owned();
        let h = &ms[t] + bt.transpose() * (next - &as_[t + 1]);
        let hc = linalg::symmetrize(&(&cs[t] - &cg * &bt));
        let draw = linalg::sample_gaussian(&h, &linalg::psd_factor(&hc)?, rng);
        theta.set_column(t, &draw);
    }
    Ok(theta)
}

/// Latent update: each `z_t | theta_t, y_t` is `N(F_t theta_t, V_t)`
/// truncated to the observation's rectangle. With `n > 1` one systematic
/// coordinate sweep is taken from the current value.
fn draw_latent<R: Rng + ?Sized>(
    sys: &DlmSystem,
    theta: &DMatrix<f64>,
    rects: &[Rectangle],
    z: &mut DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    let n = sys.n();
    let mut prec_cache: Option<DMatrix<f64>> = None;
    for t in 1..=z.ncols() {
        let mean = &*sys.f(t) * theta.column(t);
        let rect = &rects[t - 1];
        if n == 1 {
            let sd = sys.v(t)[(0, 0)].sqrt();
            let (a, b) = rect.interval(0);
            z[(0, t - 1)] = draw_tn(a, b, mean[0], sd, rng)?;
            continue;
        }
        let prec = match (&prec_cache, sys.is_time_invariant()) {
            (Some(p), true) => p.clone(),
            _ => {
                let v = sys.v(t);
                let l = linalg::cholesky(&v)?;
                let p = linalg::chol_solve(&l, &DMatrix::identity(n, n));
                prec_cache = Some(p.clone());
                p
            }
        };
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                if j != i {
                    s += prec[(i, j)] * (z[(j, t - 1)] - mean[j]);
                }
            }
            let cm = mean[i] - s / prec[(i, i)];
            let sd = (1.0 / prec[(i, i)]).sqrt();
            let (a, b) = rect.interval(i);
            z[(i, t - 1)] = draw_tn(a, b, cm, sd, rng)?;
        }
    }
    Ok(())
}

fn draw_tn<R: Rng + ?Sized>(a: f64, b: f64, mean: f64, sd: f64, rng: &mut R) -> Result<f64> {
    if sd == 0.0 {
        return Ok(mean.clamp(a, b));
    }
    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return Ok(mean + sd * rng.sample::<f64, _>(StandardNormal));
    }
    sample_tn_1d(a, b, mean, sd, rng)
}

fn draw_variances<R: Rng + ?Sized>(
    sys: &DlmSystem,
    priors: &GibbsPriors,
    theta: &DMatrix<f64>,
    z: &DMatrix<f64>,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(sys.v_is_constant() && sys.w_is_constant()) {
        return Err(Error::InvalidParameter(
            "variance learning needs time-invariant V and W".into(),
        ));
    }
    let (n, p) = (sys.n(), sys.p());
    let big_t = z.ncols();
    let mut sv = DMatrix::zeros(n, n);
    let mut sw = DMatrix::zeros(p, p);
    for t in 1..=big_t {
        let e = z.column(t - 1) - &*sys.f(t) * theta.column(t);
        sv += &e * e.transpose();
        let d = theta.column(t) - &*sys.g(t) * theta.column(t - 1);
        sw += &d * d.transpose();
    }
    let v = update_blocks(&sys.v(1), &priors.v, &sv, big_t, rng)?;
    let w = update_blocks(&sys.w(1), &priors.w, &sw, big_t, rng)?;
    Ok((v, w))
}

fn update_blocks<R: Rng + ?Sized>(
    current: &DMatrix<f64>,
    blocks: &[VarianceBlock],
    ss: &DMatrix<f64>,
    m: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let mut out = current.clone();
    for b in blocks {
        let (s, k) = (b.start, b.len);
        match &b.prior {
            VariancePrior::Fixed => {}
            VariancePrior::UniformSd { upper } => {
                for i in s..s + k {
                    for j in s..s + k {
                        out[(i, j)] = 0.0;
                    }
                    out[(i, i)] = draw_uniform_sd_variance(ss[(i, i)], m, *upper, rng)?;
                }
            }
            VariancePrior::InverseWishart { df, scale } => {
                let post_scale = scale + ss.view((s, s), (k, k));
                let draw = sample_inverse_wishart(df + m as f64, &post_scale, rng)?;
                out.view_mut((s, s), (k, k)).copy_from(&draw);
            }
        }
    }
    Ok(out)
}

/// Variance draw under a `Uniform(0, upper)` prior on the standard
/// deviation: an inverse-gamma `IG((m - 1) / 2, ss / 2)` truncated to
/// `(0, upper^2)`, by inverse CDF on the precision scale.
pub fn draw_uniform_sd_variance<R: Rng + ?Sized>(ss: f64, m: usize, upper: f64, rng: &mut R) -> Result<f64> {
    let shape = (m as f64 - 1.0) / 2.0;
    let rate = (ss / 2.0).max(1e-300);
    let g = Gamma::new(shape, rate)
        .map_err(|e| Error::InvalidParameter(format!("variance conditional: {e}")))?;
    let lo = g.cdf(1.0 / (upper * upper));
    let u = lo + (1.0 - lo) * rng.random::<f64>();
    let prec = if u >= 1.0 { 1.0 / (upper * upper) } else { g.inverse_cdf(u) };
    Ok((1.0 / prec).min(upper * upper))
}

/// `Sigma ~ IW(df, scale)` via the Bartlett decomposition of its inverse.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(df: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let k = scale.nrows();
    let ls = linalg::cholesky(scale)?;
    let inv_scale = linalg::chol_solve(&ls, &DMatrix::identity(k, k));
    let l = linalg::cholesky(&linalg::symmetrize(&inv_scale))?;
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k {
        let chi = ChiSquared::new(df - i as f64)
            .map_err(|e| Error::InvalidParameter(format!("inverse-Wishart: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let la = l * a;
    let wish = &la * la.transpose();
    let lw = linalg::cholesky(&linalg::symmetrize(&wish))?;
    Ok(linalg::symmetrize(&linalg::chol_solve(&lw, &DMatrix::identity(k, k))))
}
