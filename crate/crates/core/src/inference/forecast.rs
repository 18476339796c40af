//! Forecast distributions of future counts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::filter::{augment, FilterState, SmoothResult};
use crate::dlm::DlmSystem;
use crate::error::{Error, Result};
use crate::linalg;
use crate::mvn::{RectProbOptions, Rectangle};
use crate::selnorm::SelectionNormal;
use crate::warp::Warp;

/// Forecast probabilities `P(y = k)` for `k = 0..pmf.len()`, plus the
/// mass left beyond the enumerated range (zero when the support is
/// bounded and fully enumerated).
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastPmf {
    pub pmf: Vec<f64>,
    pub tail_mass: f64,
}

impl ForecastPmf {
    /// `P(y <= k)`; `P(y <= -1) = 0`.
    pub fn cdf(&self, k: i64) -> f64 {
        if k < 0 {
            return 0.0;
        }
        let k = (k as usize).min(self.pmf.len().saturating_sub(1));
        self.pmf[..=k].iter().sum::<f64>().min(1.0)
    }

    pub fn prob(&self, k: u64) -> f64 {
        self.pmf.get(k as usize).copied().unwrap_or(0.0)
    }

    /// Build from raw (possibly unnormalized) estimates: renormalize only
    /// when `bounded`, otherwise report the shortfall as tail mass.
    pub fn from_probs(mut pmf: Vec<f64>, bounded: bool) -> Self {
        for v in pmf.iter_mut() {
            *v = v.max(0.0);
        }
        let total: f64 = pmf.iter().sum();
        if bounded && total > 0.0 {
            pmf.iter_mut().for_each(|v| *v /= total);
            Self { pmf, tail_mass: 0.0 }
        } else {
            Self {
                pmf,
                tail_mass: (1.0 - total).max(0.0),
            }
        }
    }
}

/// Filtering state pushed `horizon - 1` steps ahead without observations,
/// then the predictive of `theta_{t+horizon}`.
fn predictive(fs: &FilterState, sys: &DlmSystem, horizon: usize) -> Result<(SelectionNormal, usize)> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("forecast horizon must be at least 1".into()));
    }
    let mut cur = fs.clone();
    for _ in 1..horizon {
        let sn = cur.predict(sys)?;
        cur = FilterState { t: cur.t + 1, sn };
    }
    Ok((cur.predict(sys)?, cur.t + 1))
}

/// `P(y_{t+h} = y | y_{1:t})` for one observation vector (`None` entries
/// are left unconstrained), as a ratio of rectangle probabilities on the
/// log scale.
pub fn forecast_log_prob<R: Rng + ?Sized>(
    fs: &FilterState,
    sys: &DlmSystem,
    warp: &Warp,
    horizon: usize,
    y: &[Option<u64>],
    opts: &RectProbOptions,
    rng: &mut R,
) -> Result<f64> {
    let (pred, t) = predictive(fs, sys, horizon)?;
    let denom = fs.sn.log_mass(opts, rng)?.log_prob;
    if !denom.is_finite() {
        return Err(Error::ZeroMass {
            log_mass: denom,
            context: "forecast denominator".into(),
        });
    }
    let rect = super::filter::obs_rect(warp, t, y)?;
    let joint = augment(&pred, &sys.f(t), &sys.v(t), &rect)?;
    Ok(joint.log_mass(opts, rng)?.log_prob - denom)
}

/// Marginal forecast pmf of coordinate `coord` at horizon `horizon`,
/// enumerated over `0..=enum_max` (the bound when the warp has one).
/// With a relative tolerance `r`, each entry is accurate to about `r` in
/// absolute terms.
pub fn forecast_pmf<R: Rng + ?Sized>(
    fs: &FilterState,
    sys: &DlmSystem,
    warp: &Warp,
    horizon: usize,
    coord: usize,
    enum_max: u64,
    opts: &RectProbOptions,
    rng: &mut R,
) -> Result<ForecastPmf> {
    let n = sys.n();
    if coord >= n {
        return Err(Error::Dimension(format!("coordinate {coord} out of range for n = {n}")));
    }
    let (pred, t) = predictive(fs, sys, horizon)?;
    let denom = fs.sn.log_mass(opts, rng)?.log_prob;
    if !denom.is_finite() {
        return Err(Error::ZeroMass {
            log_mass: denom,
            context: "forecast denominator".into(),
        });
    }
    // A relative target on the denominator becomes an absolute target on
    // each cell's mass, so the pmf entries carry that error in probability
    // units and negligible tail cells stay cheap.
    let cell_opts = if opts.rel_tol > 0.0 {
        RectProbOptions {
            abs_tol: opts.abs_tol.max(opts.rel_tol * denom.exp()),
            rel_tol: 0.0,
            ..opts.clone()
        }
    } else {
        opts.clone()
    };
    let kmax = warp.y_max().unwrap_or(enum_max);
    let f = sys.f(t);
    let v = sys.v(t);
    let mut probs = Vec::with_capacity(kmax as usize + 1);
    for k in 0..=kmax {
        let (a, b) = warp.interval(coord, k)?;
        let mut lower = vec![f64::NEG_INFINITY; n];
        let mut upper = vec![f64::INFINITY; n];
        lower[coord] = a;
        upper[coord] = b;
        let rect = Rectangle::new(lower, upper)?;
        let joint = augment(&pred, &f, &v, &rect)?;
        probs.push((joint.log_mass(&cell_opts, rng)?.log_prob - denom).exp());
    }
    Ok(ForecastPmf::from_probs(probs, warp.y_max().is_some()))
}

/// Count paths `[draw][step][coord]` for steps `t+1..=t+horizon`, given
/// draws of `theta_t`. With `horizon = 0` each path holds one count vector
/// from `z_t ~ N(F_t theta_t, V_t)`.
pub fn forecast_from_states<R: Rng + ?Sized>(
    states: &[DVector<f64>],
    t: usize,
    sys: &DlmSystem,
    warp: &Warp,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Vec<u64>>>> {
    let n = sys.n();
    let p = sys.p();
    let steps: Vec<usize> = if horizon == 0 { vec![t] } else { (t + 1..=t + horizon).collect() };
    let mut facs = Vec::with_capacity(steps.len());
    for &s in &steps {
        let wf = if horizon == 0 { DMatrix::zeros(p, p) } else { linalg::psd_factor(&sys.w(s))? };
        facs.push((wf, linalg::psd_factor(&sys.v(s))?));
    }
    let zero_p = DVector::zeros(p);
    let zero_n = DVector::zeros(n);
    let mut out = Vec::with_capacity(states.len());
    for th in states {
        let mut theta = th.clone();
        let mut path = Vec::with_capacity(steps.len());
        for (&s, (wf, vf)) in steps.iter().zip(&facs) {
            if horizon > 0 {
                theta = &*sys.g(s) * &theta + linalg::sample_gaussian(&zero_p, wf, rng);
            }
            let z = &*sys.f(s) * &theta + linalg::sample_gaussian(&zero_n, vf, rng);
            path.push(warp.latent_to_count(z.as_slice()));
        }
        out.push(path);
    }
    Ok(out)
}

/// Forecast paths from a filtering state: draws of `theta_t` by the
/// selection normal sampler, then forward simulation.
pub fn forecast_sample<R: Rng + ?Sized>(
    fs: &FilterState,
    sys: &DlmSystem,
    warp: &Warp,
    horizon: usize,
    ndraws: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Vec<u64>>>> {
    let states = fs.sn.sample_n(ndraws, rng)?;
    forecast_from_states(&states, fs.t, sys, warp, horizon, rng)
}

/// Forecast paths from the joint smoothing distribution (its last state).
pub fn forecast_sample_smooth<R: Rng + ?Sized>(
    sr: &SmoothResult,
    sys: &DlmSystem,
    warp: &Warp,
    horizon: usize,
    ndraws: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Vec<u64>>>> {
    let t = sr.horizon();
    let last = sr.marginal(t)?;
    let states = last.sample_n(ndraws, rng)?;
    forecast_from_states(&states, t, sys, warp, horizon, rng)
}

/// Smoothing predictive paths: for each joint draw of `theta_{1:T}`,
/// `z_t ~ N(F_t theta_t, V_t)` mapped to counts. Returns `[draw][t][coord]`.
pub fn predictive_paths<R: Rng + ?Sized>(
    sr: &SmoothResult,
    sys: &DlmSystem,
    warp: &Warp,
    ndraws: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Vec<u64>>>> {
    let (n, p) = (sys.n(), sys.p());
    let horizon = sr.horizon();
    let vfs = (1..=horizon)
        .map(|t| linalg::psd_factor(&sys.v(t)))
        .collect::<Result<Vec<_>>>()?;
    let zero_n = DVector::zeros(n);
    let mut sampler = sr.sn.sampler()?;
    let mut out = Vec::with_capacity(ndraws);
    for _ in 0..ndraws {
        let th = sampler.draw(rng)?;
        let path = (1..=horizon)
            .map(|t| {
                let theta = th.rows((t - 1) * p, p);
                let z = &*sys.f(t) * theta + linalg::sample_gaussian(&zero_n, &vfs[t - 1], rng);
                warp.latent_to_count(z.as_slice())
            })
            .collect();
        out.push(path);
    }
    Ok(out)
}

/// Empirical pmf of one coordinate at one step from forecast paths.
pub fn empirical_pmf(paths: &[Vec<Vec<u64>>], step: usize, coord: usize, enum_max: u64) -> ForecastPmf {
    let mut counts = vec![0usize; enum_max as usize + 1];
    let mut beyond = 0usize;
    for p in paths {
        let v = p[step][coord];
        if v <= enum_max {
            counts[v as usize] += 1;
        } else {
            beyond += 1;
        }
    }
    let total = paths.len() as f64;
    ForecastPmf {
        pmf: counts.iter().map(|&c| c as f64 / total).collect(),
        tail_mass: beyond as f64 / total,
    }
}
