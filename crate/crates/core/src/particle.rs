//! Optimal particle filter: the proposal is the exact conditional
//! `theta_t | theta_{t-1}, y_t` (a selection normal with `d1 = n`) and the
//! weight is `p(y_t | theta_{t-1})`, a rectangle probability in dimension `n`.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dlm::DlmSystem;
use crate::error::{Error, Result};
use crate::inference::{forecast_from_states, obs_rect, ForecastPmf};
use crate::linalg;
use crate::mvn::{self, log_prob_centered, normal, sample_std, MvnParams, RectProbOptions, Rectangle, TmvnChain};
use crate::series::CountSeries;
use crate::warp::Warp;

/// Particles handled per random-number stream; fixed so results do not
/// depend on the number of worker threads.
const BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Resampling {
    /// Systematic resampling at every step.
    Always,
    /// Systematic resampling only when `ESS < threshold * S`.
    Adaptive { threshold: f64 },
}

#[derive(Debug, Clone)]
pub struct PfOptions {
    pub particles: usize,
    pub resampling: Resampling,
    /// Rectangle probabilities for `n >= 3` (one unbiased randomized
    /// lattice estimate per particle). Dimensions one and two are exact.
    pub weight_opts: RectProbOptions,
    /// Gibbs sweeps for each truncated normal draw when `n >= 2`.
    pub tmvn_sweeps: usize,
    pub threads: usize,
    /// Keep every step's unnormalized log-weights (for bootstrap errors).
    pub keep_weights: bool,
}

impl Default for PfOptions {
    fn default() -> Self {
        Self {
            particles: 5000,
            resampling: Resampling::Always,
            weight_opts: RectProbOptions::fixed(64),
            tmvn_sweeps: mvn::DEFAULT_BURN_IN,
            threads: 1,
            keep_weights: false,
        }
    }
}

/// Weighted particle approximation of `theta_t | y_{1:t}`.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    pub t: usize,
    pub particles: Vec<DVector<f64>>,
    /// Normalized log-weights.
    pub logweights: Vec<f64>,
    /// Accumulated `ln p(y_{1:t})` estimate.
    pub logml: f64,
}

impl ParticleCloud {
    /// `S` draws of `theta_0 ~ N(a_0, R_0)`.
    pub fn from_prior<R: Rng + ?Sized>(sys: &DlmSystem, s: usize, rng: &mut R) -> Result<Self> {
        let fac = linalg::psd_factor(sys.r0())?;
        let draws = (0..s).map(|_| linalg::sample_gaussian(sys.a0(), &fac, rng)).collect();
        Self::from_draws(0, draws)
    }

    /// Equally weighted cloud at time `t` (offline draws, say).
    pub fn from_draws(t: usize, particles: Vec<DVector<f64>>) -> Result<Self> {
        if particles.len() < 2 {
            return Err(Error::InvalidParameter("a particle cloud needs at least two particles".into()));
        }
        let p = particles[0].len();
        if particles.iter().any(|x| x.len() != p) {
            return Err(Error::Dimension("particles have different lengths".into()));
        }
        let lw = -(particles.len() as f64).ln();
        Ok(Self {
            t,
            logweights: vec![lw; particles.len()],
            particles,
            logml: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.logweights.iter().map(|v| v.exp()).collect()
    }

    pub fn ess(&self) -> f64 {
        1.0 / self.weights().iter().map(|w| w * w).sum::<f64>()
    }

    pub fn mean(&self) -> DVector<f64> {
        weighted_mean(&self.particles, &self.weights())
    }

    /// Equally weighted draws (systematic resampling if weighted).
    pub fn equal_weight_draws<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<DVector<f64>> {
        let w = self.weights();
        let s = self.len() as f64;
        if w.iter().all(|v| (v * s - 1.0).abs() < 1e-12) {
            return self.particles.clone();
        }
        systematic(&w, self.len(), rng)
            .into_iter()
            .map(|i| self.particles[i].clone())
            .collect()
    }

    /// Text snapshot: version header, `t`, `logml`, then one particle per row
    /// followed by its log-weight.
    pub fn to_snapshot(&self) -> String {
        let mut s = String::from("# warpdlm particle snapshot v1\n");
        let _ = writeln!(s, "t,{}", self.t);
        let _ = writeln!(s, "logml,{:.17e}", self.logml);
        let _ = writeln!(s, "particles,{},{}", self.len(), self.particles[0].len());
        for (x, lw) in self.particles.iter().zip(&self.logweights) {
            for v in x.iter() {
                let _ = write!(s, "{v:.17e},");
            }
            let _ = writeln!(s, "{lw:.17e}");
        }
        s
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("# warpdlm particle snapshot v1") {
            return Err(Error::Parse("not a v1 particle snapshot".into()));
        }
        let mut field = |name: &str| -> Result<String> {
            lines
                .next()
                .and_then(|l| l.strip_prefix(&format!("{name},")).map(str::to_owned))
                .ok_or_else(|| Error::Parse(format!("snapshot is missing the '{name}' line")))
        };
        let t: usize = field("t")?.parse().map_err(|e| Error::Parse(format!("snapshot t: {e}")))?;
        let logml: f64 = field("logml")?
            .parse()
            .map_err(|e| Error::Parse(format!("snapshot logml: {e}")))?;
        let dims = field("particles")?;
        let (s, p) = dims
            .split_once(',')
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
            .ok_or_else(|| Error::Parse("snapshot particle dimensions".into()))?;
        let mut particles = Vec::with_capacity(s);
        let mut logweights = Vec::with_capacity(s);
        for (i, line) in lines.enumerate() {
            let vals = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("snapshot row {}: {e}", i + 1)))?;
            if vals.len() != p + 1 {
                return Err(Error::Parse(format!("snapshot row {} has {} values, expected {}", i + 1, vals.len(), p + 1)));
            }
            particles.push(DVector::from_column_slice(&vals[..p]));
            logweights.push(vals[p]);
        }
        if particles.len() != s {
            return Err(Error::Parse(format!("snapshot has {} particles, header says {s}", particles.len())));
        }
        Ok(Self {
            t,
            particles,
            logweights,
            logml,
        })
    }
}

fn weighted_mean(xs: &[DVector<f64>], w: &[f64]) -> DVector<f64> {
    let mut m = DVector::zeros(xs[0].len());
    for (x, wi) in xs.iter().zip(w) {
        m.axpy(*wi, x, 1.0);
    }
    m
}

/// Per-step record.
#[derive(Debug, Clone)]
pub struct StepSummary {
    pub t: usize,
    /// Weighted filtered mean of `theta_t`.
    pub mean: DVector<f64>,
    pub ess: f64,
    /// `ln p^(y_t | y_{1:t-1})`.
    pub log_pred: f64,
    pub resampled: bool,
    pub seconds: f64,
    /// Unnormalized log-weights `ln p(y_t | theta_{t-1}^(s))`, when kept.
    pub raw_logweights: Option<Vec<f64>>,
}

/// Quantities shared by every particle at one step.
struct StepPlan {
    n: usize,
    g: DMatrix<f64>,
    f: DMatrix<f64>,
    /// `Sigma_z = V + F W F'`.
    sigma_z: DMatrix<f64>,
    /// `W F' Sigma_z^-1`.
    gain: DMatrix<f64>,
    resid_factor: DMatrix<f64>,
    rect: Rectangle,
    /// Constrained coordinates of `rect`.
    bounded: Vec<usize>,
    sub_cov: DMatrix<f64>,
    chain: Option<TmvnChain>,
}

impl StepPlan {
    fn new(sys: &DlmSystem, t: usize, rect: Rectangle) -> Result<Self> {
        let n = sys.n();
        let f = sys.f(t).into_owned();
        let g = sys.g(t).into_owned();
        let w = sys.w(t);
        let fw = &f * &*w;
        let sigma_z = linalg::symmetrize(&(&*sys.v(t) + &fw * f.transpose()));
        let l = linalg::cholesky(&sigma_z)?;
        let k = linalg::chol_solve(&l, &fw);
        let resid = linalg::symmetrize(&(&*w - fw.transpose() * &k));
        let bounded: Vec<usize> = (0..n)
            .filter(|&i| {
                let (a, b) = rect.interval(i);
                !(a == f64::NEG_INFINITY && b == f64::INFINITY)
            })
            .collect();
        let sub_cov = DMatrix::from_fn(bounded.len(), bounded.len(), |r, c| sigma_z[(bounded[r], bounded[c])]);
        let chain = if n >= 2 {
            let p0 = MvnParams::new(DVector::zeros(n), sigma_z.clone())?;
            Some(TmvnChain::new(&Rectangle::full(n), &p0)?)
        } else {
            None
        };
        Ok(Self {
            n,
            g,
            f,
            sigma_z,
            gain: k.transpose(),
            resid_factor: linalg::psd_factor(&resid)?,
            rect,
            bounded,
            sub_cov,
            chain,
        })
    }

    /// `ln p(y_t | theta_{t-1})` and the centered rectangle for `V0`.
    fn log_weight<R: Rng + ?Sized>(
        &self,
        mu_z: &DVector<f64>,
        opts: &RectProbOptions,
        rng: &mut R,
    ) -> Result<f64> {
        let a: Vec<f64> = self.bounded.iter().map(|&i| self.rect.lower()[i] - mu_z[i]).collect();
        let b: Vec<f64> = self.bounded.iter().map(|&i| self.rect.upper()[i] - mu_z[i]).collect();
        Ok(log_prob_centered(&a, &b, &self.sub_cov, opts, rng)?.log_prob)
    }

    fn draw_v0<R: Rng + ?Sized>(
        &self,
        chain: &mut Option<TmvnChain>,
        mu_z: &DVector<f64>,
        sweeps: usize,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        if self.n == 1 {
            let s = self.sigma_z[(0, 0)].sqrt();
            let (lo, hi) = self.rect.interval(0);
            let v = if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
                rng.sample::<f64, _>(StandardNormal)
            } else {
                sample_std((lo - mu_z[0]) / s, (hi - mu_z[0]) / s, rng)
            };
            return Ok(DVector::from_element(1, s * v));
        }
        let chain = chain.as_mut().expect("chain exists for n >= 2");
        let shifted = self.rect.shifted(mu_z.as_slice());
        chain.reset(&shifted, &DVector::zeros(self.n))?;
        Ok(chain.run(sweeps.max(1), rng).clone())
    }
}

/// Log-weights `ln p(y_t | theta_{t-1}^(s))` for every particle, computed
/// from the ancestors alone.
pub fn pf_weights<R: Rng + ?Sized>(
    cloud: &ParticleCloud,
    sys: &DlmSystem,
    warp: &Warp,
    y: &[Option<u64>],
    opts: &PfOptions,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let t = cloud.t + 1;
    let plan = StepPlan::new(sys, t, obs_rect(warp, t, y)?)?;
    cloud
        .particles
        .iter()
        .map(|th| {
            let mu_z = &plan.f * (&plan.g * th);
            plan.log_weight(&mu_z, &opts.weight_opts, rng)
        })
        .collect()
}

/// One step of the optimal particle filter.
pub fn pf_step<R: Rng + ?Sized>(
    cloud: &ParticleCloud,
    sys: &DlmSystem,
    warp: &Warp,
    y: &[Option<u64>],
    opts: &PfOptions,
    rng: &mut R,
) -> Result<(ParticleCloud, StepSummary)> {
    let start = Instant::now();
    let t = cloud.t + 1;
    if sys.n() != warp.dim() || y.len() != sys.n() {
        return Err(Error::Dimension(format!(
            "system n = {}, warp {}, observation {}",
            sys.n(),
            warp.dim(),
            y.len()
        )));
    }
    let plan = StepPlan::new(sys, t, obs_rect(warp, t, y)?)?;
    let s = cloud.len();
    let base: u64 = rng.random();
    let nblocks = s.div_ceil(BLOCK);
    let run_block = |b: usize| -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
        let mut brng = ChaCha8Rng::seed_from_u64(base);
        brng.set_stream(b as u64);
        let mut chain = plan.chain.clone();
        let range = b * BLOCK..((b + 1) * BLOCK).min(s);
        let mut lw = Vec::with_capacity(range.len());
        let mut draws = Vec::with_capacity(range.len());
        for i in range {
            let m = &plan.g * &cloud.particles[i];
            let mu_z = &plan.f * &m;
            // The weight depends on the ancestor only and is fixed before
            // the new state is drawn.
            lw.push(plan.log_weight(&mu_z, &opts.weight_opts, &mut brng)?);
            let v0 = plan.draw_v0(&mut chain, &mu_z, opts.tmvn_sweeps, &mut brng)?;
            let e = DVector::from_fn(m.len(), |_, _| brng.sample::<f64, _>(StandardNormal));
            draws.push(m + &plan.resid_factor * e + &plan.gain * v0);
        }
        Ok((lw, draws))
    };
    let results: Vec<Result<(Vec<f64>, Vec<DVector<f64>>)>> = if opts.threads <= 1 || nblocks == 1 {
        (0..nblocks).map(run_block).collect()
    } else {
        let workers = opts.threads.min(nblocks);
        let mut slots: Vec<Option<Result<(Vec<f64>, Vec<DVector<f64>>)>>> = (0..nblocks).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|wkr| {
                    let run_block = &run_block;
                    scope.spawn(move || {
                        (wkr..nblocks)
                            .step_by(workers)
                            .map(|b| (b, run_block(b)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (b, r) in h.join().expect("particle worker panicked") {
                    slots[b] = Some(r);
                }
            }
        });
        slots.into_iter().map(|r| r.expect("every block ran")).collect()
    };
    let mut raw = Vec::with_capacity(s);
    let mut draws = Vec::with_capacity(s);
    for r in results {
        let (lw, d) = r?;
        raw.extend(lw);
        draws.extend(d);
    }
    // Combine with the incoming normalized weights.
    let comb: Vec<f64> = raw.iter().zip(&cloud.logweights).map(|(a, b)| a + b).collect();
    let lse = log_sum_exp(&comb);
    if !lse.is_finite() {
        return Err(Error::WeightCollapse { t });
    }
    let norm: Vec<f64> = comb.iter().map(|v| v - lse).collect();
    let w: Vec<f64> = norm.iter().map(|v| v.exp()).collect();
    let ess = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
    let mean = weighted_mean(&draws, &w);
    let resample = match opts.resampling {
        Resampling::Always => true,
        Resampling::Adaptive { threshold } => ess < threshold * s as f64,
    };
    let (particles, logweights) = if resample {
        let idx = systematic(&w, s, rng);
        let uniform = -(s as f64).ln();
        (idx.into_iter().map(|i| draws[i].clone()).collect(), vec![uniform; s])
    } else {
        (draws, norm)
    };
    let next = ParticleCloud {
        t,
        particles,
        logweights,
        logml: cloud.logml + lse,
    };
    let summary = StepSummary {
        t,
        mean,
        ess,
        log_pred: lse,
        resampled: resample,
        seconds: start.elapsed().as_secs_f64(),
        raw_logweights: opts.keep_weights.then_some(raw),
    };
    Ok((next, summary))
}

/// Result of a filter run over a whole series.
#[derive(Debug, Clone)]
pub struct PfRun {
    pub cloud: ParticleCloud,
    pub steps: Vec<StepSummary>,
}

impl PfRun {
    pub fn logml(&self) -> f64 {
        self.cloud.logml
    }

    pub fn ess_trace(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.ess).collect()
    }
}

/// Filter `y` from the cloud's time onwards: rows `cloud.t + 1 ..= y.len()`.
pub fn pf_run<R: Rng + ?Sized>(
    init: ParticleCloud,
    sys: &DlmSystem,
    warp: &Warp,
    y: &CountSeries,
    opts: &PfOptions,
    rng: &mut R,
) -> Result<PfRun> {
    let mut cloud = init;
    let mut steps = Vec::with_capacity(y.len().saturating_sub(cloud.t));
    while cloud.t < y.len() {
        let (next, s) = pf_step(&cloud, sys, warp, y.row(cloud.t + 1), opts, rng)?;
        cloud = next;
        steps.push(s);
    }
    Ok(PfRun { cloud, steps })
}

/// One-step-ahead forecast pmf of coordinate `coord`, averaging the exact
/// conditional cell probabilities over the particles.
pub fn predictive_pmf(
    cloud: &ParticleCloud,
    sys: &DlmSystem,
    warp: &Warp,
    coord: usize,
    enum_max: u64,
) -> Result<ForecastPmf> {
    let t = cloud.t + 1;
    let f = sys.f(t);
    let g = sys.g(t);
    let fr = f.row(coord);
    let var = (&fr * &*sys.w(t) * fr.transpose())[(0, 0)] + sys.v(t)[(coord, coord)];
    let sd = var.sqrt();
    let kmax = warp.y_max().unwrap_or(enum_max);
    let cells = (0..=kmax).map(|k| warp.interval(coord, k)).collect::<Result<Vec<_>>>()?;
    let w = cloud.weights();
    let mut pmf = vec![0.0; cells.len()];
    for (th, wi) in cloud.particles.iter().zip(&w) {
        let mu = (&fr * (&*g * th))[(0, 0)];
        for (k, &(a, b)) in cells.iter().enumerate() {
            pmf[k] += wi * normal::interval_prob((a - mu) / sd, (b - mu) / sd);
        }
    }
    Ok(ForecastPmf::from_probs(pmf, warp.y_max().is_some()))
}

/// Forecast count paths from the cloud (see [`forecast_from_states`]).
pub fn pf_forecast_sample<R: Rng + ?Sized>(
    cloud: &ParticleCloud,
    sys: &DlmSystem,
    warp: &Warp,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Vec<u64>>>> {
    let draws = cloud.equal_weight_draws(rng);
    forecast_from_states(&draws, cloud.t, sys, warp, horizon, rng)
}

/// Bootstrap standard error of the log marginal likelihood estimate from
/// per-step unnormalized log-weights (every-step resampling).
pub fn bootstrap_logml_se<R: Rng + ?Sized>(steps: &[Vec<f64>], reps: usize, rng: &mut R) -> f64 {
    let mut totals = Vec::with_capacity(reps);
    let mut buf = Vec::new();
    for _ in 0..reps {
        let mut total = 0.0;
        for lw in steps {
            buf.clear();
            buf.extend((0..lw.len()).map(|_| lw[rng.random_range(0..lw.len())]));
            total += log_sum_exp(&buf) - (lw.len() as f64).ln();
        }
        totals.push(total);
    }
    crate::stats::variance(&totals).sqrt()
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Systematic resampling: `count` ancestor indices for normalized weights `w`.
pub fn systematic<R: Rng + ?Sized>(w: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let u0: f64 = rng.random::<f64>() / count as f64;
    let mut out = Vec::with_capacity(count);
    let mut cum = w[0];
    let mut i = 0;
    for k in 0..count {
        let u = u0 + k as f64 / count as f64;
        while u > cum && i + 1 < w.len() {
            i += 1;
            cum += w[i];
        }
        out.push(i);
    }
    out
}
