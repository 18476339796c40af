//! Truncated multivariate normal sampling by coordinate-wise Gibbs sweeps.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::truncnorm::sample_std;
use super::{MvnParams, Rectangle};
use crate::error::{Error, Result};
use crate::linalg;

/// Burn-in sweeps used when a chain is started from its midpoint.
pub const DEFAULT_BURN_IN: usize = 50;

/// A Gibbs chain targeting `N(mean, cov)` restricted to a rectangle.
///
/// The covariance is fixed at construction; the mean and rectangle can be
/// swapped with [`TmvnChain::reset`] so one chain object can serve many
/// targets that share a covariance (one per particle, say).
#[derive(Debug, Clone)]
pub struct TmvnChain {
    prec: DMatrix<f64>,
    cond_sd: Vec<f64>,
    marg_sd: Vec<f64>,
    mean: DVector<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: DVector<f64>,
}

impl TmvnChain {
    /// New chain at the deterministic feasible start (see [`TmvnChain::restart`]).
    pub fn new(rect: &Rectangle, p: &MvnParams) -> Result<Self> {
        if rect.dim() != p.dim() {
            return Err(Error::Dimension(format!(
                "rectangle has dimension {}, distribution {}",
                rect.dim(),
                p.dim()
            )));
        }
        let d = p.dim();
        let prec = linalg::chol_solve(p.chol(), &DMatrix::identity(d, d));
        let prec = linalg::symmetrize(&prec);
        let cond_sd = (0..d).map(|i| 1.0 / prec[(i, i)].sqrt()).collect();
        let marg_sd = (0..d).map(|i| p.cov()[(i, i)].sqrt()).collect();
        let mut chain = Self {
            prec,
            cond_sd,
            marg_sd,
            mean: p.mean().clone(),
            lower: rect.lower().to_vec(),
            upper: rect.upper().to_vec(),
            x: DVector::zeros(d),
        };
        chain.restart()?;
        Ok(chain)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Move to the rectangle midpoint, with infinite ends replaced by the
    /// mean plus or minus six marginal standard deviations.
    pub fn restart(&mut self) -> Result<()> {
        for i in 0..self.dim() {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            let m = self.mean[i];
            let s = self.marg_sd[i];
            let lo_f = if lo.is_finite() { lo } else { (m - 6.0 * s).min(hi - s) };
            let hi_f = if hi.is_finite() { hi } else { (m + 6.0 * s).max(lo + s) };
            let x = 0.5 * (lo_f + hi_f);
            if !x.is_finite() || x < lo || x > hi {
                return Err(Error::Infeasible(format!(
                    "coordinate {i}: no finite start in ({lo}, {hi})"
                )));
            }
            self.x[i] = x;
        }
        Ok(())
    }

    /// Retarget the chain to a new mean and rectangle and restart it.
    pub fn reset(&mut self, rect: &Rectangle, mean: &DVector<f64>) -> Result<()> {
        if rect.dim() != self.dim() || mean.len() != self.dim() {
            return Err(Error::Dimension("chain reset with wrong dimension".into()));
        }
        self.lower.copy_from_slice(rect.lower());
        self.upper.copy_from_slice(rect.upper());
        self.mean.copy_from(mean);
        self.restart()
    }

    /// One systematic-scan sweep over all coordinates.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let d = self.dim();
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                if j != i {
                    s += self.prec[(i, j)] * (self.x[j] - self.mean[j]);
                }
            }
            let cm = self.mean[i] - s / self.prec[(i, i)];
            let sd = self.cond_sd[i];
            let (lo, hi) = (self.lower[i], self.upper[i]);
            let a = (lo - cm) / sd;
            let b = (hi - cm) / sd;
            let v = if a < b { cm + sd * sample_std(a, b, rng) } else { cm };
            self.x[i] = v.clamp(lo, hi);
        }
    }

    /// Run `sweeps` sweeps and return the current state.
    pub fn run<R: Rng + ?Sized>(&mut self, sweeps: usize, rng: &mut R) -> &DVector<f64> {
        for _ in 0..sweeps {
            self.sweep(rng);
        }
        debug_assert!(self.in_bounds());
        &self.x
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn in_bounds(&self) -> bool {
        self.x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }
}

/// One approximate draw: a fresh chain run for `sweeps` sweeps from the
/// deterministic start.
pub fn sample_tmvn<R: Rng + ?Sized>(
    rect: &Rectangle,
    p: &MvnParams,
    sweeps: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if sweeps == 0 {
        return Err(Error::InvalidParameter("sweeps must be at least 1".into()));
    }
    let mut chain = TmvnChain::new(rect, p)?;
    let x = chain.run(sweeps, rng).clone();
    assert!(rect.contains(x.as_slice()), "truncated draw left its rectangle");
    Ok(x)
}
