//! Exact filtering and smoothing as selection normal distributions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dlm::DlmSystem;
use crate::error::{Error, Result};
use crate::linalg;
use crate::mvn::{RectProb, RectProbOptions, Rectangle};
use crate::selnorm::SelectionNormal;
use crate::series::CountSeries;
use crate::warp::Warp;

/// Constraint rectangle for the observation at time `t`, with the time
/// index filled into support errors.
pub fn obs_rect(warp: &Warp, t: usize, y: &[Option<u64>]) -> Result<Rectangle> {
    warp.count_to_rect(y).map_err(|e| match e {
        Error::OutOfSupport { coord, value, reason, .. } => Error::OutOfSupport {
            t,
            coord,
            value,
            reason,
        },
        other => other,
    })
}

/// Stacked constraint region `C_{1:upto}`.
pub fn constraint_region(warp: &Warp, y: &CountSeries, upto: usize) -> Result<Rectangle> {
    if upto > y.len() {
        return Err(Error::InvalidParameter(format!(
            "asked for {upto} time points, series has {}",
            y.len()
        )));
    }
    let mut c = Rectangle::empty();
    for t in 1..=upto {
        c = c.product(&obs_rect(warp, t, y.row(t))?);
    }
    Ok(c)
}

/// Filtering distribution of `theta_t` given `y_{1:t}`; `t = 0` is the
/// Gaussian prior of `theta_0`.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub t: usize,
    pub sn: SelectionNormal,
}

impl FilterState {
    /// `theta_0 ~ N(a_0, R_0)`.
    pub fn prior(sys: &DlmSystem) -> Result<Self> {
        Ok(Self {
            t: 0,
            sn: SelectionNormal::gaussian(sys.a0().clone(), sys.r0().clone())?,
        })
    }

    /// State predictive `theta_{t+1} | y_{1:t}`: the state block is pushed
    /// through the evolution equation, the `z` blocks are unchanged.
    pub fn predict(&self, sys: &DlmSystem) -> Result<SelectionNormal> {
        let t = self.t + 1;
        let g = sys.g(t);
        let sn = &self.sn;
        SelectionNormal::new(
            sn.mu_z().clone(),
            &*g * sn.mu_theta(),
            sn.sigma_z().clone(),
            &*g * sn.sigma_theta() * g.transpose() + &*sys.w(t),
            sn.sigma_ztheta() * g.transpose(),
            sn.constraint().clone(),
        )
    }

    /// Predict, then append the `n` coordinates of `z_{t+1}` constrained
    /// to `rect`.
    pub fn step_rect(&self, sys: &DlmSystem, rect: &Rectangle) -> Result<FilterState> {
        let pred = self.predict(sys)?;
        let t = self.t + 1;
        Ok(FilterState {
            t,
            sn: augment(&pred, &sys.f(t), &sys.v(t), rect)?,
        })
    }

    /// Filtering update with observation `y` at time `t + 1`.
    pub fn step(&self, sys: &DlmSystem, warp: &Warp, y: &[Option<u64>]) -> Result<FilterState> {
        let rect = obs_rect(warp, self.t + 1, y)?;
        self.step_rect(sys, &rect)
    }

    /// `ln p(y_{1:t})`.
    pub fn log_likelihood<R: Rng + ?Sized>(&self, opts: &RectProbOptions, rng: &mut R) -> Result<RectProb> {
        self.sn.log_mass(opts, rng)
    }
}

/// Joint distribution of `(z_{old}, z_new)` and `theta` where
/// `z_new = F theta + v`, `v ~ N(0, V)`, conditioned on `z_new in rect`.
pub(crate) fn augment(
    pred: &SelectionNormal,
    f: &DMatrix<f64>,
    v: &DMatrix<f64>,
    rect: &Rectangle,
) -> Result<SelectionNormal> {
    let (d1, p) = (pred.d1(), pred.d2());
    let n = f.nrows();
    if rect.dim() != n || f.ncols() != p {
        return Err(Error::Dimension(format!(
            "observation update: F is {}x{}, rectangle has dimension {}, state has {p}",
            n,
            f.ncols(),
            rect.dim()
        )));
    }
    let st = pred.sigma_theta();
    let szt = pred.sigma_ztheta();
    let mut mu_z = DVector::zeros(d1 + n);
    mu_z.rows_mut(0, d1).copy_from(pred.mu_z());
    mu_z.rows_mut(d1, n).copy_from(&(f * pred.mu_theta()));
    let mut sig_z = DMatrix::zeros(d1 + n, d1 + n);
    sig_z.view_mut((0, 0), (d1, d1)).copy_from(pred.sigma_z());
    let cross = szt * f.transpose();
    sig_z.view_mut((0, d1), (d1, n)).copy_from(&cross);
    sig_z.view_mut((d1, 0), (n, d1)).copy_from(&cross.transpose());
    sig_z
        .view_mut((d1, d1), (n, n))
        .copy_from(&linalg::symmetrize(&(f * st * f.transpose() + v)));
    let mut sig_zt = DMatrix::zeros(d1 + n, p);
    sig_zt.view_mut((0, 0), (d1, p)).copy_from(szt);
    sig_zt.view_mut((d1, 0), (n, p)).copy_from(&(f * st));
    SelectionNormal::new(
        mu_z,
        pred.mu_theta().clone(),
        sig_z,
        st.clone(),
        sig_zt,
        pred.constraint().product(rect),
    )
}

/// Filtering distributions for `t = 1..=upto`.
pub fn filter(sys: &DlmSystem, warp: &Warp, y: &CountSeries, upto: usize) -> Result<Vec<FilterState>> {
    check_dims(sys, warp, y)?;
    let mut out = Vec::with_capacity(upto);
    let mut fs = FilterState::prior(sys)?;
    for t in 1..=upto {
        fs = fs.step(sys, warp, y.row(t))?;
        out.push(fs.clone());
    }
    Ok(out)
}

/// Filtering distribution at `t`, built directly from the joint prior
/// instead of the recursion.
pub fn filter_compact(sys: &DlmSystem, warp: &Warp, y: &CountSeries, t: usize) -> Result<FilterState> {
    let joint = joint_smoothing(sys, warp, y, t)?;
    let p = sys.p();
    Ok(FilterState {
        t,
        sn: joint.marginal((t - 1) * p..t * p)?,
    })
}

/// Joint smoothing distribution of `theta_{1:upto}` given `y_{1:upto}`.
pub fn joint_smoothing(sys: &DlmSystem, warp: &Warp, y: &CountSeries, upto: usize) -> Result<SelectionNormal> {
    check_dims(sys, warp, y)?;
    let jp = sys.build_joint_prior(upto)?;
    let c = constraint_region(warp, y, upto)?;
    SelectionNormal::new(jp.mu_z(), jp.mu_theta.clone(), jp.sigma_z(), jp.sigma_theta.clone(), jp.sigma_ztheta(), c)
}

/// Joint smoothing distribution with the log marginal likelihood.
#[derive(Debug, Clone)]
pub struct SmoothResult {
    pub sn: SelectionNormal,
    pub logml: RectProb,
    pub p: usize,
}

impl SmoothResult {
    pub fn horizon(&self) -> usize {
        self.sn.d2() / self.p
    }

    /// Marginal smoothing distribution of `theta_t` (1-based).
    pub fn marginal(&self, t: usize) -> Result<SelectionNormal> {
        self.sn.marginal((t - 1) * self.p..t * self.p)
    }
}

/// Smoothing over the whole series. Errors if the constraint region has
/// numerically zero mass.
pub fn smooth<R: Rng + ?Sized>(
    sys: &DlmSystem,
    warp: &Warp,
    y: &CountSeries,
    opts: &RectProbOptions,
    rng: &mut R,
) -> Result<SmoothResult> {
    let sn = joint_smoothing(sys, warp, y, y.len())?;
    let logml = sn.log_mass(opts, rng)?;
    if !logml.log_prob.is_finite() {
        return Err(Error::ZeroMass {
            log_mass: logml.log_prob,
            context: format!(
                "marginal likelihood of {} observations underflowed; use the particle filter for long histories",
                y.len()
            ),
        });
    }
    Ok(SmoothResult { sn, logml, p: sys.p() })
}

/// `ln p(y_{1:T})` alone.
pub fn log_marginal_likelihood<R: Rng + ?Sized>(
    sys: &DlmSystem,
    warp: &Warp,
    y: &CountSeries,
    opts: &RectProbOptions,
    rng: &mut R,
) -> Result<RectProb> {
    Ok(smooth(sys, warp, y, opts, rng)?.logml)
}

pub(crate) fn check_dims(sys: &DlmSystem, warp: &Warp, y: &CountSeries) -> Result<()> {
    if sys.n() != warp.dim() || sys.n() != y.n() {
        return Err(Error::Dimension(format!(
            "system has n = {}, warp has {} coordinates, series has {}",
            sys.n(),
            warp.dim(),
            y.n()
        )));
    }
    Ok(())
}
