//! The latent Gaussian dynamic linear model
//!
//! ```text
//! z_t     = F_t theta_t + v_t,      v_t ~ N(0, V_t)
//! theta_t = G_t theta_{t-1} + w_t,  w_t ~ N(0, W_t)
//! theta_0 ~ N(a0, R0)
//! ```
//!
//! with time index `t = 1, 2, ...`.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;

type MatFn = Arc<dyn Fn(usize) -> DMatrix<f64> + Send + Sync>;

/// A system matrix as a function of time.
#[derive(Clone)]
pub enum SysMatrix {
    Constant(DMatrix<f64>),
    Varying(MatFn),
}

impl SysMatrix {
    pub fn varying<F>(f: F) -> Self
    where
        F: Fn(usize) -> DMatrix<f64> + Send + Sync + 'static,
    {
        SysMatrix::Varying(Arc::new(f))
    }

    pub fn at(&self, t: usize) -> Cow<'_, DMatrix<f64>> {
        match self {
            SysMatrix::Constant(m) => Cow::Borrowed(m),
            SysMatrix::Varying(f) => Cow::Owned(f(t)),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, SysMatrix::Constant(_))
    }
}

impl fmt::Debug for SysMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SysMatrix::Constant(m) => write!(f, "Constant({}x{})", m.nrows(), m.ncols()),
            SysMatrix::Varying(_) => write!(f, "Varying(..)"),
        }
    }
}

impl From<DMatrix<f64>> for SysMatrix {
    fn from(m: DMatrix<f64>) -> Self {
        SysMatrix::Constant(m)
    }
}

/// `{F_t, G_t, V_t, W_t}` plus the initial state moments.
#[derive(Debug, Clone)]
pub struct DlmSystem {
    n: usize,
    p: usize,
    horizon: Option<usize>,
    f: SysMatrix,
    g: SysMatrix,
    v: SysMatrix,
    w: SysMatrix,
    a0: DVector<f64>,
    r0: DMatrix<f64>,
}

fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::InvalidParameter(format!("{what} is not symmetric")));
            }
        }
    }
    linalg::psd_factor(m)
        .map(|_| ())
        .map_err(|_| Error::NotPositiveDefinite(format!("{what} is not positive semi-definite")))
}

impl DlmSystem {
    /// Build and validate a system. Constant matrices are checked once;
    /// time-varying ones are checked at `t = 1` and again whenever
    /// [`DlmSystem::validate_through`] is called.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        p: usize,
        f: SysMatrix,
        g: SysMatrix,
        v: SysMatrix,
        w: SysMatrix,
        a0: DVector<f64>,
        r0: DMatrix<f64>,
    ) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::Dimension("observation and state dimensions must be positive".into()));
        }
        if a0.len() != p {
            return Err(Error::Dimension(format!("a0 has length {}, state dimension {p}", a0.len())));
        }
        linalg::check_square(&r0, p, "R0")?;
        check_psd(&r0, "R0")?;
        let sys = Self {
            n,
            p,
            horizon: None,
            f,
            g,
            v,
            w,
            a0,
            r0,
        };
        sys.check_time(1)?;
        Ok(sys)
    }

    /// Restrict the system to times `1..=horizon` (for finite time-varying inputs).
    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        self.horizon = Some(horizon);
        self.validate_through(horizon)?;
        Ok(self)
    }

    pub fn horizon(&self) -> Option<usize> {
        self.horizon
    }

    fn check_time(&self, t: usize) -> Result<()> {
        let f = self.f.at(t);
        if f.nrows() != self.n || f.ncols() != self.p {
            return Err(Error::Dimension(format!(
                "F_{t} is {}x{}, expected {}x{}",
                f.nrows(),
                f.ncols(),
                self.n,
                self.p
            )));
        }
        linalg::check_square(&self.g.at(t), self.p, &format!("G_{t}"))?;
        let v = self.v.at(t);
        linalg::check_square(&v, self.n, &format!("V_{t}"))?;
        check_psd(&v, &format!("V_{t}"))?;
        let w = self.w.at(t);
        linalg::check_square(&w, self.p, &format!("W_{t}"))?;
        check_psd(&w, &format!("W_{t}"))?;
        Ok(())
    }

    /// Check dimensions and semi-definiteness for every `t <= upto`.
    pub fn validate_through(&self, upto: usize) -> Result<()> {
        let all_const = self.f.is_constant()
            && self.g.is_constant()
            && self.v.is_constant()
            && self.w.is_constant();
        if all_const {
            return Ok(());
        }
        (1..=upto).try_for_each(|t| self.check_time(t))
    }

    fn check_in_horizon(&self, t: usize) -> Result<()> {
        if t == 0 {
            return Err(Error::InvalidParameter("time index starts at 1".into()));
        }
        match self.horizon {
            Some(h) if t > h => Err(Error::InvalidParameter(format!(
                "time {t} beyond the system horizon {h}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn f(&self, t: usize) -> Cow<'_, DMatrix<f64>> {
        self.f.at(t)
    }

    pub fn g(&self, t: usize) -> Cow<'_, DMatrix<f64>> {
        self.g.at(t)
    }

    pub fn v(&self, t: usize) -> Cow<'_, DMatrix<f64>> {
        self.v.at(t)
    }

    pub fn w(&self, t: usize) -> Cow<'_, DMatrix<f64>> {
        self.w.at(t)
    }

    pub fn a0(&self) -> &DVector<f64> {
        &self.a0
    }

    pub fn r0(&self) -> &DMatrix<f64> {
        &self.r0
    }

    pub fn f_matrix(&self) -> &SysMatrix {
        &self.f
    }

    pub fn g_matrix(&self) -> &SysMatrix {
        &self.g
    }

    pub fn v_is_constant(&self) -> bool {
        self.v.is_constant()
    }

    pub fn w_is_constant(&self) -> bool {
        self.w.is_constant()
    }

    pub fn is_time_invariant(&self) -> bool {
        self.f.is_constant() && self.g.is_constant() && self.v.is_constant() && self.w.is_constant()
    }

    /// Same system with constant observation and evolution variances.
    pub fn with_variances(&self, v: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        linalg::check_square(&v, self.n, "V")?;
        linalg::check_square(&w, self.p, "W")?;
        check_psd(&v, "V")?;
        check_psd(&w, "W")?;
        let mut out = self.clone();
        out.v = SysMatrix::Constant(v);
        out.w = SysMatrix::Constant(w);
        Ok(out)
    }

    /// Same system with new initial moments.
    pub fn with_initial(&self, a0: DVector<f64>, r0: DMatrix<f64>) -> Result<Self> {
        if a0.len() != self.p {
            return Err(Error::Dimension("a0 length".into()));
        }
        linalg::check_square(&r0, self.p, "R0")?;
        check_psd(&r0, "R0")?;
        let mut out = self.clone();
        out.a0 = a0;
        out.r0 = r0;
        Ok(out)
    }

    /// Stack two systems observing the same series: `F = [F1 F2]`, block
    /// diagonal `G`, `W`, `R0`, and `V = V1 + V2`.
    pub fn superpose(&self, other: &DlmSystem) -> Result<DlmSystem> {
        if self.n != other.n {
            return Err(Error::Dimension("superposed systems must share n".into()));
        }
        let (a, b) = (self.clone(), other.clone());
        let f = SysMatrix::varying({
            let (a, b) = (a.clone(), b.clone());
            move |t| {
                let fa = a.f(t);
                let fb = b.f(t);
                let mut m = DMatrix::zeros(a.n, a.p + b.p);
                m.view_mut((0, 0), (a.n, a.p)).copy_from(&*fa);
                m.view_mut((0, a.p), (a.n, b.p)).copy_from(&*fb);
                m
            }
        });
        let g = SysMatrix::varying({
            let (a, b) = (a.clone(), b.clone());
            move |t| linalg::block_diag(&[a.g(t).into_owned(), b.g(t).into_owned()])
        });
        let w = SysMatrix::varying({
            let (a, b) = (a.clone(), b.clone());
            move |t| linalg::block_diag(&[a.w(t).into_owned(), b.w(t).into_owned()])
        });
        let v = SysMatrix::varying({
            let (a, b) = (a.clone(), b.clone());
            move |t| &*a.v(t) + &*b.v(t)
        });
        let mut a0 = a.a0.as_slice().to_vec();
        a0.extend_from_slice(b.a0.as_slice());
        let r0 = linalg::block_diag(&[a.r0.clone(), b.r0.clone()]);
        let mut out = DlmSystem::new(a.n, a.p + b.p, f, g, v, w, DVector::from_vec(a0), r0)?;
        if a.is_time_invariant() && b.is_time_invariant() {
            out = out.freeze(1);
        }
        out.horizon = match (a.horizon, b.horizon) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        };
        Ok(out)
    }

    /// Replace time-varying matrices by their value at `t` (used when the
    /// inputs are known to be constant).
    fn freeze(mut self, t: usize) -> Self {
        self.f = SysMatrix::Constant(self.f.at(t).into_owned());
        self.g = SysMatrix::Constant(self.g.at(t).into_owned());
        self.v = SysMatrix::Constant(self.v.at(t).into_owned());
        self.w = SysMatrix::Constant(self.w.at(t).into_owned());
        self
    }

    /// Forward simulation of states (`p x T`) and latent data (`n x T`).
    pub fn simulate_latent<R: Rng + ?Sized>(
        &self,
        horizon: usize,
        rng: &mut R,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if let Some(h) = self.horizon {
            if horizon > h {
                return Err(Error::InvalidParameter(format!(
                    "cannot simulate {horizon} steps from a system with horizon {h}"
                )));
            }
        }
        self.validate_through(horizon)?;
        let mut theta = linalg::sample_gaussian(&self.a0, &linalg::psd_factor(&self.r0)?, rng);
        let mut states = DMatrix::zeros(self.p, horizon);
        let mut z = DMatrix::zeros(self.n, horizon);
        let zero_p = DVector::zeros(self.p);
        let zero_n = DVector::zeros(self.n);
        let mut w_fac = None;
        let mut v_fac = None;
        for t in 1..=horizon {
            let wf = match (&self.w, &w_fac) {
                (SysMatrix::Constant(_), Some(f)) => Cow::Borrowed(f),
                _ => Cow::Owned(linalg::psd_factor(&self.w(t))?),
            };
            let vf = match (&self.v, &v_fac) {
                (SysMatrix::Constant(_), Some(f)) => Cow::Borrowed(f),
                _ => Cow::Owned(linalg::psd_factor(&self.v(t))?),
            };
            theta = &*self.g(t) * &theta + linalg::sample_gaussian(&zero_p, &wf, rng);
            let zt = &*self.f(t) * &theta + linalg::sample_gaussian(&zero_n, &vf, rng);
            states.set_column(t - 1, &theta);
            z.set_column(t - 1, &zt);
            if w_fac.is_none() {
                w_fac = Some(wf.into_owned());
            }
            if v_fac.is_none() {
                v_fac = Some(vf.into_owned());
            }
        }
        Ok((states, z))
    }

    /// Stacked prior moments of `theta_{1:upto}` and the block-diagonal
    /// observation matrices.
    pub fn build_joint_prior(&self, upto: usize) -> Result<JointPrior> {
        if upto == 0 {
            return Err(Error::InvalidParameter("joint prior needs upto >= 1".into()));
        }
        self.check_in_horizon(upto)?;
        self.validate_through(upto)?;
        let (n, p) = (self.n, self.p);
        let mut mu = DVector::zeros(p * upto);
        let mut sig = DMatrix::zeros(p * upto, p * upto);
        let mut fcal = DMatrix::zeros(n * upto, p * upto);
        let mut vcal = DMatrix::zeros(n * upto, n * upto);
        let mut a = self.a0.clone();
        let mut r = self.r0.clone();
        for t in 1..=upto {
            let g = self.g(t);
            a = &*g * &a;
            r = linalg::symmetrize(&(&*g * &r * g.transpose() + &*self.w(t)));
            let i = (t - 1) * p;
            mu.rows_mut(i, p).copy_from(&a);
            sig.view_mut((i, i), (p, p)).copy_from(&r);
            // Cross blocks: Sigma[t, q] = G_t Sigma[t-1, q] for q < t.
            for q in 1..t {
                let j = (q - 1) * p;
                let prev = sig.view((i - p, j), (p, p)).clone_owned();
                let blk = &*g * prev;
                sig.view_mut((i, j), (p, p)).copy_from(&blk);
                sig.view_mut((j, i), (p, p)).copy_from(&blk.transpose());
            }
            fcal.view_mut(((t - 1) * n, i), (n, p)).copy_from(&*self.f(t));
            vcal.view_mut(((t - 1) * n, (t - 1) * n), (n, n)).copy_from(&*self.v(t));
        }
        Ok(JointPrior {
            n,
            p,
            upto,
            mu_theta: mu,
            sigma_theta: sig,
            fcal,
            vcal,
        })
    }
}

/// Prior moments of the stacked states `theta_{1:T}` together with the
/// block-diagonal `Fcal = diag(F_1..F_T)` and `Vcal = diag(V_1..V_T)`.
#[derive(Debug, Clone)]
pub struct JointPrior {
    pub n: usize,
    pub p: usize,
    pub upto: usize,
    pub mu_theta: DVector<f64>,
    pub sigma_theta: DMatrix<f64>,
    pub fcal: DMatrix<f64>,
    pub vcal: DMatrix<f64>,
}

impl JointPrior {
    /// Prior mean of `z_{1:T}`: `Fcal mu_theta`.
    pub fn mu_z(&self) -> DVector<f64> {
        &self.fcal * &self.mu_theta
    }

    /// Prior covariance of `z_{1:T}`: `Vcal + Fcal Sigma_theta Fcal'`.
    pub fn sigma_z(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.vcal + &self.fcal * &self.sigma_theta * self.fcal.transpose()))
    }

    /// `Cov(z_{1:T}, theta_{1:T}) = Fcal Sigma_theta`.
    pub fn sigma_ztheta(&self) -> DMatrix<f64> {
        &self.fcal * &self.sigma_theta
    }

    /// The `[t, q]` state block (1-based times).
    pub fn state_block(&self, t: usize, q: usize) -> DMatrix<f64> {
        self.sigma_theta
            .view(((t - 1) * self.p, (q - 1) * self.p), (self.p, self.p))
            .clone_owned()
    }
}

/// Local level model: `F = G = 1`, `V = v`, `W = w`.
pub fn make_local_level(v: f64, w: f64, a0: f64, r0: f64) -> Result<DlmSystem> {
    if !(v >= 0.0) || !(w >= 0.0) || !(r0 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "local level variances must be non-negative (v={v}, w={w}, r0={r0})"
        )));
    }
    let one = DMatrix::from_element(1, 1, 1.0);
    DlmSystem::new(
        1,
        1,
        one.clone().into(),
        one.into(),
        DMatrix::from_element(1, 1, v).into(),
        DMatrix::from_element(1, 1, w).into(),
        DVector::from_element(1, a0),
        DMatrix::from_element(1, 1, r0),
    )
}

/// SUTSE linear growth model for `n` series with state
/// `(mu_1..mu_n, beta_1..beta_n)`: `G = [[I, I], [0, I]]`, `F = [I 0]`,
/// `W = diag(W_mu, W_beta)`.
pub fn make_linear_growth_sutse(
    n: usize,
    v: DMatrix<f64>,
    w_mu: DMatrix<f64>,
    w_beta: DMatrix<f64>,
    a0: DVector<f64>,
    r0: DMatrix<f64>,
) -> Result<DlmSystem> {
    linalg::check_square(&w_mu, n, "W_mu")?;
    linalg::check_square(&w_beta, n, "W_beta")?;
    let p = 2 * n;
    let mut g = DMatrix::identity(p, p);
    for i in 0..n {
        g[(i, n + i)] = 1.0;
    }
    let mut f = DMatrix::zeros(n, p);
    for i in 0..n {
        f[(i, i)] = 1.0;
    }
    let w = linalg::block_diag(&[w_mu, w_beta]);
    DlmSystem::new(n, p, f.into(), g.into(), v.into(), w.into(), a0, r0)
}

/// Fourier-form seasonal component for `n` series: for each harmonic
/// `j = 1..=harmonics` the state holds `(gamma_j (n), gamma*_j (n))` rotated by
/// `lambda_j = 2 pi j / period`. Evolution noise on both halves is
/// `N(0, w_gamma)`; `V` is zero so the block is meant to be superposed onto a
/// trend model.
pub fn make_fourier_seasonal(
    n: usize,
    period: f64,
    harmonics: usize,
    w_gamma: Option<DMatrix<f64>>,
    r0_scale: f64,
) -> Result<DlmSystem> {
    if !(period >= 2.0) {
        return Err(Error::InvalidParameter(format!("period must be at least 2, got {period}")));
    }
    let max_h = (period / 2.0).floor() as usize;
    if harmonics == 0 || harmonics > max_h {
        return Err(Error::InvalidParameter(format!(
            "harmonics must be in 1..={max_h} for period {period}, got {harmonics}"
        )));
    }
    let w_gamma = w_gamma.unwrap_or_else(|| DMatrix::zeros(n, n));
    linalg::check_square(&w_gamma, n, "W_gamma")?;
    let p = 2 * n * harmonics;
    let mut g = DMatrix::zeros(p, p);
    let mut f = DMatrix::zeros(n, p);
    let mut w_blocks = Vec::with_capacity(2 * harmonics);
    for j in 0..harmonics {
        let lambda = 2.0 * PI * (j + 1) as f64 / period;
        let (s, c) = lambda.sin_cos();
        let o = 2 * n * j;
        for i in 0..n {
            g[(o + i, o + i)] = c;
            g[(o + i, o + n + i)] = s;
            g[(o + n + i, o + i)] = -s;
            g[(o + n + i, o + n + i)] = c;
            f[(i, o + i)] = 1.0;
        }
        w_blocks.push(w_gamma.clone());
        w_blocks.push(w_gamma.clone());
    }
    let w = linalg::block_diag(&w_blocks);
    DlmSystem::new(
        n,
        p,
        f.into(),
        g.into(),
        DMatrix::zeros(n, n).into(),
        w.into(),
        DVector::zeros(p),
        DMatrix::identity(p, p) * r0_scale,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn local_level_joint_prior_by_hand() {
        let (v, w, r) = (0.5, 0.3, 2.0);
        let sys = make_local_level(v, w, 0.0, r).unwrap();
        let jp1 = sys.build_joint_prior(1).unwrap();
        assert_eq!(jp1.mu_theta[0], 0.0);
        assert_relative_eq!(jp1.sigma_theta[(0, 0)], r + w);
        let jp2 = sys.build_joint_prior(2).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[r + w, r + w, r + w, r + 2.0 * w]);
        assert_relative_eq!(jp2.sigma_theta, expect, epsilon = 1e-15);
        assert_relative_eq!(jp2.sigma_z()[(1, 1)], r + 2.0 * w + v, epsilon = 1e-15);
    }

    #[test]
    fn sutse_layout() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let sys = make_linear_growth_sutse(
            2,
            i2.clone(),
            i2.clone() * 0.1,
            i2.clone() * 0.01,
            DVector::zeros(4),
            DMatrix::identity(4, 4),
        )
        .unwrap();
        let g = DMatrix::from_row_slice(
            4,
            4,
            &[1., 0., 1., 0., 0., 1., 0., 1., 0., 0., 1., 0., 0., 0., 0., 1.],
        );
        assert_eq!(*sys.g(1), g);
        let f = DMatrix::from_row_slice(2, 4, &[1., 0., 0., 0., 0., 1., 0., 0.]);
        assert_eq!(*sys.f(1), f);
        assert_eq!(sys.w(1)[(2, 2)], 0.01);
        assert_eq!(sys.w(1)[(0, 2)], 0.0);
    }

    #[test]
    fn seasonal_rotation_and_limits() {
        let s = make_fourier_seasonal(1, 365.0, 5, None, 1.0).unwrap();
        let g = s.g(1);
        for j in 0..5 {
            let lambda = 2.0 * PI * (j + 1) as f64 / 365.0;
            assert_relative_eq!(g[(2 * j, 2 * j)], lambda.cos());
            assert_relative_eq!(g[(2 * j, 2 * j + 1)], lambda.sin());
            assert_relative_eq!(g[(2 * j + 1, 2 * j)], -lambda.sin());
        }
        assert!(s.w(1).iter().all(|v| *v == 0.0));
        assert!(make_fourier_seasonal(1, 12.0, 7, None, 1.0).is_err());
        assert!(make_fourier_seasonal(1, 12.0, 6, None, 1.0).is_ok());
    }

    #[test]
    fn deterministic_system_simulates_constant() {
        let sys = DlmSystem::new(
            2,
            2,
            DMatrix::identity(2, 2).into(),
            DMatrix::identity(2, 2).into(),
            DMatrix::zeros(2, 2).into(),
            DMatrix::zeros(2, 2).into(),
            DVector::from_vec(vec![1.5, -2.0]),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (states, z) = sys.simulate_latent(7, &mut rng).unwrap();
        assert_eq!(states.shape(), (2, 7));
        assert_eq!(z.shape(), (2, 7));
        for t in 0..7 {
            assert_eq!(z[(0, t)], 1.5);
            assert_eq!(z[(1, t)], -2.0);
        }
    }

    #[test]
    fn superposed_trend_and_season() {
        let trend = make_local_level(1.0, 0.1, 0.0, 1.0).unwrap();
        let season = make_fourier_seasonal(1, 7.0, 2, None, 1.0).unwrap();
        let sys = trend.superpose(&season).unwrap();
        assert_eq!(sys.p(), 5);
        assert_eq!(sys.f(3).as_slice(), &[1.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(sys.v(1)[(0, 0)], 1.0);
        assert!(sys.is_time_invariant());
    }

    #[test]
    fn time_varying_dimension_error() {
        let sys = DlmSystem::new(
            1,
            1,
            SysMatrix::varying(|t| DMatrix::from_element(1, if t < 3 { 1 } else { 2 }, 1.0)),
            DMatrix::identity(1, 1).into(),
            DMatrix::identity(1, 1).into(),
            DMatrix::identity(1, 1).into(),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        assert!(sys.build_joint_prior(2).is_ok());
        assert!(matches!(sys.build_joint_prior(3), Err(Error::Dimension(_))));
    }
}
