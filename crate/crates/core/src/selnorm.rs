//! The selection normal distribution SLCT-N: a Gaussian `theta` conditioned
//! on a jointly Gaussian `z` lying in a rectangle `C`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mvn::{
    self, rect_log_prob, truncated_mean_vector, MvnParams, RectProb, RectProbOptions, Rectangle,
    TmvnChain, DEFAULT_BURN_IN,
};
use crate::stats;

/// `theta | z in C` where `(z, theta)` is jointly Gaussian with means
/// `(mu_z, mu_theta)` and covariance `[[Sigma_z, Sigma_ztheta], [., Sigma_theta]]`.
///
/// `d1 = 0` (empty `C`) is the plain Gaussian `N(mu_theta, Sigma_theta)`.
#[derive(Debug, Clone)]
pub struct SelectionNormal {
    mu_z: DVector<f64>,
    mu_theta: DVector<f64>,
    sigma_z: DMatrix<f64>,
    sigma_theta: DMatrix<f64>,
    sigma_ztheta: DMatrix<f64>,
    c: Rectangle,
}

impl SelectionNormal {
    pub fn new(
        mu_z: DVector<f64>,
        mu_theta: DVector<f64>,
        sigma_z: DMatrix<f64>,
        sigma_theta: DMatrix<f64>,
        sigma_ztheta: DMatrix<f64>,
        c: Rectangle,
    ) -> Result<Self> {
        let d1 = mu_z.len();
        let d2 = mu_theta.len();
        linalg::check_square(&sigma_z, d1, "Sigma_z")?;
        linalg::check_square(&sigma_theta, d2, "Sigma_theta")?;
        if sigma_ztheta.shape() != (d1, d2) {
            return Err(Error::Dimension(format!(
                "Sigma_ztheta must be {d1}x{d2}, got {}x{}",
                sigma_ztheta.nrows(),
                sigma_ztheta.ncols()
            )));
        }
        if c.dim() != d1 {
            return Err(Error::Dimension(format!(
                "constraint rectangle has dimension {}, mu_z has {d1}",
                c.dim()
            )));
        }
        let sn = Self {
            mu_z,
            mu_theta,
            sigma_z: linalg::symmetrize(&sigma_z),
            sigma_theta: linalg::symmetrize(&sigma_theta),
            sigma_ztheta,
            c,
        };
        linalg::psd_factor(&sn.joint_cov())
            .map_err(|e| Error::NotPositiveDefinite(format!("joint (z, theta) covariance: {e}")))?;
        Ok(sn)
    }

    /// The Gaussian `N(mu, sigma)` viewed as a selection normal with `d1 = 0`.
    pub fn gaussian(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        Self::new(
            DVector::zeros(0),
            mu,
            DMatrix::zeros(0, 0),
            sigma,
            DMatrix::zeros(0, d),
            Rectangle::empty(),
        )
    }

    pub fn d1(&self) -> usize {
        self.mu_z.len()
    }

    pub fn d2(&self) -> usize {
        self.mu_theta.len()
    }

    pub fn mu_z(&self) -> &DVector<f64> {
        &self.mu_z
    }

    pub fn mu_theta(&self) -> &DVector<f64> {
        &self.mu_theta
    }

    pub fn sigma_z(&self) -> &DMatrix<f64> {
        &self.sigma_z
    }

    pub fn sigma_theta(&self) -> &DMatrix<f64> {
        &self.sigma_theta
    }

    pub fn sigma_ztheta(&self) -> &DMatrix<f64> {
        &self.sigma_ztheta
    }

    pub fn constraint(&self) -> &Rectangle {
        &self.c
    }

    pub fn joint_cov(&self) -> DMatrix<f64> {
        let (d1, d2) = (self.d1(), self.d2());
        let mut j = DMatrix::zeros(d1 + d2, d1 + d2);
        j.view_mut((0, 0), (d1, d1)).copy_from(&self.sigma_z);
        j.view_mut((d1, d1), (d2, d2)).copy_from(&self.sigma_theta);
        j.view_mut((0, d1), (d1, d2)).copy_from(&self.sigma_ztheta);
        j.view_mut((d1, 0), (d2, d1)).copy_from(&self.sigma_ztheta.transpose());
        j
    }

    /// `ln P(z in C)` for `z ~ N(mu_z, Sigma_z)`.
    pub fn log_mass<R: Rng + ?Sized>(&self, opts: &RectProbOptions, rng: &mut R) -> Result<RectProb> {
        if self.d1() == 0 {
            return Ok(RectProb { log_prob: 0.0, rel_err: 0.0 });
        }
        let p = MvnParams::new(self.mu_z.clone(), self.sigma_z.clone())?;
        rect_log_prob(&self.c, &p, opts, rng)
    }

    /// Log-density at `theta`. Each rectangle probability uses `opts`.
    pub fn logpdf<R: Rng + ?Sized>(
        &self,
        theta: &DVector<f64>,
        opts: &RectProbOptions,
        rng: &mut R,
    ) -> Result<f64> {
        if theta.len() != self.d2() {
            return Err(Error::Dimension(format!(
                "theta has length {}, distribution has d2 = {}",
                theta.len(),
                self.d2()
            )));
        }
        let pt = MvnParams::new(self.mu_theta.clone(), self.sigma_theta.clone())?;
        let base = mvn::mvn_logpdf(theta, &pt)?;
        if self.d1() == 0 {
            return Ok(base);
        }
        let denom = self.log_mass(opts, rng)?.log_prob;
        if !denom.is_finite() {
            return Err(Error::ZeroMass {
                log_mass: denom,
                context: "selection normal normalizing constant".into(),
            });
        }
        // z | theta ~ N(mu_z + B (theta - mu_theta), Sigma_z - B Sigma_ztheta')
        // with B = Sigma_ztheta Sigma_theta^-1.
        let bt = linalg::chol_solve(pt.chol(), &self.sigma_ztheta.transpose());
        let cond_mean = &self.mu_z + bt.transpose() * (theta - &self.mu_theta);
        let cond_cov = linalg::symmetrize(&(&self.sigma_z - self.sigma_ztheta.clone() * &bt));
        let num = match MvnParams::new(cond_mean.clone(), cond_cov.clone()) {
            Ok(p) => rect_log_prob(&self.c, &p, opts, rng)?.log_prob,
            // z is (nearly) a deterministic function of theta.
            Err(Error::NotPositiveDefinite(_)) => {
                if self.c.contains(cond_mean.as_slice()) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Err(e) => return Err(e),
        };
        Ok(base + num - denom)
    }

    /// Closure under `theta -> A theta + a`, `a ~ N(mu_a, Sigma_a)` independent.
    pub fn affine(
        &self,
        a: &DMatrix<f64>,
        mu_a: &DVector<f64>,
        sigma_a: &DMatrix<f64>,
    ) -> Result<SelectionNormal> {
        let q = a.nrows();
        if a.ncols() != self.d2() || mu_a.len() != q {
            return Err(Error::Dimension(format!(
                "affine map is {}x{} with offset length {}, distribution has d2 = {}",
                q,
                a.ncols(),
                mu_a.len(),
                self.d2()
            )));
        }
        linalg::check_square(sigma_a, q, "Sigma_a")?;
        Ok(Self {
            mu_z: self.mu_z.clone(),
            mu_theta: a * &self.mu_theta + mu_a,
            sigma_z: self.sigma_z.clone(),
            sigma_theta: linalg::symmetrize(&(a * &self.sigma_theta * a.transpose() + sigma_a)),
            sigma_ztheta: &self.sigma_ztheta * a.transpose(),
            c: self.c.clone(),
        })
    }

    /// Marginal of the `theta` coordinates in `block`.
    pub fn marginal(&self, block: Range<usize>) -> Result<SelectionNormal> {
        if block.is_empty() || block.end > self.d2() {
            return Err(Error::InvalidParameter(format!(
                "marginal block {block:?} is empty or outside 0..{}",
                self.d2()
            )));
        }
        let k = block.len();
        let s = block.start;
        Ok(Self {
            mu_z: self.mu_z.clone(),
            mu_theta: self.mu_theta.rows(s, k).into_owned(),
            sigma_z: self.sigma_z.clone(),
            sigma_theta: self.sigma_theta.view((s, s), (k, k)).into_owned(),
            sigma_ztheta: self.sigma_ztheta.columns(s, k).into_owned(),
            c: self.c.clone(),
        })
    }

    /// Exact mean `mu_theta + Sigma_ztheta' Sigma_z^-1 (E[z | C] - mu_z)`,
    /// with the truncated mean from rectangle probabilities.
    pub fn mean<R: Rng + ?Sized>(&self, opts: &RectProbOptions, rng: &mut R) -> Result<DVector<f64>> {
        if self.d1() == 0 {
            return Ok(self.mu_theta.clone());
        }
        let p = MvnParams::new(self.mu_z.clone(), self.sigma_z.clone())?;
        let ez = truncated_mean_vector(&self.c, &p, opts, rng)?;
        let k = linalg::chol_solve(p.chol(), &self.sigma_ztheta);
        Ok(&self.mu_theta + k.transpose() * (ez - &self.mu_z))
    }

    /// Sampler that reuses one truncated-normal chain across draws.
    pub fn sampler(&self) -> Result<SlctnSampler> {
        SlctnSampler::new(self)
    }

    /// A single draw from a fresh chain with the default burn-in.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        self.sampler()?.draw(rng)
    }

    /// `ndraws` draws from one chain.
    pub fn sample_n<R: Rng + ?Sized>(&self, ndraws: usize, rng: &mut R) -> Result<Vec<DVector<f64>>> {
        let mut s = self.sampler()?;
        (0..ndraws).map(|_| s.draw(rng)).collect()
    }

    /// Monte Carlo mean, covariance and standard errors of the mean.
    pub fn moments_mc<R: Rng + ?Sized>(&self, ndraws: usize, rng: &mut R) -> Result<McMoments> {
        let draws = self.sample_n(ndraws, rng)?;
        Ok(McMoments::from_draws(&draws))
    }
}

/// Monte Carlo summaries. Standard errors use batch means since the
/// draws come from a Markov chain; with a single draw they are NaN and
/// `reliable` is false.
#[derive(Debug, Clone)]
pub struct McMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub mc_se: DVector<f64>,
    pub reliable: bool,
}

impl McMoments {
    pub fn from_draws(draws: &[DVector<f64>]) -> Self {
        let n = draws.len();
        let d = draws.first().map_or(0, |v| v.len());
        let mut mean = DVector::zeros(d);
        for x in draws {
            mean += x;
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for x in draws {
            let e = x - &mean;
            cov += &e * e.transpose();
        }
        if n > 1 {
            cov /= (n - 1) as f64;
        } else {
            cov.fill(f64::NAN);
        }
        let mc_se = DVector::from_fn(d, |i, _| {
            let col: Vec<f64> = draws.iter().map(|x| x[i]).collect();
            stats::batch_means_se(&col)
        });
        Self {
            mean,
            cov,
            mc_se,
            reliable: n >= 2,
        }
    }
}

/// Direct sampler: `theta = mu_theta + V1 + Sigma_ztheta' Sigma_z^-1 V0`
/// with `V0 ~ N(0, Sigma_z)` truncated to `C - mu_z` and
/// `V1 ~ N(0, Sigma_theta - Sigma_ztheta' Sigma_z^-1 Sigma_ztheta)`.
#[derive(Debug, Clone)]
pub struct SlctnSampler {
    mu_theta: DVector<f64>,
    /// `Sigma_ztheta' Sigma_z^-1` (d2 x d1).
    gain: DMatrix<f64>,
    resid_factor: DMatrix<f64>,
    chain: Option<TmvnChain>,
    burned: bool,
    burn_in: usize,
    thin: usize,
}

impl SlctnSampler {
    fn new(sn: &SelectionNormal) -> Result<Self> {
        let d1 = sn.d1();
        let (gain, resid, chain) = if d1 == 0 {
            (DMatrix::zeros(sn.d2(), 0), sn.sigma_theta.clone(), None)
        } else {
            let p0 = MvnParams::new(DVector::zeros(d1), sn.sigma_z.clone())?;
            let k = linalg::chol_solve(p0.chol(), &sn.sigma_ztheta);
            let resid = linalg::symmetrize(&(&sn.sigma_theta - sn.sigma_ztheta.transpose() * &k));
            let c0 = sn.c.shifted(sn.mu_z.as_slice());
            (k.transpose(), resid, Some(TmvnChain::new(&c0, &p0)?))
        };
        Ok(Self {
            mu_theta: sn.mu_theta.clone(),
            gain,
            resid_factor: linalg::psd_factor(&resid)?,
            chain,
            burned: false,
            burn_in: DEFAULT_BURN_IN,
            thin: 1,
        })
    }

    /// Burn-in sweeps before the first draw.
    pub fn with_burn_in(mut self, sweeps: usize) -> Self {
        self.burn_in = sweeps;
        self
    }

    /// Sweeps between successive draws (at least 1).
    pub fn with_thin(mut self, sweeps: usize) -> Self {
        self.thin = sweeps.max(1);
        self
    }

    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<DVector<f64>> {
        let v1 = linalg::sample_gaussian(&DVector::zeros(self.mu_theta.len()), &self.resid_factor, rng);
        let mut theta = &self.mu_theta + v1;
        if let Some(chain) = self.chain.as_mut() {
            let sweeps = if self.burned { self.thin } else { self.burn_in.max(1) };
            self.burned = true;
            chain.run(sweeps, rng);
            assert!(chain.in_bounds(), "truncated normal draw left the constraint region");
            theta += &self.gain * chain.state();
        }
        Ok(theta)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::mvn::normal;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Log moment generating function at `s`:
    /// `mu_theta's + s'Sigma_theta s / 2 + ln P(C; mu_z + Sigma_ztheta s, Sigma_z) - ln P(C; mu_z, Sigma_z)`.
    pub(crate) fn log_mgf(sn: &SelectionNormal, s: &DVector<f64>) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let opts = RectProbOptions::absolute(1e-9);
        let lin = sn.mu_theta.dot(s) + 0.5 * (s.transpose() * &sn.sigma_theta * s)[(0, 0)];
        let shifted = MvnParams::new(&sn.mu_z + &sn.sigma_ztheta * s, sn.sigma_z.clone()).unwrap();
        let num = rect_log_prob(&sn.c, &shifted, &opts, &mut rng).unwrap().log_prob;
        lin + num - sn.log_mass(&opts, &mut rng).unwrap().log_prob
    }

    fn skew_1d(rho: f64, lower: f64) -> SelectionNormal {
        SelectionNormal::new(
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, rho),
            Rectangle::new(vec![lower], vec![f64::INFINITY]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn independence_and_no_selection_reduce_to_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let opts = RectProbOptions::default();
        let mu = DVector::from_vec(vec![0.5, -1.0]);
        let st = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let g = MvnParams::new(mu.clone(), st.clone()).unwrap();
        let x = DVector::from_vec(vec![0.1, 0.2]);
        let indep = SelectionNormal::new(
            DVector::from_element(1, 0.0),
            mu.clone(),
            DMatrix::from_element(1, 1, 1.0),
            st.clone(),
            DMatrix::zeros(1, 2),
            Rectangle::new(vec![0.3], vec![1.0]).unwrap(),
        )
        .unwrap();
        let target = mvn::mvn_logpdf(&x, &g).unwrap();
        assert_relative_eq!(indep.logpdf(&x, &opts, &mut rng).unwrap(), target, epsilon = 1e-12);
        let free = SelectionNormal::new(
            DVector::zeros(2),
            mu.clone(),
            DMatrix::identity(2, 2),
            st.clone(),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.2]),
            Rectangle::full(2),
        )
        .unwrap();
        assert_relative_eq!(free.logpdf(&x, &opts, &mut rng).unwrap(), target, epsilon = 1e-12);
    }

    #[test]
    fn logpdf_matches_conditional_density_oracle() {
        // theta | z > 0 for standard margins with correlation rho:
        // density phi(x) P(z > 0 | theta = x) / P(z > 0).
        let rho: f64 = 0.5;
        let sn = skew_1d(rho, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = 0.3;
        let oracle = normal::pdf(x) * normal::sf(-rho * x / (1.0 - rho * rho).sqrt()) / 0.5;
        let got = sn
            .logpdf(&DVector::from_element(1, x), &RectProbOptions::default(), &mut rng)
            .unwrap();
        assert!((got.exp() - oracle).abs() < 1e-6);
        // Integrates to one on a grid.
        let h = 0.01;
        let total: f64 = (-800..=800)
            .map(|i| {
                let v = i as f64 * h;
                sn.logpdf(&DVector::from_element(1, v), &RectProbOptions::default(), &mut rng)
                    .unwrap()
                    .exp()
                    * h
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn skew_normal_mean() {
        let rho = 0.8;
        let sn = skew_1d(rho, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = sn.moments_mc(100_000, &mut rng).unwrap();
        let target = rho * (2.0 / std::f64::consts::PI).sqrt();
        assert!((m.mean[0] - target).abs() < 3.0 * m.mc_se[0], "{} vs {target}", m.mean[0]);
        let exact = sn.mean(&RectProbOptions::default(), &mut rng).unwrap();
        assert_relative_eq!(exact[0], target, epsilon = 1e-10);
        // The MGF's derivative at zero is the mean.
        let eps = 1e-5;
        let d = (log_mgf(&sn, &DVector::from_element(1, eps))
            - log_mgf(&sn, &DVector::from_element(1, -eps)))
            / (2.0 * eps);
        assert!((d - target).abs() < 1e-6);
    }

    #[test]
    fn single_draw_flags_unreliable_se() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = skew_1d(0.3, 0.0).moments_mc(1, &mut rng).unwrap();
        assert!(!m.reliable);
        assert!(m.mc_se[0].is_nan());
    }

    #[test]
    fn affine_identity_and_severed() {
        let sn = skew_1d(0.6, -0.5);
        let same = sn.affine(&DMatrix::identity(1, 1), &DVector::zeros(1), &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(same.mu_theta, sn.mu_theta);
        assert_eq!(same.sigma_theta, sn.sigma_theta);
        assert_eq!(same.sigma_ztheta, sn.sigma_ztheta);
        let cut = sn
            .affine(&DMatrix::zeros(2, 1), &DVector::from_vec(vec![1.0, 2.0]), &DMatrix::identity(2, 2))
            .unwrap();
        assert_eq!(cut.sigma_ztheta, DMatrix::zeros(1, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = cut.moments_mc(20_000, &mut rng).unwrap();
        assert!((m.mean[0] - 1.0).abs() < 0.05 && (m.mean[1] - 2.0).abs() < 0.05);
    }

    #[test]
    fn marginal_keeps_selection_parameters() {
        let sn = SelectionNormal::new(
            DVector::from_element(1, 0.2),
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            DMatrix::from_element(1, 1, 1.5),
            DMatrix::identity(3, 3),
            DMatrix::from_row_slice(1, 3, &[0.1, 0.2, 0.3]),
            Rectangle::new(vec![0.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        let m = sn.marginal(1..3).unwrap();
        assert_eq!(m.mu_theta.as_slice(), &[2.0, 3.0]);
        assert_eq!(m.sigma_ztheta, DMatrix::from_row_slice(1, 2, &[0.2, 0.3]));
        assert_eq!(m.mu_z, sn.mu_z);
        assert!(sn.marginal(0..0).is_err());
        assert!(sn.marginal(2..4).is_err());
        let full = sn.marginal(0..3).unwrap();
        assert_eq!(full.mu_theta, sn.mu_theta);
    }

    #[test]
    fn shrinking_selection_approaches_gaussian_conditional() {
        let zstar = 0.7;
        let hw = 1e-3;
        let sn = SelectionNormal::new(
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 1.0),
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.9),
            Rectangle::new(vec![zstar - hw], vec![zstar + hw]).unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = sn.moments_mc(20_000, &mut rng).unwrap();
        let target = 1.0 + 0.9 / 2.0 * zstar;
        assert!((m.mean[0] - target).abs() < 1e-2);
    }

    #[test]
    fn gaussian_limit_has_no_constraint() {
        let g = SelectionNormal::gaussian(DVector::from_element(1, 2.0), DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert_eq!(g.d1(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = g.moments_mc(50_000, &mut rng).unwrap();
        assert!((m.mean[0] - 2.0).abs() < 3.0 * m.mc_se[0]);
        assert!((m.cov[(0, 0)] - 4.0).abs() < 0.1);
    }
}
