//! Count series generators used in simulation studies.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal, Poisson};

use crate::error::{Error, Result};
use crate::series::CountSeries;

/// Zero-inflated Poisson with a random-walk mean, capped at `y_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZipParams {
    /// `lambda_1 ~ Uniform(lambda_init.0, lambda_init.1)`.
    pub lambda_init: (f64, f64),
    /// Variance of the Gaussian random-walk step of `lambda_t`.
    pub rw_variance: f64,
    /// Zero-inflation probability `~ Uniform(pi_range.0, pi_range.1)`, drawn
    /// once per series.
    pub pi_range: (f64, f64),
    pub y_max: u64,
}

impl Default for ZipParams {
    fn default() -> Self {
        Self {
            lambda_init: (5.0, 15.0),
            rw_variance: 0.2,
            pi_range: (0.1, 0.3),
            y_max: 24,
        }
    }
}

/// `lambda_t = beta0 + sum_k betas[k] Y_{t-k-1} + sum_l alphas[l] lambda_{t-l-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IngarchParams {
    pub beta0: f64,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Initial steps discarded.
    pub burn_in: usize,
}

impl Default for IngarchParams {
    fn default() -> Self {
        Self {
            beta0: 0.3,
            betas: vec![0.6],
            alphas: vec![0.2],
            burn_in: 50,
        }
    }
}

/// Multivariate Poisson-scaled Beta process.
#[derive(Debug, Clone, PartialEq)]
pub struct MpsbParams {
    pub lambdas: Vec<f64>,
    pub gamma: f64,
    /// `theta_0 ~ Gamma(alpha0, rate beta0)`; `alpha0` also starts the
    /// `alpha_t` recursion.
    pub alpha0: f64,
    pub beta0: f64,
    /// Fix `theta_0` instead of drawing it.
    pub theta0: Option<f64>,
}

impl Default for MpsbParams {
    fn default() -> Self {
        Self {
            lambdas: vec![2.0, 2.5, 3.0, 3.5, 4.0],
            gamma: 0.93,
            alpha0: 100.0,
            beta0: 100.0,
            theta0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GenConfig {
    Zip(ZipParams),
    Ingarch(IngarchParams),
    Mpsb(MpsbParams),
}

/// A simulated series with its latent intensity path and the parameters
/// that produced it, as `(key, value)` text pairs.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub series: CountSeries,
    /// `lambda_t` (ZIP, INGARCH) or `theta_t` (MPSB).
    pub latent: Vec<f64>,
    pub metadata: Vec<(String, String)>,
}

pub fn generate<R: Rng + ?Sized>(cfg: &GenConfig, len: usize, rng: &mut R) -> Result<Simulated> {
    match cfg {
        GenConfig::Zip(p) => gen_zip_bounded(p, len, rng),
        GenConfig::Ingarch(p) => gen_ingarch(p, len, rng),
        GenConfig::Mpsb(p) => gen_mpsb(p, len, rng),
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean).map_err(|e| Error::InvalidParameter(format!("Poisson({mean}): {e}")))?;
    Ok(d.sample(rng) as u64)
}

pub fn gen_zip_bounded<R: Rng + ?Sized>(p: &ZipParams, len: usize, rng: &mut R) -> Result<Simulated> {
    if len == 0 {
        return Err(Error::InvalidParameter("series length must be positive".into()));
    }
    if !(p.lambda_init.0 < p.lambda_init.1) || !(p.pi_range.0 <= p.pi_range.1) || p.pi_range.0 < 0.0 || p.pi_range.1 > 1.0 {
        return Err(Error::InvalidParameter("invalid ZIP parameter ranges".into()));
    }
    let step = Normal::new(0.0, p.rw_variance.sqrt())
        .map_err(|e| Error::InvalidParameter(format!("random-walk variance: {e}")))?;
    let pi = if p.pi_range.0 == p.pi_range.1 {
        p.pi_range.0
    } else {
        rng.random_range(p.pi_range.0..p.pi_range.1)
    };
    let mut lambda = rng.random_range(p.lambda_init.0..p.lambda_init.1);
    let mut ys = Vec::with_capacity(len);
    let mut lams = Vec::with_capacity(len);
    for t in 0..len {
        if t > 0 {
            // Reflect at zero to keep the mean non-negative.
            lambda = (lambda + step.sample(rng)).abs();
        }
        lams.push(lambda);
        let y = if rng.random::<f64>() < pi { 0 } else { poisson(lambda, rng)?.min(p.y_max) };
        ys.push(y);
    }
    Ok(Simulated {
        series: CountSeries::univariate(&ys),
        latent: lams,
        metadata: vec![
            ("generator".into(), "zip_bounded".into()),
            ("lambda_init".into(), format!("uniform({}, {})", p.lambda_init.0, p.lambda_init.1)),
            ("rw_variance".into(), p.rw_variance.to_string()),
            ("rw_scale_reading".into(), "variance".into()),
            ("negative_lambda".into(), "reflected".into()),
            ("zero_inflation".into(), pi.to_string()),
            ("y_max".into(), p.y_max.to_string()),
        ],
    })
}

pub fn gen_ingarch<R: Rng + ?Sized>(p: &IngarchParams, len: usize, rng: &mut R) -> Result<Simulated> {
    if len == 0 {
        return Err(Error::InvalidParameter("series length must be positive".into()));
    }
    if p.beta0 <= 0.0 || p.betas.iter().chain(&p.alphas).any(|&c| c < 0.0) {
        return Err(Error::InvalidParameter("INGARCH coefficients must be non-negative with beta0 > 0".into()));
    }
    let persistence: f64 = p.betas.iter().sum::<f64>() + p.alphas.iter().sum::<f64>();
    let stationary = persistence < 1.0;
    let lambda0 = if stationary { p.beta0 / (1.0 - persistence) } else { p.beta0 };
    let mut y_hist = vec![lambda0.floor() as u64; p.betas.len()];
    let mut l_hist = vec![lambda0; p.alphas.len()];
    let mut ys = Vec::with_capacity(len);
    let mut lams = Vec::with_capacity(len);
    for t in 0..len + p.burn_in {
        // Histories are most-recent first.
        let lambda = p.beta0
            + p.betas.iter().zip(&y_hist).map(|(b, &y)| b * y as f64).sum::<f64>()
            + p.alphas.iter().zip(&l_hist).map(|(a, l)| a * l).sum::<f64>();
        let y = poisson(lambda, rng)?;
        if !y_hist.is_empty() {
            y_hist.rotate_right(1);
            y_hist[0] = y;
        }
        if !l_hist.is_empty() {
            l_hist.rotate_right(1);
            l_hist[0] = lambda;
        }
        if t >= p.burn_in {
            ys.push(y);
            lams.push(lambda);
        }
    }
    let mut metadata = vec![
        ("generator".into(), "ingarch".into()),
        ("beta0".into(), p.beta0.to_string()),
        ("betas".into(), format!("{:?}", p.betas)),
        ("alphas".into(), format!("{:?}", p.alphas)),
        ("burn_in".into(), p.burn_in.to_string()),
    ];
    if !stationary {
        metadata.push(("warning".into(), format!("non-stationary: coefficient sum {persistence} >= 1")));
    }
    Ok(Simulated {
        series: CountSeries::univariate(&ys),
        latent: lams,
        metadata,
    })
}

pub fn gen_mpsb<R: Rng + ?Sized>(p: &MpsbParams, len: usize, rng: &mut R) -> Result<Simulated> {
    if len == 0 || p.lambdas.is_empty() {
        return Err(Error::InvalidParameter("series length and dimension must be positive".into()));
    }
    if !(p.gamma > 0.0 && p.gamma < 1.0) || p.lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidParameter("MPSB needs 0 < gamma < 1 and positive lambdas".into()));
    }
    if !(p.alpha0 > 0.0 && p.beta0 > 0.0) {
        return Err(Error::InvalidParameter("MPSB needs positive alpha0 and beta0".into()));
    }
    let mut theta = match p.theta0 {
        Some(v) => v,
        None => Gamma::new(p.alpha0, 1.0 / p.beta0)
            .map_err(|e| Error::InvalidParameter(format!("theta0 prior: {e}")))?
            .sample(rng),
    };
    let mut alpha = p.alpha0;
    let n = p.lambdas.len();
    let mut rows = Vec::with_capacity(len);
    let mut thetas = Vec::with_capacity(len);
    for _ in 0..len {
        let a = p.gamma * alpha;
        let b = (1.0 - p.gamma) * alpha;
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::InvalidParameter(format!("Beta parameters ({a}, {b}) are not positive")));
        }
        let eps = Beta::new(a, b)
            .map_err(|e| Error::InvalidParameter(format!("Beta({a}, {b}): {e}")))?
            .sample(rng);
        theta = theta * eps / p.gamma;
        let row = p
            .lambdas
            .iter()
            .map(|l| poisson(l * theta, rng))
            .collect::<Result<Vec<u64>>>()?;
        alpha = p.gamma * alpha + row.iter().sum::<u64>() as f64;
        thetas.push(theta);
        rows.push(row);
    }
    let series = CountSeries::from_rows(&rows)?;
    debug_assert_eq!(series.n(), n);
    Ok(Simulated {
        series,
        latent: thetas,
        metadata: vec![
            ("generator".into(), "mpsb".into()),
            ("lambdas".into(), format!("{:?}", p.lambdas)),
            ("gamma".into(), p.gamma.to_string()),
            ("alpha0".into(), p.alpha0.to_string()),
            ("beta0".into(), p.beta0.to_string()),
            ("theta0".into(), p.theta0.map_or("gamma prior".into(), |v| v.to_string())),
        ],
    })
}
