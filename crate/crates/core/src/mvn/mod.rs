//! Multivariate normal primitives: densities, rectangle probabilities and
//! truncated sampling.
//!
//! Extended reals are IEEE infinities throughout.

mod bvn;
pub mod normal;
mod rectprob;
mod tmvn;
mod truncnorm;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

pub use bvn::bvn_rect;
pub use rectprob::{rect_log_prob, rect_prob, truncated_mean_vector, RectProb, RectProbOptions};
pub(crate) use rectprob::log_prob_centered;
pub use tmvn::{sample_tmvn, TmvnChain, DEFAULT_BURN_IN};
pub use truncnorm::sample_tn_1d;
pub(crate) use truncnorm::sample_std;

/// Product of per-coordinate intervals `(lower_i, upper_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rectangle {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Rectangle {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension(format!(
                "rectangle bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (&a, &b)) in lower.iter().zip(&upper).enumerate() {
            if a.is_nan() || b.is_nan() || !(a < b) {
                return Err(Error::InvalidParameter(format!(
                    "rectangle coordinate {i}: need lower < upper, got ({a}, {b})"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The whole space in `d` dimensions.
    pub fn full(d: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; d],
            upper: vec![f64::INFINITY; d],
        }
    }

    /// Zero-dimensional rectangle (no constraint).
    pub fn empty() -> Self {
        Self::full(0)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn interval(&self, i: usize) -> (f64, f64) {
        (self.lower[i], self.upper[i])
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower.iter().all(|v| *v == f64::NEG_INFINITY)
            && self.upper.iter().all(|v| *v == f64::INFINITY)
    }

    /// Append one interval.
    pub fn push(&mut self, lower: f64, upper: f64) -> Result<()> {
        if lower.is_nan() || upper.is_nan() || !(lower < upper) {
            return Err(Error::InvalidParameter(format!(
                "interval needs lower < upper, got ({lower}, {upper})"
            )));
        }
        self.lower.push(lower);
        self.upper.push(upper);
        Ok(())
    }

    /// Cartesian product `self x other`.
    pub fn product(&self, other: &Rectangle) -> Rectangle {
        let mut lower = self.lower.clone();
        lower.extend_from_slice(&other.lower);
        let mut upper = self.upper.clone();
        upper.extend_from_slice(&other.upper);
        Rectangle { lower, upper }
    }

    /// `self - shift`, coordinatewise.
    pub fn shifted(&self, shift: &[f64]) -> Rectangle {
        Rectangle {
            lower: self.lower.iter().zip(shift).map(|(a, s)| a - s).collect(),
            upper: self.upper.iter().zip(shift).map(|(b, s)| b - s).collect(),
        }
    }

    /// Sub-rectangle over the given coordinates.
    pub fn select(&self, idx: &[usize]) -> Rectangle {
        Rectangle {
            lower: idx.iter().map(|&i| self.lower[i]).collect(),
            upper: idx.iter().map(|&i| self.upper[i]).collect(),
        }
    }
}

/// Mean and covariance of a multivariate normal, with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct MvnParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl MvnParams {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        linalg::check_square(&cov, d, "covariance")?;
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        for i in 0..d {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::InvalidParameter(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let cov = linalg::symmetrize(&cov);
        let chol = linalg::cholesky(&cov)?;
        Ok(Self { mean, cov, chol })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor of the covariance (possibly jittered).
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn with_mean(&self, mean: DVector<f64>) -> Self {
        assert_eq!(mean.len(), self.dim());
        Self {
            mean,
            cov: self.cov.clone(),
            chol: self.chol.clone(),
        }
    }
}

/// `ln phi_d(x; mean, cov)`.
pub fn mvn_logpdf(x: &DVector<f64>, p: &MvnParams) -> Result<f64> {
    let d = p.dim();
    if x.len() != d {
        return Err(Error::Dimension(format!(
            "point has length {}, distribution has dimension {d}",
            x.len()
        )));
    }
    let diff = x - p.mean();
    let y = p
        .chol()
        .solve_lower_triangular(&diff)
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
    Ok(-0.5 * y.norm_squared() - 0.5 * linalg::chol_logdet(p.chol()) - d as f64 * normal::LN_SQRT_2PI)
}
