//! Forecast evaluation: randomized PIT, log score, uniformity test and
//! score comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::inference::ForecastPmf;
use crate::stats;

/// Probability used in place of an estimated zero mass.
pub const LOG_SCORE_FLOOR: f64 = 1e-4;

/// How a forecast pmf was obtained; controls the log-score floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmfSource {
    /// Exact (or Rao–Blackwellized) probabilities.
    Exact,
    /// Frequencies of forecast draws.
    Draws,
}

/// One univariate forecast and the value that was observed.
#[derive(Debug, Clone)]
pub struct ForecastRecord {
    pub t: usize,
    pub observed: u64,
    pub pmf: ForecastPmf,
    pub source: PmfSource,
}

impl ForecastRecord {
    /// `H(y)`, with `H(-1) = 0`.
    pub fn cdf(&self, y: i64) -> f64 {
        self.pmf.cdf(y)
    }
}

/// Randomized PIT: a uniform draw on `[H(y - 1), H(y)]`.
pub fn rpit<R: Rng + ?Sized>(rec: &ForecastRecord, rng: &mut R) -> f64 {
    let y = rec.observed as i64;
    let lo = rec.cdf(y - 1);
    let hi = rec.cdf(y).max(lo);
    lo + (hi - lo) * rng.random::<f64>()
}

/// `-ln p(y)`. Draw-based masses are floored at [`LOG_SCORE_FLOOR`]; exact
/// masses are floored only when they are zero.
pub fn log_score(rec: &ForecastRecord) -> f64 {
    let p = rec.pmf.prob(rec.observed);
    let p = match rec.source {
        PmfSource::Draws => p.max(LOG_SCORE_FLOOR),
        PmfSource::Exact => {
            if p > 0.0 {
                p
            } else {
                LOG_SCORE_FLOOR
            }
        }
    };
    -p.ln()
}

/// Kolmogorov–Smirnov p-value of the values against Uniform(0, 1).
pub fn uniformity_pvalue(u: &[f64]) -> Result<f64> {
    if u.len() < 10 {
        return Err(Error::InvalidParameter(format!(
            "uniformity test needs at least 10 values, got {}",
            u.len()
        )));
    }
    Ok(stats::ks_pvalue(u, |x| x.clamp(0.0, 1.0)))
}

/// Name of the uniformity test, recorded in output metadata.
pub const UNIFORMITY_TEST: &str = "one-sample Kolmogorov-Smirnov against Uniform(0,1)";

/// Mean log score per model and its percent difference from `baseline`
/// (negative is better).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreComparison {
    pub baseline: String,
    /// `(model, mean score, percent difference)` sorted by model name.
    pub rows: Vec<(String, f64, f64)>,
}

pub fn score_comparison(scores: &BTreeMap<String, Vec<f64>>, baseline: &str) -> Result<ScoreComparison> {
    let base = scores
        .get(baseline)
        .ok_or_else(|| Error::InvalidParameter(format!("baseline model '{baseline}' has no scores")))?;
    let bm = stats::mean(base);
    let rows = scores
        .iter()
        .map(|(m, s)| {
            let mean = stats::mean(s);
            (m.clone(), mean, 100.0 * (mean - bm) / bm)
        })
        .collect();
    Ok(ScoreComparison {
        baseline: baseline.to_owned(),
        rows,
    })
}

impl ScoreComparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,mean_log_score,percent_difference\n");
        for (m, v, d) in &self.rows {
            let _ = writeln!(s, "{m},{v},{d}");
        }
        s
    }

    pub fn from_csv(text: &str, baseline: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().skip(1).filter(|l| !l.trim().is_empty()).enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(Error::Parse(format!("comparison row {}: expected 3 fields", i + 1)));
            }
            let num = |v: &str| v.parse::<f64>().map_err(|e| Error::Parse(format!("comparison row {}: {e}", i + 1)));
            rows.push((f[0].to_owned(), num(f[1])?, num(f[2])?));
        }
        Ok(Self {
            baseline: baseline.to_owned(),
            rows,
        })
    }
}

/// Data for an rPIT quantile plot: sorted rPIT values against uniform
/// plotting positions, with a pointwise envelope (min and max of the
/// sorted values) from `reps` uniform samples of the same size.
#[derive(Debug, Clone)]
pub struct RpitPlotData {
    pub sorted: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn rpit_plot_data<R: Rng + ?Sized>(u: &[f64], reps: usize, rng: &mut R) -> RpitPlotData {
    let n = u.len();
    let mut sorted = u.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantiles = (1..=n).map(|i| i as f64 / (n + 1) as f64).collect();
    let mut lower = vec![f64::INFINITY; n];
    let mut upper = vec![f64::NEG_INFINITY; n];
    for _ in 0..reps {
        let mut s: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        s.sort_by(f64::total_cmp);
        for (i, v) in s.into_iter().enumerate() {
            lower[i] = lower[i].min(v);
            upper[i] = upper[i].max(v);
        }
    }
    RpitPlotData {
        sorted,
        quantiles,
        lower,
        upper,
    }
}

impl RpitPlotData {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("uniform_quantile,rpit,envelope_lower,envelope_upper\n");
        for i in 0..self.sorted.len() {
            let _ = writeln!(s, "{},{},{},{}", self.quantiles[i], self.sorted[i], self.lower[i], self.upper[i]);
        }
        s
    }
}
