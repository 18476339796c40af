//! Warping between counts and the latent Gaussian scale.
//!
//! Each count `y` owns a latent interval `[t_y, t_{y+1})` with thresholds
//! `t_0 = -inf < t_1 < t_2 < ...`. The thresholds are `t_k = g(k)` for the
//! transformation `g`, except that the parametric transforms are anchored
//! at `t_1 = 0` so the zero cell is always `(-inf, 0)`. With an upper bound
//! `y_max` the last cell is `[t_{y_max}, inf)`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mvn::normal;
use crate::mvn::Rectangle;
use crate::spline::MonotoneSpline;

/// Default cap on the enumerated support of a fitted transformation.
pub const SUPPORT_CAP: u64 = 10_000;

/// Largest count produced when mapping latent values back (exactly
/// representable as `f64`).
pub const COUNT_LIMIT: u64 = 1 << 52;

/// Floor rounding with the zero modification and an optional upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RoundingOperator {
    pub y_max: Option<u64>,
}

/// Strictly increasing map from the continuous count scale `y*` to the
/// latent scale.
#[derive(Debug, Clone, PartialEq)]
pub enum Transformation {
    Identity,
    Log,
    Sqrt,
    Nonparametric(NpTransform),
}

/// Fitted nonparametric transformation: a monotone spline through
/// `(j + 1, ybar + s * Phi^-1(Ftilde(j)))` for the observed counts `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NpTransform {
    spline: MonotoneSpline,
    support_max: u64,
}

impl NpTransform {
    pub fn support_max(&self) -> u64 {
        self.support_max
    }

    pub fn spline(&self) -> &MonotoneSpline {
        &self.spline
    }
}

impl Transformation {
    pub fn name(&self) -> &'static str {
        match self {
            Transformation::Identity => "identity",
            Transformation::Log => "log",
            Transformation::Sqrt => "sqrt",
            Transformation::Nonparametric(_) => "nonparametric",
        }
    }

    /// Parse a parametric transformation by name.
    pub fn parametric(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(Transformation::Identity),
            "log" => Ok(Transformation::Log),
            "sqrt" => Ok(Transformation::Sqrt),
            other => Err(Error::InvalidParameter(format!(
                "unknown parametric transformation '{other}' (expected identity, log or sqrt)"
            ))),
        }
    }

    /// `g(y*)` on the continuous count scale.
    pub fn apply(&self, ystar: f64) -> f64 {
        match self {
            Transformation::Identity => ystar,
            Transformation::Log => ystar.ln(),
            Transformation::Sqrt => ystar.max(0.0).sqrt(),
            Transformation::Nonparametric(np) => np.spline.eval(ystar),
        }
    }

    /// `g^-1(z)`.
    pub fn inverse(&self, z: f64) -> f64 {
        match self {
            Transformation::Identity => z,
            Transformation::Log => z.exp(),
            Transformation::Sqrt => {
                if z > 0.0 {
                    z * z
                } else {
                    0.0
                }
            }
            Transformation::Nonparametric(np) => np.spline.inverse(z),
        }
    }

    /// Threshold `t_k` for `k >= 1` (`t_0 = -inf`).
    pub fn threshold(&self, k: u64) -> f64 {
        match (self, k) {
            (_, 0) => f64::NEG_INFINITY,
            (Transformation::Nonparametric(np), k) => np.spline.eval(k as f64),
            (_, 1) => 0.0,
            (t, k) => t.apply(k as f64),
        }
    }

    /// Text knot table: a header, the kind, then `k,t_k` rows for the
    /// nonparametric case.
    pub fn to_knot_table(&self) -> String {
        let mut s = String::from("# warpdlm transformation v1\n");
        let _ = writeln!(s, "kind,{}", self.name());
        if let Transformation::Nonparametric(np) = self {
            let _ = writeln!(s, "support_max,{}", np.support_max);
            s.push_str("k,latent\n");
            for k in 1..=np.support_max + 1 {
                let _ = writeln!(s, "{k},{:.17e}", np.spline.eval(k as f64));
            }
        }
        s
    }

    pub fn from_knot_table(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().unwrap_or("");
        if header != "# warpdlm transformation v1" {
            return Err(Error::Parse(format!("unrecognized knot table header '{header}'")));
        }
        let kind = lines
            .next()
            .and_then(|l| l.strip_prefix("kind,"))
            .ok_or_else(|| Error::Parse("missing 'kind,' line".into()))?;
        if kind != "nonparametric" {
            return Transformation::parametric(kind).map_err(|e| Error::Parse(e.to_string()));
        }
        let support_max: u64 = lines
            .next()
            .and_then(|l| l.strip_prefix("support_max,"))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Parse("missing or invalid 'support_max,' line".into()))?;
        if lines.next() != Some("k,latent") {
            return Err(Error::Parse("missing 'k,latent' column header".into()));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, line) in lines.enumerate() {
            let (k, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("knot row {}: expected 'k,latent'", i + 1)))?;
            let k: f64 = k
                .parse::<u64>()
                .map_err(|e| Error::Parse(format!("knot row {}: {e}", i + 1)))? as f64;
            let v: f64 = v
                .parse()
                .map_err(|e| Error::Parse(format!("knot row {}: {e}", i + 1)))?;
            xs.push(k);
            ys.push(v);
        }
        let spline = MonotoneSpline::new(xs, ys).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(Transformation::Nonparametric(NpTransform {
            spline,
            support_max,
        }))
    }
}

/// Rescaled empirical CDF `#(y_t <= j) / (T + 1)` at each of `js`.
pub fn rescaled_ecdf(y: &[u64], js: &[u64]) -> Vec<f64> {
    let mut sorted = y.to_vec();
    sorted.sort_unstable();
    let denom = (y.len() + 1) as f64;
    js.iter()
        .map(|&j| sorted.partition_point(|&v| v <= j) as f64 / denom)
        .collect()
}

/// Fit the nonparametric transformation to the observed values of one
/// series coordinate (`None` marks a missing value).
pub fn fit_nonparametric(y: &[Option<u64>], support_max: Option<u64>) -> Result<Transformation> {
    let obs: Vec<u64> = y.iter().flatten().copied().collect();
    let mut distinct = obs.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidParameter(
            "nonparametric transformation needs at least two distinct observed values".into(),
        ));
    }
    let max_obs = *distinct.last().expect("non-empty");
    let support_max = support_max.unwrap_or_else(|| (4 * max_obs).clamp(1, SUPPORT_CAP));
    if max_obs > support_max {
        return Err(Error::InvalidParameter(format!(
            "observed count {max_obs} exceeds support_max {support_max}"
        )));
    }
    let n = obs.len() as f64;
    let mean = obs.iter().map(|&v| v as f64).sum::<f64>() / n;
    let sd = (obs.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let ecdf = rescaled_ecdf(&obs, &distinct);
    let xs: Vec<f64> = distinct.iter().map(|&j| (j + 1) as f64).collect();
    let gs: Vec<f64> = ecdf.iter().map(|&f| mean + sd * normal::quantile(f)).collect();
    let spline = MonotoneSpline::new(xs, gs)?;
    Ok(Transformation::Nonparametric(NpTransform {
        spline,
        support_max,
    }))
}

/// Rounding operator plus one transformation per series coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Warp {
    pub rounding: RoundingOperator,
    pub transforms: Vec<Transformation>,
}

impl Warp {
    pub fn new(transforms: Vec<Transformation>, y_max: Option<u64>) -> Result<Self> {
        if transforms.is_empty() {
            return Err(Error::InvalidParameter("warp needs at least one coordinate".into()));
        }
        if y_max == Some(0) {
            return Err(Error::InvalidParameter("y_max must be at least 1".into()));
        }
        Ok(Self {
            rounding: RoundingOperator { y_max },
            transforms,
        })
    }

    /// The same transformation for each of `n` coordinates.
    pub fn uniform(n: usize, t: Transformation, y_max: Option<u64>) -> Result<Self> {
        Self::new(vec![t; n], y_max)
    }

    pub fn identity(n: usize) -> Self {
        Self::uniform(n, Transformation::Identity, None).expect("valid identity warp")
    }

    pub fn dim(&self) -> usize {
        self.transforms.len()
    }

    pub fn y_max(&self) -> Option<u64> {
        self.rounding.y_max
    }

    /// Latent interval of count `y` for coordinate `coord`.
    pub fn interval(&self, coord: usize, y: u64) -> Result<(f64, f64)> {
        if let Some(m) = self.rounding.y_max {
            if y > m {
                return Err(Error::OutOfSupport {
                    t: 0,
                    coord,
                    value: y,
                    reason: format!("above the bound y_max = {m}"),
                });
            }
        }
        let tr = &self.transforms[coord];
        let lo = tr.threshold(y);
        let hi = if self.rounding.y_max == Some(y) {
            f64::INFINITY
        } else {
            tr.threshold(y + 1)
        };
        Ok((lo, hi))
    }

    /// Constraint rectangle for one observation vector; `None` entries
    /// are missing and contribute `(-inf, inf)`.
    pub fn count_to_rect(&self, y: &[Option<u64>]) -> Result<Rectangle> {
        if y.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "observation has {} coordinates, warp has {}",
                y.len(),
                self.dim()
            )));
        }
        let mut lower = Vec::with_capacity(y.len());
        let mut upper = Vec::with_capacity(y.len());
        for (i, v) in y.iter().enumerate() {
            let (a, b) = match v {
                None => (f64::NEG_INFINITY, f64::INFINITY),
                Some(v) => self.interval(i, *v)?,
            };
            lower.push(a);
            upper.push(b);
        }
        Rectangle::new(lower, upper)
    }

    /// Count of one latent value for coordinate `coord`.
    pub fn latent_to_count_coord(&self, coord: usize, z: f64) -> u64 {
        let tr = &self.transforms[coord];
        let cap = self.rounding.y_max.unwrap_or(COUNT_LIMIT);
        if z < tr.threshold(1) {
            return 0;
        }
        let guess = tr.inverse(z).floor();
        let mut k = if guess.is_finite() && guess >= 1.0 {
            (guess.min(cap as f64)) as u64
        } else {
            1
        };
        k = k.min(cap).max(1);
        // Settle rounding at the thresholds so the result agrees with
        // `interval` exactly.
        while k < cap && tr.threshold(k + 1) <= z {
            k += 1;
        }
        while k > 1 && tr.threshold(k) > z {
            k -= 1;
        }
        k
    }

    /// `h(g^-1(z))` componentwise.
    pub fn latent_to_count(&self, z: &[f64]) -> Vec<u64> {
        z.iter()
            .enumerate()
            .map(|(i, &v)| self.latent_to_count_coord(i, v))
            .collect()
    }

    /// Largest count to enumerate for coordinate `coord`: the bound, else
    /// the fitted support, else `default`.
    pub fn enumeration_max(&self, coord: usize, default: u64) -> u64 {
        if let Some(m) = self.rounding.y_max {
            return m;
        }
        match &self.transforms[coord] {
            Transformation::Nonparametric(np) => np.support_max,
            _ => default,
        }
    }
}
