//! Monotone piecewise-cubic Hermite interpolation (Fritsch–Carlson) with
//! linear extrapolation.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl MonotoneSpline {
    /// Interpolant through `(x_i, y_i)`; both sequences strictly increasing.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n != y.len() || n < 2 {
            return Err(Error::InvalidParameter(format!(
                "spline needs at least two knots with matching lengths (got {} and {})",
                n,
                y.len()
            )));
        }
        for k in 1..n {
            if !(x[k] > x[k - 1]) || !(y[k] > y[k - 1]) {
                return Err(Error::InvalidParameter(format!(
                    "spline knots must be strictly increasing (knot {k})"
                )));
            }
        }
        let delta: Vec<f64> = (0..n - 1)
            .map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k]))
            .collect();
        let mut m = vec![0.0; n];
        m[0] = delta[0];
        m[n - 1] = delta[n - 2];
        for k in 1..n - 1 {
            m[k] = 0.5 * (delta[k - 1] + delta[k]);
        }
        for k in 0..n - 1 {
            let a = m[k] / delta[k];
            let b = m[k + 1] / delta[k];
            let s = a * a + b * b;
            if s > 9.0 {
                let tau = 3.0 / s.sqrt();
                m[k] = tau * a * delta[k];
                m[k + 1] = tau * b * delta[k];
            }
        }
        Ok(Self { x, y, m })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.x, &self.y)
    }

    fn first_slope(&self) -> f64 {
        (self.y[1] - self.y[0]) / (self.x[1] - self.x[0])
    }

    fn last_slope(&self) -> f64 {
        let n = self.x.len();
        (self.y[n - 1] - self.y[n - 2]) / (self.x[n - 1] - self.x[n - 2])
    }

    /// Index `k` with `x[k] <= v < x[k+1]`, clamped to the interior.
    fn segment(&self, v: f64, knots: &[f64]) -> usize {
        let n = knots.len();
        match knots.partition_point(|&k| k <= v) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    pub fn eval(&self, v: f64) -> f64 {
        let n = self.x.len();
        if v <= self.x[0] {
            return self.y[0] + self.first_slope() * (v - self.x[0]);
        }
        if v >= self.x[n - 1] {
            return self.y[n - 1] + self.last_slope() * (v - self.x[n - 1]);
        }
        let k = self.segment(v, &self.x);
        let h = self.x[k + 1] - self.x[k];
        let t = (v - self.x[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.y[k] + h10 * h * self.m[k] + h01 * self.y[k + 1] + h11 * h * self.m[k + 1]
    }

    /// Inverse of [`MonotoneSpline::eval`].
    pub fn inverse(&self, u: f64) -> f64 {
        let n = self.x.len();
        if u <= self.y[0] {
            return self.x[0] + (u - self.y[0]) / self.first_slope();
        }
        if u >= self.y[n - 1] {
            return self.x[n - 1] + (u - self.y[n - 1]) / self.last_slope();
        }
        let k = self.segment(u, &self.y);
        let (mut lo, mut hi) = (self.x[k], self.x[k + 1]);
        // The segment is monotone, so bisection always converges.
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interpolates_knots_and_extrapolates_linearly() {
        let s = MonotoneSpline::new(vec![0.0, 1.0, 3.0, 4.0], vec![0.0, 1.0, 1.5, 4.0]).unwrap();
        for (x, y) in [(0.0, 0.0), (1.0, 1.0), (3.0, 1.5), (4.0, 4.0)] {
            assert!((s.eval(x) - y).abs() < 1e-14);
        }
        assert!((s.eval(5.0) - 6.5).abs() < 1e-12);
        assert!((s.eval(-1.0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_monotone_data() {
        assert!(MonotoneSpline::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(MonotoneSpline::new(vec![0.0], vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn monotone_and_invertible(
            dx in proptest::collection::vec(0.1f64..3.0, 2..12),
            dy in proptest::collection::vec(0.01f64..5.0, 12),
        ) {
            let mut x = vec![0.0];
            let mut y = vec![-1.0];
            for (i, d) in dx.iter().enumerate() {
                x.push(x[i] + d);
                y.push(y[i] + dy[i]);
            }
            let s = MonotoneSpline::new(x.clone(), y).unwrap();
            let lo = x[0] - 1.0;
            let hi = x[x.len() - 1] + 1.0;
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=400 {
                let v = lo + (hi - lo) * i as f64 / 400.0;
                let e = s.eval(v);
                prop_assert!(e >= prev);
                prev = e;
                prop_assert!((s.inverse(e) - v).abs() < 1e-8);
            }
        }
    }
}
