//! Summary statistics and classical tests used for reporting and checks.

/// Sample mean (NaN for an empty slice).
pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance (NaN for fewer than two values).
pub fn variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Monte Carlo standard error of the mean of a possibly autocorrelated
/// sequence, by non-overlapping batch means (20 batches). Falls back to
/// the iid formula for short sequences; NaN for fewer than two values.
pub fn batch_means_se(x: &[f64]) -> f64 {
    const BATCHES: usize = 20;
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    if n < 4 * BATCHES {
        return (variance(x) / n as f64).sqrt();
    }
    let b = n / BATCHES;
    let means: Vec<f64> = (0..BATCHES).map(|k| mean(&x[k * b..(k + 1) * b])).collect();
    (variance(&means) / BATCHES as f64).sqrt()
}

/// Survival function of the Kolmogorov distribution,
/// `P(K > x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    // The series converges slowly near zero, where the value is 1 to
    // double precision anyway.
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS statistic `D_n` of `x` against the CDF `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(x: &[f64], cdf: F) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let f = cdf(xi);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// One-sample KS p-value with the Stephens finite-sample correction.
pub fn ks_pvalue<F: Fn(f64) -> f64>(x: &[f64], cdf: F) -> f64 {
    let n = x.len() as f64;
    let d = ks_statistic(x, cdf);
    let sn = n.sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

/// Two-sample KS statistic.
pub fn ks2_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sample KS p-value.
pub fn ks2_pvalue(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ne = (na * nb / (na + nb)).sqrt();
    kolmogorov_sf((ne + 0.12 + 0.11 / ne) * ks2_statistic(a, b))
}

/// Average ranks (ties share the mean rank), 1-based.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut r = vec![0.0; x.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && x[idx[e + 1]] == x[idx[k]] {
            e += 1;
        }
        let avg = 0.5 * (k + e) as f64 + 1.0;
        for &i in &idx[k..=e] {
            r[i] = avg;
        }
        k = e + 1;
    }
    r
}

/// Pearson correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    correlation(&ranks(x), &ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kolmogorov_known_values() {
        // Standard tables: P(K > 1.3581) = 0.05, P(K > 1.6276) = 0.01.
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn ks_detects_shift_and_accepts_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_pvalue(&u, |x| x.clamp(0.0, 1.0)) > 0.01);
        let shifted: Vec<f64> = u.iter().map(|v| v * 0.9).collect();
        assert!(ks_pvalue(&shifted, |x| x.clamp(0.0, 1.0)) < 1e-6);
        let u2: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        assert!(ks2_pvalue(&u, &u2) > 0.01);
        assert!(ks2_pvalue(&u, &shifted) < 1e-3);
    }

    #[test]
    fn ranks_and_spearman() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[1.0, 4.0, 9.0, 16.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_means_matches_iid_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let iid = (variance(&x) / x.len() as f64).sqrt();
        let bm = batch_means_se(&x);
        assert!(bm / iid > 0.5 && bm / iid < 1.6, "{bm} vs {iid}");
    }
}
