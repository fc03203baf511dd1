//! Small statistical toolkit shared by the estimators.

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::prf::StreamRng;

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn std_error(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    (variance(x) / x.len() as f64).sqrt()
}

/// Linear-interpolated empirical quantile of `x` (need not be sorted).
pub fn quantile(x: &[f64], q: f64) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, q)
}

pub fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Sample autocorrelation at `lag`; zero when the series is constant or too short.
pub fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    if x.len() <= lag + 1 {
        return 0.0;
    }
    let m = mean(x);
    let denom: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    if denom <= 0.0 {
        return 0.0;
    }
    let num: f64 = x.windows(lag + 1).map(|w| (w[0] - m) * (w[lag] - m)).sum();
    num / denom
}

/// Pearson correlation; zero by convention when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return 0.0;
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Average ranks (ties share the mean rank), 1-based.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct SpearmanTest {
    pub rho: f64,
    pub n: usize,
    /// One-sided p-value for a positive association (Student-t approximation).
    pub p_increasing: f64,
    /// One-sided p-value for a negative association.
    pub p_decreasing: f64,
}

pub fn spearman(x: &[f64], y: &[f64]) -> SpearmanTest {
    let n = x.len();
    let rho = pearson(&ranks(x), &ranks(y));
    let (p_inc, p_dec) = if n < 3 {
        (1.0, 1.0)
    } else if rho.abs() >= 1.0 {
        if rho > 0.0 {
            (0.0, 1.0)
        } else {
            (1.0, 0.0)
        }
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
        (1.0 - dist.cdf(t), dist.cdf(t))
    };
    SpearmanTest {
        rho,
        n,
        p_increasing: p_inc,
        p_decreasing: p_dec,
    }
}

/// Survival function of the Kolmogorov distribution, `P(K > x)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        if k % 2 == 1 {
            sum += term;
        } else {
            sum -= term;
        }
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> KsResult {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i + 1) as f64 / n - f).abs()).max((f - i as f64 / n).abs());
    }
    let en = n.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf((en + 0.12 + 0.11 / en) * d),
    }
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").cdf(x)
}

/// Two-sample Kolmogorov–Smirnov test (asymptotic p-value).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    if a.is_empty() || b.is_empty() {
        return KsResult {
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf((en + 0.12 + 0.11 / en) * d),
    }
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_mean_ci(x: &[f64], level: f64, resamples: usize, rng: &mut StreamRng) -> (f64, f64) {
    bootstrap_ci(x.len(), level, resamples, rng, |idx| idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64)
}

/// Percentile bootstrap interval of an arbitrary statistic of resampled indices.
///
/// Resamples whose statistic is not finite are skipped.
pub fn bootstrap_ci<F: FnMut(&[usize]) -> f64>(
    n: usize,
    level: f64,
    resamples: usize,
    rng: &mut StreamRng,
    mut stat: F,
) -> (f64, f64) {
    if n == 0 || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut out = Vec::with_capacity(resamples);
    let mut idx = vec![0usize; n];
    for _ in 0..resamples {
        for v in idx.iter_mut() {
            *v = rng.random_range(0..n);
        }
        let s = stat(&idx);
        if s.is_finite() {
            out.push(s);
        }
    }
    if out.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    out.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    (quantile_sorted(&out, alpha), quantile_sorted(&out, 1.0 - alpha))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = intercept + slope * x`.
pub fn ols(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let slope_std_error = if n > 2 { (ss_res / (n - 2) as f64 / sxx).sqrt() } else { 0.0 };
    Some(LineFit {
        slope,
        intercept,
        slope_std_error,
        r_squared,
    })
}
