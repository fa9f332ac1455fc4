//! Statistical helpers: normal distribution, goodness-of-fit tests, regression.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Upper tail `1 - Φ(x)` without cancellation for large `x`.
pub fn normal_sf(x: f64) -> f64 {
    std_normal().sf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Pairwise summation; deterministic for a fixed input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let d: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&d) / (xs.len() as f64 - 1.0)
}

/// Standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let d: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
    pairwise_sum(&d) / (xs.len() as f64 - 1.0)
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov tail probability `P(K > x)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// KS p-value with the usual finite-sample correction of the statistic.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

#[derive(Debug, Clone, Copy)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit test for observed counts against expected
/// probabilities (which must sum to one).
pub fn chi_square_gof(observed: &[usize], expected_prob: &[f64]) -> ChiSquareTest {
    let total: usize = observed.iter().sum();
    let nt = total as f64;
    let statistic = observed
        .iter()
        .zip(expected_prob)
        .map(|(&o, &p)| {
            let e = p * nt;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = observed.len() - 1;
    let p_value = ChiSquared::new(dof as f64)
        .map(|d| d.sf(statistic))
        .unwrap_or(f64::NAN);
    ChiSquareTest { statistic, dof, p_value }
}

/// Chi-square test on `bins` equiprobable bins defined by a quantile function.
pub fn chi_square_equiprobable(
    samples: &[f64],
    bins: usize,
    quantile: impl Fn(f64) -> f64,
) -> ChiSquareTest {
    let edges: Vec<f64> = (1..bins).map(|k| quantile(k as f64 / bins as f64)).collect();
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let k = edges.partition_point(|&e| e <= x);
        counts[k] += 1;
    }
    chi_square_gof(&counts, &vec![1.0 / bins as f64; bins])
}

#[derive(Debug, Clone, Copy)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
}

/// Simple least-squares regression `y = intercept + slope x`.
pub fn ols(x: &[f64], y: &[f64]) -> OlsFit {
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let sxx = pairwise_sum(&x.iter().map(|v| (v - mx) * (v - mx)).collect::<Vec<_>>());
    let sxy = pairwise_sum(
        &x.iter()
            .zip(y)
            .map(|(a, b)| (a - mx) * (b - my))
            .collect::<Vec<_>>(),
    );
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss = pairwise_sum(
        &x.iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .collect::<Vec<_>>(),
    );
    let s2 = rss / (n - 2.0);
    OlsFit {
        slope,
        intercept,
        slope_se: (s2 / sxx).sqrt(),
        intercept_se: (s2 * (1.0 / n + mx * mx / sxx)).sqrt(),
    }
}
