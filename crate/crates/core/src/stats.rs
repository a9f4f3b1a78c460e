//! Reductions and small statistical helpers shared by the experiments.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pairwise (cascade) summation over a fixed binary tree of the slice.
///
/// The tree depends only on the slice length, so the result is bit-identical
/// whatever order the elements were produced in.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = pairwise_sum(values) / n as f64;
        let stderr = if n > 1 {
            let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
            (pairwise_sum(&sq) / (n - 1) as f64 / n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        Self { mean, stderr, n }
    }

    /// z-score of `self - other` for independent estimates.
    pub fn z_against(&self, other: &MeanEstimate) -> f64 {
        z_score(self.mean - other.mean, combined_stderr(self.stderr, other.stderr))
    }
}

pub fn combined_stderr(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// `diff / stderr`, with an exact zero difference mapped to zero.
pub fn z_score(diff: f64, stderr: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else {
        diff / stderr
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // the exact endpoints at p = 0 and p = 1 are lost to rounding otherwise
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

pub const Z_95: f64 = 1.959_963_984_540_054;

/// Ordinary least squares `y = intercept + slope * x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LineFit { intercept: my - slope * mx, slope, r_squared })
}

#[derive(Clone, Debug, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Goodness of fit of observed counts `k = 0..=k_max` to Poisson(`mean`).
/// The last bin absorbs the upper tail.
pub fn poisson_chi_square(counts: &[u64], mean: f64, k_max: usize) -> ChiSquareResult {
    let total: u64 = counts.iter().sum();
    let mut observed = vec![0u64; k_max + 1];
    for (k, &c) in counts.iter().enumerate() {
        observed[k.min(k_max)] += c;
    }
    let mut probs = Vec::with_capacity(k_max + 1);
    let mut pmf = (-mean).exp();
    let mut acc = 0.0;
    for k in 0..k_max {
        probs.push(pmf);
        acc += pmf;
        pmf *= mean / (k + 1) as f64;
    }
    probs.push((1.0 - acc).max(0.0));

    let statistic: f64 = observed
        .iter()
        .zip(&probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&o, &p)| {
            let e = p * total as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = probs.iter().filter(|&&p| p > 0.0).count() - 1;
    let p_value = ChiSquared::new(dof as f64)
        .map(|d| 1.0 - d.cdf(statistic))
        .unwrap_or(f64::NAN);
    ChiSquareResult { statistic, dof, p_value }
}
