//! Lower tail of the smallest eigenvalue of the simplified Malliavin matrix.
//!
//! The bound under test has the shape `P(λ_min <= ε) <= C exp(-c X(ε))` with
//! `X(ε) = (ε^{αℓ} |log ε|^γ)^{-1}`. `X` is decreasing in `ε` only for
//! `ε < exp(-γ / (αℓ))`; grid points above that are reported but not fitted.

use serde::Serialize;

use super::{simulate_paths, ExperimentConfig};
use crate::conditions::{self, BoxRegion, ConditionReport};
use crate::error::{Error, Result};
use crate::levy::{cutoff, StableLikeMeasure};
use crate::parallel::Executor;
use crate::stats::{fit_line, wilson_interval, Z_95};

/// Below this every `λ_min` counts as zero.
pub const ZERO_EIGENVALUE: f64 = 1e-12;
/// Minimum hit count for a grid point to enter the fit.
pub const MIN_FIT_COUNT: u64 = 10;
/// Minimum hit count for a grid point to enter a local slope.
pub const MIN_SLOPE_COUNT: u64 = 30;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailEstimate {
    pub epsilon: f64,
    pub count: u64,
    pub probability: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `X(ε)` is decreasing at this `ε`.
    pub in_validity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailFit {
    /// Rate constant `c` of `exp(-c X(ε))`.
    pub c: f64,
    /// Prefactor `C`.
    pub big_c: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// `d log P / d log ε` between consecutive grid points.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalSlope {
    pub eps_hi: f64,
    pub eps_lo: f64,
    pub slope: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TailReport {
    pub model: String,
    pub condition: ConditionReport,
    pub n_paths: usize,
    pub estimates: Vec<TailEstimate>,
    pub rank_deficient: bool,
    pub fit: Option<TailFit>,
    pub slopes: Vec<LocalSlope>,
    /// `P(λ_min <= ε)` nondecreasing in `ε`.
    pub monotone: bool,
    /// Local slopes increase as `ε` decreases (within two standard errors
    /// step to step, strictly from first to last). `None` with fewer than two slopes.
    pub slopes_increasing: Option<bool>,
    pub warnings: Vec<String>,
}

impl TailReport {
    pub fn fitted_c_positive(&self) -> bool {
        self.fit.as_ref().is_some_and(|f| f.c > 0.0)
    }
}

fn bound_regressor(eps: f64, alpha: f64, ell: f64, gamma: f64) -> f64 {
    1.0 / (eps.powf(alpha * ell) * eps.ln().abs().powf(gamma))
}

/// Simulates the configured model and estimates `P(λ_min <= ε)` on the grid.
pub fn eigenvalue_tail_experiment(cfg: &ExperimentConfig, exec: &Executor) -> Result<TailReport> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    let condition = match &model.linear {
        Some(a) => conditions::kalman_report(a, &model.noise)?,
        None => {
            let region = BoxRegion::centred(model.dim, 3.0)?;
            let mut rng = cfg.seeds().derive("conditions").rng(0);
            conditions::hormander_infimum(&model, &region, 100, 100, &mut rng)?
        }
    };
    let lambdas: Vec<f64> = simulate_paths(cfg, exec)?.into_iter().map(|s| s.lambda_min).collect();
    let mut report = tail_from_samples(&lambdas, cfg, condition);
    report.model = model.name.clone();
    Ok(report)
}

/// Tail statistics for given `λ_min` samples.
pub fn tail_from_samples(lambdas: &[f64], cfg: &ExperimentConfig, condition: ConditionReport) -> TailReport {
    let n = lambdas.len() as u64;
    let mut warnings = Vec::new();
    if !condition.passed {
        warnings.push(format!("hypothesis check failed: {}", condition.note));
    }
    let alpha = cfg.measure.alpha;
    let validity = (-cfg.gamma / (alpha * cfg.ell)).exp();
    let estimates: Vec<TailEstimate> = cfg
        .eps_grid
        .iter()
        .map(|&epsilon| {
            let count = lambdas.iter().filter(|&&l| l <= epsilon).count() as u64;
            let (ci_lo, ci_hi) = wilson_interval(count, n, Z_95);
            TailEstimate {
                epsilon,
                count,
                probability: count as f64 / n as f64,
                ci_lo,
                ci_hi,
                in_validity: epsilon < validity,
            }
        })
        .collect();
    let outside: Vec<String> = estimates.iter().filter(|e| !e.in_validity).map(|e| format!("{}", e.epsilon)).collect();
    if !outside.is_empty() {
        warnings.push(format!(
            "eps in {{{}}} exceeds exp(-gamma/(alpha*ell)) = {validity:.4}; excluded from the fit",
            outside.join(", ")
        ));
    }
    let monotone = estimates.windows(2).all(|w| w[1].probability <= w[0].probability);
    let rank_deficient = lambdas.iter().all(|l| l.abs() <= ZERO_EIGENVALUE);

    let (fit, slopes, slopes_increasing) = if rank_deficient {
        warnings.push("lambda_min vanishes on every path; fit skipped".into());
        (None, Vec::new(), None)
    } else {
        let slopes = local_slopes(&estimates, n);
        let increasing = (slopes.len() >= 2).then(|| {
            let stepwise = slopes.windows(2).all(|w| {
                w[1].slope >= w[0].slope - 2.0 * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt()
            });
            stepwise && slopes[slopes.len() - 1].slope > slopes[0].slope
        });
        (fit_bound(&estimates, alpha, cfg.ell, cfg.gamma, &mut warnings), slopes, increasing)
    };
    TailReport {
        model: cfg.model.name().to_string(),
        condition,
        n_paths: lambdas.len(),
        estimates,
        rank_deficient,
        fit,
        slopes,
        monotone,
        slopes_increasing,
        warnings,
    }
}

fn local_slopes(estimates: &[TailEstimate], n: u64) -> Vec<LocalSlope> {
    let n = n as f64;
    estimates
        .windows(2)
        .filter(|w| w[0].count >= MIN_SLOPE_COUNT && w[1].count >= MIN_SLOPE_COUNT)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let dx = a.epsilon.ln() - b.epsilon.ln();
            // nested events: Var(log p_b - log p_a) = (1/p_b - 1/p_a) / n
            let var = (1.0 / b.probability - 1.0 / a.probability).max(0.0) / n;
            LocalSlope {
                eps_hi: a.epsilon,
                eps_lo: b.epsilon,
                slope: (a.probability.ln() - b.probability.ln()) / dx,
                stderr: var.sqrt() / dx,
            }
        })
        .collect()
}

fn fit_bound(estimates: &[TailEstimate], alpha: f64, ell: f64, gamma: f64, warnings: &mut Vec<String>) -> Option<TailFit> {
    let pts: Vec<(f64, f64)> = estimates
        .iter()
        .filter(|e| e.in_validity && e.count >= MIN_FIT_COUNT)
        .map(|e| (bound_regressor(e.epsilon, alpha, ell, gamma), e.probability.ln()))
        .collect();
    if pts.len() < 3 {
        warnings.push(format!("only {} grid points usable for the fit; need 3", pts.len()));
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
    let line = fit_line(&x, &y)?;
    Some(TailFit { c: -line.slope, big_c: line.intercept.exp(), r_squared: line.r_squared, points: pts.len() })
}

/// Bracket `[lo, hi]` for `P(Σ_{s_j <= T} h(z_j) <= ε)` at each `ε`, from the
/// compound Poisson law of the `h`-sum. The jump law of `h(Z)` is put on a
/// lattice of spacing `min ε / resolution`, rounded down and up, and each
/// lattice law is evaluated by the Panjer recursion.
pub fn h_sum_tail_bounds(
    measure: &StableLikeMeasure,
    horizon: f64,
    eps: &[f64],
    resolution: usize,
) -> Result<Vec<(f64, f64)>> {
    if eps.is_empty() || eps.iter().any(|&e| !(e > 0.0)) || resolution == 0 {
        return Err(Error::Domain("need positive thresholds and resolution".into()));
    }
    let rate = measure.jump_rate();
    let lambda = rate * horizon;
    let e_min = eps.iter().copied().fold(f64::INFINITY, f64::min);
    let e_max = eps.iter().copied().fold(0.0, f64::max);
    let step = e_min / resolution as f64;
    let cells = (e_max / step).ceil() as usize + 1;
    let peak = h_peak();
    // P(h(Z) <= x) for a normalised mark Z
    let cdf = |x: f64| -> f64 {
        if x >= cutoff::h_radial(peak) {
            return 1.0;
        }
        let r_in = invert(0.0, peak, x, true);
        let r_out = invert(peak, 2.0, x, false);
        (measure.shell_mass(measure.trunc, r_in.max(measure.trunc)) + measure.shell_mass(r_out, f64::INFINITY)) / rate
    };
    let grid: Vec<f64> = (0..=cells + 1).map(|j| cdf(j as f64 * step)).collect();
    // rounded up: mass of (x_{j-1}, x_j] at j; rounded down: mass of [x_j, x_{j+1}) at j
    let mut up = vec![0.0; cells + 1];
    let mut down = vec![0.0; cells + 1];
    up[0] = grid[0];
    for j in 1..=cells {
        up[j] = grid[j] - grid[j - 1];
    }
    down[0] = grid[1];
    for j in 1..=cells {
        down[j] = grid[j + 1] - grid[j];
    }
    let g_up = panjer(lambda, &up);
    let g_down = panjer(lambda, &down);
    Ok(eps
        .iter()
        .map(|&e| {
            let k = ((e / step) + 1e-9).floor() as usize;
            let lo: f64 = g_up[..=k].iter().sum();
            let hi: f64 = g_down[..=k].iter().sum();
            (lo.min(1.0), hi.min(1.0))
        })
        .collect())
}

fn panjer(lambda: f64, f: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; f.len()];
    g[0] = (-lambda * (1.0 - f[0])).exp();
    for k in 1..f.len() {
        let mut acc = 0.0;
        for j in 1..=k {
            acc += j as f64 * f[j] * g[k - j];
        }
        g[k] = lambda * acc / k as f64;
    }
    g
}

/// Radius of the maximum of `h` on `[1, 2]`.
fn h_peak() -> f64 {
    let (mut a, mut b) = (1.0, 2.0);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if cutoff::h_radial(c) > cutoff::h_radial(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Solves `h(r) = x` by bisection on a monotone branch.
fn invert(mut a: f64, mut b: f64, x: f64, increasing: bool) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let below = cutoff::h_radial(m) <= x;
        if below == increasing {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}
