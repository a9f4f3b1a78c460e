//! Probability of no jump with mark in an annulus during a short window.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::levy::StableLikeMeasure;
use crate::parallel::{require_paths, Executor, SeedSequence};
use crate::stats::{wilson_interval, z_score, Z_95};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VoidReport {
    pub window: f64,
    pub r_inner: f64,
    pub r_outer: f64,
    pub trials: usize,
    pub empty: u64,
    pub empirical: f64,
    /// `exp(-window · ν(r_inner <= |z| <= r_outer))`.
    pub exact: f64,
    /// Binomial standard error at the exact probability.
    pub stderr: f64,
    pub z: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl VoidReport {
    pub fn passes(&self, sigmas: f64) -> bool {
        self.z.abs() <= sigmas
    }
}

/// Void probability of the annulus `[ε^ℓ, 1]` over `[0, window]`.
pub fn void_probability_check(
    measure: &StableLikeMeasure,
    window: f64,
    epsilon: f64,
    ell: f64,
    n_trials: usize,
    seeds: &SeedSequence,
    exec: &Executor,
) -> Result<VoidReport> {
    if !(epsilon > 0.0 && ell > 0.0) {
        return Err(Error::Config(format!("need eps > 0 and ell > 0, got {epsilon}, {ell}")));
    }
    void_probability_annulus(measure, window, epsilon.powf(ell), n_trials, seeds, exec)
}

/// Void probability of the annulus `[r_inner, 1]` over `[0, window]`.
pub fn void_probability_annulus(
    measure: &StableLikeMeasure,
    window: f64,
    r_inner: f64,
    n_trials: usize,
    seeds: &SeedSequence,
    exec: &Executor,
) -> Result<VoidReport> {
    if !(r_inner > measure.trunc && r_inner < 1.0) {
        return Err(Error::Config(format!(
            "annulus inner radius {r_inner} must lie in (truncation {}, 1)",
            measure.trunc
        )));
    }
    if !(window >= 0.0 && window.is_finite()) {
        return Err(Error::Config(format!("window must be finite and >= 0, got {window}")));
    }
    require_paths(n_trials, 1, "void probability check")?;
    let r_outer = 1.0;
    let exact = (-window * measure.shell_mass(r_inner, r_outer)).exp();
    let seeds = seeds.derive("void");
    let hits = exec.try_map(n_trials, |p| -> Result<bool> {
        let path = measure.sample_path(window, &mut seeds.rng(p as u64))?;
        Ok(path.count_where(0.0, window, |z| {
            let r = z.norm();
            r >= r_inner && r <= r_outer
        }) == 0)
    })?;
    let empty = hits.iter().filter(|&&e| e).count() as u64;
    let n = n_trials as f64;
    let empirical = empty as f64 / n;
    let stderr = (exact * (1.0 - exact) / n).sqrt();
    let (ci_lo, ci_hi) = wilson_interval(empty, n_trials as u64, Z_95);
    Ok(VoidReport {
        window,
        r_inner,
        r_outer,
        trials: n_trials,
        empty,
        empirical,
        exact,
        stderr,
        z: z_score(empirical - exact, stderr),
        ci_lo,
        ci_hi,
    })
}
