//! Sample-doubling stability of `E exp(λ |δ(V)|)` and `E exp(λ ∫ h dN)`, with
//! the unscaled bump (`h ≡ 1` on the unit ball) as a divergence control.

use serde::Serialize;

use super::{simulate_paths, ExperimentConfig};
use crate::error::{Error, Result};
use crate::levy::cutoff;
use crate::parallel::Executor;
use crate::stats::pairwise_sum;

/// Largest accepted relative change between the `n/2` and `n` sample means.
pub const STABILITY_TOL: f64 = 0.05;
/// Truncation halvings in the divergence sweep.
pub const SWEEP_STEPS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentRow {
    pub quantity: String,
    /// Sample mean over the first half of the paths.
    pub half: f64,
    /// Sample mean over all paths.
    pub full: f64,
    pub rel_change: f64,
    /// No sample overflowed.
    pub finite: bool,
    pub stable: bool,
    /// Share of the sum carried by the largest sample.
    pub max_share: f64,
    /// Exact value where a closed form exists.
    pub analytic: Option<f64>,
    /// Negative control; excluded from the stability verdict.
    pub control: bool,
}

/// Log-moments of the `h`-sum and of the literal sum at one truncation radius.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruncationRow {
    pub trunc: f64,
    /// `log E exp(λ ∫ h dN)`, exact.
    pub log_moment_h: f64,
    /// `log E exp(λ ∫ h_lit dN)`, exact.
    pub log_moment_literal: f64,
    /// Log of the sample mean of `exp(λ ∫ h_lit dN)`.
    pub sample_log_mean_literal: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub lambda: f64,
    pub n_paths: usize,
    pub rows: Vec<MomentRow>,
    pub sweep: Vec<TruncationRow>,
    /// Literal log-moment grows by at least 1.5x per halving of the
    /// truncation, exactly and in the sample.
    pub literal_diverges: bool,
    /// `h` log-moment changes by less than 1% over the last halving.
    pub h_converges: bool,
}

impl MomentReport {
    pub fn stable(&self) -> bool {
        self.rows.iter().filter(|r| !r.control).all(|r| r.stable)
    }

    pub fn passed(&self) -> bool {
        self.stable() && (self.lambda == 0.0 || (self.literal_diverges && self.h_converges))
    }
}

fn moment_row(quantity: String, samples: &[f64], analytic: Option<f64>, control: bool) -> MomentRow {
    let n = samples.len();
    let finite = samples.iter().all(|v| v.is_finite());
    let half = pairwise_sum(&samples[..n / 2]) / (n / 2) as f64;
    let total = pairwise_sum(samples);
    let full = total / n as f64;
    let rel_change = (full - half).abs() / half.abs().max(f64::MIN_POSITIVE);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    MomentRow {
        quantity,
        half,
        full,
        rel_change,
        finite,
        stable: finite && rel_change < STABILITY_TOL,
        max_share: if total > 0.0 { max / total } else { 0.0 },
        analytic,
        control,
    }
}

pub fn exp_moment_experiment(cfg: &ExperimentConfig, lambda: f64, exec: &Executor) -> Result<MomentReport> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let measure = cfg.measure.build()?;
    let summaries = simulate_paths(cfg, exec)?;
    let t = cfg.horizon;
    let log_h = |trunc: f64| t * measure.radial_integral(trunc, 2.0, |r| (lambda * cutoff::h_radial(r)).exp_m1());
    let log_lit = |trunc: f64| t * measure.radial_integral(trunc, 2.0, |r| (lambda * cutoff::bump(r)).exp_m1());

    let mut rows = Vec::new();
    for i in 0..measure.dim {
        let v: Vec<f64> = summaries.iter().map(|s| (lambda * s.skorohod[i].abs()).exp()).collect();
        rows.push(moment_row(format!("exp(lambda*|delta(V{})|)", i + 1), &v, None, false));
    }
    let v: Vec<f64> = summaries.iter().map(|s| (lambda * s.h_sum).exp()).collect();
    rows.push(moment_row("exp(lambda*int h dN)".into(), &v, Some(log_h(measure.trunc).exp()), false));
    let v: Vec<f64> = summaries.iter().map(|s| (lambda * s.literal_sum).exp()).collect();
    rows.push(moment_row("exp(lambda*int h_lit dN)".into(), &v, Some(log_lit(measure.trunc).exp()), true));

    let seeds = cfg.seeds().derive("moment-sweep");
    let mut sweep = Vec::with_capacity(SWEEP_STEPS);
    for k in 0..SWEEP_STEPS {
        let trunc = measure.trunc * 0.5f64.powi(k as i32);
        let m = crate::levy::StableLikeMeasure { trunc, ..measure.clone() };
        let stream = seeds.derive(&format!("trunc-{k}"));
        let samples = exec.try_map(cfg.paths, |p| -> Result<f64> {
            let path = m.sample_path(t, &mut stream.rng(p as u64))?;
            Ok((lambda * path.events.iter().map(|e| cutoff::h_literal(&e.mark)).sum::<f64>()).exp())
        })?;
        sweep.push(TruncationRow {
            trunc,
            log_moment_h: log_h(trunc),
            log_moment_literal: log_lit(trunc),
            sample_log_mean_literal: (pairwise_sum(&samples) / cfg.paths as f64).ln(),
        });
    }
    let literal_diverges = sweep.windows(2).all(|w| {
        w[1].log_moment_literal >= 1.5 * w[0].log_moment_literal
            && w[1].sample_log_mean_literal > w[0].sample_log_mean_literal
    }) && sweep[0].log_moment_literal > 0.0;
    let h_converges = {
        let (a, b) = (&sweep[SWEEP_STEPS - 2], &sweep[SWEEP_STEPS - 1]);
        (b.log_moment_h - a.log_moment_h).abs() <= 0.01 * a.log_moment_h.abs()
    };
    Ok(MomentReport { lambda, n_paths: cfg.paths, rows, sweep, literal_diverges, h_converges })
}
