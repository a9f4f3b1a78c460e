//! Modulus of the empirical characteristic function of `X_T` along fixed
//! directions, a Monte Carlo proxy for smoothness of the law.

use nalgebra::DVector;
use serde::Serialize;

use super::{simulate_paths, ExperimentConfig};
use crate::error::{ensure_dim, Error, Result};
use crate::parallel::Executor;
use crate::stats::pairwise_sum;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CharfnRow {
    pub direction: usize,
    pub k: f64,
    pub re: f64,
    pub im: f64,
    pub modulus: f64,
    /// Delta-method standard error of the modulus.
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CharfnProfile {
    pub directions: Vec<Vec<f64>>,
    pub rows: Vec<CharfnRow>,
    /// Per direction: the modulus strictly decreases along the positive `k`.
    pub decreasing: Vec<bool>,
}

impl CharfnProfile {
    pub fn along(&self, direction: usize) -> impl Iterator<Item = &CharfnRow> {
        self.rows.iter().filter(move |r| r.direction == direction)
    }
}

/// `|E exp(i k ⟨u, X_T⟩)|` for each unit direction `u` and `k` in `k_grid`.
pub fn charfn_decay(
    cfg: &ExperimentConfig,
    directions: &[Vec<f64>],
    k_grid: &[f64],
    exec: &Executor,
) -> Result<CharfnProfile> {
    if k_grid.iter().any(|&k| !(k >= 0.0 && k.is_finite())) || k_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("k grid must be nonnegative and strictly increasing".into()));
    }
    let units = directions
        .iter()
        .map(|u| {
            ensure_dim(cfg.measure.dim, u.len())?;
            let v = DVector::from_column_slice(u);
            let n = v.norm();
            if n == 0.0 {
                return Err(Error::Config("direction must be nonzero".into()));
            }
            Ok(v / n)
        })
        .collect::<Result<Vec<_>>>()?;
    let summaries = simulate_paths(cfg, exec)?;
    let n = summaries.len() as f64;
    let mut rows = Vec::new();
    for (di, u) in units.iter().enumerate() {
        let proj: Vec<f64> = summaries.iter().map(|s| u.iter().zip(&s.x).map(|(a, b)| a * b).sum()).collect();
        for &k in k_grid {
            let c: Vec<f64> = proj.iter().map(|p| (k * p).cos()).collect();
            let s: Vec<f64> = proj.iter().map(|p| (k * p).sin()).collect();
            let (re, im) = (pairwise_sum(&c) / n, pairwise_sum(&s) / n);
            let modulus = re.hypot(im);
            let (mut vcc, mut vss, mut vcs) = (0.0, 0.0, 0.0);
            for (a, b) in c.iter().zip(&s) {
                let (da, db) = (a - re, b - im);
                vcc += da * da;
                vss += db * db;
                vcs += da * db;
            }
            let denom = n * (n - 1.0);
            let (vcc, vss, vcs) = (vcc / denom, vss / denom, vcs / denom);
            let stderr = if modulus > 0.0 {
                ((re * re * vcc + im * im * vss + 2.0 * re * im * vcs) / (modulus * modulus)).max(0.0).sqrt()
            } else {
                (0.5 * (vcc + vss)).sqrt()
            };
            rows.push(CharfnRow { direction: di, k, re, im, modulus, stderr });
        }
    }
    let decreasing = (0..units.len())
        .map(|di| {
            let m: Vec<f64> = rows.iter().filter(|r| r.direction == di && r.k > 0.0).map(|r| r.modulus).collect();
            m.windows(2).all(|w| w[1] < w[0])
        })
        .collect();
    Ok(CharfnProfile { directions: units.iter().map(|u| u.as_slice().to_vec()).collect(), rows, decreasing })
}
