//! Monte Carlo drivers: eigenvalue tails, void probabilities, exponential
//! moments and characteristic-function decay.
//!
//! Every driver takes an [`ExperimentConfig`] and an [`Executor`]. Paths are
//! generated from `SeedSequence::new(seed).derive("paths")`, so two drivers
//! given the same config look at the same sample.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{self, CatalogModel, ModelSpec, DEFAULT_MAX_STEP};
use crate::levy::{cutoff, OuterLaw, StableLikeMeasure};
use crate::malliavin;
use crate::parallel::{require_paths, Executor, SeedSequence};

pub mod charfn;
pub mod moments;
pub mod tail;
pub mod void;

pub use charfn::{charfn_decay, CharfnProfile, CharfnRow};
pub use moments::{exp_moment_experiment, MomentReport, MomentRow, TruncationRow};
pub use tail::{eigenvalue_tail_experiment, h_sum_tail_bounds, TailEstimate, TailFit, TailReport};
pub use void::{void_probability_annulus, void_probability_check, VoidReport};

/// Parameters of the isotropic catalog measure.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasureParams {
    pub dim: usize,
    pub alpha: f64,
    pub theta0: f64,
    pub trunc: f64,
    /// No jumps beyond this radius when set (must be >= 2).
    pub outer_radius: Option<f64>,
}

impl Default for MeasureParams {
    fn default() -> Self {
        Self { dim: 2, alpha: 1.5, theta0: 0.3, trunc: 0.1, outer_radius: None }
    }
}

impl MeasureParams {
    pub fn build(&self) -> Result<StableLikeMeasure> {
        let m = StableLikeMeasure::new(self.dim, self.alpha, self.theta0, self.trunc)?;
        match self.outer_radius {
            Some(radius) => m.with_outer(OuterLaw::Cutoff { radius }),
            None => Ok(m),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: CatalogModel,
    pub measure: MeasureParams,
    pub horizon: f64,
    pub paths: usize,
    /// Strictly decreasing thresholds.
    pub eps_grid: Vec<f64>,
    /// Exponent `ℓ ∈ (0, 1/4)` of the tail bound.
    pub ell: f64,
    /// Log exponent `γ > 0` of the tail bound.
    pub gamma: f64,
    pub seed: u64,
    /// Initial state; the origin when `None`.
    pub x0: Option<Vec<f64>>,
    pub max_step: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: CatalogModel::Kalman,
            measure: MeasureParams::default(),
            horizon: 1.0,
            paths: 200_000,
            eps_grid: (3..=10).map(|k| 2f64.powi(-k)).collect(),
            ell: 0.2,
            gamma: 1.0,
            seed: 20_240_601,
            x0: None,
            max_step: DEFAULT_MAX_STEP,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.measure.build()?;
        self.model.build(self.measure.dim)?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be finite and > 0, got {}", self.horizon)));
        }
        require_paths(self.paths, 1_000, "experiment")?;
        if !(self.ell > 0.0 && self.ell < 0.25) {
            return Err(Error::Config(format!("ell must lie in (0, 0.25), got {}", self.ell)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.eps_grid.is_empty()
            || self.eps_grid.iter().any(|&e| !(e > 0.0))
            || self.eps_grid.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::Config("epsilon grid must be positive and strictly decreasing".into()));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::Config(format!("max_step must be > 0, got {}", self.max_step)));
        }
        if let Some(x0) = &self.x0 {
            crate::error::ensure_dim(self.measure.dim, x0.len())?;
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        self.model.build(self.measure.dim)
    }

    pub fn initial_state(&self) -> DVector<f64> {
        match &self.x0 {
            Some(x) => DVector::from_column_slice(x),
            None => DVector::zeros(self.measure.dim),
        }
    }

    pub fn seeds(&self) -> SeedSequence {
        SeedSequence::new(self.seed)
    }
}

/// Per-path quantities shared by the drivers.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathSummary {
    pub index: usize,
    pub jumps: usize,
    /// `X_T`.
    pub x: Vec<f64>,
    pub lambda_min: f64,
    /// `δ(Vᵢ)` for every direction.
    pub skorohod: Vec<f64>,
    /// `∫ h dN` over `[0, T]`.
    pub h_sum: f64,
    /// Same sum with `h` replaced by the unscaled bump (`1` on the unit ball).
    pub literal_sum: f64,
}

/// Simulates `cfg.paths` paths and summarises each one.
pub fn simulate_paths(cfg: &ExperimentConfig, exec: &Executor) -> Result<Vec<PathSummary>> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    let measure = cfg.measure.build()?;
    let x0 = cfg.initial_state();
    let seeds = cfg.seeds().derive("paths");
    exec.try_map(cfg.paths, |p| {
        let path = measure.sample_path(cfg.horizon, &mut seeds.rng(p as u64))?;
        let traj = flow::solve_path(&model, &x0, &path, cfg.max_step)?;
        let rec = malliavin::malliavin_record(&traj, &measure)?;
        Ok(PathSummary {
            index: p,
            jumps: path.events.len(),
            x: traj.terminal.x.as_slice().to_vec(),
            lambda_min: rec.lambda_min,
            skorohod: rec.skorohod.as_slice().to_vec(),
            h_sum: path.h_sum(cfg.horizon),
            literal_sum: path.events.iter().map(|e| cutoff::h_literal(&e.mark)).sum(),
        })
    })
}
