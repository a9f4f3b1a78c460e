//! Per-path Malliavin objects.
//!
//! With `ξᵢ(s) = Bᵀ K_sᵀ eᵢ` evaluated at the pre-jump state and
//! `vᵢ(z, s) = h(z) ξᵢ(s)`:
//!
//! * `𝓜_t = Σ_j h(z_j) K_{s_j} B Bᵀ K_{s_j}ᵀ` (simplified Malliavin matrix),
//! * `D_{Vᵢ} X_t = J_t Σ_j K_{s_j} B ξᵢ(s_j) h(z_j)`, the `i`-th column of `J_t 𝓜_t`,
//! * `δ(Vᵢ) = Σ_j div(ρ h ξᵢ)(z_j) / ρ(z_j)`.
//!
//! The compensator of `δ(Vᵢ)` is `∫ div(ρ h ξ) dz`, which vanishes by the
//! divergence theorem because `ρ h ξ` is supported in `{|z| <= 2}` and has no
//! flux through centred spheres. The duality implemented by [`ibp_residual`] is
//!
//! ```text
//! E ⟨∇f(X_t), D_{Vᵢ} X_t⟩ = -E[f(X_t) δ(Vᵢ)]
//! ```

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{self, ModelSpec, Trajectory};
use crate::levy::{cutoff, JumpPath, StableLikeMeasure};
use crate::linalg;
use crate::parallel::{require_paths, Executor, SeedSequence};
use crate::stats::{z_score, MeanEstimate};

#[derive(Clone, Debug)]
pub struct MalliavinRecord {
    pub t: f64,
    pub m: DMatrix<f64>,
    pub lambda_min: f64,
    /// Column `i` is `D_{Vᵢ} X_t`.
    pub dvx: DMatrix<f64>,
    /// `δ(Vᵢ)` for `i = 0..d`.
    pub skorohod: DVector<f64>,
}

fn check_direction(traj: &Trajectory<'_>, i: usize) -> Result<()> {
    if i >= traj.model.dim {
        return Err(Error::Domain(format!("direction index {i} out of range for dimension {}", traj.model.dim)));
    }
    Ok(())
}

/// `ξᵢ(s_j)` for event `j`, as the columns of `Bᵀ K_{s_j}ᵀ`.
pub fn xi_matrix(traj: &Trajectory<'_>, j: usize) -> DMatrix<f64> {
    traj.model.noise.transpose() * traj.pre_jump[j].k.transpose()
}

/// Events whose mark lies inside the support of `h`.
fn contributing<'t>(traj: &'t Trajectory<'_>) -> impl Iterator<Item = (usize, f64)> + 't {
    traj.path
        .events
        .iter()
        .enumerate()
        .map(|(j, ev)| (j, cutoff::h(&ev.mark)))
        .filter(|&(_, h)| h > 0.0)
}

pub fn simplified_malliavin_matrix(traj: &Trajectory<'_>) -> DMatrix<f64> {
    let d = traj.model.dim;
    let mut m = DMatrix::zeros(d, d);
    for (j, h) in contributing(traj) {
        let kb = &traj.pre_jump[j].k * &traj.model.noise;
        m += &kb * kb.transpose() * h;
    }
    m
}

pub fn smallest_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    linalg::smallest_eigenvalue(m)
}

pub fn directional_derivative(traj: &Trajectory<'_>, i: usize) -> Result<DVector<f64>> {
    check_direction(traj, i)?;
    let d = traj.model.dim;
    let mut acc = DVector::zeros(d);
    for (j, h) in contributing(traj) {
        let kb = &traj.pre_jump[j].k * &traj.model.noise;
        let xi = xi_matrix(traj, j).column(i).into_owned();
        acc += kb * xi * h;
    }
    Ok(&traj.terminal.j * acc)
}

/// Re-solves the path with every jump update `X ← X + B z_j + ε B h(z_j) ξᵢ(s_j)`,
/// where `ξᵢ` is frozen from the base trajectory. Returns `X_T^ε`.
pub fn perturbed_replay(
    model: &ModelSpec,
    x0: &DVector<f64>,
    base: &Trajectory<'_>,
    i: usize,
    epsilon: f64,
    max_step: f64,
) -> Result<DVector<f64>> {
    check_direction(base, i)?;
    let kicks: Vec<Option<DVector<f64>>> = base
        .path
        .events
        .iter()
        .enumerate()
        .map(|(j, ev)| {
            let h = cutoff::h(&ev.mark);
            (epsilon != 0.0 && h > 0.0).then(|| {
                let xi = xi_matrix(base, j).column(i).into_owned();
                &model.noise * xi * (epsilon * h)
            })
        })
        .collect();
    let kick = |idx: usize| kicks[idx].clone();
    let traj = flow::solve_with_kicks(model, x0, base.path, max_step, Some(&kick), false)?;
    Ok(traj.terminal.x)
}

/// `δ(Vᵢ) = Σ_j [⟨∇ρ/ρ(z_j), ξᵢ(s_j)⟩ h(z_j) + ⟨∇h(z_j), ξᵢ(s_j)⟩]`.
pub fn skorohod_integral(traj: &Trajectory<'_>, measure: &StableLikeMeasure, i: usize) -> Result<f64> {
    check_direction(traj, i)?;
    Ok(skorohod_vector(traj, measure)?[i])
}

/// All `δ(Vᵢ)` at once: `Σ_j K_{s_j} B (h ∇log ρ + ∇h)(z_j)`.
pub fn skorohod_vector(traj: &Trajectory<'_>, measure: &StableLikeMeasure) -> Result<DVector<f64>> {
    let d = traj.model.dim;
    let mut acc = DVector::zeros(d);
    for (j, h) in contributing(traj) {
        let z = &traj.path.events[j].mark;
        let integrand = measure.log_density_grad(z)? * h + cutoff::grad_h(z);
        acc += &traj.pre_jump[j].k * (&traj.model.noise * integrand);
    }
    Ok(acc)
}

/// Integrand `div(ρ h ξ)(z) / ρ(z)` for a fixed direction `ξ`.
pub fn divergence_integrand(measure: &StableLikeMeasure, z: &DVector<f64>, xi: &DVector<f64>) -> Result<f64> {
    let h = cutoff::h(z);
    if h == 0.0 {
        return Ok(0.0);
    }
    Ok(measure.log_density_grad(z)?.dot(xi) * h + cutoff::grad_h(z).dot(xi))
}

pub fn malliavin_record(traj: &Trajectory<'_>, measure: &StableLikeMeasure) -> Result<MalliavinRecord> {
    let d = traj.model.dim;
    let mut m = DMatrix::zeros(d, d);
    let mut kbxi = DMatrix::zeros(d, d);
    for (j, h) in contributing(traj) {
        let kb = &traj.pre_jump[j].k * &traj.model.noise;
        let xi = xi_matrix(traj, j);
        m += &kb * kb.transpose() * h;
        kbxi += kb * xi * h;
    }
    let lambda_min = linalg::smallest_eigenvalue(&m)?;
    Ok(MalliavinRecord {
        t: traj.terminal.t,
        dvx: &traj.terminal.j * kbxi,
        m,
        lambda_min,
        skorohod: skorohod_vector(traj, measure)?,
    })
}

/// Test functions for the integration-by-parts check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum TestFunction {
    /// `cos⟨k, x⟩`.
    Cosine(Vec<f64>),
    /// `⟨k, x⟩` (unbounded; used with closed-form expectations).
    Linear(Vec<f64>),
    Constant(f64),
}

impl TestFunction {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            TestFunction::Cosine(k) => dot(k, x).cos(),
            TestFunction::Linear(k) => dot(k, x),
            TestFunction::Constant(c) => *c,
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            TestFunction::Cosine(k) => DVector::from_column_slice(k) * -dot(k, x).sin(),
            TestFunction::Linear(k) => DVector::from_column_slice(k),
            TestFunction::Constant(_) => DVector::zeros(x.len()),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            TestFunction::Cosine(k) | TestFunction::Linear(k) => Some(k.len()),
            TestFunction::Constant(_) => None,
        }
    }
}

fn dot(k: &[f64], x: &DVector<f64>) -> f64 {
    k.iter().zip(x.iter()).map(|(a, b)| a * b).sum()
}

#[derive(Clone, Debug, Serialize)]
pub struct IbpResult {
    pub direction: usize,
    /// `E ⟨∇f(X_t), D_{Vᵢ} X_t⟩`.
    pub lhs: MeanEstimate,
    /// `-E[f(X_t) δ(Vᵢ)]`.
    pub rhs: MeanEstimate,
    pub residual: f64,
    /// Standard error of the per-path difference.
    pub stderr: f64,
    pub z: f64,
}

impl IbpResult {
    pub fn passes(&self, sigmas: f64) -> bool {
        self.residual.abs() <= sigmas * self.stderr
    }
}

/// Shared setup for path-level Monte Carlo over one model.
#[derive(Clone, Debug)]
pub struct PathSetup<'a> {
    pub model: &'a ModelSpec,
    pub measure: &'a StableLikeMeasure,
    pub x0: DVector<f64>,
    pub horizon: f64,
    pub max_step: f64,
}

impl PathSetup<'_> {
    pub fn sample(&self, seeds: &SeedSequence, index: usize) -> Result<JumpPath> {
        self.measure.sample_path(self.horizon, &mut seeds.rng(index as u64))
    }
}

/// Monte Carlo estimate of both sides of the integration-by-parts identity
/// for every direction `i = 0..d`.
pub fn ibp_residual(
    setup: &PathSetup<'_>,
    f: &TestFunction,
    n_paths: usize,
    seeds: &SeedSequence,
    exec: &Executor,
) -> Result<Vec<IbpResult>> {
    require_paths(n_paths, 100, "integration-by-parts check")?;
    let d = setup.model.dim;
    if let Some(k) = f.dim() {
        crate::error::ensure_dim(d, k)?;
    }
    let samples = exec.try_map(n_paths, |p| -> Result<(Vec<f64>, Vec<f64>)> {
        let path = setup.sample(seeds, p)?;
        let traj = flow::solve_path(setup.model, &setup.x0, &path, setup.max_step)?;
        let rec = malliavin_record(&traj, setup.measure)?;
        let x = &traj.terminal.x;
        let grad = f.gradient(x);
        let fx = f.value(x);
        let lhs = (0..d).map(|i| grad.dot(&rec.dvx.column(i))).collect();
        let rhs = (0..d).map(|i| -fx * rec.skorohod[i]).collect();
        Ok((lhs, rhs))
    })?;
    Ok((0..d)
        .map(|i| {
            let lhs: Vec<f64> = samples.iter().map(|(l, _)| l[i]).collect();
            let rhs: Vec<f64> = samples.iter().map(|(_, r)| r[i]).collect();
            let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
            let diff = MeanEstimate::from_samples(&diff);
            IbpResult {
                direction: i,
                lhs: MeanEstimate::from_samples(&lhs),
                rhs: MeanEstimate::from_samples(&rhs),
                residual: diff.mean,
                stderr: diff.stderr,
                z: z_score(diff.mean, diff.stderr),
            }
        })
        .collect())
}
