//! Mark perturbations `v^ε(z, s) = z + ε h(z) ξ(s)` and the Radon–Nikodym
//! weight that undoes them.
//!
//! With `u^ε` the inverse of `v^ε` and
//! `φ^ε(z, s) = ρ(u^ε(z, s)) |det ∂u^ε/∂z| / ρ(z)`, the weight
//!
//! ```text
//! Z^ε_t = exp( Σ_{s_j <= t} log φ^ε(z_j, s_j) - ∫_0^t ∫ (φ^ε - 1) dν ds )
//! ```
//!
//! is the density of the intensity `φ^ε ν` (the image of `ν` under `v^ε`)
//! against `ν`. Consequently `L^ε = L + ε Σ h(z_j) ξ(s_j)` under `P` has the
//! same law as `L` under `Z^ε · P`, which is what [`law_equality_test`]
//! measures. `ξ` is deterministic here, so `φ^ε` and the compensator do not
//! depend on the path.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{ensure_dim, Error, Result};
use crate::levy::{cutoff, JumpPath, StableLikeMeasure};
use crate::malliavin::divergence_integrand;
use crate::parallel::{require_paths, Executor, SeedSequence};
use crate::quad::{trapezoid_weights, GaussLegendre};
use crate::stats::{fit_line, z_score, MeanEstimate};

/// Relative change on order doubling above which the compensator is flagged.
pub const QUADRATURE_REL_TOL: f64 = 1e-6;

/// Deterministic direction field `s ↦ ξ(s)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Xi {
    Constant(Vec<f64>),
    /// `amplitude · sin(omega s + phase)`.
    Sinusoid { amplitude: Vec<f64>, omega: f64, phase: f64 },
}

impl Xi {
    pub fn dim(&self) -> usize {
        match self {
            Xi::Constant(v) => v.len(),
            Xi::Sinusoid { amplitude, .. } => amplitude.len(),
        }
    }

    pub fn at(&self, s: f64) -> DVector<f64> {
        match self {
            Xi::Constant(v) => DVector::from_column_slice(v),
            Xi::Sinusoid { amplitude, omega, phase } => {
                DVector::from_column_slice(amplitude) * (omega * s + phase).sin()
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            Xi::Constant(v) | Xi::Sinusoid { amplitude: v, .. } => v.iter().map(|c| c * c).sum::<f64>().sqrt(),
        }
    }

    fn is_time_independent(&self) -> bool {
        matches!(self, Xi::Constant(_)) || self.sup_norm() == 0.0
    }
}

/// Whether `φ^ε` carries the Jacobian determinant of `u^ε`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PhiConvention {
    /// `ρ(u) |det ∂u/∂z| / ρ(z)`: the density of the image measure.
    #[default]
    Corrected,
    /// `ρ(u) / ρ(z)`, kept for comparison.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbationSpec {
    pub xi: Xi,
    pub epsilon: f64,
    pub convention: PhiConvention,
}

impl PerturbationSpec {
    pub fn new(xi: Xi, epsilon: f64) -> Result<Self> {
        let spec = Self { xi, epsilon, convention: PhiConvention::Corrected };
        spec.check()?;
        Ok(spec)
    }

    pub fn with_convention(mut self, convention: PhiConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let spec = Self { epsilon, ..self.clone() };
        spec.check()?;
        Ok(spec)
    }

    /// `ε sup|ξ| Lip(h)`; the inverse map exists and is found by contraction
    /// when this is below 1/2.
    pub fn contraction(&self) -> f64 {
        self.epsilon * self.xi.sup_norm() * cutoff::lipschitz_h()
    }

    pub fn check(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        let c = self.contraction();
        if !(c < 0.5) {
            return Err(Error::Config(format!(
                "contraction condition violated: eps * sup|xi| * Lip(h) = {c:.4} >= 1/2 (Lip(h) = {:.4})",
                cutoff::lipschitz_h()
            )));
        }
        Ok(())
    }

    /// `v^ε(z, s)`.
    pub fn forward(&self, z: &DVector<f64>, s: f64) -> DVector<f64> {
        z + self.xi.at(s) * (self.epsilon * cutoff::h(z))
    }
}

/// Solves `u + ε h(u) ξ(s) = z` to a residual of `1e-12`.
pub fn inverse_perturbation(z: &DVector<f64>, s: f64, spec: &PerturbationSpec) -> Result<DVector<f64>> {
    spec.check()?;
    ensure_dim(spec.xi.dim(), z.len())?;
    let xi = spec.xi.at(s);
    let eps = spec.epsilon;
    // h vanishes on |z| >= 2, so u = z solves the equation there
    if eps == 0.0 || z.norm() >= 2.0 || xi.iter().all(|&c| c == 0.0) {
        return Ok(z.clone());
    }
    let mut u = z.clone();
    for _ in 0..200 {
        let next = z - &xi * (eps * cutoff::h(&u));
        let step = (&next - &u).norm();
        u = next;
        if step < 1e-9 {
            break;
        }
    }
    // Newton polish; the Jacobian I + ε ξ ∇hᵀ is inverted by Sherman–Morrison
    for _ in 0..8 {
        let r = &u + &xi * (eps * cutoff::h(&u)) - z;
        if r.norm() <= 1e-15 {
            break;
        }
        let g = cutoff::grad_h(&u);
        let correction = &r - &xi * (eps * g.dot(&r) / (1.0 + eps * g.dot(&xi)));
        u -= correction;
    }
    let residual = (&u + &xi * (eps * cutoff::h(&u)) - z).norm();
    if residual > 1e-12 {
        return Err(Error::Numeric(format!("inverse perturbation did not converge: residual {residual:e}")));
    }
    let r = z.norm();
    if r <= 1.0 && (&u - z).norm() > 2.0 * eps * spec.xi.sup_norm() * r.powi(4) * (1.0 + 1e-12) {
        return Err(Error::Numeric(format!("|u - z| exceeds 2 eps sup|xi| |z|^4 at |z| = {r}")));
    }
    Ok(u)
}

/// `φ^ε(z, s)` under the spec's convention.
pub fn rn_mark_density(z: &DVector<f64>, s: f64, spec: &PerturbationSpec, measure: &StableLikeMeasure) -> Result<f64> {
    ensure_dim(measure.dim, z.len())?;
    if spec.epsilon == 0.0 || z.norm() >= 2.0 {
        spec.check()?;
        return Ok(1.0);
    }
    let u = inverse_perturbation(z, s, spec)?;
    let (rho_u, rho_z) = (measure.density(&u), measure.density(z));
    if !(rho_u > 0.0 && rho_z > 0.0) {
        return Err(Error::Numeric(format!("nonpositive Lévy density at z = {z:?} or u = {u:?}")));
    }
    let mut phi = rho_u / rho_z;
    if spec.convention == PhiConvention::Corrected {
        // det ∂u/∂z = 1 / det(I + ε ξ ∇h(u)ᵀ) = 1 / (1 + ε ⟨∇h(u), ξ⟩)
        phi /= 1.0 + spec.epsilon * cutoff::grad_h(&u).dot(&spec.xi.at(s));
    }
    Ok(phi)
}

/// Orders of the tensor-product compensator quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct QuadratureOrders {
    /// Gauss–Legendre nodes per radial piece (`[δ, 1]` and `[1, 2]`, in `log r`).
    pub radial: usize,
    /// Trapezoid nodes on the circle (ignored for `d = 1`).
    pub angular: usize,
    /// Trapezoid intervals in time.
    pub time: usize,
}

impl Default for QuadratureOrders {
    fn default() -> Self {
        Self { radial: 64, angular: 64, time: 64 }
    }
}

impl QuadratureOrders {
    fn doubled(&self) -> Self {
        Self { radial: 2 * self.radial, angular: 2 * self.angular, time: 2 * self.time }
    }
}

/// `s ↦ ∫ (φ^ε(z, s) - 1) ν(dz)` tabulated on a time grid, integrated by the
/// trapezoid rule.
#[derive(Clone, Debug, Serialize)]
pub struct Compensator {
    pub horizon: f64,
    pub times: Vec<f64>,
    pub rates: Vec<f64>,
    /// Relative change of the horizon value on order doubling.
    pub rel_change: f64,
    pub converged: bool,
}

impl Compensator {
    pub fn new(spec: &PerturbationSpec, measure: &StableLikeMeasure, horizon: f64, orders: QuadratureOrders) -> Result<Self> {
        spec.check()?;
        ensure_dim(measure.dim, spec.xi.dim())?;
        if measure.dim > 2 {
            return Err(Error::Domain(format!("compensator quadrature supports d <= 2, got {}", measure.dim)));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!("horizon must be finite and >= 0, got {horizon}")));
        }
        if orders.radial == 0 || orders.angular == 0 || orders.time == 0 {
            return Err(Error::Config("quadrature orders must be positive".into()));
        }
        let (times, rates, scale) = tabulate(spec, measure, horizon, orders)?;
        let coarse = trapezoid(&times, &rates, horizon);
        let (t2, r2, _) = tabulate(spec, measure, horizon, orders.doubled())?;
        let fine = trapezoid(&t2, &r2, horizon);
        let rel_change = if scale > 0.0 { (fine - coarse).abs() / scale } else { 0.0 };
        let converged = rel_change <= QUADRATURE_REL_TOL;
        if !converged {
            log::warn!("compensator quadrature changed by {rel_change:e} (relative) on order doubling");
        }
        Ok(Self { horizon, times, rates, rel_change, converged })
    }

    /// `∫_0^t ∫ (φ^ε - 1) dν ds`.
    pub fn integral(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t <= self.horizon * (1.0 + 1e-12)) {
            return Err(Error::Domain(format!("time {t} outside the tabulated range [0, {}]", self.horizon)));
        }
        Ok(trapezoid(&self.times, &self.rates, t))
    }
}

fn trapezoid(times: &[f64], rates: &[f64], t: f64) -> f64 {
    let mut total = 0.0;
    for k in 1..times.len() {
        let (a, b) = (times[k - 1], times[k]);
        if a >= t {
            break;
        }
        let (fa, fb) = (rates[k - 1], rates[k]);
        if b <= t {
            total += 0.5 * (b - a) * (fa + fb);
        } else {
            let ft = fa + (fb - fa) * (t - a) / (b - a);
            total += 0.5 * (t - a) * (fa + ft);
        }
    }
    total
}

fn tabulate(
    spec: &PerturbationSpec,
    measure: &StableLikeMeasure,
    horizon: f64,
    orders: QuadratureOrders,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let gl = GaussLegendre::new(orders.radial);
    let directions: Vec<(DVector<f64>, f64)> = match measure.dim {
        1 => vec![(DVector::from_element(1, 1.0), 1.0), (DVector::from_element(1, -1.0), 1.0)],
        _ => (0..orders.angular)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / orders.angular as f64;
                (DVector::from_column_slice(&[th.cos(), th.sin()]), 2.0 * PI / orders.angular as f64)
            })
            .collect(),
    };
    let pieces: Vec<(f64, f64)> = [measure.trunc, 1.0, 2.0]
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| (w[0].ln(), w[1].ln()))
        .collect();
    let d = measure.dim as i32;
    let spatial = |s: f64| -> Result<(f64, f64)> {
        let (mut signed, mut abs) = (0.0, 0.0);
        for (omega, w_dir) in &directions {
            for &(a, b) in &pieces {
                let half = 0.5 * (b - a);
                for (x, w) in gl.nodes.iter().zip(&gl.weights) {
                    let r = (a + b) * 0.5 + half * x;
                    let r = r.exp();
                    let z = omega * r;
                    let phi = rn_mark_density(&z, s, spec, measure)?;
                    let mass = w_dir * w * half * measure.density(&z) * r.powi(d);
                    signed += (phi - 1.0) * mass;
                    abs += (phi - 1.0).abs() * mass;
                }
            }
        }
        Ok((signed, abs))
    };
    if spec.xi.is_time_independent() || horizon == 0.0 {
        let (rate, abs) = spatial(0.0)?;
        return Ok((vec![0.0, horizon], vec![rate, rate], abs * horizon));
    }
    let mut times = Vec::with_capacity(orders.time + 1);
    let mut rates = Vec::with_capacity(orders.time + 1);
    let mut scale = 0.0;
    for (s, w) in trapezoid_weights(0.0, horizon, orders.time) {
        let (rate, abs) = spatial(s)?;
        times.push(s);
        rates.push(rate);
        scale += w * abs;
    }
    Ok((times, rates, scale))
}

/// Which parts of `Z^ε` to apply; the non-default variants are negative controls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightVariant {
    #[default]
    Full,
    /// `Z ≡ 1`.
    Omitted,
    /// Jump product only, no compensator exponential.
    NoCompensator,
}

/// Precomputed weight for one `(spec, measure, horizon)`; read-only, shared
/// across workers.
#[derive(Clone, Debug)]
pub struct GirsanovWeight {
    pub spec: PerturbationSpec,
    pub measure: StableLikeMeasure,
    pub compensator: Compensator,
    pub variant: WeightVariant,
}

impl GirsanovWeight {
    pub fn new(spec: &PerturbationSpec, measure: &StableLikeMeasure, horizon: f64, orders: QuadratureOrders) -> Result<Self> {
        Ok(Self {
            compensator: Compensator::new(spec, measure, horizon, orders)?,
            spec: spec.clone(),
            measure: measure.clone(),
            variant: WeightVariant::Full,
        })
    }

    pub fn with_variant(mut self, variant: WeightVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn log_weight(&self, path: &JumpPath, t: f64) -> Result<f64> {
        if self.variant == WeightVariant::Omitted || self.spec.epsilon == 0.0 {
            return Ok(0.0);
        }
        let mut log_z = 0.0;
        for ev in path.events.iter().take_while(|e| e.time <= t) {
            log_z += rn_mark_density(&ev.mark, ev.time, &self.spec, &self.measure)?.ln();
        }
        if self.variant == WeightVariant::Full {
            log_z -= self.compensator.integral(t)?;
        }
        Ok(log_z)
    }

    pub fn weight(&self, path: &JumpPath, t: f64) -> Result<f64> {
        let w = self.log_weight(path, t)?.exp();
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::Numeric(format!("Girsanov weight {w} is not a positive finite number")));
        }
        Ok(w)
    }
}

/// `Z^ε_t` with default quadrature orders.
pub fn girsanov_weight(path: &JumpPath, spec: &PerturbationSpec, measure: &StableLikeMeasure, t: f64) -> Result<f64> {
    GirsanovWeight::new(spec, measure, t, QuadratureOrders::default())?.weight(path, t)
}

/// `L^ε_t = L_t + ε Σ_{s_j <= t} h(z_j) ξ(s_j)`.
pub fn perturbed_levy_value(path: &JumpPath, spec: &PerturbationSpec, t: f64) -> DVector<f64> {
    let mut l = path.levy_value(t);
    for ev in path.events.iter().take_while(|e| e.time <= t) {
        let h = cutoff::h(&ev.mark);
        if h > 0.0 {
            l += spec.xi.at(ev.time) * (spec.epsilon * h);
        }
    }
    l
}

/// Test functions of `L_T` for the law comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum LawFunction {
    /// `cos⟨k, L⟩`.
    Cos(Vec<f64>),
    /// `sin⟨k, L⟩`.
    Sin(Vec<f64>),
    /// `clamp(L_coord, -bound, bound)`.
    Clipped { coord: usize, bound: f64 },
}

impl LawFunction {
    /// Real and imaginary parts of `e^{i⟨k, L⟩}` for `k ∈ {e₁, .., e_d, Σ eᵢ}`
    /// and every coordinate clipped at 2.
    pub fn catalog(dim: usize) -> Vec<LawFunction> {
        let mut ks: Vec<Vec<f64>> = (0..dim)
            .map(|i| {
                let mut k = vec![0.0; dim];
                k[i] = 1.0;
                k
            })
            .collect();
        if dim > 1 {
            ks.push(vec![1.0; dim]);
        }
        let mut out = Vec::new();
        for k in ks {
            out.push(LawFunction::Cos(k.clone()));
            out.push(LawFunction::Sin(k));
        }
        out.extend((0..dim).map(|coord| LawFunction::Clipped { coord, bound: 2.0 }));
        out
    }

    pub fn eval(&self, l: &DVector<f64>) -> f64 {
        let dot = |k: &[f64]| k.iter().zip(l.iter()).map(|(a, b)| a * b).sum::<f64>();
        match self {
            LawFunction::Cos(k) => dot(k).cos(),
            LawFunction::Sin(k) => dot(k).sin(),
            LawFunction::Clipped { coord, bound } => l[*coord].clamp(-bound, *bound),
        }
    }

    pub fn name(&self) -> String {
        let fmt = |k: &[f64]| k.iter().map(|c| format!("{c}")).collect::<Vec<_>>().join(",");
        match self {
            LawFunction::Cos(k) => format!("cos<({}),L>", fmt(k)),
            LawFunction::Sin(k) => format!("sin<({}),L>", fmt(k)),
            LawFunction::Clipped { coord, bound } => format!("clip(L{},{bound})", coord + 1),
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        match self {
            LawFunction::Cos(k) | LawFunction::Sin(k) => ensure_dim(d, k.len()),
            LawFunction::Clipped { coord, .. } if *coord >= d => {
                Err(Error::Domain(format!("coordinate {coord} out of range for dimension {d}")))
            }
            LawFunction::Clipped { .. } => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LawRow {
    pub function: String,
    /// `E[Z^ε_T g(L_T)]`.
    pub weighted: MeanEstimate,
    /// `E[g(L^ε_T)]` on independent paths.
    pub perturbed: MeanEstimate,
    pub z: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LawReport {
    pub epsilon: f64,
    pub variant: WeightVariant,
    pub convention: PhiConvention,
    pub rows: Vec<LawRow>,
    /// Sample mean of the weight on the base paths.
    pub mean_weight: MeanEstimate,
    pub compensator_converged: bool,
}

impl LawReport {
    pub fn max_abs_z(&self) -> f64 {
        self.rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max)
    }

    pub fn within(&self, sigmas: f64) -> bool {
        self.max_abs_z() <= sigmas
    }
}

/// Compares `E[Z^ε_T g(L_T)]` with `E[g(L^ε_T)]` on two independent path
/// samples for every `g`.
#[allow(clippy::too_many_arguments)]
pub fn law_equality_test(
    measure: &StableLikeMeasure,
    spec: &PerturbationSpec,
    horizon: f64,
    n_paths: usize,
    test_fns: &[LawFunction],
    variant: WeightVariant,
    seeds: &SeedSequence,
    exec: &Executor,
) -> Result<LawReport> {
    require_paths(n_paths, 10_000, "law-equality test")?;
    ensure_dim(measure.dim, spec.xi.dim())?;
    for g in test_fns {
        g.check_dim(measure.dim)?;
    }
    let weight = GirsanovWeight::new(spec, measure, horizon, QuadratureOrders::default())?.with_variant(variant);
    let (base_seeds, pert_seeds) = (seeds.derive("law-base"), seeds.derive("law-perturbed"));
    let base = exec.try_map(n_paths, |p| -> Result<(f64, Vec<f64>)> {
        let path = measure.sample_path(horizon, &mut base_seeds.rng(p as u64))?;
        let z = weight.weight(&path, horizon)?;
        let l = path.levy_value(horizon);
        Ok((z, test_fns.iter().map(|g| z * g.eval(&l)).collect()))
    })?;
    let perturbed = exec.try_map(n_paths, |p| -> Result<Vec<f64>> {
        let path = measure.sample_path(horizon, &mut pert_seeds.rng(p as u64))?;
        let l = perturbed_levy_value(&path, spec, horizon);
        Ok(test_fns.iter().map(|g| g.eval(&l)).collect())
    })?;
    let weights: Vec<f64> = base.iter().map(|(z, _)| *z).collect();
    let rows = test_fns
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let w: Vec<f64> = base.iter().map(|(_, v)| v[k]).collect();
            let q: Vec<f64> = perturbed.iter().map(|v| v[k]).collect();
            let (weighted, perturbed) = (MeanEstimate::from_samples(&w), MeanEstimate::from_samples(&q));
            LawRow { function: g.name(), z: weighted.z_against(&perturbed), weighted, perturbed }
        })
        .collect();
    Ok(LawReport {
        epsilon: spec.epsilon,
        variant,
        convention: spec.convention,
        rows,
        mean_weight: MeanEstimate::from_samples(&weights),
        compensator_converged: weight.compensator.converged,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct WeightMoments {
    pub t: f64,
    /// `E[Z^ε_t]`, should be 1.
    pub first: MeanEstimate,
    /// `E[(Z^ε_t)²]` on the first half and on all paths.
    pub second_half: f64,
    pub second_full: f64,
    pub min_weight: f64,
}

impl WeightMoments {
    pub fn martingale_z(&self) -> f64 {
        z_score(self.first.mean - 1.0, self.first.stderr)
    }

    pub fn second_moment_rel_change(&self) -> f64 {
        (self.second_full - self.second_half).abs() / self.second_half.abs().max(f64::MIN_POSITIVE)
    }
}

/// First and second moments of `Z^ε_t` at each `t` in `times`, on shared paths.
pub fn weight_moments(
    measure: &StableLikeMeasure,
    spec: &PerturbationSpec,
    times: &[f64],
    n_paths: usize,
    seeds: &SeedSequence,
    exec: &Executor,
) -> Result<Vec<WeightMoments>> {
    require_paths(n_paths, 100, "weight moments")?;
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let weight = GirsanovWeight::new(spec, measure, horizon, QuadratureOrders::default())?;
    let seeds = seeds.derive("weight-moments");
    let per_path = exec.try_map(n_paths, |p| -> Result<Vec<f64>> {
        let path = measure.sample_path(horizon, &mut seeds.rng(p as u64))?;
        times.iter().map(|&t| weight.weight(&path, t)).collect()
    })?;
    Ok(times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let z: Vec<f64> = per_path.iter().map(|v| v[k]).collect();
            let sq: Vec<f64> = z.iter().map(|w| w * w).collect();
            WeightMoments {
                t,
                first: MeanEstimate::from_samples(&z),
                second_half: MeanEstimate::from_samples(&sq[..n_paths / 2]).mean,
                second_full: MeanEstimate::from_samples(&sq).mean,
                min_weight: z.iter().copied().fold(f64::INFINITY, f64::min),
            }
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct IbpLimitRow {
    pub epsilon: f64,
    /// `E |((Z^ε_T)^{-1} - 1)/ε - δ(V)|²`.
    pub gap: MeanEstimate,
}

#[derive(Clone, Debug, Serialize)]
pub struct IbpLimitTable {
    pub rows: Vec<IbpLimitRow>,
    pub monotone: bool,
    /// Log-log slope of the gap against `ε` (informational).
    pub slope: Option<f64>,
}

/// Mean-square gap between `((Z^ε)^{-1} - 1)/ε` and `δ(V) = Σ div(ρ h ξ)/ρ (z_j)`
/// over a decreasing `ε` grid, on common paths.
pub fn ibp_limit_check(
    measure: &StableLikeMeasure,
    spec: &PerturbationSpec,
    eps_grid: &[f64],
    horizon: f64,
    n_paths: usize,
    seeds: &SeedSequence,
    exec: &Executor,
) -> Result<IbpLimitTable> {
    require_paths(n_paths, 100, "IBP limit check")?;
    if eps_grid.is_empty() || eps_grid.iter().any(|&e| !(e > 0.0)) || eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("epsilon grid must be positive and strictly decreasing".into()));
    }
    let weights = eps_grid
        .iter()
        .map(|&e| GirsanovWeight::new(&spec.with_epsilon(e)?, measure, horizon, QuadratureOrders::default()))
        .collect::<Result<Vec<_>>>()?;
    let seeds = seeds.derive("ibp-limit");
    let per_path = exec.try_map(n_paths, |p| -> Result<Vec<f64>> {
        let path = measure.sample_path(horizon, &mut seeds.rng(p as u64))?;
        let mut delta = 0.0;
        for ev in &path.events {
            delta += divergence_integrand(measure, &ev.mark, &spec.xi.at(ev.time))?;
        }
        weights
            .iter()
            .zip(eps_grid)
            .map(|(w, &e)| {
                let inv = (-w.log_weight(&path, horizon)?).exp_m1();
                Ok((inv / e - delta).powi(2))
            })
            .collect()
    })?;
    let rows: Vec<IbpLimitRow> = eps_grid
        .iter()
        .enumerate()
        .map(|(k, &epsilon)| IbpLimitRow {
            epsilon,
            gap: MeanEstimate::from_samples(&per_path.iter().map(|v| v[k]).collect::<Vec<_>>()),
        })
        .collect();
    let monotone = rows.windows(2).all(|w| w[1].gap.mean <= w[0].gap.mean);
    let slope = if rows.iter().all(|r| r.gap.mean > 0.0) && rows.len() >= 2 {
        let x: Vec<f64> = rows.iter().map(|r| r.epsilon.ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.gap.mean.ln()).collect();
        fit_line(&x, &y).map(|f| f.slope)
    } else {
        None
    };
    Ok(IbpLimitTable { rows, monotone, slope })
}
