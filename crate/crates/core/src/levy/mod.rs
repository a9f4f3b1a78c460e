//! Truncated stable-like jump noise.
//!
//! The Lévy measure has density `ρ(z) = ϑ(z) / |z|^{d+α}`. Jumps smaller than
//! the truncation radius `δ` are dropped; their compensator drift `b_δ` is
//! handed to the SDE drift instead. For the isotropic catalog `b_δ = 0`.

pub mod cutoff;

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::GaussLegendre;

/// Behaviour of the intensity outside the unit ball.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum OuterLaw {
    /// The same power law `ϑ / |z|^{d+α}` on all of `ℝᵈ∖{0}`.
    PowerLaw,
    /// Power law up to `radius`, no jumps beyond. `radius >= 2` keeps the
    /// support of the cutoff `h` untouched.
    Cutoff { radius: f64 },
}

/// Smooth anisotropic amplitude `ϑ(z) = ϑ₀ (1 + η sin⟨w, z⟩)` with `η ∈ [0, 1)`.
///
/// The perturbation is odd, so the mass of every centred shell is the same as
/// for the isotropic measure.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Anisotropy {
    pub strength: f64,
    pub wave: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StableLikeMeasure {
    pub dim: usize,
    pub alpha: f64,
    pub theta0: f64,
    pub trunc: f64,
    pub outer: OuterLaw,
    pub anisotropy: Option<Anisotropy>,
}

/// Surface area of the unit sphere in `ℝᵈ`.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI / (d - 2) as f64 * sphere_area(d - 2),
    }
}

impl StableLikeMeasure {
    pub fn new(dim: usize, alpha: f64, theta0: f64, trunc: f64) -> Result<Self> {
        if dim == 0 || dim > 16 {
            return Err(Error::Config(format!("dimension must lie in 1..=16, got {dim}")));
        }
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::Config(format!("stability index alpha must lie in (0, 2), got {alpha}")));
        }
        if !(theta0 >= 0.0 && theta0.is_finite()) {
            return Err(Error::Config(format!("amplitude theta0 must be finite and >= 0, got {theta0}")));
        }
        if !(trunc > 0.0 && trunc < 1.0) {
            return Err(Error::Config(format!("truncation radius must lie in (0, 1), got {trunc}")));
        }
        Ok(Self { dim, alpha, theta0, trunc, outer: OuterLaw::PowerLaw, anisotropy: None })
    }

    pub fn with_outer(mut self, outer: OuterLaw) -> Result<Self> {
        if let OuterLaw::Cutoff { radius } = outer {
            if !(radius >= 2.0 && radius.is_finite()) {
                return Err(Error::Config(format!("outer cutoff radius must be finite and >= 2, got {radius}")));
            }
        }
        self.outer = outer;
        Ok(self)
    }

    pub fn with_anisotropy(mut self, strength: f64, wave: DVector<f64>) -> Result<Self> {
        if !(0.0..1.0).contains(&strength) {
            return Err(Error::Config(format!("anisotropy strength must lie in [0, 1), got {strength}")));
        }
        crate::error::ensure_dim(self.dim, wave.len())?;
        self.anisotropy = if strength == 0.0 { None } else { Some(Anisotropy { strength, wave }) };
        Ok(self)
    }

    pub fn is_isotropic(&self) -> bool {
        self.anisotropy.is_none()
    }

    fn outer_radius(&self) -> f64 {
        match self.outer {
            OuterLaw::PowerLaw => f64::INFINITY,
            OuterLaw::Cutoff { radius } => radius,
        }
    }

    /// `ϑ(z)`.
    pub fn amplitude(&self, z: &DVector<f64>) -> f64 {
        match &self.anisotropy {
            None => self.theta0,
            Some(a) => self.theta0 * (1.0 + a.strength * a.wave.dot(z).sin()),
        }
    }

    /// Density `ρ(z)` of the (untruncated) Lévy measure.
    pub fn density(&self, z: &DVector<f64>) -> f64 {
        let r = z.norm();
        if r == 0.0 || r > self.outer_radius() {
            return 0.0;
        }
        self.amplitude(z) / r.powf(self.dim as f64 + self.alpha)
    }

    /// `∇ρ(z) / ρ(z)`.
    pub fn log_density_grad(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        crate::error::ensure_dim(self.dim, z.len())?;
        let r2 = z.norm_squared();
        if r2 == 0.0 {
            return Err(Error::Domain("log-density gradient is undefined at z = 0".into()));
        }
        let mut grad = z * (-(self.dim as f64 + self.alpha) / r2);
        if let Some(a) = &self.anisotropy {
            let phase = a.wave.dot(z);
            grad += &a.wave * (a.strength * phase.cos() / (1.0 + a.strength * phase.sin()));
        }
        Ok(grad)
    }

    /// `ν({r_lo <= |z| < r_hi})`, closed form.
    pub fn shell_mass(&self, r_lo: f64, r_hi: f64) -> f64 {
        let r_hi = r_hi.min(self.outer_radius());
        if r_hi <= r_lo {
            return 0.0;
        }
        let tail = |r: f64| if r.is_infinite() { 0.0 } else { r.powf(-self.alpha) };
        self.theta0 * sphere_area(self.dim) * (tail(r_lo) - tail(r_hi)) / self.alpha
    }

    /// `ν({|z| >= r})`.
    pub fn total_rate(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("tail mass needs r > 0, got {r}")));
        }
        Ok(self.shell_mass(r, f64::INFINITY))
    }

    /// Jump rate of the truncated process, `ν({|z| >= δ})`.
    pub fn jump_rate(&self) -> f64 {
        self.shell_mass(self.trunc, f64::INFINITY)
    }

    /// Radius with CDF value `q` under the normalised power law on `[r_lo, r_hi)`.
    pub fn radius_quantile(&self, q: f64, r_lo: f64, r_hi: f64) -> f64 {
        let a = self.alpha;
        let hi = r_hi.min(self.outer_radius());
        let lo_t = r_lo.powf(-a);
        let hi_t = if hi.is_infinite() { 0.0 } else { hi.powf(-a) };
        (lo_t - q * (lo_t - hi_t)).powf(-1.0 / a)
    }

    /// Draws a mark from `ν` restricted to `{r_lo <= |z| < r_hi}`, normalised.
    pub fn sample_mark<R: Rng + ?Sized>(&self, r_lo: f64, r_hi: f64, rng: &mut R) -> Result<DVector<f64>> {
        if !(r_lo > 0.0 && r_hi > r_lo) {
            return Err(Error::Domain(format!("mark shell needs 0 < r_lo < r_hi, got [{r_lo}, {r_hi})")));
        }
        if self.shell_mass(r_lo, r_hi) <= 0.0 {
            return Err(Error::Domain(format!("shell [{r_lo}, {r_hi}) has zero mass")));
        }
        loop {
            let q: f64 = rng.random();
            let radius = self.radius_quantile(q, r_lo, r_hi);
            let z = uniform_direction(self.dim, rng) * radius;
            // floating point can land exactly on the open upper end when q ~ 1
            if z.norm() >= r_hi.min(self.outer_radius()) && r_hi.is_finite() {
                continue;
            }
            match &self.anisotropy {
                None => return Ok(z),
                Some(a) => {
                    let accept = (1.0 + a.strength * a.wave.dot(&z).sin()) / (1.0 + a.strength);
                    if rng.random::<f64>() < accept {
                        return Ok(z);
                    }
                }
            }
        }
    }

    /// `b_δ = ∫_{δ <= |z| <= 1} z ν(dz)`. Zero for isotropic measures; for the
    /// anisotropic entry the odd part is integrated by radial × polar
    /// Gauss–Legendre quadrature.
    pub fn compensator_drift(&self) -> DVector<f64> {
        let Some(a) = &self.anisotropy else {
            return DVector::zeros(self.dim);
        };
        let k = a.wave.norm();
        if k == 0.0 {
            return DVector::zeros(self.dim);
        }
        let d = self.dim;
        // ∫_S ω sin(r⟨w, ω⟩) dω = ŵ · I(r|w|)
        let angular = |s: f64| -> f64 {
            match d {
                1 => 2.0 * s.sin(),
                _ => {
                    let gl = GaussLegendre::new(64);
                    sphere_area(d - 1)
                        * gl.integrate(0.0, PI, |psi| {
                            psi.cos() * (s * psi.cos()).sin() * psi.sin().powi(d as i32 - 2)
                        })
                }
            }
        };
        let gl = GaussLegendre::new(64);
        // substitute r = e^u to resolve the r^{-α} behaviour near δ
        let radial = gl.integrate(self.trunc.ln(), 0.0, |u| {
            let r = u.exp();
            r.powf(1.0 - self.alpha) * angular(r * k)
        });
        &a.wave * (self.theta0 * a.strength * radial / k)
    }

    /// `∫ g(|z|) ν(dz)` over `lo <= |z| <= hi` for a radial integrand `g`
    /// (isotropic part of the measure).
    pub fn radial_integral<F: Fn(f64) -> f64>(&self, lo: f64, hi: f64, g: F) -> f64 {
        let hi = hi.min(self.outer_radius());
        if hi <= lo {
            return 0.0;
        }
        let gl = GaussLegendre::new(96);
        let weight = |r: f64| g(r) * r.powf(-1.0 - self.alpha);
        let pieces: Vec<(f64, f64)> = [lo, 1.0, 2.0, hi]
            .windows(2)
            .map(|w| (w[0].max(lo), w[1].min(hi)))
            .filter(|(a, b)| b > a)
            .collect();
        let mut total = 0.0;
        for (a, b) in pieces {
            total += if a > 0.0 {
                gl.integrate(a.ln(), b.ln(), |u| {
                    let r = u.exp();
                    weight(r) * r
                })
            } else {
                gl.integrate(a, b, weight)
            };
        }
        self.theta0 * sphere_area(self.dim) * total
    }

    /// `∫_{|z| >= lo} h dν`.
    pub fn h_mass(&self, lo: f64) -> f64 {
        self.radial_integral(lo, 2.0, cutoff::h_radial)
    }

    /// Simulates the truncated jump process on `[0, horizon]`.
    pub fn sample_path<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> Result<JumpPath> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!("horizon must be finite and >= 0, got {horizon}")));
        }
        let rate = self.jump_rate();
        let mut events = Vec::new();
        if rate > 0.0 && horizon > 0.0 {
            let gaps = Exp::new(rate).map_err(|e| Error::Numeric(e.to_string()))?;
            let mut t = 0.0;
            loop {
                t += gaps.sample(rng);
                if t > horizon {
                    break;
                }
                let mark = self.sample_mark(self.trunc, f64::INFINITY, rng)?;
                events.push(JumpEvent { time: t, mark });
            }
        }
        Ok(JumpPath {
            dim: self.dim,
            horizon,
            events,
            compensator_drift: self.compensator_drift(),
        })
    }
}

pub fn uniform_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    if dim == 1 {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        return DVector::from_element(1, sign);
    }
    loop {
        let v = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-300 {
            return v / n;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: DVector<f64>,
}

/// One realisation of the truncated Poisson random measure on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpPath {
    pub dim: usize,
    pub horizon: f64,
    /// Events sorted by time.
    pub events: Vec<JumpEvent>,
    /// `b_δ`, subtracted from the drift to compensate the small jumps.
    pub compensator_drift: DVector<f64>,
}

impl JumpPath {
    pub fn empty(dim: usize, horizon: f64) -> Self {
        Self { dim, horizon, events: Vec::new(), compensator_drift: DVector::zeros(dim) }
    }

    pub fn from_events(dim: usize, horizon: f64, mut events: Vec<JumpEvent>) -> Self {
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Self { dim, horizon, events, compensator_drift: DVector::zeros(dim) }
    }

    /// `L_t = Σ_{s_j <= t} z_j - t b_δ`.
    pub fn levy_value(&self, t: f64) -> DVector<f64> {
        let mut l = &self.compensator_drift * (-t);
        for ev in self.events.iter().take_while(|e| e.time <= t) {
            l += &ev.mark;
        }
        l
    }

    /// Number of events in `[t0, t1]` whose mark satisfies `pred`.
    pub fn count_where<F: Fn(&DVector<f64>) -> bool>(&self, t0: f64, t1: f64, pred: F) -> usize {
        self.events
            .iter()
            .filter(|e| e.time >= t0 && e.time <= t1 && pred(&e.mark))
            .count()
    }

    /// `∫_0^t ∫ h(z) N(dz, ds)`.
    pub fn h_sum(&self, t: f64) -> f64 {
        self.events
            .iter()
            .take_while(|e| e.time <= t)
            .map(|e| cutoff::h(&e.mark))
            .sum()
    }
}
