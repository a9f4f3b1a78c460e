//! Event-driven integration of the state `X_t`, the Jacobi flow `J_t` and its
//! inverse `K_t` along one jump path.
//!
//! Between jumps the coupled system
//!
//! ```text
//! dX = (a(X) - B b_δ) dt,   dJ = ∇a(X) J dt,   dK = -K ∇a(X) dt
//! ```
//!
//! is advanced by classical RK4 with a fixed maximal step. Noise is additive,
//! so a jump only moves `X` (by `B z`); `J` and `K` feel it through `∇a(X)`
//! afterwards.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{ensure_dim, Error, Result};
use crate::levy::JumpPath;
use crate::linalg;

pub const DEFAULT_MAX_STEP: f64 = 1e-3;

/// Drift `a` and its Jacobian. Matrices are written column-major into `out`.
pub trait Drift: Send + Sync + fmt::Debug {
    fn eval(&self, x: &[f64], out: &mut [f64]);
    fn jacobian(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Debug)]
struct LinearDrift {
    a: DMatrix<f64>,
}

impl Drift for LinearDrift {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let d = self.a.nrows();
        for (r, o) in out.iter_mut().enumerate().take(d) {
            *o = (0..d).map(|c| self.a[(r, c)] * x[c]).sum();
        }
    }

    fn jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.a.as_slice());
    }
}

/// `a(x) = (0, sin x₁)`: bounded, smooth, `‖∇a‖ = |cos x₁| <= 1`.
#[derive(Debug)]
struct SineShear;

impl Drift for SineShear {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = x[0].sin();
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        // column-major [[0, 0], [cos x₁, 0]]
        out[0] = 0.0;
        out[1] = x[0].cos();
        out[2] = 0.0;
        out[3] = 0.0;
    }
}

/// Drift given by a pair of closures.
pub struct FnDrift<F, G> {
    pub eval: F,
    pub jacobian: G,
}

impl<F, G> fmt::Debug for FnDrift<F, G> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnDrift")
    }
}

impl<F, G> Drift for FnDrift<F, G>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        (self.jacobian)(x, out)
    }
}

/// The SDE `dX = a(X) dt + B dL`.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: String,
    pub dim: usize,
    drift: Arc<dyn Drift>,
    /// `B`; column `i` is `Bᵢ`.
    pub noise: DMatrix<f64>,
    /// `A` when `a(x) = A x`.
    pub linear: Option<DMatrix<f64>>,
    /// Declared `‖∇a‖_∞` (operator 2-norm).
    pub grad_bound: f64,
}

impl ModelSpec {
    pub fn linear(name: impl Into<String>, a: DMatrix<f64>, noise: DMatrix<f64>) -> Result<Self> {
        let dim = a.nrows();
        if !a.is_square() {
            return Err(Error::Domain("drift matrix must be square".into()));
        }
        check_noise(dim, &noise)?;
        let grad_bound = linalg::spectral_norm(&a);
        Ok(Self {
            name: name.into(),
            dim,
            drift: Arc::new(LinearDrift { a: a.clone() }),
            noise,
            linear: Some(a),
            grad_bound,
        })
    }

    pub fn zero_drift(name: impl Into<String>, noise: DMatrix<f64>) -> Result<Self> {
        let d = noise.nrows();
        Self::linear(name, DMatrix::zeros(d, d), noise)
    }

    pub fn nonlinear(
        name: impl Into<String>,
        drift: Arc<dyn Drift>,
        noise: DMatrix<f64>,
        grad_bound: f64,
    ) -> Result<Self> {
        let dim = noise.nrows();
        check_noise(dim, &noise)?;
        if !(grad_bound >= 0.0 && grad_bound.is_finite()) {
            return Err(Error::Config(format!("gradient bound must be finite and >= 0, got {grad_bound}")));
        }
        Ok(Self { name: name.into(), dim, drift, noise, linear: None, grad_bound })
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        self.drift.eval(x.as_slice(), out.as_mut_slice());
        out
    }

    pub fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        self.drift.jacobian(x.as_slice(), out.as_mut_slice());
        out
    }

    /// Column `Bᵢ`.
    pub fn noise_column(&self, i: usize) -> DVector<f64> {
        self.noise.column(i).into_owned()
    }
}

fn check_noise(dim: usize, noise: &DMatrix<f64>) -> Result<()> {
    if dim == 0 {
        return Err(Error::Domain("model dimension must be >= 1".into()));
    }
    ensure_dim(dim, noise.nrows())?;
    ensure_dim(dim, noise.ncols())
}

/// Models used throughout the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CatalogModel {
    /// `A = [[0,0],[1,0]]`, `B = [e₁, 0]`: Kalman rank 2 with degenerate noise.
    Kalman,
    /// `A = 0`, `B = [e₁, 0]`: rank deficient negative control.
    Degenerate,
    /// `a(x) = (0, sin x₁)`, `B = [e₁, 0]`.
    SineShear,
    /// `a ≡ 0`, `B = I` in any dimension.
    Isotropic,
}

impl CatalogModel {
    pub const ALL: [CatalogModel; 4] =
        [CatalogModel::Kalman, CatalogModel::Degenerate, CatalogModel::SineShear, CatalogModel::Isotropic];

    pub fn name(&self) -> &'static str {
        match self {
            CatalogModel::Kalman => "kalman",
            CatalogModel::Degenerate => "degenerate",
            CatalogModel::SineShear => "sine-shear",
            CatalogModel::Isotropic => "isotropic",
        }
    }

    /// Dimension of the model; `Isotropic` accepts any `dim >= 1`.
    pub fn build(&self, dim: usize) -> Result<ModelSpec> {
        let e1_noise = || DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        if !matches!(self, CatalogModel::Isotropic) {
            ensure_dim(2, dim)?;
        }
        match self {
            CatalogModel::Kalman => {
                ModelSpec::linear(self.name(), DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]), e1_noise())
            }
            CatalogModel::Degenerate => ModelSpec::linear(self.name(), DMatrix::zeros(2, 2), e1_noise()),
            CatalogModel::SineShear => ModelSpec::nonlinear(self.name(), Arc::new(SineShear), e1_noise(), 1.0),
            CatalogModel::Isotropic => ModelSpec::zero_drift(self.name(), DMatrix::identity(dim, dim)),
        }
    }
}

impl FromStr for CatalogModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CatalogModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = CatalogModel::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown model '{s}', expected one of {}", names.join(", ")))
            })
    }
}

impl fmt::Display for CatalogModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `(t, X_t, J_t, K_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub x: DVector<f64>,
    pub j: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

impl FlowState {
    pub fn initial(x0: DVector<f64>) -> Self {
        let d = x0.len();
        Self { t: 0.0, x: x0, j: DMatrix::identity(d, d), k: DMatrix::identity(d, d) }
    }

    /// `max |(J K - I)_{ij}|`.
    pub fn inversion_error(&self) -> f64 {
        linalg::distance_from_identity(&(&self.j * &self.k))
    }
}

/// Fixed-step RK4 on the flattened state `[X | J | K]` with reusable buffers.
struct Rk4 {
    d: usize,
    max_step: f64,
    shift: Vec<f64>,
    y: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    grad: Vec<f64>,
}

impl Rk4 {
    fn new(model: &ModelSpec, compensator_drift: &DVector<f64>, max_step: f64) -> Result<Self> {
        if !(max_step > 0.0 && max_step.is_finite()) {
            return Err(Error::Config(format!("RK4 step must be positive, got {max_step}")));
        }
        let d = model.dim;
        ensure_dim(d, compensator_drift.len())?;
        let shift = (&model.noise * compensator_drift).as_slice().to_vec();
        let n = d + 2 * d * d;
        Ok(Self {
            d,
            max_step,
            shift,
            y: vec![0.0; n],
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
            grad: vec![0.0; d * d],
        })
    }

    fn load(&mut self, s: &FlowState) {
        let d = self.d;
        self.y[..d].copy_from_slice(s.x.as_slice());
        self.y[d..d + d * d].copy_from_slice(s.j.as_slice());
        self.y[d + d * d..].copy_from_slice(s.k.as_slice());
    }

    fn store(&self, t: f64) -> FlowState {
        let d = self.d;
        FlowState {
            t,
            x: DVector::from_column_slice(&self.y[..d]),
            j: DMatrix::from_column_slice(d, d, &self.y[d..d + d * d]),
            k: DMatrix::from_column_slice(d, d, &self.y[d + d * d..]),
        }
    }

    fn rhs(drift: &dyn Drift, d: usize, shift: &[f64], grad: &mut [f64], y: &[f64], out: &mut [f64]) {
        let (x, rest) = y.split_at(d);
        let (jm, km) = rest.split_at(d * d);
        let (dx, drest) = out.split_at_mut(d);
        let (dj, dk) = drest.split_at_mut(d * d);
        drift.eval(x, dx);
        for (o, s) in dx.iter_mut().zip(shift) {
            *o -= s;
        }
        drift.jacobian(x, grad);
        // column-major: m[(r, c)] = m[r + c d]
        for c in 0..d {
            for r in 0..d {
                let mut gj = 0.0;
                let mut kg = 0.0;
                for m in 0..d {
                    gj += grad[r + m * d] * jm[m + c * d];
                    kg += km[r + m * d] * grad[m + c * d];
                }
                dj[r + c * d] = gj;
                dk[r + c * d] = -kg;
            }
        }
    }

    fn advance(&mut self, drift: &dyn Drift, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        let steps = (dt / self.max_step).ceil().max(1.0) as usize;
        let h = dt / steps as f64;
        let n = self.y.len();
        let d = self.d;
        for _ in 0..steps {
            Self::rhs(drift, d, &self.shift, &mut self.grad, &self.y, &mut self.k1);
            for i in 0..n {
                self.tmp[i] = self.y[i] + 0.5 * h * self.k1[i];
            }
            Self::rhs(drift, d, &self.shift, &mut self.grad, &self.tmp, &mut self.k2);
            for i in 0..n {
                self.tmp[i] = self.y[i] + 0.5 * h * self.k2[i];
            }
            Self::rhs(drift, d, &self.shift, &mut self.grad, &self.tmp, &mut self.k3);
            for i in 0..n {
                self.tmp[i] = self.y[i] + h * self.k3[i];
            }
            Self::rhs(drift, d, &self.shift, &mut self.grad, &self.tmp, &mut self.k4);
            for i in 0..n {
                self.y[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
            }
        }
    }

    fn check_finite(&self, t: f64) -> Result<()> {
        let d = self.d;
        if let Some(pos) = self.y.iter().position(|v| !v.is_finite()) {
            let part = if pos < d {
                format!("X[{pos}]")
            } else if pos < d + d * d {
                format!("J entry {}", pos - d)
            } else {
                format!("K entry {}", pos - d - d * d)
            };
            return Err(Error::Numeric(format!("non-finite {part} at t = {t}")));
        }
        Ok(())
    }
}

/// Advances `state` by `dt` without jumps.
pub fn integrate_between_jumps(state: &FlowState, dt: f64, model: &ModelSpec, max_step: f64) -> Result<FlowState> {
    integrate_with_drift(state, dt, model, &DVector::zeros(model.dim), max_step)
}

/// As [`integrate_between_jumps`] with the compensator drift `b_δ` removed.
pub fn integrate_with_drift(
    state: &FlowState,
    dt: f64,
    model: &ModelSpec,
    compensator_drift: &DVector<f64>,
    max_step: f64,
) -> Result<FlowState> {
    if !(dt >= 0.0) {
        return Err(Error::Domain(format!("time step must be >= 0, got {dt}")));
    }
    ensure_dim(model.dim, state.x.len())?;
    let mut rk = Rk4::new(model, compensator_drift, max_step)?;
    rk.load(state);
    rk.advance(model.drift.as_ref(), dt);
    rk.check_finite(state.t + dt)?;
    Ok(rk.store(state.t + dt))
}

/// `X ← X + B z`; time and flows are unchanged at the jump instant.
pub fn apply_jump(state: &FlowState, z: &DVector<f64>, model: &ModelSpec) -> FlowState {
    let mut next = state.clone();
    next.x += &model.noise * z;
    next
}

/// Solution of the flow system along one path.
#[derive(Clone, Debug)]
pub struct Trajectory<'a> {
    pub model: &'a ModelSpec,
    pub path: &'a JumpPath,
    /// States immediately before each event, aligned with `path.events`.
    pub pre_jump: Vec<FlowState>,
    pub terminal: FlowState,
}

impl Trajectory<'_> {
    /// Every recorded state, terminal included.
    pub fn states(&self) -> impl Iterator<Item = &FlowState> {
        self.pre_jump.iter().chain(std::iter::once(&self.terminal))
    }

    pub fn max_inversion_error(&self) -> f64 {
        self.states().map(FlowState::inversion_error).fold(0.0, f64::max)
    }

    /// `max ‖J_t‖ / e^{g t}` and `max ‖K_t‖ / e^{g t}` over recorded states,
    /// with `g` the declared gradient bound.
    pub fn norm_bound_ratio(&self) -> f64 {
        let g = self.model.grad_bound;
        self.states()
            .map(|s| {
                let bound = (g * s.t).exp();
                linalg::spectral_norm(&s.j).max(linalg::spectral_norm(&s.k)) / bound
            })
            .fold(0.0, f64::max)
    }
}

/// Extra state increment applied at event `index` on top of `B z`.
pub(crate) type Kick<'k> = &'k dyn Fn(usize) -> Option<DVector<f64>>;

pub(crate) fn solve_with_kicks<'a>(
    model: &'a ModelSpec,
    x0: &DVector<f64>,
    path: &'a JumpPath,
    max_step: f64,
    kick: Option<Kick<'_>>,
    record: bool,
) -> Result<Trajectory<'a>> {
    ensure_dim(model.dim, path.dim)?;
    ensure_dim(model.dim, x0.len())?;
    let mut rk = Rk4::new(model, &path.compensator_drift, max_step)?;
    let start = FlowState::initial(x0.clone());
    rk.load(&start);
    let d = model.dim;
    let mut t = 0.0;
    let mut pre_jump = Vec::with_capacity(if record { path.events.len() } else { 0 });
    let mut jump = DVector::zeros(d);
    for (idx, ev) in path.events.iter().enumerate() {
        rk.advance(model.drift.as_ref(), ev.time - t);
        t = ev.time;
        rk.check_finite(t)?;
        if record {
            pre_jump.push(rk.store(t));
        }
        model.noise.mul_to(&ev.mark, &mut jump);
        for (y, b) in rk.y[..d].iter_mut().zip(jump.iter()) {
            *y += b;
        }
        if let Some(extra) = kick.and_then(|k| k(idx)) {
            for (y, e) in rk.y[..d].iter_mut().zip(extra.iter()) {
                *y += e;
            }
        }
    }
    rk.advance(model.drift.as_ref(), path.horizon - t);
    rk.check_finite(path.horizon)?;
    Ok(Trajectory { model, path, pre_jump, terminal: rk.store(path.horizon) })
}

/// Alternates RK4 integration and jumps over the sorted events of `path`.
pub fn solve_path<'a>(
    model: &'a ModelSpec,
    x0: &DVector<f64>,
    path: &'a JumpPath,
    max_step: f64,
) -> Result<Trajectory<'a>> {
    solve_with_kicks(model, x0, path, max_step, None, true)
}
