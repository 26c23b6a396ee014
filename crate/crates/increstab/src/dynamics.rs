//! Vector fields, input signals and fixed-step integration.
//!
//! Everything downstream — certificate verification, abstraction building,
//! game replay — consumes trajectories produced here, so the integrator is
//! deliberately boring: classic fourth-order Runge-Kutta with a fixed step,
//! no adaptivity, no hidden state. Given the same field, initial state,
//! input and step it performs the identical sequence of floating-point
//! operations on every run and on every thread, which is what makes the
//! serialized artifacts byte-reproducible.
//!
//! The module also hosts the *empirical* incremental-stability check: two
//! trajectories driven by their own inputs are integrated side by side and
//! their distance is compared against an exponential envelope
//!
//! ```text
//!     d(x(t), x'(t))  <=  C * exp(-lambda t) * d(x(0), x'(0)) + gamma * sup ||u - u'||
//! ```
//!
//! at every sample instant. This is a falsification harness, not a proof:
//! it can only ever report a violated envelope or "no violation found".

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::linalg;

/// States whose magnitude passes this limit (or stops being finite) abort an
/// integration as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

/// Step size used for finite-difference Jacobians when no analytic one is
/// attached to the field.
pub const FD_STEP: f64 = 1e-6;

type FieldFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
type JacobianFn = dyn Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync;

/// A controlled vector field `dx/dt = f(x, u)`.
///
/// The right-hand side writes into a caller-provided buffer so the hot loops
/// (two million transition integrations for a full-resolution abstraction)
/// never allocate. Analytic Jacobians are optional; central finite
/// differences with step [`FD_STEP`] fill in when they are absent.
#[derive(Clone)]
pub struct VectorField {
    state_dim: usize,
    input_dim: usize,
    f: Arc<FieldFn>,
    jac_x: Option<Arc<JacobianFn>>,
    jac_u: Option<Arc<JacobianFn>>,
}

impl VectorField {
    pub fn new<F>(state_dim: usize, input_dim: usize, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { state_dim, input_dim, f: Arc::new(f), jac_x: None, jac_u: None }
    }

    /// Attaches analytic Jacobians `df/dx` and `df/du`.
    pub fn with_jacobians<Jx, Ju>(mut self, jac_x: Jx, jac_u: Ju) -> Self
    where
        Jx: Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        Ju: Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jac_x = Some(Arc::new(jac_x));
        self.jac_u = Some(Arc::new(jac_u));
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn has_analytic_jacobians(&self) -> bool {
        self.jac_x.is_some()
    }

    /// Evaluates `f(x, u)` into `out`.
    pub fn eval(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.state_dim);
        debug_assert_eq!(u.len(), self.input_dim);
        debug_assert_eq!(out.len(), self.state_dim);
        (self.f)(x, u, out);
    }

    /// Convenience allocating evaluation.
    pub fn eval_vec(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim];
        self.eval(x, u, &mut out);
        out
    }

    /// `df/dx` at `(x, u)` — analytic when attached, otherwise central
    /// differences.
    pub fn jacobian_x(&self, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        if let Some(jac) = &self.jac_x {
            return jac(x, u);
        }
        self.fd_jacobian_x(x, u, 0.0)
    }

    /// `df/du` at `(x, u)`.
    pub fn jacobian_u(&self, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        if let Some(jac) = &self.jac_u {
            return jac(x, u);
        }
        let mut m = DMatrix::zeros(self.state_dim, self.input_dim);
        let mut up = u.to_vec();
        let mut um = u.to_vec();
        let mut fp = vec![0.0; self.state_dim];
        let mut fm = vec![0.0; self.state_dim];
        for j in 0..self.input_dim {
            up[j] = u[j] + FD_STEP;
            um[j] = u[j] - FD_STEP;
            (self.f)(x, &up, &mut fp);
            (self.f)(x, &um, &mut fm);
            for i in 0..self.state_dim {
                m[(i, j)] = (fp[i] - fm[i]) / (2.0 * FD_STEP);
            }
            up[j] = u[j];
            um[j] = u[j];
        }
        m
    }

    /// Finite-difference `df/dx`. `side = 0` is central, `side = +1/-1` the
    /// one-sided variants used to sniff out kinks of piecewise-smooth fields:
    /// where forward and backward differences disagree the field is not
    /// differentiable and matrix-inequality checks must skip the sample.
    pub fn fd_jacobian_x(&self, x: &[f64], u: &[f64], side: f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.state_dim, self.state_dim);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        let mut fp = vec![0.0; self.state_dim];
        let mut fm = vec![0.0; self.state_dim];
        for j in 0..self.state_dim {
            let (hp, hm) = match side {
                s if s > 0.0 => (FD_STEP, 0.0),
                s if s < 0.0 => (0.0, FD_STEP),
                _ => (FD_STEP, FD_STEP),
            };
            xp[j] = x[j] + hp;
            xm[j] = x[j] - hm;
            (self.f)(&xp, u, &mut fp);
            (self.f)(&xm, u, &mut fm);
            for i in 0..self.state_dim {
                m[(i, j)] = (fp[i] - fm[i]) / (hp + hm);
            }
            xp[j] = x[j];
            xm[j] = x[j];
        }
        m
    }
}

impl std::fmt::Debug for VectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorField")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("analytic_jacobians", &self.jac_x.is_some())
            .finish()
    }
}

/// The saturation nonlinearity: clamp to `[-1, 1]`.
///
/// Nonexpansive: `|sat(a) - sat(b)| <= |a - b|`.
pub fn saturation(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Euclidean projection of `u` onto a box — the proximal point
/// `argmin_{v in box} ||v - u||`, which for a box is the componentwise clamp.
/// Nonexpansive in the Euclidean norm.
pub fn project_box(u: &[f64], b: &BoxDomain) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    b.project(u, &mut out);
    out
}

/// A right-continuous piecewise-constant input signal.
///
/// Segments all share one duration, matching sampled-data control where the
/// input is refreshed every `tau` seconds. Evaluation beyond the covered
/// range holds the final value.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal {
    dim: usize,
    kind: SignalKind,
}

#[derive(Debug, Clone, PartialEq)]
enum SignalKind {
    Constant(Vec<f64>),
    Piecewise { values: Vec<Vec<f64>>, segment: f64 },
}

impl InputSignal {
    /// The identically-zero signal of the given dimension.
    pub fn zero(dim: usize) -> Self {
        Self { dim, kind: SignalKind::Constant(vec![0.0; dim]) }
    }

    /// A constant signal.
    pub fn constant(value: Vec<f64>) -> Self {
        Self { dim: value.len(), kind: SignalKind::Constant(value) }
    }

    /// A piecewise-constant signal: `values[k]` on `[k*segment, (k+1)*segment)`.
    pub fn piecewise(values: Vec<Vec<f64>>, segment: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("signal needs at least one segment".into()));
        }
        if !(segment.is_finite() && segment > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "segment duration must be positive, got {segment}"
            )));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch("signal segments have mixed dimensions".into()));
        }
        Ok(Self { dim, kind: SignalKind::Piecewise { values, segment } })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Value at time `t` (right-continuous; clamped to the covered range).
    pub fn at(&self, t: f64) -> &[f64] {
        match &self.kind {
            SignalKind::Constant(v) => v,
            SignalKind::Piecewise { values, segment } => {
                let idx = if t <= 0.0 {
                    0
                } else {
                    ((t / segment).floor() as usize).min(values.len() - 1)
                };
                &values[idx]
            }
        }
    }

    /// True when every switching instant is a whole number of `step`s, so a
    /// fixed-step integration never straddles a switch.
    pub fn aligned_with_step(&self, step: f64) -> bool {
        match &self.kind {
            SignalKind::Constant(_) => true,
            SignalKind::Piecewise { segment, .. } => {
                let ratio = segment / step;
                (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0)
            }
        }
    }

    /// Times in `[0, horizon)` where `self` or `other` may switch (plus 0).
    fn breakpoints(&self, other: &InputSignal, horizon: f64) -> Vec<f64> {
        let mut ts = vec![0.0];
        for sig in [self, other] {
            if let SignalKind::Piecewise { values, segment } = &sig.kind {
                for k in 1..values.len() {
                    let t = k as f64 * segment;
                    if t < horizon {
                        ts.push(t);
                    }
                }
            }
        }
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup();
        ts
    }

    /// `sup_{t in [0, horizon)} ||self(t) - other(t)||` (Euclidean norm).
    /// Exact for piecewise-constant signals: the supremum is attained at a
    /// switching instant.
    pub fn sup_diff(&self, other: &InputSignal, horizon: f64) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let mut sup: f64 = 0.0;
        for t in self.breakpoints(other, horizon) {
            let a = self.at(t);
            let b = other.at(t);
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            sup = sup.max(d.sqrt());
        }
        sup
    }
}

/// A sampled solution: state snapshots at uniformly spaced times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    /// Row-major: `states[k*dim .. (k+1)*dim]` is the state at `times[k]`.
    states: Vec<f64>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of snapshots (steps + 1).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Serializes as CSV `t,x1,...,xn` with 17 significant digits, enough to
    /// round-trip every f64 exactly; reruns produce byte-identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * (self.dim + 1) * 26);
        out.push('t');
        for i in 1..=self.dim {
            let _ = write!(out, ",x{i}");
        }
        out.push('\n');
        for k in 0..self.len() {
            let _ = write!(out, "{}", format_sig17(self.times[k]));
            for v in self.state(k) {
                let _ = write!(out, ",{}", format_sig17(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Formats with 17 significant digits (scientific notation).
pub(crate) fn format_sig17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Scratch buffers for [`rk4_step`], reused across steps so stepping never
/// allocates.
#[derive(Debug, Clone)]
pub struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    arg: Vec<f64>,
}

impl Rk4Scratch {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            arg: vec![0.0; dim],
        }
    }
}

/// One classic Runge-Kutta step of size `dt` with the input held constant,
/// updating `x` in place.
#[allow(clippy::needless_range_loop)] // indexes four stage arrays in lockstep
pub fn rk4_step(field: &VectorField, x: &mut [f64], u: &[f64], dt: f64, s: &mut Rk4Scratch) {
    let n = x.len();
    field.eval(x, u, &mut s.k1);
    for i in 0..n {
        s.arg[i] = x[i] + 0.5 * dt * s.k1[i];
    }
    field.eval(&s.arg, u, &mut s.k2);
    for i in 0..n {
        s.arg[i] = x[i] + 0.5 * dt * s.k2[i];
    }
    field.eval(&s.arg, u, &mut s.k3);
    for i in 0..n {
        s.arg[i] = x[i] + dt * s.k3[i];
    }
    field.eval(&s.arg, u, &mut s.k4);
    for i in 0..n {
        x[i] += dt / 6.0 * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
    }
}

fn diverged(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
}

/// Integrates `n_steps` fixed steps in place and reports only the endpoint —
/// the allocation-free kernel under the abstraction builder. The input is
/// held constant for the whole duration.
pub fn integrate_endpoint(
    field: &VectorField,
    x: &mut [f64],
    u: &[f64],
    n_steps: usize,
    step: f64,
    scratch: &mut Rk4Scratch,
) -> Result<()> {
    for k in 0..n_steps {
        rk4_step(field, x, u, step, scratch);
        if diverged(x) {
            return Err(Error::Divergence { time: (k + 1) as f64 * step, limit: DIVERGENCE_LIMIT });
        }
    }
    Ok(())
}

/// Integrates `dx/dt = f(x, u(t))` over `[0, horizon]` with fixed-step RK4,
/// recording the state at every step.
///
/// `horizon` must be a whole number of `step`s and any switching instants of
/// `input` must fall on step boundaries; both are checked up front so a
/// single step never straddles an input switch. Divergence (a state beyond
/// [`DIVERGENCE_LIMIT`] or non-finite) aborts with [`Error::Divergence`].
pub fn integrate(
    field: &VectorField,
    x0: &[f64],
    input: &InputSignal,
    horizon: f64,
    step: f64,
) -> Result<Trajectory> {
    let n = field.state_dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} components, field expects {n}",
            x0.len()
        )));
    }
    if input.dim() != field.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input signal has dimension {}, field expects {}",
            input.dim(),
            field.input_dim()
        )));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be >= 0, got {horizon}")));
    }
    let steps_f = horizon / step;
    let n_steps = steps_f.round();
    if (steps_f - n_steps).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} is not a whole number of steps of {step}"
        )));
    }
    if !input.aligned_with_step(step) {
        return Err(Error::InvalidArgument(
            "input switching instants do not align with the integration step".into(),
        ));
    }
    let n_steps = n_steps as usize;

    let mut x = x0.to_vec();
    if diverged(&x) {
        return Err(Error::Divergence { time: 0.0, limit: DIVERGENCE_LIMIT });
    }
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity((n_steps + 1) * n);
    times.push(0.0);
    states.extend_from_slice(&x);
    let mut scratch = Rk4Scratch::new(n);
    for k in 0..n_steps {
        let t = k as f64 * step;
        rk4_step(field, &mut x, input.at(t), step, &mut scratch);
        let t_next = (k + 1) as f64 * step;
        if diverged(&x) {
            return Err(Error::Divergence { time: t_next, limit: DIVERGENCE_LIMIT });
        }
        times.push(t_next);
        states.extend_from_slice(&x);
    }
    Ok(Trajectory { dim: n, times, states })
}

/// Distance used by trajectory-level comparisons: plain Euclidean or the
/// quadratic-form distance `sqrt((a-b)^T G (a-b))` of a constant weight
/// matrix.
#[derive(Debug, Clone)]
pub enum IncrementalMetric {
    Euclidean,
    Weighted(DMatrix<f64>),
}

impl IncrementalMetric {
    /// Weighted variant; `g` must be symmetric positive definite.
    pub fn weighted(g: DMatrix<f64>) -> Result<Self> {
        linalg::check_symmetric(&g)?;
        if nalgebra::Cholesky::new(g.clone()).is_none() {
            return Err(Error::NotPositiveDefinite(f64::NAN));
        }
        Ok(Self::Weighted(g))
    }

    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Self::Euclidean => {
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            }
            Self::Weighted(g) => {
                let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                linalg::quad_form(g, &d).max(0.0).sqrt()
            }
        }
    }
}

/// The exponential envelope `C * exp(-rate * t) * d0 + input_gain * sup||u - u'||`.
#[derive(Debug, Clone)]
pub struct ExponentialBound {
    pub scale: f64,
    pub decay_rate: f64,
    pub input_gain: f64,
    pub metric: IncrementalMetric,
}

/// One scenario for the empirical check: two initial states with their own
/// input signals.
#[derive(Debug, Clone)]
pub struct TrajectoryPair {
    pub x0: Vec<f64>,
    pub x0_alt: Vec<f64>,
    pub input: InputSignal,
    pub input_alt: InputSignal,
}

/// Result of [`check_delta_iss_empirical`]. `worst_ratio` is the largest
/// observed `distance / envelope`; anything at or below `1 + tol` passes.
#[derive(Debug, Clone)]
pub struct DeltaIssReport {
    pub pass: bool,
    pub worst_ratio: f64,
    pub worst_pair: usize,
    pub worst_time: f64,
    pub n_pairs: usize,
}

/// Integrates every pair side by side and compares the trajectory distance
/// against the envelope at each sample instant.
///
/// Ratios are taken pointwise; when the envelope is exactly zero (identical
/// initial states and inputs) the distance must vanish too, otherwise the
/// ratio is reported as infinite.
pub fn check_delta_iss_empirical(
    field: &VectorField,
    pairs: &[TrajectoryPair],
    bound: &ExponentialBound,
    horizon: f64,
    step: f64,
    tol: f64,
) -> Result<DeltaIssReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empirical check needs at least one pair".into()));
    }
    let mut worst = (0.0_f64, 0usize, 0.0_f64);
    for (idx, pair) in pairs.iter().enumerate() {
        let ta = integrate(field, &pair.x0, &pair.input, horizon, step)?;
        let tb = integrate(field, &pair.x0_alt, &pair.input_alt, horizon, step)?;
        let d0 = bound.metric.dist(&pair.x0, &pair.x0_alt);
        let du = pair.input.sup_diff(&pair.input_alt, horizon);
        for k in 0..ta.len() {
            let t = ta.time(k);
            let lhs = bound.metric.dist(ta.state(k), tb.state(k));
            let rhs = bound.scale * (-bound.decay_rate * t).exp() * d0 + bound.input_gain * du;
            let ratio = if rhs > 0.0 {
                lhs / rhs
            } else if lhs <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            if ratio > worst.0 {
                worst = (ratio, idx, t);
            }
        }
    }
    Ok(DeltaIssReport {
        pass: worst.0 <= 1.0 + tol,
        worst_ratio: worst.0,
        worst_pair: worst.1,
        worst_time: worst.2,
        n_pairs: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_decay() -> VectorField {
        // dx/dt = -x + u, solution e^{-t} x0 + (1 - e^{-t}) u for constant u.
        VectorField::new(1, 1, |x, u, out| out[0] = -x[0] + u[0])
    }

    #[test]
    fn rk4_matches_exponential_oracle() {
        // Closed form: x(1.6) = e^{-1.6} for x0 = 1, u = 0. RK4 at step 1e-3
        // carries a local error ~ (dt^5), global ~ 1e-13 here.
        let field = linear_decay();
        let traj = integrate(&field, &[1.0], &InputSignal::zero(1), 1.6, 1e-3).unwrap();
        let exact = (-1.6_f64).exp();
        assert!((traj.last_state()[0] - exact).abs() < 1e-12);
        assert_eq!(traj.len(), 1601);
    }

    #[test]
    fn rk4_is_fourth_order() {
        // Halving the step must shrink the error by at least 2^3 — a
        // conservative order check; the asymptotic rate is 2^4.
        let field = linear_decay();
        let exact = (-2.0_f64).exp();
        let mut prev_err = f64::NAN;
        for &step in &[0.2, 0.1, 0.05, 0.025] {
            let traj = integrate(&field, &[1.0], &InputSignal::zero(1), 2.0, step).unwrap();
            let err = (traj.last_state()[0] - exact).abs();
            if prev_err.is_finite() {
                assert!(
                    err * 8.0 <= prev_err,
                    "error {err:.3e} at step {step} vs {prev_err:.3e} at twice the step"
                );
            }
            prev_err = err;
        }
    }

    #[test]
    fn zero_field_holds_state() {
        let field = VectorField::new(2, 0, |_x, _u, out| {
            out[0] = 0.0;
            out[1] = 0.0;
        });
        let traj = integrate(&field, &[0.25, -3.0], &InputSignal::zero(0), 1.0, 0.01).unwrap();
        for k in 0..traj.len() {
            assert_eq!(traj.state(k), &[0.25, -3.0]);
        }
    }

    #[test]
    fn consecutive_time_gaps_equal_the_step() {
        let field = linear_decay();
        let traj = integrate(&field, &[1.0], &InputSignal::zero(1), 0.5, 0.01).unwrap();
        for k in 1..traj.len() {
            assert!((traj.time(k) - traj.time(k - 1) - 0.01).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_is_reported_not_panicked() {
        // dx/dt = x^2 from x0 = 1 blows up at t = 1.
        let field = VectorField::new(1, 0, |x, _u, out| out[0] = x[0] * x[0]);
        let err = integrate(&field, &[1.0], &InputSignal::zero(0), 2.0, 1e-3).unwrap_err();
        match err {
            Error::Divergence { time, .. } => assert!(time < 1.1, "diverged at {time}"),
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn misaligned_horizon_and_signal_are_rejected() {
        let field = linear_decay();
        assert!(matches!(
            integrate(&field, &[1.0], &InputSignal::zero(1), 0.105, 0.01),
            Err(Error::InvalidArgument(_))
        ));
        let sig = InputSignal::piecewise(vec![vec![0.0], vec![1.0]], 0.015).unwrap();
        assert!(matches!(
            integrate(&field, &[1.0], &sig, 0.03, 0.01),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn piecewise_signal_is_right_continuous_and_clamped() {
        let sig = InputSignal::piecewise(vec![vec![1.0], vec![2.0], vec![3.0]], 0.5).unwrap();
        assert_eq!(sig.at(0.0), &[1.0]);
        assert_eq!(sig.at(0.5), &[2.0]);
        assert_eq!(sig.at(0.999), &[2.0]);
        assert_eq!(sig.at(1.0), &[3.0]);
        assert_eq!(sig.at(10.0), &[3.0]);
    }

    #[test]
    fn sup_diff_sees_every_segment() {
        let a = InputSignal::piecewise(vec![vec![0.0], vec![5.0], vec![0.0]], 0.1).unwrap();
        let b = InputSignal::zero(1);
        assert_eq!(a.sup_diff(&b, 0.3), 5.0);
        // Beyond the horizon the later segments must not count.
        assert_eq!(a.sup_diff(&b, 0.1), 0.0);
    }

    #[test]
    fn saturation_clamps_and_is_nonexpansive() {
        assert_eq!(saturation(0.3), 0.3);
        assert_eq!(saturation(2.0), 1.0);
        assert_eq!(saturation(-7.0), -1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let a = rng.gen_range(-5.0..5.0);
            let b = rng.gen_range(-5.0..5.0);
            assert!((saturation(a) - saturation(b)).abs() <= (a - b).abs() + 1e-15);
        }
    }

    #[test]
    fn box_projection_is_nonexpansive_on_random_pairs() {
        let b = BoxDomain::new(vec![(-10.0, 10.0), (-1.0, 2.0), (0.0, 0.5)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let u1: Vec<f64> = (0..3).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let u2: Vec<f64> = (0..3).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let p1 = project_box(&u1, &b);
            let p2 = project_box(&u2, &b);
            let dp: f64 = p1.iter().zip(&p2).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
            let du: f64 = u1.iter().zip(&u2).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
            assert!(dp <= du + 1e-12, "projection expanded {du:.6} to {dp:.6}");
            // Idempotence: projecting a projected point changes nothing.
            assert_eq!(project_box(&p1, &b), p1);
        }
    }

    #[test]
    fn empirical_envelope_holds_for_scalar_decay() {
        // dx/dt = -x + u with equal inputs: d(t) = e^{-t} d(0) exactly, so
        // C = 1, rate = 1 passes with any input gain.
        let field = linear_decay();
        let pairs = vec![
            TrajectoryPair {
                x0: vec![1.0],
                x0_alt: vec![-1.0],
                input: InputSignal::constant(vec![0.5]),
                input_alt: InputSignal::constant(vec![0.5]),
            },
            TrajectoryPair {
                x0: vec![0.2],
                x0_alt: vec![0.2],
                input: InputSignal::zero(1),
                input_alt: InputSignal::zero(1),
            },
        ];
        let bound = ExponentialBound {
            scale: 1.0,
            decay_rate: 1.0,
            input_gain: 0.0,
            metric: IncrementalMetric::Euclidean,
        };
        let report = check_delta_iss_empirical(&field, &pairs, &bound, 3.0, 1e-3, 1e-9).unwrap();
        assert!(report.pass, "worst ratio {}", report.worst_ratio);
    }

    #[test]
    fn empirical_check_flags_a_violated_envelope() {
        // Claiming decay rate 2 for dx/dt = -x is false.
        let field = linear_decay();
        let pairs = vec![TrajectoryPair {
            x0: vec![1.0],
            x0_alt: vec![0.0],
            input: InputSignal::zero(1),
            input_alt: InputSignal::zero(1),
        }];
        let bound = ExponentialBound {
            scale: 1.0,
            decay_rate: 2.0,
            input_gain: 0.0,
            metric: IncrementalMetric::Euclidean,
        };
        let report = check_delta_iss_empirical(&field, &pairs, &bound, 2.0, 1e-2, 1e-9).unwrap();
        assert!(!report.pass);
        assert!(report.worst_ratio > 1.0);
    }

    #[test]
    fn fd_jacobian_matches_analytic_on_smooth_field() {
        let field = VectorField::new(2, 1, |x, u, out| {
            out[0] = x[0].sin() + 3.0 * x[1];
            out[1] = x[0] * x[1] + u[0] * u[0];
        });
        let x = [0.3, -0.7];
        let u = [0.9];
        let jx = field.jacobian_x(&x, &u);
        assert!((jx[(0, 0)] - 0.3_f64.cos()).abs() < 1e-8);
        assert!((jx[(0, 1)] - 3.0).abs() < 1e-8);
        assert!((jx[(1, 0)] - (-0.7)).abs() < 1e-8);
        assert!((jx[(1, 1)] - 0.3).abs() < 1e-8);
        let ju = field.jacobian_u(&x, &u);
        assert!((ju[(1, 0)] - 1.8).abs() < 1e-8);
    }

    #[test]
    fn csv_has_header_and_17_significant_digits() {
        let field = linear_decay();
        let traj = integrate(&field, &[1.0], &InputSignal::zero(1), 0.002, 1e-3).unwrap();
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,x1"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("0.0000000000000000e0,1.0000000000000000e0"), "{row}");
        assert_eq!(csv.lines().count(), 4);
    }
}
