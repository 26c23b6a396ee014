//! Contraction metrics: Riemannian certificates of incremental stability.
//!
//! A metric `G(x)` (symmetric positive definite everywhere) contracts the
//! flow of `dx/dt = f(x, u)` at rate `lambda_hat` when the curvature matrix
//!
//! ```text
//!   F(x, u) = (df/dx)^T G + G (df/dx) + dG/dt ,   dG/dt = sum_k dG/dx_k f_k
//! ```
//!
//! satisfies `F + lambda_hat G <= 0` (negative semidefinite) over the region
//! of interest. Distances between any two solutions then shrink like
//! `exp(-lambda_hat t / 2)` in the metric. Inputs enter through the bound
//! `2 sigma_max(G^{1/2} df/du) <= alpha`, which caps how fast an input
//! mismatch can grow the metric distance and yields the envelope
//!
//! ```text
//!   d_G(t) <= exp(-lambda_hat t / 2) d_G(0) + (alpha / lambda_hat) ||u - u'||_inf .
//! ```
//!
//! Checks are sampled falsifiers over boxes, like the certificate checkers in
//! [`crate::lyapunov`] — deterministic low-discrepancy sweeps with a
//! deterministic parallel reduction. Matrix inequalities need the field's
//! Jacobian, so piecewise-smooth fields get a kink probe: samples where
//! forward and backward difference quotients disagree are excluded from the
//! verdict and counted in the report instead of silently averaged over.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::domain::BoxDomain;
use crate::dynamics::{ExponentialBound, IncrementalMetric, VectorField};
use crate::error::{Error, Result};
use crate::lyapunov::{eigen_symmetric, eigen_symmetric_full, sqrt_spd, VerificationReport};
use crate::sampling::BoxSampler;
use std::sync::Arc;

/// Step of the one-sided difference quotients used to detect derivative
/// discontinuities. Deliberately much coarser than the differentiation step:
/// it measures slope disagreement across a neighborhood, not the slope.
pub const KINK_PROBE: f64 = 1e-3;

/// Forward/backward slope disagreement above which a sample is considered to
/// sit on a derivative discontinuity and is excluded from matrix checks.
pub const KINK_TOL: f64 = 1e-2;

type MetricFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// A candidate contraction metric: constant, or varying smoothly with the
/// state. Constant metrics are validated eagerly; state-dependent ones are
/// validated wherever they are evaluated during a check.
#[derive(Clone)]
pub struct MetricField {
    dim: usize,
    g: Arc<MetricFn>,
    constant: Option<DMatrix<f64>>,
}

impl MetricField {
    /// A constant metric; `g` must be symmetric positive definite.
    pub fn constant(g: DMatrix<f64>) -> Result<Self> {
        let values = eigen_symmetric(&g)?;
        let min = values.first().copied().unwrap_or(0.0);
        if min <= 0.0 {
            return Err(Error::NotPositiveDefinite(min));
        }
        let dim = g.nrows();
        let g_eval = g.clone();
        Ok(Self { dim, g: Arc::new(move |_x| g_eval.clone()), constant: Some(g) })
    }

    /// The identity metric (Euclidean distances).
    pub fn euclidean(dim: usize) -> Self {
        Self::constant(DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    /// A state-dependent metric `x -> G(x)`.
    pub fn varying<F>(dim: usize, g: F) -> Self
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self { dim, g: Arc::new(g), constant: None }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, x: &[f64]) -> DMatrix<f64> {
        (self.g)(x)
    }

    /// The constant matrix, when there is one.
    pub fn as_constant(&self) -> Option<&DMatrix<f64>> {
        self.constant.as_ref()
    }

    /// `dG/dt = sum_k dG/dx_k f_k` by central differences; zero for constant
    /// metrics.
    fn flow_derivative(&self, x: &[f64], f_val: &[f64]) -> DMatrix<f64> {
        if self.constant.is_some() {
            return DMatrix::zeros(self.dim, self.dim);
        }
        let h = crate::dynamics::FD_STEP;
        let mut total = DMatrix::zeros(self.dim, self.dim);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        for k in 0..self.dim {
            if f_val[k] == 0.0 {
                continue;
            }
            xp[k] = x[k] + h;
            xm[k] = x[k] - h;
            let gp = (self.g)(&xp);
            let gm = (self.g)(&xm);
            total += (gp - gm) * (f_val[k] / (2.0 * h));
            xp[k] = x[k];
            xm[k] = x[k];
        }
        total
    }
}

impl std::fmt::Debug for MetricField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricField")
            .field("dim", &self.dim)
            .field("constant", &self.constant.is_some())
            .finish()
    }
}

/// The curvature matrix `F = J^T G + G J + dG/dt` at one point, symmetrized
/// against floating-point drift.
pub fn curvature_matrix(
    field: &VectorField,
    metric: &MetricField,
    x: &[f64],
    u: &[f64],
) -> Result<DMatrix<f64>> {
    if field.state_dim() != metric.dim() {
        return Err(Error::DimensionMismatch(format!(
            "field has {} states, metric covers {}",
            field.state_dim(),
            metric.dim()
        )));
    }
    let g = metric.at(x);
    let j = field.jacobian_x(x, u);
    let mut f_val = vec![0.0; field.state_dim()];
    field.eval(x, u, &mut f_val);
    let gdot = metric.flow_derivative(x, &f_val);
    let raw = j.transpose() * &g + &g * j + gdot;
    Ok((&raw + raw.transpose()) * 0.5)
}

/// True when forward and backward difference quotients of the field through
/// `(x, u)` disagree: the sample sits within [`KINK_PROBE`] of a derivative
/// discontinuity. Fields with analytic Jacobians never need this.
fn kink_detected(field: &VectorField, x: &[f64], u: &[f64]) -> bool {
    let n = field.state_dim();
    let mut shifted = x.to_vec();
    let mut fw = vec![0.0; n];
    let mut bw = vec![0.0; n];
    let mut center = vec![0.0; n];
    field.eval(x, u, &mut center);
    for j in 0..n {
        shifted[j] = x[j] + KINK_PROBE;
        field.eval(&shifted, u, &mut fw);
        shifted[j] = x[j] - KINK_PROBE;
        field.eval(&shifted, u, &mut bw);
        shifted[j] = x[j];
        for i in 0..n {
            let forward = (fw[i] - center[i]) / KINK_PROBE;
            let backward = (center[i] - bw[i]) / KINK_PROBE;
            if (forward - backward).abs() > KINK_TOL {
                return true;
            }
        }
    }
    false
}

fn check_boxes(
    field: &VectorField,
    metric: &MetricField,
    state_box: &BoxDomain,
    input_box: &BoxDomain,
    n_samples: usize,
) -> Result<()> {
    if field.state_dim() != metric.dim() {
        return Err(Error::DimensionMismatch(format!(
            "field has {} states, metric covers {}",
            field.state_dim(),
            metric.dim()
        )));
    }
    if state_box.dim() != field.state_dim() || input_box.dim() != field.input_dim() {
        return Err(Error::DimensionMismatch(
            "sample boxes do not match the field's state/input dimensions".into(),
        ));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    Ok(())
}

/// Per-sample outcome inside the parallel sweep.
enum SampleOutcome {
    Value(f64),
    Excluded,
    Failed(Error),
}

/// Sweeps `state_box x input_box` and reduces to a [`VerificationReport`]:
/// worst value (ties to the lowest sample index), count of kink-excluded
/// samples. `violation` maps a sample to its scalar defect.
fn sweep(
    field: &VectorField,
    state_box: &BoxDomain,
    input_box: &BoxDomain,
    n_samples: usize,
    tol: f64,
    seed: u64,
    violation: impl Fn(&[f64], &[f64]) -> Result<f64> + Send + Sync,
) -> Result<VerificationReport> {
    let n = field.state_dim();
    let m = field.input_dim();
    let width = n + m;
    let joint = state_box.product(input_box);
    let samples = BoxSampler::new(joint, seed).take(n_samples);
    let probe_kinks = !field.has_analytic_jacobians();

    let outcome = |i: usize| -> (f64, usize, usize, Option<Error>) {
        let point = &samples[i * width..(i + 1) * width];
        let (x, u) = point.split_at(n);
        let out = if probe_kinks && kink_detected(field, x, u) {
            SampleOutcome::Excluded
        } else {
            match violation(x, u) {
                Ok(v) => SampleOutcome::Value(v),
                Err(e) => SampleOutcome::Failed(e),
            }
        };
        match out {
            SampleOutcome::Value(v) => (v, i, 0, None),
            SampleOutcome::Excluded => (f64::NEG_INFINITY, usize::MAX, 1, None),
            SampleOutcome::Failed(e) => (f64::NEG_INFINITY, usize::MAX, 0, Some(e)),
        }
    };

    // (worst value, index of worst, excluded count, first error).
    let reduced = (0..n_samples)
        .into_par_iter()
        .map(outcome)
        .reduce(
            || (f64::NEG_INFINITY, usize::MAX, 0, None),
            |a, b| {
                let (worst, idx) = if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                    (b.0, b.1)
                } else {
                    (a.0, a.1)
                };
                (worst, idx, a.2 + b.2, a.3.or(b.3))
            },
        );
    if let Some(err) = reduced.3 {
        return Err(err);
    }
    if reduced.2 == n_samples {
        return Err(Error::InvalidArgument(
            "every sample was excluded by the kink probe; the field is nowhere differentiable \
             on this box at the probe scale"
                .into(),
        ));
    }
    let worst_point = if reduced.1 == usize::MAX {
        Vec::new()
    } else {
        samples[reduced.1 * width..(reduced.1 + 1) * width].to_vec()
    };
    Ok(VerificationReport {
        pass: reduced.0 <= tol,
        n_samples,
        max_violation: reduced.0,
        worst_point,
        excluded: reduced.2,
    })
}

/// Sampled check of the state contraction condition
/// `lambda_max(F(x, u) + lambda_hat G(x)) <= tol` over `state_box x input_box`.
#[allow(clippy::too_many_arguments)]
pub fn check_contraction_states(
    field: &VectorField,
    metric: &MetricField,
    lambda_hat: f64,
    state_box: &BoxDomain,
    input_box: &BoxDomain,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<VerificationReport> {
    check_boxes(field, metric, state_box, input_box, n_samples)?;
    if !(lambda_hat.is_finite() && lambda_hat > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "contraction rate must be positive, got {lambda_hat}"
        )));
    }
    sweep(field, state_box, input_box, n_samples, tol, seed, |x, u| {
        let g = metric.at(x);
        let min_eig = eigen_symmetric(&g)?.first().copied().unwrap_or(0.0);
        if min_eig <= 0.0 {
            return Err(Error::NotPositiveDefinite(min_eig));
        }
        let f = curvature_matrix(field, metric, x, u)?;
        let values = eigen_symmetric(&(f + g * lambda_hat))?;
        Ok(values.last().copied().unwrap_or(f64::NEG_INFINITY))
    })
}

/// Sampled check of the state *and* input contraction conditions:
///
/// ```text
///   lambda_max(F + lambda_hat G) <= tol          (state condition)
///   2 sigma_max(G^{1/2} df/du) - alpha <= tol    (input condition)
/// ```
///
/// The reported violation at each sample is the worse of the two, so a pass
/// certifies the full envelope of [`contraction_envelope`].
#[allow(clippy::too_many_arguments)]
pub fn check_contraction_states_inputs(
    field: &VectorField,
    metric: &MetricField,
    lambda_hat: f64,
    alpha: f64,
    state_box: &BoxDomain,
    input_box: &BoxDomain,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<VerificationReport> {
    check_boxes(field, metric, state_box, input_box, n_samples)?;
    if !(lambda_hat.is_finite() && lambda_hat > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "contraction rate must be positive, got {lambda_hat}"
        )));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("input gain must be nonnegative, got {alpha}")));
    }
    // For a constant metric the square root is hoisted out of the sweep.
    let hoisted_sqrt = match metric.as_constant() {
        Some(g) => Some(sqrt_spd(g)?),
        None => None,
    };
    sweep(field, state_box, input_box, n_samples, tol, seed, |x, u| {
        let g = metric.at(x);
        let g_sqrt = match &hoisted_sqrt {
            Some(s) => s.clone(),
            None => sqrt_spd(&g)?,
        };
        let f = curvature_matrix(field, metric, x, u)?;
        let state_cond = eigen_symmetric(&(f + &g * lambda_hat))?
            .last()
            .copied()
            .unwrap_or(f64::NEG_INFINITY);
        let m = g_sqrt * field.jacobian_u(x, u);
        let gram = m.transpose() * &m;
        let sigma_sq = eigen_symmetric(&gram)?.last().copied().unwrap_or(0.0).max(0.0);
        let input_cond = 2.0 * sigma_sq.sqrt() - alpha;
        Ok(state_cond.max(input_cond))
    })
}

/// The trajectory envelope certified by a passing
/// [`check_contraction_states_inputs`]: in the metric distance,
///
/// ```text
///   d_G(t) <= exp(-lambda_hat t / 2) d_G(0) + (alpha / lambda_hat) ||u - u'||_inf .
/// ```
///
/// Only constant metrics induce a distance the trajectory checker can
/// evaluate directly, so state-dependent metrics are rejected here.
pub fn contraction_envelope(
    metric: &MetricField,
    lambda_hat: f64,
    alpha: f64,
) -> Result<ExponentialBound> {
    let g = metric.as_constant().ok_or_else(|| {
        Error::Unsupported(
            "trajectory envelopes are only constructed for constant metrics; geodesic \
             distances of varying metrics are not evaluated"
                .into(),
        )
    })?;
    Ok(ExponentialBound {
        scale: 1.0,
        decay_rate: lambda_hat / 2.0,
        input_gain: alpha / lambda_hat,
        metric: IncrementalMetric::weighted(g.clone())?,
    })
}

/// Extends a contraction metric `g_hat` of a driven subsystem through one
/// integrator layer stabilized by a law with Jacobian `jac_psi`:
///
/// ```text
///   G = [ Ghat + J^T J   -J^T ]
///       [     -J           I  ]     with J = d psi / d y .
/// ```
///
/// The result is positive definite whenever `g_hat` is.
pub fn build_block_metric(g_hat: &DMatrix<f64>, jac_psi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    crate::linalg::check_symmetric(g_hat)?;
    let n = g_hat.nrows();
    let m = jac_psi.nrows();
    if jac_psi.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "stabilizer Jacobian has {} columns, metric covers {n} states",
            jac_psi.ncols()
        )));
    }
    let mut g = DMatrix::zeros(n + m, n + m);
    let top_left = g_hat + jac_psi.transpose() * jac_psi;
    g.view_mut((0, 0), (n, n)).copy_from(&top_left);
    g.view_mut((0, n), (n, m)).copy_from(&(-jac_psi.transpose()));
    g.view_mut((n, 0), (m, n)).copy_from(&(-jac_psi));
    g.view_mut((n, n), (m, m)).copy_from(&DMatrix::identity(m, m));
    Ok(g)
}

/// Minimal gain for which the block extension of a metric with rates
/// `(lambda_hat, alpha)` contracts: the layer gain must *strictly* exceed
/// `alpha^2 / (8 lambda_hat)`.
pub fn required_gain_contraction(lambda_hat: f64, alpha: f64) -> f64 {
    alpha * alpha / (8.0 * lambda_hat)
}

/// The best contraction rate a metric certifies on a box.
#[derive(Debug, Clone)]
pub struct FittedRate {
    /// Largest `lambda_hat` with `F + lambda_hat G <= 0` at every kept
    /// sample; nonpositive means the metric does not contract everywhere.
    pub lambda_hat: f64,
    pub n_samples: usize,
    pub excluded: usize,
    /// Sample attaining the binding rate.
    pub worst_point: Vec<f64>,
}

/// Fits the largest contraction rate over a box: pointwise,
/// `F + lambda G <= 0` iff `lambda <= -lambda_max(G^{-1/2} F G^{-1/2})`, and
/// the fitted rate is the minimum over samples.
pub fn fit_contraction_rate(
    field: &VectorField,
    metric: &MetricField,
    state_box: &BoxDomain,
    input_box: &BoxDomain,
    n_samples: usize,
    seed: u64,
) -> Result<FittedRate> {
    check_boxes(field, metric, state_box, input_box, n_samples)?;
    let whiten = |g: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let (values, q) = eigen_symmetric_full(g)?;
        let min = values.first().copied().unwrap_or(0.0);
        if min <= 0.0 {
            return Err(Error::NotPositiveDefinite(min));
        }
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            g.nrows(),
            values.iter().map(|&v| 1.0 / v.sqrt()),
        ));
        Ok(&q * d * q.transpose())
    };
    let hoisted = match metric.as_constant() {
        Some(g) => Some(whiten(g)?),
        None => None,
    };
    // Reuse the sweep by reporting -rate as the "violation": the worst sample
    // is then the one certifying the smallest rate.
    let report = sweep(field, state_box, input_box, n_samples, 0.0, seed, |x, u| {
        let w = match &hoisted {
            Some(w) => w.clone(),
            None => whiten(&metric.at(x))?,
        };
        let f = curvature_matrix(field, metric, x, u)?;
        let whitened = &w * f * &w;
        let sym = (&whitened + whitened.transpose()) * 0.5;
        let max_eig = eigen_symmetric(&sym)?.last().copied().unwrap_or(0.0);
        Ok(max_eig)
    })?;
    Ok(FittedRate {
        lambda_hat: -report.max_violation,
        n_samples: report.n_samples,
        excluded: report.excluded,
        worst_point: report.worst_point,
    })
}
