//! Incremental Lyapunov certificates and their numerical verification.
//!
//! A function `V(x, x')` certifies incremental input-to-state stability of
//! `dx/dt = f(x, u)` (with respect to *some* metric) when
//!
//! ```text
//!  (i)   lower(||x - x'||)  <=  V(x, x')  <=  upper(||x - x'||)
//!  (iii) dV/dx . f(x,u) + dV/dx' . f(x',u')  <=  -kappa V(x,x') + kappa_hat ||u - u'||^2
//! ```
//!
//! for all states and inputs. This module carries the quadratic workhorse
//! `V(x,x') = (x-x')^T P (x-x')`, its square root (whose sandwich turns into
//! norm envelopes and whose decay rate halves), the block composition that
//! extends a certificate through one integrator layer, and sampled checkers
//! for conditions (i) and (iii).
//!
//! The checkers are falsifiers: they sweep a deterministic low-discrepancy
//! sample of the requested boxes and report the worst value of the defect
//!
//! ```text
//!  L = dV/dx . f(x,u) + dV/dx' . f(x',u') + kappa V - kappa_hat ||u - u'||^2
//! ```
//!
//! which must stay below the tolerance everywhere for a pass. A pass is
//! evidence, not proof; a violation is a genuine counterexample (up to
//! integration-free, purely algebraic evaluation error).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

use crate::backstepping::StabilizingFunction;
use crate::domain::BoxDomain;
use crate::dynamics::{IncrementalMetric, VectorField};
use crate::error::{Error, Result};
use crate::linalg;
use crate::sampling::BoxSampler;

/// Off-diagonal Frobenius norm at which the Jacobi iteration stops.
pub const JACOBI_TOL: f64 = 1e-12;

/// Eigenvalues of a symmetric matrix, ascending, via cyclic Jacobi rotations.
///
/// Dimensions around here are tiny (certificates for systems with a handful
/// of states), so an exact-arithmetic-friendly, dependency-free O(n^3) sweep
/// is the simple and deterministic choice. Errors if the input is not
/// symmetric within `1e-12`.
pub fn eigen_symmetric(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    eigen_symmetric_full(m).map(|(values, _)| values)
}

/// Like [`eigen_symmetric`] but also returns the orthogonal eigenvector
/// matrix `Q` (columns in eigenvalue order), so `m = Q diag Q^T`.
pub fn eigen_symmetric_full(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    linalg::check_symmetric(m)?;
    let n = m.nrows();
    let mut a = m.clone();
    let mut q = DMatrix::<f64>::identity(n, n);

    let off = |a: &DMatrix<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off(&a) > JACOBI_TOL {
        sweeps += 1;
        if sweeps > 100 {
            return Err(Error::Unsupported(
                "Jacobi iteration failed to converge in 100 sweeps".into(),
            ));
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = a[(p, r)];
                if apr == 0.0 {
                    continue;
                }
                // Rotation angle that zeroes a[(p, r)].
                let tau = (a[(r, r)] - a[(p, p)]) / (2.0 * apr);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                let app = a[(p, p)];
                let arr = a[(r, r)];
                a[(p, p)] = c * c * app - 2.0 * s * c * apr + s * s * arr;
                a[(r, r)] = s * s * app + 2.0 * s * c * apr + c * c * arr;
                a[(p, r)] = 0.0;
                a[(r, p)] = 0.0;
                for k in 0..n {
                    if k == p || k == r {
                        continue;
                    }
                    let akp = a[(k, p)];
                    let akr = a[(k, r)];
                    a[(k, p)] = c * akp - s * akr;
                    a[(p, k)] = a[(k, p)];
                    a[(k, r)] = s * akp + c * akr;
                    a[(r, k)] = a[(k, r)];
                }
                for k in 0..n {
                    let qkp = q[(k, p)];
                    let qkr = q[(k, r)];
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }

    // Sort ascending, permuting eigenvector columns along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut sorted_q = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        sorted_q.set_column(dst, &q.column(src));
    }
    Ok((values, sorted_q))
}

/// Symmetric positive square root `M^(1/2)` of a symmetric positive
/// semidefinite matrix (used to whiten metrics before singular-value
/// bounds). Errors on negative eigenvalues below `-1e-12`.
pub fn sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, q) = eigen_symmetric_full(m)?;
    if let Some(&min) = values.first() {
        if min < -1e-12 {
            return Err(Error::NotPositiveDefinite(min));
        }
    }
    let n = m.nrows();
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        values.iter().map(|&v| v.max(0.0).sqrt()),
    ));
    Ok(&q * d * q.transpose())
}

/// The quadratic incremental form `V(x, x') = (x - x')^T P (x - x')`, with
/// the decay/gain rates it claims: `dV/dt <= -kappa V + kappa_hat ||u-u'||^2`
/// along pairs of trajectories.
#[derive(Debug, Clone)]
pub struct QuadraticIncrementalForm {
    p: DMatrix<f64>,
    pub kappa: f64,
    pub kappa_hat: f64,
    lambda_min: f64,
    lambda_max: f64,
}

impl QuadraticIncrementalForm {
    /// `p` must be symmetric positive definite, `kappa > 0`, `kappa_hat >= 0`.
    pub fn new(p: DMatrix<f64>, kappa: f64, kappa_hat: f64) -> Result<Self> {
        let values = eigen_symmetric(&p)?;
        let lambda_min = values[0];
        let lambda_max = *values.last().unwrap();
        if lambda_min <= 0.0 {
            return Err(Error::NotPositiveDefinite(lambda_min));
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
        }
        if !(kappa_hat.is_finite() && kappa_hat >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kappa_hat must be nonnegative, got {kappa_hat}"
            )));
        }
        Ok(Self { p, kappa, kappa_hat, lambda_min, lambda_max })
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Same matrix, different claimed rates.
    pub fn with_rates(&self, kappa: f64, kappa_hat: f64) -> Result<Self> {
        Self::new(self.p.clone(), kappa, kappa_hat)
    }

    pub fn eval(&self, x: &[f64], x_alt: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let d: Vec<f64> = x.iter().zip(x_alt).map(|(a, b)| a - b).collect();
        linalg::quad_form(&self.p, &d)
    }

    /// Gradient with respect to the first argument: `2 P (x - x')`. The
    /// gradient with respect to `x'` is its negation.
    pub fn grad_x(&self, x: &[f64], x_alt: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for (i, o) in out[..n].iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.p[(i, j)] * (x[j] - x_alt[j]);
            }
            *o = 2.0 * acc;
        }
    }

    /// Sandwich envelopes: `lambda_min r^2  <= V <= lambda_max r^2` for
    /// `r = ||x - x'||`.
    pub fn alpha_lower(&self, r: f64) -> f64 {
        self.lambda_min * r * r
    }

    pub fn alpha_upper(&self, r: f64) -> f64 {
        self.lambda_max * r * r
    }

    /// The distance this form induces, `sqrt((x-y)^T P (x-y))`.
    pub fn metric(&self) -> IncrementalMetric {
        IncrementalMetric::Weighted(self.p.clone())
    }

    /// Sampled check of the sandwich (i) over pairs from `state_box`.
    pub fn verify_condition_i(
        &self,
        state_box: &BoxDomain,
        n_samples: usize,
        tol: f64,
        seed: u64,
    ) -> Result<VerificationReport> {
        check_sandwich(
            state_box,
            self.dim(),
            n_samples,
            tol,
            seed,
            |x, x_alt| self.eval(x, x_alt),
            |r| self.alpha_lower(r),
            |r| self.alpha_upper(r),
        )
    }
}

/// `sqrt(V)` of a quadratic form: the variant whose sandwich is linear in
/// `||x - x'||` (so it induces a genuine metric `d_P`) and whose decay rate
/// is half the quadratic one — from `dV/dt <= -kappa V` and the chain rule,
/// `d sqrt(V)/dt <= -(kappa/2) sqrt(V)` wherever `V > 0`.
///
/// The gradient is singular on the diagonal `x = x'`; every sampled check
/// either works through the quadratic base (condition (iii)) or needs no
/// gradient at all (condition (i)), sidestepping the singularity.
#[derive(Debug, Clone)]
pub struct SqrtForm {
    base: QuadraticIncrementalForm,
}

impl SqrtForm {
    pub fn new(base: QuadraticIncrementalForm) -> Self {
        Self { base }
    }

    pub fn base(&self) -> &QuadraticIncrementalForm {
        &self.base
    }

    pub fn eval(&self, x: &[f64], x_alt: &[f64]) -> f64 {
        self.base.eval(x, x_alt).max(0.0).sqrt()
    }

    /// Decay rate inherited from the base form.
    pub fn decay_rate(&self) -> f64 {
        self.base.kappa / 2.0
    }

    /// `sqrt(lambda_min) r <= sqrt(V) <= sqrt(lambda_max) r`.
    pub fn alpha_lower(&self, r: f64) -> f64 {
        self.base.lambda_min().sqrt() * r
    }

    pub fn alpha_upper(&self, r: f64) -> f64 {
        self.base.lambda_max().sqrt() * r
    }

    /// Lipschitz constant of `sqrt(V)` in its second argument,
    /// `lambda_max / sqrt(lambda_min)`.
    pub fn lipschitz(&self) -> f64 {
        self.base.lambda_max() / self.base.lambda_min().sqrt()
    }

    pub fn verify_condition_i(
        &self,
        state_box: &BoxDomain,
        n_samples: usize,
        tol: f64,
        seed: u64,
    ) -> Result<VerificationReport> {
        check_sandwich(
            state_box,
            self.base.dim(),
            n_samples,
            tol,
            seed,
            |x, x_alt| self.eval(x, x_alt),
            |r| self.alpha_lower(r),
            |r| self.alpha_upper(r),
        )
    }

    /// Condition (iii) for the square root is certified through the base
    /// form: a pass of the quadratic check at `(kappa, kappa_hat)` yields the
    /// decay rate `kappa / 2` for `sqrt(V)`.
    pub fn verify_condition_iii(
        &self,
        field: &VectorField,
        state_box: &BoxDomain,
        input_box: &BoxDomain,
        n_samples: usize,
        tol: f64,
        seed: u64,
    ) -> Result<VerificationReport> {
        verify_condition_iii(field, &self.base, state_box, input_box, n_samples, tol, seed)
    }
}

/// Minimal controller gain for which the one-integrator extension of a
/// certificate with rates `(kappa, kappa_hat)` stays a certificate:
/// `(kappa + kappa_hat + 1) / 2`.
pub fn required_gain(kappa: f64, kappa_hat: f64) -> f64 {
    (kappa + kappa_hat + 1.0) / 2.0
}

/// Shared evaluator of a two-point scalar form.
type PairFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// A non-quadratic incremental form: a bare evaluator with claimed rates.
/// Produced by [`compose_lyapunov`] when the stabilizer is not affine.
#[derive(Clone)]
pub struct GeneralIncrementalForm {
    pub dim: usize,
    pub kappa: f64,
    pub kappa_hat: f64,
    eval: PairFn,
}

impl GeneralIncrementalForm {
    pub fn eval(&self, x: &[f64], x_alt: &[f64]) -> f64 {
        (self.eval)(x, x_alt)
    }
}

impl std::fmt::Debug for GeneralIncrementalForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneralIncrementalForm")
            .field("dim", &self.dim)
            .field("kappa", &self.kappa)
            .field("kappa_hat", &self.kappa_hat)
            .finish()
    }
}

/// Result of extending a certificate through an integrator layer.
#[derive(Debug, Clone)]
pub enum ComposedLyapunov {
    /// Affine stabilizer: the composition stays an explicit quadratic form.
    Quadratic(QuadraticIncrementalForm),
    /// Nonlinear stabilizer: only a pointwise evaluator is available.
    General(GeneralIncrementalForm),
}

/// Extends a certificate `V_hat` for the driven subsystem (state `y`) to the
/// cascade `(y, z)` where `z` enters through an integrator stabilized by
/// `psi`:
///
/// ```text
///     V(x, x') = V_hat(y, y') + ||(z - psi(y)) - (z' - psi(y'))||^2 .
/// ```
///
/// For an affine `psi(y) = K y + c` the offset difference is linear in
/// `(dy, dz)` and the result is the quadratic form with block matrix
///
/// ```text
///     [ P_hat + K^T K   -K^T ]
///     [     -K            I  ]
/// ```
///
/// claiming rates `(kappa, 1)` — valid whenever the synthesized gain passes
/// [`required_gain`]`(kappa, kappa_hat)`, which the synthesis path checks.
/// A nonlinear `psi` yields a [`GeneralIncrementalForm`] evaluator instead.
pub fn compose_lyapunov(
    v_hat: &QuadraticIncrementalForm,
    psi: &StabilizingFunction,
) -> Result<ComposedLyapunov> {
    let ny = v_hat.dim();
    let nz = psi.out_dim();
    if psi.in_dim() != ny {
        return Err(Error::DimensionMismatch(format!(
            "stabilizer consumes {} states, certificate covers {ny}",
            psi.in_dim()
        )));
    }

    if let Some((k, _c)) = psi.affine_parts() {
        let n = ny + nz;
        let mut p = DMatrix::zeros(n, n);
        let ktk = k.transpose() * k;
        for i in 0..ny {
            for j in 0..ny {
                p[(i, j)] = v_hat.p()[(i, j)] + ktk[(i, j)];
            }
        }
        for i in 0..nz {
            for j in 0..ny {
                p[(ny + i, j)] = -k[(i, j)];
                p[(j, ny + i)] = -k[(i, j)];
            }
            p[(ny + i, ny + i)] = 1.0;
        }
        return Ok(ComposedLyapunov::Quadratic(QuadraticIncrementalForm::new(
            p,
            v_hat.kappa,
            1.0,
        )?));
    }

    let kappa = v_hat.kappa;
    let v_hat = v_hat.clone();
    let psi = psi.clone();
    let eval = move |x: &[f64], x_alt: &[f64]| -> f64 {
        let (y, z) = x.split_at(ny);
        let (y_alt, z_alt) = x_alt.split_at(ny);
        let mut py = vec![0.0; nz];
        let mut py_alt = vec![0.0; nz];
        psi.eval(y, &mut py);
        psi.eval(y_alt, &mut py_alt);
        let mut offset = 0.0;
        for i in 0..nz {
            let d = (z[i] - py[i]) - (z_alt[i] - py_alt[i]);
            offset += d * d;
        }
        v_hat.eval(y, y_alt) + offset
    };
    Ok(ComposedLyapunov::General(GeneralIncrementalForm {
        dim: ny + nz,
        kappa,
        kappa_hat: 1.0,
        eval: Arc::new(eval),
    }))
}

/// Outcome of a sampled verification. `max_violation` is the largest value
/// of the checked defect (negative when the inequality held with margin
/// everywhere); `worst_point` is the sample attaining it, laid out exactly as
/// sampled (states first, then inputs, primed copies after unprimed).
#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub pass: bool,
    pub n_samples: usize,
    pub max_violation: f64,
    pub worst_point: Vec<f64>,
    /// Samples skipped because the quantity was undefined there (e.g. matrix
    /// checks at kinks of a piecewise-smooth field). Zero for purely
    /// algebraic checks like this module's.
    pub excluded: usize,
}

/// Shared sandwich checker: draws `(x, x')` pairs and requires
/// `lower(||x-x'||) - tol <= V(x,x') <= upper(||x-x'||) + tol`.
#[allow(clippy::too_many_arguments)]
fn check_sandwich(
    state_box: &BoxDomain,
    dim: usize,
    n_samples: usize,
    tol: f64,
    seed: u64,
    eval: impl Fn(&[f64], &[f64]) -> f64,
    lower: impl Fn(f64) -> f64,
    upper: impl Fn(f64) -> f64,
) -> Result<VerificationReport> {
    if state_box.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "sample box has {} axes, form expects {dim}",
            state_box.dim()
        )));
    }
    let joint = state_box.product(state_box);
    let mut sampler = BoxSampler::new(joint, seed);
    let mut point = vec![0.0; 2 * dim];
    let mut worst = (f64::NEG_INFINITY, vec![]);
    for _ in 0..n_samples {
        sampler.next_into(&mut point);
        let (x, x_alt) = point.split_at(dim);
        let r = x.iter().zip(x_alt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let v = eval(x, x_alt);
        // Positive defect = sandwich violated on one side.
        let defect = (lower(r) - v).max(v - upper(r));
        if defect > worst.0 {
            worst = (defect, point.clone());
        }
    }
    Ok(VerificationReport {
        pass: worst.0 <= tol,
        n_samples,
        max_violation: worst.0,
        worst_point: worst.1,
        excluded: 0,
    })
}

/// Sampled check of decay condition (iii) for a quadratic form along a
/// field: sweeps `(x, x', u, u')` over `state_box^2 x input_box^2` and
/// reports the worst defect
///
/// ```text
///   L = 2 (P d) . (f(x,u) - f(x',u')) + kappa d^T P d - kappa_hat ||u-u'||^2,   d = x - x'.
/// ```
///
/// Gradients of the quadratic form are analytic; the field is only ever
/// evaluated, never differentiated. Samples are partitioned across threads
/// and the worst sample is reduced deterministically (max by value, ties by
/// lowest sample index), so reports are identical at any thread count.
pub fn verify_condition_iii(
    field: &VectorField,
    form: &QuadraticIncrementalForm,
    state_box: &BoxDomain,
    input_box: &BoxDomain,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<VerificationReport> {
    let n = form.dim();
    let m = field.input_dim();
    if field.state_dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "field has {} states, form covers {n}",
            field.state_dim()
        )));
    }
    if state_box.dim() != n || input_box.dim() != m {
        return Err(Error::DimensionMismatch(
            "sample boxes do not match the field's state/input dimensions".into(),
        ));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }

    let joint = state_box.product(state_box).product(&input_box.product(input_box));
    let width = 2 * n + 2 * m;
    let samples = BoxSampler::new(joint, seed).take(n_samples);

    let defect = |point: &[f64], fx: &mut [f64], fx_alt: &mut [f64], grad: &mut [f64]| -> f64 {
        let (x, rest) = point.split_at(n);
        let (x_alt, rest) = rest.split_at(n);
        let (u, u_alt) = rest.split_at(m);
        field.eval(x, u, fx);
        field.eval(x_alt, u_alt, fx_alt);
        form.grad_x(x, x_alt, grad);
        let mut l = form.kappa * form.eval(x, x_alt);
        for i in 0..n {
            l += grad[i] * (fx[i] - fx_alt[i]);
        }
        let du2: f64 = u.iter().zip(u_alt).map(|(a, b)| (a - b) * (a - b)).sum();
        l - form.kappa_hat * du2
    };

    let (max_violation, worst_idx) = (0..n_samples)
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], vec![0.0; n], vec![0.0; n]),
            |(fx, fx_alt, grad), i| {
                (defect(&samples[i * width..(i + 1) * width], fx, fx_alt, grad), i)
            },
        )
        .reduce(
            || (f64::NEG_INFINITY, usize::MAX),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        );

    Ok(VerificationReport {
        pass: max_violation <= tol,
        n_samples,
        max_violation,
        worst_point: samples[worst_idx * width..(worst_idx + 1) * width].to_vec(),
        excluded: 0,
    })
}
