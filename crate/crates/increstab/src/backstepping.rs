//! Backstepping synthesis for cascades of the form
//!
//! ```text
//!     d eta / dt  = f(eta, zeta1)
//!     d zeta_i/dt = zeta_{i+1}          (i = 1 .. k-1)
//!     d zeta_k/dt = upsilon
//! ```
//!
//! Given a stabilizer `psi` — a virtual control for which the driven
//! `eta`-subsystem `d eta/dt = f(eta, psi(eta) + u_tilde)` is incrementally
//! stable — each integrator layer is peeled off with the law
//!
//! ```text
//!     upsilon = -lambda (zeta - psi(eta)) + Dpsi(eta) f(eta, zeta) + vhat ,
//! ```
//!
//! which in the shifted coordinates `chi = (eta, zeta - psi(eta))` turns the
//! last layer into the plainly contracting `d chi2/dt = -lambda chi2 + vhat`.
//! The closed loop inherits incremental input-to-state stability with respect
//! to the fresh input `vhat` provided `lambda` clears the gain thresholds
//! exposed by [`crate::lyapunov::required_gain`] and
//! [`crate::contraction::required_gain_contraction`]; synthesis itself only
//! warns, so undersized gains can still be explored numerically.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::VectorField;
use crate::error::{Error, Result};

type EvalFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type JacFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;
type HessFn = dyn Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync;
type LawFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// A virtual control `psi` for the driven subsystem, with enough derivative
/// structure for the synthesis formulas: the Jacobian appears in every law,
/// the (optional, per-component) Hessian only when another integrator layer
/// is peeled off above this one.
#[derive(Clone)]
pub struct StabilizingFunction {
    in_dim: usize,
    out_dim: usize,
    eval: Arc<EvalFn>,
    jac: Arc<JacFn>,
    hess: Option<Arc<HessFn>>,
    affine: Option<(DMatrix<f64>, DVector<f64>)>,
    analytic: bool,
    label: Option<String>,
}

impl StabilizingFunction {
    /// The affine stabilizer `psi(y) = K y + c` — Jacobian `K`, zero Hessian.
    pub fn affine(k: DMatrix<f64>, c: DVector<f64>) -> Self {
        let (out_dim, in_dim) = k.shape();
        assert_eq!(c.len(), out_dim, "offset length must match K's row count");
        let k_eval = k.clone();
        let c_eval = c.clone();
        let eval = move |y: &[f64], out: &mut [f64]| {
            for i in 0..out_dim {
                let mut acc = c_eval[i];
                for j in 0..in_dim {
                    acc += k_eval[(i, j)] * y[j];
                }
                out[i] = acc;
            }
        };
        let k_jac = k.clone();
        let jac = move |_y: &[f64]| k_jac.clone();
        let hess = move |_y: &[f64]| vec![DMatrix::zeros(in_dim, in_dim); out_dim];
        Self {
            in_dim,
            out_dim,
            eval: Arc::new(eval),
            jac: Arc::new(jac),
            hess: Some(Arc::new(hess)),
            affine: Some((k, c)),
            analytic: true,
            label: None,
        }
    }

    /// A general stabilizer with a finite-difference Jacobian. Fine for
    /// single-layer synthesis and plotting; the recursive path refuses it
    /// because difference noise compounds through the chain rule.
    pub fn new<F>(in_dim: usize, out_dim: usize, eval: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        let eval = Arc::new(eval);
        let fd_eval = Arc::clone(&eval);
        let jac = move |y: &[f64]| {
            let h = crate::dynamics::FD_STEP;
            let mut m = DMatrix::zeros(out_dim, in_dim);
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            let mut fp = vec![0.0; out_dim];
            let mut fm = vec![0.0; out_dim];
            for j in 0..in_dim {
                yp[j] = y[j] + h;
                ym[j] = y[j] - h;
                fd_eval(&yp, &mut fp);
                fd_eval(&ym, &mut fm);
                for i in 0..out_dim {
                    m[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
                }
                yp[j] = y[j];
                ym[j] = y[j];
            }
            m
        };
        Self {
            in_dim,
            out_dim,
            eval,
            jac: Arc::new(jac),
            hess: None,
            affine: None,
            analytic: false,
            label: None,
        }
    }

    /// A general stabilizer with an analytic Jacobian.
    pub fn with_jacobian<F, J>(in_dim: usize, out_dim: usize, eval: F, jac: J) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        J: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            in_dim,
            out_dim,
            eval: Arc::new(eval),
            jac: Arc::new(jac),
            hess: None,
            affine: None,
            analytic: true,
            label: None,
        }
    }

    /// Attaches per-component Hessians `d^2 psi_i / dy^2`, unlocking one more
    /// recursion layer.
    pub fn with_hessian<H>(mut self, hess: H) -> Self
    where
        H: Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.hess = Some(Arc::new(hess));
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn eval(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        (self.eval)(y, out);
    }

    pub fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        (self.jac)(y)
    }

    pub fn hessian(&self, y: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        self.hess.as_ref().map(|h| h(y))
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.analytic
    }

    /// `(K, c)` when the stabilizer is affine.
    pub fn affine_parts(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        self.affine.as_ref().map(|(k, c)| (k, c))
    }

    pub fn describe(&self) -> PsiDescription {
        match &self.affine {
            Some((k, c)) => PsiDescription::Affine {
                k: (0..k.nrows())
                    .map(|i| (0..k.ncols()).map(|j| k[(i, j)]).collect())
                    .collect(),
                c: c.iter().copied().collect(),
            },
            None => PsiDescription::Custom {
                name: self.label.clone().unwrap_or_else(|| "unnamed".into()),
            },
        }
    }
}

impl std::fmt::Debug for StabilizingFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StabilizingFunction")
            .field("in_dim", &self.in_dim)
            .field("out_dim", &self.out_dim)
            .field("affine", &self.affine.is_some())
            .field("analytic", &self.analytic)
            .finish()
    }
}

/// A cascade: a driven subsystem `d eta/dt = f(eta, zeta1)` under `layers`
/// stacked integrators of width `zeta_dim`, the last one fed by the input.
#[derive(Debug, Clone)]
pub struct CascadeSystem {
    eta_dim: usize,
    zeta_dim: usize,
    layers: usize,
    f: VectorField,
}

impl CascadeSystem {
    /// `f` must map `(eta, zeta)` with `state_dim = eta_dim` and
    /// `input_dim = zeta_dim`.
    pub fn new(f: VectorField, layers: usize) -> Result<Self> {
        if layers == 0 {
            return Err(Error::InvalidArgument("a cascade needs at least one layer".into()));
        }
        Ok(Self { eta_dim: f.state_dim(), zeta_dim: f.input_dim(), layers, f })
    }

    pub fn eta_dim(&self) -> usize {
        self.eta_dim
    }

    pub fn zeta_dim(&self) -> usize {
        self.zeta_dim
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn state_dim(&self) -> usize {
        self.eta_dim + self.layers * self.zeta_dim
    }

    pub fn driven_field(&self) -> &VectorField {
        &self.f
    }

    /// The open-loop field over the full state `(eta, zeta_1, .., zeta_k)`
    /// with input `upsilon`.
    pub fn full_field(&self) -> VectorField {
        let ne = self.eta_dim;
        let nz = self.zeta_dim;
        let layers = self.layers;
        let f = self.f.clone();
        VectorField::new(self.state_dim(), nz, move |x, u, out| {
            let (eta, zetas) = x.split_at(ne);
            f.eval(eta, &zetas[..nz], &mut out[..ne]);
            // Integrator chain: each zeta layer is driven by the next one,
            // the last by the input.
            for layer in 0..layers {
                let dst = ne + layer * nz;
                let src: &[f64] =
                    if layer + 1 < layers { &zetas[(layer + 1) * nz..(layer + 2) * nz] } else { u };
                out[dst..dst + nz].copy_from_slice(&src[..nz]);
            }
        })
    }
}

/// How a law was produced, serialized alongside its parameters.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PsiDescription {
    Affine { k: Vec<Vec<f64>>, c: Vec<f64> },
    Custom { name: String },
}

/// JSON-facing description of a synthesized law.
#[derive(Debug, Clone, Serialize)]
pub struct LawDescription {
    pub construction: String,
    pub lambda: Vec<f64>,
    pub psi: PsiDescription,
    pub pre_transform: Option<String>,
}

/// A state-feedback law `upsilon = k(x, vhat)`, affine in the synthetic
/// input `vhat`: `k(x, vhat) = k(x, 0) + vhat`.
#[derive(Clone)]
pub struct FeedbackLaw {
    state_dim: usize,
    output_dim: usize,
    lambdas: Vec<f64>,
    k: Arc<LawFn>,
    description: LawDescription,
}

impl FeedbackLaw {
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Dimension of both the produced input and the synthetic input `vhat`.
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn description(&self) -> &LawDescription {
        &self.description
    }

    pub fn eval(&self, state: &[f64], vhat: &[f64], out: &mut [f64]) {
        debug_assert_eq!(state.len(), self.state_dim);
        debug_assert_eq!(vhat.len(), self.output_dim);
        (self.k)(state, vhat, out);
    }

    pub fn eval_vec(&self, state: &[f64], vhat: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim];
        self.eval(state, vhat, &mut out);
        out
    }

    /// Non-fatal gain gating: compares the smallest synthesis gain against
    /// the certificate thresholds and describes any shortfall.
    pub fn gain_warnings(&self, certificates: &GainCertificates) -> Vec<String> {
        let lambda = self.lambdas.iter().copied().fold(f64::INFINITY, f64::min);
        let mut warnings = Vec::new();
        if let Some((kappa, kappa_hat)) = certificates.lyapunov {
            let threshold = crate::lyapunov::required_gain(kappa, kappa_hat);
            if lambda < threshold {
                warnings.push(format!(
                    "gain {lambda} is below the certificate composition threshold \
                     (kappa + kappa_hat + 1)/2 = {threshold}; the composed form is not guaranteed \
                     to decay"
                ));
            }
        }
        if let Some((lambda_hat, alpha)) = certificates.metric {
            let threshold = crate::contraction::required_gain_contraction(lambda_hat, alpha);
            if lambda <= threshold {
                warnings.push(format!(
                    "gain {lambda} does not strictly exceed the metric composition threshold \
                     alpha^2/(8 lambda_hat) = {threshold}; the block metric is not guaranteed \
                     to contract"
                ));
            }
        }
        warnings
    }
}

impl std::fmt::Debug for FeedbackLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeedbackLaw")
            .field("state_dim", &self.state_dim)
            .field("output_dim", &self.output_dim)
            .field("lambdas", &self.lambdas)
            .finish()
    }
}

/// Certificate rates a law can be gated against; either slot may be absent.
#[derive(Debug, Clone, Default)]
pub struct GainCertificates {
    /// `(kappa, kappa_hat)` of a certificate for the driven subsystem.
    pub lyapunov: Option<(f64, f64)>,
    /// `(lambda_hat, alpha)` of a contraction metric for the driven subsystem.
    pub metric: Option<(f64, f64)>,
}

fn check_gain(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("gain must be positive, got {lambda}")));
    }
    Ok(())
}

fn check_psi_dims(sys: &CascadeSystem, psi: &StabilizingFunction) -> Result<()> {
    if psi.in_dim() != sys.eta_dim() || psi.out_dim() != sys.zeta_dim() {
        return Err(Error::DimensionMismatch(format!(
            "stabilizer maps {} -> {}, cascade needs {} -> {}",
            psi.in_dim(),
            psi.out_dim(),
            sys.eta_dim(),
            sys.zeta_dim()
        )));
    }
    Ok(())
}

/// Synthesizes the single-layer law
/// `k(eta, zeta, vhat) = -lambda (zeta - psi(eta)) + Dpsi(eta) f(eta, zeta) + vhat`.
///
/// Cascades with more layers go through [`synthesize_recursive`].
pub fn synthesize_law(
    sys: &CascadeSystem,
    psi: &StabilizingFunction,
    lambda: f64,
) -> Result<FeedbackLaw> {
    check_gain(lambda)?;
    check_psi_dims(sys, psi)?;
    if sys.layers() != 1 {
        return Err(Error::InvalidArgument(format!(
            "cascade has {} integrator layers; use synthesize_recursive",
            sys.layers()
        )));
    }
    let ne = sys.eta_dim();
    let nz = sys.zeta_dim();
    let f = sys.driven_field().clone();
    let psi_cl = psi.clone();
    let k = move |x: &[f64], vhat: &[f64], out: &mut [f64]| {
        let (eta, zeta) = x.split_at(ne);
        let mut psi_eta = vec![0.0; nz];
        psi_cl.eval(eta, &mut psi_eta);
        let mut f_eta = vec![0.0; ne];
        f.eval(eta, zeta, &mut f_eta);
        let jac = psi_cl.jacobian(eta);
        for i in 0..nz {
            let mut drift = 0.0;
            for j in 0..ne {
                drift += jac[(i, j)] * f_eta[j];
            }
            out[i] = -lambda * (zeta[i] - psi_eta[i]) + drift + vhat[i];
        }
    };
    Ok(FeedbackLaw {
        state_dim: sys.state_dim(),
        output_dim: nz,
        lambdas: vec![lambda],
        k: Arc::new(k),
        description: LawDescription {
            construction: "cascade-backstepping".into(),
            lambda: vec![lambda],
            psi: psi.describe(),
            pre_transform: None,
        },
    })
}

/// Peels off `k` integrator layers, one gain per layer.
///
/// Each intermediate stabilizer's Jacobian is assembled analytically by the
/// chain rule, which consumes one derivative order per layer: layer `i+1`
/// needs the Hessian of the running stabilizer. The provided `psi` covers the
/// first step (affine stabilizers carry a zero Hessian automatically); the
/// field type only carries first derivatives, so chains deeper than two
/// layers are rejected as unsupported rather than silently differentiated
/// numerically — finite-difference noise compounds through the chain rule.
pub fn synthesize_recursive(
    sys: &CascadeSystem,
    psi: &StabilizingFunction,
    lambdas: &[f64],
) -> Result<FeedbackLaw> {
    if lambdas.len() != sys.layers() {
        return Err(Error::InvalidArgument(format!(
            "{} gains supplied for {} integrator layers",
            lambdas.len(),
            sys.layers()
        )));
    }
    for &l in lambdas {
        check_gain(l)?;
    }
    check_psi_dims(sys, psi)?;
    if sys.layers() == 1 {
        let mut law = synthesize_law(sys, psi, lambdas[0])?;
        law.description.construction = "recursive-backstepping".into();
        return Ok(law);
    }
    if sys.layers() > 2 {
        return Err(Error::Unsupported(format!(
            "recursive synthesis through {} layers needs second derivatives of the driven field, \
             which the field representation does not carry",
            sys.layers()
        )));
    }
    if !psi.has_analytic_jacobian() {
        return Err(Error::Unsupported(
            "recursive synthesis requires an analytic stabilizer Jacobian; finite-difference \
             chains are rejected"
                .into(),
        ));
    }
    if psi.hess.is_none() {
        return Err(Error::Unsupported(
            "recursive synthesis past the first layer needs the stabilizer Hessian".into(),
        ));
    }
    if !sys.driven_field().has_analytic_jacobians() {
        return Err(Error::Unsupported(
            "recursive synthesis requires analytic Jacobians of the driven field".into(),
        ));
    }

    let ne = sys.eta_dim();
    let nz = sys.zeta_dim();
    let (l1, l2) = (lambdas[0], lambdas[1]);
    let f = sys.driven_field().clone();

    // Intermediate stabilizer over w = (eta, zeta1):
    //   psi1(w) = -l1 (zeta1 - psi(eta)) + Dpsi(eta) f(eta, zeta1)
    // with the analytic Jacobian
    //   d psi1/d eta   = l1 Dpsi + (Hpsi . f) + Dpsi df/d eta
    //   d psi1/d zeta1 = -l1 I + Dpsi df/d zeta1 .
    let psi0 = psi.clone();
    let f0 = f.clone();
    let psi1_eval = move |w: &[f64], out: &mut [f64]| {
        let (eta, zeta1) = w.split_at(ne);
        let mut psi_eta = vec![0.0; nz];
        psi0.eval(eta, &mut psi_eta);
        let mut f_eta = vec![0.0; ne];
        f0.eval(eta, zeta1, &mut f_eta);
        let jac = psi0.jacobian(eta);
        for i in 0..nz {
            let mut drift = 0.0;
            for j in 0..ne {
                drift += jac[(i, j)] * f_eta[j];
            }
            out[i] = -l1 * (zeta1[i] - psi_eta[i]) + drift;
        }
    };
    let psi0 = psi.clone();
    let f0 = f.clone();
    let psi1_jac = move |w: &[f64]| -> DMatrix<f64> {
        let (eta, zeta1) = w.split_at(ne);
        let dpsi = psi0.jacobian(eta);
        let hess = psi0.hessian(eta).expect("checked above");
        let mut f_eta = vec![0.0; ne];
        f0.eval(eta, zeta1, &mut f_eta);
        let dfde = f0.jacobian_x(eta, zeta1);
        let dfdz = f0.jacobian_u(eta, zeta1);
        let mut m = DMatrix::zeros(nz, ne + nz);
        for i in 0..nz {
            for j in 0..ne {
                let mut v = l1 * dpsi[(i, j)];
                for (b, fb) in f_eta.iter().enumerate() {
                    v += hess[i][(j, b)] * fb;
                }
                for b in 0..ne {
                    v += dpsi[(i, b)] * dfde[(b, j)];
                }
                m[(i, j)] = v;
            }
            for j in 0..nz {
                let mut v = if i == j { -l1 } else { 0.0 };
                for b in 0..ne {
                    v += dpsi[(i, b)] * dfdz[(b, j)];
                }
                m[(i, ne + j)] = v;
            }
        }
        m
    };
    let psi1 = StabilizingFunction::with_jacobian(ne + nz, nz, psi1_eval, psi1_jac);

    // Aggregated driven field F1(w, zeta2) = (f(eta, zeta1), zeta2).
    let f0 = f.clone();
    let agg = VectorField::new(ne + nz, nz, move |w, zeta2, out| {
        let (eta, zeta1) = w.split_at(ne);
        f0.eval(eta, zeta1, &mut out[..ne]);
        out[ne..].copy_from_slice(zeta2);
    });
    let outer = CascadeSystem::new(agg, 1)?;
    let mut law = synthesize_law(&outer, &psi1, l2)?;
    law.state_dim = sys.state_dim();
    law.lambdas = lambdas.to_vec();
    law.description = LawDescription {
        construction: "recursive-backstepping".into(),
        lambda: lambdas.to_vec(),
        psi: psi.describe(),
        pre_transform: None,
    };
    Ok(law)
}

/// A change of input coordinates applied after synthesis: the actual plant
/// input is `transform(x, k(x, vhat))`. Used when the plant was brought into
/// cascade form by an input substitution that must be undone to drive the
/// original system.
#[derive(Clone)]
pub struct InputTransform {
    label: String,
    apply: Arc<LawFn>,
}

impl InputTransform {
    /// `apply(state, inner, out)` rewrites the cascade-form input `inner`
    /// into the plant input.
    pub fn new<F>(label: impl Into<String>, apply: F) -> Self
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { label: label.into(), apply: Arc::new(apply) }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn apply(&self, state: &[f64], inner: &[f64], out: &mut [f64]) {
        (self.apply)(state, inner, out);
    }
}

impl std::fmt::Debug for InputTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InputTransform").field("label", &self.label).finish()
    }
}

/// Composes a synthesized law with an input transform, recording the
/// transform in the law's description.
pub fn apply_input_transform(law: &FeedbackLaw, transform: &InputTransform) -> FeedbackLaw {
    let inner = Arc::clone(&law.k);
    let tr = transform.clone();
    let nz = law.output_dim;
    let k = move |x: &[f64], vhat: &[f64], out: &mut [f64]| {
        let mut mid = vec![0.0; nz];
        inner(x, vhat, &mut mid);
        tr.apply(x, &mid, out);
    };
    let mut description = law.description.clone();
    description.pre_transform = Some(transform.label.clone());
    FeedbackLaw {
        state_dim: law.state_dim,
        output_dim: law.output_dim,
        lambdas: law.lambdas.clone(),
        k: Arc::new(k),
        description,
    }
}

/// The shifted coordinates `phi(eta, zeta) = (eta, zeta - psi(eta))` in which
/// a synthesized single-layer loop becomes `d chi2/dt = -lambda chi2 + vhat`.
#[derive(Debug, Clone)]
pub struct CoordinateTransform {
    eta_dim: usize,
    zeta_dim: usize,
    psi: StabilizingFunction,
}

impl CoordinateTransform {
    pub fn dim(&self) -> usize {
        self.eta_dim + self.zeta_dim
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        let (eta, zeta) = x.split_at(self.eta_dim);
        out[..self.eta_dim].copy_from_slice(eta);
        let mut psi_eta = vec![0.0; self.zeta_dim];
        self.psi.eval(eta, &mut psi_eta);
        for i in 0..self.zeta_dim {
            out[self.eta_dim + i] = zeta[i] - psi_eta[i];
        }
    }

    pub fn inverse(&self, chi: &[f64], out: &mut [f64]) {
        let (eta, chi2) = chi.split_at(self.eta_dim);
        out[..self.eta_dim].copy_from_slice(eta);
        let mut psi_eta = vec![0.0; self.zeta_dim];
        self.psi.eval(eta, &mut psi_eta);
        for i in 0..self.zeta_dim {
            out[self.eta_dim + i] = chi2[i] + psi_eta[i];
        }
    }
}

/// Builds the shifted-coordinate map for a stabilizer.
pub fn transform_coordinates(psi: &StabilizingFunction) -> CoordinateTransform {
    CoordinateTransform { eta_dim: psi.in_dim(), zeta_dim: psi.out_dim(), psi: psi.clone() }
}

/// Substitutes a feedback law into any field with matching input dimension:
/// the result maps `(x, vhat) -> f(x, k(x, vhat))`.
pub fn substitute_feedback(field: &VectorField, law: &FeedbackLaw) -> Result<VectorField> {
    if field.input_dim() != law.output_dim() || field.state_dim() != law.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "law maps {}-state to {}-input, field is {}-state/{}-input",
            law.state_dim(),
            law.output_dim(),
            field.state_dim(),
            field.input_dim()
        )));
    }
    let f = field.clone();
    let law = law.clone();
    let m = law.output_dim();
    Ok(VectorField::new(field.state_dim(), m, move |x, vhat, out| {
        let mut u = vec![0.0; m];
        law.eval(x, vhat, &mut u);
        f.eval(x, &u, out);
    }))
}

/// The closed loop of a cascade under a synthesized law, as a field over the
/// full state with the synthetic input `vhat`.
pub fn closed_loop_field(sys: &CascadeSystem, law: &FeedbackLaw) -> Result<VectorField> {
    substitute_feedback(&sys.full_field(), law)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::saturation;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// The saturated cascade: d eta/dt = sat(eta) + eta + 5 zeta, with one
    /// integrator layer.
    fn sat_cascade() -> CascadeSystem {
        let f = VectorField::new(1, 1, |x, u, out| out[0] = saturation(x[0]) + x[0] + 5.0 * u[0]);
        CascadeSystem::new(f, 1).unwrap()
    }

    fn negate() -> StabilizingFunction {
        StabilizingFunction::affine(dmatrix![-1.0], dvector![0.0])
    }

    #[test]
    fn law_reproduces_the_hand_computed_value() {
        // k(1, -1, 0) = -16(zeta + eta) - (sat(eta) + eta + 5 zeta) + 0
        //             = -16*0 - (1 + 1 - 5) = 3.
        let law = synthesize_law(&sat_cascade(), &negate(), 16.0).unwrap();
        assert_eq!(law.eval_vec(&[1.0, -1.0], &[0.0]), vec![3.0]);
    }

    #[test]
    fn law_is_affine_in_the_synthetic_input() {
        let law = synthesize_law(&sat_cascade(), &negate(), 16.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let v = rng.gen_range(-10.0..10.0);
            let base = law.eval_vec(&x, &[0.0])[0];
            let shifted = law.eval_vec(&x, &[v])[0];
            assert!((shifted - (base + v)).abs() < 1e-12);
        }
    }

    #[test]
    fn input_transform_composes_and_is_recorded() {
        // Plant input: upsilon = inner - eta^2 - zeta^2.
        let law = synthesize_law(&sat_cascade(), &negate(), 16.0).unwrap();
        let tr = InputTransform::new("subtract-squares", |x, inner, out| {
            out[0] = inner[0] - x[0] * x[0] - x[1] * x[1];
        });
        let plant_law = apply_input_transform(&law, &tr);
        assert_eq!(plant_law.eval_vec(&[1.0, -1.0], &[0.0]), vec![1.0]);
        assert_eq!(plant_law.description().pre_transform.as_deref(), Some("subtract-squares"));
    }

    #[test]
    fn gain_gate_warns_below_threshold_only() {
        let certs = GainCertificates { lyapunov: Some((5.0, 25.0)), metric: None };
        let short = synthesize_law(&sat_cascade(), &negate(), 10.0).unwrap();
        assert_eq!(short.gain_warnings(&certs).len(), 1);
        let ok = synthesize_law(&sat_cascade(), &negate(), 16.0).unwrap();
        assert!(ok.gain_warnings(&certs).is_empty());
        // Threshold is inclusive for the certificate route.
        let edge = synthesize_law(&sat_cascade(), &negate(), 15.5).unwrap();
        assert!(edge.gain_warnings(&certs).is_empty());
    }

    #[test]
    fn coordinate_round_trip_is_identity() {
        let tr = transform_coordinates(&StabilizingFunction::new(2, 1, |y, out| {
            out[0] = y[0].sin() - y[1].powi(2)
        }));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut chi = [0.0; 3];
        let mut back = [0.0; 3];
        for _ in 0..500 {
            let x = [
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            ];
            tr.forward(&x, &mut chi);
            tr.inverse(&chi, &mut back);
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn closed_loop_routes_agree() {
        // Closing the cascade's full field and substituting into an
        // identically-shaped raw field must give the same dynamics.
        let sys = sat_cascade();
        let law = synthesize_law(&sys, &negate(), 16.0).unwrap();
        let via_cascade = closed_loop_field(&sys, &law).unwrap();
        let raw = sys.full_field();
        let via_substitute = substitute_feedback(&raw, &law).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let v = [rng.gen_range(-10.0..10.0)];
            assert_eq!(via_cascade.eval_vec(&x, &v), via_substitute.eval_vec(&x, &v));
        }
    }

    #[test]
    fn recursive_double_integrator_matches_hand_gains() {
        // d eta/dt = zeta1, d zeta1/dt = zeta2, d zeta2/dt = upsilon with
        // psi = -eta and gains (2, 2). By hand:
        //   psi1(eta, zeta1) = -2 eta - 3 zeta1
        //   k(x, 0)          = -4 eta - 8 zeta1 - 5 zeta2 .
        let f = VectorField::new(1, 1, |_x, u, out| out[0] = u[0])
            .with_jacobians(|_, _| dmatrix![0.0], |_, _| dmatrix![1.0]);
        let sys = CascadeSystem::new(f, 2).unwrap();
        let law = synthesize_recursive(&sys, &negate(), &[2.0, 2.0]).unwrap();
        let gain_of = |axis: usize| {
            let mut x = [0.0; 3];
            x[axis] = 1.0;
            law.eval_vec(&x, &[0.0])[0]
        };
        assert!((gain_of(0) + 4.0).abs() < 1e-12, "eta gain {}", gain_of(0));
        assert!((gain_of(1) + 8.0).abs() < 1e-12, "zeta1 gain {}", gain_of(1));
        assert!((gain_of(2) + 5.0).abs() < 1e-12, "zeta2 gain {}", gain_of(2));
        // Linearity: arbitrary states are the sum of axis responses.
        let x = [0.3, -1.2, 0.7];
        let expect = -4.0 * x[0] - 8.0 * x[1] - 5.0 * x[2] + 0.9;
        assert!((law.eval_vec(&x, &[0.9])[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn recursion_depth_and_derivative_requirements_are_enforced() {
        let f = VectorField::new(1, 1, |_x, u, out| out[0] = u[0])
            .with_jacobians(|_, _| dmatrix![0.0], |_, _| dmatrix![1.0]);
        let deep = CascadeSystem::new(f.clone(), 3).unwrap();
        assert!(matches!(
            synthesize_recursive(&deep, &negate(), &[2.0, 2.0, 2.0]),
            Err(Error::Unsupported(_))
        ));
        // Finite-difference stabilizer Jacobians are rejected past layer one.
        let fd_psi = StabilizingFunction::new(1, 1, |y, out| out[0] = -y[0]);
        let two = CascadeSystem::new(f, 2).unwrap();
        assert!(matches!(
            synthesize_recursive(&two, &fd_psi, &[2.0, 2.0]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn dimension_and_gain_validation() {
        let sys = sat_cascade();
        let wide = StabilizingFunction::affine(dmatrix![-1.0, 0.0], dvector![0.0]);
        assert!(matches!(
            synthesize_law(&sys, &wide, 16.0),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            synthesize_law(&sys, &negate(), 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            synthesize_law(&sys, &negate(), f64::NAN),
            Err(Error::InvalidArgument(_))
        ));
    }
}
