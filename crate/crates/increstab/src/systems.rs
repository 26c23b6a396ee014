//! Built-in example systems, fully wired: plant, cascade form, stabilizer,
//! certificates, and hand-coded closed loops with analytic Jacobians.
//!
//! The flagship entry is `sat-cascade`,
//!
//! ```text
//!   d eta/dt  = sat(eta) + eta + 5 zeta
//!   d zeta/dt = zeta^2 + eta^2 + upsilon ,
//! ```
//!
//! an open-loop unstable planar system. The substitution
//! `upsilon = vbar - eta^2 - zeta^2` puts it in cascade form with a clean
//! integrator layer; the stabilizer `psi(eta) = -eta` makes the driven
//! subsystem `dy/dt = sat(y) - 4y + 5u` incrementally stable with certificate
//! `V1 = (y - y')^2` at rates `(kappa, kappa_hat) = (5, 25)`; backstepping at
//! gain 16 then renders the whole loop incrementally stable, certified by the
//! composed form `P = [[2, 1], [1, 1]]` at rates `(5, 1)` in the shifted
//! coordinates `chi = (eta, zeta + eta)`.
//!
//! The closed loops are written out by hand — substituting the law into the
//! plant and simplifying — so the hot integration paths are allocation-free
//! and carry analytic Jacobians. Tests pin them against the law-built route.

use nalgebra::{dmatrix, dvector};

use crate::backstepping::{
    apply_input_transform, synthesize_law, transform_coordinates, CascadeSystem,
    CoordinateTransform, FeedbackLaw, GainCertificates, InputTransform, StabilizingFunction,
};
use crate::contraction::MetricField;
use crate::dynamics::{saturation, VectorField};
use crate::error::{Error, Result};
use crate::lyapunov::QuadraticIncrementalForm;

/// A ready-to-use example: the plant, its cascade form, the pieces synthesis
/// needs, and independently hand-derived closed loops and certificates.
pub struct SystemBundle {
    pub name: &'static str,
    /// Original plant, state `(eta, zeta)`, physical input `upsilon`.
    pub plant: VectorField,
    /// Cascade form reached by [`SystemBundle::input_transform`].
    pub cascade: CascadeSystem,
    /// Stabilizer for the driven subsystem.
    pub psi: StabilizingFunction,
    /// Synthesis gain used by the stock closed loops.
    pub default_lambda: f64,
    /// Rewrites the cascade-form input into the plant input.
    pub input_transform: InputTransform,
    /// Driven subsystem under `zeta = psi(eta) + u`, state `y`, input `u`.
    pub eta_closed: VectorField,
    /// Certificate for [`SystemBundle::eta_closed`].
    pub eta_certificate: QuadraticIncrementalForm,
    /// Contraction metric for the driven subsystem with its `(lambda_hat,
    /// alpha)` rates.
    pub eta_metric: MetricField,
    pub eta_metric_rates: (f64, f64),
    /// Certificate for the closed loop in shifted coordinates.
    pub composed_certificate: QuadraticIncrementalForm,
    /// Hand-coded closed loop in plant coordinates `(eta, zeta)`, input is
    /// the synthetic `vhat`.
    pub closed_loop: VectorField,
    /// Hand-coded closed loop in shifted coordinates `(chi1, chi2)`.
    pub closed_loop_chi: VectorField,
}

impl SystemBundle {
    /// Shifted coordinates `chi = (eta, zeta - psi(eta))`.
    pub fn chi_transform(&self) -> CoordinateTransform {
        transform_coordinates(&self.psi)
    }

    /// Law on the cascade form at an explicit gain.
    pub fn cascade_law(&self, lambda: f64) -> Result<FeedbackLaw> {
        synthesize_law(&self.cascade, &self.psi, lambda)
    }

    /// Law driving the original plant: cascade law composed with the input
    /// transform.
    pub fn plant_law(&self, lambda: f64) -> Result<FeedbackLaw> {
        Ok(apply_input_transform(&self.cascade_law(lambda)?, &self.input_transform))
    }

    /// Certificate rates the synthesis gain is gated against.
    pub fn certificates(&self) -> GainCertificates {
        GainCertificates {
            lyapunov: Some((self.eta_certificate.kappa, self.eta_certificate.kappa_hat)),
            metric: Some(self.eta_metric_rates),
        }
    }
}

/// Names [`lookup`] accepts.
pub fn available() -> &'static [&'static str] {
    &["sat-cascade"]
}

/// Fetches a built-in system by name.
pub fn lookup(name: &str) -> Result<SystemBundle> {
    match name {
        "sat-cascade" => Ok(sat_cascade()),
        other => Err(Error::InvalidArgument(format!(
            "unknown system '{other}'; available: {}",
            available().join(", ")
        ))),
    }
}

/// Slope of the saturation at `y`: 1 strictly inside the band, 0 outside.
/// (The crease at |y| = 1 takes the outside value; matrix checks exclude it.)
fn sat_slope(y: f64) -> f64 {
    if y.abs() < 1.0 {
        1.0
    } else {
        0.0
    }
}

fn sat_cascade() -> SystemBundle {
    let plant = VectorField::new(2, 1, |x, u, out| {
        out[0] = saturation(x[0]) + x[0] + 5.0 * x[1];
        out[1] = x[1] * x[1] + x[0] * x[0] + u[0];
    })
    .with_jacobians(
        |x, _u| dmatrix![sat_slope(x[0]) + 1.0, 5.0; 2.0 * x[0], 2.0 * x[1]],
        |_x, _u| dmatrix![0.0; 1.0],
    );

    let driven = VectorField::new(1, 1, |x, u, out| {
        out[0] = saturation(x[0]) + x[0] + 5.0 * u[0];
    })
    .with_jacobians(
        |x, _u| dmatrix![sat_slope(x[0]) + 1.0],
        |_x, _u| dmatrix![5.0],
    );
    let cascade = CascadeSystem::new(driven, 1).expect("one layer");

    let psi = StabilizingFunction::affine(dmatrix![-1.0], dvector![0.0]);

    let input_transform = InputTransform::new("subtract-state-squares", |x, inner, out| {
        out[0] = inner[0] - x[0] * x[0] - x[1] * x[1];
    });

    // Driven subsystem under zeta = -eta + u: dy/dt = sat(y) - 4y + 5u.
    let eta_closed = VectorField::new(1, 1, |x, u, out| {
        out[0] = saturation(x[0]) - 4.0 * x[0] + 5.0 * u[0];
    })
    .with_jacobians(
        |x, _u| dmatrix![sat_slope(x[0]) - 4.0],
        |_x, _u| dmatrix![5.0],
    );
    let eta_certificate =
        QuadraticIncrementalForm::new(dmatrix![1.0], 5.0, 25.0).expect("valid rates");

    // In the identity metric the driven subsystem's curvature is
    // 2(sat'(y) - 4) <= -6, and the input column contributes
    // 2 sigma_max(5) = 10.
    let eta_metric = MetricField::euclidean(1);
    let eta_metric_rates = (6.0, 10.0);

    let composed_certificate =
        QuadraticIncrementalForm::new(dmatrix![2.0, 1.0; 1.0, 1.0], 5.0, 1.0)
            .expect("valid rates");

    // Substituting the transformed gain-16 law into the plant and cancelling
    // the squares leaves
    //   d eta/dt  = sat(eta) + eta + 5 zeta
    //   d zeta/dt = -sat(eta) - 17 eta - 21 zeta + vhat .
    let closed_loop = VectorField::new(2, 1, |x, u, out| {
        out[0] = saturation(x[0]) + x[0] + 5.0 * x[1];
        out[1] = -saturation(x[0]) - 17.0 * x[0] - 21.0 * x[1] + u[0];
    })
    .with_jacobians(
        |x, _u| {
            let s = sat_slope(x[0]);
            dmatrix![s + 1.0, 5.0; -s - 17.0, -21.0]
        },
        |_x, _u| dmatrix![0.0; 1.0],
    );

    // The same loop in chi = (eta, zeta + eta): the second coordinate
    // decouples into a plain contraction.
    let closed_loop_chi = VectorField::new(2, 1, |x, u, out| {
        out[0] = saturation(x[0]) - 4.0 * x[0] + 5.0 * x[1];
        out[1] = -16.0 * x[1] + u[0];
    })
    .with_jacobians(
        |x, _u| {
            let s = sat_slope(x[0]);
            dmatrix![s - 4.0, 5.0; 0.0, -16.0]
        },
        |_x, _u| dmatrix![0.0; 1.0],
    );

    SystemBundle {
        name: "sat-cascade",
        plant,
        cascade,
        psi,
        default_lambda: 16.0,
        input_transform,
        eta_closed,
        eta_certificate,
        eta_metric,
        eta_metric_rates,
        composed_certificate,
        closed_loop,
        closed_loop_chi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backstepping::substitute_feedback;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bundle() -> SystemBundle {
        lookup("sat-cascade").unwrap()
    }

    #[test]
    fn registry_knows_its_systems() {
        assert!(lookup("sat-cascade").is_ok());
        let err = match lookup("pendulum") {
            Err(e) => e,
            Ok(_) => panic!("unknown name accepted"),
        };
        assert!(err.to_string().contains("sat-cascade"));
    }

    #[test]
    fn plant_evaluates_to_hand_values() {
        let b = bundle();
        assert_eq!(b.plant.eval_vec(&[0.5, -0.25], &[2.0]), vec![-0.25, 2.3125]);
        // Saturated regime.
        assert_eq!(b.plant.eval_vec(&[2.0, 0.0], &[0.0]), vec![3.0, 4.0]);
    }

    #[test]
    fn laws_reproduce_hand_values() {
        let b = bundle();
        let cascade = b.cascade_law(16.0).unwrap();
        assert_eq!(cascade.eval_vec(&[1.0, -1.0], &[0.0]), vec![3.0]);
        let plant = b.plant_law(16.0).unwrap();
        assert_eq!(plant.eval_vec(&[1.0, -1.0], &[0.0]), vec![1.0]);
        assert_eq!(plant.description().pre_transform.as_deref(), Some("subtract-state-squares"));
    }

    #[test]
    fn hand_coded_closed_loop_matches_the_law_built_route() {
        let b = bundle();
        let law = b.plant_law(b.default_lambda).unwrap();
        let built = substitute_feedback(&b.plant, &law).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let x = [rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5)];
            let v = [rng.gen_range(-10.0..10.0)];
            let a = b.closed_loop.eval_vec(&x, &v);
            let c = built.eval_vec(&x, &v);
            for (ai, ci) in a.iter().zip(&c) {
                assert!((ai - ci).abs() < 1e-10, "{a:?} vs {c:?} at {x:?}");
            }
        }
    }

    #[test]
    fn chi_loop_is_the_conjugated_plant_loop() {
        // d chi/dt = Dphi . f(phi^{-1}(chi)) with Dphi = [[1, 0], [1, 1]].
        let b = bundle();
        let tr = b.chi_transform();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut x = [0.0; 2];
        for _ in 0..500 {
            let chi = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let v = [rng.gen_range(-10.0..10.0)];
            tr.inverse(&chi, &mut x);
            let dx = b.closed_loop.eval_vec(&x, &v);
            let want = [dx[0], dx[0] + dx[1]];
            let got = b.closed_loop_chi.eval_vec(&chi, &v);
            for (w, g) in want.iter().zip(&got) {
                assert!((w - g).abs() < 1e-10, "{want:?} vs {got:?}");
            }
        }
    }

    #[test]
    fn chi_second_coordinate_is_a_plain_contraction() {
        let b = bundle();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let chi = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let v = rng.gen_range(-10.0..10.0);
            let dot = b.closed_loop_chi.eval_vec(&chi, &[v]);
            assert_eq!(dot[1], -16.0 * chi[1] + v);
        }
    }

    #[test]
    fn closed_loop_jacobians_by_regime() {
        let b = bundle();
        let inside = b.closed_loop.jacobian_x(&[0.2, 0.3], &[0.0]);
        assert_eq!(inside, dmatrix![2.0, 5.0; -18.0, -21.0]);
        let outside = b.closed_loop.jacobian_x(&[1.5, 0.0], &[0.0]);
        assert_eq!(outside, dmatrix![1.0, 5.0; -17.0, -21.0]);
    }

    #[test]
    fn analytic_jacobians_match_differences_away_from_the_crease() {
        let b = bundle();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let fields = [&b.plant, &b.closed_loop, &b.closed_loop_chi];
        for field in fields {
            for _ in 0..100 {
                // Stay clear of |eta| = 1 where sat' jumps.
                let eta = loop {
                    let e: f64 = rng.gen_range(-2.0..2.0);
                    if (e.abs() - 1.0).abs() > 0.05 {
                        break e;
                    }
                };
                let x = [eta, rng.gen_range(-2.0..2.0)];
                let u = [rng.gen_range(-5.0..5.0)];
                let analytic = field.jacobian_x(&x, &u);
                let fd = field.fd_jacobian_x(&x, &u, 0.0);
                assert!((analytic - fd).abs().max() < 1e-6);
            }
        }
    }

    #[test]
    fn certificates_carry_the_derived_rates() {
        let b = bundle();
        assert_eq!(b.eta_certificate.kappa, 5.0);
        assert_eq!(b.eta_certificate.kappa_hat, 25.0);
        assert_eq!(b.composed_certificate.kappa, 5.0);
        assert_eq!(b.composed_certificate.kappa_hat, 1.0);
        assert_eq!(b.composed_certificate.p(), &dmatrix![2.0, 1.0; 1.0, 1.0]);
        let law = b.cascade_law(b.default_lambda).unwrap();
        assert!(law.gain_warnings(&b.certificates()).is_empty());
        let weak = b.cascade_law(10.0).unwrap();
        assert_eq!(weak.gain_warnings(&b.certificates()).len(), 1);
    }

    #[test]
    fn driven_subsystem_matches_its_formula() {
        let b = bundle();
        assert_eq!(b.eta_closed.eval_vec(&[0.5], &[0.2]), vec![0.5 - 2.0 + 1.0]);
        assert_eq!(b.eta_closed.eval_vec(&[1.5], &[0.0]), vec![1.0 - 6.0]);
    }
}
