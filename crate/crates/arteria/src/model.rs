//! Coefficient models: the five functions a, b, c, f, g of (x, t, P, Q)
//! defining one branch's quasilinear system.
//!
//! Ships the blood-flow specialization, a constant-coefficient linear model
//! for testing, and a manufactured-solution wrapper that replaces the forcing
//! so that a chosen smooth pair (P*, Q*) becomes the exact solution.

use crate::field::{AreaCurve, AreaProfile, Field2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// One evaluation of a coefficient model. `a`, `b`, `c` are the entries of
/// the coefficient matrix [[0, a], [b, 2c]]; `f`, `g` are the forcing terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub f: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("pressure {p:.6e} out of range (floor {floor:.3e}) at x={x}, t={t}")]
    PressureOutOfRange { x: f64, t: f64, p: f64, floor: f64 },
    #[error("vessel collapse: area {area:.6e} at x={x}, t={t}, p={p:.6e}")]
    CollapsedArea { x: f64, t: f64, p: f64, area: f64 },
    #[error("model parameter {name} must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("bad area profile: {0}")]
    BadAreaProfile(String),
}

/// A deterministic, total evaluation capability on its admissible domain.
/// Implementations must keep `a > 0` wherever they return Ok.
pub trait CoefficientModel: Send + Sync {
    fn eval(&self, x: f64, t: f64, p: f64, q: f64) -> Result<Coefficients, ModelError>;
}

/// Logarithmic area law `A(x, P) = a0(x) + beta * ln(P / p0)`.
///
/// This is the only area law built in; a different pressure-area relation is
/// a new [`CoefficientModel`] implementation, since the solver consumes only
/// the five coefficient functions.
#[derive(Debug, Clone)]
pub struct AreaLaw {
    pub a0: AreaCurve,
    pub beta: f64,
    pub p0: f64,
}

/// Blood-flow specialization of the general system:
/// a = 1/A_P, b = A/rho - Q^2 A_P / A^2, c = Q/A, f = 0,
/// g = Q^2 A_x / A^2 - 8 pi mu Q / (rho A), with A_P = beta / P.
#[derive(Debug, Clone)]
pub struct BloodFlowModel {
    pub rho: f64,
    pub mu: f64,
    pub area: AreaLaw,
    /// Hard floor on admissible pressure; crossing it is a domain error, not
    /// a clamp, so convergence studies cannot be silently corrupted.
    pub p_min: f64,
}

impl BloodFlowModel {
    pub fn new(rho: f64, mu: f64, area: AreaLaw) -> Result<Self, ModelError> {
        if !(rho > 0.0) {
            return Err(ModelError::NonPositiveParameter {
                name: "rho",
                value: rho,
            });
        }
        if !(mu >= 0.0) {
            return Err(ModelError::NonPositiveParameter {
                name: "mu",
                value: mu,
            });
        }
        if !(area.beta > 0.0) {
            return Err(ModelError::NonPositiveParameter {
                name: "beta",
                value: area.beta,
            });
        }
        if !(area.p0 > 0.0) {
            return Err(ModelError::NonPositiveParameter {
                name: "p0",
                value: area.p0,
            });
        }
        let p_min = 1e-9 * area.p0;
        Ok(BloodFlowModel {
            rho,
            mu,
            area,
            p_min,
        })
    }

    pub fn area_at(&self, x: f64, p: f64) -> f64 {
        self.area.a0.value(x) + self.area.beta * (p / self.area.p0).ln()
    }
}

impl CoefficientModel for BloodFlowModel {
    fn eval(&self, x: f64, t: f64, p: f64, q: f64) -> Result<Coefficients, ModelError> {
        if !(p >= self.p_min) {
            return Err(ModelError::PressureOutOfRange {
                x,
                t,
                p,
                floor: self.p_min,
            });
        }
        let area = self.area_at(x, p);
        if !(area > 0.0) {
            return Err(ModelError::CollapsedArea { x, t, p, area });
        }
        let a_p = self.area.beta / p;
        let a_x = self.area.a0.slope(x);
        let a2 = area * area;
        Ok(Coefficients {
            a: 1.0 / a_p,
            b: area / self.rho - q * q * a_p / a2,
            c: q / area,
            f: 0.0,
            g: q * q * a_x / a2 - 8.0 * PI * self.mu * q / (self.rho * area),
        })
    }
}

/// Constant-coefficient model: returns its parameters unchanged at every
/// state. `a > 0` is enforced at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    co: Coefficients,
}

impl LinearModel {
    pub fn new(a: f64, b: f64, c: f64, f: f64, g: f64) -> Result<Self, ModelError> {
        if !(a > 0.0) {
            return Err(ModelError::NonPositiveParameter {
                name: "a",
                value: a,
            });
        }
        Ok(LinearModel {
            co: Coefficients { a, b, c, f, g },
        })
    }

    pub fn coefficients(&self) -> Coefficients {
        self.co
    }
}

impl CoefficientModel for LinearModel {
    fn eval(&self, _x: f64, _t: f64, _p: f64, _q: f64) -> Result<Coefficients, ModelError> {
        Ok(self.co)
    }
}

/// Manufactured-solution wrapper: keeps the base model's a, b, c but replaces
/// the forcing with
///
/// ```text
///   f* = P*_t + a(x,t,P*,Q*) Q*_x
///   g* = Q*_t + b(x,t,P*,Q*) P*_x + 2 c(x,t,P*,Q*) Q*_x
/// ```
///
/// so (P*, Q*) solves the wrapped system exactly. Field derivatives are
/// analytic, not numerical, keeping the target exact to rounding.
pub struct ManufacturedModel {
    base: Box<dyn CoefficientModel>,
    pstar: Field2,
    qstar: Field2,
}

impl ManufacturedModel {
    pub fn new(base: Box<dyn CoefficientModel>, pstar: Field2, qstar: Field2) -> Self {
        ManufacturedModel { base, pstar, qstar }
    }

    pub fn pstar(&self) -> &Field2 {
        &self.pstar
    }

    pub fn qstar(&self) -> &Field2 {
        &self.qstar
    }

    /// Forcing pair (f*, g*) at (x, t).
    pub fn forcing(&self, x: f64, t: f64) -> Result<(f64, f64), ModelError> {
        let ps = self.pstar.value(x, t);
        let qs = self.qstar.value(x, t);
        let at_star = self.base.eval(x, t, ps, qs)?;
        let fstar = self.pstar.dt(x, t) + at_star.a * self.qstar.dx(x, t);
        let gstar = self.qstar.dt(x, t)
            + at_star.b * self.pstar.dx(x, t)
            + 2.0 * at_star.c * self.qstar.dx(x, t);
        Ok((fstar, gstar))
    }
}

impl CoefficientModel for ManufacturedModel {
    fn eval(&self, x: f64, t: f64, p: f64, q: f64) -> Result<Coefficients, ModelError> {
        let co = self.base.eval(x, t, p, q)?;
        let (fstar, gstar) = self.forcing(x, t)?;
        Ok(Coefficients {
            a: co.a,
            b: co.b,
            c: co.c,
            f: fstar,
            g: gstar,
        })
    }
}

/// Model parameter block as it appears in the network configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ModelSpec {
    BloodFlow {
        rho: f64,
        mu: f64,
        beta: f64,
        p0: f64,
        a0: AreaProfile,
    },
    Linear {
        a: f64,
        b: f64,
        #[serde(default)]
        c: f64,
        #[serde(default)]
        f: f64,
        #[serde(default)]
        g: f64,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<Box<dyn CoefficientModel>, ModelError> {
        match self {
            ModelSpec::BloodFlow {
                rho,
                mu,
                beta,
                p0,
                a0,
            } => {
                let curve = a0.compile().map_err(ModelError::BadAreaProfile)?;
                let model = BloodFlowModel::new(
                    *rho,
                    *mu,
                    AreaLaw {
                        a0: curve,
                        beta: *beta,
                        p0: *p0,
                    },
                )?;
                Ok(Box::new(model))
            }
            ModelSpec::Linear { a, b, c, f, g } => {
                Ok(Box::new(LinearModel::new(*a, *b, *c, *f, *g)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characteristics::eigen;
    use crate::field::Factor;

    fn reference_model() -> BloodFlowModel {
        BloodFlowModel::new(
            1.0,
            0.0,
            AreaLaw {
                a0: AreaCurve::Constant(1.0),
                beta: 1.0,
                p0: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn blood_flow_at_reference_state() {
        let m = reference_model();
        let co = m.eval(0.3, 0.0, 1.0, 0.0).unwrap();
        assert_eq!((co.a, co.b, co.c, co.f, co.g), (1.0, 1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn blood_flow_with_unit_flow() {
        let m = reference_model();
        let co = m.eval(0.3, 0.0, 1.0, 1.0).unwrap();
        // b = A/rho - Q^2 A_P / A^2 = 1 - 1 = 0, c = Q/A = 1, g = 0
        assert_eq!((co.a, co.b, co.c, co.g), (1.0, 0.0, 1.0, 0.0));
    }

    #[test]
    fn blood_flow_viscous_term() {
        let mut m = reference_model();
        m.mu = 1.0 / (8.0 * PI);
        let co = m.eval(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!((co.g - (-1.0)).abs() < 1e-15);
    }

    #[test]
    fn blood_flow_domain_errors() {
        let m = reference_model();
        assert!(matches!(
            m.eval(0.0, 0.0, -1.0, 0.0),
            Err(ModelError::PressureOutOfRange { .. })
        ));
        assert!(matches!(
            m.eval(0.0, 0.0, 0.0, 0.0),
            Err(ModelError::PressureOutOfRange { .. })
        ));
        // area collapses for tiny pressure where ln term dominates
        let m = BloodFlowModel::new(
            1.0,
            0.0,
            AreaLaw {
                a0: AreaCurve::Constant(1.0),
                beta: 1.0,
                p0: 1.0,
            },
        )
        .unwrap();
        assert!(matches!(
            m.eval(0.0, 0.0, 1e-3, 0.0),
            Err(ModelError::CollapsedArea { .. })
        ));
    }

    #[test]
    fn blood_flow_reference_state_satisfies_the_boundary_sign_condition() {
        let m = reference_model();
        let co = m.eval(0.0, 0.0, 1.0, 0.0).unwrap();
        let e = eigen(&co).unwrap();
        assert!(crate::characteristics::boundary_sign_ok(&e));
        assert_eq!((e.lambda_l, e.lambda_r), (-1.0, 1.0));
    }

    #[test]
    fn linear_model_returns_constants() {
        let m = LinearModel::new(1.0, 1.0, 0.0, 0.0, 0.0).unwrap();
        let co = m.eval(0.5, 2.0, -7.0, 11.0).unwrap();
        assert_eq!((co.a, co.b, co.c, co.f, co.g), (1.0, 1.0, 0.0, 0.0, 0.0));
        let m = LinearModel::new(2.0, 0.5, 0.1, 0.2, 0.3).unwrap();
        let co = m.eval(0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!((co.a, co.b, co.c, co.f, co.g), (2.0, 0.5, 0.1, 0.2, 0.3));
        assert!(LinearModel::new(0.0, 1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn manufactured_constant_fields_need_no_forcing() {
        let base = Box::new(LinearModel::new(1.0, 1.0, 0.0, 0.0, 0.0).unwrap());
        let m = ManufacturedModel::new(base, Field2::constant(4.0), Field2::constant(0.0));
        let co = m.eval(0.2, 0.3, 4.0, 0.0).unwrap();
        assert_eq!((co.f, co.g), (0.0, 0.0));
    }

    #[test]
    fn manufactured_forcing_matches_hand_derivation() {
        // pstar = sin(pi x) cos(t), qstar = 0, base {a=1, b=1, c=0}:
        // f* = -sin(pi x) sin(t), g* = pi cos(pi x) cos(t)
        let base = Box::new(LinearModel::new(1.0, 1.0, 0.0, 0.0, 0.0).unwrap());
        let pstar = Field2::term(
            1.0,
            Factor::Sin {
                freq: PI,
                phase: 0.0,
            },
            Factor::Cos {
                freq: 1.0,
                phase: 0.0,
            },
        );
        let m = ManufacturedModel::new(base, pstar, Field2::constant(0.0));
        let mut z = 7u64;
        let mut next = move || {
            z = z
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (z >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let x = next();
            let t = 2.0 * next();
            let (f, g) = m.forcing(x, t).unwrap();
            let f_expect = -(PI * x).sin() * t.sin();
            let g_expect = PI * (PI * x).cos() * t.cos();
            assert!((f - f_expect).abs() < 1e-12);
            assert!((g - g_expect).abs() < 1e-12);
        }
    }

    #[test]
    fn manufactured_residual_vanishes_on_quasilinear_base() {
        // pstar, qstar offset sinusoids on the blood-flow model; the residual
        // of (pstar, qstar) in the wrapped system must vanish to rounding.
        let base: Box<dyn CoefficientModel> = Box::new(reference_model());
        let pstar = Field2::constant(2.0).plus(
            0.25,
            Factor::Sin {
                freq: PI,
                phase: 0.0,
            },
            Factor::Cos {
                freq: 1.0,
                phase: 0.0,
            },
        );
        let qstar = Field2::term(
            0.2,
            Factor::Cos {
                freq: PI,
                phase: 0.0,
            },
            Factor::Sin {
                freq: 1.0,
                phase: 0.0,
            },
        );
        let m = ManufacturedModel::new(base, pstar.clone(), qstar.clone());
        let mut z = 99u64;
        let mut next = move || {
            z = z
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (z >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut max_res: f64 = 0.0;
        for _ in 0..1000 {
            let x = next();
            let t = next();
            let ps = pstar.value(x, t);
            let qs = qstar.value(x, t);
            let co = m.eval(x, t, ps, qs).unwrap();
            let r1 = pstar.dt(x, t) + co.a * qstar.dx(x, t) - co.f;
            let r2 = qstar.dt(x, t) + co.b * pstar.dx(x, t) + 2.0 * co.c * qstar.dx(x, t) - co.g;
            max_res = max_res.max(r1.abs().max(r2.abs()));
        }
        assert!(max_res < 1e-12, "residual {max_res}");
    }

    #[test]
    fn table_area_law_matches_the_linear_taper_it_samples() {
        // a spline through samples of a line is that line, so the two area
        // descriptions must produce identical coefficients (incl. the slope
        // entering g)
        let taper = AreaProfile::Linear {
            base: 1.0,
            slope: -0.3,
        };
        let points: Vec<(f64, f64)> = (0..=8)
            .map(|i| {
                let x = i as f64 / 8.0;
                (x, 1.0 - 0.3 * x)
            })
            .collect();
        let table = AreaProfile::Table { points };
        let build = |a0: AreaProfile| {
            BloodFlowModel::new(
                1.0,
                0.01,
                AreaLaw {
                    a0: a0.compile().unwrap(),
                    beta: 1.0,
                    p0: 2.0,
                },
            )
            .unwrap()
        };
        let (m1, m2) = (build(taper), build(table));
        for (x, p, q) in [(0.1, 2.0, 0.3), (0.55, 1.7, -0.2), (0.95, 2.4, 0.8)] {
            let c1 = m1.eval(x, 0.0, p, q).unwrap();
            let c2 = m2.eval(x, 0.0, p, q).unwrap();
            assert!((c1.a - c2.a).abs() < 1e-12);
            assert!((c1.b - c2.b).abs() < 1e-12);
            assert!((c1.c - c2.c).abs() < 1e-12);
            assert!((c1.g - c2.g).abs() < 1e-11, "{} vs {}", c1.g, c2.g);
        }
    }

    #[test]
    fn blood_flow_is_hyperbolic_wherever_pressure_is_positive() {
        // c^2 + ab = P A / (beta rho) > 0: fuzz 1e5 admissible states
        let m = BloodFlowModel::new(
            1.2,
            0.01,
            AreaLaw {
                a0: AreaCurve::Linear {
                    base: 1.0,
                    slope: -0.3,
                },
                beta: 0.7,
                p0: 2.0,
            },
        )
        .unwrap();
        let mut z = 2024u64;
        let mut next = move || {
            z = z
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (z >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut checked = 0u32;
        for _ in 0..100_000 {
            let x = next();
            let p = 0.05 + 10.0 * next();
            let q = 8.0 * next() - 4.0;
            match m.eval(x, 0.0, p, q) {
                Ok(co) => {
                    assert!(co.a > 0.0);
                    let e = eigen(&co);
                    assert!(e.is_ok(), "hyperbolicity lost at p={p}, q={q}");
                    checked += 1;
                }
                Err(ModelError::CollapsedArea { .. }) => {} // ln can push A <= 0
                Err(other) => panic!("unexpected error {other:?}"),
            }
        }
        assert!(checked > 90_000);
    }
}
