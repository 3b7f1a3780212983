//! Characteristic structure of the coefficient matrix: eigenvalues, Riemann
//! variables and their inverse, normal-form right-hand sides, and the
//! solvability checks (hyperbolicity, boundary sign, CFL).

use crate::model::Coefficients;
use thiserror::Error;

/// Eigenvalues of the coefficient matrix [[0, a], [b, 2c]] at one state.
///
/// `lambda_r = c + u`, `lambda_l = c - u` with `u = sqrt(c^2 + a b) > 0`, so
/// `lambda_l < lambda_r` always holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenData {
    pub lambda_l: f64,
    pub lambda_r: f64,
    pub u: f64,
}

/// Riemann variables at one state: `r = -lambda_l P + a Q` moves right,
/// `s = -lambda_r P + a Q` moves left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannPair {
    pub r: f64,
    pub s: f64,
}

/// The discriminant `c^2 + a b` dropped to or below the tolerance floor:
/// the eigenvalues are no longer real and separated, and the system has
/// left the hyperbolic regime.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("hyperbolicity lost: c^2 + ab = {discriminant:.6e}")]
pub struct HyperbolicityLoss {
    pub discriminant: f64,
}

/// Relative floor on the discriminant, keeping `u` bounded away from zero
/// (the Riemann inversion divides by 2u).
const HYPERBOLICITY_RTOL: f64 = 1e-14;

/// Eigen-decompose the coefficient matrix at one state.
pub fn eigen(co: &Coefficients) -> Result<EigenData, HyperbolicityLoss> {
    let disc = co.c * co.c + co.a * co.b;
    let floor = HYPERBOLICITY_RTOL * (co.c * co.c + (co.a * co.b).abs() + 1.0);
    if !(disc > floor) {
        return Err(HyperbolicityLoss { discriminant: disc });
    }
    let u = disc.sqrt();
    Ok(EigenData {
        lambda_l: co.c - u,
        lambda_r: co.c + u,
        u,
    })
}

/// Map (P, Q) to the Riemann variables for the given frozen coefficients.
pub fn to_riemann(p: f64, q: f64, co: &Coefficients, e: &EigenData) -> RiemannPair {
    RiemannPair {
        r: -e.lambda_l * p + co.a * q,
        s: -e.lambda_r * p + co.a * q,
    }
}

/// Invert the Riemann map: P = (r - s)/(2u), Q = (lambda_r r - lambda_l s)/(2 u a).
pub fn from_riemann(rp: &RiemannPair, co: &Coefficients, e: &EigenData) -> (f64, f64) {
    let p = (rp.r - rp.s) / (2.0 * e.u);
    let q = (e.lambda_r * rp.r - e.lambda_l * rp.s) / (2.0 * e.u * co.a);
    (p, q)
}

/// Right-hand sides of the normal form: `d_r = -lambda_l f + a g` (along the
/// right-going characteristic) and `d_l = -lambda_r f + a g`.
pub fn normal_rhs(co: &Coefficients, e: &EigenData) -> (f64, f64) {
    (
        -e.lambda_l * co.f + co.a * co.g,
        -e.lambda_r * co.f + co.a * co.g,
    )
}

/// Boundary solvability sign condition: the left-going speed must be
/// negative and the right-going speed positive at a closed end.
pub fn boundary_sign_ok(e: &EigenData) -> bool {
    e.lambda_l < 0.0 && e.lambda_r > 0.0
}

/// Stability constraint on the step ratio: `sigma * bound < 1`, strictly.
/// `bound` is the grid maximum of `max(|lambda_l|, |lambda_r|)`.
pub fn cfl_ok(sigma: f64, speed_bound: f64) -> bool {
    sigma * speed_bound < 1.0
}
