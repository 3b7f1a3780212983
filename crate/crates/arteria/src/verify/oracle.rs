//! Method-of-characteristics oracle for linear constant-coefficient
//! single-branch problems.
//!
//! With constant a, b, c the characteristics are straight lines and the
//! transported Riemann variables satisfy integral equations whose only
//! implicit coupling sits on the boundary traces: r at x=0 through the
//! source relation, s at x=1 through the terminal relation (a Volterra
//! integral for windkessel terminals). A Picard iteration on the four traces
//! converges in the contraction regime; the solution is then evaluated
//! anywhere by following the two characteristics backward to initial data or
//! a converged trace.
//!
//! Scope: one branch, one source, one terminal, and a horizon small enough
//! that each characteristic family reflects at most once
//! (T <= min(1/lambda_r, 1/|lambda_l|)).

use crate::characteristics::{eigen, EigenData};
use crate::field::{Field2, Profile};
use crate::interp::CubicSpline;
use crate::model::Coefficients;
use crate::network::WindkesselParams;
use crate::signal::TimeSignal;
use crate::verify::quad::{adaptive_simpson, cumulative_integral};
use thiserror::Error;

pub enum OracleSource {
    Pressure(Box<dyn TimeSignal>),
    Flow(Box<dyn TimeSignal>),
}

pub enum OracleTerminal {
    Pressure(Box<dyn TimeSignal>),
    Flow(Box<dyn TimeSignal>),
    Windkessel {
        params: WindkesselParams,
        w: Box<dyn TimeSignal>,
    },
}

pub struct OracleProblem {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub forcing_f: Field2,
    pub forcing_g: Field2,
    pub source: OracleSource,
    pub terminal: OracleTerminal,
    pub p_init: Profile,
    pub q_init: Profile,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("coefficients are not hyperbolic: c^2 + ab = {discriminant:.6e}")]
    NotHyperbolic { discriminant: f64 },
    #[error("boundary sign condition fails: lambda_l = {lambda_l:.6e}, lambda_r = {lambda_r:.6e}")]
    BadBoundarySign { lambda_l: f64, lambda_r: f64 },
    #[error(
        "horizon {t_max:.6} exceeds the single-reflection region (limit {limit:.6}); \
         the oracle only covers one boundary reflection per characteristic family"
    )]
    HorizonTooLarge { t_max: f64, limit: f64 },
    #[error("Picard iteration did not converge in {iters} iterations (last distance {last:.3e})")]
    PicardDivergence { iters: usize, last: f64 },
}

pub struct OracleSolution {
    a: f64,
    eig: EigenData,
    forcing_f: Field2,
    forcing_g: Field2,
    p_init: Profile,
    q_init: Profile,
    t_max: f64,
    trace_r0: CubicSpline,
    trace_s1: CubicSpline,
    distances: Vec<f64>,
    quad_tol: f64,
}

const TRACE_INTERVALS: usize = 2048;
const PICARD_TOL: f64 = 1e-10;
const PICARD_MAX_ITERS: usize = 200;

/// Solve the integral equations on [0, t_max] by Picard iteration on the
/// boundary traces, to successive-iterate sup-distance below 1e-10.
pub fn solve_oracle(prob: &OracleProblem, t_max: f64) -> Result<OracleSolution, OracleError> {
    let co = Coefficients {
        a: prob.a,
        b: prob.b,
        c: prob.c,
        f: 0.0,
        g: 0.0,
    };
    let eig = eigen(&co).map_err(|e| OracleError::NotHyperbolic {
        discriminant: e.discriminant,
    })?;
    if !(eig.lambda_l < 0.0 && eig.lambda_r > 0.0) {
        return Err(OracleError::BadBoundarySign {
            lambda_l: eig.lambda_l,
            lambda_r: eig.lambda_r,
        });
    }
    let limit = (1.0 / eig.lambda_r).min(1.0 / (-eig.lambda_l));
    if t_max > limit * (1.0 + 1e-12) {
        return Err(OracleError::HorizonTooLarge { t_max, limit });
    }

    let quad_tol = 1e-12;
    let helper = Helper {
        a: prob.a,
        eig,
        forcing_f: &prob.forcing_f,
        forcing_g: &prob.forcing_g,
        p_init: &prob.p_init,
        q_init: &prob.q_init,
        quad_tol,
    };

    let m = TRACE_INTERVALS;
    let dt = t_max / m as f64;
    let taus: Vec<f64> = (0..=m).map(|j| j as f64 * dt).collect();

    // Direct parts: fixed by initial data, cached once.
    let s0_direct: Vec<f64> = taus
        .iter()
        .map(|&tau| helper.s_from_initial(0.0, tau))
        .collect();
    let r1_direct: Vec<f64> = taus
        .iter()
        .map(|&tau| helper.r_from_initial(1.0, tau))
        .collect();

    let mut r0 = vec![0.0; m + 1];
    let mut s0 = vec![0.0; m + 1];
    let mut r1 = vec![0.0; m + 1];
    let mut s1 = vec![0.0; m + 1];
    let mut distances = Vec::new();
    let mut converged = false;

    let u2a = 2.0 * eig.u * prob.a;
    for _iter in 0..PICARD_MAX_ITERS {
        let new_s0 = s0_direct.clone();
        let new_r1 = r1_direct.clone();
        let new_r0: Vec<f64> = match &prob.source {
            OracleSource::Pressure(sig) => taus
                .iter()
                .zip(&s0)
                .map(|(&tau, &s)| 2.0 * eig.u * sig.at(tau) + s)
                .collect(),
            OracleSource::Flow(sig) => taus
                .iter()
                .zip(&s0)
                .map(|(&tau, &s)| (u2a * sig.at(tau) + eig.lambda_l * s) / eig.lambda_r)
                .collect(),
        };
        let new_s1: Vec<f64> = match &prob.terminal {
            OracleTerminal::Pressure(sig) => taus
                .iter()
                .zip(&r1)
                .map(|(&tau, &r)| r - 2.0 * eig.u * sig.at(tau))
                .collect(),
            OracleTerminal::Flow(sig) => taus
                .iter()
                .zip(&r1)
                .map(|(&tau, &r)| (eig.lambda_r * r - u2a * sig.at(tau)) / eig.lambda_l)
                .collect(),
            OracleTerminal::Windkessel { params, w } => {
                // alpha r + beta s = (P^I - eta Q^I)(1)
                //                    + integral of (W + gr r + gs s) over [0, t]
                let alpha = (prob.a - params.eta * eig.lambda_r) / u2a;
                let beta = (params.eta * eig.lambda_l - prob.a) / u2a;
                let gr = (params.epsilon * eig.lambda_r - params.delta * prob.a) / u2a;
                let gs = (params.delta * prob.a - params.epsilon * eig.lambda_l) / u2a;
                let m0 = prob.p_init.value(1.0) - params.eta * prob.q_init.value(1.0);
                let integrand: Vec<f64> = taus
                    .iter()
                    .enumerate()
                    .map(|(j, &tau)| w.at(tau) + gr * r1[j] + gs * s1[j])
                    .collect();
                let integral = cumulative_integral(&integrand, dt);
                taus.iter()
                    .enumerate()
                    .map(|(j, _)| (m0 + integral[j] - alpha * r1[j]) / beta)
                    .collect()
            }
        };
        let dist = sup_distance(&r0, &new_r0)
            .max(sup_distance(&s0, &new_s0))
            .max(sup_distance(&r1, &new_r1))
            .max(sup_distance(&s1, &new_s1));
        r0 = new_r0;
        s0 = new_s0;
        r1 = new_r1;
        s1 = new_s1;
        distances.push(dist);
        if dist < PICARD_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(OracleError::PicardDivergence {
            iters: distances.len(),
            last: *distances.last().unwrap_or(&f64::NAN),
        });
    }
    // contraction regime: distances must not grow once the direct parts have
    // settled (the first three iterations fill the traces in)
    for i in 3..distances.len() {
        assert!(
            distances[i] <= distances[i - 1] * (1.0 + 1e-9) + 1e-15,
            "Picard distances stopped contracting: {distances:?}"
        );
    }

    let trace_r0 = CubicSpline::natural(&taus, &r0).expect("trace grid is strictly increasing");
    let trace_s1 = CubicSpline::natural(&taus, &s1).expect("trace grid is strictly increasing");
    Ok(OracleSolution {
        a: prob.a,
        eig,
        forcing_f: prob.forcing_f.clone(),
        forcing_g: prob.forcing_g.clone(),
        p_init: prob.p_init.clone(),
        q_init: prob.q_init.clone(),
        t_max,
        trace_r0,
        trace_s1,
        distances,
        quad_tol,
    })
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Shared transport machinery used both while building traces and when
/// evaluating the converged solution.
struct Helper<'a> {
    a: f64,
    eig: EigenData,
    forcing_f: &'a Field2,
    forcing_g: &'a Field2,
    p_init: &'a Profile,
    q_init: &'a Profile,
    quad_tol: f64,
}

impl Helper<'_> {
    fn r_init(&self, xi: f64) -> f64 {
        -self.eig.lambda_l * self.p_init.value(xi) + self.a * self.q_init.value(xi)
    }

    fn s_init(&self, xi: f64) -> f64 {
        -self.eig.lambda_r * self.p_init.value(xi) + self.a * self.q_init.value(xi)
    }

    fn d_r(&self, x: f64, t: f64) -> f64 {
        -self.eig.lambda_l * self.forcing_f.value(x, t) + self.a * self.forcing_g.value(x, t)
    }

    fn d_l(&self, x: f64, t: f64) -> f64 {
        -self.eig.lambda_r * self.forcing_f.value(x, t) + self.a * self.forcing_g.value(x, t)
    }

    /// Integral of d_r along the right-going characteristic through (x, t),
    /// from time tau back up to t.
    fn quad_r(&self, x: f64, t: f64, tau: f64) -> f64 {
        let lr = self.eig.lambda_r;
        adaptive_simpson(
            &|tp: f64| self.d_r(x + lr * (tp - t), tp),
            tau,
            t,
            self.quad_tol,
        )
    }

    fn quad_l(&self, x: f64, t: f64, tau: f64) -> f64 {
        let ll = self.eig.lambda_l;
        adaptive_simpson(
            &|tp: f64| self.d_l(x + ll * (tp - t), tp),
            tau,
            t,
            self.quad_tol,
        )
    }

    /// r at (x, t) when the backward right-going characteristic lands on the
    /// initial line inside [0, 1].
    fn r_from_initial(&self, x: f64, t: f64) -> f64 {
        let xi = (x - self.eig.lambda_r * t).clamp(0.0, 1.0);
        self.r_init(xi) + self.quad_r(x, t, 0.0)
    }

    fn s_from_initial(&self, x: f64, t: f64) -> f64 {
        let xi = (x - self.eig.lambda_l * t).clamp(0.0, 1.0);
        self.s_init(xi) + self.quad_l(x, t, 0.0)
    }
}

impl OracleSolution {
    pub fn picard_distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Evaluate (P, Q) at a point of [0,1] x [0, t_max].
    pub fn eval(&self, x: f64, t: f64) -> (f64, f64) {
        let helper = Helper {
            a: self.a,
            eig: self.eig,
            forcing_f: &self.forcing_f,
            forcing_g: &self.forcing_g,
            p_init: &self.p_init,
            q_init: &self.q_init,
            quad_tol: self.quad_tol,
        };
        let eig = self.eig;
        let r = {
            let xi = x - eig.lambda_r * t;
            if xi >= -1e-12 {
                helper.r_from_initial(x, t)
            } else {
                let tau = (t - x / eig.lambda_r).clamp(0.0, self.t_max);
                self.trace_r0.value(tau) + helper.quad_r(x, t, tau)
            }
        };
        let s = {
            let xi = x - eig.lambda_l * t;
            if xi <= 1.0 + 1e-12 {
                helper.s_from_initial(x, t)
            } else {
                let tau = (t + (1.0 - x) / eig.lambda_l).clamp(0.0, self.t_max);
                self.trace_s1.value(tau) + helper.quad_l(x, t, tau)
            }
        };
        let p = (r - s) / (2.0 * eig.u);
        let q = (eig.lambda_r * r - eig.lambda_l * s) / (2.0 * eig.u * self.a);
        (p, q)
    }

    /// Residual of the PDE at an interior point, via five-point stencils on
    /// the oracle itself. Useful as an independent self-check.
    pub fn residual(&self, x: f64, t: f64, co: &Coefficients) -> (f64, f64) {
        let hx = 1e-4;
        let ht = 1e-4;
        let d_dx = |f: &dyn Fn(f64, f64) -> f64| {
            (f(x - 2.0 * hx, t) - 8.0 * f(x - hx, t) + 8.0 * f(x + hx, t) - f(x + 2.0 * hx, t))
                / (12.0 * hx)
        };
        let d_dt = |f: &dyn Fn(f64, f64) -> f64| {
            (f(x, t - 2.0 * ht) - 8.0 * f(x, t - ht) + 8.0 * f(x, t + ht) - f(x, t + 2.0 * ht))
                / (12.0 * ht)
        };
        let pf = |xx: f64, tt: f64| self.eval(xx, tt).0;
        let qf = |xx: f64, tt: f64| self.eval(xx, tt).1;
        let p_t = d_dt(&pf);
        let p_x = d_dx(&pf);
        let q_t = d_dt(&qf);
        let q_x = d_dx(&qf);
        let f_val = self.forcing_f.value(x, t);
        let g_val = self.forcing_g.value(x, t);
        (
            p_t + co.a * q_x - f_val,
            q_t + co.b * p_x + 2.0 * co.c * q_x - g_val,
        )
    }
}
