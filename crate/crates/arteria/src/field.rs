//! Closed-form scalar fields with exact partial derivatives, and 1D profiles
//! for initial data.
//!
//! Manufactured-solution studies need target fields whose x- and t-partials
//! are available analytically, so the supported catalog is deliberately
//! small: sums of separable terms `coef * X(x) * T(t)` where each factor is a
//! polynomial, sine, or cosine.

use crate::interp::CubicSpline;
use serde::{Deserialize, Serialize};

/// One separable factor of a field term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Factor {
    /// `coeffs[0] + coeffs[1] s + coeffs[2] s^2 + ...`
    Poly { coeffs: Vec<f64> },
    /// `sin(freq * s + phase)`
    Sin {
        freq: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `cos(freq * s + phase)`
    Cos {
        freq: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Factor {
    pub fn one() -> Self {
        Factor::Poly { coeffs: vec![1.0] }
    }

    pub fn value(&self, s: f64) -> f64 {
        match self {
            Factor::Poly { coeffs } => horner(coeffs, s),
            Factor::Sin { freq, phase } => (freq * s + phase).sin(),
            Factor::Cos { freq, phase } => (freq * s + phase).cos(),
        }
    }

    pub fn deriv(&self, s: f64) -> f64 {
        match self {
            Factor::Poly { coeffs } => horner_deriv(coeffs, s),
            Factor::Sin { freq, phase } => freq * (freq * s + phase).cos(),
            Factor::Cos { freq, phase } => -freq * (freq * s + phase).sin(),
        }
    }
}

fn horner(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
}

fn horner_deriv(coeffs: &[f64], s: f64) -> f64 {
    let mut acc = 0.0;
    for (i, &c) in coeffs.iter().enumerate().skip(1).rev() {
        acc = acc * s + c * i as f64;
    }
    acc
}

/// One term `coef * X(x) * T(t)`; omitted factors default to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTerm {
    pub coef: f64,
    #[serde(default = "Factor::one")]
    pub x: Factor,
    #[serde(default = "Factor::one")]
    pub t: Factor,
}

/// A field `F(x,t) = sum of terms`, with exact `dx` and `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Field2 {
    pub terms: Vec<FieldTerm>,
}

impl Field2 {
    pub fn constant(v: f64) -> Self {
        Field2 {
            terms: vec![FieldTerm {
                coef: v,
                x: Factor::one(),
                t: Factor::one(),
            }],
        }
    }

    /// `coef * X(x) * T(t)` single-term field.
    pub fn term(coef: f64, x: Factor, t: Factor) -> Self {
        Field2 {
            terms: vec![FieldTerm { coef, x, t }],
        }
    }

    pub fn plus(mut self, coef: f64, x: Factor, t: Factor) -> Self {
        self.terms.push(FieldTerm { coef, x, t });
        self
    }

    pub fn value(&self, x: f64, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|tm| tm.coef * tm.x.value(x) * tm.t.value(t))
            .sum()
    }

    pub fn dx(&self, x: f64, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|tm| tm.coef * tm.x.deriv(x) * tm.t.value(t))
            .sum()
    }

    pub fn dt(&self, x: f64, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|tm| tm.coef * tm.x.value(x) * tm.t.deriv(t))
            .sum()
    }
}

/// A 1D profile over x in [0,1], used for initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Constant {
        value: f64,
    },
    Poly {
        coeffs: Vec<f64>,
    },
    /// `offset + amplitude * sin(freq * x + phase)`
    Sinusoid {
        offset: f64,
        amplitude: f64,
        freq: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Linear interpolation through (x, value) points, strictly increasing x.
    Table {
        points: Vec<(f64, f64)>,
    },
}

impl Profile {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Poly { coeffs } => horner(coeffs, x),
            Profile::Sinusoid {
                offset,
                amplitude,
                freq,
                phase,
            } => offset + amplitude * (freq * x + phase).sin(),
            Profile::Table { points } => {
                let first = points.first().expect("table profile has no points");
                let last = points.last().unwrap();
                if x <= first.0 {
                    return first.1;
                }
                if x >= last.0 {
                    return last.1;
                }
                let hi = points.partition_point(|&(xx, _)| xx <= x);
                let (x0, v0) = points[hi - 1];
                let (x1, v1) = points[hi];
                v0 + (v1 - v0) * (x - x0) / (x1 - x0)
            }
        }
    }
}

/// Spatial law for the reference cross-sectional area a0(x) of a vessel.
///
/// The scheme needs the x-derivative of the area law, so tables use a cubic
/// spline rather than linear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AreaProfile {
    Constant {
        value: f64,
    },
    /// `base + slope * x`
    Linear {
        base: f64,
        slope: f64,
    },
    Table {
        points: Vec<(f64, f64)>,
    },
}

/// Compiled, evaluatable form of an [`AreaProfile`].
#[derive(Debug, Clone)]
pub enum AreaCurve {
    Constant(f64),
    Linear { base: f64, slope: f64 },
    Spline(CubicSpline),
}

impl AreaProfile {
    pub fn compile(&self) -> Result<AreaCurve, String> {
        match self {
            AreaProfile::Constant { value } => Ok(AreaCurve::Constant(*value)),
            AreaProfile::Linear { base, slope } => Ok(AreaCurve::Linear {
                base: *base,
                slope: *slope,
            }),
            AreaProfile::Table { points } => {
                let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
                Ok(AreaCurve::Spline(CubicSpline::natural(&xs, &ys)?))
            }
        }
    }
}

impl AreaCurve {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            AreaCurve::Constant(v) => *v,
            AreaCurve::Linear { base, slope } => base + slope * x,
            AreaCurve::Spline(s) => s.value(x),
        }
    }

    pub fn slope(&self, x: f64) -> f64 {
        match self {
            AreaCurve::Constant(_) => 0.0,
            AreaCurve::Linear { slope, .. } => *slope,
            AreaCurve::Spline(s) => s.deriv(x),
        }
    }
}
