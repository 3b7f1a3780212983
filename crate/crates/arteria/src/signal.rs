//! Time signals driving source, terminal, and windkessel boundaries.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// A total function of time, defined for all t >= 0.
///
/// Boundary closures consume this trait so that studies can inject traces of
/// closed-form fields where configurations would supply a [`Signal`].
pub trait TimeSignal: Send + Sync {
    fn at(&self, t: f64) -> f64;
}

/// Wraps a plain closure as a [`TimeSignal`].
pub struct FnSignal<F>(pub F);

impl<F: Fn(f64) -> f64 + Send + Sync> TimeSignal for FnSignal<F> {
    fn at(&self, t: f64) -> f64 {
        (self.0)(t)
    }
}

/// Closed-form or tabulated boundary signal.
///
/// Tables interpolate linearly between points and hold the nearest endpoint
/// value outside the tabulated range, so every signal is total in t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    Constant {
        value: f64,
    },
    Sinusoid {
        mean: f64,
        amplitude: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
    },
    Table {
        points: Vec<(f64, f64)>,
    },
}

impl Signal {
    pub fn constant(value: f64) -> Self {
        Signal::Constant { value }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Signal::Constant { value } => *value,
            Signal::Sinusoid {
                mean,
                amplitude,
                period,
                phase,
            } => mean + amplitude * (TAU * t / period + phase).sin(),
            Signal::Table { points } => table_value(points, t),
        }
    }

    /// Analytic time derivative; `None` for tables (piecewise linear only).
    pub fn derivative(&self, t: f64) -> Option<f64> {
        match self {
            Signal::Constant { .. } => Some(0.0),
            Signal::Sinusoid {
                amplitude,
                period,
                phase,
                ..
            } => {
                let omega = TAU / period;
                Some(amplitude * omega * (omega * t + phase).cos())
            }
            Signal::Table { .. } => None,
        }
    }

    /// Whether the signal has a continuous derivative everywhere.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, Signal::Table { .. })
    }

    /// Structural invariants: table abscissae strictly increasing and
    /// nonempty, sinusoid period positive. Returns a human-readable
    /// description of the first problem found.
    pub fn well_formed(&self) -> Result<(), String> {
        match self {
            Signal::Constant { .. } => Ok(()),
            Signal::Sinusoid { period, .. } => {
                if *period > 0.0 {
                    Ok(())
                } else {
                    Err(format!("sinusoid period must be positive, got {period}"))
                }
            }
            Signal::Table { points } => {
                if points.is_empty() {
                    return Err("table signal has no points".into());
                }
                for w in points.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        return Err(format!(
                            "table times must be strictly increasing ({} then {})",
                            w[0].0, w[1].0
                        ));
                    }
                }
                Ok(())
            }
        }
    }
}

impl TimeSignal for Signal {
    fn at(&self, t: f64) -> f64 {
        self.value(t)
    }
}

fn table_value(points: &[(f64, f64)], t: f64) -> f64 {
    let first = points.first().expect("table signal has no points");
    let last = points.last().unwrap();
    if t <= first.0 {
        return first.1;
    }
    if t >= last.0 {
        return last.1;
    }
    let hi = points.partition_point(|&(tt, _)| tt <= t);
    let (t0, v0) = points[hi - 1];
    let (t1, v1) = points[hi];
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}
