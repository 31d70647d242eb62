//! Message latency models.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Pareto shape range accepted without an explicit override.
pub const PARETO_ALPHA_RANGE: std::ops::RangeInclusive<f64> = 4.0..=8.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LatencyModel {
    /// Uniform on `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
    /// Pareto with scale `x_m` and shape `alpha`.
    Pareto { scale: f64, alpha: f64 },
    /// Constant delay; zero gives lock-step delivery for oracle tests.
    Fixed(f64),
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Uniform { lo: 0.05, hi: 0.15 }
    }
}

impl LatencyModel {
    pub fn pareto(alpha: f64) -> Self {
        LatencyModel::Pareto { scale: 0.05, alpha }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LatencyModel::Uniform { lo, hi } if !(lo >= 0.0 && lo < hi) => Err(Error::config(
                "latency",
                format!("uniform bounds must satisfy 0 <= lo < hi, got [{lo}, {hi})"),
            )),
            LatencyModel::Pareto { scale, alpha } if !(scale > 0.0 && alpha > 0.0) => {
                Err(Error::config(
                    "alpha",
                    format!("pareto needs scale > 0 and alpha > 0, got x_m={scale}, alpha={alpha}"),
                ))
            }
            LatencyModel::Fixed(d) if !(d >= 0.0) => {
                Err(Error::config("latency", "fixed delay must be >= 0"))
            }
            _ => Ok(()),
        }
    }

    /// Short name used in CSV output.
    pub fn name(&self) -> &'static str {
        match self {
            LatencyModel::Uniform { .. } => "uniform",
            LatencyModel::Pareto { .. } => "pareto",
            LatencyModel::Fixed(_) => "fixed",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            LatencyModel::Pareto { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            LatencyModel::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            LatencyModel::Pareto { scale, alpha } => {
                // u in (0, 1]
                let u = 1.0 - rng.random::<f64>();
                scale * u.powf(-1.0 / alpha)
            }
            LatencyModel::Fixed(d) => d,
        }
    }
}

impl fmt::Display for LatencyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatencyModel::Uniform { lo, hi } => write!(f, "uniform[{lo}, {hi})"),
            LatencyModel::Pareto { scale, alpha } => {
                write!(f, "pareto(x_m={scale}, alpha={alpha})")
            }
            LatencyModel::Fixed(d) => write!(f, "fixed({d})"),
        }
    }
}
