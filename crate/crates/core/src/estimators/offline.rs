//! Offline maximum-likelihood and moment-matching estimators.
//!
//! Both solve a scalar equation in the change rate whose residual is strictly
//! decreasing on `(0, inf)` once the stream holds at least one detection and
//! one miss. The root is bracketed by the clamp range and found by bisection
//! on a log scale. Degenerate streams have no finite positive root and are
//! reported with a clamped status.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::point_process::Observation;

const MAX_ITERATIONS: usize = 400;

/// Admissible estimates `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampRange {
    pub min: f64,
    pub max: f64,
}

impl ClampRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && 0.0 < min && min < max) {
            return Err(invalid(format!("clamp range needs 0 < min < max, got [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    /// `[1e-6, 1e6] * rate_p`.
    pub fn relative_to(rate_p: f64) -> Self {
        Self { min: 1e-6 * rate_p, max: 1e6 * rate_p }
    }

    pub fn clamp(&self, value: f64) -> f64 {
        if value.is_nan() {
            self.min
        } else {
            value.clamp(self.min, self.max)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolveStatus {
    Converged,
    /// The root is at or beyond the upper clamp (every access saw a change).
    ClampedHigh,
    /// No positive root inside the clamp range (no change was ever seen).
    NoSolutionClampedLow,
}

/// Result of an offline solve. Unless `status` is `Converged`, `estimate` is
/// one of the clamp bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub estimate: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Residual of the defining equation divided by the number of observations.
    pub residual: f64,
}

/// `tau / (exp(delta tau) - 1)` without cancellation near zero.
pub(crate) fn tau_over_expm1(delta: f64, tau: f64) -> f64 {
    let x = delta * tau;
    if x < 1e-8 {
        (1.0 - 0.5 * x) / delta
    } else {
        tau / x.exp_m1()
    }
}

/// Per-observation residual of the likelihood equation
/// `sum I_j tau_j / (e^(delta tau_j) - 1) - sum (1 - I_j) tau_j`.
pub fn mle_residual(obs: &[Observation], delta: f64) -> f64 {
    let sum: f64 = obs
        .iter()
        .map(|o| if o.changed { tau_over_expm1(delta, o.tau) } else { -o.tau })
        .sum();
    sum / obs.len() as f64
}

/// Per-observation residual of the moment equation
/// `sum e^(-delta tau_j) - sum (1 - I_j)`.
pub fn mm_residual(obs: &[Observation], delta: f64) -> f64 {
    let sum: f64 = obs
        .iter()
        .map(|o| (-delta * o.tau).exp() - if o.changed { 0.0 } else { 1.0 })
        .sum();
    sum / obs.len() as f64
}

fn check_inputs(obs: &[Observation], tol: f64) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::InsufficientData("offline solvers need at least one observation".into()));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Bisection on a log scale for a decreasing `f` with `f(lo) > 0 > f(hi)`.
fn bisect_decreasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, usize, f64) {
    let mut mid = (lo * hi).sqrt();
    let mut value = f(mid);
    for it in 1..=MAX_ITERATIONS {
        if value.abs() < tol || hi / lo - 1.0 <= 4.0 * f64::EPSILON {
            return (mid, it, value);
        }
        if value > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = (lo * hi).sqrt();
        value = f(mid);
    }
    (mid, MAX_ITERATIONS, value)
}

fn solve(
    obs: &[Observation],
    clamp: ClampRange,
    tol: f64,
    residual: impl Fn(f64) -> f64,
) -> SolveReport {
    let detections = obs.iter().filter(|o| o.changed).count();
    let low = |iterations| SolveReport {
        estimate: clamp.min,
        status: SolveStatus::NoSolutionClampedLow,
        iterations,
        residual: residual(clamp.min),
    };
    let high = |iterations| SolveReport {
        estimate: clamp.max,
        status: SolveStatus::ClampedHigh,
        iterations,
        residual: residual(clamp.max),
    };
    if detections == 0 {
        return low(0);
    }
    if detections == obs.len() {
        return high(0);
    }
    let (at_min, at_max) = (residual(clamp.min), residual(clamp.max));
    if at_min < 0.0 {
        return low(0);
    }
    if at_max > 0.0 {
        return high(0);
    }
    let (estimate, iterations, res) = bisect_decreasing(&residual, clamp.min, clamp.max, tol);
    SolveReport { estimate, status: SolveStatus::Converged, iterations, residual: res }
}

/// Maximum-likelihood change rate from indicators and access gaps.
pub fn mle_solve(obs: impl AsRef<[Observation]>, clamp: ClampRange, tol: f64) -> Result<SolveReport> {
    let obs = obs.as_ref();
    check_inputs(obs, tol)?;
    Ok(solve(obs, clamp, tol, |d| mle_residual(obs, d)))
}

/// Moment-matching change rate: the expected number of misses equals the
/// observed one.
pub fn mm_solve(obs: impl AsRef<[Observation]>, clamp: ClampRange, tol: f64) -> Result<SolveReport> {
    let obs = obs.as_ref();
    check_inputs(obs, tol)?;
    Ok(solve(obs, clamp, tol, |d| mm_residual(obs, d)))
}
