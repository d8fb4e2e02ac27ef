//! Online update rules. Every step is a pure function from the old state to
//! the new one; callers evaluate the stepsize schedules.

use serde::{Deserialize, Serialize};

/// State shared by the online estimators.
///
/// `iterate` holds `x_k`, `y_k`, `z_k` or `q_k` depending on the estimator;
/// `prev_iterate` is `z_{k-1}` and is only meaningful for the momentum variant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimatorState {
    /// Number of indicators consumed, `k`.
    pub step: u64,
    /// Running count of detected changes, `I_1 + ... + I_k`.
    pub detections: u64,
    pub iterate: f64,
    pub prev_iterate: f64,
}

impl EstimatorState {
    pub fn new(initial: f64) -> Self {
        Self { step: 0, detections: 0, iterate: initial, prev_iterate: initial }
    }

    pub fn with_previous(initial: f64, previous: f64) -> Self {
        Self { step: 0, detections: 0, iterate: initial, prev_iterate: previous }
    }

    fn counted(self, indicator: bool) -> Self {
        Self { step: self.step + 1, detections: self.detections + indicator as u64, ..self }
    }
}

/// `x_k = p I_k / (k + alpha_k - I_k)` with `alpha_k` taken at the new `k`.
pub fn lln_step(state: EstimatorState, indicator: bool, alpha_k: f64, rate_p: f64) -> EstimatorState {
    let next = state.counted(indicator);
    let (k, hits) = (next.step as f64, next.detections as f64);
    let x = rate_p * hits / (k + alpha_k - hits);
    EstimatorState { iterate: x, prev_iterate: state.iterate, ..next }
}

/// `y_{k+1} = y_k + eta_k [I_{k+1} (y_k + p) - y_k]`.
pub fn sa_step(state: EstimatorState, indicator: bool, eta_k: f64, rate_p: f64) -> EstimatorState {
    let y = state.iterate;
    let innovation = if indicator { rate_p } else { -y };
    EstimatorState { iterate: y + eta_k * innovation, prev_iterate: y, ..state.counted(indicator) }
}

/// `z_{k+1} = z_k + eta_k [I_{k+1} (z_k + p) - z_k] + zeta_k (z_k - z_{k-1})`.
pub fn sam_step(state: EstimatorState, indicator: bool, eta_k: f64, zeta_k: f64, rate_p: f64) -> EstimatorState {
    let z = state.iterate;
    let innovation = if indicator { rate_p } else { -z };
    let momentum = zeta_k * (z - state.prev_iterate);
    EstimatorState { iterate: z + eta_k * innovation + momentum, prev_iterate: z, ..state.counted(indicator) }
}

/// `q_k = p I_k / k`.
pub fn naive_step(state: EstimatorState, indicator: bool, rate_p: f64) -> EstimatorState {
    let next = state.counted(indicator);
    let q = rate_p * next.detections as f64 / next.step as f64;
    EstimatorState { iterate: q, prev_iterate: state.iterate, ..next }
}

/// Naive estimate, undefined before the first observation.
pub fn naive_estimate(state: &EstimatorState) -> Option<f64> {
    (state.step > 0).then_some(state.iterate)
}

/// Mean field of the SA update, `h(y) = p (delta - y) / (delta + p)`.
pub fn mean_field_h(y: f64, rate_p: f64, delta: f64) -> f64 {
    rate_p * (delta - y) / (delta + rate_p)
}
