//! Change-rate estimators over an indicator stream.
//!
//! The online estimators (LLN, SA, SAM and the biased Naive baseline) use only
//! the indicators and the known access rate; the gaps `tau_j` are ignored. The
//! offline MLE and MM estimators use the gaps and must be re-solved from
//! scratch as data arrives.

mod offline;
mod online;

pub use offline::{mle_residual, mle_solve, mm_residual, mm_solve, ClampRange, SolveReport, SolveStatus};
pub use online::{lln_step, mean_field_h, naive_estimate, naive_step, sa_step, sam_step, EstimatorState};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, invalid, Result};
use crate::point_process::Observation;
use crate::schedules::{SamSchedule, StepsizeSchedule};

fn default_alpha() -> StepsizeSchedule {
    StepsizeSchedule::constant(1.0).expect("positive")
}

fn default_sa_eta() -> StepsizeSchedule {
    StepsizeSchedule::polynomial(0.75).expect("positive")
}

fn default_sam_beta() -> StepsizeSchedule {
    StepsizeSchedule::polynomial(0.75).expect("positive")
}

fn default_sam_eta() -> StepsizeSchedule {
    StepsizeSchedule::polynomial(1.3).expect("positive")
}

fn one() -> f64 {
    1.0
}

fn default_tol() -> f64 {
    1e-10
}

fn default_resolve_every() -> usize {
    50
}

/// Estimator variant and its parameters. Serialised with a `kind` tag, e.g.
/// `{"kind": "sa", "eta": "poly:0.75"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EstimatorSpec {
    Lln {
        #[serde(default = "default_alpha")]
        alpha: StepsizeSchedule,
    },
    Sa {
        #[serde(default = "default_sa_eta")]
        eta: StepsizeSchedule,
        #[serde(default)]
        initial: f64,
    },
    Sam {
        #[serde(default = "default_sam_beta")]
        beta: StepsizeSchedule,
        #[serde(default = "default_sam_eta")]
        eta: StepsizeSchedule,
        #[serde(default = "one")]
        omega: f64,
        #[serde(default)]
        initial: f64,
        /// `z_{-1}`; defaults to `initial` (no initial momentum).
        #[serde(default)]
        initial_prev: Option<f64>,
    },
    Naive,
    Mle {
        /// Absolute clamp range; defaults to `[1e-6, 1e6] * rate_p`.
        #[serde(default)]
        clamp: Option<ClampRange>,
        #[serde(default = "default_tol")]
        tol: f64,
        /// Re-solve after every this many observations (and after the first).
        #[serde(default = "default_resolve_every")]
        resolve_every: usize,
    },
    Mm {
        #[serde(default)]
        clamp: Option<ClampRange>,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_resolve_every")]
        resolve_every: usize,
    },
    /// Reports the true change rate; only meaningful inside simulations.
    Oracle,
}

impl EstimatorSpec {
    pub fn lln() -> Self {
        EstimatorSpec::Lln { alpha: default_alpha() }
    }

    pub fn sa(eta: StepsizeSchedule) -> Self {
        EstimatorSpec::Sa { eta, initial: 0.0 }
    }

    pub fn sam(schedule: SamSchedule) -> Self {
        EstimatorSpec::Sam { beta: schedule.beta, eta: schedule.eta, omega: schedule.omega, initial: 0.0, initial_prev: None }
    }

    pub fn mle(resolve_every: usize) -> Self {
        EstimatorSpec::Mle { clamp: None, tol: default_tol(), resolve_every }
    }

    pub fn mm(resolve_every: usize) -> Self {
        EstimatorSpec::Mm { clamp: None, tol: default_tol(), resolve_every }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            EstimatorSpec::Lln { .. } => "lln",
            EstimatorSpec::Sa { .. } => "sa",
            EstimatorSpec::Sam { .. } => "sam",
            EstimatorSpec::Naive => "naive",
            EstimatorSpec::Mle { .. } => "mle",
            EstimatorSpec::Mm { .. } => "mm",
            EstimatorSpec::Oracle => "oracle",
        }
    }

    /// True for estimators that need the full history on every refresh.
    pub fn is_offline(&self) -> bool {
        matches!(self, EstimatorSpec::Mle { .. } | EstimatorSpec::Mm { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EstimatorSpec::Sam { omega, .. } => ensure_positive("omega", *omega),
            EstimatorSpec::Mle { tol, resolve_every, .. } | EstimatorSpec::Mm { tol, resolve_every, .. } => {
                ensure_positive("tol", *tol)?;
                if *resolve_every == 0 {
                    return Err(invalid("resolve_every must be at least 1"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// An estimator spec with an optional display name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub spec: EstimatorSpec,
}

impl EstimatorConfig {
    pub fn new(spec: EstimatorSpec) -> Self {
        Self { name: None, spec }
    }

    pub fn named(name: impl Into<String>, spec: EstimatorSpec) -> Self {
        Self { name: Some(name.into()), spec }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.spec.kind_name().to_string())
    }
}

#[derive(Debug, Clone)]
enum Engine {
    Lln(StepsizeSchedule),
    Sa(StepsizeSchedule),
    Sam(SamSchedule),
    Naive,
    Offline {
        mle: bool,
        clamp: Option<ClampRange>,
        tol: f64,
        resolve_every: usize,
        history: Vec<Observation>,
        last: Option<SolveReport>,
    },
    Oracle(f64),
}

/// Stateful driver around the update rules. Online variants keep only their
/// [`EstimatorState`]; offline variants keep the full history.
#[derive(Debug, Clone)]
pub struct Estimator {
    engine: Engine,
    rate_p: f64,
    state: EstimatorState,
}

impl Estimator {
    /// Builds an estimator for pages crawled at `rate_p`. `Oracle` specs are
    /// rejected here; use [`Estimator::with_truth`].
    pub fn new(spec: &EstimatorSpec, rate_p: f64) -> Result<Self> {
        Self::build(spec, rate_p, None)
    }

    /// Like [`Estimator::new`], but `Oracle` reports `true_delta`.
    pub fn with_truth(spec: &EstimatorSpec, rate_p: f64, true_delta: f64) -> Result<Self> {
        Self::build(spec, rate_p, Some(true_delta))
    }

    fn build(spec: &EstimatorSpec, rate_p: f64, truth: Option<f64>) -> Result<Self> {
        ensure_positive("access rate", rate_p)?;
        spec.validate()?;
        let mut state = EstimatorState::default();
        let engine = match spec {
            EstimatorSpec::Lln { alpha } => Engine::Lln(alpha.clone()),
            EstimatorSpec::Sa { eta, initial } => {
                state = EstimatorState::new(*initial);
                Engine::Sa(eta.clone())
            }
            EstimatorSpec::Sam { beta, eta, omega, initial, initial_prev } => {
                state = EstimatorState::with_previous(*initial, initial_prev.unwrap_or(*initial));
                Engine::Sam(SamSchedule::new(beta.clone(), eta.clone(), *omega)?)
            }
            EstimatorSpec::Naive => Engine::Naive,
            EstimatorSpec::Mle { clamp, tol, resolve_every } | EstimatorSpec::Mm { clamp, tol, resolve_every } => {
                Engine::Offline {
                    mle: matches!(spec, EstimatorSpec::Mle { .. }),
                    clamp: *clamp,
                    tol: *tol,
                    resolve_every: *resolve_every,
                    history: Vec::new(),
                    last: None,
                }
            }
            EstimatorSpec::Oracle => {
                let delta = truth.ok_or_else(|| invalid("the oracle estimator needs the true change rate"))?;
                ensure_positive("true change rate", delta)?;
                Engine::Oracle(delta)
            }
        };
        Ok(Self { engine, rate_p, state })
    }

    pub fn rate_p(&self) -> f64 {
        self.rate_p
    }

    /// Changes the access rate used by subsequent updates.
    pub fn set_rate_p(&mut self, rate_p: f64) -> Result<()> {
        ensure_positive("access rate", rate_p)?;
        self.rate_p = rate_p;
        Ok(())
    }

    pub fn state(&self) -> &EstimatorState {
        &self.state
    }

    pub fn steps(&self) -> u64 {
        self.state.step
    }

    pub fn observe(&mut self, obs: Observation) {
        let k = self.state.step;
        let p = self.rate_p;
        let i = obs.changed;
        match &mut self.engine {
            Engine::Lln(alpha) => self.state = lln_step(self.state, i, alpha.value(k + 1), p),
            Engine::Sa(eta) => self.state = sa_step(self.state, i, eta.value(k), p),
            Engine::Sam(s) => self.state = sam_step(self.state, i, s.eta(k), s.zeta(k), p),
            Engine::Naive => self.state = naive_step(self.state, i, p),
            Engine::Oracle(_) => {
                self.state.step += 1;
                self.state.detections += i as u64;
            }
            Engine::Offline { history, resolve_every, .. } => {
                history.push(obs);
                self.state.step += 1;
                self.state.detections += i as u64;
                let k = self.state.step as usize;
                if k == 1 || k % *resolve_every == 0 {
                    self.refresh();
                }
            }
        }
    }

    /// Re-solves an offline estimator on the full history; no-op otherwise.
    pub fn refresh(&mut self) -> Option<SolveReport> {
        let p = self.rate_p;
        let Engine::Offline { mle, clamp, tol, history, last, .. } = &mut self.engine else {
            return None;
        };
        if history.is_empty() {
            return None;
        }
        let range = clamp.unwrap_or_else(|| ClampRange::relative_to(p));
        let report = if *mle { mle_solve(&history[..], range, *tol) } else { mm_solve(&history[..], range, *tol) }
            .expect("non-empty history and validated tolerance");
        self.state.iterate = report.estimate;
        *last = Some(report);
        Some(report)
    }

    /// Latest solver report of an offline estimator.
    pub fn last_report(&self) -> Option<SolveReport> {
        match &self.engine {
            Engine::Offline { last, .. } => *last,
            _ => None,
        }
    }

    /// Current estimate; `None` before the estimate is defined (LLN, Naive and
    /// the offline solvers need at least one observation).
    pub fn estimate(&self) -> Option<f64> {
        match &self.engine {
            Engine::Lln(_) | Engine::Naive => naive_estimate(&self.state),
            Engine::Sa(_) | Engine::Sam(_) => Some(self.state.iterate),
            Engine::Offline { last, .. } => last.map(|r| r.estimate),
            Engine::Oracle(d) => Some(*d),
        }
    }
}
