//! Stepsize sequences and their validity conditions.
//!
//! Validation is symbolic: a schedule carries its analytic form and the
//! verdicts are read off the exponents. Numeric partial sums are only used as a
//! cross-check in tests, since limits cannot be decided from finitely many terms.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const EXP_EPS: f64 = 1e-12;

/// Analytic form of a schedule `k -> value`, `k = 0, 1, 2, ...`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleForm {
    /// `coefficient * (k + 1)^(-exponent)`. Negative exponents give growing
    /// sequences such as `alpha_k ~ k^0.75`.
    Polynomial { exponent: f64, coefficient: f64 },
    Constant(f64),
    /// `ln(k + e)`, so that the first term is 1.
    Log,
    /// `sqrt(k + 1)`.
    Sqrt,
    /// Arbitrary evaluator; no symbolic verdicts are available.
    Custom(String),
}

/// A positive deterministic sequence with a declared analytic form.
#[derive(Clone)]
pub struct StepsizeSchedule {
    form: ScheduleForm,
    custom: Option<Arc<dyn Fn(u64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for StepsizeSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("StepsizeSchedule").field(&self.form).finish()
    }
}

impl PartialEq for StepsizeSchedule {
    fn eq(&self, other: &Self) -> bool {
        self.form == other.form && self.custom.is_none() && other.custom.is_none()
    }
}

impl StepsizeSchedule {
    /// `(k + 1)^(-exponent)`.
    pub fn polynomial(exponent: f64) -> Result<Self> {
        if !(exponent.is_finite() && exponent > 0.0) {
            return Err(invalid(format!("polynomial exponent must be positive, got {exponent}")));
        }
        Ok(Self::from_form(ScheduleForm::Polynomial { exponent, coefficient: 1.0 }))
    }

    /// `coefficient * (k + 1)^(-exponent)` for any real exponent.
    pub fn scaled_power(coefficient: f64, exponent: f64) -> Result<Self> {
        if !(coefficient.is_finite() && coefficient > 0.0 && exponent.is_finite()) {
            return Err(invalid("scaled power needs a positive coefficient and a finite exponent"));
        }
        Ok(Self::from_form(ScheduleForm::Polynomial { exponent, coefficient }))
    }

    pub fn constant(value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(invalid(format!("constant stepsize must be positive, got {value}")));
        }
        Ok(Self::from_form(ScheduleForm::Constant(value)))
    }

    pub fn log() -> Self {
        Self::from_form(ScheduleForm::Log)
    }

    pub fn sqrt() -> Self {
        Self::from_form(ScheduleForm::Sqrt)
    }

    /// Wraps an arbitrary evaluator. The caller guarantees positivity.
    pub fn custom(name: impl Into<String>, f: impl Fn(u64) -> f64 + Send + Sync + 'static) -> Self {
        Self { form: ScheduleForm::Custom(name.into()), custom: Some(Arc::new(f)) }
    }

    fn from_form(form: ScheduleForm) -> Self {
        Self { form, custom: None }
    }

    pub fn form(&self) -> &ScheduleForm {
        &self.form
    }

    /// Polynomial exponent, if the schedule is `c (k + 1)^(-e)`.
    pub fn exponent(&self) -> Option<f64> {
        match self.form {
            ScheduleForm::Polynomial { exponent, .. } => Some(exponent),
            _ => None,
        }
    }

    pub fn value(&self, k: u64) -> f64 {
        let x = k as f64;
        match &self.form {
            ScheduleForm::Polynomial { exponent, coefficient } => coefficient * (x + 1.0).powf(-exponent),
            ScheduleForm::Constant(v) => *v,
            ScheduleForm::Log => (x + std::f64::consts::E).ln(),
            ScheduleForm::Sqrt => (x + 1.0).sqrt(),
            ScheduleForm::Custom(_) => (self.custom.as_ref().expect("custom evaluator"))(k),
        }
    }
}

impl fmt::Display for StepsizeSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.form {
            ScheduleForm::Polynomial { exponent, coefficient } if *coefficient == 1.0 => write!(f, "poly:{exponent}"),
            ScheduleForm::Polynomial { exponent, coefficient } => write!(f, "poly:{exponent}:{coefficient}"),
            ScheduleForm::Constant(v) => write!(f, "const:{v}"),
            ScheduleForm::Log => f.write_str("log"),
            ScheduleForm::Sqrt => f.write_str("sqrt"),
            ScheduleForm::Custom(name) => write!(f, "custom:{name}"),
        }
    }
}

/// Parses `poly:E`, `poly:E:C`, `const:V`, `log` and `sqrt`.
impl FromStr for StepsizeSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| invalid(format!("bad number {t:?} in schedule {s:?}")));
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["log"] => Ok(Self::log()),
            ["sqrt"] => Ok(Self::sqrt()),
            ["const", v] => Self::constant(num(v)?),
            ["poly", e] => Self::scaled_power(1.0, num(e)?),
            ["poly", e, c] => Self::scaled_power(num(c)?, num(e)?),
            _ => Err(invalid(format!("unrecognised schedule {s:?}"))),
        }
    }
}

impl Serialize for StepsizeSchedule {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StepsizeSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Three-valued outcome of a symbolic check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Fails,
    Unknown,
}

impl Verdict {
    fn from_bool(b: bool) -> Self {
        if b {
            Verdict::Holds
        } else {
            Verdict::Fails
        }
    }
}

/// Conditions on `alpha_k` for the LLN estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlnVerdict {
    /// `alpha_k / k -> 0`.
    pub convergent: Verdict,
    /// `log(k / alpha_k) / k -> 0`.
    pub rate_guaranteed: Verdict,
    /// `r` in `E|x_k - delta| = O(k^-r)` when both conditions hold.
    pub rate_exponent: Option<f64>,
    pub reasons: Vec<String>,
}

pub fn validate_lln(alpha: &StepsizeSchedule) -> LlnVerdict {
    let (convergent, rate_guaranteed, rate_exponent, reason) = match alpha.form() {
        ScheduleForm::Polynomial { exponent, .. } => {
            // alpha_k / k ~ k^-(1 + e)
            let decay = 1.0 + exponent;
            let ok = decay > EXP_EPS;
            (
                Verdict::from_bool(ok),
                Verdict::from_bool(ok),
                ok.then(|| decay.min(0.5)),
                format!("alpha_k/k ~ k^{:.4}", -decay),
            )
        }
        ScheduleForm::Constant(_) | ScheduleForm::Log => {
            (Verdict::Holds, Verdict::Holds, Some(0.5), "alpha_k grows slower than any power".into())
        }
        ScheduleForm::Sqrt => (Verdict::Holds, Verdict::Holds, Some(0.5), "alpha_k/k ~ k^-0.5".into()),
        ScheduleForm::Custom(name) => (
            Verdict::Unknown,
            Verdict::Unknown,
            None,
            format!("custom schedule {name:?} has no analytic form"),
        ),
    };
    LlnVerdict { convergent, rate_guaranteed, rate_exponent, reasons: vec![reason] }
}

/// Conditions on `eta_k` for the SA estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaVerdict {
    /// Both `sum eta_k = inf` and `sum eta_k^2 < inf`.
    pub valid: Verdict,
    pub sum_diverges: Verdict,
    pub square_summable: Verdict,
    /// `eta / 2` for `eta_k = (k + 1)^-eta` with `eta` in (0, 1).
    pub rate_exponent: Option<f64>,
    pub reasons: Vec<String>,
}

pub fn validate_sa(eta: &StepsizeSchedule) -> SaVerdict {
    let (diverges, square, rate, reason) = match eta.form() {
        ScheduleForm::Polynomial { exponent: e, .. } => {
            let e = *e;
            (
                Verdict::from_bool(e <= 1.0 + EXP_EPS),
                Verdict::from_bool(e > 0.5 + EXP_EPS),
                (e > 0.0 && e < 1.0).then_some(e / 2.0),
                format!("p-series with exponent {e}"),
            )
        }
        ScheduleForm::Constant(_) | ScheduleForm::Log | ScheduleForm::Sqrt => {
            (Verdict::Holds, Verdict::Fails, None, "stepsizes do not decay".into())
        }
        ScheduleForm::Custom(name) => {
            (Verdict::Unknown, Verdict::Unknown, None, format!("custom schedule {name:?} has no analytic form"))
        }
    };
    let valid = match (diverges, square) {
        (Verdict::Holds, Verdict::Holds) => Verdict::Holds,
        (Verdict::Unknown, _) | (_, Verdict::Unknown) => Verdict::Unknown,
        _ => Verdict::Fails,
    };
    SaVerdict { valid, sum_diverges: diverges, square_summable: square, rate_exponent: rate, reasons: vec![reason] }
}

/// Stepsize regime of a SAM configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SamRegime {
    /// `beta` in (1/2, 1], `eta = 2 beta`: `gamma_k = beta_k`.
    OneTimescale,
    /// `beta` in (1/2, 1], `beta + 1/2 < eta < 2 beta`.
    TwoTimescale,
    /// `beta` in (0, 1/2], `beta < eta <= 2 beta`: convergence conjectured, not proven.
    Conjecture,
    /// `eta = beta` with `omega` in (0, 1), so `zeta_k -> 1 - omega`; open, never valid.
    Experimental,
    Invalid,
    /// Non-polynomial forms.
    Unknown,
}

impl SamRegime {
    /// Regimes covered by a convergence theorem.
    pub fn is_proven(self) -> bool {
        matches!(self, SamRegime::OneTimescale | SamRegime::TwoTimescale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamVerdict {
    pub regime: SamRegime,
    /// Analytic limit of `zeta_k`, when it exists.
    pub zeta_limit: Option<f64>,
    /// Conjectured decay exponent `beta / 2` of the expected error. Logged, never asserted.
    pub conjectured_rate_exponent: Option<f64>,
    pub reasons: Vec<String>,
}

fn approx(a: f64, b: f64) -> bool {
    (a - b).abs() <= EXP_EPS
}

/// Classifies `beta_k = cb (k+1)^-b`, `eta_k = ce (k+1)^-e` and `omega`.
pub fn classify_sam(beta: &StepsizeSchedule, eta: &StepsizeSchedule, omega: f64) -> SamVerdict {
    let (
        ScheduleForm::Polynomial { exponent: b, coefficient: cb },
        ScheduleForm::Polynomial { exponent: e, coefficient: ce },
    ) = (beta.form(), eta.form())
    else {
        return SamVerdict {
            regime: SamRegime::Unknown,
            zeta_limit: None,
            conjectured_rate_exponent: None,
            reasons: vec!["regimes are defined for polynomial beta and eta only".into()],
        };
    };
    let (b, e, cb, ce) = (*b, *e, *cb, *ce);
    let mut reasons = Vec::new();
    let beta_upper = b > 0.5 + EXP_EPS && b <= 1.0 + EXP_EPS;
    let beta_lower = b > 0.0 && b <= 0.5 + EXP_EPS;

    let regime = if beta_upper && approx(e, 2.0 * b) {
        if approx(ce, cb * cb) {
            reasons.push(format!("eta = 2 beta = {e}: gamma_k = beta_k"));
            SamRegime::OneTimescale
        } else {
            reasons.push("eta = 2 beta but coefficients break gamma_k = beta_k".into());
            SamRegime::Invalid
        }
    } else if beta_upper && e > b + 0.5 + EXP_EPS && e < 2.0 * b - EXP_EPS {
        reasons.push(format!("{} < eta = {e} < {}", b + 0.5, 2.0 * b));
        SamRegime::TwoTimescale
    } else if beta_lower && e > b + EXP_EPS && e <= 2.0 * b + EXP_EPS {
        reasons.push(format!("beta = {b} <= 1/2 and beta < eta <= 2 beta"));
        SamRegime::Conjecture
    } else if approx(e, b) && omega > 0.0 && omega < 1.0 {
        reasons.push(format!("eta = beta: zeta_k -> {} in (0, 1), convergence open", 1.0 - omega));
        SamRegime::Experimental
    } else {
        if beta_upper && e <= b + 0.5 + EXP_EPS {
            reasons.push(format!("eta = {e} <= beta + 1/2 = {}", b + 0.5));
        } else if e > 2.0 * b + EXP_EPS {
            reasons.push(format!("eta = {e} > 2 beta: gamma_k / beta_k -> 0"));
        } else if approx(e, b) && approx(omega, 1.0) {
            reasons.push("eta = beta and omega = 1: zeta_k = 0, the update is plain SA".into());
        } else {
            reasons.push(format!("beta = {b}, eta = {e} outside every known regime"));
        }
        SamRegime::Invalid
    };

    // zeta_k = beta_k / beta_{k-1} - omega eta_k / beta_{k-1}; the ratio
    // eta_k / beta_{k-1} behaves like (ce / cb) k^-(e - b).
    let zeta_limit = if e > b + EXP_EPS {
        Some(1.0)
    } else if approx(e, b) {
        Some(1.0 - omega * ce / cb)
    } else {
        None
    };
    if regime.is_proven() {
        debug_assert_eq!(zeta_limit, Some(1.0));
        reasons.push("zeta_k -> 1".into());
    }
    let conjectured_rate_exponent = matches!(
        regime,
        SamRegime::OneTimescale | SamRegime::TwoTimescale | SamRegime::Conjecture
    )
    .then_some(b / 2.0);
    SamVerdict { regime, zeta_limit, conjectured_rate_exponent, reasons }
}

/// Stepsizes of the momentum estimator: `eta_k` on the innovation and
/// `zeta_k = (beta_k - omega eta_k) / beta_{k-1}` on the momentum term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamSchedule {
    pub beta: StepsizeSchedule,
    pub eta: StepsizeSchedule,
    pub omega: f64,
}

impl SamSchedule {
    pub fn new(beta: StepsizeSchedule, eta: StepsizeSchedule, omega: f64) -> Result<Self> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(invalid(format!("omega must be positive, got {omega}")));
        }
        Ok(Self { beta, eta, omega })
    }

    /// `(k+1)^-beta` and `(k+1)^-eta`.
    pub fn polynomial(beta: f64, eta: f64, omega: f64) -> Result<Self> {
        Self::new(StepsizeSchedule::polynomial(beta)?, StepsizeSchedule::polynomial(eta)?, omega)
    }

    pub fn regime(&self) -> SamRegime {
        classify_sam(&self.beta, &self.eta, self.omega).regime
    }

    pub fn eta(&self, k: u64) -> f64 {
        self.eta.value(k)
    }

    /// Momentum coefficient. `beta_{-1}` is taken as infinite, so `zeta_0 = 0`.
    pub fn zeta(&self, k: u64) -> f64 {
        if k == 0 {
            return 0.0;
        }
        (self.beta.value(k) - self.omega * self.eta.value(k)) / self.beta.value(k - 1)
    }

    /// `gamma_k = eta_k / beta_k`.
    pub fn gamma(&self, k: u64) -> f64 {
        self.eta.value(k) / self.beta.value(k)
    }

    pub fn verdict(&self) -> SamVerdict {
        classify_sam(&self.beta, &self.eta, self.omega)
    }
}

/// Validates a SAM schedule; same as [`classify_sam`] on its parts.
pub fn validate_sam(sched: &SamSchedule) -> SamVerdict {
    sched.verdict()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(e: f64) -> StepsizeSchedule {
        StepsizeSchedule::polynomial(e).unwrap()
    }

    #[test]
    fn polynomial_values() {
        assert_eq!(poly(0.75).value(0), 1.0);
        assert_eq!(poly(1.0).value(3), 0.25);
        assert!(StepsizeSchedule::polynomial(0.0).is_err());
        assert!(StepsizeSchedule::polynomial(-1.0).is_err());
    }

    #[test]
    fn other_forms_are_positive() {
        for s in [StepsizeSchedule::log(), StepsizeSchedule::sqrt(), StepsizeSchedule::constant(1.0).unwrap()] {
            assert!((0..1000).all(|k| s.value(k) > 0.0), "{s}");
        }
        assert!((StepsizeSchedule::log().value(0) - 1.0).abs() < 1e-15);
        assert!(StepsizeSchedule::constant(0.0).is_err());
    }

    #[test]
    fn parses_and_prints_spec_strings() {
        for s in ["poly:0.75", "poly:-0.75", "poly:-1:2", "const:1", "log", "sqrt"] {
            let sched: StepsizeSchedule = s.parse().unwrap();
            assert_eq!(sched.to_string(), s);
        }
        assert!("poly".parse::<StepsizeSchedule>().is_err());
        assert!("poly:x".parse::<StepsizeSchedule>().is_err());
        assert!("const:-1".parse::<StepsizeSchedule>().is_err());
        assert!("cubic".parse::<StepsizeSchedule>().is_err());
    }

    #[test]
    fn lln_verdicts() {
        let one = validate_lln(&StepsizeSchedule::constant(1.0).unwrap());
        assert_eq!((one.convergent, one.rate_guaranteed), (Verdict::Holds, Verdict::Holds));
        assert_eq!(one.rate_exponent, Some(0.5));

        let k075: StepsizeSchedule = "poly:-0.75".parse().unwrap();
        let v = validate_lln(&k075);
        assert_eq!(v.convergent, Verdict::Holds);
        assert!((v.rate_exponent.unwrap() - 0.25).abs() < 1e-12);

        let linear: StepsizeSchedule = "poly:-1:2".parse().unwrap();
        assert_eq!(validate_lln(&linear).convergent, Verdict::Fails);

        let custom = StepsizeSchedule::custom("weird", |k| 1.0 + k as f64);
        assert_eq!(validate_lln(&custom).convergent, Verdict::Unknown);
    }

    #[test]
    fn sa_verdicts() {
        let v = validate_sa(&poly(0.75));
        assert_eq!(v.valid, Verdict::Holds);
        assert_eq!(v.rate_exponent, Some(0.375));
        let v = validate_sa(&poly(0.4));
        assert_eq!(v.valid, Verdict::Fails);
        assert_eq!(v.square_summable, Verdict::Fails);
        let v = validate_sa(&poly(1.0));
        assert_eq!(v.valid, Verdict::Holds);
        assert_eq!(v.rate_exponent, None);
        assert_eq!(validate_sa(&poly(1.2)).sum_diverges, Verdict::Fails);
        assert_eq!(validate_sa(&StepsizeSchedule::custom("c", |_| 0.1)).valid, Verdict::Unknown);
        assert_eq!(validate_sa(&StepsizeSchedule::constant(0.1).unwrap()).valid, Verdict::Fails);
    }

    #[test]
    fn sam_regimes() {
        let r = |b: f64, e: f64, w: f64| classify_sam(&poly(b), &poly(e), w).regime;
        assert_eq!(r(0.6, 1.2, 1.0), SamRegime::OneTimescale);
        assert_eq!(r(0.75, 1.3, 1.0), SamRegime::TwoTimescale);
        assert_eq!(r(0.5, 0.8, 1.0), SamRegime::Conjecture);
        assert_eq!(r(0.4, 0.8, 1.0), SamRegime::Conjecture);
        assert_eq!(r(0.75, 1.0, 1.0), SamRegime::Invalid);
        assert_eq!(r(0.75, 1.25, 1.0), SamRegime::Invalid);
        assert_eq!(r(0.75, 0.75, 1.0), SamRegime::Invalid);
        assert_eq!(r(0.75, 0.75, 0.5), SamRegime::Experimental);
        assert_eq!(r(0.5, 1.2, 1.0), SamRegime::Invalid);
        let v = classify_sam(&StepsizeSchedule::log(), &poly(1.0), 1.0);
        assert_eq!(v.regime, SamRegime::Unknown);
    }

    #[test]
    fn one_timescale_needs_matching_coefficients() {
        let beta = StepsizeSchedule::scaled_power(0.5, 0.6).unwrap();
        let eta = StepsizeSchedule::scaled_power(0.25, 1.2).unwrap();
        assert_eq!(classify_sam(&beta, &eta, 1.0).regime, SamRegime::OneTimescale);
        let eta = StepsizeSchedule::scaled_power(0.5, 1.2).unwrap();
        assert_eq!(classify_sam(&beta, &eta, 1.0).regime, SamRegime::Invalid);
    }

    #[test]
    fn zeta_matches_definition() {
        let s = SamSchedule::polynomial(0.75, 1.3, 1.0).unwrap();
        assert_eq!(s.zeta(0), 0.0);
        for k in [1u64, 2, 10, 1000] {
            let expect = ((k + 1) as f64).powf(-0.75) - ((k + 1) as f64).powf(-1.3);
            let expect = expect / (k as f64).powf(-0.75);
            assert!((s.zeta(k) - expect).abs() < 1e-15);
        }
        let degenerate = SamSchedule::polynomial(0.75, 0.75, 1.0).unwrap();
        assert!((1..500).all(|k| degenerate.zeta(k) == 0.0));
    }

    #[test]
    fn zeta_can_be_negative_early() {
        let s = SamSchedule::new(poly(0.6), poly(1.2), 3.0).unwrap();
        assert!(s.zeta(1) < 0.0);
    }

    #[test]
    fn sam_schedule_round_trips_through_json() {
        let s = SamSchedule::polynomial(0.6, 1.2, 1.0).unwrap();
        let back: SamSchedule = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back.beta, s.beta);
        assert_eq!(back.regime(), SamRegime::OneTimescale);
    }
}
