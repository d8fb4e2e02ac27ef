//! C ABI for the crawlrate library.
//!
//! Every fallible function returns a [`CrStatus`]; on failure a description is
//! available from [`cr_last_error_message`] on the same thread. Estimators and
//! traces are opaque handles that must be released with their `_free`
//! function. Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use crawlrate::allocator::{freshness_objective, optimize_rates, PageModel};
use crawlrate::estimators::{mle_solve, mm_solve, ClampRange, Estimator, EstimatorSpec, SolveReport, SolveStatus};
use crawlrate::point_process::{empirical_change_rate, parse_timestamps, simulate_indicators, ChangeTrace, Observation};
use crawlrate::schedules::{classify_sam, SamRegime, StepsizeSchedule};
use crawlrate::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrStatus {
    Ok = 0,
    InvalidArgument = 1,
    InsufficientData = 2,
    Parse = 3,
    Config = 4,
    Io = 5,
    NullPointer = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrSolveStatus {
    Converged = 0,
    ClampedHigh = 1,
    NoSolutionClampedLow = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrSamRegime {
    OneTimescale = 0,
    TwoTimescale = 1,
    Conjecture = 2,
    Experimental = 3,
    Invalid = 4,
    Unknown = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrSolveReport {
    pub estimate: f64,
    pub status: CrSolveStatus,
    pub iterations: u64,
    pub residual: f64,
}

/// Opaque online or offline estimator.
pub struct CrEstimator {
    inner: Estimator,
}

/// Opaque change trace.
pub struct CrTrace {
    inner: ChangeTrace,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: CrStatus, msg: &str) -> CrStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> CrStatus {
    let status = match &e {
        Error::InvalidArgument(_) => CrStatus::InvalidArgument,
        Error::InsufficientData(_) => CrStatus::InsufficientData,
        Error::Parse { .. } => CrStatus::Parse,
        Error::Config(_) => CrStatus::Config,
        Error::Io(_) => CrStatus::Io,
    };
    fail(status, &e.to_string())
}

/// Runs `f`, turning errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), CrStatus>>(f: F) -> CrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CrStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(CrStatus::Panic, "internal panic"),
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), CrStatus> {
    if p.is_null() {
        Err(fail(CrStatus::NullPointer, &format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null only when `n == 0`, otherwise point to `n` readable values.
unsafe fn slice<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], CrStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, n))
}

fn solve_report(r: SolveReport) -> CrSolveReport {
    CrSolveReport {
        estimate: r.estimate,
        status: match r.status {
            SolveStatus::Converged => CrSolveStatus::Converged,
            SolveStatus::ClampedHigh => CrSolveStatus::ClampedHigh,
            SolveStatus::NoSolutionClampedLow => CrSolveStatus::NoSolutionClampedLow,
        },
        iterations: r.iterations as u64,
        residual: r.residual,
    }
}

/// Message for the last failure on this thread; empty if none. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an estimator from a JSON spec such as `{"kind": "sa", "eta": "poly:0.75"}`.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cr_estimator_new(spec_json: *const c_char, rate_p: f64, out: *mut *mut CrEstimator) -> CrStatus {
    guard(|| {
        non_null(spec_json, "spec_json")?;
        non_null(out, "out")?;
        let text = CStr::from_ptr(spec_json)
            .to_str()
            .map_err(|_| fail(CrStatus::Parse, "spec is not UTF-8"))?;
        let spec: EstimatorSpec =
            serde_json::from_str(text).map_err(|e| fail(CrStatus::Config, &format!("estimator spec: {e}")))?;
        spec.validate().map_err(from_error)?;
        let inner = Estimator::new(&spec, rate_p).map_err(from_error)?;
        *out = Box::into_raw(Box::new(CrEstimator { inner }));
        Ok(())
    })
}

/// Feeds one access: the gap since the previous access and whether a change was seen.
///
/// # Safety
/// `est` must come from [`cr_estimator_new`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn cr_estimator_observe(est: *mut CrEstimator, tau: f64, changed: bool) -> CrStatus {
    guard(|| {
        non_null(est, "est")?;
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(fail(CrStatus::InvalidArgument, "tau must be finite and non-negative"));
        }
        (*est).inner.observe(Observation { tau, changed });
        Ok(())
    })
}

/// Current estimate. Returns `CR_STATUS_INSUFFICIENT_DATA` before the first observation.
///
/// # Safety
/// `est` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cr_estimator_estimate(est: *const CrEstimator, out: *mut f64) -> CrStatus {
    guard(|| {
        non_null(est, "est")?;
        non_null(out, "out")?;
        match (*est).inner.estimate() {
            Some(v) => {
                *out = v;
                Ok(())
            }
            None => Err(fail(CrStatus::InsufficientData, "no estimate yet")),
        }
    })
}

/// Changes the access rate used by subsequent updates.
///
/// # Safety
/// `est` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cr_estimator_set_rate(est: *mut CrEstimator, rate_p: f64) -> CrStatus {
    guard(|| {
        non_null(est, "est")?;
        (*est).inner.set_rate_p(rate_p).map_err(from_error)
    })
}

/// Number of observations consumed; 0 for a null handle.
///
/// # Safety
/// `est` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cr_estimator_steps(est: *const CrEstimator) -> u64 {
    if est.is_null() {
        0
    } else {
        (*est).inner.steps()
    }
}

/// # Safety
/// `est` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cr_estimator_free(est: *mut CrEstimator) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

unsafe fn observations(taus: *const f64, indicators: *const u8, n: usize) -> Result<Vec<Observation>, CrStatus> {
    let taus = slice(taus, n, "taus")?;
    let ind = slice(indicators, n, "indicators")?;
    Ok(taus.iter().zip(ind).map(|(&tau, &i)| Observation { tau, changed: i != 0 }).collect())
}

type Solver = fn(&[Observation], ClampRange, f64) -> crawlrate::Result<SolveReport>;

unsafe fn solve(
    solver: Solver,
    taus: *const f64,
    indicators: *const u8,
    n: usize,
    clamp_min: f64,
    clamp_max: f64,
    tol: f64,
    out: *mut CrSolveReport,
) -> CrStatus {
    guard(|| {
        non_null(out, "out")?;
        let obs = observations(taus, indicators, n)?;
        let clamp = ClampRange::new(clamp_min, clamp_max).map_err(from_error)?;
        *out = solve_report(solver(&obs, clamp, tol).map_err(from_error)?);
        Ok(())
    })
}

/// Maximum-likelihood change rate from `n` (gap, indicator) pairs.
///
/// # Safety
/// `taus` and `indicators` must point to `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cr_mle_solve(
    taus: *const f64,
    indicators: *const u8,
    n: usize,
    clamp_min: f64,
    clamp_max: f64,
    tol: f64,
    out: *mut CrSolveReport,
) -> CrStatus {
    solve(|o, c, t| mle_solve(o, c, t), taus, indicators, n, clamp_min, clamp_max, tol, out)
}

/// Moment-matching change rate from `n` (gap, indicator) pairs.
///
/// # Safety
/// Same as [`cr_mle_solve`].
#[no_mangle]
pub unsafe extern "C" fn cr_mm_solve(
    taus: *const f64,
    indicators: *const u8,
    n: usize,
    clamp_min: f64,
    clamp_max: f64,
    tol: f64,
    out: *mut CrSolveReport,
) -> CrStatus {
    solve(|o, c, t| mm_solve(o, c, t), taus, indicators, n, clamp_min, clamp_max, tol, out)
}

unsafe fn page_model(deltas: *const f64, weights: *const f64, n: usize) -> Result<PageModel, CrStatus> {
    let d = slice(deltas, n, "deltas")?.to_vec();
    let w = slice(weights, n, "weights")?.to_vec();
    PageModel::new(d, w).map_err(from_error)
}

/// Crawl rates maximising weighted freshness under `sum(rates) = budget`.
/// `objective_out` may be null.
///
/// # Safety
/// `deltas`, `weights` and `rates_out` must point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn cr_optimize_rates(
    deltas: *const f64,
    weights: *const f64,
    n: usize,
    budget: f64,
    tol: f64,
    rates_out: *mut f64,
    objective_out: *mut f64,
) -> CrStatus {
    guard(|| {
        non_null(rates_out, "rates_out")?;
        let model = page_model(deltas, weights, n)?;
        let alloc = optimize_rates(&model, budget, tol).map_err(from_error)?;
        ptr::copy_nonoverlapping(alloc.rates.as_ptr(), rates_out, n);
        if !objective_out.is_null() {
            *objective_out = alloc.objective;
        }
        Ok(())
    })
}

/// `sum w_i p_i / (p_i + delta_i)`.
///
/// # Safety
/// The three arrays must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cr_freshness_objective(
    rates: *const f64,
    deltas: *const f64,
    weights: *const f64,
    n: usize,
    out: *mut f64,
) -> CrStatus {
    guard(|| {
        non_null(out, "out")?;
        let model = page_model(deltas, weights, n)?;
        *out = freshness_objective(slice(rates, n, "rates")?, &model).map_err(from_error)?;
        Ok(())
    })
}

/// Regime of the momentum estimator with `beta_k = (k+1)^-beta` and
/// `eta_k = (k+1)^-eta`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cr_classify_sam(beta: f64, eta: f64, omega: f64, out: *mut CrSamRegime) -> CrStatus {
    guard(|| {
        non_null(out, "out")?;
        let b = StepsizeSchedule::polynomial(beta).map_err(from_error)?;
        let e = StepsizeSchedule::polynomial(eta).map_err(from_error)?;
        *out = match classify_sam(&b, &e, omega).regime {
            SamRegime::OneTimescale => CrSamRegime::OneTimescale,
            SamRegime::TwoTimescale => CrSamRegime::TwoTimescale,
            SamRegime::Conjecture => CrSamRegime::Conjecture,
            SamRegime::Experimental => CrSamRegime::Experimental,
            SamRegime::Invalid => CrSamRegime::Invalid,
            SamRegime::Unknown => CrSamRegime::Unknown,
        };
        Ok(())
    })
}

/// Simulates `n` accesses of a page; writes indicators (0/1) and gaps.
///
/// # Safety
/// `indicators_out` and `taus_out` must have room for `n` values.
#[no_mangle]
pub unsafe extern "C" fn cr_simulate_indicators(
    delta: f64,
    rate_p: f64,
    n: usize,
    seed: u64,
    indicators_out: *mut u8,
    taus_out: *mut f64,
) -> CrStatus {
    guard(|| {
        if n > 0 {
            non_null(indicators_out, "indicators_out")?;
            non_null(taus_out, "taus_out")?;
        }
        let stream = simulate_indicators(delta, rate_p, n, seed).map_err(from_error)?;
        for (i, o) in stream.pairs().iter().enumerate() {
            *indicators_out.add(i) = o.indicator();
            *taus_out.add(i) = o.tau;
        }
        Ok(())
    })
}

/// Parses a trace from text, one timestamp per line.
///
/// # Safety
/// `text` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cr_trace_parse(text: *const c_char, out: *mut *mut CrTrace) -> CrStatus {
    guard(|| {
        non_null(text, "text")?;
        non_null(out, "out")?;
        let ingested = parse_timestamps(CStr::from_ptr(text).to_bytes()).map_err(from_error)?;
        *out = Box::into_raw(Box::new(CrTrace { inner: ingested.trace }));
        Ok(())
    })
}

/// Number of events; 0 for a null handle.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cr_trace_len(trace: *const CrTrace) -> usize {
    if trace.is_null() {
        0
    } else {
        (*trace).inner.len()
    }
}

/// Copies up to `capacity` event times into `out`; `written` receives the count.
///
/// # Safety
/// `out` must have room for `capacity` values; `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cr_trace_events(
    trace: *const CrTrace,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> CrStatus {
    guard(|| {
        non_null(trace, "trace")?;
        non_null(written, "written")?;
        let events = (*trace).inner.events();
        let n = events.len().min(capacity);
        if n > 0 {
            non_null(out, "out")?;
            ptr::copy_nonoverlapping(events.as_ptr(), out, n);
        }
        *written = n;
        Ok(())
    })
}

/// `(events - 1) / span`.
///
/// # Safety
/// `trace` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cr_trace_change_rate(trace: *const CrTrace, out: *mut f64) -> CrStatus {
    guard(|| {
        non_null(trace, "trace")?;
        non_null(out, "out")?;
        *out = empirical_change_rate(&(*trace).inner).map_err(from_error)?.rate;
        Ok(())
    })
}

/// # Safety
/// `trace` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cr_trace_free(trace: *mut CrTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}
