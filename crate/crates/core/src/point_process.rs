//! Change and access event streams.
//!
//! A page changes according to a homogeneous Poisson process with rate `delta`
//! and is accessed at the points of an independent Poisson process with rate
//! `rate_p`, starting at time 0. At each access the crawler learns only whether
//! at least one change happened in the half-open interval since the previous
//! access. This module samples both processes, ingests recorded traces, turns a
//! trace plus an access schedule into an [`IndicatorStream`], and produces
//! exponential Q-Q data for checking the Poisson assumption on real traces.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, invalid, Error, Result};
use crate::rng::{derive_seed, rng_from_seed, SimRng, STREAM_ACCESSES, STREAM_CHANGES};

/// Ordered change timestamps of one page over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeTrace {
    events: Vec<f64>,
    horizon: f64,
}

impl ChangeTrace {
    pub fn new(events: Vec<f64>, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon >= 0.0) {
            return Err(invalid(format!("horizon must be finite and non-negative, got {horizon}")));
        }
        if let Some(w) = events.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(invalid(format!("events must be strictly increasing ({} then {})", w[0], w[1])));
        }
        if let (Some(&first), Some(&last)) = (events.first(), events.last()) {
            if !(first >= 0.0 && last <= horizon) {
                return Err(invalid(format!("events must lie in [0, {horizon}]")));
            }
        }
        Ok(Self { events, horizon })
    }

    pub fn events(&self) -> &[f64] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Time between the first and the last event (0 for fewer than two events).
    pub fn span(&self) -> f64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Inter-event gaps.
    pub fn gaps(&self) -> Vec<f64> {
        self.events.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Same trace with time origin moved to the first event; the horizon
    /// becomes the span.
    pub fn relative_to_first(&self) -> ChangeTrace {
        let origin = self.events.first().copied().unwrap_or(0.0);
        ChangeTrace {
            events: self.events.iter().map(|t| t - origin).collect(),
            horizon: self.events.last().map_or(0.0, |t| t - origin),
        }
    }

    /// Divides every timestamp by `unit` (e.g. 3600 to go from seconds to hours).
    /// Scaling can merge events closer than float resolution; those are dropped.
    pub fn rescaled(&self, unit: f64) -> Result<ChangeTrace> {
        ensure_positive("time unit", unit)?;
        let mut events: Vec<f64> = self.events.iter().map(|t| t / unit).collect();
        events.dedup();
        ChangeTrace::new(events, self.horizon / unit)
    }
}

/// Access instants `t_0 = 0 < t_1 < ...` of a crawler running at rate `rate_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessSchedule {
    times: Vec<f64>,
    rate_p: f64,
}

impl AccessSchedule {
    pub fn new(times: Vec<f64>, rate_p: f64) -> Result<Self> {
        ensure_positive("access rate", rate_p)?;
        if times.first() != Some(&0.0) {
            return Err(invalid("access schedule must start at time 0"));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) || times.iter().any(|t| !t.is_finite()) {
            return Err(invalid("access times must be finite and strictly increasing"));
        }
        Ok(Self { times, rate_p })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn rate_p(&self) -> f64 {
        self.rate_p
    }

    /// Number of accesses after time 0 (equals the number of gaps).
    pub fn n_accesses(&self) -> usize {
        self.times.len() - 1
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// One access: the gap since the previous access and whether a change was seen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub tau: f64,
    pub changed: bool,
}

impl Observation {
    pub fn indicator(&self) -> u8 {
        self.changed as u8
    }
}

/// Sequence of `(tau_k, I_k)` pairs observed at access rate `rate_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorStream {
    pairs: Vec<Observation>,
    rate_p: f64,
}

impl IndicatorStream {
    pub fn new(pairs: Vec<Observation>, rate_p: f64) -> Result<Self> {
        ensure_positive("access rate", rate_p)?;
        if let Some(bad) = pairs.iter().find(|o| !(o.tau.is_finite() && o.tau > 0.0)) {
            return Err(invalid(format!("every gap must be positive, got {}", bad.tau)));
        }
        Ok(Self { pairs, rate_p })
    }

    /// Builds a stream from parallel indicator (0/1) and gap slices.
    pub fn from_parts(indicators: &[u8], taus: &[f64], rate_p: f64) -> Result<Self> {
        if indicators.len() != taus.len() {
            return Err(invalid("indicator and gap sequences differ in length"));
        }
        let pairs = indicators
            .iter()
            .zip(taus)
            .map(|(&i, &tau)| match i {
                0 | 1 => Ok(Observation { tau, changed: i == 1 }),
                other => Err(invalid(format!("indicator must be 0 or 1, got {other}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(pairs, rate_p)
    }

    pub fn pairs(&self) -> &[Observation] {
        &self.pairs
    }

    pub fn rate_p(&self) -> f64 {
        self.rate_p
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of accesses that detected a change.
    pub fn detections(&self) -> usize {
        self.pairs.iter().filter(|o| o.changed).count()
    }

    pub fn prefix(&self, k: usize) -> &[Observation] {
        &self.pairs[..k.min(self.pairs.len())]
    }
}

fn exp_dist(rate: f64) -> Result<Exp<f64>> {
    Exp::new(rate).map_err(|e| invalid(format!("exponential rate {rate}: {e}")))
}

/// Samples a homogeneous Poisson process on `[0, horizon]` from cumulative
/// exponential gaps.
pub fn sample_poisson_process(rate: f64, horizon: f64, seed: u64) -> Result<ChangeTrace> {
    ensure_positive("rate", rate)?;
    ensure_positive("horizon", horizon)?;
    let exp = exp_dist(rate)?;
    let mut rng = rng_from_seed(seed);
    let mut events = Vec::with_capacity((rate * horizon * 1.1) as usize + 8);
    let mut t = exp.sample(&mut rng);
    while t <= horizon {
        events.push(t);
        t += exp.sample(&mut rng);
    }
    // Adjacent draws can collide only if a gap underflows to zero; drop them.
    events.dedup();
    ChangeTrace::new(events, horizon)
}

/// Samples `n_accesses` IID Exp(`rate_p`) gaps and returns the access instants
/// starting at 0.
pub fn sample_access_schedule(rate_p: f64, n_accesses: usize, seed: u64) -> Result<AccessSchedule> {
    ensure_positive("access rate", rate_p)?;
    if n_accesses == 0 {
        return Err(invalid("n_accesses must be at least 1"));
    }
    let exp = exp_dist(rate_p)?;
    let mut rng = rng_from_seed(seed);
    let mut times = Vec::with_capacity(n_accesses + 1);
    times.push(0.0);
    let mut t = 0.0;
    while times.len() <= n_accesses {
        let next = t + exp.sample(&mut rng);
        if next > t {
            times.push(next);
            t = next;
        }
    }
    AccessSchedule::new(times, rate_p)
}

/// Samples access instants at rate `rate_p` until `horizon` is exceeded; the
/// returned schedule contains every access in `[0, horizon]`.
pub fn sample_access_schedule_over(rate_p: f64, horizon: f64, seed: u64) -> Result<AccessSchedule> {
    ensure_positive("access rate", rate_p)?;
    ensure_positive("horizon", horizon)?;
    let exp = exp_dist(rate_p)?;
    let mut rng = rng_from_seed(seed);
    let mut times = vec![0.0];
    let mut t = exp.sample(&mut rng);
    while t <= horizon {
        if t > *times.last().unwrap() {
            times.push(t);
        }
        t += exp.sample(&mut rng);
    }
    AccessSchedule::new(times, rate_p)
}

/// Derives the indicator stream: `I_k = 1` iff some change lies in `(t_{k-1}, t_k]`.
pub fn indicators_from_traces(trace: &ChangeTrace, schedule: &AccessSchedule) -> Result<IndicatorStream> {
    let times = schedule.times();
    let last = *times.last().expect("schedule has t_0");
    if last > trace.horizon() {
        return Err(invalid(format!(
            "access schedule ends at {last}, beyond the trace horizon {}",
            trace.horizon()
        )));
    }
    let events = trace.events();
    let mut next = 0usize;
    let mut pairs = Vec::with_capacity(times.len().saturating_sub(1));
    for w in times.windows(2) {
        let (start, end) = (w[0], w[1]);
        while next < events.len() && events[next] <= start {
            next += 1;
        }
        let changed = next < events.len() && events[next] <= end;
        pairs.push(Observation { tau: end - start, changed });
    }
    IndicatorStream::new(pairs, schedule.rate_p())
}

/// Streaming simulator of one page: a continuous change timeline observed by
/// exponential accesses. The access rate may be changed between calls while the
/// change process continues on the same timeline.
///
/// With equal seeds this produces the same observations as
/// [`indicators_from_traces`] applied to [`sample_poisson_process`] and
/// [`sample_access_schedule`], so either path can be used interchangeably.
#[derive(Debug, Clone)]
pub struct PageSimulator {
    change_exp: Exp<f64>,
    access_exp: Exp<f64>,
    rate_p: f64,
    change_rng: SimRng,
    access_rng: SimRng,
    now: f64,
    next_change: f64,
}

impl PageSimulator {
    /// Uses `change_seed` for the change process and `access_seed` for accesses.
    pub fn with_seeds(delta: f64, rate_p: f64, change_seed: u64, access_seed: u64) -> Result<Self> {
        ensure_positive("change rate", delta)?;
        ensure_positive("access rate", rate_p)?;
        let change_exp = exp_dist(delta)?;
        let mut change_rng = rng_from_seed(change_seed);
        let next_change = change_exp.sample(&mut change_rng);
        Ok(Self {
            change_exp,
            access_exp: exp_dist(rate_p)?,
            rate_p,
            change_rng,
            access_rng: rng_from_seed(access_seed),
            now: 0.0,
            next_change,
        })
    }

    /// Splits `seed` into independent change and access streams.
    pub fn new(delta: f64, rate_p: f64, seed: u64) -> Result<Self> {
        Self::with_seeds(
            delta,
            rate_p,
            derive_seed(seed, &[STREAM_CHANGES]),
            derive_seed(seed, &[STREAM_ACCESSES]),
        )
    }

    pub fn rate_p(&self) -> f64 {
        self.rate_p
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn set_rate_p(&mut self, rate_p: f64) -> Result<()> {
        ensure_positive("access rate", rate_p)?;
        self.access_exp = exp_dist(rate_p)?;
        self.rate_p = rate_p;
        Ok(())
    }

    /// Advances to the next access and reports what the crawler sees.
    pub fn next_observation(&mut self) -> Observation {
        let mut tau = self.access_exp.sample(&mut self.access_rng);
        while tau <= 0.0 {
            tau = self.access_exp.sample(&mut self.access_rng);
        }
        let end = self.now + tau;
        let changed = self.next_change <= end;
        while self.next_change <= end {
            self.next_change += self.change_exp.sample(&mut self.change_rng);
        }
        self.now = end;
        Observation { tau, changed }
    }

    pub fn take(&mut self, n: usize) -> Vec<Observation> {
        (0..n).map(|_| self.next_observation()).collect()
    }
}

/// Simulates `n` observations of a page with change rate `delta` crawled at
/// rate `rate_p`.
pub fn simulate_indicators(delta: f64, rate_p: f64, n: usize, seed: u64) -> Result<IndicatorStream> {
    let mut sim = PageSimulator::new(delta, rate_p, seed)?;
    IndicatorStream::new(sim.take(n), rate_p)
}

/// Draws `n` IID Bernoulli indicators with success probability `prob`.
pub fn bernoulli_indicators<R: Rng>(rng: &mut R, prob: f64, n: usize) -> Vec<bool> {
    (0..n).map(|_| rng.random::<f64>() < prob).collect()
}

/// Supported trace file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceFormat {
    /// One event per line: a real number of seconds or an ISO-8601 datetime.
    /// Blank lines and `#` comments are ignored.
    TimestampsV1,
}

impl FromStr for TraceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "timestamps-v1" => Ok(TraceFormat::TimestampsV1),
            other => Err(invalid(format!("unknown trace format {other:?}"))),
        }
    }
}

/// An ingested trace plus the cleanup that was applied to it.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestedTrace {
    pub trace: ChangeTrace,
    pub duplicates_dropped: usize,
    pub was_unsorted: bool,
    pub warnings: Vec<String>,
}

impl IngestedTrace {
    pub fn count(&self) -> usize {
        self.trace.len()
    }

    pub fn span(&self) -> f64 {
        self.trace.span()
    }
}

enum Stamp {
    Seconds(f64),
    Instant(DateTime<chrono::Utc>),
}

fn parse_stamp(text: &str) -> Option<Stamp> {
    if let Ok(v) = text.parse::<f64>() {
        return Some(Stamp::Seconds(v));
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(Stamp::Instant(dt.to_utc()));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
            return Some(Stamp::Instant(dt.and_utc()));
        }
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .ok()
        .map(|d| Stamp::Instant(d.and_hms_opt(0, 0, 0).unwrap().and_utc()))
}

/// Parses "timestamps-v1" text. ISO datetimes are converted to seconds
/// relative to the earliest event; plain numbers are taken as seconds as-is.
pub fn parse_timestamps<R: Read>(reader: R) -> Result<IngestedTrace> {
    let mut seconds = Vec::new();
    let mut instants = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        match parse_stamp(content) {
            Some(Stamp::Seconds(v)) if v.is_finite() && v >= 0.0 => seconds.push(v),
            Some(Stamp::Seconds(v)) => {
                return Err(Error::Parse { line: lineno, message: format!("timestamp {v} must be finite and non-negative") })
            }
            Some(Stamp::Instant(dt)) => instants.push(dt),
            None => {
                return Err(Error::Parse { line: lineno, message: format!("not a number or ISO-8601 datetime: {content:?}") })
            }
        }
        if !seconds.is_empty() && !instants.is_empty() {
            return Err(Error::Parse { line: lineno, message: "mixes numeric and ISO-8601 timestamps".into() });
        }
    }

    let mut values = if instants.is_empty() {
        seconds
    } else {
        let origin = *instants.iter().min().unwrap();
        instants
            .iter()
            .map(|dt| (*dt - origin).num_microseconds().map_or_else(|| (*dt - origin).num_seconds() as f64, |us| us as f64 * 1e-6))
            .collect()
    };

    let was_unsorted = values.windows(2).any(|w| w[0] > w[1]);
    values.sort_by(f64::total_cmp);
    let before = values.len();
    values.dedup();
    let duplicates_dropped = before - values.len();

    let mut warnings = Vec::new();
    if values.is_empty() {
        warnings.push("trace contains no events".to_string());
    }
    if was_unsorted {
        warnings.push("timestamps were not in order and have been sorted".to_string());
    }
    if duplicates_dropped > 0 {
        warnings.push(format!("dropped {duplicates_dropped} duplicate timestamp(s)"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let horizon = values.last().copied().unwrap_or(0.0);
    Ok(IngestedTrace { trace: ChangeTrace::new(values, horizon)?, duplicates_dropped, was_unsorted, warnings })
}

/// Reads a trace file in the given format.
pub fn ingest_trace(path: &Path, format: TraceFormat) -> Result<IngestedTrace> {
    match format {
        TraceFormat::TimestampsV1 => parse_timestamps(fs::File::open(path)?),
    }
}

/// Rate and mean gap derived from the events of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeRateSummary {
    /// `(n - 1) / (last - first)`, events per time unit.
    pub rate: f64,
    /// Mean time between consecutive events, the reciprocal of `rate`.
    pub mean_gap: f64,
    pub events: usize,
    pub span: f64,
}

/// Empirical change rate over the span between the first and last event.
pub fn empirical_change_rate(trace: &ChangeTrace) -> Result<ChangeRateSummary> {
    if trace.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 events, trace has {}", trace.len())));
    }
    let span = trace.span();
    let gaps = (trace.len() - 1) as f64;
    Ok(ChangeRateSummary { rate: gaps / span, mean_gap: span / gaps, events: trace.len(), span })
}

/// Pairs of (empirical, theoretical) quantiles against an exponential law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QQData {
    pub points: Vec<(f64, f64)>,
    pub reference_rate: f64,
}

impl QQData {
    pub fn empirical(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.0)
    }

    pub fn theoretical(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    /// Pearson correlation of the two coordinates; `None` if either is constant.
    pub fn correlation(&self) -> Option<f64> {
        let (sxx, syy, sxy) = self.moments();
        if sxx <= 0.0 || syy <= 0.0 {
            None
        } else {
            Some(sxy / (sxx * syy).sqrt())
        }
    }

    /// Least-squares line `empirical = slope * theoretical + intercept`.
    pub fn fit_line(&self) -> Option<(f64, f64)> {
        let (sxx, _, sxy) = self.moments();
        if sxx <= 0.0 {
            return None;
        }
        let n = self.points.len() as f64;
        let mx = self.theoretical().sum::<f64>() / n;
        let my = self.empirical().sum::<f64>() / n;
        let slope = sxy / sxx;
        Some((slope, my - slope * mx))
    }

    // (Σ(x-x̄)², Σ(y-ȳ)², Σ(x-x̄)(y-ȳ)) with x theoretical, y empirical.
    fn moments(&self) -> (f64, f64, f64) {
        let n = self.points.len() as f64;
        if n < 2.0 {
            return (0.0, 0.0, 0.0);
        }
        let mx = self.theoretical().sum::<f64>() / n;
        let my = self.empirical().sum::<f64>() / n;
        self.points.iter().fold((0.0, 0.0, 0.0), |(sxx, syy, sxy), &(y, x)| {
            let (dx, dy) = (x - mx, y - my);
            (sxx + dx * dx, syy + dy * dy, sxy + dx * dy)
        })
    }
}

/// Q-Q points of `gaps` against Exp(`reference_rate`), Hazen plotting positions.
pub fn qq_points(gaps: &[f64], reference_rate: f64) -> Result<QQData> {
    ensure_positive("reference rate", reference_rate)?;
    if gaps.is_empty() {
        return Err(Error::InsufficientData("no gaps to compare".into()));
    }
    if let Some(bad) = gaps.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
        return Err(invalid(format!("gaps must be positive, got {bad}")));
    }
    let mut sorted = gaps.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let points = sorted
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let prob = (i as f64 + 0.5) / n;
            (g, -(-prob).ln_1p() / reference_rate)
        })
        .collect();
    Ok(QQData { points, reference_rate })
}
