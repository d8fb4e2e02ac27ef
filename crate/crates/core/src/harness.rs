//! Replicated experiments and their statistics.
//!
//! Every run draws a fresh change process and access process from a seed
//! derived from `(master_seed, run)`, and every estimator in the run consumes
//! the same indicator stream, so differences between estimators come from the
//! methods alone. Results are keyed by run index, which makes the aggregate
//! independent of how runs are scheduled across threads.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, invalid, Error, Result};
use crate::estimators::{Estimator, EstimatorConfig, EstimatorSpec};
use crate::point_process::{Observation, PageSimulator};
use crate::rng::{derive_seed, RNG_ALGORITHM};
use crate::schedules::{classify_sam, validate_lln, validate_sa};

/// A replicated synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub delta: f64,
    pub rate_p: f64,
    pub n_steps: usize,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    pub estimators: Vec<EstimatorConfig>,
    #[serde(default)]
    pub master_seed: u64,
    /// `[k_min, k_max]` for the log-log error slope; defaults to
    /// `[max(1, n_steps / 100), n_steps]`.
    #[serde(default)]
    pub slope_window: Option<(usize, usize)>,
}

fn default_runs() -> usize {
    100
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("delta", self.delta)?;
        ensure_positive("rate_p", self.rate_p)?;
        if self.n_runs == 0 || self.n_steps == 0 {
            return Err(invalid("n_runs and n_steps must be at least 1"));
        }
        for e in &self.estimators {
            e.spec.validate()?;
        }
        if let Some((lo, hi)) = self.slope_window {
            if !(1 <= lo && lo < hi && hi <= self.n_steps) {
                return Err(invalid(format!("slope window [{lo}, {hi}] must satisfy 1 <= k_min < k_max <= n_steps")));
            }
        }
        Ok(())
    }

    pub fn slope_window(&self) -> (usize, usize) {
        self.slope_window.unwrap_or(((self.n_steps / 100).max(1), self.n_steps))
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        derive_seed(self.master_seed, &[run as u64])
    }
}

/// Estimates indexed by estimator, run and step. Step `k` (1-based) is stored
/// at index `k - 1`; undefined estimates are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTensor {
    labels: Vec<String>,
    n_runs: usize,
    n_steps: usize,
    data: Vec<f64>,
    /// Total wall time spent inside each estimator, summed over runs.
    elapsed: Vec<Duration>,
}

impl EstimateTensor {
    /// Builds a tensor from `[estimator][run][step]` nested vectors.
    pub fn from_nested(labels: Vec<String>, nested: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if labels.len() != nested.len() {
            return Err(invalid("one label per estimator required"));
        }
        let n_runs = nested.first().map_or(0, Vec::len);
        let n_steps = nested.first().and_then(|r| r.first()).map_or(0, Vec::len);
        let mut data = Vec::with_capacity(labels.len() * n_runs * n_steps);
        for runs in &nested {
            if runs.len() != n_runs || runs.iter().any(|r| r.len() != n_steps) {
                return Err(invalid("ragged estimate tensor"));
            }
            runs.iter().for_each(|r| data.extend_from_slice(r));
        }
        let elapsed = vec![Duration::ZERO; labels.len()];
        Ok(Self { labels, n_runs, n_steps, data, elapsed })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_runs(&self) -> usize {
        self.n_runs
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_estimators(&self) -> usize {
        self.labels.len()
    }

    pub fn run(&self, estimator: usize, run: usize) -> &[f64] {
        let start = (estimator * self.n_runs + run) * self.n_steps;
        &self.data[start..start + self.n_steps]
    }

    pub fn runs(&self, estimator: usize) -> impl Iterator<Item = &[f64]> {
        (0..self.n_runs).map(move |r| self.run(estimator, r))
    }

    /// Estimate of `estimator` in `run` after `k` observations (1-based).
    pub fn get(&self, estimator: usize, run: usize, k: usize) -> f64 {
        self.run(estimator, run)[k - 1]
    }

    pub fn wall_time_per_step(&self, estimator: usize) -> Duration {
        let steps = (self.n_runs * self.n_steps).max(1) as u32;
        self.elapsed[estimator] / steps
    }

    fn per_step<F: Fn(&mut dyn Iterator<Item = f64>) -> f64>(&self, estimator: usize, f: F) -> Vec<f64> {
        (0..self.n_steps)
            .map(|s| f(&mut (0..self.n_runs).map(|r| self.run(estimator, r)[s])))
            .collect()
    }

    pub fn mean_curve(&self, estimator: usize) -> Vec<f64> {
        let n = self.n_runs as f64;
        self.per_step(estimator, |it| it.sum::<f64>() / n)
    }

    /// `sqrt(mean over runs of (estimate - delta)^2)` at every step.
    pub fn rmse_curve(&self, estimator: usize, true_delta: f64) -> Vec<f64> {
        let n = self.n_runs as f64;
        self.per_step(estimator, |it| (it.map(|x| (x - true_delta).powi(2)).sum::<f64>() / n).sqrt())
    }

    /// Mean over runs of `|estimate - delta|` at every step.
    pub fn mean_abs_error_curve(&self, estimator: usize, true_delta: f64) -> Vec<f64> {
        let n = self.n_runs as f64;
        self.per_step(estimator, |it| it.map(|x| (x - true_delta).abs()).sum::<f64>() / n)
    }

    pub fn confidence_band(&self, estimator: usize, level: f64) -> Result<Band> {
        let z = z_for_level(level)?;
        if self.n_runs < 2 {
            return Err(Error::InsufficientData(format!("a confidence band needs at least 2 runs, have {}", self.n_runs)));
        }
        let n = self.n_runs as f64;
        let mean = self.mean_curve(estimator);
        let mut lower = Vec::with_capacity(self.n_steps);
        let mut upper = Vec::with_capacity(self.n_steps);
        for (s, &m) in mean.iter().enumerate() {
            let ss: f64 = self.runs(estimator).map(|r| (r[s] - m).powi(2)).sum();
            let half = z * (ss / (n - 1.0)).sqrt() / n.sqrt();
            lower.push(m - half);
            upper.push(m + half);
        }
        Ok(Band { mean, lower, upper, level })
    }
}

/// Per-step mean with a normal-approximation confidence band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

fn z_for_level(level: f64) -> Result<f64> {
    const TABLE: [(f64, f64); 3] = [(0.90, 1.645), (0.95, 1.96), (0.99, 2.576)];
    TABLE
        .iter()
        .find(|(l, _)| (l - level).abs() < 1e-9)
        .map(|&(_, z)| z)
        .ok_or_else(|| invalid(format!("unsupported confidence level {level}; use 0.90, 0.95 or 0.99")))
}

/// Confidence bands of every estimator in `tensor`.
pub fn confidence_band(tensor: &EstimateTensor, level: f64) -> Result<Vec<Band>> {
    (0..tensor.n_estimators()).map(|e| tensor.confidence_band(e, level)).collect()
}

/// RMSE curves of every estimator in `tensor`.
pub fn rmse_curve(tensor: &EstimateTensor, true_delta: f64) -> Vec<Vec<f64>> {
    (0..tensor.n_estimators()).map(|e| tensor.rmse_curve(e, true_delta)).collect()
}

/// Estimates of one run, one vector per estimator.
fn run_once(cfg: &ExperimentConfig, run: usize) -> Result<(Vec<Vec<f64>>, Vec<Duration>)> {
    let mut sim = PageSimulator::new(cfg.delta, cfg.rate_p, cfg.run_seed(run))?;
    let stream: Vec<Observation> = sim.take(cfg.n_steps);
    let mut curves = Vec::with_capacity(cfg.estimators.len());
    let mut times = Vec::with_capacity(cfg.estimators.len());
    for e in &cfg.estimators {
        let mut est = Estimator::with_truth(&e.spec, cfg.rate_p, cfg.delta)?;
        let mut curve = Vec::with_capacity(cfg.n_steps);
        let started = Instant::now();
        for &obs in &stream {
            est.observe(obs);
            curve.push(est.estimate().unwrap_or(f64::NAN));
        }
        times.push(started.elapsed());
        curves.push(curve);
    }
    Ok((curves, times))
}

/// Runs `n_runs` independent replications of every estimator.
pub fn run_replications(cfg: &ExperimentConfig) -> Result<EstimateTensor> {
    cfg.validate()?;
    let per_run: Vec<(Vec<Vec<f64>>, Vec<Duration>)> =
        (0..cfg.n_runs).into_par_iter().map(|r| run_once(cfg, r)).collect::<Result<_>>()?;

    let n_est = cfg.estimators.len();
    let mut data = Vec::with_capacity(n_est * cfg.n_runs * cfg.n_steps);
    let mut elapsed = vec![Duration::ZERO; n_est];
    for e in 0..n_est {
        for (curves, times) in &per_run {
            data.extend_from_slice(&curves[e]);
            elapsed[e] += times[e];
        }
    }
    Ok(EstimateTensor {
        labels: cfg.estimators.iter().map(EstimatorConfig::label).collect(),
        n_runs: cfg.n_runs,
        n_steps: cfg.n_steps,
        data,
        elapsed,
    })
}

/// Least-squares fit of `log error` against `log k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub points_used: usize,
    /// Points in the window skipped because the error was not positive.
    pub dropped: usize,
}

/// Slope of `log curve[k]` against `log k` over `k` in `[k_min, k_max]`, where
/// `curve[k - 1]` is the error after `k` steps.
pub fn rate_slope(curve: &[f64], k_min: usize, k_max: usize) -> Result<SlopeFit> {
    if !(1 <= k_min && k_min < k_max && k_max <= curve.len()) {
        return Err(invalid(format!("window [{k_min}, {k_max}] invalid for a curve of length {}", curve.len())));
    }
    let mut dropped = 0;
    let pts: Vec<(f64, f64)> = (k_min..=k_max)
        .filter_map(|k| {
            let e = curve[k - 1];
            if e > 0.0 && e.is_finite() {
                Some(((k as f64).ln(), e.ln()))
            } else {
                dropped += 1;
                None
            }
        })
        .collect();
    if dropped > 0 {
        log::warn!("rate_slope: dropped {dropped} non-positive error value(s)");
    }
    if pts.len() < 2 {
        return Err(Error::InsufficientData("fewer than two positive errors in the window".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxy, sxx) = pts
        .iter()
        .fold((0.0, 0.0), |(sxy, sxx), &(x, y)| (sxy + (x - mx) * (y - my), sxx + (x - mx).powi(2)));
    let slope = sxy / sxx;
    Ok(SlopeFit { slope, intercept: my - slope * mx, points_used: pts.len(), dropped })
}

/// Last step at which the ordering of two curves flips.
pub fn last_crossover(a: &[f64], b: &[f64]) -> Option<usize> {
    let sign = |i: usize| (a[i] - b[i]).partial_cmp(&0.0);
    (1..a.len().min(b.len())).rev().find(|&i| sign(i) != sign(i - 1)).map(|i| i + 1)
}

/// Summary statistics of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub label: String,
    pub kind: String,
    pub terminal_mean: f64,
    pub terminal_rmse: f64,
    pub terminal_mean_abs_error: f64,
    pub terminal_ci: Option<(f64, f64)>,
    /// Log-log slope of the mean absolute error over the slope window.
    pub rate_slope: Option<f64>,
    /// Decay exponent guaranteed by the schedule conditions, when known.
    pub theoretical_rate_exponent: Option<f64>,
    /// Conjectured (unproven) decay exponent for the momentum estimator.
    pub conjectured_rate_exponent: Option<f64>,
    pub wall_time_per_step_ns: f64,
    /// Offline estimators are re-solved every this many steps; the curve is
    /// flat in between.
    pub resolve_every: Option<usize>,
}

/// Last step at which two estimators' RMSE curves swap order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    pub first: String,
    pub second: String,
    pub last_step: Option<usize>,
}

/// Per-step curves of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub label: String,
    pub mean: Vec<f64>,
    pub ci_lower: Option<Vec<f64>>,
    pub ci_upper: Option<Vec<f64>>,
    pub rmse: Vec<f64>,
    pub mean_abs_error: Vec<f64>,
    /// Estimates of the first run.
    pub single_run: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rng_algorithm: String,
    pub slope_window: (usize, usize),
    pub estimators: Vec<EstimatorSummary>,
    pub crossovers: Vec<Crossover>,
    #[serde(skip)]
    pub curves: Vec<Curves>,
}

fn theoretical_rates(spec: &EstimatorSpec) -> (Option<f64>, Option<f64>) {
    match spec {
        EstimatorSpec::Lln { alpha } => (validate_lln(alpha).rate_exponent, None),
        EstimatorSpec::Sa { eta, .. } => (validate_sa(eta).rate_exponent, None),
        EstimatorSpec::Sam { beta, eta, omega, .. } => (None, classify_sam(beta, eta, *omega).conjectured_rate_exponent),
        _ => (None, None),
    }
}

/// Aggregates a tensor into per-estimator curves and summaries.
pub fn summarize(cfg: &ExperimentConfig, tensor: &EstimateTensor) -> ExperimentReport {
    let window = cfg.slope_window();
    let last = tensor.n_steps() - 1;
    let mut summaries = Vec::new();
    let mut curves = Vec::new();
    for (e, ec) in cfg.estimators.iter().enumerate() {
        let band = tensor.confidence_band(e, 0.95).ok();
        let rmse = tensor.rmse_curve(e, cfg.delta);
        let mae = tensor.mean_abs_error_curve(e, cfg.delta);
        let mean = band.as_ref().map_or_else(|| tensor.mean_curve(e), |b| b.mean.clone());
        let slope = rate_slope(&mae, window.0, window.1).ok().map(|f| f.slope);
        let (theoretical, conjectured) = theoretical_rates(&ec.spec);
        if let (Some(c), Some(s)) = (conjectured, slope) {
            log::info!("{}: empirical error slope {s:.3}, conjectured -{c:.3} (not asserted)", ec.label());
        }
        let resolve_every = match &ec.spec {
            EstimatorSpec::Mle { resolve_every, .. } | EstimatorSpec::Mm { resolve_every, .. } => Some(*resolve_every),
            _ => None,
        };
        summaries.push(EstimatorSummary {
            label: ec.label(),
            kind: ec.spec.kind_name().to_string(),
            terminal_mean: mean[last],
            terminal_rmse: rmse[last],
            terminal_mean_abs_error: mae[last],
            terminal_ci: band.as_ref().map(|b| (b.lower[last], b.upper[last])),
            rate_slope: slope,
            theoretical_rate_exponent: theoretical,
            conjectured_rate_exponent: conjectured,
            wall_time_per_step_ns: tensor.wall_time_per_step(e).as_secs_f64() * 1e9,
            resolve_every,
        });
        curves.push(Curves {
            label: ec.label(),
            mean,
            ci_lower: band.as_ref().map(|b| b.lower.clone()),
            ci_upper: band.map(|b| b.upper),
            rmse,
            mean_abs_error: mae,
            single_run: tensor.run(e, 0).to_vec(),
        });
    }
    let mut crossovers = Vec::new();
    for a in 0..curves.len() {
        for b in a + 1..curves.len() {
            crossovers.push(Crossover {
                first: curves[a].label.clone(),
                second: curves[b].label.clone(),
                last_step: last_crossover(&curves[a].rmse, &curves[b].rmse),
            });
        }
    }
    ExperimentReport {
        config: cfg.clone(),
        rng_algorithm: RNG_ALGORITHM.to_string(),
        slope_window: window,
        estimators: summaries,
        crossovers,
        curves,
    }
}

/// Runs the replications and summarises them.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let tensor = run_replications(cfg)?;
    Ok(summarize(cfg, &tensor))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingUnit {
    /// Cost of one online update.
    PerStep,
    /// Cost of one full offline re-solve on `k` observations.
    PerSolve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSample {
    pub label: String,
    pub k: usize,
    pub nanos: f64,
    pub unit: TimingUnit,
}

const TIMING_BLOCK: usize = 20_000;
const TIMING_REPS: usize = 9;

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Measures the cost of each estimator after `k` observations, for each `k` in
/// `checkpoints`. Online estimators report the median per-step time of a block
/// of updates starting at `k`; offline ones report the median time of one full
/// re-solve on the first `k` observations.
pub fn timing_probe(
    estimators: &[EstimatorConfig],
    checkpoints: &[usize],
    delta: f64,
    rate_p: f64,
    seed: u64,
) -> Result<Vec<TimingSample>> {
    let max_k = checkpoints.iter().copied().max().unwrap_or(0);
    let mut sim = PageSimulator::new(delta, rate_p, seed)?;
    let stream = sim.take(max_k + TIMING_BLOCK);
    let mut out = Vec::new();
    for ec in estimators {
        for &k in checkpoints {
            let mut est = Estimator::with_truth(&ec.spec, rate_p, delta)?;
            let offline = ec.spec.is_offline();
            if offline {
                // Avoid paying for intermediate solves while building the history.
                let spec = match &ec.spec {
                    EstimatorSpec::Mle { clamp, tol, .. } => EstimatorSpec::Mle { clamp: *clamp, tol: *tol, resolve_every: usize::MAX },
                    EstimatorSpec::Mm { clamp, tol, .. } => EstimatorSpec::Mm { clamp: *clamp, tol: *tol, resolve_every: usize::MAX },
                    other => other.clone(),
                };
                est = Estimator::with_truth(&spec, rate_p, delta)?;
            }
            for &obs in &stream[..k] {
                est.observe(obs);
            }
            let samples: Vec<f64> = (0..TIMING_REPS)
                .map(|_| {
                    let mut e = est.clone();
                    if offline {
                        let t = Instant::now();
                        std::hint::black_box(e.refresh());
                        t.elapsed().as_nanos() as f64
                    } else {
                        let block = &stream[k..k + TIMING_BLOCK];
                        let t = Instant::now();
                        for &obs in block {
                            e.observe(obs);
                            std::hint::black_box(e.estimate());
                        }
                        t.elapsed().as_nanos() as f64 / TIMING_BLOCK as f64
                    }
                })
                .collect();
            out.push(TimingSample {
                label: ec.label(),
                k,
                nanos: median(samples),
                unit: if offline { TimingUnit::PerSolve } else { TimingUnit::PerStep },
            });
        }
    }
    Ok(out)
}
