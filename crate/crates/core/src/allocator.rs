//! Budgeted crawl-rate allocation.
//!
//! With change rates `delta_i`, weights `w_i` and a total crawl budget `B`, the
//! long-run weighted freshness is `F(p) = sum w_i p_i / (p_i + delta_i)`. Each
//! term is concave and strictly increasing, so the budget binds and the KKT
//! conditions give `p_i(lambda) = max(0, sqrt(w_i delta_i / lambda) - delta_i)`.
//! The multiplier is found by bisection on `sum p_i(lambda) = B`; the active set
//! it identifies then yields `lambda` in closed form.
//!
//! [`adaptive_loop`] couples the allocator with the estimators: crawl at the
//! current rates, update per-page estimates, re-optimise, repeat.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, invalid, Result};
use crate::estimators::{ClampRange, Estimator, EstimatorSpec};
use crate::point_process::PageSimulator;
use crate::rng::derive_seed;

/// Change rates and importance weights of a set of pages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageModel {
    deltas: Vec<f64>,
    weights: Vec<f64>,
}

impl PageModel {
    pub fn new(deltas: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if deltas.len() != weights.len() {
            return Err(invalid(format!("{} change rates but {} weights", deltas.len(), weights.len())));
        }
        if deltas.is_empty() {
            return Err(invalid("page model has no pages"));
        }
        for (&d, &w) in deltas.iter().zip(&weights) {
            ensure_positive("change rate", d)?;
            ensure_positive("weight", w)?;
        }
        Ok(Self { deltas, weights })
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    /// Same weights, different change rates.
    pub fn with_deltas(&self, deltas: Vec<f64>) -> Result<Self> {
        Self::new(deltas, self.weights.clone())
    }
}

/// Crawl rates with the budget they were computed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrawlAllocation {
    pub rates: Vec<f64>,
    pub weights: Vec<f64>,
    pub budget: f64,
    /// `F(rates)` under the model the allocation was computed from.
    pub objective: f64,
    /// KKT multiplier, when the allocation came from the optimiser.
    pub lambda: Option<f64>,
}

/// `F(p) = sum w_i p_i / (p_i + delta_i)`.
pub fn freshness_objective(rates: &[f64], model: &PageModel) -> Result<f64> {
    if rates.len() != model.len() {
        return Err(invalid(format!("{} rates for {} pages", rates.len(), model.len())));
    }
    let mut total = 0.0;
    for ((&p, &d), &w) in rates.iter().zip(model.deltas()).zip(model.weights()) {
        if !(p >= 0.0) {
            return Err(invalid(format!("crawl rates must be non-negative, got {p}")));
        }
        total += if p.is_infinite() { w } else { w * p / (p + d) };
    }
    Ok(total)
}

fn rates_at(model: &PageModel, lambda: f64) -> impl Iterator<Item = f64> + '_ {
    model
        .deltas()
        .iter()
        .zip(model.weights())
        .map(move |(&d, &w)| ((w * d / lambda).sqrt() - d).max(0.0))
}

/// Water-filling optimum of `F` subject to `sum p_i <= budget`, `p_i >= 0`.
/// The returned rates sum to `budget` within `tol`.
pub fn optimize_rates(model: &PageModel, budget: f64, tol: f64) -> Result<CrawlAllocation> {
    ensure_positive("budget", budget)?;
    ensure_positive("tolerance", tol)?;
    let total = |lambda: f64| rates_at(model, lambda).sum::<f64>();

    // Above max w/delta every page is inactive; total(lambda) grows without
    // bound as lambda -> 0.
    let mut hi = model
        .deltas()
        .iter()
        .zip(model.weights())
        .map(|(&d, &w)| w / d)
        .fold(0.0, f64::max);
    let mut lo = hi;
    while total(lo) < budget {
        hi = lo;
        lo /= 4.0;
    }
    for _ in 0..2000 {
        let mid = (lo * hi).sqrt();
        let sum = total(mid);
        if (sum - budget).abs() <= tol * 1e-3 || hi / lo - 1.0 <= 4.0 * f64::EPSILON {
            lo = mid;
            hi = mid;
            break;
        }
        if sum > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    // Closed-form multiplier on the active set; shrink the set if a page
    // drops out at the boundary.
    let mut lambda = (lo * hi).sqrt();
    let mut sqrt_lambda = lambda.sqrt();
    let mut active: Vec<bool> = model.deltas().iter().zip(model.weights()).map(|(&d, &w)| w / d > lambda).collect();
    for _ in 0..model.len() {
        let (root_sum, delta_sum) = model
            .deltas()
            .iter()
            .zip(model.weights())
            .zip(&active)
            .filter(|(_, &a)| a)
            .fold((0.0, 0.0), |(r, s), ((&d, &w), _)| (r + (w * d).sqrt(), s + d));
        if root_sum == 0.0 {
            break;
        }
        sqrt_lambda = root_sum / (budget + delta_sum);
        let still: Vec<bool> = model
            .deltas()
            .iter()
            .zip(model.weights())
            .zip(&active)
            .map(|((&d, &w), &a)| a && (w * d).sqrt() / sqrt_lambda - d > 0.0)
            .collect();
        lambda = sqrt_lambda * sqrt_lambda;
        if still == active {
            break;
        }
        active = still;
    }

    let mut rates: Vec<f64> = model
        .deltas()
        .iter()
        .zip(model.weights())
        .map(|(&d, &w)| ((w * d).sqrt() / sqrt_lambda - d).max(0.0))
        .collect();
    // Put the rounding residual on the largest rate so the budget binds exactly.
    let sum: f64 = rates.iter().sum();
    if let Some(top) = rates.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *top = (*top + budget - sum).max(0.0);
    }
    let sum: f64 = rates.iter().sum();
    if (sum - budget).abs() > tol {
        return Err(invalid(format!("water-filling did not meet the budget: sum {sum} vs {budget}")));
    }
    let objective = freshness_objective(&rates, model)?;
    Ok(CrawlAllocation { rates, weights: model.weights().to_vec(), budget, objective, lambda: Some(lambda) })
}

/// Parameters of the estimate-then-reallocate loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub estimator: EstimatorSpec,
    pub rounds: usize,
    pub steps_per_round: usize,
    pub budget: f64,
    pub seed: u64,
    /// Range estimates are clamped to before optimisation; defaults to
    /// `[1e-6, 1e6] * budget / N`.
    #[serde(default)]
    pub clamp: Option<ClampRange>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    1e-9
}

/// One round of the loop: the rates that were crawled with and the estimates
/// the round ended with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub rates: Vec<f64>,
    /// Freshness of `rates` under the true model.
    pub objective: f64,
    /// Per-page estimates (clamped) that produced `rates`; `None` in round 0.
    pub estimates: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveOutcome {
    /// Round 0 is the uniform start `B / N`; round `r` holds the rates computed
    /// from the estimates at the end of crawl round `r`.
    pub rounds: Vec<RoundRecord>,
    /// Per-page estimate after every observation.
    pub trajectories: Vec<Vec<f64>>,
    /// Optimum under the true model.
    pub optimal: CrawlAllocation,
}

impl AdaptiveOutcome {
    pub fn final_rates(&self) -> &[f64] {
        &self.rounds.last().expect("round 0 always present").rates
    }

    /// `|p_i - p_i*| / p_i*` for each page with a positive optimal rate.
    pub fn relative_rate_gaps(&self) -> Vec<Option<f64>> {
        self.final_rates()
            .iter()
            .zip(&self.optimal.rates)
            .map(|(&p, &opt)| (opt > 0.0).then(|| (p - opt).abs() / opt))
            .collect()
    }
}

struct Page {
    sim: PageSimulator,
    estimator: Estimator,
    trajectory: Vec<f64>,
}

/// Runs the adaptive allocation loop against simulated pages whose true change
/// rates are `true_model`'s. Each page keeps one continuous change timeline
/// across rounds; accesses are regenerated at the current rate every round.
pub fn adaptive_loop(true_model: &PageModel, cfg: &AdaptiveConfig) -> Result<AdaptiveOutcome> {
    if cfg.rounds == 0 || cfg.steps_per_round == 0 {
        return Err(invalid("rounds and steps_per_round must be at least 1"));
    }
    ensure_positive("budget", cfg.budget)?;
    let n = true_model.len();
    let start = cfg.budget / n as f64;
    let clamp = cfg.clamp.unwrap_or_else(|| ClampRange::relative_to(start));
    let optimal = optimize_rates(true_model, cfg.budget, cfg.tol)?;

    let mut pages = true_model
        .deltas()
        .iter()
        .enumerate()
        .map(|(i, &delta)| {
            Ok(Page {
                sim: PageSimulator::new(delta, start, derive_seed(cfg.seed, &[i as u64]))?,
                estimator: Estimator::with_truth(&cfg.estimator, start, delta)?,
                trajectory: Vec::with_capacity(cfg.rounds * cfg.steps_per_round),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rates = vec![start; n];
    let mut rounds = vec![RoundRecord {
        round: 0,
        rates: rates.clone(),
        objective: freshness_objective(&rates, true_model)?,
        estimates: None,
    }];

    for round in 1..=cfg.rounds {
        pages.par_iter_mut().zip(rates.par_iter()).try_for_each(|(page, &p)| -> Result<()> {
            // A page allocated no bandwidth is not crawled this round.
            if p <= 0.0 {
                return Ok(());
            }
            page.sim.set_rate_p(p)?;
            page.estimator.set_rate_p(p)?;
            for _ in 0..cfg.steps_per_round {
                page.estimator.observe(page.sim.next_observation());
                if page.estimator.state().step as usize % cfg.steps_per_round == 0 {
                    page.estimator.refresh();
                }
                page.trajectory.push(page.estimator.estimate().unwrap_or(f64::NAN));
            }
            Ok(())
        })?;

        let estimates: Vec<f64> = pages
            .iter()
            .map(|pg| clamp.clamp(pg.estimator.estimate().unwrap_or(clamp.min)))
            .collect();
        let allocation = optimize_rates(&true_model.with_deltas(estimates.clone())?, cfg.budget, cfg.tol)?;
        rates = allocation.rates;
        rounds.push(RoundRecord {
            round,
            objective: freshness_objective(&rates, true_model)?,
            rates: rates.clone(),
            estimates: Some(estimates),
        });
    }

    Ok(AdaptiveOutcome { rounds, trajectories: pages.into_iter().map(|p| p.trajectory).collect(), optimal })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(d: &[f64], w: &[f64]) -> PageModel {
        PageModel::new(d.to_vec(), w.to_vec()).unwrap()
    }

    #[test]
    fn objective_values() {
        let m = model(&[1.0, 1.0], &[1.0, 1.0]);
        assert_eq!(freshness_objective(&[0.0, 0.0], &m).unwrap(), 0.0);
        assert_eq!(freshness_objective(&[1.0, 1.0], &m).unwrap(), 1.0);
        let one = model(&[2.0], &[3.0]);
        assert_eq!(freshness_objective(&[f64::INFINITY], &one).unwrap(), 3.0);
        assert!((freshness_objective(&[1e12], &one).unwrap() - 3.0).abs() < 1e-10);
        assert!(freshness_objective(&[1.0], &m).is_err());
        assert!(freshness_objective(&[-1.0, 1.0], &m).is_err());
    }

    #[test]
    fn model_validation() {
        assert!(PageModel::new(vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(PageModel::new(vec![0.0], vec![1.0]).is_err());
        assert!(PageModel::new(vec![1.0], vec![-1.0]).is_err());
        assert!(PageModel::new(vec![], vec![]).is_err());
    }

    #[test]
    fn single_page_takes_whole_budget() {
        for (d, w) in [(0.01, 1.0), (5.0, 0.2), (100.0, 7.0)] {
            let a = optimize_rates(&model(&[d], &[w]), 2.5, 1e-12).unwrap();
            assert!((a.rates[0] - 2.5).abs() < 1e-12, "{a:?}");
        }
    }

    #[test]
    fn identical_pages_split_evenly() {
        let a = optimize_rates(&model(&[0.7; 4], &[1.5; 4]), 2.0, 1e-12).unwrap();
        for r in &a.rates {
            assert!((r - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn unprofitable_page_is_dropped() {
        // w/delta of the second page is far below the multiplier.
        let a = optimize_rates(&model(&[0.1, 50.0], &[1.0, 1.0]), 0.5, 1e-12).unwrap();
        assert_eq!(a.rates[1], 0.0);
        assert!((a.rates[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_budget() {
        let m = model(&[1.0], &[1.0]);
        assert!(optimize_rates(&m, 0.0, 1e-9).is_err());
        assert!(optimize_rates(&m, 1.0, 0.0).is_err());
    }

    #[test]
    fn adaptive_rejects_zero_rounds() {
        let cfg = AdaptiveConfig {
            estimator: EstimatorSpec::Naive,
            rounds: 0,
            steps_per_round: 1,
            budget: 1.0,
            seed: 0,
            clamp: None,
            tol: 1e-9,
        };
        assert!(adaptive_loop(&model(&[1.0], &[1.0]), &cfg).is_err());
    }
}
