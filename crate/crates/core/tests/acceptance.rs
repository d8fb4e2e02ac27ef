//! End-to-end acceptance suite. Runs every criterion in sequence (timing
//! measurements must not compete with other tests), prints one PASS/FAIL line
//! each and exits non-zero if any fails.
//!
//! Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 3 14`.

use std::time::{Duration, Instant};

use crawlrate::allocator::{adaptive_loop, freshness_objective, optimize_rates, AdaptiveConfig, PageModel};
use crawlrate::cli::{bundled_config, parse_config, Scenario};
use crawlrate::estimators::{
    mean_field_h, mle_solve, mm_solve, sa_step, ClampRange, Estimator, EstimatorConfig, EstimatorSpec, EstimatorState,
    SolveStatus,
};
use crawlrate::harness::{rate_slope, run_replications, timing_probe, ExperimentConfig, TimingUnit};
use crawlrate::point_process::{qq_points, simulate_indicators, Observation};
use crawlrate::rng::{derive_seed, rng_from_seed};
use crawlrate::schedules::{classify_sam, SamRegime, SamSchedule, StepsizeSchedule};
use rand::Rng;
use rand_distr::{Distribution, Exp};

const SEED: u64 = 0x5EED_2020;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn poly(e: f64) -> StepsizeSchedule {
    StepsizeSchedule::polynomial(e).unwrap()
}

fn lln() -> EstimatorConfig {
    EstimatorConfig::new(EstimatorSpec::lln())
}

fn sa(eta: f64) -> EstimatorConfig {
    EstimatorConfig::new(EstimatorSpec::sa(poly(eta)))
}

fn sam(beta: f64, eta: f64) -> EstimatorConfig {
    EstimatorConfig::new(EstimatorSpec::sam(SamSchedule::polynomial(beta, eta, 1.0).unwrap()))
}

fn experiment(delta: f64, rate_p: f64, n_runs: usize, n_steps: usize, estimators: Vec<EstimatorConfig>) -> ExperimentConfig {
    ExperimentConfig { delta, rate_p, n_steps, n_runs, estimators, master_seed: SEED, slope_window: None }
}

fn within_budget(elapsed: Duration, limit_s: f64) -> (bool, String) {
    let s = elapsed.as_secs_f64();
    (s < limit_s, format!("{s:.2} s (limit {limit_s} s)"))
}

fn naive_bias() -> Outcome {
    let start = Instant::now();
    let cfg = experiment(5.0, 3.0, 100, 10_000, vec![EstimatorConfig::new(EstimatorSpec::Naive)]);
    let t = run_replications(&cfg).unwrap();
    let mean = t.mean_curve(0);
    let terminal = mean[mean.len() - 1];
    let closest = mean.iter().map(|m| (m - 5.0).abs()).fold(f64::INFINITY, f64::min);
    let (fast, time) = within_budget(start.elapsed(), 10.0);
    outcome(
        (terminal - 1.875).abs() <= 0.05 && closest >= 0.5 && fast,
        format!("terminal mean {terminal:.4} (1.875 +/- 0.05), closest approach to 5 is {closest:.3}, {time}"),
    )
}

fn consistency() -> Outcome {
    let start = Instant::now();
    let cfg = experiment(5.0, 3.0, 100, 10_000, vec![lln(), sa(0.75), sam(0.75, 1.3)]);
    let t = run_replications(&cfg).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for e in 0..3 {
        let mean = *t.mean_curve(e).last().unwrap();
        let rmse = *t.rmse_curve(e, 5.0).last().unwrap();
        pass &= (mean - 5.0).abs() <= 0.15 && rmse < 0.25;
        parts.push(format!("{} mean {mean:.4} rmse {rmse:.4}", t.labels()[e]));
    }
    let (fast, time) = within_budget(start.elapsed(), 30.0);
    outcome(pass && fast, format!("{}; {time}", parts.join(", ")))
}

fn slope_criterion(estimator: EstimatorConfig, target: f64) -> Outcome {
    let start = Instant::now();
    let cfg = experiment(5.0, 3.0, 500, 10_000, vec![estimator]);
    let t = run_replications(&cfg).unwrap();
    let fit = rate_slope(&t.mean_abs_error_curve(0, 5.0), 100, 10_000).unwrap();
    let (fast, time) = within_budget(start.elapsed(), 120.0);
    outcome(
        (fit.slope - target).abs() <= 0.15 && fast,
        format!("slope {:.4} (target {target} +/- 0.15, {} points), {time}", fit.slope, fit.points_used),
    )
}

fn sam_degeneration() -> Outcome {
    let sa_spec = EstimatorSpec::sa(poly(0.75));
    let sam_spec = EstimatorSpec::sam(SamSchedule::polynomial(0.75, 0.75, 1.0).unwrap());
    let mut mismatches = 0usize;
    for s in 0..10u64 {
        let stream = simulate_indicators(5.0, 3.0, 100_000, derive_seed(SEED, &[5, s])).unwrap();
        let mut a = Estimator::new(&sa_spec, 3.0).unwrap();
        let mut b = Estimator::new(&sam_spec, 3.0).unwrap();
        for &obs in stream.pairs() {
            a.observe(obs);
            b.observe(obs);
            if a.estimate().unwrap().to_bits() != b.estimate().unwrap().to_bits() {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} differing iterates over 10 seeds x 1e5 steps"))
}

fn low_frequency() -> Outcome {
    let start = Instant::now();
    let cfg = experiment(500.0, 3.0, 100, 5000, vec![lln(), sa(0.8), sam(0.5, 0.8)]);
    let t = run_replications(&cfg).unwrap();
    let r: Vec<f64> = (0..3).map(|e| *t.rmse_curve(e, 500.0).last().unwrap()).collect();
    let (fast, time) = within_budget(start.elapsed(), 60.0);
    outcome(
        r[2] < r[1] && r[0] < r[1] && fast,
        format!("terminal RMSE lln {:.2}, sa {:.2}, sam {:.2}; {time}", r[0], r[1], r[2]),
    )
}

fn solver_oracle() -> Outcome {
    let obs = |ind: &[bool]| ind.iter().map(|&changed| Observation { tau: 1.0, changed }).collect::<Vec<_>>();
    let range = ClampRange::new(1e-6, 1e6).unwrap();
    let mixed = obs(&[true, false]);
    let mle = mle_solve(&mixed, range, 1e-14).unwrap();
    let mm = mm_solve(&mixed, range, 1e-14).unwrap();
    let ln2 = 2f64.ln();
    let closed = (mle.estimate - ln2).abs() < 1e-8 && (mm.estimate - ln2).abs() < 1e-8;
    let ones = obs(&[true; 5]);
    let zeros = obs(&[false; 5]);
    let statuses = [
        mle_solve(&ones, range, 1e-10).unwrap(),
        mm_solve(&ones, range, 1e-10).unwrap(),
        mle_solve(&zeros, range, 1e-10).unwrap(),
        mm_solve(&zeros, range, 1e-10).unwrap(),
    ];
    let clamped = statuses[..2].iter().all(|r| r.status == SolveStatus::ClampedHigh && r.estimate == range.max)
        && statuses[2..].iter().all(|r| r.status == SolveStatus::NoSolutionClampedLow && r.estimate == range.min);
    outcome(
        closed && clamped,
        format!(
            "MLE {:.3e} and MM {:.3e} from ln 2; all-ones {:?}/{:?}, all-zeros {:?}/{:?}",
            (mle.estimate - ln2).abs(),
            (mm.estimate - ln2).abs(),
            statuses[0].status,
            statuses[1].status,
            statuses[2].status,
            statuses[3].status
        ),
    )
}

fn mle_agreement() -> Outcome {
    let start = Instant::now();
    let mle = EstimatorConfig::new(EstimatorSpec::mle(50));
    let cfg = experiment(5.0, 3.0, 20, 2000, vec![mle, lln()]);
    let t = run_replications(&cfg).unwrap();
    let m = *t.rmse_curve(0, 5.0).last().unwrap();
    let l = *t.rmse_curve(1, 5.0).last().unwrap();
    let (fast, time) = within_budget(start.elapsed(), 120.0);
    outcome((m - l).abs() < 0.15 && fast, format!("terminal RMSE mle {m:.4}, lln {l:.4}, gap {:.4}; {time}", (m - l).abs()))
}

fn drift_oracle() -> Outcome {
    let (delta, p, n) = (5.0, 3.0, 1_000_000);
    let stream = simulate_indicators(delta, p, n, derive_seed(SEED, &[9])).unwrap();
    let eta = 0.5;
    let mut pass = true;
    let mut parts = Vec::new();
    for y in [0.0, 2.0, 5.0, 10.0] {
        let (mut sum, mut sq) = (0.0, 0.0);
        for o in stream.pairs() {
            let next = sa_step(EstimatorState::new(y), o.changed, eta, p);
            let inc = (next.iterate - y) / eta;
            sum += inc;
            sq += inc * inc;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) * n as f64 / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt();
        let h = mean_field_h(y, p, delta);
        let z = (mean - h) / se;
        pass &= z.abs() <= 3.0;
        parts.push(format!("y={y}: {mean:.4} vs {h:.4} (z {z:+.2})"));
    }
    outcome(pass, parts.join(", "))
}

/// Euclidean projection onto `{x >= 0, sum x = b}`.
fn project_simplex(v: &[f64], b: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, c| c.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - b) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Projected gradient ascent with Armijo backtracking.
fn projected_gradient(model: &PageModel, budget: f64) -> f64 {
    let f = |p: &[f64]| freshness_objective(p, model).unwrap();
    let mut p = vec![budget / model.len() as f64; model.len()];
    let mut fp = f(&p);
    let mut step: f64 = 1.0;
    for _ in 0..100_000 {
        let g: Vec<f64> = p
            .iter()
            .zip(model.deltas().iter().zip(model.weights()))
            .map(|(&x, (&d, &w))| w * d / (x + d).powi(2))
            .collect();
        step = (step * 2.0).min(1e6);
        let (q, fq) = loop {
            let trial: Vec<f64> = p.iter().zip(&g).map(|(x, gi)| x + step * gi).collect();
            let q = project_simplex(&trial, budget);
            let fq = f(&q);
            let gain: f64 = g.iter().zip(q.iter().zip(&p)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if fq >= fp + 0.5 * gain - 1e-15 || step < 1e-14 {
                break (q, fq);
            }
            step *= 0.5;
        };
        let moved: f64 = q.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = q;
        fp = fq.max(fp);
        if moved < 1e-13 {
            break;
        }
    }
    fp
}

/// Best objective with every rate a multiple of `unit` and total at most `budget`.
fn grid_optimum(model: &PageModel, budget: f64, unit: f64) -> f64 {
    let m = (budget / unit).round() as usize;
    let mut best = vec![0.0f64; m + 1];
    for (&d, &w) in model.deltas().iter().zip(model.weights()) {
        let gain: Vec<f64> = (0..=m).map(|j| {
            let x = j as f64 * unit;
            w * x / (x + d)
        }).collect();
        let mut next = vec![f64::NEG_INFINITY; m + 1];
        for total in 0..=m {
            for j in 0..=total {
                next[total] = next[total].max(best[total - j] + gain[j]);
            }
        }
        best = next;
    }
    best.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

fn optimizer_oracle() -> Outcome {
    let mut rng = rng_from_seed(derive_seed(SEED, &[10]));
    let (mut worst_pg, mut worst_grid) = (0.0f64, f64::NEG_INFINITY);
    for _ in 0..100 {
        let n = rng.random_range(1..=5);
        let deltas: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..5.0)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
        let budget = rng.random_range(200..=1000) as f64 * 1e-3;
        let model = PageModel::new(deltas, weights).unwrap();
        let wf = optimize_rates(&model, budget, 1e-12).unwrap().objective;
        worst_pg = worst_pg.max((wf - projected_gradient(&model, budget)).abs());
        worst_grid = worst_grid.max(grid_optimum(&model, budget, 1e-3) - wf);
    }
    let sec5: Scenario = parse_config("sec5", bundled_config("sec5").unwrap()).unwrap();
    let alloc = optimize_rates(&sec5.model().unwrap(), sec5.budget, 1e-9).unwrap();
    let total: f64 = alloc.rates.iter().sum();
    outcome(
        worst_pg <= 1e-6 && worst_grid <= 1e-12 && (total - 5.0).abs() <= 1e-9,
        format!(
            "max |F_wf - F_pg| {worst_pg:.2e}, max F_grid - F_wf {worst_grid:.2e}, sec5 sum {total:.12}"
        ),
    )
}

fn adaptive_sanity() -> Outcome {
    let start = Instant::now();
    let sec5: Scenario = parse_config("sec5", bundled_config("sec5").unwrap()).unwrap();
    let model = sec5.model().unwrap();
    let direct = optimize_rates(&model, sec5.budget, sec5.tol).unwrap();
    let base = AdaptiveConfig {
        estimator: EstimatorSpec::Oracle,
        rounds: 40,
        steps_per_round: 50,
        budget: sec5.budget,
        seed: SEED,
        clamp: None,
        tol: sec5.tol,
    };
    let oracle = adaptive_loop(&model, &base).unwrap();
    let oracle_exact = oracle.rounds[1..].iter().all(|r| r.rates == direct.rates);

    let frequent: Vec<usize> = (0..model.len()).filter(|&i| model.weights()[i] == 2.0).collect();
    let mut gaps = Vec::new();
    for s in 0..20u64 {
        let cfg = AdaptiveConfig { estimator: EstimatorSpec::sa(poly(0.75)), seed: derive_seed(SEED, &[11, s]), ..base.clone() };
        let out = adaptive_loop(&model, &cfg).unwrap();
        let g = out.relative_rate_gaps();
        gaps.push(frequent.iter().map(|&i| g[i].unwrap()).sum::<f64>() / frequent.len() as f64);
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    outcome(
        oracle_exact && mean_gap < 0.25,
        format!(
            "oracle rounds equal direct optimum: {oracle_exact}; SA mean relative gap on frequent pages {:.2}% (limit 25%), {:.2} s",
            100.0 * mean_gap,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn qq_validation() -> Outcome {
    let exp = Exp::new(1.1098).unwrap();
    let mut rng = rng_from_seed(derive_seed(SEED, &[12]));
    let gaps: Vec<f64> = (0..4042).map(|_| exp.sample(&mut rng)).collect();
    let rate = gaps.len() as f64 / gaps.iter().sum::<f64>();
    let qq = qq_points(&gaps, rate).unwrap();
    let corr = qq.correlation().unwrap_or(0.0);
    let (slope, _) = qq.fit_line().unwrap_or((0.0, 0.0));
    outcome(corr > 0.99 && (slope - 1.0).abs() <= 0.05, format!("correlation {corr:.5}, slope {slope:.4}"))
}

fn stepsize_validator() -> Outcome {
    let cases = [
        (0.6, 1.2, SamRegime::OneTimescale),
        (0.75, 1.3, SamRegime::TwoTimescale),
        (0.5, 0.8, SamRegime::Conjecture),
        (0.4, 0.8, SamRegime::Conjecture),
        (0.75, 1.0, SamRegime::Invalid),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (b, e, want) in cases {
        let got = classify_sam(&poly(b), &poly(e), 1.0).regime;
        pass &= got == want;
        parts.push(format!("({b}, {e}) -> {got:?}"));
    }
    outcome(pass, parts.join(", "))
}

fn timing() -> Outcome {
    let online = vec![lln(), sa(0.75), sam(0.75, 1.3), EstimatorConfig::new(EstimatorSpec::Naive)];
    let samples = timing_probe(&online, &[1_000, 10_000, 100_000], 5.0, 3.0, SEED).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for e in &online {
        let t: Vec<f64> = samples.iter().filter(|s| s.label == e.label()).map(|s| s.nanos).collect();
        let ratio = t.iter().cloned().fold(0.0, f64::max) / t.iter().cloned().fold(f64::INFINITY, f64::min);
        pass &= ratio < 2.0;
        parts.push(format!("{} {:.1}-{:.1} ns/step", e.label(), t[0], t[2]));
    }
    let mle = timing_probe(&[EstimatorConfig::new(EstimatorSpec::mle(50))], &[1_000, 10_000, 100_000], 5.0, 3.0, SEED).unwrap();
    let solve: Vec<f64> = mle.iter().map(|s| s.nanos).collect();
    pass &= mle.iter().all(|s| s.unit == TimingUnit::PerSolve) && solve.windows(2).all(|w| w[0] < w[1]);
    parts.push(format!("mle full solve {:.2} / {:.2} / {:.2} ms", solve[0] / 1e6, solve[1] / 1e6, solve[2] / 1e6));
    outcome(pass, parts.join(", "))
}

fn main() {
    let criteria: Vec<(usize, &str, fn() -> Outcome)> = vec![
        (1, "naive bias", naive_bias),
        (2, "consistency", consistency),
        (3, "lln rate", || slope_criterion(lln(), -0.5)),
        (4, "sa rate", || slope_criterion(sa(0.75), -0.375)),
        (5, "sam degeneration", sam_degeneration),
        (6, "low-frequency ordering", low_frequency),
        (7, "mle/mm closed form", solver_oracle),
        (8, "mle agreement", mle_agreement),
        (9, "drift oracle", drift_oracle),
        (10, "optimizer oracle", optimizer_oracle),
        (11, "adaptive loop", adaptive_sanity),
        (12, "q-q validation", qq_validation),
        (13, "stepsize validator", stepsize_validator),
        (14, "timing", timing),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        ran += 1;
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("[{}] {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
