//! Command-line interface: argument parsing, config loading and output files.
//!
//! Exit codes are 0 on success, 1 on runtime or solver failures and 2 on
//! usage or configuration errors. Outputs go under `--out` and existing files
//! are never replaced unless `--force` is given. Every output echoes the seed
//! and the RNG algorithm.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::allocator::{adaptive_loop, optimize_rates, AdaptiveConfig, PageModel};
use crate::error::{invalid, Error, Result};
use crate::estimators::{ClampRange, Estimator, EstimatorConfig, EstimatorSpec};
use crate::harness::{run_experiment, timing_probe, ExperimentConfig, TimingUnit};
use crate::point_process::{
    empirical_change_rate, indicators_from_traces, ingest_trace, parse_timestamps, qq_points, sample_access_schedule_over,
    AccessSchedule, ChangeTrace, IngestedTrace, TraceFormat,
};
use crate::rng::RNG_ALGORITHM;

/// Configs shipped with the binary, addressable by name through `--config`.
pub const BUNDLED_CONFIGS: &[(&str, &str)] = &[
    ("fig2", include_str!("../configs/fig2.toml")),
    ("fig3", include_str!("../configs/fig3.toml")),
    ("fig4", include_str!("../configs/fig4.toml")),
    ("fig5b", include_str!("../configs/fig5b.toml")),
    ("fig5c", include_str!("../configs/fig5c.toml")),
    ("fig6", include_str!("../configs/fig6.toml")),
    ("sec5", include_str!("../configs/sec5.toml")),
];

pub fn bundled_config(name: &str) -> Option<&'static str> {
    BUNDLED_CONFIGS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Q-Q correlation below which a trace is flagged as a poor exponential fit.
pub const QQ_FIT_THRESHOLD: f64 = 0.99;

#[derive(Debug, Parser)]
#[command(name = "crawlrate", version, about = "Change-rate estimation and crawl-rate allocation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Config file path or bundled config name.
    #[arg(long, global = true)]
    pub config: Option<String>,
    /// Output directory, created if absent.
    #[arg(long, global = true, default_value = "crawlrate-out")]
    pub out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Replace existing output files.
    #[arg(long, global = true)]
    pub force: bool,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run replicated synthetic experiments (report JSON and per-curve CSV).
    Simulate,
    /// Run estimators on a change trace crawled by a simulated access process.
    Estimate(EstimateArgs),
    /// Parse and clean a trace file.
    Ingest(TraceArgs),
    /// Compare a trace's inter-event gaps with an exponential distribution.
    Qq(QqArgs),
    /// Optimal crawl rates for a scenario with known change rates.
    Optimize,
    /// Estimate-then-reallocate loop for a scenario.
    Adaptive,
    /// Per-step cost of each estimator as the history grows.
    Bench(BenchArgs),
    /// List the bundled configs, or print one.
    Configs { name: Option<String> },
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// Trace file, one timestamp per line.
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, default_value = "timestamps-v1")]
    pub trace_format: String,
    /// Seconds per time unit; 3600 expresses rates per hour.
    #[arg(long)]
    pub time_unit: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub trace: TraceArgs,
    /// Access rate p, in events per time unit.
    #[arg(long)]
    pub rate: Option<f64>,
    /// File of access times to use instead of a simulated schedule.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Comma-separated estimator kinds with default parameters.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct QqArgs {
    #[command(flatten)]
    pub trace: TraceArgs,
    /// Reference rate; defaults to the trace's empirical rate.
    #[arg(long)]
    pub rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![1_000usize, 10_000, 100_000])]
    pub checkpoints: Vec<usize>,
    #[arg(long, default_value_t = 5.0)]
    pub delta: f64,
    /// Access rate p.
    #[arg(long, default_value_t = 3.0)]
    pub rate: f64,
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
}

/// Settings for `estimate`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    #[serde(default)]
    pub rate_p: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub time_unit: Option<f64>,
    #[serde(default)]
    pub estimators: Option<Vec<EstimatorConfig>>,
}

/// Pages sharing a change rate and a weight. Either `delta` (per page) or
/// `total_delta` (split evenly) must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageGroup {
    pub count: usize,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub total_delta: Option<f64>,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

fn default_rounds() -> usize {
    40
}

fn default_steps() -> usize {
    50
}

fn default_tol() -> f64 {
    1e-9
}

/// Settings for `optimize` and `adaptive`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub budget: f64,
    pub groups: Vec<PageGroup>,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_steps")]
    pub steps_per_round: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub clamp: Option<ClampRange>,
    #[serde(default)]
    pub estimators: Vec<EstimatorConfig>,
}

impl Scenario {
    pub fn model(&self) -> Result<PageModel> {
        let mut deltas = Vec::new();
        let mut weights = Vec::new();
        for (i, g) in self.groups.iter().enumerate() {
            let delta = match (g.delta, g.total_delta) {
                (Some(d), None) => d,
                (None, Some(t)) if g.count > 0 => t / g.count as f64,
                _ => return Err(invalid(format!("group {i}: give exactly one of delta and total_delta"))),
            };
            deltas.extend(std::iter::repeat_n(delta, g.count));
            weights.extend(std::iter::repeat_n(g.weight, g.count));
        }
        PageModel::new(deltas, weights)
    }

    pub fn adaptive_config(&self, estimator: &EstimatorSpec) -> AdaptiveConfig {
        AdaptiveConfig {
            estimator: estimator.clone(),
            rounds: self.rounds,
            steps_per_round: self.steps_per_round,
            budget: self.budget,
            seed: self.seed,
            clamp: self.clamp,
            tol: self.tol,
        }
    }
}

/// A failed command, split by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Config(_) | Error::Parse { .. } => Failure::Usage(e.to_string()),
            Error::InsufficientData(_) | Error::Io(_) => Failure::Runtime(e.to_string()),
        }
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();

    let result = match cli.jobs {
        Some(0) => Err(Failure::Usage("--jobs must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(Failure::Runtime(format!("cannot start worker pool: {e}"))),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(written) => {
            for p in written {
                println!("wrote {}", p.display());
            }
            0
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> CmdResult<Vec<PathBuf>> {
    let mut out = Outputs::new(&cli.out, cli.force);
    match &cli.command {
        Command::Simulate => cmd_simulate(cli, &mut out)?,
        Command::Estimate(args) => cmd_estimate(cli, args, &mut out)?,
        Command::Ingest(args) => cmd_ingest(cli, args, &mut out)?,
        Command::Qq(args) => cmd_qq(cli, args, &mut out)?,
        Command::Optimize => cmd_optimize(cli, &mut out)?,
        Command::Adaptive => cmd_adaptive(cli, &mut out)?,
        Command::Bench(args) => cmd_bench(cli, args, &mut out)?,
        Command::Configs { name } => {
            cmd_configs(name.as_deref())?;
            return Ok(Vec::new());
        }
    }
    out.commit()
}

/// Files to write, checked together before anything is written.
struct Outputs {
    dir: PathBuf,
    force: bool,
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path, force: bool) -> Self {
        Self { dir: dir.to_path_buf(), force, files: Vec::new() }
    }

    fn add(&mut self, rel: impl AsRef<Path>, bytes: impl Into<Vec<u8>>) {
        self.files.push((self.dir.join(rel), bytes.into()));
    }

    fn add_json<T: Serialize>(&mut self, rel: &str, value: &T) -> CmdResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
        text.push('\n');
        self.add(rel, text);
        Ok(())
    }

    fn commit(self) -> CmdResult<Vec<PathBuf>> {
        if !self.force {
            if let Some((p, _)) = self.files.iter().find(|(p, _)| p.exists()) {
                return Err(Failure::Usage(format!("{} exists; pass --force to overwrite", p.display())));
            }
        }
        let mut written = Vec::with_capacity(self.files.len());
        for (path, bytes) in self.files {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Failure::Runtime(format!("{}: {e}", parent.display())))?;
            }
            fs::write(&path, bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            written.push(path);
        }
        Ok(written)
    }
}

#[derive(Debug, Clone, Serialize)]
struct Meta {
    command: &'static str,
    version: &'static str,
    seed: Option<u64>,
    rng_algorithm: &'static str,
}

impl Meta {
    fn new(command: &'static str, seed: Option<u64>) -> Self {
        Self { command, version: env!("CARGO_PKG_VERSION"), seed, rng_algorithm: RNG_ALGORITHM }
    }

    fn csv_comment(&self) -> String {
        let seed = self.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        format!("# crawlrate {} {} seed={seed} rng={}\n", self.version, self.command, self.rng_algorithm)
    }
}

fn load_config_text(cli: &Cli) -> CmdResult<(String, String)> {
    let name = cli.config.as_deref().ok_or_else(|| Failure::Usage("this command needs --config".into()))?;
    read_config(name)
}

/// Resolves `name` as a file path first, then as a bundled config.
fn read_config(name: &str) -> CmdResult<(String, String)> {
    let path = Path::new(name);
    if path.exists() {
        let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{name}: {e}")))?;
        return Ok((name.to_string(), text));
    }
    bundled_config(name).map(|t| (name.to_string(), t.to_string())).ok_or_else(|| {
        let known: Vec<&str> = BUNDLED_CONFIGS.iter().map(|(n, _)| *n).collect();
        Failure::Usage(format!("config {name:?} is neither a file nor a bundled config ({})", known.join(", ")))
    })
}

/// Parses a TOML config into `T`.
pub fn parse_config<T: for<'de> Deserialize<'de>>(name: &str, text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{name}: {e}")))
}

fn spec_from_kind(kind: &str) -> CmdResult<EstimatorConfig> {
    serde_json::from_value(json!({ "kind": kind.trim().to_lowercase() }))
        .map_err(|_| Failure::Usage(format!("unknown estimator kind {kind:?}")))
}

fn estimators_from_kinds(kinds: &[String]) -> CmdResult<Vec<EstimatorConfig>> {
    kinds.iter().filter(|k| !k.trim().is_empty()).map(|k| spec_from_kind(k)).collect()
}

fn sanitize(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

fn cmd_simulate(cli: &Cli, out: &mut Outputs) -> CmdResult<()> {
    let (name, text) = load_config_text(cli)?;
    let mut cfg: ExperimentConfig = parse_config(&name, &text)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    log::info!("{name}: {} runs x {} steps, {} estimators", cfg.n_runs, cfg.n_steps, cfg.estimators.len());
    let report = run_experiment(&cfg)?;
    let meta = Meta::new("simulate", Some(cfg.master_seed));

    println!("{:<12} {:>12} {:>12} {:>10} {:>12}", "estimator", "mean(k=n)", "rmse(k=n)", "slope", "ns/step");
    for s in &report.estimators {
        println!(
            "{:<12} {:>12.4} {:>12.4} {:>10} {:>12.1}",
            s.label,
            s.terminal_mean,
            s.terminal_rmse,
            fmt_opt(s.rate_slope),
            s.wall_time_per_step_ns
        );
    }

    out.add_json("report.json", &json!({ "meta": meta, "report": report }))?;
    match cli.format.unwrap_or(Format::Csv) {
        Format::Json => out.add_json("curves.json", &json!({ "meta": meta, "curves": report.curves }))?,
        Format::Csv => {
            for c in &report.curves {
                let mut series: Vec<(&str, &[f64])> = vec![
                    ("mean", &c.mean),
                    ("rmse", &c.rmse),
                    ("mean_abs_error", &c.mean_abs_error),
                    ("single_run", &c.single_run),
                ];
                if let (Some(lo), Some(hi)) = (&c.ci_lower, &c.ci_upper) {
                    series.push(("ci_lower", lo));
                    series.push(("ci_upper", hi));
                }
                for (metric, values) in series {
                    let mut csv = meta.csv_comment();
                    csv.push_str("k,value\n");
                    for (i, v) in values.iter().enumerate() {
                        let _ = writeln!(csv, "{},{}", i + 1, v);
                    }
                    out.add(format!("curves/{}/{metric}.csv", sanitize(&c.label)), csv);
                }
            }
        }
    }
    Ok(())
}

fn load_trace(args: &TraceArgs, time_unit: Option<f64>) -> CmdResult<IngestedTrace> {
    let format: TraceFormat = args.trace_format.parse()?;
    if !args.trace.exists() {
        return Err(Failure::Usage(format!("trace file {} not found", args.trace.display())));
    }
    let mut ingested = ingest_trace(&args.trace, format)?;
    if let Some(unit) = args.time_unit.or(time_unit) {
        ingested.trace = ingested.trace.rescaled(unit)?;
    }
    Ok(ingested)
}

fn load_schedule(path: &Path, time_unit: Option<f64>, rate: Option<f64>, origin: f64) -> CmdResult<AccessSchedule> {
    let file = fs::File::open(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut times = parse_timestamps(file)?.trace;
    if let Some(unit) = time_unit {
        times = times.rescaled(unit)?;
    }
    let mut t: Vec<f64> = times.events().iter().map(|x| x - origin).filter(|x| *x > 0.0).collect();
    t.insert(0, 0.0);
    let rate = match rate {
        Some(r) => r,
        None if t.len() > 1 => (t.len() - 1) as f64 / t[t.len() - 1],
        None => return Err(Error::InsufficientData("access schedule has no accesses after the first change".into()).into()),
    };
    Ok(AccessSchedule::new(t, rate)?)
}

fn cmd_estimate(cli: &Cli, args: &EstimateArgs, out: &mut Outputs) -> CmdResult<()> {
    let cfg: EstimateConfig = match &cli.config {
        Some(name) => {
            let (name, text) = read_config(name)?;
            parse_config(&name, &text)?
        }
        None => EstimateConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let estimators = match (&args.estimators, &cfg.estimators) {
        (Some(kinds), _) => estimators_from_kinds(kinds)?,
        (None, Some(list)) => list.clone(),
        (None, None) => estimators_from_kinds(&["lln", "sa", "sam", "naive", "mle", "mm"].map(String::from))?,
    };
    for e in &estimators {
        e.spec.validate()?;
        if matches!(e.spec, EstimatorSpec::Oracle) {
            return Err(Failure::Usage("the oracle estimator needs a known change rate; not available on traces".into()));
        }
    }

    let time_unit = args.trace.time_unit.or(cfg.time_unit);
    let ingested = load_trace(&args.trace, time_unit)?;
    let summary = empirical_change_rate(&ingested.trace)?;
    let origin = ingested.trace.events()[0];
    let trace: ChangeTrace = ingested.trace.relative_to_first();
    let schedule = match &args.schedule {
        Some(path) => load_schedule(path, time_unit, args.rate.or(cfg.rate_p), origin)?,
        None => {
            let rate = args
                .rate
                .or(cfg.rate_p)
                .ok_or_else(|| Failure::Usage("give the access rate with --rate or rate_p in the config".into()))?;
            sample_access_schedule_over(rate, trace.horizon(), seed)?
        }
    };
    let stream = indicators_from_traces(&trace, &schedule)?;
    println!(
        "trace: {} events over {:.4} (rate {:.4}); {} accesses at p = {}, {} detections",
        summary.events,
        summary.span,
        summary.rate,
        stream.len(),
        stream.rate_p(),
        stream.detections()
    );
    if estimators.is_empty() {
        log::warn!("no estimators selected; nothing to do");
        eprintln!("warning: no estimators selected; nothing written");
        return Ok(());
    }

    let meta = Meta::new("estimate", Some(seed));
    let format = cli.format.unwrap_or(Format::Json);
    let mut lines = match format {
        Format::Json => String::new(),
        Format::Csv => meta.csv_comment() + "k,estimator,estimate\n",
    };
    let mut finals = Vec::new();
    for ec in &estimators {
        let label = ec.label();
        let mut est = Estimator::new(&ec.spec, stream.rate_p())?;
        for (i, &obs) in stream.pairs().iter().enumerate() {
            est.observe(obs);
            let k = i + 1;
            let value = est.estimate();
            match format {
                Format::Json => {
                    let line = json!({ "k": k, "estimate": value, "estimator": label, "seed": seed });
                    let _ = writeln!(lines, "{line}");
                }
                Format::Csv => {
                    let _ = writeln!(lines, "{k},{label},{}", value.map_or(String::new(), |v| v.to_string()));
                }
            }
        }
        if ec.spec.is_offline() {
            est.refresh();
        }
        println!("{label:<12} {}", fmt_opt(est.estimate()));
        finals.push(json!({ "estimator": label, "spec": ec, "final_estimate": est.estimate(), "last_solve": est.last_report() }));
    }
    let name = match format {
        Format::Json => "trajectories.jsonl",
        Format::Csv => "trajectories.csv",
    };
    out.add(name, lines);
    out.add_json(
        "run.json",
        &json!({
            "meta": meta,
            "trace": { "path": args.trace.trace, "events": summary.events, "span": summary.span, "empirical_rate": summary.rate,
                       "time_unit": time_unit, "warnings": ingested.warnings },
            "rate_p": stream.rate_p(),
            "n_steps": stream.len(),
            "detections": stream.detections(),
            "estimators": finals,
        }),
    )?;
    Ok(())
}

fn cmd_ingest(cli: &Cli, args: &TraceArgs, out: &mut Outputs) -> CmdResult<()> {
    let ingested = load_trace(args, None)?;
    let rate = empirical_change_rate(&ingested.trace).ok();
    println!("{} events, span {:.4}, empirical rate {}", ingested.count(), ingested.span(), fmt_opt(rate.map(|r| r.rate)));
    for w in &ingested.warnings {
        eprintln!("warning: {w}");
    }
    let meta = Meta::new("ingest", cli.seed);
    out.add_json(
        "ingest.json",
        &json!({
            "meta": meta,
            "source": args.trace,
            "events": ingested.count(),
            "span": ingested.span(),
            "time_unit": args.time_unit,
            "duplicates_dropped": ingested.duplicates_dropped,
            "was_unsorted": ingested.was_unsorted,
            "warnings": ingested.warnings,
            "change_rate": rate,
        }),
    )?;
    let mut text = meta.csv_comment();
    for t in ingested.trace.events() {
        let _ = writeln!(text, "{t}");
    }
    out.add("trace.txt", text);
    Ok(())
}

fn cmd_qq(cli: &Cli, args: &QqArgs, out: &mut Outputs) -> CmdResult<()> {
    let ingested = load_trace(&args.trace, None)?;
    let summary = empirical_change_rate(&ingested.trace)?;
    let rate = args.rate.unwrap_or(summary.rate);
    let qq = qq_points(&ingested.trace.gaps(), rate)?;
    let correlation = qq.correlation();
    let fit = qq.fit_line();
    let poor_fit = correlation.is_none_or(|c| c < QQ_FIT_THRESHOLD);
    println!("reference rate {rate:.6} (empirical {:.6}), {} quantile pairs", summary.rate, qq.points.len());
    println!("correlation {}, slope {}", fmt_opt(correlation), fmt_opt(fit.map(|f| f.0)));
    if poor_fit {
        eprintln!("warning: gaps do not look exponential (correlation below {QQ_FIT_THRESHOLD})");
    }
    let meta = Meta::new("qq", cli.seed);
    match cli.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut csv = meta.csv_comment();
            let _ = writeln!(
                csv,
                "# reference_rate={rate} rate_overridden={} correlation={} slope={} intercept={} poor_fit={poor_fit}",
                args.rate.is_some(),
                fmt_opt(correlation),
                fmt_opt(fit.map(|f| f.0)),
                fmt_opt(fit.map(|f| f.1)),
            );
            csv.push_str("empirical,theoretical\n");
            for (e, t) in &qq.points {
                let _ = writeln!(csv, "{e},{t}");
            }
            out.add("qq.csv", csv);
        }
        Format::Json => out.add_json(
            "qq.json",
            &json!({
                "meta": meta,
                "reference_rate": rate,
                "rate_overridden": args.rate.is_some(),
                "empirical_rate": summary.rate,
                "correlation": correlation,
                "slope": fit.map(|f| f.0),
                "intercept": fit.map(|f| f.1),
                "poor_fit": poor_fit,
                "points": qq.points,
            }),
        )?,
    }
    Ok(())
}

fn load_scenario(cli: &Cli) -> CmdResult<Scenario> {
    let (name, text) = load_config_text(cli)?;
    let mut scenario: Scenario = parse_config(&name, &text)?;
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn cmd_optimize(cli: &Cli, out: &mut Outputs) -> CmdResult<()> {
    let scenario = load_scenario(cli)?;
    let model = scenario.model()?;
    let alloc = optimize_rates(&model, scenario.budget, scenario.tol).map_err(|e| match e {
        Error::InvalidArgument(m) => Failure::Usage(m),
        other => Failure::Runtime(other.to_string()),
    })?;
    println!("N = {}, budget {}, objective {:.6}", model.len(), scenario.budget, alloc.objective);
    let meta = Meta::new("optimize", Some(scenario.seed));
    match cli.format.unwrap_or(Format::Json) {
        Format::Json => out.add_json(
            "allocation.json",
            &json!({ "meta": meta, "deltas": model.deltas(), "allocation": alloc, "round": 0 }),
        )?,
        Format::Csv => {
            let mut csv = meta.csv_comment();
            csv.push_str("page,delta,weight,rate\n");
            for (i, ((d, w), r)) in model.deltas().iter().zip(model.weights()).zip(&alloc.rates).enumerate() {
                let _ = writeln!(csv, "{i},{d},{w},{r}");
            }
            out.add("allocation.csv", csv);
        }
    }
    Ok(())
}

fn cmd_adaptive(cli: &Cli, out: &mut Outputs) -> CmdResult<()> {
    let scenario = load_scenario(cli)?;
    let model = scenario.model()?;
    let estimators = if scenario.estimators.is_empty() {
        log::warn!("scenario lists no estimators; using sa");
        vec![EstimatorConfig::new(EstimatorSpec::sa(crate::schedules::StepsizeSchedule::polynomial(0.75)?))]
    } else {
        scenario.estimators.clone()
    };
    let meta = Meta::new("adaptive", Some(scenario.seed));
    let mut runs = Vec::new();
    let mut csv = meta.csv_comment() + "estimator,round,page,rate,estimate,objective\n";
    for ec in &estimators {
        let outcome = adaptive_loop(&model, &scenario.adaptive_config(&ec.spec))?;
        let last = outcome.rounds.last().expect("round 0 always present");
        println!(
            "{:<12} final objective {:.6} (optimum {:.6})",
            ec.label(),
            last.objective,
            outcome.optimal.objective
        );
        for r in &outcome.rounds {
            for (i, rate) in r.rates.iter().enumerate() {
                let est = r.estimates.as_ref().map_or(String::new(), |e| e[i].to_string());
                let _ = writeln!(csv, "{},{},{i},{rate},{est},{}", ec.label(), r.round, r.objective);
            }
        }
        runs.push(json!({
            "estimator": ec.label(),
            "spec": ec,
            "rounds": outcome.rounds,
            "relative_rate_gaps": outcome.relative_rate_gaps(),
            "optimal": outcome.optimal,
        }));
    }
    match cli.format.unwrap_or(Format::Json) {
        Format::Json => out.add_json("adaptive.json", &json!({ "meta": meta, "scenario": scenario, "runs": runs }))?,
        Format::Csv => out.add("adaptive.csv", csv),
    }
    Ok(())
}

fn cmd_bench(cli: &Cli, args: &BenchArgs, out: &mut Outputs) -> CmdResult<()> {
    let estimators = match &args.estimators {
        Some(kinds) => estimators_from_kinds(kinds)?,
        None => estimators_from_kinds(&["lln", "sa", "sam", "naive", "mle"].map(String::from))?,
    };
    let seed = cli.seed.unwrap_or(0);
    let samples = timing_probe(&estimators, &args.checkpoints, args.delta, args.rate, seed)?;
    println!("{:<12} {:>10} {:>14} unit", "estimator", "k", "nanoseconds");
    for s in &samples {
        let unit = match s.unit {
            TimingUnit::PerStep => "per step",
            TimingUnit::PerSolve => "per full solve",
        };
        println!("{:<12} {:>10} {:>14.1} {unit}", s.label, s.k, s.nanos);
    }
    let meta = Meta::new("bench", Some(seed));
    match cli.format.unwrap_or(Format::Json) {
        Format::Json => out.add_json(
            "bench.json",
            &json!({ "meta": meta, "delta": args.delta, "rate_p": args.rate, "samples": samples }),
        )?,
        Format::Csv => {
            let mut csv = meta.csv_comment() + "estimator,k,unit,nanos\n";
            for s in &samples {
                let unit = serde_json::to_value(s.unit).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                let _ = writeln!(csv, "{},{},{unit},{}", s.label, s.k, s.nanos);
            }
            out.add("bench.csv", csv);
        }
    }
    Ok(())
}

fn cmd_configs(name: Option<&str>) -> CmdResult<()> {
    match name {
        None => {
            for (n, text) in BUNDLED_CONFIGS {
                let first = text.lines().next().unwrap_or("").trim_start_matches('#').trim();
                println!("{n:<8} {first}");
            }
        }
        Some(n) => {
            let text = bundled_config(n).ok_or_else(|| Failure::Usage(format!("no bundled config named {n:?}")))?;
            print!("{text}");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse() {
        for name in ["fig2", "fig3", "fig4", "fig6"] {
            let cfg: ExperimentConfig = parse_config(name, bundled_config(name).unwrap()).unwrap();
            cfg.validate().unwrap();
        }
        for name in ["fig5b", "fig5c"] {
            let cfg: EstimateConfig = parse_config(name, bundled_config(name).unwrap()).unwrap();
            assert!(cfg.rate_p.is_some());
        }
        let sec5: Scenario = parse_config("sec5", bundled_config("sec5").unwrap()).unwrap();
        let model = sec5.model().unwrap();
        assert_eq!(model.len(), 50);
        assert!((model.deltas().iter().sum::<f64>() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn figure_settings() {
        let fig2: ExperimentConfig = parse_config("fig2", bundled_config("fig2").unwrap()).unwrap();
        assert_eq!((fig2.delta, fig2.rate_p, fig2.n_runs), (5.0, 3.0, 100));
        let fig3: ExperimentConfig = parse_config("fig3", bundled_config("fig3").unwrap()).unwrap();
        assert_eq!((fig3.delta, fig3.rate_p), (500.0, 3.0));
        let fig4: ExperimentConfig = parse_config("fig4", bundled_config("fig4").unwrap()).unwrap();
        assert_eq!((fig4.delta, fig4.rate_p), (500.0, 50.0));
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let err = parse_config::<Scenario>("x", "budget = 1.0\ngroups = []\nbogus = 3\n").unwrap_err();
        assert!(matches!(Failure::from(err), Failure::Usage(_)));
    }

    #[test]
    fn groups_need_one_rate_form() {
        let s: Scenario = parse_config("x", "budget = 1.0\n[[groups]]\ncount = 2\n").unwrap();
        assert!(s.model().is_err());
        let s: Scenario = parse_config("x", "budget = 1.0\n[[groups]]\ncount = 2\ndelta = 1.0\ntotal_delta = 2.0\n").unwrap();
        assert!(s.model().is_err());
    }

    #[test]
    fn kinds_map_to_default_specs() {
        let e = estimators_from_kinds(&["SA".into(), "mle".into()]).unwrap();
        assert_eq!(e[0].spec, EstimatorSpec::sa(crate::schedules::StepsizeSchedule::polynomial(0.75).unwrap()));
        assert_eq!(e[1].spec, EstimatorSpec::mle(50));
        assert!(spec_from_kind("bogus").is_err());
    }

    #[test]
    fn sanitized_labels() {
        assert_eq!(sanitize("sam b=0.6/η"), "sam_b_0.6__");
    }
}
