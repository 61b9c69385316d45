//! Command-line front end. Every subcommand writes its CSV tables, a
//! `<name>_summary.json` with pass flags and a `<name>_manifest.json` with the
//! reproducibility metadata into `--out-dir`.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 for usage
//! and configuration errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::entropy::{self, FiniteMetricSpace, FunctionClass, Metric, Profile, TailFunctional};
use crate::error::{Error, Result};
use crate::montecarlo::{self, ExperimentConfig, ExperimentData};
use crate::noise::{self, Grid, RngStream};
use crate::occupation::BaseFunction;
use crate::solver;
use crate::spectral::{CovarianceMeasure, DalangProfile};

/// Environment variable that overrides the master seed.
pub const SEED_ENV: &str = "SHECLT_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "sheclt",
    version,
    about = "Stochastic heat equation simulation and occupation-field limit checks",
    arg_required_else_help = true
)]
struct Cli {
    /// Directory for CSV, summary and manifest files.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for Monte Carlo (defaults to the config, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate Υ(λ) and its inverse for a covariance family.
    Bounds(BoundsArgs),
    /// Compare synthesized noise covariances with the grid covariance.
    NoiseCheck(NoiseArgs),
    /// Solve the equation and report marginal statistics.
    Solve(SolveArgs),
    /// Variance, normality, covariance, moment and tail checks.
    Clt(ExperimentArgs),
    /// Characteristic-function gaps for disjoint test functions.
    Independence(ExperimentArgs),
    /// Brownian finite-dimensional distributions of box-indexed sums.
    Fdd(ExperimentArgs),
    /// Tail-probability bound checks.
    Tails(ExperimentArgs),
    /// Covering numbers, chains and chaining bounds.
    Entropy(EntropyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Dirac,
    Gaussian,
    UniformBox,
    Exponential,
}

#[derive(Debug, Args)]
struct CovarianceArgs {
    #[arg(long, value_enum, default_value = "dirac")]
    kind: Kind,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    mass: f64,
    /// Scale, half-width or rate, depending on the kind.
    #[arg(long, default_value_t = 1.0)]
    param: f64,
}

impl CovarianceArgs {
    fn measure(&self) -> Result<CovarianceMeasure> {
        match self.kind {
            Kind::Dirac => CovarianceMeasure::dirac(self.d, self.mass),
            Kind::Gaussian => CovarianceMeasure::gaussian(self.d, self.mass, self.param),
            Kind::UniformBox => CovarianceMeasure::uniform_box(self.d, self.mass, self.param),
            Kind::Exponential => CovarianceMeasure::exponential(self.d, self.mass, self.param),
        }
    }
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[command(flatten)]
    covariance: CovarianceArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    lambda: Vec<f64>,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    #[command(flatten)]
    covariance: CovarianceArgs,
    #[arg(long, default_value_t = 0.125)]
    dx: f64,
    #[arg(long, default_value_t = 16.0)]
    length: f64,
    /// Defaults to the stability limit.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 400)]
    slices: usize,
    #[arg(long, default_value_t = 4)]
    max_lag: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// TOML or JSON experiment config; the white-noise benchmark when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Number of fields to write.
    #[arg(long, default_value_t = 1)]
    fields: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClassArg {
    Line,
    Brownian,
    Box,
    Convolution,
    Shift,
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckArg {
    Sandwich,
    Chain,
    Bound,
    Exponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    Ramp,
    Tanh,
}

#[derive(Debug, Args)]
struct EntropyArgs {
    #[arg(long, value_enum)]
    class: ClassArg,
    #[arg(long, value_enum)]
    check: CheckArg,
    #[arg(long, value_delimiter = ',', required = true)]
    r_grid: Vec<f64>,
    /// Points of a line or Brownian space, or grid points per parameter axis.
    #[arg(long, default_value_t = 16)]
    points: usize,
    #[arg(long, default_value_t = 1.0)]
    m: f64,
    #[arg(long, default_value_t = 1.0)]
    n: f64,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, value_enum, default_value = "ramp")]
    profile: ProfileArg,
    /// Expected covering exponent for `--check exponent`.
    #[arg(long, allow_negative_numbers = true)]
    expect: Option<f64>,
    #[arg(long, default_value_t = 0.3)]
    tolerance: f64,
    /// Monte Carlo replicas for `--check bound`.
    #[arg(long, default_value_t = 1000)]
    replicas: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Files and pass flags produced by one subcommand.
struct Outcome {
    parameters: Value,
    seed: Option<u64>,
    files: Vec<(String, Vec<u8>)>,
    checks: BTreeMap<String, bool>,
    details: Value,
}

/// `{:.16e}`: 17 significant digits, identical bytes on every platform.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn config_hash(parameters: &Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(parameters).expect("Value serializes")))
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| Error::Config {
            key: SEED_ENV.into(),
            message: format!("`{s}` is not an unsigned integer"),
        }),
        Err(_) => Ok(None),
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let name = subcommand_name(&cli.command);
    let start = Instant::now();
    let outcome = match dispatch(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("sheclt {name}: {e}");
            return error_code(&e);
        }
    };
    match write_outputs(&cli.out_dir, name, &outcome, start.elapsed().as_secs_f64()) {
        Ok(pass) => {
            for (k, v) in &outcome.checks {
                println!("{name}: {k} {}", if *v { "pass" } else { "FAIL" });
            }
            if pass {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("sheclt {name}: {e}");
            2
        }
    }
}

fn error_code(e: &Error) -> i32 {
    match e {
        Error::SolverBlowup { .. }
        | Error::NonConvergence { .. }
        | Error::DegenerateVariance(_)
        | Error::ConditionNotApplicable(_) => 1,
        _ => 2,
    }
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Bounds(_) => "bounds",
        Command::NoiseCheck(_) => "noise-check",
        Command::Solve(_) => "solve",
        Command::Clt(_) => "clt",
        Command::Independence(_) => "independence",
        Command::Fdd(_) => "fdd",
        Command::Tails(_) => "tails",
        Command::Entropy(_) => "entropy",
    }
}

fn write_outputs(dir: &Path, name: &str, o: &Outcome, seconds: f64) -> Result<bool> {
    std::fs::create_dir_all(dir)?;
    let hash = config_hash(&o.parameters);
    let mut listed = Vec::new();
    for (file, bytes) in &o.files {
        std::fs::write(dir.join(file), bytes)?;
        listed.push(file.clone());
    }
    let pass = o.checks.values().all(|v| *v);
    let summary_name = format!("{name}_summary.json");
    let manifest_name = format!("{name}_manifest.json");
    let summary = json!({
        "subcommand": name,
        "config_hash": hash,
        "manifest": manifest_name,
        "pass": pass,
        "checks": o.checks,
        "details": o.details,
    });
    std::fs::write(dir.join(&summary_name), serde_json::to_vec_pretty(&summary)?)?;
    listed.push(summary_name);
    let manifest = json!({
        "config_hash": hash,
        "seed": o.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": name,
        "parameters": o.parameters,
        "wall_clock_seconds": seconds,
        "outputs": listed,
    });
    std::fs::write(dir.join(manifest_name), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(pass)
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Bounds(a) => bounds(a),
        Command::NoiseCheck(a) => noise_check(a),
        Command::Solve(a) => solve(a),
        Command::Clt(a) => clt(&experiment(a, cli.threads)?),
        Command::Independence(a) => independence(&experiment(a, cli.threads)?),
        Command::Fdd(a) => fdd(&experiment(a, cli.threads)?),
        Command::Tails(a) => tails(&experiment(a, cli.threads)?),
        Command::Entropy(a) => entropy_cmd(a),
    }
}

/// Loads the config and applies flag, then environment, overrides.
fn load_config(a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::benchmark(),
    };
    if let Some(r) = a.replicas {
        cfg.replicas = r;
    }
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn experiment(a: &ExperimentArgs, threads: Option<usize>) -> Result<ExperimentData> {
    let cfg = load_config(a)?;
    match threads.or(cfg.threads) {
        Some(k) => montecarlo::run_experiment_with_threads(&cfg, k),
        None => montecarlo::run_experiment(&cfg),
    }
}

fn base_outcome(data: &ExperimentData) -> Result<Outcome> {
    Ok(Outcome {
        parameters: serde_json::to_value(&data.config)?,
        seed: Some(data.config.seed),
        files: Vec::new(),
        checks: BTreeMap::new(),
        details: json!({ "warnings": data.warnings, "underpowered": data.underpowered }),
    })
}

fn bounds(a: &BoundsArgs) -> Result<Outcome> {
    let f = a.covariance.measure()?;
    let profile = DalangProfile::new(f)?;
    let mut rows = Vec::new();
    let mut roundtrip = true;
    for &lambda in &a.lambda {
        let ups = profile.upsilon(lambda)?;
        let back = profile.lambda_of(ups)?;
        roundtrip &= (back - lambda).abs() <= 1e-8 * lambda.max(1.0);
        rows.push(vec![
            f.name().to_string(),
            f.dimension.to_string(),
            fmt_f64(f.mass),
            fmt_f64(lambda),
            fmt_f64(ups),
            fmt_f64(back),
        ]);
    }
    Ok(Outcome {
        parameters: json!({ "covariance": f, "lambda": a.lambda }),
        seed: None,
        files: vec![(
            "bounds.csv".into(),
            csv_bytes(&["kind", "d", "mass", "lambda", "upsilon", "lambda_of_upsilon"], &rows)?,
        )],
        checks: BTreeMap::from([("inverse_roundtrip".to_string(), roundtrip)]),
        details: Value::Null,
    })
}

fn noise_check(a: &NoiseArgs) -> Result<Outcome> {
    let f = a.covariance.measure()?;
    let n = (a.length / a.dx).round() as usize;
    let grid = match a.dt {
        Some(dt) => Grid::new(f.dimension, a.length, n, dt)?,
        None => Grid::with_max_dt(f.dimension, a.length, n)?,
    };
    let seed = env_seed()?.unwrap_or(a.seed);
    let weights = noise::spectral_weights(&grid, &f)?;
    let slices: Vec<_> = (0..a.slices as u64)
        .map(|k| noise::sample_noise_slice(&weights, grid.dt, RngStream::new(seed, 0, 0, k)))
        .collect();
    let cov = noise::empirical_noise_covariance(&grid, &slices, a.max_lag)?;
    let expected = weights.grid_covariance();
    let mut rows = Vec::new();
    let (mut spatial_ok, mut temporal_ok) = (true, true);
    for (k, &lag) in cov.lags.iter().enumerate() {
        let want = grid.dt * expected[grid.shift(0, 0, lag as isize)];
        spatial_ok &= (cov.spatial[k] - want).abs() <= 4.0 * cov.spatial_se[k] + 1e-12;
        temporal_ok &= cov.cross_time[k].abs() <= 4.0 * cov.cross_time_se[k] + 1e-12;
        rows.push(vec![
            lag.to_string(),
            fmt_f64(cov.spatial[k]),
            fmt_f64(cov.spatial_se[k]),
            fmt_f64(want),
            fmt_f64(cov.cross_time[k]),
            fmt_f64(cov.cross_time_se[k]),
        ]);
    }
    Ok(Outcome {
        parameters: json!({ "covariance": f, "grid": grid, "slices": a.slices, "max_lag": a.max_lag, "seed": seed }),
        seed: Some(seed),
        files: vec![(
            "noise_covariance.csv".into(),
            csv_bytes(&["lag", "spatial", "spatial_se", "expected", "cross_time", "cross_time_se"], &rows)?,
        )],
        checks: BTreeMap::from([
            ("spatial_covariance".to_string(), spatial_ok),
            ("white_in_time".to_string(), temporal_ok && !cov.degenerate),
        ]),
        details: json!({ "clipped_mass": weights.clipped_mass }),
    })
}

fn solve(a: &SolveArgs) -> Result<Outcome> {
    let cfg = load_config(&a.experiment)?;
    let grid = cfg.grid_for(cfg.n_ladder[0])?;
    let count = a.fields.max(1) as u64;
    let fields = solver::solve_replicas(&grid, &cfg.sigma, &cfg.covariance, cfg.t, cfg.seed, 0, 0..count)?;
    let mut rows = Vec::new();
    for (r, field) in fields.iter().enumerate() {
        for (i, u) in field.values.iter().enumerate() {
            rows.push(vec![r.to_string(), i.to_string(), fmt_f64(*u)]);
        }
    }
    let mut files = vec![("solve_fields.csv".to_string(), csv_bytes(&["replica", "cell", "u"], &rows)?)];
    let mut details = json!({ "grid": grid });
    let finite = fields.iter().all(|f| f.values.iter().all(|v| v.is_finite()));
    if let Some(g) = cfg.g.first() {
        let stats = solver::marginal_stats(&fields, g, 4.min(grid.n / 2))?;
        let rows: Vec<Vec<String>> = stats
            .lag_covariance
            .iter()
            .enumerate()
            .map(|(k, c)| vec![k.to_string(), fmt_f64(k as f64 * grid.dx), fmt_f64(*c)])
            .collect();
        files.push(("solve_lag_covariance.csv".into(), csv_bytes(&["lag", "distance", "covariance"], &rows)?));
        details["mean"] = json!(stats.mean);
        details["variance"] = json!(stats.variance);
    }
    Ok(Outcome {
        parameters: json!({ "config": cfg, "fields": count }),
        seed: Some(cfg.seed),
        files,
        checks: BTreeMap::from([("finite".to_string(), finite)]),
        details,
    })
}

/// Per-replica samples of `N^{d/2} S_{N,t}`, the table compared for determinism.
fn ensemble_csv(data: &ExperimentData) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for e in &data.ensembles {
        for (r, v) in e.values.iter().enumerate() {
            rows.push(vec![fmt_f64(e.n), e.psi.clone(), e.g_label.clone(), r.to_string(), fmt_f64(*v)]);
        }
    }
    csv_bytes(&["n", "psi", "g", "replica", "value"], &rows)
}

/// The `clt` subcommand's files and pass flags, without touching the disk.
pub fn clt_outputs(data: &ExperimentData) -> Result<(Vec<(String, Vec<u8>)>, BTreeMap<String, bool>)> {
    let o = clt(data)?;
    Ok((o.files, o.checks))
}

fn clt(data: &ExperimentData) -> Result<Outcome> {
    let mut o = base_outcome(data)?;
    o.files.push(("clt_ensembles.csv".into(), ensemble_csv(data)?));
    let stats = &data.config.stats;
    let reports = montecarlo::clt_reports(data);
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.n),
                r.psi.clone(),
                r.g.clone(),
                r.replicas.to_string(),
                fmt_f64(r.mean),
                fmt_f64(r.variance),
                fmt_f64(r.variance_se),
                fmt_opt(r.predicted_variance),
                r.prediction.map(|p| format!("{p:?}").to_lowercase()).unwrap_or_default(),
                fmt_opt(r.relative_error),
                fmt_opt(r.ks),
                fmt_f64(r.ks_critical),
            ]
        })
        .collect();
    o.files.push((
        "clt_reports.csv".into(),
        csv_bytes(
            &[
                "n", "psi", "g", "replicas", "mean", "variance", "variance_se", "predicted", "prediction", "relative_error", "ks",
                "ks_critical",
            ],
            &rows,
        )?,
    ));
    if stats.clt {
        // Only the largest N is held to the 10% target; smaller rungs are
        // covered by the convergence check.
        let top = data.config.n_ladder.iter().copied().fold(f64::MIN, f64::max);
        let at_top = reports.iter().filter(|r| r.n == top);
        o.checks.insert(
            "variance".into(),
            at_top.clone().all(|r| r.relative_error.is_none_or(|e| e.abs() <= 0.10)),
        );
        o.checks.insert(
            "normality".into(),
            at_top.clone().all(|r| r.underpowered || r.ks.is_some_and(|k| k < r.ks_critical)),
        );
        if data.config.n_ladder.len() > 1 {
            o.checks.insert("variance_converges".into(), montecarlo::variance_converges(&reports));
        }
    }
    let bt_rows: Vec<Vec<String>> = data
        .bt
        .iter()
        .enumerate()
        .filter_map(|(i, b)| {
            b.map(|b| {
                vec![
                    data.config.g[i].label(),
                    fmt_f64(b.value),
                    fmt_f64(b.boundary),
                    fmt_f64(b.cutoff),
                    b.replicas.to_string(),
                ]
            })
        })
        .collect();
    o.files.push(("clt_bt.csv".into(), csv_bytes(&["g", "value", "boundary", "cutoff", "replicas"], &bt_rows)?));
    if stats.covariance {
        let rows: Vec<Vec<String>> = montecarlo::covariance_report(data)
            .iter()
            .map(|c| {
                vec![
                    fmt_f64(c.n),
                    c.psi_a.clone(),
                    c.psi_b.clone(),
                    c.g.clone(),
                    fmt_f64(c.empirical),
                    fmt_f64(c.inner),
                    fmt_opt(c.ratio),
                    fmt_opt(c.predicted),
                ]
            })
            .collect();
        o.files.push((
            "clt_covariance.csv".into(),
            csv_bytes(&["n", "psi_a", "psi_b", "g", "empirical", "inner", "ratio", "predicted"], &rows)?,
        ));
    }
    if stats.moments {
        let moments = montecarlo::moment_reports(data, &[2.0, 4.0])?;
        o.checks.insert("moment_bound".into(), moments.iter().all(|m| !m.violated));
        let rows: Vec<Vec<String>> = moments
            .iter()
            .map(|m| {
                vec![
                    fmt_f64(m.n),
                    m.psi.clone(),
                    m.g.clone(),
                    fmt_f64(m.k),
                    fmt_f64(m.empirical),
                    fmt_f64(m.log_empirical),
                    fmt_f64(m.log_bound),
                    m.violated.to_string(),
                ]
            })
            .collect();
        o.files.push((
            "clt_moments.csv".into(),
            csv_bytes(&["n", "psi", "g", "k", "empirical", "log_empirical", "log_bound", "violated"], &rows)?,
        ));
    }
    if stats.tails {
        let (ok, bytes) = tails_table(data)?;
        o.checks.insert("tail_bound".into(), ok);
        o.files.push(("clt_tails.csv".into(), bytes));
    }
    Ok(o)
}

fn tails_table(data: &ExperimentData) -> Result<(bool, Vec<u8>)> {
    let reports = montecarlo::tail_reports(data)?;
    let mut rows = Vec::new();
    for t in &reports {
        for r in &t.rows {
            rows.push(vec![
                fmt_f64(t.n),
                t.psi.clone(),
                t.g.clone(),
                fmt_f64(t.scale),
                fmt_f64(r.ell),
                r.exceed.to_string(),
                fmt_f64(r.empirical),
                fmt_f64(r.ci_low),
                fmt_f64(r.ci_high),
                fmt_f64(r.bound),
                r.violated.to_string(),
            ]);
        }
    }
    let bytes = csv_bytes(
        &["n", "psi", "g", "scale", "ell", "exceed", "empirical", "ci_low", "ci_high", "bound", "violated"],
        &rows,
    )?;
    Ok((reports.iter().all(|t| t.violations == 0), bytes))
}

fn tails(data: &ExperimentData) -> Result<Outcome> {
    let mut o = base_outcome(data)?;
    let (ok, bytes) = tails_table(data)?;
    o.checks.insert("tail_bound".into(), ok);
    o.files.push(("tails.csv".into(), bytes));
    Ok(o)
}

fn null_cells(n: &crate::stats::NullSummary) -> Vec<String> {
    vec![fmt_f64(n.p99), fmt_f64(n.mean), fmt_f64(n.std), n.permutations.to_string()]
}

fn independence(data: &ExperimentData) -> Result<Outcome> {
    let mut o = base_outcome(data)?;
    let report = montecarlo::independence_report(data)?;
    let rows: Vec<Vec<String>> = report
        .entries
        .iter()
        .map(|e| {
            let mut row = vec![fmt_f64(e.n), e.subset.join("+"), fmt_f64(e.statistic)];
            row.extend(null_cells(&e.null));
            row.extend([fmt_f64(e.alternating_gap), fmt_opt(e.rhs), e.below_null.to_string()]);
            row
        })
        .collect();
    o.files.push((
        "independence.csv".into(),
        csv_bytes(
            &[
                "n", "subset", "statistic", "null_p99", "null_mean", "null_std", "permutations", "alternating_gap", "rhs",
                "below_null",
            ],
            &rows,
        )?,
    ));
    o.checks.insert("monotone".into(), report.monotone);
    o.checks.insert("below_null_at_largest_n".into(), report.final_below_null);
    Ok(o)
}

fn fdd(data: &ExperimentData) -> Result<Outcome> {
    let mut o = base_outcome(data)?;
    let reports = montecarlo::fdd_reports(data)?;
    let mut rows = Vec::new();
    let mut inc_rows = Vec::new();
    let (mut cov_ok, mut inc_ok) = (true, true);
    for f in &reports {
        for i in 0..f.r.len() {
            for j in 0..f.r.len() {
                rows.push(vec![
                    fmt_f64(f.n),
                    fmt_f64(f.r[i]),
                    fmt_f64(f.r[j]),
                    fmt_f64(f.empirical[i][j]),
                    fmt_f64(f.predicted[i][j]),
                ]);
            }
        }
        if let Some(null) = &f.increments {
            let mut row = vec![fmt_f64(f.n), fmt_f64(null.statistic)];
            row.extend(null_cells(null));
            inc_rows.push(row);
        }
        cov_ok &= f.max_relative_error <= 0.15 && !f.nonzero_at_origin;
        inc_ok &= f.increments_independent;
    }
    o.files.push(("fdd_covariance.csv".into(), csv_bytes(&["n", "r", "r_prime", "empirical", "predicted"], &rows)?));
    o.files.push((
        "fdd_increments.csv".into(),
        csv_bytes(&["n", "statistic", "null_p99", "null_mean", "null_std", "permutations"], &inc_rows)?,
    ));
    o.checks.insert("covariance".into(), cov_ok);
    o.checks.insert("independent_increments".into(), inc_ok);
    Ok(o)
}

fn class_of(a: &EntropyArgs) -> Option<FunctionClass> {
    let g = match a.profile {
        ProfileArg::Ramp => Profile::Ramp,
        ProfileArg::Tanh => Profile::Smooth(BaseFunction::Tanh),
    };
    Some(match a.class {
        ClassArg::Box => FunctionClass::Box { m: a.m, dimension: a.d },
        ClassArg::Convolution => FunctionClass::Convolution { m1: a.m, m2: a.n },
        ClassArg::Shift => FunctionClass::Shift { g, n: a.n },
        ClassArg::Scale => FunctionClass::Scale { g, m: a.m, n: a.n },
        ClassArg::Line | ClassArg::Brownian => return None,
    })
}

/// Largest parameter sample converted to an explicit distance matrix.
const MATRIX_LIMIT: usize = 2000;

fn finite_space(a: &EntropyArgs) -> Result<FiniteMetricSpace> {
    match (a.class, class_of(a)) {
        (ClassArg::Line, _) => FiniteMetricSpace::line(a.points, 1.0),
        (ClassArg::Brownian, _) => FiniteMetricSpace::brownian_grid(a.points),
        (_, Some(c)) => {
            let s = c.sample(a.points)?;
            if s.len() > MATRIX_LIMIT {
                return Err(crate::error::invalid(
                    "points",
                    format!("{} sampled functions exceed {MATRIX_LIMIT} for this check", s.len()),
                ));
            }
            FiniteMetricSpace::from_fn(s.len(), |i, j| s.dist(i, j))
        }
        (_, None) => unreachable!("every class is either a space or a function class"),
    }
}

fn entropy_cmd(a: &EntropyArgs) -> Result<Outcome> {
    let seed = env_seed()?.unwrap_or(a.seed);
    let parameters = json!({
        "class": format!("{:?}", a.class), "check": format!("{:?}", a.check), "r_grid": a.r_grid,
        "points": a.points, "m": a.m, "n": a.n, "d": a.d, "profile": format!("{:?}", a.profile),
        "replicas": a.replicas, "seed": seed,
    });
    let mut checks = BTreeMap::new();
    let mut details = Value::Null;
    let file = match a.check {
        CheckArg::Sandwich => {
            let space = finite_space(a)?;
            let mut rows = Vec::new();
            let mut ok = true;
            for &r in &a.r_grid {
                let s = entropy::sandwich_check(&space, r)?;
                ok &= s.holds;
                rows.push(vec![
                    fmt_f64(r),
                    s.cover_double.to_string(),
                    s.packing.to_string(),
                    s.cover_half.to_string(),
                    s.exact.to_string(),
                    s.holds.to_string(),
                ]);
            }
            checks.insert("sandwich".to_string(), ok);
            ("entropy_sandwich.csv", csv_bytes(&["r", "n_2r", "p_r", "n_half_r", "exact", "holds"], &rows)?)
        }
        CheckArg::Chain => {
            let space = finite_space(a)?;
            let chain = entropy::chain_construct(&space)?;
            let rows: Vec<Vec<String>> = chain
                .eps
                .iter()
                .zip(&chain.nets)
                .enumerate()
                .map(|(k, (e, net))| vec![k.to_string(), fmt_f64(*e), net.len().to_string()])
                .collect();
            // Telescoping with integer labels is exact.
            let ok = (0..space.len()).all(|t| {
                let sum: i64 = chain.increments(t).iter().map(|&(s, u)| u as i64 - s as i64).sum();
                sum == t as i64 - chain.root() as i64
            });
            checks.insert("telescoping".to_string(), ok);
            details = json!({ "lemma_bound": chain.bound });
            ("entropy_chain.csv", csv_bytes(&["level", "eps", "net_size"], &rows)?)
        }
        CheckArg::Bound => {
            let space = finite_space(a)?;
            let tau = TailFunctional::gaussian();
            let mut rows = Vec::new();
            let mut ok = true;
            for (k, &delta) in a.r_grid.iter().enumerate() {
                let bound = entropy::chaining_bound(&space, &tau, delta)?;
                let check =
                    entropy::chaining_empirical_check(&space, delta, a.replicas, RngStream::new(seed, 0, 0, k as u64))?;
                ok &= !check.violated;
                rows.push(vec![
                    fmt_f64(delta),
                    fmt_f64(bound),
                    fmt_f64(check.empirical),
                    fmt_f64(check.empirical_se),
                    check.corrected.to_string(),
                ]);
            }
            checks.insert("no_violation".to_string(), ok);
            (
                "entropy_bound.csv",
                csv_bytes(&["delta", "bound", "empirical", "empirical_se", "psd_corrected"], &rows)?,
            )
        }
        CheckArg::Exponent => {
            let class = class_of(a)
                .ok_or_else(|| crate::error::invalid("class", "covering exponents need a function class"))?;
            let sample = class.sample(a.points)?;
            let est = entropy::covering_exponent(&sample, &a.r_grid)?;
            if let Some(want) = a.expect {
                checks.insert("exponent".to_string(), (est.slope - want).abs() <= a.tolerance);
            }
            details = json!({ "slope": est.slope, "spacing": est.spacing });
            let rows: Vec<Vec<String>> =
                est.r.iter().zip(&est.counts).map(|(r, c)| vec![fmt_f64(*r), c.to_string()]).collect();
            ("entropy_exponent.csv", csv_bytes(&["r", "covering_number"], &rows)?)
        }
    };
    Ok(Outcome {
        parameters,
        seed: Some(seed),
        files: vec![(file.0.to_string(), file.1)],
        checks,
        details,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn args(dir: &Path, rest: &[&str]) -> Vec<String> {
        let mut v = vec!["sheclt".to_string()];
        v.extend(rest.iter().map(|s| s.to_string()));
        v.extend(["--out-dir".to_string(), dir.display().to_string()]);
        v
    }

    #[test]
    fn no_arguments_is_usage_error() {
        assert_eq!(run(["sheclt"]), 2);
        assert_eq!(run(["sheclt", "frobnicate"]), 2);
    }

    #[test]
    fn bounds_row_for_white_noise() {
        let dir = out();
        let code = run(args(dir.path(), &["bounds", "--kind", "dirac", "--d", "1", "--lambda", "0.5"]));
        assert_eq!(code, 0);
        let text = std::fs::read_to_string(dir.path().join("bounds.csv")).unwrap();
        let row = text.lines().nth(1).unwrap();
        let ups: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
        assert!((ups - 1.0).abs() < 1e-9, "{row}");
        let summary: Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("bounds_summary.json")).unwrap()).unwrap();
        assert_eq!(summary["pass"], json!(true));
        let manifest: Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("bounds_manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["config_hash"], summary["config_hash"]);
    }

    #[test]
    fn bad_config_key_is_reported() {
        let dir = out();
        let cfg = dir.path().join("bad.toml");
        std::fs::write(&cfg, "replicas = 10\nbogus = 1\n").unwrap();
        let code = run(args(dir.path(), &["clt", "--config", cfg.to_str().unwrap()]));
        assert_eq!(code, 2);
    }

    #[test]
    fn entropy_exponent_and_sandwich() {
        let dir = out();
        let code = run(args(
            dir.path(),
            &["entropy", "--class", "box", "--check", "exponent", "--points", "20001", "--r-grid", "0.03,0.05,0.1,0.2", "--expect", "-2"],
        ));
        assert_eq!(code, 0);
        let code = run(args(dir.path(), &["entropy", "--class", "line", "--check", "sandwich", "--points", "8", "--r-grid", "0.5,1,2"]));
        assert_eq!(code, 0);
        let code = run(args(dir.path(), &["entropy", "--class", "brownian", "--check", "chain", "--points", "12", "--r-grid", "1"]));
        assert_eq!(code, 0);
    }

    #[test]
    fn noise_check_passes_for_white_noise() {
        let dir = out();
        let code = run(args(dir.path(), &["noise-check", "--dx", "0.25", "--length", "8", "--slices", "200"]));
        assert_eq!(code, 0);
    }

    #[test]
    fn csv_floats_have_seventeen_digits() {
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
