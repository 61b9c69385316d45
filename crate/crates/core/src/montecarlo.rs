//! Replicated experiments and the statistics that confront the limit
//! theorems: normality of `N^{d/2} S_{N,t}`, covariance convergence,
//! asymptotic independence, Brownian fdd limits and tail/moment bounds.
//!
//! Each replica is solved once per `N` on a grid sized for that `N`; every
//! `(ψ, g)` series at that `N` is read off the same field, so value `i` of
//! every series comes from realization `i`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{spectral_weights, Grid, RngStream};
use crate::occupation::{
    default_cutoff, occupation_weights, Baseline, BtAccumulator, BtEstimate, BtPartial, LipFunction,
    OccupationWeights, TestFunction, MIN_BT_REPLICAS,
};
use crate::quad::{self, QuadOptions};
use crate::solver::{solve_replicas, SigmaFunction, Solver};
use crate::spectral::{log_moment_bound, tail_bound, CovarianceMeasure, DalangProfile, MomentBoundParams, TailBoundParams};
use crate::stats::{self, NullSummary, KS_MIN_SAMPLES};

/// Tag of the noise streams used for Monte Carlo baselines.
pub const BASELINE_TAG: u64 = 1000;
/// Tags `NULL_TAG + k` key the permutation nulls at ladder index `k`.
pub const NULL_TAG: u64 = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dx: f64,
    /// Defaults to the stability limit `dx²/(2d)`.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Fixed period for every `N`; sized per `N` when absent.
    #[serde(default)]
    pub length: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPsi {
    pub name: String,
    #[serde(flatten)]
    pub function: TestFunction,
}

impl NamedPsi {
    pub fn new(name: &str, function: TestFunction) -> Self {
        Self {
            name: name.to_string(),
            function,
        }
    }
}

/// The box family `Q(r) = [a, a + r(y₁ - y′₁)] × [y′₂, y₂] × ⋯ × [y′_d, y_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FddConfig {
    #[serde(default)]
    pub a: f64,
    pub y: Vec<f64>,
    pub y_prime: Vec<f64>,
    pub r: Vec<f64>,
}

impl FddConfig {
    /// `Q(r) = [0, r] × [0, 1]^{d-1}`.
    pub fn unit(d: usize, r: Vec<f64>) -> Self {
        Self {
            a: 0.0,
            y: vec![1.0; d],
            y_prime: vec![0.0; d],
            r,
        }
    }

    pub fn box_at(&self, r: f64) -> Result<TestFunction> {
        let mut lo = self.y_prime.clone();
        let mut hi = self.y.clone();
        lo[0] = self.a;
        hi[0] = self.a + r * (self.y[0] - self.y_prime[0]);
        TestFunction::indicator(&lo, &hi)
    }

    /// `Π_j (y_j - y′_j)`.
    pub fn volume(&self) -> f64 {
        self.y.iter().zip(&self.y_prime).map(|(a, b)| a - b).product()
    }

    pub fn label(r: f64) -> String {
        format!("Q({r})")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndependenceConfig {
    /// Names of the ψ's whose joint law is tested; all pairs and, for three
    /// or more, the full set.
    pub psi: Vec<String>,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    /// Index into the `g` list.
    #[serde(default)]
    pub g: usize,
}

fn default_permutations() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailConfig {
    #[serde(default = "half")]
    pub eps: f64,
    #[serde(default = "half")]
    pub delta: f64,
    #[serde(default = "twenty")]
    pub points: usize,
}

fn half() -> f64 {
    0.5
}

fn twenty() -> usize {
    20
}

impl Default for TailConfig {
    fn default() -> Self {
        Self {
            eps: 0.5,
            delta: 0.5,
            points: 20,
        }
    }
}

/// Which reports to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    pub clt: bool,
    pub covariance: bool,
    pub independence: bool,
    pub fdd: bool,
    pub tails: bool,
    pub moments: bool,
    /// Accumulate `B̂_t(g, g)` alongside the samples.
    pub bt: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            clt: true,
            covariance: true,
            independence: true,
            fdd: true,
            tails: true,
            moments: true,
            bt: true,
        }
    }
}

fn default_g() -> Vec<LipFunction> {
    vec![LipFunction::Identity]
}

fn default_baseline_replicas() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub covariance: CovarianceMeasure,
    pub sigma: SigmaFunction,
    #[serde(default = "default_g")]
    pub g: Vec<LipFunction>,
    pub psi: Vec<NamedPsi>,
    #[serde(default)]
    pub fdd: Option<FddConfig>,
    pub t: f64,
    pub n_ladder: Vec<f64>,
    pub grid: GridConfig,
    pub replicas: usize,
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    /// Replicas spent on `E g(u)` when it has no closed form.
    #[serde(default = "default_baseline_replicas")]
    pub baseline_replicas: usize,
    #[serde(default)]
    pub independence: Option<IndependenceConfig>,
    #[serde(default)]
    pub tails: TailConfig,
    #[serde(default)]
    pub stats: Toggles,
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn path_err<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> Error {
    let key = e.path().to_string();
    config_err(&key, e.inner().to_string())
}

impl ExperimentConfig {
    /// White noise in `d = 1`, `σ ≡ 1`, `g = id`, `ψ = 1_{[0,1]}`, `t = 1`,
    /// `N = 64`, `dx = 1/16`, `R = 4000`.
    pub fn benchmark() -> Self {
        Self {
            covariance: CovarianceMeasure::dirac(1, 1.0).expect("valid"),
            sigma: SigmaFunction::Constant { c: 1.0 },
            g: default_g(),
            psi: vec![NamedPsi::new("unit", TestFunction::interval(0.0, 1.0).expect("valid"))],
            fdd: None,
            t: 1.0,
            n_ladder: vec![64.0],
            grid: GridConfig {
                dx: 1.0 / 16.0,
                dt: None,
                length: None,
            },
            replicas: 4000,
            seed: 20240601,
            threads: None,
            baseline_replicas: default_baseline_replicas(),
            independence: None,
            tails: TailConfig::default(),
            stats: Toggles {
                independence: false,
                fdd: false,
                ..Toggles::default()
            },
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(s).map_err(|e| config_err("<toml>", e.message()))?;
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(path_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s).map_err(|e| config_err("<json>", e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(path_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads TOML or JSON, chosen by extension (`.json` is JSON, anything else TOML).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn dimension(&self) -> usize {
        self.covariance.dimension
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension();
        let wrap = |key: &str, r: Result<()>| r.map_err(|e| config_err(key, e.to_string()));
        wrap("covariance", self.covariance.validate())?;
        wrap("covariance", self.covariance.check_dalang())?;
        wrap("sigma", self.sigma.validate())?;
        if self.g.is_empty() {
            return Err(config_err("g", "need at least one observable"));
        }
        for (i, g) in self.g.iter().enumerate() {
            wrap(&format!("g[{i}]"), g.validate())?;
        }
        if self.psi.is_empty() && self.fdd.is_none() {
            return Err(config_err("psi", "need at least one test function or an fdd family"));
        }
        for (i, p) in self.psi.iter().enumerate() {
            let key = format!("psi[{i}]");
            wrap(&key, p.function.validate())?;
            if p.function.dimension != d {
                return Err(config_err(&key, format!("dimension {} differs from d = {d}", p.function.dimension)));
            }
            if self.psi[..i].iter().any(|q| q.name == p.name) {
                return Err(config_err(&key, format!("duplicate name `{}`", p.name)));
            }
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(config_err("t", format!("{} must be finite and > 0", self.t)));
        }
        if self.n_ladder.is_empty() || self.n_ladder.iter().any(|n| !(*n > 0.0 && n.is_finite())) {
            return Err(config_err("n_ladder", "need positive finite entries"));
        }
        if self.n_ladder.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(config_err("n_ladder", "must be strictly increasing"));
        }
        if !(self.grid.dx > 0.0) {
            return Err(config_err("grid.dx", format!("{} must be > 0", self.grid.dx)));
        }
        if self.replicas == 0 {
            return Err(config_err("replicas", "must be ≥ 1"));
        }
        if self.threads == Some(0) {
            return Err(config_err("threads", "must be ≥ 1"));
        }
        if let Some(fdd) = &self.fdd {
            if fdd.y.len() != d || fdd.y_prime.len() != d {
                return Err(config_err("fdd.y", format!("corners must have {d} coordinates")));
            }
            if fdd.y.iter().zip(&fdd.y_prime).any(|(a, b)| !(a > b)) {
                return Err(config_err("fdd.y", "need y > y′ coordinatewise"));
            }
            if fdd.r.is_empty() || fdd.r.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(config_err("fdd.r", "need values in [0, 1]"));
            }
            if fdd.r.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(config_err("fdd.r", "must be strictly increasing"));
            }
        }
        if let Some(ind) = &self.independence {
            if ind.psi.len() < 2 {
                return Err(config_err("independence.psi", "need at least two test functions"));
            }
            for name in &ind.psi {
                if !self.psi.iter().any(|p| &p.name == name) {
                    return Err(config_err("independence.psi", format!("unknown test function `{name}`")));
                }
            }
            if ind.g >= self.g.len() {
                return Err(config_err("independence.g", "index out of range"));
            }
            if ind.permutations < 100 {
                return Err(config_err("independence.permutations", "need at least 100 for a 99th percentile"));
            }
        }
        if !(self.tails.eps > 0.0 && self.tails.eps < 1.0) {
            return Err(config_err("tails.eps", "must lie in (0, 1)"));
        }
        if !(self.tails.delta > 0.0 && self.tails.delta < 1.0) {
            return Err(config_err("tails.delta", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Every test function the run evaluates: the named ψ's, then `Q(r)`.
    pub fn all_psi(&self) -> Result<Vec<NamedPsi>> {
        let mut out = self.psi.clone();
        if let Some(fdd) = &self.fdd {
            for &r in &fdd.r {
                out.push(NamedPsi::new(&FddConfig::label(r), fdd.box_at(r)?));
            }
        }
        Ok(out)
    }

    /// The grid used at ladder rung `n`.
    pub fn grid_for(&self, n: f64) -> Result<Grid> {
        let d = self.dimension();
        let grid = match self.grid.length {
            Some(length) => {
                let cells = (length / self.grid.dx).round() as usize;
                let dt = self.grid.dt.unwrap_or(self.grid.dx * self.grid.dx / (2.0 * d as f64));
                Grid::new(d, length, cells, dt)
            }
            None => {
                let extent = self.all_psi()?.iter().map(|p| p.function.extent()).fold(0.0, f64::max) * n;
                Grid::sized_for(d, self.grid.dx, extent, self.t, self.grid.dt)
            }
        };
        grid.map_err(|e| config_err("grid", e.to_string()))
    }
}

/// `R` values of `N^{d/2} S_{N,t}(ψ, g)`, indexed by replica.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleEnsemble {
    pub n: f64,
    pub psi: String,
    pub g: usize,
    pub g_label: String,
    pub values: Vec<f64>,
    pub baseline: Baseline,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentData {
    pub config: ExperimentConfig,
    pub grids: Vec<Grid>,
    /// Ordered by ladder rung, then ψ (named, then `Q(r)`), then `g`.
    pub ensembles: Vec<SampleEnsemble>,
    /// `B̂_t(g, g)` for each `g`, from the first rung whose grid admits the
    /// lag cutoff.
    pub bt: Vec<Option<BtEstimate>>,
    pub baselines: Vec<Baseline>,
    /// Fewer than 50 replicas: distributional statistics are not meaningful.
    pub underpowered: bool,
    pub warnings: Vec<String>,
}

impl ExperimentData {
    pub fn get(&self, n: f64, psi: &str, g: usize) -> Option<&SampleEnsemble> {
        self.ensembles.iter().find(|e| e.n == n && e.psi == psi && e.g == g)
    }

    pub fn values(&self, n: f64, psi: &str, g: usize) -> Result<&[f64]> {
        self.get(n, psi, g)
            .map(|e| e.values.as_slice())
            .ok_or_else(|| config_err("psi", format!("no series for N = {n}, ψ = `{psi}`, g = {g}")))
    }
}

struct ReplicaOut {
    values: Vec<f64>,
    partials: Vec<BtPartial>,
}

/// Runs the experiment on the global rayon pool, or on a dedicated pool when
/// `config.threads` is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentData> {
    match config.threads {
        Some(k) => run_experiment_with_threads(config, k),
        None => run_inner(config),
    }
}

pub fn run_experiment_with_threads(config: &ExperimentConfig, threads: usize) -> Result<ExperimentData> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| config_err("threads", e.to_string()))?;
    pool.install(|| run_inner(config))
}

fn run_inner(config: &ExperimentConfig) -> Result<ExperimentData> {
    config.validate()?;
    let f = &config.covariance;
    let psis = config.all_psi()?;
    let grids: Vec<Grid> = config.n_ladder.iter().map(|&n| config.grid_for(n)).collect::<Result<_>>()?;
    // Support pre-check for every (N, ψ) before any replica runs.
    let mut weights: Vec<Vec<OccupationWeights>> = Vec::with_capacity(grids.len());
    for (grid, &n) in grids.iter().zip(&config.n_ladder) {
        grid.steps_to(config.t).map_err(|e| config_err("t", e.to_string()))?;
        let row = psis
            .iter()
            .map(|p| {
                occupation_weights(grid, &p.function, n, config.t).map_err(|e| match e {
                    Error::SupportOverflow { detail, .. } => Error::SupportOverflow {
                        psi: p.name.clone(),
                        detail: format!("N = {n}: {detail}"),
                    },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        weights.push(row);
    }

    let mut warnings = Vec::new();
    let baselines = compute_baselines(config, &grids[0])?;

    let cutoff = default_cutoff(config.t, f);
    let bt_rung = if config.stats.bt {
        grids.iter().position(|g| cutoff <= g.length / 4.0)
    } else {
        None
    };
    if config.stats.bt && bt_rung.is_none() {
        warnings.push(format!("no grid admits the lag cutoff {cutoff}; B̂ skipped"));
    }
    let mut bt_acc: Vec<BtAccumulator> = match bt_rung {
        Some(k) => (0..config.g.len())
            .map(|_| BtAccumulator::new(grids[k], cutoff))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };

    let mut ensembles = Vec::new();
    for (k, (grid, &n)) in grids.iter().zip(&config.n_ladder).enumerate() {
        let sw = spectral_weights(grid, f)?;
        if let Some(w) = sw.warning() {
            warnings.push(format!("N = {n}: {w}"));
        }
        let with_bt = bt_rung == Some(k);
        let row = &weights[k];
        let outs: Vec<ReplicaOut> = (0..config.replicas as u64)
            .into_par_iter()
            .map_init(
                || {
                    let accs: Vec<BtAccumulator> = if with_bt {
                        (0..config.g.len())
                            .map(|_| BtAccumulator::new(*grid, cutoff).expect("validated cutoff"))
                            .collect()
                    } else {
                        Vec::new()
                    };
                    (Solver::new(*grid, &config.sigma, &sw), accs)
                },
                |(solver, accs), r| {
                    let stream = RngStream::new(config.seed, k as u64 + 1, r, 0);
                    let field = solver.run(stream, &[config.t])?.pop().expect("one snapshot");
                    let mut values = Vec::with_capacity(row.len() * config.g.len());
                    for w in row {
                        for (g, b) in config.g.iter().zip(&baselines) {
                            values.push(w.value(&field.values, g, b.value));
                        }
                    }
                    let partials = accs
                        .iter_mut()
                        .zip(&config.g)
                        .map(|(acc, g)| acc.contribution(&field.values, &field.values, g, g))
                        .collect();
                    Ok(ReplicaOut { values, partials })
                },
            )
            .collect::<Result<_>>()?;
        for (acc, gi) in bt_acc.iter_mut().zip(0..).filter(|_| with_bt) {
            for out in &outs {
                acc.add_partial(&out.partials[gi]);
            }
        }
        let mut col = 0;
        for p in &psis {
            for (gi, g) in config.g.iter().enumerate() {
                ensembles.push(SampleEnsemble {
                    n,
                    psi: p.name.clone(),
                    g: gi,
                    g_label: g.label(),
                    values: outs.iter().map(|o| o.values[col]).collect(),
                    baseline: baselines[gi],
                });
                col += 1;
            }
        }
    }

    let bt = if bt_acc.is_empty() {
        vec![None; config.g.len()]
    } else if config.replicas < MIN_BT_REPLICAS {
        warnings.push(format!("B̂ needs {MIN_BT_REPLICAS} replicas, have {}", config.replicas));
        vec![None; config.g.len()]
    } else {
        bt_acc
            .iter()
            .map(|acc| {
                let est = acc.finish();
                if est.boundary > 0.05 * est.value.abs() {
                    warnings.push(format!(
                        "B̂ boundary covariance {:.3e} exceeds 5% of the estimate {:.3e}",
                        est.boundary, est.value
                    ));
                }
                Some(est)
            })
            .collect()
    };
    let underpowered = config.replicas < KS_MIN_SAMPLES;
    if underpowered {
        warnings.push(format!("{} replicas: statistics are underpowered", config.replicas));
    }
    Ok(ExperimentData {
        config: config.clone(),
        grids,
        ensembles,
        bt,
        baselines,
        underpowered,
        warnings,
    })
}

fn compute_baselines(config: &ExperimentConfig, grid: &Grid) -> Result<Vec<Baseline>> {
    let need_mc = config.g.iter().any(|g| g.exact_baseline().is_none());
    let fields = if need_mc {
        solve_replicas(
            grid,
            &config.sigma,
            &config.covariance,
            config.t,
            config.seed,
            BASELINE_TAG,
            0..config.baseline_replicas.max(1) as u64,
        )?
    } else {
        Vec::new()
    };
    config
        .g
        .iter()
        .map(|g| match g.exact_baseline() {
            Some(v) => Ok(Baseline::exact(v)),
            None => Baseline::from_replicas(&fields, g),
        })
        .collect()
}

/// How a predicted `B_t` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    /// `b_g b_G c₀² t f(ℝ^d)` for constant `σ` and affine observables.
    Exact,
    /// Lag-summed covariance estimate.
    Estimated,
}

/// `B_t(g, G)` for `g = config.g[a]`, `G = config.g[b]`.
pub fn predicted_bt(data: &ExperimentData, a: usize, b: usize) -> Option<(f64, Prediction)> {
    let cfg = &data.config;
    if cfg.sigma.is_constant() {
        if let (Some(sa), Some(sb)) = (cfg.g[a].affine_slope(), cfg.g[b].affine_slope()) {
            let c0 = cfg.sigma.eval(1.0);
            return Some((sa * sb * c0 * c0 * cfg.t * cfg.covariance.total_mass(), Prediction::Exact));
        }
    }
    if a == b {
        data.bt[a].map(|e| (e.value, Prediction::Estimated))
    } else {
        None
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub n: f64,
    pub psi: String,
    pub g: String,
    pub replicas: usize,
    pub mean: f64,
    pub variance: f64,
    pub variance_se: f64,
    /// `⟨ψ, ψ⟩ B_t(g, g)`.
    pub predicted_variance: Option<f64>,
    pub prediction: Option<Prediction>,
    pub relative_error: Option<f64>,
    /// KS distance to `Normal(0, variance)`.
    pub ks: Option<f64>,
    pub ks_critical: f64,
    pub underpowered: bool,
}

/// One report per `(N, named ψ, g)`.
pub fn clt_reports(data: &ExperimentData) -> Vec<CltReport> {
    let cfg = &data.config;
    let mut out = Vec::new();
    for e in &data.ensembles {
        let Some(psi) = cfg.psi.iter().find(|p| p.name == e.psi) else {
            continue;
        };
        let r = e.values.len();
        let variance = if r > 1 { stats::variance(&e.values) } else { f64::NAN };
        let pred = predicted_bt(data, e.g, e.g).map(|(b, src)| (psi.function.l2_norm_sq() * b, src));
        let ks = stats::ks_normal(&e.values, 0.0, variance).ok();
        out.push(CltReport {
            n: e.n,
            psi: e.psi.clone(),
            g: e.g_label.clone(),
            replicas: r,
            mean: stats::mean(&e.values),
            variance,
            variance_se: if r > 1 { stats::variance_se(&e.values) } else { f64::NAN },
            predicted_variance: pred.map(|p| p.0),
            prediction: pred.map(|p| p.1),
            relative_error: pred.filter(|p| p.0 != 0.0).map(|p| (variance - p.0).abs() / p.0.abs()),
            ks,
            ks_critical: stats::ks_critical_99(r),
            underpowered: r < KS_MIN_SAMPLES,
        })
    }
    out
}

/// Whether `|Var - predicted|` is non-increasing along the ladder up to two
/// standard errors, for every `(ψ, g)` with a prediction.
pub fn variance_converges(reports: &[CltReport]) -> bool {
    let mut ok = true;
    for a in reports {
        let next = reports
            .iter()
            .filter(|b| b.psi == a.psi && b.g == a.g && b.n > a.n)
            .min_by(|x, y| x.n.total_cmp(&y.n));
        if let (Some(b), Some(pa), Some(pb)) = (next, a.predicted_variance, next.and_then(|b| b.predicted_variance)) {
            let slack = 2.0 * (a.variance_se.powi(2) + b.variance_se.powi(2)).sqrt();
            ok &= (b.variance - pb).abs() <= (a.variance - pa).abs() + slack;
        }
    }
    ok
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceEntry {
    pub n: f64,
    pub psi_a: String,
    pub psi_b: String,
    pub g: String,
    pub empirical: f64,
    /// `⟨ψ_a, ψ_b⟩`.
    pub inner: f64,
    /// `empirical / inner`, absent when the inner product vanishes.
    pub ratio: Option<f64>,
    /// `⟨ψ_a, ψ_b⟩ B_t(g, g)`.
    pub predicted: Option<f64>,
}

/// Empirical covariance matrix of the named ψ's against `⟨ψᵢ, ψⱼ⟩ B_t`.
pub fn covariance_report(data: &ExperimentData) -> Vec<CovarianceEntry> {
    let cfg = &data.config;
    let mut out = Vec::new();
    for &n in &cfg.n_ladder {
        for (gi, g) in cfg.g.iter().enumerate() {
            let b = predicted_bt(data, gi, gi).map(|p| p.0);
            for (i, pa) in cfg.psi.iter().enumerate() {
                for pb in &cfg.psi[i..] {
                    let (Some(xa), Some(xb)) = (data.get(n, &pa.name, gi), data.get(n, &pb.name, gi)) else {
                        continue;
                    };
                    if xa.values.len() < 2 {
                        continue;
                    }
                    let empirical = stats::covariance(&xa.values, &xb.values);
                    let inner = pa.function.inner(&pb.function);
                    out.push(CovarianceEntry {
                        n,
                        psi_a: pa.name.clone(),
                        psi_b: pb.name.clone(),
                        g: g.label(),
                        empirical,
                        inner,
                        ratio: (inner.abs() > 1e-12).then(|| empirical / inner),
                        predicted: b.map(|b| inner * b),
                    });
                }
            }
        }
    }
    out
}

/// `∫₀ᵗ ds ∫ (p_{2s} * f)(η) (|φ| * |ψ̃|)(η/N) dη`, the right-hand side of the
/// asymptotic-independence estimate up to its implied constant.
pub fn independence_rhs(f: &CovarianceMeasure, t: f64, psi: &TestFunction, phi: &TestFunction, n: f64) -> Result<f64> {
    if psi.dimension != f.dimension || phi.dimension != f.dimension {
        return Err(config_err("psi", "dimension differs from the covariance"));
    }
    if !(t > 0.0 && n > 0.0) {
        return Err(config_err("t", "need t > 0 and N > 0"));
    }
    let (ap, aq) = (psi.abs(), phi.abs());
    let opts = QuadOptions::with_rel_tol(1e-9);
    let inner = |s: f64| -> f64 {
        let var = 2.0 * s;
        let mut total = 0.0;
        for bp in &ap.boxes {
            for bq in &aq.boxes {
                let mut prod = bp.amp * bq.amp;
                for a in 0..f.dimension {
                    // c(y) = |[lo_q, hi_q] ∩ [lo_p + y, hi_p + y]|
                    let (lq, hq, lp, hp) = (bq.lo[a], bq.hi[a], bp.lo[a], bp.hi[a]);
                    let c = |y: f64| (hq.min(hp + y) - lq.max(lp + y)).max(0.0);
                    let (lo, hi) = (n * (lq - hp), n * (hq - lp));
                    let w = 6.0 * var.sqrt();
                    let breaks = [n * (lq - lp), n * (hq - hp), 0.0, -w, w];
                    let v = quad::integrate_with_breaks(
                        |eta| f.heat_convolved_axis(var, eta) * c(eta / n),
                        lo,
                        hi,
                        &breaks,
                        opts,
                    )
                    .value;
                    prod *= v;
                    if prod == 0.0 {
                        break;
                    }
                }
                total += prod;
            }
        }
        f.mass * total
    };
    Ok(quad::integrate(inner, 0.0, t, QuadOptions::with_rel_tol(1e-7)).value)
}

#[derive(Debug, Clone, Serialize)]
pub struct IndependenceEntry {
    pub n: f64,
    pub subset: Vec<String>,
    /// `max_z` ECF gap over `z ∈ {±1, ±2}^m`.
    pub statistic: f64,
    pub null: NullSummary,
    /// Gap at `z = (1, -1, 1, …)`.
    pub alternating_gap: f64,
    /// [`independence_rhs`] for pairs.
    pub rhs: Option<f64>,
    pub below_null: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndependenceReport {
    pub entries: Vec<IndependenceEntry>,
    /// `gap(N_{k+1}) ≤ gap(N_k) + 2√(s_k² + s_{k+1}²)` with `s` the null std.
    pub monotone: bool,
    /// Every subset below its null 99th percentile at the largest `N`.
    pub final_below_null: bool,
    pub passed: bool,
}

fn subsets(m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            out.push(vec![i, j]);
        }
    }
    if m >= 3 {
        out.push((0..m).collect());
    }
    out
}

pub fn independence_report(data: &ExperimentData) -> Result<IndependenceReport> {
    let cfg = &data.config;
    let ind = cfg
        .independence
        .as_ref()
        .ok_or_else(|| config_err("independence", "section missing"))?;
    let funcs: Vec<&TestFunction> = ind
        .psi
        .iter()
        .map(|name| &cfg.psi.iter().find(|p| &p.name == name).expect("validated").function)
        .collect();
    let sets = subsets(ind.psi.len());
    let mut entries = Vec::new();
    for (k, &n) in cfg.n_ladder.iter().enumerate() {
        for (si, set) in sets.iter().enumerate() {
            let cols: Vec<&[f64]> = set
                .iter()
                .map(|&i| data.values(n, &ind.psi[i], ind.g))
                .collect::<Result<_>>()?;
            let null = stats::ecf_permutation_null(
                &cols,
                ind.permutations,
                RngStream::new(cfg.seed, NULL_TAG + k as u64, si as u64, 0),
            );
            let z: Vec<f64> = (0..set.len()).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
            let rhs = if set.len() == 2 {
                Some(independence_rhs(&cfg.covariance, cfg.t, funcs[set[0]], funcs[set[1]], n)?)
            } else {
                None
            };
            entries.push(IndependenceEntry {
                n,
                subset: set.iter().map(|&i| ind.psi[i].clone()).collect(),
                statistic: null.statistic,
                alternating_gap: stats::ecf_gap(&cols, &z),
                below_null: null.statistic < null.p99,
                null,
                rhs,
            });
        }
    }
    let per = sets.len();
    let mut monotone = true;
    for k in 1..cfg.n_ladder.len() {
        for s in 0..per {
            let (a, b) = (&entries[(k - 1) * per + s], &entries[k * per + s]);
            let slack = 2.0 * (a.null.std.powi(2) + b.null.std.powi(2)).sqrt();
            monotone &= b.statistic <= a.statistic + slack;
        }
    }
    let last = cfg.n_ladder.len() - 1;
    let final_below_null = entries[last * per..].iter().all(|e| e.below_null);
    Ok(IndependenceReport {
        entries,
        monotone,
        final_below_null,
        passed: monotone && final_below_null,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FddReport {
    pub n: f64,
    pub r: Vec<f64>,
    pub empirical: Vec<Vec<f64>>,
    /// `B_t · min(r, r′) · Π(y_j - y′_j)`.
    pub predicted: Vec<Vec<f64>>,
    /// Largest entrywise `|emp - pred| / pred` over entries with `pred > 0`.
    pub max_relative_error: f64,
    /// Entries with `pred = 0` that are not exactly zero.
    pub nonzero_at_origin: bool,
    pub increments: Option<NullSummary>,
    pub increments_independent: bool,
}

/// Compares `Cov[X_N(r), X_N(r′)]` with `bt · min(r, r′) · volume` and tests
/// the increments over the last three `r` intervals for independence.
pub fn fdd_brownian_check(
    columns: &[&[f64]],
    r: &[f64],
    volume: f64,
    bt: f64,
    permutations: usize,
    stream: RngStream,
) -> Result<FddReport> {
    if columns.len() != r.len() || columns.is_empty() {
        return Err(config_err("fdd.r", "one column per r"));
    }
    let m = r.len();
    let mut empirical = vec![vec![0.0; m]; m];
    let mut predicted = vec![vec![0.0; m]; m];
    let mut max_rel: f64 = 0.0;
    let mut nonzero = false;
    for i in 0..m {
        for j in 0..m {
            empirical[i][j] = stats::covariance(columns[i], columns[j]);
            predicted[i][j] = bt * r[i].min(r[j]) * volume;
            if predicted[i][j] > 0.0 {
                max_rel = max_rel.max((empirical[i][j] - predicted[i][j]).abs() / predicted[i][j]);
            } else if empirical[i][j] != 0.0 {
                nonzero = true;
            }
        }
    }
    // Increments X(r_k) - X(r_{k-1}) with X(0) = 0.
    let increments: Vec<Vec<f64>> = (0..m)
        .filter(|&k| r[k] > 0.0)
        .map(|k| {
            let prev = if k == 0 || r[k - 1] == 0.0 { None } else { Some(columns[k - 1]) };
            columns[k]
                .iter()
                .enumerate()
                .map(|(i, v)| v - prev.map_or(0.0, |p| p[i]))
                .collect()
        })
        .collect();
    let tail = &increments[increments.len().saturating_sub(3)..];
    let null = (tail.len() >= 2).then(|| {
        let cols: Vec<&[f64]> = tail.iter().map(Vec::as_slice).collect();
        stats::ecf_permutation_null(&cols, permutations, stream)
    });
    Ok(FddReport {
        n: f64::NAN,
        r: r.to_vec(),
        empirical,
        predicted,
        max_relative_error: max_rel,
        nonzero_at_origin: nonzero,
        increments_independent: null.as_ref().is_none_or(|s| s.statistic < s.p99),
        increments: null,
    })
}

/// [`fdd_brownian_check`] at every ladder rung.
pub fn fdd_reports(data: &ExperimentData) -> Result<Vec<FddReport>> {
    let cfg = &data.config;
    let fdd = cfg.fdd.as_ref().ok_or_else(|| config_err("fdd", "section missing"))?;
    let (bt, _) = predicted_bt(data, 0, 0).ok_or_else(|| config_err("stats.bt", "no B_t prediction available"))?;
    let perms = cfg.independence.as_ref().map_or(default_permutations(), |i| i.permutations);
    cfg.n_ladder
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let cols: Vec<&[f64]> = fdd
                .r
                .iter()
                .map(|&r| data.values(n, &FddConfig::label(r), 0))
                .collect::<Result<_>>()?;
            let stream = RngStream::new(cfg.seed, NULL_TAG + 100 + k as u64, 0, 0);
            let mut rep = fdd_brownian_check(&cols, &fdd.r, fdd.volume(), bt, perms, stream)?;
            rep.n = n;
            Ok(rep)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailRow {
    pub ell: f64,
    pub exceed: usize,
    pub empirical: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bound: f64,
    /// CI lower end above the bound while the bound is non-vacuous.
    pub violated: bool,
}

/// Empirical `P(|X| > ℓ)` with a 99% Wilson interval against `tail_bound(ℓ)`.
pub fn tail_check(values: &[f64], ells: &[f64], params: &TailBoundParams, profile: &DalangProfile) -> Result<Vec<TailRow>> {
    ells.iter()
        .map(|&ell| {
            let exceed = values.iter().filter(|v| v.abs() > ell).count();
            let (ci_low, ci_high) = stats::wilson_interval(exceed, values.len(), stats::Z99);
            let bound = tail_bound(ell, params, profile)?;
            Ok(TailRow {
                ell,
                exceed,
                empirical: exceed as f64 / values.len().max(1) as f64,
                ci_low,
                ci_high,
                bound,
                violated: ci_low > bound && bound < 1.0,
            })
        })
        .collect()
}

/// `points` levels: half spread over `[0, 1.5 max|X|]`, half geometric over
/// `(B, 1000 B]` where the bound is informative.
pub fn default_ell_grid(values: &[f64], scale: f64, points: usize) -> Vec<f64> {
    let top = 1.5 * values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let lower = points / 2;
    let upper = points - lower;
    let mut out: Vec<f64> = (0..lower).map(|i| top * i as f64 / lower as f64).collect();
    out.extend((1..=upper).map(|i| scale * 1000f64.powf(i as f64 / upper as f64)));
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub n: f64,
    pub psi: String,
    pub g: String,
    /// `B = A(ε) Lip(g) ‖ψ‖ √T`; the bound is vacuous for `ℓ ≤ B`.
    pub scale: f64,
    pub rows: Vec<TailRow>,
    pub violations: usize,
}

pub fn tail_reports(data: &ExperimentData) -> Result<Vec<TailReport>> {
    let cfg = &data.config;
    let profile = DalangProfile::new(cfg.covariance)?;
    let mut out = Vec::new();
    for e in &data.ensembles {
        let Some(psi) = cfg.psi.iter().find(|p| p.name == e.psi) else {
            continue;
        };
        let g = &cfg.g[e.g];
        let params = TailBoundParams::new(
            cfg.tails.eps,
            cfg.tails.delta,
            cfg.t,
            cfg.sigma.sigma0(),
            cfg.sigma.lip(),
            g.lip(),
            psi.function.l2_norm(),
            &cfg.covariance,
        )?;
        let ells = default_ell_grid(&e.values, params.scale, cfg.tails.points);
        let rows = tail_check(&e.values, &ells, &params, &profile)?;
        out.push(TailReport {
            n: e.n,
            psi: e.psi.clone(),
            g: e.g_label.clone(),
            scale: params.scale,
            violations: rows.iter().filter(|r| r.violated).count(),
            rows,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentRow {
    pub n: f64,
    pub psi: String,
    pub g: String,
    pub k: f64,
    /// `‖N^{d/2} S_{N,t}‖_k` from the sample.
    pub empirical: f64,
    /// `ln ‖S_{N,t}‖_k`.
    pub log_empirical: f64,
    pub log_bound: f64,
    pub violated: bool,
}

/// Empirical `k`-th moments against the moment bound, compared in log space
/// because the bound overflows `f64` for moderate `k`.
pub fn moment_reports(data: &ExperimentData, ks: &[f64]) -> Result<Vec<MomentRow>> {
    let cfg = &data.config;
    let profile = DalangProfile::new(cfg.covariance)?;
    let d = cfg.dimension() as f64;
    let mut out = Vec::new();
    for e in &data.ensembles {
        let Some(psi) = cfg.psi.iter().find(|p| p.name == e.psi) else {
            continue;
        };
        let g = &cfg.g[e.g];
        for &k in ks {
            let params = MomentBoundParams {
                eps: cfg.tails.eps,
                k,
                n: e.n,
                horizon: cfg.t,
                sigma0: cfg.sigma.sigma0(),
                lip_sigma: cfg.sigma.lip(),
                lip_g: g.lip(),
                psi_norm: psi.function.l2_norm(),
            };
            let log_bound = log_moment_bound(&params, &profile)?;
            let empirical = stats::abs_moment_norm(&e.values, k);
            let log_empirical = empirical.ln() - 0.5 * d * e.n.ln();
            out.push(MomentRow {
                n: e.n,
                psi: e.psi.clone(),
                g: e.g_label.clone(),
                k,
                empirical,
                log_empirical,
                log_bound,
                violated: log_empirical > log_bound,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            n_ladder: vec![2.0, 4.0],
            grid: GridConfig {
                dx: 0.25,
                dt: None,
                length: None,
            },
            t: 0.25,
            replicas: 60,
            psi: vec![
                NamedPsi::new("a", TestFunction::interval(0.0, 1.0).unwrap()),
                NamedPsi::new("b", TestFunction::interval(2.0, 3.0).unwrap()),
            ],
            fdd: Some(FddConfig::unit(1, vec![0.0, 0.5, 1.0])),
            ..ExperimentConfig::benchmark()
        }
    }

    #[test]
    fn config_round_trips_through_toml_and_json() {
        let cfg = tiny();
        let toml_text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&toml_text).unwrap(), cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&json).unwrap(), cfg);
    }

    #[test]
    fn config_errors_name_the_key() {
        let mut cfg = tiny();
        cfg.n_ladder = vec![4.0, 2.0];
        let Err(Error::Config { key, .. }) = cfg.validate() else { panic!() };
        assert_eq!(key, "n_ladder");
        let text = toml::to_string(&tiny()).unwrap().replace("replicas = 60", "replicas = \"many\"");
        let Err(Error::Config { key, .. }) = ExperimentConfig::from_toml_str(&text) else { panic!() };
        assert_eq!(key, "replicas");
    }

    #[test]
    fn fixed_length_too_small_overflows_before_running() {
        let mut cfg = tiny();
        cfg.grid.length = Some(8.0);
        cfg.n_ladder = vec![4.0];
        assert!(matches!(run_experiment(&cfg), Err(Error::SupportOverflow { .. })));
    }

    #[test]
    fn ensembles_are_paired_and_deterministic() {
        let cfg = tiny();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment_with_threads(&cfg, 3).unwrap();
        assert_eq!(a.ensembles, b.ensembles);
        // 2 rungs × (2 named + 3 fdd) × 1 g
        assert_eq!(a.ensembles.len(), 10);
        assert!(a.ensembles.iter().all(|e| e.values.len() == 60));
        // Q(0) is the empty box.
        assert!(a.get(2.0, "Q(0)", 0).unwrap().values.iter().all(|v| *v == 0.0));
        // Q(1) is the same box as "a".
        assert_eq!(a.values(4.0, "Q(1)", 0).unwrap(), a.values(4.0, "a", 0).unwrap());
    }

    #[test]
    fn single_replica_is_flagged() {
        let mut cfg = tiny();
        cfg.replicas = 1;
        let data = run_experiment(&cfg).unwrap();
        assert!(data.underpowered);
        assert!(clt_reports(&data).iter().all(|r| r.underpowered && r.ks.is_none()));
    }

    #[test]
    fn tail_rows_at_extremes() {
        let profile = DalangProfile::new(CovarianceMeasure::dirac(1, 1.0).unwrap()).unwrap();
        let f = profile.measure;
        let params = TailBoundParams::new(0.5, 0.5, 1.0, 1.0, 0.0, 1.0, 1.0, &f).unwrap();
        let values: Vec<f64> = (0..200).map(|i| (i as f64 - 100.0) / 50.0).collect();
        let rows = tail_check(&values, &[0.0, 10.0], &params, &profile).unwrap();
        assert!(rows[0].empirical > 0.99 && rows[0].bound == 1.0 && !rows[0].violated);
        assert_eq!(rows[1].exceed, 0);
        assert!(!rows[1].violated);
    }

    #[test]
    fn independence_rhs_vanishes_for_separated_supports() {
        let f = CovarianceMeasure::dirac(1, 1.0).unwrap();
        let a = TestFunction::interval(0.0, 1.0).unwrap();
        let b = TestFunction::interval(2.0, 3.0).unwrap();
        let mut last = f64::INFINITY;
        for n in [1.0, 4.0, 16.0, 64.0] {
            let v = independence_rhs(&f, 1.0, &a, &b, n).unwrap();
            assert!(v <= last && v >= 0.0);
            last = v;
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn fdd_check_on_exact_brownian_columns() {
        // Brownian motion sampled at r = 0, 1/4, 1/2, 1 from independent increments.
        let mut rng = RngStream::new(3, 0, 0, 0).rng();
        use rand::Rng;
        use rand_distr::StandardNormal;
        let r = [0.0f64, 0.25, 0.5, 1.0];
        let reps = 4000;
        let mut cols = vec![vec![0.0; reps]; 4];
        for i in 0..reps {
            let mut x = 0.0;
            for k in 1..4 {
                let z: f64 = rng.sample(StandardNormal);
                x += z * (r[k] - r[k - 1]).sqrt();
                cols[k][i] = x;
            }
        }
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        let rep = fdd_brownian_check(&refs, &r, 1.0, 1.0, 200, RngStream::new(1, 1, 1, 1)).unwrap();
        assert!(rep.max_relative_error < 0.1, "{}", rep.max_relative_error);
        assert!(!rep.nonzero_at_origin);
        assert!(rep.increments_independent);
    }
}
