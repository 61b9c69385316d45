//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 on any failure.

use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use sheclt::entropy::*;
use sheclt::montecarlo::*;
use sheclt::noise::{Grid, RngStream};
use sheclt::occupation::LipFunction;
use sheclt::solver::{marginal_stats, solve_replicas, SigmaFunction};
use sheclt::spectral::{CovarianceMeasure, DalangProfile};
use sheclt::{cli, Result};

type Outcome = Result<(bool, String)>;

fn config(name: &str) -> Result<ExperimentConfig> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path)
}

fn dalang_exactness() -> Outcome {
    let profile = DalangProfile::new(CovarianceMeasure::dirac(1, 1.0)?)?;
    let (mut worst_u, mut worst_inv) = (0.0f64, 0.0f64);
    for lambda in [0.1, 0.5, 1.0, 2.0, 10.0] {
        let u = profile.upsilon(lambda)?;
        worst_u = worst_u.max((u - (2.0 * lambda).powf(-0.5)).abs());
        worst_inv = worst_inv.max((profile.lambda_of(u)? - lambda).abs());
    }
    Ok((
        worst_u < 1e-6 && worst_inv < 1e-8,
        format!("max |Υ - (2λ)^-1/2| = {worst_u:.2e}, max |Λ(Υ(λ)) - λ| = {worst_inv:.2e}"),
    ))
}

fn resolvent_identity() -> Outcome {
    let kinds = [
        CovarianceMeasure::dirac(1, 1.0)?,
        CovarianceMeasure::gaussian(1, 1.0, 1.0)?,
        CovarianceMeasure::uniform_box(1, 1.0, 0.5)?,
        CovarianceMeasure::exponential(1, 1.0, 1.0)?,
    ];
    let mut worst = 0.0f64;
    for f in kinds {
        let profile = DalangProfile::new(f)?;
        for lambda in [0.1, 1.0, 10.0] {
            let (lhs, rhs) = profile.resolvent_identity_check(lambda)?;
            worst = worst.max((lhs - rhs).abs() / rhs);
        }
    }
    Ok((worst < 1e-6, format!("max relative gap {worst:.2e}")))
}

fn pooled_variance(dx: f64) -> Result<f64> {
    let n = (16.0 / dx).round() as usize;
    let grid = Grid::with_max_dt(1, 16.0, n)?;
    let f = CovarianceMeasure::dirac(1, 1.0)?;
    let fields = solve_replicas(&grid, &SigmaFunction::constant(1.0)?, &f, 1.0, 31, 1, 0..5000)?;
    Ok(marginal_stats(&fields, &LipFunction::Identity, 0)?.variance)
}

fn marginal_variance() -> Outcome {
    let exact = 1.0 / std::f64::consts::PI.sqrt();
    let coarse = (pooled_variance(0.125)? - exact).abs() / exact;
    let fine = (pooled_variance(0.0625)? - exact).abs() / exact;
    Ok((
        fine <= 0.10 && fine < coarse,
        format!("relative error {coarse:.4} at dx=1/8, {fine:.4} at dx=1/16"),
    ))
}

fn clt_benchmark(data: &ExperimentData) -> Outcome {
    let r = &clt_reports(data)[0];
    let rel = r.relative_error.unwrap_or(f64::INFINITY);
    let ks = r.ks.unwrap_or(f64::INFINITY);
    Ok((
        rel.abs() <= 0.10 && ks < 0.026,
        format!("Var = {:.4} (|rel err| {rel:.4}), KS = {ks:.4} vs 0.026", r.variance),
    ))
}

fn covariance_convergence() -> Outcome {
    let data = run_experiment(&config("covariance.toml")?)?;
    let bt = data.bt[0].map(|b| b.value).unwrap_or(f64::NAN);
    let ratios: Vec<f64> = covariance_report(&data).iter().filter_map(|c| c.ratio).collect();
    let ok = ratios.len() == 3 && ratios.iter().all(|r| (r / bt - 1.0).abs() <= 0.15);
    Ok((ok, format!("Cov/<ψ,Ψ> ratios {ratios:.3?} vs B̂ = {bt:.4}")))
}

fn asymptotic_independence() -> Outcome {
    let data = run_experiment(&config("independence.toml")?)?;
    let rep = independence_report(&data)?;
    Ok((
        rep.passed,
        format!("monotone = {}, below null at N=128 = {}", rep.monotone, rep.final_below_null),
    ))
}

fn brownian_fdd() -> Outcome {
    let data = run_experiment(&config("fdd.toml")?)?;
    let reps = fdd_reports(&data)?;
    let ok = !reps.is_empty()
        && reps
            .iter()
            .all(|r| r.max_relative_error <= 0.15 && !r.nonzero_at_origin && r.increments_independent);
    let worst = reps.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    Ok((ok, format!("max entrywise relative error {worst:.4}, increments independent")))
}

fn tail_bounds(data: &ExperimentData) -> Outcome {
    let reps = tail_reports(data)?;
    let rows: usize = reps.iter().map(|r| r.rows.len()).sum();
    let violations: usize = reps.iter().map(|r| r.violations).sum();
    Ok((rows >= 20 && violations == 0, format!("{violations} violations over {rows} ℓ values")))
}

fn moment_bounds(data: &ExperimentData) -> Outcome {
    let rows = moment_reports(data, &[2.0, 4.0])?;
    let bad = rows.iter().filter(|r| r.violated).count();
    let detail: Vec<String> = rows
        .iter()
        .map(|r| format!("k={}: ln emp {:.3} <= ln bound {:.1}", r.k, r.log_empirical, r.log_bound))
        .collect();
    Ok((rows.len() == 2 && bad == 0, detail.join(", ")))
}

fn random_space(rng: &mut impl Rng, n: usize) -> Result<FiniteMetricSpace> {
    let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
    FiniteMetricSpace::from_points(&pts)
}

fn entropy_suite() -> Outcome {
    let mut rng = RngStream::new(10, 0, 0, 0).rng();
    let mut notes = Vec::new();

    let mut sandwich_ok = true;
    for k in 0..200 {
        let space = random_space(&mut rng, 1 + k % 10)?;
        for frac in [0.05, 0.15, 0.3, 0.6] {
            let s = sandwich_check(&space, frac * space.diameter().max(1e-3))?;
            sandwich_ok &= s.exact && s.holds;
        }
    }
    notes.push(format!("sandwich {}", if sandwich_ok { "ok" } else { "broken" }));

    let mut telescope_ok = true;
    for k in 0..100 {
        let space = random_space(&mut rng, 2 + k % 19)?;
        let chain = chain_construct(&space)?;
        let x: Vec<i64> = (0..space.len()).map(|_| rng.random_range(-1000..1000)).collect();
        for t in 0..space.len() {
            let sum: i64 = chain.increments(t).iter().map(|&(a, b)| x[b] - x[a]).sum();
            telescope_ok &= sum == x[t] - x[chain.root()];
        }
    }
    notes.push(format!("telescoping {}", if telescope_ok { "ok" } else { "broken" }));

    let spaces = [
        FiniteMetricSpace::line(2, 1.0)?,
        FiniteMetricSpace::brownian_grid(16)?,
        random_space(&mut rng, 12)?,
    ];
    let mut chaining_ok = true;
    for (i, space) in spaces.iter().enumerate() {
        let check = chaining_empirical_check(space, space.diameter(), 1000, RngStream::new(10, 1, i as u64, 0))?;
        chaining_ok &= !check.violated;
    }
    notes.push(format!("chaining {}", if chaining_ok { "ok" } else { "violated" }));

    let boxes = FunctionClass::Box { m: 1.0, dimension: 1 }.sample(20_001)?;
    let box_slope = covering_exponent(&boxes, &[0.03, 0.05, 0.1, 0.2])?.slope;
    let shift = FunctionClass::Shift { g: Profile::Ramp, n: 1.0 }.sample(2001)?;
    let shift_grid: Vec<f64> = (0..6).map(|i| 0.01 * 10f64.powf(i as f64 / 5.0)).collect();
    let shift_slope = covering_exponent(&shift, &shift_grid)?.slope;
    let scale = FunctionClass::Scale { g: Profile::Ramp, m: 2.0, n: 1.0 }.sample(601)?;
    let r0 = 4.0001 * scale.spacing;
    let scale_grid: Vec<f64> = (0..6).map(|i| r0 * 4f64.powf(i as f64 / 5.0)).collect();
    let scale_slope = covering_exponent(&scale, &scale_grid)?.slope;
    let slopes_ok =
        (box_slope + 2.0).abs() <= 0.3 && (shift_slope + 1.0).abs() <= 0.3 && (scale_slope + 2.0).abs() <= 0.3;
    notes.push(format!("slopes box {box_slope:.3}, shift {shift_slope:.3}, scale {scale_slope:.3}"));

    Ok((sandwich_ok && telescope_ok && chaining_ok && slopes_ok, notes.join("; ")))
}

fn necessity_shadow() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for c0 in [1.0, 2.0] {
        for mass in [1.0, 2.0] {
            let mut cfg = config("benchmark.toml")?;
            cfg.covariance = CovarianceMeasure::dirac(1, mass)?;
            cfg.sigma = SigmaFunction::constant(c0)?;
            cfg.grid.dx = 0.25;
            cfg.replicas = 3000;
            cfg.stats = Toggles {
                covariance: false,
                independence: false,
                fdd: false,
                tails: false,
                moments: false,
                ..Toggles::default()
            };
            let data = run_experiment(&cfg)?;
            let r = &clt_reports(&data)[0];
            let rel = r.relative_error.unwrap_or(f64::INFINITY);
            ok &= rel.abs() <= 0.10;
            detail.push(format!("c0={c0} f={mass}: {:.3}/{}", r.variance, c0 * c0 * mass));
        }
    }
    Ok((ok, detail.join(", ")))
}

fn determinism(first: &ExperimentData) -> Outcome {
    let second = run_experiment_with_threads(&first.config, 3)?;
    let (a, _) = cli::clt_outputs(first)?;
    let (b, _) = cli::clt_outputs(&second)?;
    let same = a == b;
    Ok((same, format!("{} CSV files, byte-identical across 1 and 3 threads = {same}", a.len())))
}

fn report(id: usize, name: &str, start: Instant, outcome: Outcome) -> bool {
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    println!("{} {id:>2} {name}: {detail} [{secs:.1}s]", if pass { "PASS" } else { "FAIL" });
    pass
}

type Bench = std::result::Result<ExperimentData, String>;

fn on_bench(bench: &Bench, check: fn(&ExperimentData) -> Outcome) -> Outcome {
    match bench {
        Ok(data) => check(data),
        Err(e) => Err(sheclt::Error::InvalidParameter {
            name: "benchmark".into(),
            reason: e.clone(),
        }),
    }
}

fn main() {
    let mut all = true;
    let t = Instant::now();
    all &= report(1, "dalang exactness", t, dalang_exactness());
    let t = Instant::now();
    all &= report(2, "resolvent identity", t, resolvent_identity());
    let t = Instant::now();
    all &= report(3, "marginal variance", t, marginal_variance());
    let t = Instant::now();
    let bench: Bench = config("benchmark.toml")
        .and_then(|c| run_experiment_with_threads(&c, 1))
        .map_err(|e| e.to_string());
    all &= report(4, "clt benchmark", t, on_bench(&bench, clt_benchmark));
    let t = Instant::now();
    all &= report(5, "covariance convergence", t, covariance_convergence());
    let t = Instant::now();
    all &= report(6, "asymptotic independence", t, asymptotic_independence());
    let t = Instant::now();
    all &= report(7, "brownian fdd", t, brownian_fdd());
    let t = Instant::now();
    all &= report(8, "tail bound", t, on_bench(&bench, tail_bounds));
    let t = Instant::now();
    all &= report(9, "moment bound", t, on_bench(&bench, moment_bounds));
    let t = Instant::now();
    all &= report(10, "entropy suite", t, entropy_suite());
    let t = Instant::now();
    all &= report(11, "necessity shadow", t, necessity_shadow());
    let t = Instant::now();
    all &= report(12, "determinism", t, on_bench(&bench, determinism));

    if !all {
        std::process::exit(1);
    }
}
