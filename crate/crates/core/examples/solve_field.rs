//! One explicit Euler solution of the parabolic Anderson model and pooled
//! marginal statistics over a few replicas.

use sheclt::noise::Grid;
use sheclt::occupation::LipFunction;
use sheclt::solver::{marginal_stats, solve, solve_replicas, SigmaFunction};
use sheclt::spectral::CovarianceMeasure;

fn main() -> sheclt::Result<()> {
    let grid = Grid::with_max_dt(1, 16.0, 128)?;
    let f = CovarianceMeasure::dirac(1, 1.0)?;
    let sigma = SigmaFunction::linear(1.0)?;
    let u = solve(&grid, &sigma, &f, 1.0, 3, 0)?;
    let (lo, hi) = u.values.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("u(1, .) ranges over [{lo:.4}, {hi:.4}]");

    let fields = solve_replicas(&grid, &sigma, &f, 1.0, 3, 0, 0..64)?;
    let stats = marginal_stats(&fields, &LipFunction::Identity, 4)?;
    println!("E u = {:.4} +/- {:.4} (exact 1)", stats.mean, stats.mean_se);
    println!("Var u = {:.4}, lag covariances {:?}", stats.variance, stats.lag_covariance);
    Ok(())
}
