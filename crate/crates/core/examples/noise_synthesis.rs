//! Synthesize spatially correlated noise slices and compare their lag
//! covariances with the grid covariance.

use sheclt::noise::{empirical_noise_covariance, sample_noise_slice, spectral_weights, Grid, RngStream};
use sheclt::spectral::CovarianceMeasure;

fn main() -> sheclt::Result<()> {
    let grid = Grid::with_max_dt(1, 16.0, 128)?;
    let f = CovarianceMeasure::gaussian(1, 1.0, 0.5)?;
    let weights = spectral_weights(&grid, &f)?;
    let slices: Vec<_> = (0..500)
        .map(|k| sample_noise_slice(&weights, grid.dt, RngStream::new(42, 0, 0, k)))
        .collect();
    let cov = empirical_noise_covariance(&grid, &slices, 6)?;
    let expected = weights.grid_covariance();
    println!("lag  empirical/dt  expected      next-slice/dt");
    for (k, &lag) in cov.lags.iter().enumerate() {
        println!(
            "{lag:>3}  {:>12.5}  {:>12.5}  {:>12.5}",
            cov.spatial[k] / grid.dt,
            expected[lag],
            cov.cross_time[k] / grid.dt
        );
    }
    Ok(())
}
