//! X_N(r) for growing boxes Q(r) against the Brownian covariance B_t min(r, r').

use sheclt::montecarlo::{fdd_reports, run_experiment, ExperimentConfig, FddConfig};

fn main() -> sheclt::Result<()> {
    let mut cfg = ExperimentConfig::benchmark();
    cfg.psi.clear();
    cfg.fdd = Some(FddConfig::unit(1, vec![0.25, 0.5, 1.0]));
    cfg.stats.fdd = true;
    cfg.stats.tails = false;
    cfg.stats.moments = false;
    cfg.n_ladder = vec![32.0];
    cfg.grid.dx = 0.125;
    cfg.replicas = 800;
    let data = run_experiment(&cfg)?;
    for f in fdd_reports(&data)? {
        for (i, row) in f.empirical.iter().enumerate() {
            let cells: Vec<String> = row.iter().zip(&f.predicted[i]).map(|(e, p)| format!("{e:.3}/{p:.3}")).collect();
            println!("r = {:<5} {}", f.r[i], cells.join("  "));
        }
        println!("max relative error {:.3}, increments independent: {}", f.max_relative_error, f.increments_independent);
    }
    Ok(())
}
